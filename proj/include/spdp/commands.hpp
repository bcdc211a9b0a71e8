#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "spdp/config.hpp"
#include "spdp/gradcheck.hpp"
#include "spdp/model.hpp"

namespace spdp {

// File names shared by the commands.
namespace files {
inline constexpr const char* kVocab = "vocab.txt";
inline constexpr const char* kRunConfig = "run.cfg";
inline constexpr const char* kTrainLog = "train_log.jsonl";
inline constexpr const char* kModel = "model.spdp";
inline constexpr const char* kConfusion = "confusion.csv";
inline constexpr const char* kReport = "report.json";
inline constexpr const char* kPredictions = "predictions.jsonl";
inline constexpr const char* kFixtureLabels = "labels.jsonl";
}  // namespace files

struct GenDataResult {
    std::size_t n_train = 0, n_test = 0, n_fixtures = 0;
};

// Corpus (+ vocab) into `out`; with `fixtures`, WAV voices and labels into out/wav.
GenDataResult cmd_gen_data(RunConfig config, const std::filesystem::path& out, bool fixtures);

struct TrainResult {
    TrainerState state;
    bool resumed = false;
};

// Trains on config.data_dir, writing run.cfg, vocab, log and per-epoch checkpoints to config.out_dir.
TrainResult cmd_train(RunConfig config, bool resume, std::ostream& progress);

// Loads run.cfg and vocab from a training output directory.
RunConfig load_run_dir_config(const std::filesystem::path& run_dir);
Lexicon load_lexicon(const std::filesystem::path& run_dir);

// Read-only on `checkpoint`; writes confusion.csv, report.json, predictions.jsonl to `out`.
EvalReport cmd_eval(const RunConfig& config, const std::filesystem::path& checkpoint, Split split,
                    const std::filesystem::path& out);

std::vector<PredictionRecord> cmd_predict(const RunConfig& config, const std::filesystem::path& checkpoint, Split split,
                                          const std::vector<std::string>& ids, std::ostream& out);

struct FilterReport {
    std::size_t files = 0, unreadable = 0, extracted = 0, high = 0, agreed = 0;
    std::size_t planted = 0, planted_recalled = 0;  // from labels.jsonl when present
    double recall() const { return planted ? static_cast<double>(planted_recalled) / static_cast<double>(planted) : 0.0; }
    std::string to_json() const;
};

// WAV dir -> features -> bins -> all-high filter -> two simulated annotators -> intersection.
// Writes curated.jsonl and filter_report.json to `out`.
FilterReport cmd_filter(const RunConfig& config, const std::filesystem::path& wav_dir, const std::filesystem::path& out,
                        std::ostream& warnings);

struct GradCheckRun {
    std::string name;
    GradCheckReport report;
};

// Small fixed dims, independent of the profile.
RunConfig gradcheck_config(std::uint64_t seed);
inline constexpr std::size_t kDeskSamplesPerTensor = 4;
// ALSM alone on random inputs, the serial loss, and the joint loss through emb_a/emb_t,
// all exhaustively at small dims; then the joint loss at desk dims on a per-tensor sample.
std::vector<GradCheckRun> cmd_gradcheck(std::uint64_t seed, const GradCheckOptions& options = {});
std::string gradcheck_table(const std::vector<GradCheckRun>& runs);

}  // namespace spdp
