#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "spdp/alsm.hpp"
#include "spdp/config.hpp"
#include "spdp/corpus.hpp"
#include "spdp/fusion.hpp"
#include "spdp/optim.hpp"
#include "spdp/params.hpp"
#include "spdp/serial_path.hpp"

namespace spdp {

// Padded mini-batch in model-input form.
struct Batch {
    std::vector<std::string> ids;
    Tensor frames;                           // [B, T0max, feat_dim]
    std::vector<unsigned char> frame_mask;   // [B, T0max]
    std::vector<std::vector<long>> prompts;
    std::vector<std::vector<long>> targets;
    std::vector<long> labels;

    static Batch build(std::span<const Utterance* const> items, const Lexicon& lexicon,
                       const std::vector<std::size_t>& prompt_choice);
};

struct PathLosses {
    Tensor serial;
    Tensor parallel;
};

enum PredictionFlag : unsigned {
    kNoTermination = 1u << 0,
    kParallelOnlyFallback = 1u << 1,
    kZeroMassFallback = 1u << 2,
    kNoLinguisticEvidence = 1u << 3,
};

std::vector<std::string> flag_names(unsigned flags);

struct PredictionRecord {
    std::string id;
    std::vector<long> tokens;      // full greedy output
    std::vector<long> transcript;  // tokens before "<"
    StyleDistribution p, q, final;
    std::size_t cls = 0;
    int decoded_style = -1;        // style whose full label sits between "<" and ">", or -1
    bool serial_contract = false;  // exactly one "<", followed by a style first token
    unsigned flags = 0;

    std::string to_json(const Vocab& vocab) const;
};

// Serial path and ALSM sharing one parameter store.
class DualPathModel {
 public:
    DualPathModel(const RunConfig& config, Lexicon lexicon);

    const Lexicon& lexicon() const { return lexicon_; }
    ParamStore& store() { return store_; }
    const ParamStore& store() const { return store_; }
    const SerialPath& serial() const { return serial_; }
    const Alsm& alsm() const { return alsm_; }

    PathLosses losses(const Batch& batch, bool detach_alsm_inputs) const;

    // Greedy decode, first-token extraction, ALSM on the generated transcript, fusion.
    // An empty generated transcript throws "no linguistic evidence", unless
    // tolerate_empty: then q is uniform, final = p, flagged NoLinguisticEvidence.
    PredictionRecord predict(const Utterance& u, const FusionConfig& fusion, bool tolerate_empty = false) const;

    // Prompt used at inference.
    const std::vector<long>& inference_prompt() const { return lexicon_.prompts.front(); }

 private:
    Lexicon lexicon_;
    ParamStore store_;
    SerialPath serial_;
    Alsm alsm_;
};

struct StepLog {
    std::uint64_t step = 0;
    double serial = 0.0;
    double parallel = 0.0;
    double total = 0.0;
    std::string to_json() const;
};

struct TrainerState {
    std::size_t epochs_done = 0;
    std::uint64_t step = 0;
};

class Trainer {
 public:
    Trainer(DualPathModel& model, const RunConfig& config);

    // One optimizer update on `batch`. Throws a numeric error on a non-finite loss.
    StepLog step(const Batch& batch, const std::string& batch_tag);

    // Shuffle and prompt draws are a function of (seed, epoch), so a resumed run
    // replays the same batches.
    void run_epoch(std::span<const Utterance* const> train, const std::function<void(const StepLog&)>& on_step);

    const TrainerState& state() const { return state_; }
    AdamW& optimizer() { return optimizer_; }

    // model.spdp, optim.spdp, state.json in `dir`.
    void save(const std::filesystem::path& dir) const;
    void load(const std::filesystem::path& dir);

 private:
    DualPathModel& model_;
    RunConfig config_;
    AdamW optimizer_;
    TrainerState state_;
};

struct EvalReport {
    std::size_t total = 0;
    std::array<std::array<std::size_t, kNumStyles>, kNumStyles> confusion{};  // fused; rows gold, cols predicted
    std::size_t fused_correct = 0, serial_correct = 0, parallel_correct = 0, decoded_correct = 0;
    std::size_t no_termination = 0, parallel_only_fallback = 0, zero_mass_fallback = 0, no_linguistic_evidence = 0;
    std::size_t serial_contract = 0;

    double accuracy() const { return total ? static_cast<double>(fused_correct) / static_cast<double>(total) : 0.0; }
    double rate(std::size_t n) const { return total ? static_cast<double>(n) / static_cast<double>(total) : 0.0; }
    std::string confusion_csv() const;
    std::string to_json() const;
};

// Predicts every item (in parallel over items, frozen parameters) and tallies metrics.
// Records come back in input order.
EvalReport evaluate(const DualPathModel& model, std::span<const Utterance* const> items, const FusionConfig& fusion,
                    std::vector<PredictionRecord>* records = nullptr);

}  // namespace spdp
