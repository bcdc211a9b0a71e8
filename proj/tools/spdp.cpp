// spdp: command-line front end (gen-data, train, eval, predict, filter, gradcheck).

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "spdp/commands.hpp"

namespace fs = std::filesystem;
using namespace spdp;

namespace {

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string profile;
    std::vector<double> weights;
    std::vector<double> loss_weights;
    std::string out;
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("--config", c.config, "flat key = value config file")->check(CLI::ExistingFile);
    app->add_option("--seed", c.seed, "run seed");
    app->add_option("--profile", c.profile, "dimension profile")->check(CLI::IsMember({"desk-dims", "paper-dims"}));
    app->add_option("--weights", c.weights, "inference fusion weights a,b")->delimiter(',')->expected(2);
    app->add_option("--loss-weights", c.loss_weights, "training loss weights alpha,beta")->delimiter(',')->expected(2);
    app->add_option("--out", c.out, "output directory");
}

// Base config: `fallback_file` (e.g. a run directory's run.cfg) unless --config is given.
RunConfig build_config(const Common& c, const fs::path* fallback_file = nullptr) {
    const fs::path file = c.config.empty() ? (fallback_file ? *fallback_file : fs::path()) : fs::path(c.config);
    RunConfig cfg = load_run_config(file.empty() ? nullptr : &file, c.profile);
    if (c.seed) cfg.seed = *c.seed;
    if (!c.weights.empty()) {
        cfg.fusion.a = c.weights[0];
        cfg.fusion.b = c.weights[1];
    }
    if (!c.loss_weights.empty()) {
        cfg.fusion.alpha = c.loss_weights[0];
        cfg.fusion.beta = c.loss_weights[1];
    }
    cfg.fusion.validate();
    return cfg;
}

Split parse_split(const std::string& s) { return s == "train" ? Split::Train : Split::Test; }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Serial-parallel dual-path speaking-style recognition"};
    app.require_subcommand(1);
    Common common;

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic corpus (and optional WAV fixtures)");
    add_common(gen, common);
    bool fixtures = false;
    gen->add_flag("--fixtures", fixtures, "also write WAV voices with planted high-expressivity samples");

    auto* train = app.add_subcommand("train", "train both paths under the weighted loss");
    add_common(train, common);
    std::string data_dir;
    bool resume = false;
    train->add_option("--data", data_dir, "corpus directory (overrides data_dir)");
    train->add_flag("--resume", resume, "continue from the checkpoint in --out");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a split");
    add_common(eval, common);
    std::string checkpoint, split = "test";
    eval->add_option("--checkpoint", checkpoint, "training output directory")->required();
    eval->add_option("--data", data_dir, "corpus directory (overrides data_dir)");
    eval->add_option("--split", split, "train or test")->check(CLI::IsMember({"train", "test"}));

    auto* predict = app.add_subcommand("predict", "print one prediction record per utterance");
    add_common(predict, common);
    std::vector<std::string> ids;
    predict->add_option("--checkpoint", checkpoint, "training output directory")->required();
    predict->add_option("--data", data_dir, "corpus directory (overrides data_dir)");
    predict->add_option("--split", split, "train or test")->check(CLI::IsMember({"train", "test"}));
    predict->add_option("--id", ids, "utterance ids (default: whole split)");

    auto* filter = app.add_subcommand("filter", "curate WAV files: features, bins, all-high filter, annotator intersection");
    add_common(filter, common);
    std::string wav_dir;
    filter->add_option("--wav-dir", wav_dir, "directory of 16-bit mono WAV files")->required();

    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every parameter gradient");
    add_common(gradcheck, common);
    bool corrupt = false;
    gradcheck->add_flag("--corrupt-backward", corrupt)->group("");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*gen) {
            RunConfig cfg = build_config(common);
            const fs::path out = common.out.empty() ? cfg.data_dir : fs::path(common.out);
            const GenDataResult r = cmd_gen_data(cfg, out, fixtures);
            std::printf("wrote %zu train / %zu test utterances to %s", r.n_train, r.n_test, out.string().c_str());
            if (fixtures) std::printf(", %zu WAV fixtures to %s", r.n_fixtures, (out / "wav").string().c_str());
            std::printf("\n");
        } else if (*train) {
            RunConfig cfg = build_config(common);
            if (!data_dir.empty()) cfg.data_dir = data_dir;
            if (!common.out.empty()) cfg.out_dir = common.out;
            const TrainResult r = cmd_train(cfg, resume, std::cout);
            std::printf("trained %zu epochs, %llu steps; checkpoint in %s\n", r.state.epochs_done,
                        static_cast<unsigned long long>(r.state.step), cfg.out_dir.string().c_str());
        } else if (*eval || *predict) {
            const fs::path run_cfg = fs::path(checkpoint) / files::kRunConfig;
            require(fs::is_directory(checkpoint), "checkpoint directory not found: " + checkpoint);
            require(!common.config.empty() || fs::exists(run_cfg), "no " + std::string(files::kRunConfig) + " in " + checkpoint);
            RunConfig cfg = build_config(common, &run_cfg);
            if (!data_dir.empty()) cfg.data_dir = data_dir;
            if (*eval) {
                const fs::path out = common.out.empty() ? fs::path(checkpoint) / ("eval_" + split) : fs::path(common.out);
                const EvalReport r = cmd_eval(cfg, checkpoint, parse_split(split), out);
                std::printf("%zu items  fused %.4f  serial-only %.4f  parallel-only %.4f  decoded-label %.4f\n", r.total,
                            r.accuracy(), r.rate(r.serial_correct), r.rate(r.parallel_correct), r.rate(r.decoded_correct));
                std::printf("serial contract %.4f  NoTermination %zu  ZeroMass %zu  NoLinguisticEvidence %zu\n",
                            r.rate(r.serial_contract), r.no_termination, r.zero_mass_fallback, r.no_linguistic_evidence);
                std::printf("metrics in %s\n", out.string().c_str());
            } else {
                cmd_predict(cfg, checkpoint, parse_split(split), ids, std::cout);
            }
        } else if (*filter) {
            RunConfig cfg = build_config(common);
            const fs::path out = common.out.empty() ? cfg.out_dir : fs::path(common.out);
            const FilterReport r = cmd_filter(cfg, wav_dir, out, std::cerr);
            std::printf("files %zu -> extracted %zu -> high %zu -> agreed %zu  (unreadable %zu)\n", r.files, r.extracted, r.high,
                        r.agreed, r.unreadable);
            if (r.planted) std::printf("planted recall %.4f (%zu/%zu)\n", r.recall(), r.planted_recalled, r.planted);
        } else if (*gradcheck) {
            const RunConfig cfg = build_config(common);
            debug::set_corrupt_gelu_backward(corrupt);
            const auto runs = cmd_gradcheck(cfg.seed);
            const std::string table = gradcheck_table(runs);
            std::fputs(table.c_str(), stdout);
            if (!common.out.empty()) {
                fs::create_directories(common.out);
                std::ofstream(fs::path(common.out) / "gradcheck.txt") << table;
            }
            for (const auto& r : runs)
                if (!r.report.passed) return static_cast<int>(ErrorKind::Numeric);
        }
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return static_cast<int>(e.kind());
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return static_cast<int>(ErrorKind::Data);
    }
    return 0;
}
