#include "spdp/commands.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <random>
#include <sstream>

#include "json.hpp"

namespace spdp {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << text;
    require(static_cast<bool>(out), "cannot write " + path.string());
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), "cannot read " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void require_dir(const fs::path& dir, const std::string& what) {
    require(fs::is_directory(dir), what + " directory not found: " + dir.string());
}

std::size_t longest_transcript(const Corpus& corpus) {
    std::size_t n = 0;
    for (const auto& u : corpus.utterances) n = std::max(n, u.transcript.size());
    return n;
}

void check_decode_budget(const SerialConfig& serial, const Lexicon& lexicon, std::size_t transcript_len) {
    std::size_t label = 0;
    for (const auto& e : lexicon.styles.entries()) label = std::max(label, e.tokens.size());
    const std::size_t need = transcript_len + label + 3 + 4;
    require(serial.max_decode_len >= need,
            "serial.max_decode_len must be >= longest training target + 4 = " + std::to_string(need), ErrorKind::Usage);
}

// Keeps the first `steps` log lines so a resumed run appends where the checkpoint left off.
void truncate_log(const fs::path& path, std::uint64_t steps) {
    std::string kept;
    if (fs::exists(path)) {
        std::ifstream in(path);
        std::string line;
        for (std::uint64_t i = 0; i < steps && std::getline(in, line); ++i) kept += line + "\n";
    }
    write_text(path, kept);
}

std::vector<const Utterance*> split_items(const Corpus& corpus, Split split) {
    auto items = corpus.split(split);
    require(!items.empty(), std::string("split '") + split_name(split) + "' is empty");
    return items;
}

json features_json(const FeatureVector5& f) {
    json j;
    const auto v = f.values();
    for (std::size_t i = 0; i < FeatureVector5::kCount; ++i) j[feature_names()[i]] = v[i];
    return j;
}

}  // namespace

GenDataResult cmd_gen_data(RunConfig config, const fs::path& out, bool fixtures) {
    Lexicon lexicon = Lexicon::build(config.corpus);
    config.resolve(lexicon.vocab.size());
    const Corpus corpus = generate_corpus(config.corpus, lexicon);
    fs::create_directories(out);
    save_corpus(out, corpus);
    lexicon.vocab.save(out / files::kVocab);
    write_text(out / "corpus.cfg", config.to_text());

    GenDataResult r;
    r.n_train = corpus.split(Split::Train).size();
    r.n_test = corpus.split(Split::Test).size();
    if (fixtures) {
        const fs::path wav_dir = out / "wav";
        fs::create_directories(wav_dir);
        std::string labels;
        for (const Fixture& fx : make_fixtures(config.filter.fixtures)) {
            write_wav(wav_dir / (fx.name + ".wav"), synthesize_voice(fx.params, config.filter.fixtures.seconds));
            labels += json{{"name", fx.name}, {"style", fx.style}, {"planted", fx.planted}}.dump() + "\n";
            ++r.n_fixtures;
        }
        write_text(wav_dir / files::kFixtureLabels, labels);
    }
    return r;
}

RunConfig load_run_dir_config(const fs::path& run_dir) {
    require_dir(run_dir, "checkpoint");
    const fs::path cfg = run_dir / files::kRunConfig;
    require(fs::exists(cfg), "no " + std::string(files::kRunConfig) + " in " + run_dir.string());
    return load_run_config(&cfg, "");
}

Lexicon load_lexicon(const fs::path& dir) { return Lexicon::from_vocab(Vocab::load(dir / files::kVocab)); }

TrainResult cmd_train(RunConfig config, bool resume, std::ostream& progress) {
    require_dir(config.data_dir, "data");
    const Corpus corpus = load_corpus(config.data_dir);
    Lexicon lexicon = load_lexicon(config.data_dir);
    config.corpus.feat_dim = corpus.feat_dim;
    config.resolve(lexicon.vocab.size());
    check_decode_budget(config.serial, lexicon, longest_transcript(corpus));
    const auto train = split_items(corpus, Split::Train);

    DualPathModel model(config, lexicon);
    Trainer trainer(model, config);
    const fs::path out = config.out_dir;
    fs::create_directories(out);
    const fs::path log_path = out / files::kTrainLog;

    TrainResult result;
    if (resume && fs::exists(out / "state.json")) {
        require(read_text(out / files::kRunConfig) == config.to_text(), "config differs from the run being resumed in " + out.string(),
                ErrorKind::Usage);
        trainer.load(out);
        truncate_log(log_path, trainer.state().step);
        result.resumed = true;
        progress << "resumed at epoch " << trainer.state().epochs_done << ", step " << trainer.state().step << "\n";
    } else {
        write_text(out / files::kRunConfig, config.to_text());
        lexicon.vocab.save(out / files::kVocab);
        write_text(log_path, "");
    }

    std::ofstream log(log_path, std::ios::app);
    while (trainer.state().epochs_done < config.train.epochs) {
        double sum = 0.0;
        std::size_t n = 0;
        try {
            trainer.run_epoch(train, [&](const StepLog& s) {
                log << s.to_json() << '\n';
                sum += s.total;
                ++n;
            });
        } catch (const Error& e) {
            log.flush();
            if (e.kind() == ErrorKind::Numeric) write_text(out / "nonfinite_batch.json", json{{"error", e.what()}}.dump(2) + "\n");
            throw;
        }
        log.flush();
        trainer.save(out);
        progress << "epoch " << trainer.state().epochs_done << "/" << config.train.epochs << "  step " << trainer.state().step
                 << "  mean L_total " << sum / static_cast<double>(std::max<std::size_t>(n, 1)) << "\n";
    }
    require(static_cast<bool>(log), "cannot write " + log_path.string());
    result.state = trainer.state();
    return result;
}

namespace {

struct LoadedModel {
    Corpus corpus;
    std::unique_ptr<DualPathModel> model;
};

LoadedModel load_model(RunConfig config, const fs::path& checkpoint) {
    require_dir(config.data_dir, "data");
    require_dir(checkpoint, "checkpoint");
    LoadedModel lm;
    lm.corpus = load_corpus(config.data_dir);
    Lexicon lexicon = load_lexicon(checkpoint);
    config.corpus.feat_dim = lm.corpus.feat_dim;
    config.resolve(lexicon.vocab.size());
    lm.model = std::make_unique<DualPathModel>(config, std::move(lexicon));
    checkpoint::load(checkpoint / files::kModel, lm.model->store());
    return lm;
}

}  // namespace

EvalReport cmd_eval(const RunConfig& config, const fs::path& checkpoint, Split split, const fs::path& out) {
    const LoadedModel lm = load_model(config, checkpoint);
    const auto items = split_items(lm.corpus, split);
    std::vector<PredictionRecord> records;
    const EvalReport report = evaluate(*lm.model, items, config.fusion, &records);
    fs::create_directories(out);
    write_text(out / files::kConfusion, report.confusion_csv());
    write_text(out / files::kReport, report.to_json() + "\n");
    std::string lines;
    for (const auto& r : records) lines += r.to_json(lm.model->lexicon().vocab) + "\n";
    write_text(out / files::kPredictions, lines);
    return report;
}

std::vector<PredictionRecord> cmd_predict(const RunConfig& config, const fs::path& checkpoint, Split split,
                                          const std::vector<std::string>& ids, std::ostream& out) {
    const LoadedModel lm = load_model(config, checkpoint);
    std::vector<const Utterance*> items;
    if (ids.empty()) {
        items = split_items(lm.corpus, split);
    } else {
        for (const auto& id : ids) {
            const auto it = std::find_if(lm.corpus.utterances.begin(), lm.corpus.utterances.end(), [&](const Utterance& u) { return u.id == id; });
            require(it != lm.corpus.utterances.end(), "unknown utterance id " + id);
            items.push_back(&*it);
        }
    }
    std::vector<PredictionRecord> records;
    for (const auto* u : items) {
        records.push_back(lm.model->predict(*u, config.fusion));
        out << records.back().to_json(lm.model->lexicon().vocab) << '\n';
    }
    return records;
}

std::string FilterReport::to_json() const {
    json j;
    j["stages"] = {{"files", files}, {"extracted", extracted}, {"high_expressivity", high}, {"annotator_agreed", agreed}};
    j["unreadable"] = unreadable;
    if (planted) j["planted"] = {{"count", planted}, {"recalled", planted_recalled}, {"recall", recall()}};
    return j.dump(2);
}

FilterReport cmd_filter(const RunConfig& config, const fs::path& wav_dir, const fs::path& out, std::ostream& warnings) {
    require_dir(wav_dir, "WAV");
    std::vector<fs::path> wavs;
    for (const auto& entry : fs::directory_iterator(wav_dir))
        if (entry.is_regular_file() && entry.path().extension() == ".wav") wavs.push_back(entry.path());
    require(!wavs.empty(), "no .wav files in " + wav_dir.string());
    std::sort(wavs.begin(), wavs.end());

    struct Label { int style = 0; bool planted = false; };
    std::map<std::string, Label> labels;
    if (fs::exists(wav_dir / files::kFixtureLabels)) {
        std::ifstream in(wav_dir / files::kFixtureLabels);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            try {
                const json j = json::parse(line);
                labels[j.at("name").get<std::string>()] = {j.at("style").get<int>(), j.value("planted", false)};
            } catch (const json::exception& e) {
                fail(ErrorKind::Data, std::string("bad labels line: ") + e.what());
            }
        }
    }

    FilterReport report;
    report.files = wavs.size();
    std::vector<CurationInput> inputs;
    std::vector<bool> planted;
    std::vector<bool> unvoiced;
    for (const auto& path : wavs) {
        const std::string name = path.stem().string();
        try {
            const Waveform w = read_wav(path);
            const FeatureResult f = extract_features5(w.samples, w.sample_rate);
            const auto it = labels.find(name);
            const Label label = it != labels.end() ? it->second : Label{};
            require(label.style >= 0 && label.style < static_cast<int>(kNumStyles), "style out of range for " + name);
            inputs.push_back({name, f.features, label.style});
            planted.push_back(label.planted);
            unvoiced.push_back(f.unvoiced);
        } catch (const Error& e) {
            warnings << "warning: skipping " << path.string() << ": " << e.what() << "\n";
            ++report.unreadable;
        }
    }
    report.extracted = inputs.size();
    require(inputs.size() >= 2, "fewer than two readable WAV files in " + wav_dir.string());

    const CurationResult cur = run_curation(inputs, symmetric_confusion(config.filter.annotator_a_accuracy),
                                            symmetric_confusion(config.filter.annotator_b_accuracy), config.seed);
    report.high = cur.n_high;
    report.agreed = cur.n_agreed;
    for (std::size_t i = 0; i < inputs.size(); ++i) report.planted += planted[i];
    for (std::size_t i : cur.high_indices) report.planted_recalled += planted[i];

    fs::create_directories(out);
    std::string lines;
    for (const auto& [index, label] : cur.retained) {
        json j{{"name", inputs[index].name}, {"label", label}, {"style", style_names()[static_cast<std::size_t>(label)]},
               {"features", features_json(inputs[index].features)}, {"unvoiced", static_cast<bool>(unvoiced[index])}};
        lines += j.dump() + "\n";
    }
    write_text(out / "curated.jsonl", lines);
    json rep = json::parse(report.to_json());
    json bins;
    for (std::size_t f = 0; f < FeatureVector5::kCount; ++f) bins[feature_names()[f]] = {cur.bins.low_cut[f], cur.bins.high_cut[f]};
    rep["bins"] = bins;
    write_text(out / "filter_report.json", rep.dump(2) + "\n");
    return report;
}

RunConfig gradcheck_config(std::uint64_t seed) {
    RunConfig c;
    c.seed = seed;
    c.corpus.n_per_class = 2;
    c.corpus.feat_dim = 4;
    c.corpus.words_per_class = 2;
    c.corpus.min_words = 2;
    c.corpus.max_words = 3;
    c.serial.enc_dim = 8;
    c.serial.enc_layers = 3;
    c.serial.enc_heads = 2;
    c.serial.adaptor_dim = 8;
    c.serial.adaptor_layers = 1;
    c.serial.dec_dim = 8;
    c.serial.dec_layers = 1;
    c.serial.dec_heads = 2;
    c.serial.ffn_mult = 2;
    c.alsm.d_shared = 8;
    c.alsm.n_subspaces = 2;
    c.alsm.ref_dim = 4;
    c.alsm.classifier_heads = 2;
    c.alsm.classifier_ffn_mult = 2;
    return c;
}

std::vector<GradCheckRun> cmd_gradcheck(std::uint64_t seed, const GradCheckOptions& options) {
    std::vector<GradCheckRun> runs;

    {
        // ALSM alone: B=2, T=5, S=3 with one padded frame and one padded token.
        AlsmConfig ac = gradcheck_config(seed).alsm;
        ac.emb_a_dim = 6;
        ac.emb_t_dim = 5;
        ParamStore store(seed);
        const Alsm alsm(store, ac);
        std::mt19937_64 rng(seed + 1);
        std::normal_distribution<double> normal(0.0, 1.0);
        std::vector<double> a(2 * 5 * 6), t(2 * 3 * 5);
        for (auto& v : a) v = normal(rng);
        for (auto& v : t) v = normal(rng);
        const Tensor emb_a = Tensor::from({2, 5, 6}, a);
        const Tensor emb_t = Tensor::from({2, 3, 5}, t);
        const std::vector<unsigned char> frames = {1, 1, 1, 1, 1, 1, 1, 1, 1, 0};
        const std::vector<unsigned char> text = {1, 1, 1, 1, 1, 0};
        const std::vector<long> labels = {1, 6};
        runs.push_back({"alsm", grad_check([&] { return alsm.loss(alsm.forward(emb_a, emb_t, {frames, text}), labels); },
                                           store.entries(), options)});
    }

    RunConfig c = gradcheck_config(seed);
    const Lexicon lexicon = Lexicon::build(c.corpus);
    c.resolve(lexicon.vocab.size());
    const Corpus corpus = generate_corpus(c.corpus, lexicon);
    DualPathModel model(c, lexicon);
    const std::vector<const Utterance*> items = {&corpus.utterances[0], &corpus.utterances[3]};
    const Batch batch = Batch::build(items, lexicon, {0, 1});

    std::vector<std::pair<std::string, Tensor>> serial_params;
    for (const auto& e : model.store().entries())
        if (e.first.rfind("serial.", 0) == 0) serial_params.push_back(e);
    runs.push_back({"serial", grad_check([&] { return model.losses(batch, false).serial; }, serial_params, options)});
    runs.push_back({"joint", grad_check([&] {
                        const PathLosses l = model.losses(batch, false);
                        return total_loss(l.serial, l.parallel, c.fusion);
                    }, model.store().entries(), options)});

    {
        // Desk dims: every tensor, a fixed sample of its scalars.
        RunConfig d = RunConfig::for_profile(Profile::DeskDims);
        d.seed = seed;
        d.corpus.n_per_class = 2;
        d.corpus.min_words = 2;
        d.corpus.max_words = 3;
        const Lexicon desk_lexicon = Lexicon::build(d.corpus);
        d.resolve(desk_lexicon.vocab.size());
        const Corpus desk_corpus = generate_corpus(d.corpus, desk_lexicon);
        DualPathModel desk(d, desk_lexicon);
        const std::vector<const Utterance*> desk_items = {&desk_corpus.utterances[0], &desk_corpus.utterances[1]};
        const Batch desk_batch = Batch::build(desk_items, desk_lexicon, {0, 1});
        GradCheckOptions sampled = options;
        sampled.max_per_param = kDeskSamplesPerTensor;
        runs.push_back({"joint-desk", grad_check([&] {
                            const PathLosses l = desk.losses(desk_batch, false);
                            return total_loss(l.serial, l.parallel, d.fusion);
                        }, desk.store().entries(), sampled)});
    }
    return runs;
}

std::string gradcheck_table(const std::vector<GradCheckRun>& runs) {
    std::string out;
    char line[256];
    for (const auto& run : runs) {
        std::snprintf(line, sizeof line, "== %s: %s, max rel error %.3e over %zu tensors\n", run.name.c_str(),
                      run.report.passed ? "PASS" : "FAIL", run.report.max_rel_error, run.report.params.size());
        out += line;
        for (const auto& p : run.report.params) {
            std::snprintf(line, sizeof line, "  %-36s %7zu/%-7zu  %.3e  (i=%zu analytic %.6e numeric %.6e)\n", p.name.c_str(), p.checked, p.size,
                          p.max_rel_error, p.worst_index, p.analytic, p.numeric);
            out += line;
        }
    }
    return out;
}

}  // namespace spdp
