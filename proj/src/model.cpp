#include "spdp/model.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <random>
#include <sstream>

#include "json.hpp"

namespace spdp {

namespace {

using nlohmann::json;

json dist_json(const StyleDistribution& d) { return json(std::vector<double>(d.probs.begin(), d.probs.end())); }

std::vector<Tensor> trainable(const ParamStore& store, bool freeze_encoder) {
    std::vector<Tensor> out;
    for (const auto& [name, t] : store.entries())
        if (!freeze_encoder || name.rfind("serial.enc.", 0) != 0) out.push_back(t);
    return out;
}

std::uint64_t mix(std::uint64_t seed, std::uint64_t epoch) {
    // splitmix64 finaliser over the pair
    std::uint64_t z = seed * 0x9e3779b97f4a7c15ULL + epoch + 0x632be59bd9b4e019ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace

Batch Batch::build(std::span<const Utterance* const> items, const Lexicon& lexicon, const std::vector<std::size_t>& prompt_choice) {
    require(!items.empty(), "empty batch");
    require(prompt_choice.size() == items.size(), "one prompt choice per item expected");
    Batch b;
    const std::size_t F = items.front()->frames.size() / items.front()->n_frames;
    std::size_t T = 0;
    for (const auto* u : items) T = std::max(T, u->n_frames);
    std::vector<double> frames(items.size() * T * F, 0.0);
    b.frame_mask.assign(items.size() * T, 0);
    for (std::size_t i = 0; i < items.size(); ++i) {
        const Utterance& u = *items[i];
        require(u.frames.size() == u.n_frames * F, "utterance " + u.id + " has inconsistent frame width");
        std::copy(u.frames.begin(), u.frames.end(), frames.begin() + static_cast<std::ptrdiff_t>(i * T * F));
        std::fill_n(b.frame_mask.begin() + static_cast<std::ptrdiff_t>(i * T), u.n_frames, 1);
        b.ids.push_back(u.id);
        b.prompts.push_back(lexicon.prompts.at(prompt_choice[i]));
        b.targets.push_back(lexicon.target_for(u));
        b.labels.push_back(u.gold_style);
    }
    b.frames = Tensor::from({items.size(), T, F}, std::move(frames));
    return b;
}

std::vector<std::string> flag_names(unsigned flags) {
    std::vector<std::string> out;
    if (flags & kNoTermination) out.emplace_back("NoTermination");
    if (flags & kParallelOnlyFallback) out.emplace_back("ParallelOnlyFallback");
    if (flags & kZeroMassFallback) out.emplace_back("ZeroMassFallback");
    if (flags & kNoLinguisticEvidence) out.emplace_back("NoLinguisticEvidence");
    return out;
}

std::string PredictionRecord::to_json(const Vocab& vocab) const {
    json j;
    j["id"] = id;
    j["transcript"] = transcript;
    j["transcript_text"] = vocab.join(transcript);
    j["tokens"] = tokens;
    j["p"] = dist_json(p);
    j["q"] = dist_json(q);
    j["final"] = dist_json(final);
    j["class"] = cls;
    j["style"] = style_names()[cls];
    j["decoded_style"] = decoded_style;
    j["flags"] = flag_names(flags);
    return j.dump();
}

DualPathModel::DualPathModel(const RunConfig& config, Lexicon lexicon)
    : lexicon_(std::move(lexicon)),
      store_(config.seed),
      serial_(store_, config.serial),
      alsm_(store_, config.alsm) {
    require(config.serial.vocab_size == lexicon_.vocab.size(), "config vocab size does not match the lexicon", ErrorKind::Usage);
    require(!lexicon_.prompts.empty(), "lexicon has no prompts");
}

PathLosses DualPathModel::losses(const Batch& batch, bool detach_alsm_inputs) const {
    const Encoded enc = serial_.encode(batch.frames, batch.frame_mask);
    const Adapted audio = serial_.adapt(enc.enc_last, enc.mask);
    const TeacherForced tf = serial_.teacher_forced_loss(audio, batch.prompts, batch.targets);
    const Tensor emb_a = detach_alsm_inputs ? enc.emb_a.detach() : enc.emb_a;
    const Tensor emb_t = detach_alsm_inputs ? tf.emb_t.detach() : tf.emb_t;
    const AlsmOutput out = alsm_.forward(emb_a, emb_t, {enc.mask, tf.text_mask});
    return {tf.loss, alsm_.loss(out, batch.labels)};
}

PredictionRecord DualPathModel::predict(const Utterance& u, const FusionConfig& fusion, bool tolerate_empty) const {
    NoGradGuard no_grad;
    require(u.n_frames >= 1 && u.frames.size() % u.n_frames == 0, "utterance " + u.id + " has no frames");
    PredictionRecord rec;
    rec.id = u.id;
    const std::size_t F = u.frames.size() / u.n_frames;
    const std::vector<unsigned char> mask(u.n_frames, 1);
    const Encoded enc = serial_.encode(Tensor::from({1, u.n_frames, F}, u.frames), mask);
    const Adapted audio = serial_.adapt(enc.enc_last, enc.mask);
    const Generation gen = serial_.generate_greedy(audio, inference_prompt());
    rec.tokens = gen.tokens;
    rec.transcript = gen.transcript;

    const auto open = std::find(gen.tokens.begin(), gen.tokens.end(), Vocab::kStyleOpen);
    if (open != gen.tokens.end()) {
        const auto close = std::find(open + 1, gen.tokens.end(), Vocab::kStyleClose);
        if (close != gen.tokens.end()) rec.decoded_style = lexicon_.styles.style_of_sequence(std::span<const long>(&*(open + 1), static_cast<std::size_t>(close - open - 1)));
        rec.serial_contract = gen.style_open_count == 1 && open + 1 != gen.tokens.end() &&
                              lexicon_.styles.style_of_first_token(*(open + 1)) >= 0;
    }

    if (gen.no_termination()) {
        rec.flags |= kNoTermination | kParallelOnlyFallback;
        rec.p = StyleDistribution::uniform();
    } else {
        const SerialStyleResult sr = serial_style_distribution(*gen.next_token_probs, lexicon_.styles);
        rec.p = sr.dist;
        if (sr.zero_mass_fallback) rec.flags |= kZeroMassFallback;
    }

    if (gen.transcript.empty()) {
        if (!tolerate_empty) fail(ErrorKind::Data, "no linguistic evidence: empty generated transcript for " + u.id);
        rec.flags |= kNoLinguisticEvidence;
        rec.q = StyleDistribution::uniform();
        rec.final = rec.p;
    } else {
        const std::vector<unsigned char> text_mask(gen.transcript.size(), 1);
        const AlsmOutput out = alsm_.forward(enc.emb_a, gen.emb_t, {enc.mask, text_mask});
        std::array<double, kNumStyles> q{};
        for (std::size_t k = 0; k < kNumStyles; ++k) q[k] = std::exp(out.log_probs.data()[k]);
        rec.q = StyleDistribution::from(q);
        rec.final = (rec.flags & kParallelOnlyFallback) ? rec.q : fuse(rec.p, rec.q, fusion).dist;
    }
    rec.cls = rec.final.argmax();
    return rec;
}

std::string StepLog::to_json() const {
    return json{{"step", step}, {"L_serial", serial}, {"L_parallel", parallel}, {"L_total", total}}.dump();
}

Trainer::Trainer(DualPathModel& model, const RunConfig& config)
    : model_(model), config_(config), optimizer_(trainable(model.store(), config.train.freeze_encoder), config.optim) {}

StepLog Trainer::step(const Batch& batch, const std::string& batch_tag) {
    model_.store().zero_grad();
    const PathLosses l = model_.losses(batch, config_.train.detach_alsm_inputs);
    StepLog log;
    log.step = state_.step + 1;
    log.serial = l.serial.item();
    log.parallel = l.parallel.item();
    if (!std::isfinite(log.serial) || !std::isfinite(log.parallel)) {
        std::string ids;
        for (const auto& id : batch.ids) ids += (ids.empty() ? "" : ",") + id;
        fail(ErrorKind::Numeric, "non-finite loss at step " + std::to_string(log.step) + ", batch " + batch_tag +
                                     " (L_serial=" + std::to_string(log.serial) + ", L_parallel=" + std::to_string(log.parallel) +
                                     "; items " + ids + ")");
    }
    const Tensor total = total_loss(l.serial, l.parallel, config_.fusion);
    log.total = total.item();
    total.backward();
    optimizer_.step();
    state_.step = log.step;
    return log;
}

void Trainer::run_epoch(std::span<const Utterance* const> train, const std::function<void(const StepLog&)>& on_step) {
    require(!train.empty(), "training split is empty");
    std::mt19937_64 rng(mix(config_.seed, state_.epochs_done));
    std::vector<const Utterance*> order(train.begin(), train.end());
    std::shuffle(order.begin(), order.end(), rng);
    std::uniform_int_distribution<std::size_t> pick_prompt(0, model_.lexicon().prompts.size() - 1);
    const std::size_t bs = config_.train.batch_size;
    for (std::size_t start = 0, index = 0; start < order.size(); start += bs, ++index) {
        const std::size_t n = std::min(bs, order.size() - start);
        std::vector<std::size_t> prompts(n);
        for (auto& p : prompts) p = pick_prompt(rng);
        const Batch batch = Batch::build(std::span<const Utterance* const>(order.data() + start, n), model_.lexicon(), prompts);
        const StepLog log = step(batch, "epoch " + std::to_string(state_.epochs_done + 1) + " #" + std::to_string(index));
        if (on_step) on_step(log);
    }
    ++state_.epochs_done;
}

void Trainer::save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    checkpoint::save(dir / "model.spdp", model_.store());
    optimizer_.save(dir / "optim.spdp");
    std::ofstream out(dir / "state.json", std::ios::trunc);
    out << json{{"epochs_done", state_.epochs_done}, {"step", state_.step}}.dump() << '\n';
    require(static_cast<bool>(out), "cannot write trainer state into " + dir.string());
}

void Trainer::load(const std::filesystem::path& dir) {
    checkpoint::load(dir / "model.spdp", model_.store());
    optimizer_.load(dir / "optim.spdp");
    std::ifstream in(dir / "state.json");
    require(static_cast<bool>(in), "missing state.json in " + dir.string());
    try {
        const json j = json::parse(in);
        state_.epochs_done = j.at("epochs_done").get<std::size_t>();
        state_.step = j.at("step").get<std::uint64_t>();
    } catch (const json::exception& e) {
        fail(ErrorKind::Data, std::string("bad state.json: ") + e.what());
    }
    require(state_.step == optimizer_.state().step, "state.json and optimizer step disagree");
}

std::string EvalReport::confusion_csv() const {
    std::ostringstream os;
    os << "gold\\pred";
    for (std::size_t k = 0; k < kNumStyles; ++k) os << ',' << k;
    os << '\n';
    for (std::size_t g = 0; g < kNumStyles; ++g) {
        os << g;
        for (std::size_t k = 0; k < kNumStyles; ++k) os << ',' << confusion[g][k];
        os << '\n';
    }
    return os.str();
}

std::string EvalReport::to_json() const {
    json j;
    j["total"] = total;
    j["accuracy"] = accuracy();
    j["fused_accuracy"] = accuracy();
    j["serial_only_accuracy"] = rate(serial_correct);
    j["parallel_only_accuracy"] = rate(parallel_correct);
    j["decoded_label_accuracy"] = rate(decoded_correct);
    j["serial_contract_rate"] = rate(serial_contract);
    j["no_termination_rate"] = rate(no_termination);
    j["fallbacks"] = {{"NoTermination", no_termination},
                      {"ParallelOnlyFallback", parallel_only_fallback},
                      {"ZeroMassFallback", zero_mass_fallback},
                      {"NoLinguisticEvidence", no_linguistic_evidence}};
    json rows = json::array();
    for (const auto& row : confusion) rows.push_back(std::vector<std::size_t>(row.begin(), row.end()));
    j["confusion"] = rows;
    j["styles"] = style_names();
    return j.dump(2);
}

EvalReport evaluate(const DualPathModel& model, std::span<const Utterance* const> items, const FusionConfig& fusion,
                    std::vector<PredictionRecord>* records) {
    require(!items.empty(), "evaluation split is empty");
    fusion.validate();
    std::vector<PredictionRecord> recs(items.size());
    std::vector<std::exception_ptr> errors(items.size());
    const auto n = static_cast<long>(items.size());
#pragma omp parallel for schedule(dynamic)
    for (long i = 0; i < n; ++i) {
        try {
            recs[static_cast<std::size_t>(i)] = model.predict(*items[static_cast<std::size_t>(i)], fusion, true);
        } catch (...) {
            errors[static_cast<std::size_t>(i)] = std::current_exception();
        }
    }
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);

    EvalReport r;
    for (std::size_t i = 0; i < items.size(); ++i) {
        const PredictionRecord& rec = recs[i];
        const auto gold = static_cast<std::size_t>(items[i]->gold_style);
        ++r.total;
        ++r.confusion[gold][rec.cls];
        r.fused_correct += rec.cls == gold;
        r.serial_correct += rec.p.argmax() == gold;
        r.parallel_correct += rec.q.argmax() == gold;
        r.decoded_correct += rec.decoded_style == static_cast<int>(gold);
        r.serial_contract += rec.serial_contract;
        r.no_termination += (rec.flags & kNoTermination) != 0;
        r.parallel_only_fallback += (rec.flags & kParallelOnlyFallback) != 0;
        r.zero_mass_fallback += (rec.flags & kZeroMassFallback) != 0;
        r.no_linguistic_evidence += (rec.flags & kNoLinguisticEvidence) != 0;
    }
    if (records) *records = std::move(recs);
    return r;
}

}  // namespace spdp
