#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <random>

#include "doctest.h"

#include "spdp/corpus.hpp"
#include "spdp/error.hpp"
#include "spdp/features.hpp"

using namespace spdp;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("spdp_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

std::vector<double> tone(double hz, double seconds, int rate, double am_hz = 0.0) {
    std::vector<double> s(static_cast<std::size_t>(seconds * rate));
    for (std::size_t i = 0; i < s.size(); ++i) {
        const double t = static_cast<double>(i) / rate;
        const double env = am_hz > 0.0 ? 0.5 * (1.0 - std::cos(2.0 * M_PI * am_hz * t)) : 1.0;
        s[i] = 0.5 * env * std::sin(2.0 * M_PI * hz * t);
    }
    return s;
}

CorpusConfig small_corpus() {
    CorpusConfig c;
    c.n_per_class = 40;
    return c;
}

}  // namespace

// ---- corpus -------------------------------------------------------------------------

TEST_CASE("corpus is balanced, stratified and deterministic") {
    const CorpusConfig c = small_corpus();
    const Lexicon lex = Lexicon::build(c);
    const Corpus a = generate_corpus(c, lex);
    const Corpus b = generate_corpus(c, lex);
    std::map<int, int> count, test;
    for (const auto& u : a.utterances) {
        ++count[u.gold_style];
        if (u.split == Split::Test) ++test[u.gold_style];
    }
    for (int k = 0; k < 8; ++k) {
        CHECK(count[k] == 40);
        CHECK(test[k] == 4);
    }
    const fs::path d1 = temp_dir("corpus_a"), d2 = temp_dir("corpus_b");
    save_corpus(d1, a);
    save_corpus(d2, b);
    CHECK(slurp(d1 / "manifest.jsonl") == slurp(d2 / "manifest.jsonl"));
    CHECK(slurp(d1 / "frames.bin") == slurp(d2 / "frames.bin"));

    const Corpus back = load_corpus(d1);
    REQUIRE(back.utterances.size() == a.utterances.size());
    for (std::size_t i = 0; i < a.utterances.size(); ++i) {
        CHECK(back.utterances[i].frames == a.utterances[i].frames);
        CHECK(back.utterances[i].transcript == a.utterances[i].transcript);
        CHECK(back.utterances[i].split == a.utterances[i].split);
    }

    CorpusConfig bad = c;
    bad.n_per_class = 1;
    CHECK_THROWS_AS(generate_corpus(bad, lex), Error);
}

TEST_CASE("unigram tables are normalized") {
    const CorpusConfig c = small_corpus();
    const CorpusModel m = CorpusModel::build(c, c.words_per_class * 8);
    for (const auto& row : m.unigrams) CHECK(std::accumulate(row.begin(), row.end(), 0.0) == doctest::Approx(1.0));
    for (std::size_t k = 0; k < 8; ++k) CHECK(m.confusable[k] != static_cast<int>(k));
}

namespace {

// Fits class means of the per-utterance mean frame on the train split, scores the test split.
// `strip` removes each frame's word pattern before averaging.
double nearest_centroid_accuracy(const CorpusConfig& c, const Lexicon& lex, bool strip) {
    const Corpus corpus = generate_corpus(c, lex);
    const CorpusModel model = CorpusModel::build(c, lex.words.size());
    std::map<long, std::size_t> word_index;
    for (std::size_t i = 0; i < lex.words.size(); ++i) word_index[lex.words[i]] = i;
    auto mean_frame = [&](const Utterance& u) {
        std::vector<double> m(c.feat_dim, 0.0);
        for (std::size_t t = 0; t < u.n_frames; ++t)
            for (std::size_t f = 0; f < c.feat_dim; ++f) {
                double v = u.frames[t * c.feat_dim + f];
                if (strip) v -= model.word_patterns[word_index.at(u.transcript[t / c.frames_per_word])][f];
                m[f] += v / static_cast<double>(u.n_frames);
            }
        return m;
    };
    std::vector<std::vector<double>> centroid(8, std::vector<double>(c.feat_dim, 0.0));
    std::vector<int> n(8, 0);
    for (const auto* u : corpus.split(Split::Train)) {
        const auto m = mean_frame(*u);
        for (std::size_t f = 0; f < c.feat_dim; ++f) centroid[u->gold_style][f] += m[f];
        ++n[u->gold_style];
    }
    for (std::size_t k = 0; k < 8; ++k)
        for (auto& v : centroid[k]) v /= n[k];
    int correct = 0;
    const auto test = corpus.split(Split::Test);
    for (const auto* u : test) {
        const auto m = mean_frame(*u);
        int best = 0;
        double best_d = 1e300;
        for (int k = 0; k < 8; ++k) {
            double d = 0.0;
            for (std::size_t f = 0; f < c.feat_dim; ++f) d += std::pow(m[f] - centroid[k][f], 2);
            if (d < best_d) best_d = d, best = k;
        }
        correct += best == u->gold_style;
    }
    return static_cast<double>(correct) / static_cast<double>(test.size());
}

}  // namespace

TEST_CASE("nearest-centroid oracle separates classes from frames alone") {
    CorpusConfig c = small_corpus();
    c.n_per_class = 200;
    c.coupling = 1.0;
    const Lexicon lex = Lexicon::build(c);

    // centroid + noise frames
    c.word_pattern_scale = 0.0;
    c.spread = 0.1 * CorpusModel::build(c, lex.words.size()).min_centroid_separation();
    const double plain = nearest_centroid_accuracy(c, lex, false);
    MESSAGE("nearest-centroid accuracy, centroid + noise frames: " << plain);
    CHECK(plain >= 0.9);

    // default word patterns, removed using the known transcript
    c.word_pattern_scale = CorpusConfig{}.word_pattern_scale;
    const double stripped = nearest_centroid_accuracy(c, lex, true);
    MESSAGE("nearest-centroid accuracy, word patterns removed: " << stripped);
    CHECK(stripped >= 0.9);
}

TEST_CASE("training targets follow the serial format") {
    const CorpusConfig c = small_corpus();
    const Lexicon lex = Lexicon::build(c);
    const Corpus corpus = generate_corpus(c, lex);
    const Utterance& u = corpus.utterances[5];
    const auto t = lex.target_for(u);
    const auto& entry = lex.styles[static_cast<std::size_t>(u.gold_style)];
    std::vector<long> expect = u.transcript;
    expect.push_back(Vocab::kStyleOpen);
    expect.insert(expect.end(), entry.tokens.begin(), entry.tokens.end());
    expect.push_back(Vocab::kStyleClose);
    expect.push_back(Vocab::kEos);
    CHECK(t == expect);
}

// ---- features --------------------------------------------------------------------

TEST_CASE("pitch of a pure tone") {
    const auto r = extract_features5(tone(220.0, 2.0, 16000), 16000);
    CHECK_FALSE(r.unvoiced);
    CHECK(r.features.pitch_mean >= 215.0);
    CHECK(r.features.pitch_mean <= 225.0);
    CHECK(r.features.pitch_std < 5.0);
}

TEST_CASE("pitch survives resampling to 8 kHz") {
    const auto a = extract_features5(tone(180.0, 2.0, 16000), 16000);
    const auto b = extract_features5(tone(180.0, 2.0, 8000), 8000);
    CHECK(std::abs(a.features.pitch_mean - b.features.pitch_mean) < 2.0);
}

TEST_CASE("digital silence") {
    const std::vector<double> s(32000, 0.0);
    const auto r = extract_features5(s, 16000);
    CHECK(r.unvoiced);
    CHECK(r.features.speaking_rate == 0.0);
    CHECK(r.features.energy_mean == 0.0);
}

TEST_CASE("speaking rate of a 3 Hz amplitude modulation") {
    const auto r = extract_features5(tone(220.0, 2.0, 16000, 3.0), 16000);
    CHECK(r.features.speaking_rate >= 2.5);
    CHECK(r.features.speaking_rate <= 3.5);
}

TEST_CASE("energy statistics of a constant tone") {
    const auto r = extract_features5(tone(220.0, 1.0, 16000), 16000);
    CHECK(r.features.energy_mean == doctest::Approx(0.5 / std::sqrt(2.0)).epsilon(0.01));
    CHECK(r.features.energy_std < 0.01);
}

TEST_CASE("WAV round trip and malformed files") {
    const fs::path dir = temp_dir("wav");
    Waveform w;
    w.samples = tone(300.0, 0.1, 16000);
    write_wav(dir / "a.wav", w);
    const Waveform back = read_wav(dir / "a.wav");
    REQUIRE(back.samples.size() == w.samples.size());
    CHECK(back.sample_rate == 16000);
    for (std::size_t i = 0; i < w.samples.size(); ++i) CHECK(std::abs(back.samples[i] - w.samples[i]) <= 1.0 / 32767.0);

    std::ofstream(dir / "junk.wav", std::ios::binary) << "RIFF....WAVEjunk";
    CHECK_THROWS_AS(read_wav(dir / "junk.wav"), Error);
    CHECK_THROWS_AS(read_wav(dir / "missing.wav"), Error);
}

// ---- binning and filtering -------------------------------------------------------

TEST_CASE("bins at the tertile cut") {
    std::vector<FeatureVector5> pop;
    for (double x : {-1.0, 1.0}) pop.push_back({x, x, x, x, x});
    const BinThresholds b = compute_bins(pop);  // mean 0, population std 1
    CHECK(b.classify(0, 1.0) == Bin::High);
    CHECK(b.classify(0, 0.0) == Bin::Medium);
    CHECK(b.classify(0, -1.0) == Bin::Low);

    std::vector<FeatureVector5> shifted = pop;
    for (auto& f : shifted) f = {f.speaking_rate + 7, f.energy_mean + 7, f.energy_std + 7, f.pitch_mean + 7, f.pitch_std + 7};
    const BinThresholds s = compute_bins(shifted);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(s.low_cut[i] == doctest::Approx(b.low_cut[i] + 7));
        CHECK(s.high_cut[i] == doctest::Approx(b.high_cut[i] + 7));
    }
    CHECK_THROWS_WITH_AS(compute_bins(std::vector<FeatureVector5>(3, FeatureVector5{1, 2, 3, 4, 5})),
                         doctest::Contains("degenerate feature"), Error);
}

TEST_CASE("tertile cut gives equal mass on a million normal draws") {
    std::mt19937_64 rng(2024);
    std::normal_distribution<double> z(0.0, 1.0);
    std::array<std::size_t, 3> n{};
    BinThresholds b;
    b.low_cut.fill(-kTertileCut);
    b.high_cut.fill(kTertileCut);
    const std::size_t draws = 1000000;
    for (std::size_t i = 0; i < draws; ++i) ++n[static_cast<std::size_t>(b.classify(0, z(rng)))];
    for (auto c : n) CHECK(std::abs(static_cast<double>(c) / draws - 1.0 / 3.0) <= 0.01);
}

TEST_CASE("all-high filter") {
    std::vector<FeatureVector5> pop;
    for (double x : {-1.0, 1.0}) pop.push_back({x, x, x, x, x});
    const BinThresholds b = compute_bins(pop);
    CHECK(filter_high_expressivity({2, 2, 2, 2, 2}, b));
    CHECK_FALSE(filter_high_expressivity({2, 2, 2, 2, 0}, b));
}

TEST_CASE("planted feature population is recovered by the filter") {
    // 20% planted at +1.5 sigma with 0.25 sigma spread; the rest standard normal.
    std::mt19937_64 rng(5);
    std::normal_distribution<double> z(0.0, 1.0);
    std::vector<FeatureVector5> pop;
    std::vector<bool> planted;
    for (int i = 0; i < 1000; ++i) {
        const bool p = i % 5 == 0;
        auto draw = [&] { return p ? 1.5 + 0.25 * z(rng) : z(rng); };
        pop.push_back({draw(), draw(), draw(), draw(), draw()});
        planted.push_back(p);
    }
    const BinThresholds b = compute_bins(pop);
    int hit = 0, total = 0;
    for (std::size_t i = 0; i < pop.size(); ++i)
        if (planted[i]) {
            ++total;
            hit += filter_high_expressivity(pop[i], b);
        }
    CHECK(static_cast<double>(hit) / total >= 0.9);
}

// ---- annotation and test curation ------------------------------------------------

TEST_CASE("annotator intersection") {
    CHECK(annotate_intersect(2, 2) == std::optional<int>(2));
    CHECK_FALSE(annotate_intersect(2, 5).has_value());
    CHECK_THROWS_AS(annotate_intersect(2, 8), Error);
}

TEST_CASE("intersection purity against brute force and simulation") {
    const ConfusionMatrix a = symmetric_confusion(0.8);
    const std::vector<double> prior(8, 1.0 / 8.0);
    const double closed = 0.64 / (0.64 + 7.0 * std::pow(0.2 / 7.0, 2));
    double agree = 0.0, right = 0.0;
    for (int k = 0; k < 8; ++k)
        for (int l = 0; l < 8; ++l) {
            const double p = prior[k] * a[k][l] * a[k][l];
            agree += p;
            if (k == l) right += p;
        }
    CHECK(right / agree == doctest::Approx(closed).epsilon(1e-12));
    CHECK(intersection_purity(prior, a, a) == doctest::Approx(closed).epsilon(1e-12));

    std::mt19937_64 rng(3);
    int kept = 0, pure = 0;
    for (int i = 0; i < 200000; ++i) {
        const int truth = i % 8;
        const auto lab = annotate_intersect(simulate_annotator(truth, a, rng), simulate_annotator(truth, a, rng));
        if (lab) {
            ++kept;
            pure += *lab == truth;
        }
    }
    CHECK(static_cast<double>(pure) / kept == doctest::Approx(closed).epsilon(0.005));
}

TEST_CASE("reviewer score retention is strictly above five") {
    CHECK(curate_test(6, 5));
    CHECK_FALSE(curate_test(5, 5));
    CHECK(curate_test(10, 1));
    CHECK_THROWS_AS(curate_test(0, 5), Error);
    CHECK_THROWS_AS(curate_test(5, 11), Error);
}

TEST_CASE("curation stages never grow") {
    const auto fixtures = make_fixtures(FixtureSpec{.count = 40, .seconds = 2.0});
    std::vector<CurationInput> in;
    for (const auto& f : fixtures) {
        const Waveform w = synthesize_voice(f.params, 2.0);
        in.push_back({f.name, extract_features5(w.samples, w.sample_rate).features, f.style});
    }
    const CurationResult r = run_curation(in, symmetric_confusion(0.8), symmetric_confusion(0.8), 1);
    CHECK(r.n_input == 40);
    CHECK(r.n_high <= r.n_input);
    CHECK(r.n_agreed <= r.n_high);
    CHECK(r.retained.size() == r.n_agreed);
}
