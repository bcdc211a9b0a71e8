#include "spdp/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <random>

#include "json.hpp"

#include "spdp/error.hpp"

namespace spdp {

namespace {

const std::vector<std::vector<std::string>>& prompt_table() {
    static const std::vector<std::vector<std::string>> table = {
        {"@transcribe", "@then", "@append", "@style"},
        {"@please", "@transcribe", "@audio"},
        {"@write", "@text", "@and", "@label"},
        {"@transcribe", "@with", "@style", "@tag"},
        {"@text", "@then", "@style"},
    };
    return table;
}

std::string word_token(std::size_t i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "w%03zu", i);
    return buf;
}

}  // namespace

const char* split_name(Split s) { return s == Split::Train ? "train" : "test"; }

void CorpusConfig::validate() const {
    require(n_per_class >= 2, "n_per_class must be >= 2", ErrorKind::Usage);
    require(feat_dim >= 1 && words_per_class >= 1 && frames_per_word >= 1, "corpus dims must be positive", ErrorKind::Usage);
    require(min_words >= 1 && min_words <= max_words, "need 1 <= min_words <= max_words", ErrorKind::Usage);
    require(coupling >= 0.0 && coupling <= 1.0, "coupling must lie in [0,1]", ErrorKind::Usage);
    require(class_word_mass > 0.0 && class_word_mass <= 1.0, "class_word_mass must lie in (0,1]", ErrorKind::Usage);
    require(test_fraction >= 0.0 && test_fraction < 1.0, "test_fraction must lie in [0,1)", ErrorKind::Usage);
    require(spread >= 0.0, "spread must be >= 0", ErrorKind::Usage);
    require(n_prompts >= 1 && n_prompts <= prompt_table().size(), "n_prompts must lie in [1,5]", ErrorKind::Usage);
}

Lexicon Lexicon::build(const CorpusConfig& config) {
    config.validate();
    Lexicon lex;
    for (std::size_t i = 0; i < config.words_per_class * kNumStyles; ++i) lex.words.push_back(lex.vocab.add(word_token(i)));
    lex.styles = StyleMap::build(lex.vocab);
    for (std::size_t k = 0; k < config.n_prompts; ++k) {
        std::vector<long> p;
        for (const auto& w : prompt_table()[k]) p.push_back(lex.vocab.add(w));
        lex.prompts.push_back(std::move(p));
    }
    return lex;
}

Lexicon Lexicon::from_vocab(Vocab vocab) {
    Lexicon lex;
    lex.vocab = std::move(vocab);
    lex.styles = StyleMap::from_vocab(lex.vocab);
    for (std::size_t i = 0; lex.vocab.contains(word_token(i)); ++i) lex.words.push_back(lex.vocab.id(word_token(i)));
    for (const auto& row : prompt_table()) {
        if (!std::all_of(row.begin(), row.end(), [&](const std::string& w) { return lex.vocab.contains(w); })) break;
        std::vector<long> p;
        for (const auto& w : row) p.push_back(lex.vocab.id(w));
        lex.prompts.push_back(std::move(p));
    }
    require(!lex.words.empty() && !lex.prompts.empty(), "vocabulary lacks transcript words or prompts");
    return lex;
}

std::vector<long> Lexicon::target_for(const Utterance& u) const {
    std::vector<long> t = u.transcript;
    t.push_back(Vocab::kStyleOpen);
    const auto& label = styles[static_cast<std::size_t>(u.gold_style)].tokens;
    t.insert(t.end(), label.begin(), label.end());
    t.push_back(Vocab::kStyleClose);
    t.push_back(Vocab::kEos);
    return t;
}

CorpusModel CorpusModel::build(const CorpusConfig& c, std::size_t n_words) {
    CorpusModel m;
    std::mt19937_64 rng(c.seed ^ 0x5eed5eedULL);
    std::normal_distribution<double> normal(0.0, 1.0);
    m.centroids.assign(kNumStyles, std::vector<double>(c.feat_dim));
    for (auto& row : m.centroids)
        for (auto& v : row) v = c.centroid_scale * normal(rng);
    m.word_patterns.assign(n_words, std::vector<double>(c.feat_dim));
    for (auto& row : m.word_patterns)
        for (auto& v : row) v = c.word_pattern_scale * normal(rng);
    // Class k owns words [k*W, (k+1)*W); the remaining mass is spread over all other words.
    const std::size_t W = n_words / kNumStyles;
    m.unigrams.assign(kNumStyles, std::vector<double>(n_words, 0.0));
    for (std::size_t k = 0; k < kNumStyles; ++k) {
        const double own = c.class_word_mass / static_cast<double>(W);
        const double other = n_words > W ? (1.0 - c.class_word_mass) / static_cast<double>(n_words - W) : 0.0;
        for (std::size_t w = 0; w < n_words; ++w) m.unigrams[k][w] = (w / W == k) ? own : other;
        double s = 0.0;
        for (double v : m.unigrams[k]) s += v;
        for (double& v : m.unigrams[k]) v /= s;
    }
    // Pairs (0,1), (2,3), ... swap tables when cues are decoupled.
    for (std::size_t k = 0; k < kNumStyles; ++k) m.confusable.push_back(static_cast<int>(k ^ 1u));
    return m;
}

double CorpusModel::min_centroid_separation() const {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < centroids.size(); ++i)
        for (std::size_t j = i + 1; j < centroids.size(); ++j) {
            double d = 0.0;
            for (std::size_t f = 0; f < centroids[i].size(); ++f) d += std::pow(centroids[i][f] - centroids[j][f], 2);
            best = std::min(best, std::sqrt(d));
        }
    return best;
}

std::vector<const Utterance*> Corpus::split(Split s) const {
    std::vector<const Utterance*> out;
    for (const auto& u : utterances)
        if (u.split == s) out.push_back(&u);
    return out;
}

Corpus generate_corpus(const CorpusConfig& c, const Lexicon& lexicon) {
    c.validate();
    require(lexicon.words.size() == c.words_per_class * kNumStyles, "lexicon does not match corpus config", ErrorKind::Usage);
    const CorpusModel model = CorpusModel::build(c, lexicon.words.size());
    std::mt19937_64 rng(c.seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> length(c.min_words, c.max_words);

    Corpus corpus;
    corpus.feat_dim = c.feat_dim;
    const std::size_t total = c.n_per_class * kNumStyles;
    for (std::size_t i = 0; i < total; ++i) {
        Utterance u;
        char buf[32];
        std::snprintf(buf, sizeof buf, "utt%06zu", i);
        u.id = buf;
        u.gold_style = static_cast<int>(i % kNumStyles);
        const bool coupled = unit(rng) < c.coupling;
        const auto& table = model.unigrams[static_cast<std::size_t>(coupled ? u.gold_style : model.confusable[static_cast<std::size_t>(u.gold_style)])];
        std::discrete_distribution<std::size_t> pick(table.begin(), table.end());
        const std::size_t n_words = length(rng);
        std::vector<std::size_t> word_idx;
        for (std::size_t w = 0; w < n_words; ++w) word_idx.push_back(pick(rng));
        for (auto w : word_idx) u.transcript.push_back(lexicon.words[w]);
        u.n_frames = n_words * c.frames_per_word;
        u.frames.resize(u.n_frames * c.feat_dim);
        const auto& centroid = model.centroids[static_cast<std::size_t>(u.gold_style)];
        for (std::size_t t = 0; t < u.n_frames; ++t) {
            const auto& pattern = model.word_patterns[word_idx[t / c.frames_per_word]];
            for (std::size_t f = 0; f < c.feat_dim; ++f)
                u.frames[t * c.feat_dim + f] = centroid[f] + pattern[f] + c.spread * noise(rng);
        }
        corpus.utterances.push_back(std::move(u));
    }
    // Stratified split: the same count of test items from every class.
    const auto n_test = static_cast<std::size_t>(std::llround(static_cast<double>(c.n_per_class) * c.test_fraction));
    for (std::size_t k = 0; k < kNumStyles; ++k) {
        std::vector<std::size_t> members;
        for (std::size_t i = k; i < total; i += kNumStyles) members.push_back(i);
        std::shuffle(members.begin(), members.end(), rng);
        for (std::size_t j = 0; j < std::min(n_test, members.size() - 1); ++j) corpus.utterances[members[j]].split = Split::Test;
    }
    return corpus;
}

void save_corpus(const std::filesystem::path& dir, const Corpus& corpus) {
    std::filesystem::create_directories(dir);
    std::size_t max_t0 = 0;
    for (const auto& u : corpus.utterances) max_t0 = std::max(max_t0, u.n_frames);
    std::ofstream bin(dir / "frames.bin", std::ios::binary | std::ios::trunc);
    std::ofstream man(dir / "manifest.jsonl", std::ios::trunc);
    require(bin && man, "cannot write corpus into " + dir.string());
    const std::uint64_t header[3] = {corpus.utterances.size(), max_t0, corpus.feat_dim};
    bin.write(reinterpret_cast<const char*>(header), sizeof header);
    std::uint64_t offset = sizeof header;
    for (const auto& u : corpus.utterances) {
        nlohmann::json rec = {{"id", u.id}, {"style", u.gold_style}, {"split", split_name(u.split)},
                              {"transcript", u.transcript}, {"frames", u.n_frames}, {"offset", offset}};
        man << rec.dump() << '\n';
        bin.write(reinterpret_cast<const char*>(u.frames.data()), static_cast<std::streamsize>(u.frames.size() * sizeof(double)));
        offset += u.frames.size() * sizeof(double);
    }
    require(static_cast<bool>(bin) && static_cast<bool>(man), "corpus write failed");
}

Corpus load_corpus(const std::filesystem::path& dir) {
    std::ifstream bin(dir / "frames.bin", std::ios::binary);
    std::ifstream man(dir / "manifest.jsonl");
    require(bin && man, "corpus manifest or frames sidecar missing in " + dir.string());
    std::uint64_t header[3] = {0, 0, 0};
    require(static_cast<bool>(bin.read(reinterpret_cast<char*>(header), sizeof header)), "truncated frames sidecar");
    Corpus corpus;
    corpus.feat_dim = header[2];
    std::string line;
    while (std::getline(man, line)) {
        if (line.empty()) continue;
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorKind::Data, std::string("bad manifest line: ") + e.what());
        }
        Utterance u;
        u.id = rec.at("id").get<std::string>();
        u.gold_style = rec.at("style").get<int>();
        require(u.gold_style >= 0 && u.gold_style < static_cast<int>(kNumStyles), "style out of range for " + u.id);
        u.split = rec.at("split").get<std::string>() == "test" ? Split::Test : Split::Train;
        u.transcript = rec.at("transcript").get<std::vector<long>>();
        u.n_frames = rec.at("frames").get<std::size_t>();
        require(u.n_frames >= 1 && u.n_frames <= header[1] && !u.transcript.empty(), "invalid record " + u.id);
        u.frames.resize(u.n_frames * corpus.feat_dim);
        bin.seekg(static_cast<std::streamoff>(rec.at("offset").get<std::uint64_t>()));
        require(static_cast<bool>(bin.read(reinterpret_cast<char*>(u.frames.data()), static_cast<std::streamsize>(u.frames.size() * sizeof(double)))),
                "frames sidecar truncated at " + u.id);
        corpus.utterances.push_back(std::move(u));
    }
    require(corpus.utterances.size() == header[0], "manifest and sidecar disagree on utterance count");
    return corpus;
}

}  // namespace spdp
