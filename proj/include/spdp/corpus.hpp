#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "spdp/vocab.hpp"

namespace spdp {

enum class Split { Train, Test };
const char* split_name(Split s);

struct Utterance {
    std::string id;
    std::size_t n_frames = 0;     // T0
    std::vector<double> frames;   // n_frames x feat_dim, row-major
    std::vector<long> transcript;
    int gold_style = 0;
    Split split = Split::Train;
};

struct CorpusConfig {
    std::size_t n_per_class = 625;
    std::size_t feat_dim = 16;
    std::size_t words_per_class = 12;
    std::size_t min_words = 4;
    std::size_t max_words = 6;
    std::size_t frames_per_word = 2;
    double centroid_scale = 0.15;      // class centroid ~ N(0, scale^2) per dimension
    double word_pattern_scale = 0.7;   // per-word acoustic pattern ~ N(0, scale^2)
    double spread = 0.3;               // frame noise std
    double class_word_mass = 0.8;      // unigram mass a class puts on its own words
    double coupling = 0.9;             // P(transcript drawn from the gold class's table)
    double test_fraction = 0.1;
    std::size_t n_prompts = 5;
    std::uint64_t seed = 7;

    void validate() const;
};

// Token inventory shared by generation, training and inference.
struct Lexicon {
    Vocab vocab;
    StyleMap styles;
    std::vector<long> words;                 // transcript alphabet
    std::vector<std::vector<long>> prompts;  // prompt pool

    static Lexicon build(const CorpusConfig& config);
    // Rebuilds the word/prompt lists from a loaded vocabulary.
    static Lexicon from_vocab(Vocab vocab);

    // transcript ++ ["<"] ++ style tokens ++ [">"] ++ [EOS]
    std::vector<long> target_for(const Utterance& u) const;
};

// Deterministic functions of the config: the corpus generator and the tests use the same tables.
struct CorpusModel {
    std::vector<std::vector<double>> centroids;      // 8 x feat_dim
    std::vector<std::vector<double>> word_patterns;  // words x feat_dim
    std::vector<std::vector<double>> unigrams;       // 8 x words, each row sums to 1
    std::vector<int> confusable;                     // class whose table is used on decoupled draws

    static CorpusModel build(const CorpusConfig& config, std::size_t n_words);
    double min_centroid_separation() const;
};

struct Corpus {
    std::size_t feat_dim = 0;
    std::vector<Utterance> utterances;

    std::vector<const Utterance*> split(Split s) const;
};

// Balanced classes, stratified train/test split, byte-identical for a given seed.
Corpus generate_corpus(const CorpusConfig& config, const Lexicon& lexicon);

// Manifest: one JSON object per line {id, style, split, transcript, frames, offset}
// Sidecar: u64 count, u64 max T0, u64 feat_dim, then each utterance's float64 frames at `offset`.
void save_corpus(const std::filesystem::path& dir, const Corpus& corpus);
Corpus load_corpus(const std::filesystem::path& dir);

}  // namespace spdp
