#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "spdp/vocab.hpp"

namespace spdp {

// ---- WAV -------------------------------------------------------------------

struct Waveform {
    std::vector<double> samples;  // mono, [-1, 1]
    int sample_rate = 16000;
    double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
};

// 16-bit PCM mono RIFF/WAVE.
void write_wav(const std::filesystem::path& path, const Waveform& wave);
Waveform read_wav(const std::filesystem::path& path);

// ---- five-feature extraction ----------------------------------------------------

struct FeatureVector5 {
    double speaking_rate = 0.0;  // envelope peaks per second
    double energy_mean = 0.0;    // mean frame RMS
    double energy_std = 0.0;     // std of frame RMS
    double pitch_mean = 0.0;     // Hz over voiced frames
    double pitch_std = 0.0;      // Hz over voiced frames

    static constexpr std::size_t kCount = 5;
    std::array<double, kCount> values() const { return {speaking_rate, energy_mean, energy_std, pitch_mean, pitch_std}; }
};

const std::array<std::string, FeatureVector5::kCount>& feature_names();

struct FeatureOptions {
    double window_s = 0.025;
    double hop_s = 0.010;
    double pitch_min_hz = 60.0;
    double pitch_max_hz = 400.0;
    double voicing_gate = 0.05;      // fraction of max frame RMS
    double peak_threshold = 0.5;     // fraction of max envelope
    double peak_separation_s = 0.100;
    double peak_prominence = 0.1;    // fraction of max envelope
};

struct FeatureResult {
    FeatureVector5 features;
    bool unvoiced = false;
};

FeatureResult extract_features5(std::span<const double> samples, int sample_rate, const FeatureOptions& options = {});

// Autocorrelation pitch of one frame in Hz, or nullopt if no peak lies in the band.
std::optional<double> frame_pitch(std::span<const double> frame, int sample_rate, double min_hz, double max_hz);

// ---- statistical binning ---------------------------------------------------------

enum class Bin { Low, Medium, High };

struct BinThresholds {
    // Cut at mu +/- cut * sigma: low <= lo < medium <= hi < high.
    std::array<double, FeatureVector5::kCount> low_cut{};
    std::array<double, FeatureVector5::kCount> high_cut{};

    Bin classify(std::size_t feature, double value) const;
};

// 0.4307 sigma gives equal-mass tertiles under a normal distribution.
inline constexpr double kTertileCut = 0.4307;

BinThresholds compute_bins(std::span<const FeatureVector5> features, double cut = kTertileCut);
bool filter_high_expressivity(const FeatureVector5& fv, const BinThresholds& bins);

// ---- annotation ------------------------------------------------------------------

// Label kept only when both annotators agree.
std::optional<int> annotate_intersect(int label_a, int label_b);

// Row k: distribution of the annotator's label when the true style is k.
using ConfusionMatrix = std::array<std::array<double, kNumStyles>, kNumStyles>;
ConfusionMatrix symmetric_confusion(double accuracy);
int simulate_annotator(int true_label, const ConfusionMatrix& confusion, std::mt19937_64& rng);

// Exact P(true label | both annotators agree on it) under a class prior and two
// independent confusion models, by enumeration over (true, label) pairs.
double intersection_purity(std::span<const double> prior, const ConfusionMatrix& a, const ConfusionMatrix& b);

// Reviewer confidence scores in [1,10]; kept iff their mean is strictly above 5.
bool curate_test(int score_1, int score_2);

// ---- synthetic expressive speech ---------------------------------------------------

struct VoiceParams {
    double syllable_rate = 4.0;  // Hz of the amplitude envelope
    double level = 0.3;          // carrier amplitude
    double depth = 0.6;          // envelope modulation depth in (0,1)
    double f0 = 140.0;           // Hz
    double vibrato = 8.0;        // Hz deviation of f0 (5 Hz vibrato)
    double phase = 0.0;          // envelope phase, radians
};

// Harmonic tone with sinusoidal amplitude envelope and f0 vibrato.
Waveform synthesize_voice(const VoiceParams& params, double seconds, int sample_rate = 16000);

struct FixtureSpec {
    std::size_t count = 100;
    double planted_fraction = 0.2;
    double planted_shift = 1.5;   // in population sigmas, applied to every parameter
    double planted_jitter = 0.25; // planted-sample spread, in population sigmas
    double seconds = 4.0;
    std::uint64_t seed = 11;
};

struct Fixture {
    std::string name;
    VoiceParams params;
    bool planted = false;
    int style = 0;
};

// Population of voices; the first round(count * planted_fraction) after shuffling are planted.
std::vector<Fixture> make_fixtures(const FixtureSpec& spec);

// ---- curation pipeline -------------------------------------------------------------

struct CurationInput {
    std::string name;
    FeatureVector5 features;
    int true_style = 0;
};

struct CurationResult {
    BinThresholds bins;
    std::size_t n_input = 0;
    std::size_t n_high = 0;
    std::size_t n_agreed = 0;
    std::vector<std::size_t> high_indices;
    std::vector<std::pair<std::size_t, int>> retained;  // (input index, agreed label)
};

// feature filter -> two simulated annotators -> intersection
CurationResult run_curation(std::span<const CurationInput> inputs, const ConfusionMatrix& annotator_a,
                            const ConfusionMatrix& annotator_b, std::uint64_t seed, double cut = kTertileCut);

}  // namespace spdp
