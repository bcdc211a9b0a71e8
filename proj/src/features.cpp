#include "spdp/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>

#include "spdp/error.hpp"

namespace spdp {

namespace {

template <typename T>
void put(std::ofstream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(const std::vector<char>& buf, std::size_t at) {
    T v;
    std::memcpy(&v, buf.data() + at, sizeof v);
    return v;
}

double mean_of(std::span<const double> v) {
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double std_of(std::span<const double> v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size()));
}

std::vector<double> frame_rms(std::span<const double> x, std::size_t win, std::size_t hop) {
    std::vector<double> out;
    for (std::size_t start = 0; start + win <= x.size(); start += hop) {
        double s = 0.0;
        for (std::size_t i = start; i < start + win; ++i) s += x[i] * x[i];
        out.push_back(std::sqrt(s / static_cast<double>(win)));
    }
    return out;
}

// Peaks above `threshold` with prominence >= `prominence`; the tallest wins within `distance` frames.
std::size_t count_peaks(const std::vector<double>& env, double threshold, double prominence, std::size_t distance) {
    std::vector<std::size_t> cand;
    for (std::size_t i = 1; i + 1 < env.size(); ++i) {
        if (env[i] <= threshold || env[i] <= env[i - 1]) continue;
        std::size_t j = i;
        while (j + 1 < env.size() && env[j + 1] == env[i]) ++j;  // plateau
        if (j + 1 >= env.size() || env[j + 1] > env[i]) continue;
        // Prominence: height above the higher of the two minima reached before a taller sample.
        double left_min = env[i];
        for (std::size_t k = i; k-- > 0;) {
            if (env[k] > env[i]) break;
            left_min = std::min(left_min, env[k]);
        }
        double right_min = env[i];
        for (std::size_t k = j + 1; k < env.size(); ++k) {
            if (env[k] > env[i]) break;
            right_min = std::min(right_min, env[k]);
        }
        if (env[i] - std::max(left_min, right_min) >= prominence) cand.push_back(i);
        i = j;
    }
    std::vector<std::size_t> order(cand.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return env[cand[a]] > env[cand[b]]; });
    std::vector<bool> removed(cand.size(), false);
    std::size_t kept = 0;
    for (std::size_t o : order) {
        if (removed[o]) continue;
        ++kept;
        for (std::size_t k = 0; k < cand.size(); ++k) {
            const std::size_t gap = cand[k] > cand[o] ? cand[k] - cand[o] : cand[o] - cand[k];
            if (k != o && gap < distance) removed[k] = true;
        }
    }
    return kept;
}

double sample_normal(std::mt19937_64& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }

}  // namespace

void write_wav(const std::filesystem::path& path, const Waveform& wave) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), "cannot write " + path.string());
    const auto n = static_cast<std::uint32_t>(wave.samples.size());
    const auto rate = static_cast<std::uint32_t>(wave.sample_rate);
    out.write("RIFF", 4);
    put<std::uint32_t>(out, 36 + 2 * n);
    out.write("WAVEfmt ", 8);
    put<std::uint32_t>(out, 16);
    put<std::uint16_t>(out, 1);  // PCM
    put<std::uint16_t>(out, 1);  // mono
    put<std::uint32_t>(out, rate);
    put<std::uint32_t>(out, rate * 2);
    put<std::uint16_t>(out, 2);
    put<std::uint16_t>(out, 16);
    out.write("data", 4);
    put<std::uint32_t>(out, 2 * n);
    for (double s : wave.samples) {
        const double c = std::clamp(s, -1.0, 1.0);
        put<std::int16_t>(out, static_cast<std::int16_t>(std::lround(c * 32767.0)));
    }
    require(static_cast<bool>(out), "short write to " + path.string());
}

Waveform read_wav(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), "cannot open " + path.string());
    std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    require(buf.size() >= 12 && std::memcmp(buf.data(), "RIFF", 4) == 0 && std::memcmp(buf.data() + 8, "WAVE", 4) == 0,
            "not a RIFF/WAVE file: " + path.string());
    Waveform w;
    bool have_fmt = false;
    std::size_t pos = 12;
    while (pos + 8 <= buf.size()) {
        const std::string id(buf.data() + pos, 4);
        const auto size = get<std::uint32_t>(buf, pos + 4);
        const std::size_t body = pos + 8;
        require(body + size <= buf.size(), "truncated chunk in " + path.string());
        if (id == "fmt ") {
            require(size >= 16, "bad fmt chunk in " + path.string());
            const auto format = get<std::uint16_t>(buf, body);
            const auto channels = get<std::uint16_t>(buf, body + 2);
            const auto bits = get<std::uint16_t>(buf, body + 14);
            require(format == 1 && channels == 1 && bits == 16, "only 16-bit mono PCM is supported: " + path.string());
            w.sample_rate = static_cast<int>(get<std::uint32_t>(buf, body + 4));
            have_fmt = true;
        } else if (id == "data") {
            require(have_fmt, "data chunk before fmt in " + path.string());
            w.samples.resize(size / 2);
            for (std::size_t i = 0; i < w.samples.size(); ++i)
                w.samples[i] = static_cast<double>(get<std::int16_t>(buf, body + 2 * i)) / 32767.0;
            return w;
        }
        pos = body + size + (size & 1u);
    }
    fail(ErrorKind::Data, "no data chunk in " + path.string());
}

const std::array<std::string, FeatureVector5::kCount>& feature_names() {
    static const std::array<std::string, FeatureVector5::kCount> names = {"speaking_rate", "energy_mean", "energy_std",
                                                                           "pitch_mean", "pitch_std"};
    return names;
}

std::optional<double> frame_pitch(std::span<const double> frame, int sample_rate, double min_hz, double max_hz) {
    const auto lag_lo = static_cast<std::size_t>(std::floor(sample_rate / max_hz));
    const auto lag_hi = std::min(static_cast<std::size_t>(std::ceil(sample_rate / min_hz)), frame.size() / 2);
    if (lag_lo < 1 || lag_hi <= lag_lo + 1) return std::nullopt;
    // Normalized autocorrelation, one extra lag on both sides for the interpolation.
    std::vector<double> r(lag_hi + 2, 0.0);
    for (std::size_t lag = lag_lo - 1; lag <= lag_hi + 1 && lag < frame.size(); ++lag) {
        double xy = 0.0, xx = 0.0, yy = 0.0;
        for (std::size_t n = 0; n + lag < frame.size(); ++n) {
            xy += frame[n] * frame[n + lag];
            xx += frame[n] * frame[n];
            yy += frame[n + lag] * frame[n + lag];
        }
        r[lag] = xx > 0.0 && yy > 0.0 ? xy / std::sqrt(xx * yy) : 0.0;
    }
    double best = 0.0;
    for (std::size_t lag = lag_lo; lag <= lag_hi; ++lag) best = std::max(best, r[lag]);
    if (best <= 0.0) return std::nullopt;
    for (std::size_t lag = lag_lo; lag <= lag_hi; ++lag) {
        if (r[lag] < 0.85 * best || r[lag] < r[lag - 1] || r[lag] < r[lag + 1]) continue;
        const double a = r[lag - 1], b = r[lag], c = r[lag + 1];
        const double denom = a - 2.0 * b + c;
        const double shift = denom != 0.0 ? std::clamp(0.5 * (a - c) / denom, -0.5, 0.5) : 0.0;
        return sample_rate / (static_cast<double>(lag) + shift);
    }
    return std::nullopt;
}

FeatureResult extract_features5(std::span<const double> samples, int sample_rate, const FeatureOptions& o) {
    require(sample_rate > 0, "sample rate must be positive");
    const auto win = static_cast<std::size_t>(std::lround(o.window_s * sample_rate));
    const auto hop = static_cast<std::size_t>(std::lround(o.hop_s * sample_rate));
    require(win >= 1 && hop >= 1 && samples.size() >= win, "waveform shorter than one analysis window");

    FeatureResult res;
    const std::vector<double> rms = frame_rms(samples, win, hop);
    res.features.energy_mean = mean_of(rms);
    res.features.energy_std = std_of(rms);

    const double peak = *std::max_element(rms.begin(), rms.end());
    std::vector<double> pitches;
    if (peak > 0.0) {
        for (std::size_t f = 0; f < rms.size(); ++f) {
            if (rms[f] <= o.voicing_gate * peak) continue;
            if (auto p = frame_pitch(samples.subspan(f * hop, win), sample_rate, o.pitch_min_hz, o.pitch_max_hz)) pitches.push_back(*p);
        }
        const auto distance = static_cast<std::size_t>(std::ceil(o.peak_separation_s / o.hop_s - 1e-9));
        const std::size_t n = count_peaks(rms, o.peak_threshold * peak, o.peak_prominence * peak, distance);
        res.features.speaking_rate = static_cast<double>(n) / (static_cast<double>(samples.size()) / sample_rate);
    }
    if (pitches.empty()) {
        res.unvoiced = true;
    } else {
        res.features.pitch_mean = mean_of(pitches);
        res.features.pitch_std = std_of(pitches);
    }
    return res;
}

Bin BinThresholds::classify(std::size_t feature, double value) const {
    require(feature < FeatureVector5::kCount, "feature index out of range");
    if (value <= low_cut[feature]) return Bin::Low;
    if (value <= high_cut[feature]) return Bin::Medium;
    return Bin::High;
}

BinThresholds compute_bins(std::span<const FeatureVector5> features, double cut) {
    require(features.size() >= 2, "binning needs at least two samples");
    BinThresholds b;
    std::vector<double> column(features.size());
    for (std::size_t f = 0; f < FeatureVector5::kCount; ++f) {
        for (std::size_t i = 0; i < features.size(); ++i) column[i] = features[i].values()[f];
        const double mu = mean_of(column);
        const double sigma = std_of(column);
        require(sigma > 0.0 && std::isfinite(sigma), "degenerate feature: " + feature_names()[f]);
        b.low_cut[f] = mu - cut * sigma;
        b.high_cut[f] = mu + cut * sigma;
    }
    return b;
}

bool filter_high_expressivity(const FeatureVector5& fv, const BinThresholds& bins) {
    const auto v = fv.values();
    for (std::size_t f = 0; f < FeatureVector5::kCount; ++f)
        if (bins.classify(f, v[f]) != Bin::High) return false;
    return true;
}

std::optional<int> annotate_intersect(int label_a, int label_b) {
    require(label_a >= 0 && label_a < static_cast<int>(kNumStyles) && label_b >= 0 && label_b < static_cast<int>(kNumStyles),
            "annotator label out of range");
    if (label_a != label_b) return std::nullopt;
    return label_a;
}

ConfusionMatrix symmetric_confusion(double accuracy) {
    require(accuracy >= 0.0 && accuracy <= 1.0, "annotator accuracy must lie in [0,1]", ErrorKind::Usage);
    ConfusionMatrix m{};
    const double off = (1.0 - accuracy) / static_cast<double>(kNumStyles - 1);
    for (std::size_t i = 0; i < kNumStyles; ++i)
        for (std::size_t j = 0; j < kNumStyles; ++j) m[i][j] = i == j ? accuracy : off;
    return m;
}

int simulate_annotator(int true_label, const ConfusionMatrix& confusion, std::mt19937_64& rng) {
    const auto& row = confusion.at(static_cast<std::size_t>(true_label));
    std::discrete_distribution<int> pick(row.begin(), row.end());
    return pick(rng);
}

double intersection_purity(std::span<const double> prior, const ConfusionMatrix& a, const ConfusionMatrix& b) {
    require(prior.size() == kNumStyles, "prior needs 8 entries");
    double correct = 0.0, agreed = 0.0;
    for (std::size_t k = 0; k < kNumStyles; ++k)
        for (std::size_t j = 0; j < kNumStyles; ++j) {
            const double m = prior[k] * a[k][j] * b[k][j];
            agreed += m;
            if (j == k) correct += m;
        }
    require(agreed > 0.0, "annotators never agree under this confusion model", ErrorKind::Numeric);
    return correct / agreed;
}

bool curate_test(int score_1, int score_2) {
    require(score_1 >= 1 && score_1 <= 10 && score_2 >= 1 && score_2 <= 10, "reviewer score out of range [1,10]");
    return score_1 + score_2 > 10;  // (s1 + s2) / 2 > 5 without rounding
}

Waveform synthesize_voice(const VoiceParams& p, double seconds, int sample_rate) {
    require(seconds > 0.0 && sample_rate > 0, "synthesis needs positive duration and rate", ErrorKind::Usage);
    Waveform w;
    w.sample_rate = sample_rate;
    const auto n = static_cast<std::size_t>(std::lround(seconds * sample_rate));
    w.samples.resize(n);
    constexpr double two_pi = 2.0 * std::numbers::pi;
    constexpr double vibrato_hz = 5.0;
    double phase = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / sample_rate;
        const double f = p.f0 + p.vibrato * std::sin(two_pi * vibrato_hz * t);
        phase += two_pi * f / sample_rate;
        const double carrier = (std::sin(phase) + 0.5 * std::sin(2.0 * phase) + 0.25 * std::sin(3.0 * phase)) / 1.75;
        const double env = 1.0 + p.depth * std::sin(two_pi * p.syllable_rate * t + p.phase);
        w.samples[i] = p.level * env / (1.0 + p.depth) * carrier;
    }
    return w;
}

std::vector<Fixture> make_fixtures(const FixtureSpec& spec) {
    require(spec.count >= 2, "fixture set needs at least two voices", ErrorKind::Usage);
    require(spec.planted_fraction >= 0.0 && spec.planted_fraction <= 1.0, "planted_fraction must lie in [0,1]", ErrorKind::Usage);
    // Population mean and sigma of each voice parameter.
    struct Dist { double mu, sigma; };
    const Dist rate{4.0, 0.8}, level{0.3, 0.06}, depth{0.5, 0.1}, f0{150.0, 25.0}, vib{8.0, 2.0};
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<int> style(0, static_cast<int>(kNumStyles) - 1);
    const auto n_planted = static_cast<std::size_t>(std::llround(static_cast<double>(spec.count) * spec.planted_fraction));
    std::vector<bool> planted(spec.count, false);
    std::fill(planted.begin(), planted.begin() + static_cast<std::ptrdiff_t>(n_planted), true);
    std::shuffle(planted.begin(), planted.end(), rng);

    std::vector<Fixture> out;
    for (std::size_t i = 0; i < spec.count; ++i) {
        const double shift = planted[i] ? spec.planted_shift : 0.0;
        const double spread = planted[i] ? spec.planted_jitter : 1.0;
        auto draw = [&](Dist d, double lo, double hi) { return std::clamp(d.mu + d.sigma * (shift + spread * sample_normal(rng)), lo, hi); };
        Fixture fx;
        char buf[32];
        std::snprintf(buf, sizeof buf, "voice%04zu", i);
        fx.name = buf;
        fx.planted = planted[i];
        fx.params.syllable_rate = draw(rate, 1.0, 9.0);
        fx.params.level = draw(level, 0.05, 0.6);
        fx.params.depth = draw(depth, 0.1, 0.95);
        fx.params.f0 = draw(f0, 80.0, 320.0);
        fx.params.vibrato = draw(vib, 0.5, 20.0);
        fx.params.phase = 2.0 * std::numbers::pi * unit(rng);
        fx.style = style(rng);
        out.push_back(fx);
    }
    return out;
}

CurationResult run_curation(std::span<const CurationInput> inputs, const ConfusionMatrix& annotator_a,
                            const ConfusionMatrix& annotator_b, std::uint64_t seed, double cut) {
    CurationResult r;
    r.n_input = inputs.size();
    std::vector<FeatureVector5> pool;
    for (const auto& in : inputs) pool.push_back(in.features);
    r.bins = compute_bins(pool, cut);
    for (std::size_t i = 0; i < inputs.size(); ++i)
        if (filter_high_expressivity(inputs[i].features, r.bins)) r.high_indices.push_back(i);
    r.n_high = r.high_indices.size();
    std::mt19937_64 rng(seed);
    for (std::size_t i : r.high_indices) {
        const int la = simulate_annotator(inputs[i].true_style, annotator_a, rng);
        const int lb = simulate_annotator(inputs[i].true_style, annotator_b, rng);
        if (auto label = annotate_intersect(la, lb)) r.retained.emplace_back(i, *label);
    }
    r.n_agreed = r.retained.size();
    return r;
}

}  // namespace spdp
