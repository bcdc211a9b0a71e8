#include "spdp/fusion.hpp"

#include <cmath>

namespace spdp {

void FusionConfig::validate() const {
    require(a >= 0.0 && b >= 0.0 && a + b > 0.0, "fusion weights need a, b >= 0 and a + b > 0", ErrorKind::Usage);
    require(alpha >= 0.0 && beta >= 0.0, "loss weights alpha, beta must be >= 0", ErrorKind::Usage);
}

StyleDistribution StyleDistribution::uniform() {
    StyleDistribution d;
    d.probs.fill(1.0 / static_cast<double>(kNumStyles));
    return d;
}

StyleDistribution StyleDistribution::one_hot(std::size_t index) {
    require(index < kNumStyles, "style index out of range");
    StyleDistribution d;
    d.probs[index] = 1.0;
    return d;
}

StyleDistribution StyleDistribution::from(std::span<const double> values) {
    require(values.size() == kNumStyles, "style distribution needs 8 values", ErrorKind::Numeric);
    double s = 0.0;
    for (double v : values) {
        require(std::isfinite(v) && v >= 0.0, "style distribution values must be finite and nonnegative", ErrorKind::Numeric);
        s += v;
    }
    require(s > 0.0, "style distribution has zero mass", ErrorKind::Numeric);
    StyleDistribution d;
    for (std::size_t i = 0; i < kNumStyles; ++i) d.probs[i] = values[i] / s;
    return d;
}

std::size_t StyleDistribution::argmax() const {
    std::size_t best = 0;
    for (std::size_t i = 1; i < kNumStyles; ++i)
        if (probs[i] > probs[best]) best = i;
    return best;
}

double StyleDistribution::sum() const {
    double s = 0.0;
    for (double v : probs) s += v;
    return s;
}

Tensor total_loss(const Tensor& serial_loss, const Tensor& parallel_loss, const FusionConfig& config) {
    require(std::isfinite(serial_loss.item()) && std::isfinite(parallel_loss.item()), "total_loss: NaN input", ErrorKind::Numeric);
    return ops::add(ops::scale(serial_loss, config.alpha), ops::scale(parallel_loss, config.beta));
}

double total_loss(double serial_loss, double parallel_loss, const FusionConfig& config) {
    require(std::isfinite(serial_loss) && std::isfinite(parallel_loss), "total_loss: NaN input", ErrorKind::Numeric);
    return config.alpha * serial_loss + config.beta * parallel_loss;
}

SerialStyleResult serial_style_distribution(std::span<const double> next_token_probs, const StyleMap& style_map) {
    SerialStyleResult r;
    std::array<double, kNumStyles> picked{};
    double mass = 0.0;
    for (std::size_t k = 0; k < kNumStyles; ++k) {
        const long id = style_map[k].first_token;
        require(id >= 0 && static_cast<std::size_t>(id) < next_token_probs.size(), "style first token outside P_nt");
        picked[k] = next_token_probs[static_cast<std::size_t>(id)];
        mass += picked[k];
    }
    if (!(mass >= 1e-12)) {
        r.dist = StyleDistribution::uniform();
        r.zero_mass_fallback = true;
        return r;
    }
    for (std::size_t k = 0; k < kNumStyles; ++k) r.dist.probs[k] = picked[k] / mass;
    return r;
}

FusedResult fuse(const StyleDistribution& p, const StyleDistribution& q, const FusionConfig& config) {
    config.validate();
    FusedResult r;
    const double norm = config.a + config.b;
    for (std::size_t k = 0; k < kNumStyles; ++k) r.dist.probs[k] = (config.a * p.probs[k] + config.b * q.probs[k]) / norm;
    r.index = r.dist.argmax();
    return r;
}

}  // namespace spdp
