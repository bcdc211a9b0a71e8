#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "spdp/tensor.hpp"
#include "spdp/vocab.hpp"

namespace spdp {

struct FusionConfig {
    double a = 0.3;      // serial weight at inference
    double b = 0.7;      // parallel weight at inference
    double alpha = 1.0;  // serial loss weight
    double beta = 0.5;   // parallel loss weight

    void validate() const;
};

// Probability vector over the eight styles.
struct StyleDistribution {
    std::array<double, kNumStyles> probs{};

    static StyleDistribution uniform();
    static StyleDistribution one_hot(std::size_t index);
    // Normalises; throws when the values are negative or sum to zero.
    static StyleDistribution from(std::span<const double> values);
    // Argmax with ties broken by the lowest index.
    std::size_t argmax() const;
    double sum() const;
};

// alpha * L_serial + beta * L_parallel
Tensor total_loss(const Tensor& serial_loss, const Tensor& parallel_loss, const FusionConfig& config);
double total_loss(double serial_loss, double parallel_loss, const FusionConfig& config);

struct SerialStyleResult {
    StyleDistribution dist;
    bool zero_mass_fallback = false;
};

// p_k = P_nt[first_token_k] / sum_j P_nt[first_token_j]
SerialStyleResult serial_style_distribution(std::span<const double> next_token_probs, const StyleMap& style_map);

struct FusedResult {
    StyleDistribution dist;
    std::size_t index = 0;
};

// (a p + b q) / (a + b), then argmax.
FusedResult fuse(const StyleDistribution& p, const StyleDistribution& q, const FusionConfig& config);

}  // namespace spdp
