#pragma once

#include <string>
#include <vector>

#include "spdp/params.hpp"
#include "spdp/tensor.hpp"

namespace spdp::nn {

struct Linear {
    Tensor weight;  // [in, out]
    Tensor bias;    // [out]

    static Linear create(ParamStore& store, const std::string& name, std::size_t in, std::size_t out);
    Tensor operator()(const Tensor& x) const { return ops::linear(x, weight, bias); }
    std::size_t in_features() const { return weight.shape()[0]; }
    std::size_t out_features() const { return weight.shape()[1]; }
};

struct LayerNorm {
    Tensor gamma;
    Tensor beta;
    double eps = 1e-5;

    static LayerNorm create(ParamStore& store, const std::string& name, std::size_t features);
    Tensor operator()(const Tensor& x) const { return ops::layer_norm(x, gamma, beta, eps); }
};

// keep[b, i, j] != 0 iff query i of item b may attend to key j.
struct AttentionMask {
    std::size_t batch = 0, queries = 0, keys = 0;
    std::vector<unsigned char> keep;

    // Every valid query sees every valid key; padded queries see the valid keys too
    // (their outputs are discarded downstream).
    static AttentionMask from_valid(std::span<const unsigned char> valid, std::size_t batch, std::size_t length);
    bool allowed(std::size_t b, std::size_t i, std::size_t j) const { return keep[(b * queries + i) * keys + j] != 0; }
};

// Pre-norm Transformer encoder layer: x + MHA(LN(x)), then x + FFN(LN(x)).
struct TransformerLayer {
    LayerNorm ln_attn;
    Linear q, k, v, o;
    LayerNorm ln_ffn;
    Linear ffn_in, ffn_out;
    std::size_t heads = 1;

    static TransformerLayer create(ParamStore& store, const std::string& name, std::size_t dim,
                                   std::size_t heads, std::size_t ffn_mult);
    Tensor operator()(const Tensor& x, const AttentionMask& mask) const;
    // Attention block only; exposed for tests.
    Tensor attend(const Tensor& x, const AttentionMask& mask) const;
};

// Sinusoidal encoding rows for the given positions: [positions.size(), dim].
std::vector<double> sinusoidal(std::span<const std::size_t> positions, std::size_t dim);
// Adds sinusoidal positions 0..T-1 to x[B,T,D].
Tensor add_positions(const Tensor& x);

}  // namespace spdp::nn
