#pragma once

#include <span>
#include <string>
#include <vector>

#include "spdp/nn.hpp"

namespace spdp {

// Acoustic-Linguistic Similarity Module: the parallel path.
//
//   h_a    = LN(GELU(Proj(emb_a)))                      [B,T,D]
//   h_t    = LN(GELU(Proj(emb_t)))                      [B,S,D]
//   h_t_al = softmax(h_a h_t^T / sqrt(D)) h_t           [B,T,D]
//   s_i    = cos(Proj_a^i(h_a), Proj_t^i(h_t_al))       [B,T]   i = 1..N
//   h_ref  = tanh(Proj_r(h_t_al))                       [B,T,ref]
//   h_cm   = [s_1 | ... | s_N | h_ref]                  [B,T,N+ref]
//   log p  = LogSoftmax(W mean_T(Transformer^3(h_cm)))  [B,8]
struct AlsmConfig {
    std::size_t emb_a_dim = 96;
    std::size_t emb_t_dim = 64;
    std::size_t d_shared = 64;
    std::size_t n_subspaces = 8;
    std::size_t ref_dim = 32;
    std::size_t n_classes = 8;
    std::size_t classifier_layers = 3;
    std::size_t classifier_heads = 4;
    std::size_t classifier_ffn_mult = 4;
    double eps_norm = 1e-8;
    bool positional_encoding = true;

    std::size_t classifier_dim() const { return n_subspaces + ref_dim; }
    void validate() const;
};

struct AlsmParams {
    nn::Linear proj_a;
    nn::LayerNorm ln_a;
    nn::Linear proj_t;
    nn::LayerNorm ln_t;
    std::vector<nn::Linear> sub_a;  // N maps D -> D
    std::vector<nn::Linear> sub_t;  // N maps D -> D
    nn::Linear proj_ref;
    std::vector<nn::TransformerLayer> classifier;
    nn::LayerNorm classifier_ln;
    nn::Linear head;

    static AlsmParams create(ParamStore& store, const AlsmConfig& config, const std::string& prefix = "alsm");
};

struct AlsmOutput {
    Tensor log_probs;          // [B, n_classes]
    Tensor h_cm;               // [B, T, N + ref]
    Tensor attention_weights;  // [B, T, S]
    Tensor h_a;                // [B, T, D]
    Tensor h_t;                // [B, S, D]
    Tensor h_t_al;             // [B, T, D]
    Tensor similarities;       // [B, T, N]
};

// Per-item validity masks, row-major [B, T] and [B, S].
struct AlsmMasks {
    std::span<const unsigned char> frames;
    std::span<const unsigned char> text;
};

class Alsm {
 public:
    Alsm(ParamStore& store, AlsmConfig config, const std::string& prefix = "alsm");

    const AlsmConfig& config() const { return config_; }
    const AlsmParams& params() const { return params_; }

    std::pair<Tensor, Tensor> project_bimodal(const Tensor& emb_a, const Tensor& emb_t) const;
    // Returns (h_t_al, attention weights).
    std::pair<Tensor, Tensor> align(const Tensor& h_a, const Tensor& h_t, std::span<const unsigned char> text_mask) const;
    Tensor subspace_similarities(const Tensor& h_a, const Tensor& h_t_al) const;
    Tensor build_representation(const Tensor& similarities, const Tensor& h_t_al) const;
    Tensor classify(const Tensor& h_cm, std::span<const unsigned char> frame_mask) const;

    AlsmOutput forward(const Tensor& emb_a, const Tensor& emb_t, const AlsmMasks& masks) const;
    // Class-level negative log-likelihood of gold labels.
    Tensor loss(const AlsmOutput& out, std::span<const long> labels) const;

 private:
    AlsmConfig config_;
    AlsmParams params_;
};

}  // namespace spdp
