#include "spdp/alsm.hpp"

#include <cmath>
#include <limits>
#include <tuple>

namespace spdp {

void AlsmConfig::validate() const {
    require(emb_a_dim >= 1 && emb_t_dim >= 1, "alsm: embedding dims must be >= 1", ErrorKind::Usage);
    require(d_shared >= 1 && n_subspaces >= 1 && ref_dim >= 1 && n_classes >= 1,
            "alsm: d_shared, n_subspaces, ref_dim, n_classes must be >= 1", ErrorKind::Usage);
    require(classifier_layers >= 1 && classifier_heads >= 1 && classifier_ffn_mult >= 1,
            "alsm: classifier layers/heads/ffn_mult must be positive", ErrorKind::Usage);
    require(classifier_dim() % classifier_heads == 0,
            "alsm: classifier dim " + std::to_string(classifier_dim()) + " not divisible by heads", ErrorKind::Usage);
    require(eps_norm > 0.0, "alsm: eps_norm must be positive", ErrorKind::Usage);
}

AlsmParams AlsmParams::create(ParamStore& store, const AlsmConfig& c, const std::string& prefix) {
    c.validate();
    AlsmParams p;
    p.proj_a = nn::Linear::create(store, prefix + ".proj_a", c.emb_a_dim, c.d_shared);
    p.ln_a = nn::LayerNorm::create(store, prefix + ".ln_a", c.d_shared);
    p.proj_t = nn::Linear::create(store, prefix + ".proj_t", c.emb_t_dim, c.d_shared);
    p.ln_t = nn::LayerNorm::create(store, prefix + ".ln_t", c.d_shared);
    for (std::size_t i = 0; i < c.n_subspaces; ++i) {
        p.sub_a.push_back(nn::Linear::create(store, prefix + ".sub_a." + std::to_string(i), c.d_shared, c.d_shared));
        p.sub_t.push_back(nn::Linear::create(store, prefix + ".sub_t." + std::to_string(i), c.d_shared, c.d_shared));
    }
    p.proj_ref = nn::Linear::create(store, prefix + ".proj_ref", c.d_shared, c.ref_dim);
    const std::size_t F = c.classifier_dim();
    for (std::size_t l = 0; l < c.classifier_layers; ++l)
        p.classifier.push_back(nn::TransformerLayer::create(store, prefix + ".cls." + std::to_string(l), F,
                                                            c.classifier_heads, c.classifier_ffn_mult));
    p.classifier_ln = nn::LayerNorm::create(store, prefix + ".cls_ln", F);
    p.head = nn::Linear::create(store, prefix + ".head", F, c.n_classes);
    return p;
}

Alsm::Alsm(ParamStore& store, AlsmConfig config, const std::string& prefix)
    : config_(config), params_(AlsmParams::create(store, config_, prefix)) {}

std::pair<Tensor, Tensor> Alsm::project_bimodal(const Tensor& emb_a, const Tensor& emb_t) const {
    require(emb_a.rank() == 3 && emb_a.dim(2) == config_.emb_a_dim,
            "alsm: emb_a must be [B,T," + std::to_string(config_.emb_a_dim) + "], got " + shape_str(emb_a.shape()));
    require(emb_t.rank() == 3 && emb_t.dim(2) == config_.emb_t_dim,
            "alsm: emb_t must be [B,S," + std::to_string(config_.emb_t_dim) + "], got " + shape_str(emb_t.shape()));
    require(emb_a.dim(0) == emb_t.dim(0), "alsm: batch mismatch between emb_a and emb_t");
    const auto& p = params_;
    Tensor h_a = p.ln_a(ops::gelu(p.proj_a(emb_a)));
    Tensor h_t = p.ln_t(ops::gelu(p.proj_t(emb_t)));
    return {h_a, h_t};
}

std::pair<Tensor, Tensor> Alsm::align(const Tensor& h_a, const Tensor& h_t, std::span<const unsigned char> text_mask) const {
    const std::size_t B = h_a.dim(0), T = h_a.dim(1), S = h_t.dim(1);
    require(text_mask.size() == B * S, "alsm: text mask size mismatch");
    std::vector<double> additive(B * T * S, 0.0);
    for (std::size_t b = 0; b < B; ++b) {
        bool any = false;
        for (std::size_t s = 0; s < S; ++s) any = any || text_mask[b * S + s];
        if (!any) fail(ErrorKind::Data, "empty transcript");
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t s = 0; s < S; ++s)
                if (!text_mask[b * S + s]) additive[(b * T + t) * S + s] = -std::numeric_limits<double>::infinity();
    }
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(config_.d_shared));
    Tensor weights = ops::softmax(ops::scale(ops::bmm(h_a, h_t, true), inv_sqrt_d), -1, additive);
    return {ops::bmm(weights, h_t), weights};
}

Tensor Alsm::subspace_similarities(const Tensor& h_a, const Tensor& h_t_al) const {
    const std::size_t B = h_a.dim(0), T = h_a.dim(1), D = config_.d_shared, N = config_.n_subspaces;
    std::vector<Tensor> wa, ba, wt, bt;
    for (std::size_t i = 0; i < N; ++i) {
        wa.push_back(params_.sub_a[i].weight);
        ba.push_back(params_.sub_a[i].bias);
        wt.push_back(params_.sub_t[i].weight);
        bt.push_back(params_.sub_t[i].bias);
    }
    // All N projections as one [D, N*D] map; column block i is subspace i.
    const Tensor pa = ops::linear(h_a, ops::concat(wa, 1), ops::concat(ba, 0));
    const Tensor pt = ops::linear(h_t_al, ops::concat(wt, 1), ops::concat(bt, 0));
    return ops::cosine_sim(ops::reshape(pa, {B, T, N, D}), ops::reshape(pt, {B, T, N, D}), -1, config_.eps_norm);
}

Tensor Alsm::build_representation(const Tensor& similarities, const Tensor& h_t_al) const {
    const Tensor ref = ops::tanh(params_.proj_ref(h_t_al));
    return ops::concat({similarities, ref}, -1);
}

Tensor Alsm::classify(const Tensor& h_cm, std::span<const unsigned char> frame_mask) const {
    require(h_cm.rank() == 3 && h_cm.dim(2) == config_.classifier_dim(),
            "alsm: classifier input must have " + std::to_string(config_.classifier_dim()) + " features");
    const std::size_t B = h_cm.dim(0), T = h_cm.dim(1);
    require(frame_mask.size() == B * T, "alsm: frame mask size mismatch");
    for (std::size_t b = 0; b < B; ++b) {
        bool any = false;
        for (std::size_t t = 0; t < T; ++t) any = any || frame_mask[b * T + t];
        if (!any) fail(ErrorKind::Data, "alsm: zero valid frames in batch item " + std::to_string(b));
    }
    const auto mask = nn::AttentionMask::from_valid(frame_mask, B, T);
    // Padded frames are zeroed so their contents cannot leak through any path.
    Tensor x = ops::mask_rows(h_cm, frame_mask);
    if (config_.positional_encoding) x = nn::add_positions(x);
    for (const auto& layer : params_.classifier) x = layer(x, mask);
    x = params_.classifier_ln(x);
    return ops::log_softmax(params_.head(ops::masked_mean(x, frame_mask)), -1);
}

AlsmOutput Alsm::forward(const Tensor& emb_a, const Tensor& emb_t, const AlsmMasks& masks) const {
    AlsmOutput out;
    std::tie(out.h_a, out.h_t) = project_bimodal(emb_a, emb_t);
    std::tie(out.h_t_al, out.attention_weights) = align(out.h_a, out.h_t, masks.text);
    out.similarities = subspace_similarities(out.h_a, out.h_t_al);
    out.h_cm = build_representation(out.similarities, out.h_t_al);
    out.log_probs = classify(out.h_cm, masks.frames);
    return out;
}

Tensor Alsm::loss(const AlsmOutput& out, std::span<const long> labels) const {
    return ops::nll_loss(out.log_probs, labels);
}

}  // namespace spdp
