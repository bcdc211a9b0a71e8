#include "spdp/nn.hpp"

#include <cmath>
#include <limits>

namespace spdp::nn {

Linear Linear::create(ParamStore& store, const std::string& name, std::size_t in, std::size_t out) {
    Linear l;
    l.weight = store.uniform(name + ".weight", {in, out}, in);
    l.bias = store.constant(name + ".bias", {out}, 0.0);
    return l;
}

LayerNorm LayerNorm::create(ParamStore& store, const std::string& name, std::size_t features) {
    LayerNorm ln;
    ln.gamma = store.constant(name + ".gamma", {features}, 1.0);
    ln.beta = store.constant(name + ".beta", {features}, 0.0);
    return ln;
}

AttentionMask AttentionMask::from_valid(std::span<const unsigned char> valid, std::size_t batch, std::size_t length) {
    require(valid.size() == batch * length, "attention mask: valid size mismatch");
    AttentionMask m;
    m.batch = batch;
    m.queries = m.keys = length;
    m.keep.assign(batch * length * length, 0);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < length; ++i)
            for (std::size_t j = 0; j < length; ++j) m.keep[(b * length + i) * length + j] = valid[b * length + j];
    return m;
}

TransformerLayer TransformerLayer::create(ParamStore& store, const std::string& name, std::size_t dim,
                                          std::size_t heads, std::size_t ffn_mult) {
    require(heads >= 1 && dim % heads == 0,
            name + ": dim " + std::to_string(dim) + " not divisible by " + std::to_string(heads) + " heads", ErrorKind::Usage);
    TransformerLayer t;
    t.heads = heads;
    t.ln_attn = LayerNorm::create(store, name + ".ln_attn", dim);
    t.q = Linear::create(store, name + ".q", dim, dim);
    t.k = Linear::create(store, name + ".k", dim, dim);
    t.v = Linear::create(store, name + ".v", dim, dim);
    t.o = Linear::create(store, name + ".o", dim, dim);
    t.ln_ffn = LayerNorm::create(store, name + ".ln_ffn", dim);
    t.ffn_in = Linear::create(store, name + ".ffn_in", dim, dim * ffn_mult);
    t.ffn_out = Linear::create(store, name + ".ffn_out", dim * ffn_mult, dim);
    return t;
}

Tensor TransformerLayer::attend(const Tensor& x, const AttentionMask& mask) const {
    const std::size_t B = x.dim(0), L = x.dim(1), D = x.dim(2);
    const std::size_t H = heads, dh = D / H;
    require(mask.batch == B && mask.queries == L && mask.keys == L, "attention mask shape mismatch");
    auto split = [&](const Tensor& t) { return ops::permute(ops::reshape(t, {B, L, H, dh}), {0, 2, 1, 3}); };
    const Tensor qh = split(q(x));
    const Tensor kh = split(k(x));
    const Tensor vh = split(v(x));
    const Tensor scores = ops::scale(ops::bmm(qh, kh, true), 1.0 / std::sqrt(static_cast<double>(dh)));
    std::vector<double> additive(B * H * L * L, 0.0);
    constexpr double neg_inf = -std::numeric_limits<double>::infinity();
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t h = 0; h < H; ++h)
            for (std::size_t i = 0; i < L; ++i)
                for (std::size_t j = 0; j < L; ++j)
                    if (!mask.allowed(b, i, j)) additive[((b * H + h) * L + i) * L + j] = neg_inf;
    const Tensor weights = ops::softmax(scores, -1, additive);
    const Tensor ctx = ops::reshape(ops::permute(ops::bmm(weights, vh), {0, 2, 1, 3}), {B, L, D});
    return o(ctx);
}

Tensor TransformerLayer::operator()(const Tensor& x, const AttentionMask& mask) const {
    const Tensor h = ops::add(x, attend(ln_attn(x), mask));
    return ops::add(h, ffn_out(ops::gelu(ffn_in(ln_ffn(h)))));
}

std::vector<double> sinusoidal(std::span<const std::size_t> positions, std::size_t dim) {
    std::vector<double> pe(positions.size() * dim);
    for (std::size_t p = 0; p < positions.size(); ++p)
        for (std::size_t i = 0; i < dim; ++i) {
            const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
            const double angle = static_cast<double>(positions[p]) * rate;
            pe[p * dim + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    return pe;
}

Tensor add_positions(const Tensor& x) {
    const std::size_t T = x.dim(1), D = x.dim(2);
    std::vector<std::size_t> pos(T);
    for (std::size_t t = 0; t < T; ++t) pos[t] = t;
    return ops::add(x, Tensor::from({T, D}, sinusoidal(pos, D)));
}

}  // namespace spdp::nn
