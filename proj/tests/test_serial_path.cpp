#include <cmath>
#include <random>

#include "doctest.h"

#include "spdp/gradcheck.hpp"
#include "spdp/optim.hpp"
#include "spdp/serial_path.hpp"

using namespace spdp;

namespace {

std::vector<double> randn(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d(0.0, 1.0);
    std::vector<double> v(n);
    for (auto& x : v) x = d(rng);
    return v;
}

SerialConfig small_config() {
    SerialConfig c;
    c.feat_dim = 4;
    c.enc_dim = 8;
    c.enc_layers = 3;
    c.enc_heads = 2;
    c.adaptor_dim = 8;
    c.adaptor_layers = 1;
    c.dec_dim = 8;
    c.dec_layers = 1;
    c.dec_heads = 2;
    c.ffn_mult = 2;
    c.vocab_size = 20;
    c.max_decode_len = 16;
    return c;
}

std::vector<unsigned char> prefix_mask(std::size_t total, std::size_t valid) {
    std::vector<unsigned char> m(total, 0);
    std::fill(m.begin(), m.begin() + static_cast<long>(valid), 1);
    return m;
}

// rows [0, n) of x[0] compared with rows [0, n) of y[0]
double max_row_diff(const Tensor& x, const Tensor& y, std::size_t n) {
    const std::size_t w = x.dim(-1);
    double m = 0.0;
    for (std::size_t i = 0; i < n * w; ++i) m = std::max(m, std::abs(x.data()[i] - y.data()[i]));
    return m;
}

}  // namespace

TEST_CASE("encoder and adaptor shapes") {
    ParamStore store(1);
    SerialConfig c = small_config();
    c.adaptor_downsample = 2;
    const SerialPath sp(store, c);
    const Encoded e = sp.encode(Tensor::from({1, 10, 4}, randn(40, 1)), prefix_mask(10, 10));
    CHECK(e.enc_last.shape() == Shape{1, 5, 8});
    CHECK(e.emb_a.shape() == Shape{1, 5, 3 * 8});
    CHECK(c.emb_a_dim() == 24);
    const Adapted a = sp.adapt(e.enc_last, e.mask);
    CHECK(a.prefix.shape() == Shape{1, 3, 8});  // ceil(5 / 2)
    CHECK(a.mask.size() == 3);
}

TEST_CASE("padded trailing frames do not reach valid outputs") {
    ParamStore store(2);
    const SerialPath sp(store, small_config());
    auto v = randn(40, 2);
    const auto mask = prefix_mask(10, 6);
    const Encoded e1 = sp.encode(Tensor::from({1, 10, 4}, v), mask);
    for (std::size_t i = 24; i < 40; ++i) v[i] = 50.0 * (static_cast<double>(i % 3) - 1.0);
    const Encoded e2 = sp.encode(Tensor::from({1, 10, 4}, v), mask);
    const Encoded e3 = sp.encode(Tensor::from({1, 6, 4}, std::vector<double>(v.begin(), v.begin() + 24)), prefix_mask(6, 6));
    CHECK(max_row_diff(e1.enc_last, e2.enc_last, 3) < 1e-9);
    CHECK(max_row_diff(e1.emb_a, e2.emb_a, 3) < 1e-9);
    CHECK(max_row_diff(e1.enc_last, e3.enc_last, 3) < 1e-9);
    const Adapted a1 = sp.adapt(e1.enc_last, e1.mask), a3 = sp.adapt(e3.enc_last, e3.mask);
    CHECK(max_row_diff(a1.prefix, a3.prefix, 3) < 1e-9);
}

TEST_CASE("decoder is causal over text positions") {
    ParamStore store(3);
    const SerialPath sp(store, small_config());
    const Encoded e = sp.encode(Tensor::from({1, 6, 4}, randn(24, 3)), prefix_mask(6, 6));
    const Adapted a = sp.adapt(e.enc_last, e.mask);
    DecoderLayout l1, l2;
    const Tensor h1 = sp.decoder_hidden(a, {{5, 6}}, {{7, 8, 9}}, l1);
    const Tensor h2 = sp.decoder_hidden(a, {{5, 6}}, {{7, 8, 12}}, l2);
    const std::size_t D = 8, keep = l1.text_slot(0, 2);
    for (std::size_t i = 0; i < keep * D; ++i) CHECK(h1.data()[i] == h2.data()[i]);
    double last = 0.0;
    for (std::size_t i = keep * D; i < (keep + 1) * D; ++i) last = std::max(last, std::abs(h1.data()[i] - h2.data()[i]));
    CHECK(last > 1e-6);
}

TEST_CASE("batch padding does not change an item's text states") {
    ParamStore store(4);
    const SerialPath sp(store, small_config());
    const auto v = randn(2 * 8 * 4, 4);
    const std::vector<unsigned char> mask = {1, 1, 1, 1, 1, 1, 0, 0, 1, 1, 1, 1, 1, 1, 1, 1};
    const Encoded e = sp.encode(Tensor::from({2, 8, 4}, v), mask);
    const Adapted a = sp.adapt(e.enc_last, e.mask);
    const std::vector<long> ta = {7, 8, Vocab::kStyleOpen, 10, Vocab::kStyleClose, Vocab::kEos};
    const std::vector<long> tb = {7, 9, 11, 13, 4, Vocab::kStyleOpen, 10, 14, Vocab::kStyleClose, Vocab::kEos};
    const TeacherForced both = sp.teacher_forced_loss(a, {{5, 6}, {5}}, {ta, tb});

    const Encoded e1 = sp.encode(Tensor::from({1, 6, 4}, std::vector<double>(v.begin(), v.begin() + 24)), prefix_mask(6, 6));
    const TeacherForced alone = sp.teacher_forced_loss(sp.adapt(e1.enc_last, e1.mask), {{5, 6}}, {ta});
    REQUIRE(alone.emb_t.dim(1) == 2);
    CHECK(max_row_diff(both.emb_t, alone.emb_t, 2) < 1e-9);
    CHECK(both.text_mask == std::vector<unsigned char>{1, 1, 0, 0, 0, 1, 1, 1, 1, 1});
}

TEST_CASE("zero output head gives ln|V| loss") {
    ParamStore store(5);
    const SerialPath sp(store, small_config());
    for (auto* t : {&sp.params().lm_head.weight, &sp.params().lm_head.bias})
        for (auto& x : Tensor(*t).mutable_data()) x = 0.0;
    const Encoded e = sp.encode(Tensor::from({1, 6, 4}, randn(24, 5)), prefix_mask(6, 6));
    const TeacherForced tf = sp.teacher_forced_loss(sp.adapt(e.enc_last, e.mask), {{5}},
                                                    {{7, Vocab::kStyleOpen, 10, Vocab::kStyleClose, Vocab::kEos}});
    CHECK(tf.loss.item() == doctest::Approx(std::log(20.0)).epsilon(1e-12));
}

TEST_CASE("prompt swap changes values but not the loss contract") {
    ParamStore store(6);
    const SerialPath sp(store, small_config());
    const Encoded e = sp.encode(Tensor::from({1, 6, 4}, randn(24, 6)), prefix_mask(6, 6));
    const Adapted a = sp.adapt(e.enc_last, e.mask);
    const std::vector<long> t = {7, 8, Vocab::kStyleOpen, 10, Vocab::kStyleClose, Vocab::kEos};
    const TeacherForced x = sp.teacher_forced_loss(a, {{5, 6}}, {t});
    const TeacherForced y = sp.teacher_forced_loss(a, {{15, 16, 17}}, {t});
    CHECK(x.loss.shape() == y.loss.shape());
    CHECK(std::isfinite(x.loss.item()));
    CHECK(std::isfinite(y.loss.item()));
    CHECK(x.emb_t.shape() == y.emb_t.shape());
}

TEST_CASE("malformed targets are rejected") {
    using V = Vocab;
    CHECK(SerialPath::check_target(std::vector<long>{7, 8, V::kStyleOpen, 10, V::kStyleClose, V::kEos}) == 2);
    CHECK_THROWS_AS(SerialPath::check_target(std::vector<long>{7, 10, V::kStyleClose, V::kEos}), Error);
    CHECK_THROWS_AS(SerialPath::check_target(std::vector<long>{V::kStyleOpen, 10, V::kStyleClose, V::kEos}), Error);
    CHECK_THROWS_AS(SerialPath::check_target(std::vector<long>{7, V::kStyleOpen, 10, V::kStyleOpen, V::kStyleClose, V::kEos}), Error);
    CHECK_THROWS_AS(SerialPath::check_target(std::vector<long>{7, V::kStyleOpen, 10, V::kStyleClose}), Error);
}

TEST_CASE("gradients through encoder, adaptor and decoder") {
    ParamStore store(7);
    const SerialPath sp(store, small_config());
    const Tensor frames = Tensor::from({2, 6, 4}, randn(48, 7));
    const std::vector<unsigned char> mask = {1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0};
    const std::vector<std::vector<long>> targets = {{7, 8, Vocab::kStyleOpen, 10, Vocab::kStyleClose, Vocab::kEos},
                                                     {9, Vocab::kStyleOpen, 11, 12, Vocab::kStyleClose, Vocab::kEos}};
    auto loss = [&] {
        const Encoded e = sp.encode(frames, mask);
        return sp.teacher_forced_loss(sp.adapt(e.enc_last, e.mask), {{5, 6}, {5}}, targets).loss;
    };
    const GradCheckReport r = grad_check(loss, store.entries());
    CHECK(r.passed);
    CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("one item at desk dims: overfit, then greedy decoding reproduces the target") {
    SerialConfig c;  // desk defaults
    c.vocab_size = 40;
    ParamStore store(8);
    const SerialPath sp(store, c);
    const Tensor frames = Tensor::from({1, 12, c.feat_dim}, randn(12 * c.feat_dim, 8));
    const auto mask = prefix_mask(12, 12);
    const std::vector<long> prompt = {30, 31};
    const std::vector<long> target = {10, 11, 12, 13, Vocab::kStyleOpen, 20, 21, Vocab::kStyleClose, Vocab::kEos};
    AdamW opt(store.tensors(), AdamWConfig{});
    double loss = 1e9;
    int steps = 0;
    for (; steps < 300 && loss >= 0.01; ++steps) {
        opt.zero_grad();
        const Encoded e = sp.encode(frames, mask);
        const Tensor l = sp.teacher_forced_loss(sp.adapt(e.enc_last, e.mask), {prompt}, {target}).loss;
        loss = l.item();
        if (loss < 0.01) break;
        l.backward();
        opt.step();
    }
    CHECK(loss < 0.01);
    MESSAGE("steps to loss < 0.01: " << steps);

    NoGradGuard guard;
    const Encoded e = sp.encode(frames, mask);
    const Adapted a = sp.adapt(e.enc_last, e.mask);
    const Generation g1 = sp.generate_greedy(a, prompt);
    const Generation g2 = sp.generate_greedy(a, prompt);
    CHECK(g1.tokens == target);
    CHECK(g1.tokens == g2.tokens);
    CHECK(g1.transcript == std::vector<long>{10, 11, 12, 13});
    CHECK(g1.style_open_count == 1);
    REQUIRE_FALSE(g1.no_termination());
    double total = 0.0;
    for (double p : *g1.next_token_probs) total += p;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(g1.emb_t.shape() == Shape{1, 4, c.dec_dim});
}
