#include <cmath>
#include <random>

#include "doctest.h"

#include "spdp/alsm.hpp"
#include "spdp/gradcheck.hpp"
#include "spdp/optim.hpp"

using namespace spdp;

namespace {

std::vector<double> randn(std::size_t n, std::uint64_t seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d(0.0, scale);
    std::vector<double> v(n);
    for (auto& x : v) x = d(rng);
    return v;
}

AlsmConfig desk_config() {
    AlsmConfig c;
    c.emb_a_dim = 6;
    c.emb_t_dim = 5;
    c.d_shared = 8;
    c.n_subspaces = 2;
    c.ref_dim = 4;
    c.classifier_heads = 2;
    c.classifier_ffn_mult = 2;
    return c;
}

void fill(Tensor t, double v) {
    for (auto& x : t.mutable_data()) x = v;
}

void set_identity(Tensor w) {
    auto d = w.mutable_data();
    const std::size_t n = w.dim(0);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = (i / n == i % n) ? 1.0 : 0.0;
}

double at3(const Tensor& t, std::size_t b, std::size_t i, std::size_t j) {
    return t.data()[(b * t.dim(1) + i) * t.dim(2) + j];
}

std::vector<unsigned char> ones(std::size_t n) { return std::vector<unsigned char>(n, 1); }

}  // namespace

TEST_CASE("projection of zero input is the zero vector") {
    ParamStore store(1);
    const Alsm alsm(store, desk_config());
    fill(alsm.params().proj_a.bias, 0.0);
    const auto [h_a, h_t] = alsm.project_bimodal(Tensor::zeros({1, 4, 6}), Tensor::from({1, 2, 5}, randn(10, 2)));
    for (double v : h_a.data()) CHECK(v == 0.0);
    CHECK(h_t.shape() == Shape{1, 2, 8});
}

TEST_CASE("projection rejects a mismatched acoustic width") {
    ParamStore store(1);
    const Alsm alsm(store, desk_config());
    CHECK_THROWS_AS(alsm.project_bimodal(Tensor::zeros({1, 4, 7}), Tensor::zeros({1, 2, 5})), Error);
}

TEST_CASE("projected positions are standardized") {
    ParamStore store(3);
    AlsmConfig c = desk_config();
    c.d_shared = 64;
    const Alsm alsm(store, c);
    const auto [h_a, _] = alsm.project_bimodal(Tensor::from({2, 5, 6}, randn(60, 4)), Tensor::from({2, 3, 5}, randn(30, 5)));
    for (std::size_t r = 0; r < 10; ++r) {
        double mean = 0.0, var = 0.0;
        for (std::size_t j = 0; j < 64; ++j) mean += h_a.data()[r * 64 + j];
        mean /= 64;
        for (std::size_t j = 0; j < 64; ++j) var += std::pow(h_a.data()[r * 64 + j] - mean, 2);
        var /= 64;
        CHECK(std::abs(mean) < 1e-9);
        CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
    }
}

TEST_CASE("alignment is a convex combination of valid text rows") {
    ParamStore store(1);
    const Alsm alsm(store, desk_config());
    const Tensor h_a = Tensor::from({2, 4, 8}, randn(64, 6));
    const Tensor h_t = Tensor::from({2, 3, 8}, randn(48, 7));
    const std::vector<unsigned char> text = {1, 0, 0, 1, 1, 0};

    const auto [al, w] = alsm.align(h_a, h_t, text);
    for (std::size_t t = 0; t < 4; ++t)
        for (std::size_t d = 0; d < 8; ++d) CHECK(at3(al, 0, t, d) == doctest::Approx(at3(h_t, 0, 0, d)).epsilon(1e-12));
    for (std::size_t t = 0; t < 4; ++t) {
        CHECK(at3(w, 1, t, 2) == 0.0);
        CHECK(at3(w, 1, t, 0) + at3(w, 1, t, 1) == doctest::Approx(1.0));
        for (std::size_t d = 0; d < 8; ++d) {
            const double lo = std::min(at3(h_t, 1, 0, d), at3(h_t, 1, 1, d));
            const double hi = std::max(at3(h_t, 1, 0, d), at3(h_t, 1, 1, d));
            CHECK(at3(al, 1, t, d) >= lo - 1e-12);
            CHECK(at3(al, 1, t, d) <= hi + 1e-12);
        }
    }

    const auto [al0, w0] = alsm.align(Tensor::zeros({2, 4, 8}), h_t, text);
    for (std::size_t d = 0; d < 8; ++d)
        CHECK(at3(al0, 1, 2, d) == doctest::Approx(0.5 * (at3(h_t, 1, 0, d) + at3(h_t, 1, 1, d))).epsilon(1e-12));
}

TEST_CASE("subspace similarities") {
    ParamStore store(1);
    const Alsm alsm(store, desk_config());
    for (std::size_t i = 0; i < 2; ++i) {
        set_identity(alsm.params().sub_a[i].weight);
        set_identity(alsm.params().sub_t[i].weight);
        fill(alsm.params().sub_a[i].bias, 0.0);
        fill(alsm.params().sub_t[i].bias, 0.0);
    }
    const Tensor h = Tensor::from({1, 3, 8}, randn(24, 3));
    const Tensor s = alsm.subspace_similarities(h, h);
    CHECK(s.shape() == Shape{1, 3, 2});
    for (double v : s.data()) CHECK(v == doctest::Approx(1.0).epsilon(1e-7));  // eps in the norms

    ParamStore store2(2);
    const Alsm other(store2, desk_config());
    const Tensor h_t = Tensor::from({1, 3, 8}, randn(24, 4));
    // Scale invariance needs the acoustic maps to be linear, so drop their biases.
    for (std::size_t i = 0; i < 2; ++i) fill(other.params().sub_a[i].bias, 0.0);
    const Tensor s2 = other.subspace_similarities(h, h_t);
    const Tensor s3 = other.subspace_similarities(ops::scale(h, 3.0), h_t);
    for (std::size_t i = 0; i < s2.numel(); ++i) CHECK(std::abs(s2.data()[i] - s3.data()[i]) < 1e-9);
}

TEST_CASE("subspace similarity by hand with N=2, D=2") {
    AlsmConfig c = desk_config();
    c.d_shared = 2;
    c.classifier_heads = 1;
    ParamStore store(1);
    const Alsm alsm(store, c);
    // y = x W with W stored [in, out]
    const std::array<std::array<double, 4>, 2> wa = {{{1, 2, 0, 1}, {0, 1, -1, 3}}};
    const std::array<std::array<double, 4>, 2> wt = {{{2, 0, 1, 1}, {1, -1, 0, 2}}};
    for (std::size_t i = 0; i < 2; ++i) {
        Tensor a = alsm.params().sub_a[i].weight, t = alsm.params().sub_t[i].weight;
        std::copy(wa[i].begin(), wa[i].end(), a.mutable_data().begin());
        std::copy(wt[i].begin(), wt[i].end(), t.mutable_data().begin());
        fill(alsm.params().sub_a[i].bias, 0.0);
        fill(alsm.params().sub_t[i].bias, 0.0);
    }
    const double ha[2] = {1.0, -2.0}, ht[2] = {0.5, 3.0};
    const Tensor s = alsm.subspace_similarities(Tensor::from({1, 1, 2}, {ha[0], ha[1]}), Tensor::from({1, 1, 2}, {ht[0], ht[1]}));
    for (std::size_t i = 0; i < 2; ++i) {
        const double u0 = ha[0] * wa[i][0] + ha[1] * wa[i][2], u1 = ha[0] * wa[i][1] + ha[1] * wa[i][3];
        const double v0 = ht[0] * wt[i][0] + ht[1] * wt[i][2], v1 = ht[0] * wt[i][1] + ht[1] * wt[i][3];
        const double cos = (u0 * v0 + u1 * v1) / (std::hypot(u0, u1) * std::hypot(v0, v1));
        CHECK(s.data()[i] == doctest::Approx(cos).epsilon(1e-7));
    }
}

TEST_CASE("cross-modal representation keeps similarities and bounds the reference part") {
    ParamStore store(4);
    const Alsm alsm(store, desk_config());
    const Tensor s = Tensor::from({2, 5, 2}, randn(20, 1));
    const Tensor al = Tensor::from({2, 5, 8}, randn(80, 2, 10.0));
    const Tensor h_cm = alsm.build_representation(s, al);
    REQUIRE(h_cm.shape() == Shape{2, 5, 6});
    for (std::size_t r = 0; r < 10; ++r) {
        CHECK(h_cm.data()[r * 6 + 0] == s.data()[r * 2 + 0]);
        CHECK(h_cm.data()[r * 6 + 1] == s.data()[r * 2 + 1]);
        for (std::size_t j = 2; j < 6; ++j) CHECK(std::abs(h_cm.data()[r * 6 + j]) <= 1.0);
    }
}

TEST_CASE("classifier output is a normalized distribution that ignores padding") {
    ParamStore store(5);
    const Alsm alsm(store, desk_config());
    auto values = randn(2 * 5 * 6, 3);
    const std::vector<unsigned char> mask = {1, 1, 1, 0, 0, 1, 1, 1, 1, 1};
    const Tensor lp = alsm.classify(Tensor::from({2, 5, 6}, values), mask);
    REQUIRE(lp.shape() == Shape{2, 8});
    for (std::size_t b = 0; b < 2; ++b) {
        double z = 0.0;
        for (std::size_t k = 0; k < 8; ++k) z += std::exp(lp.data()[b * 8 + k]);
        CHECK(z == doctest::Approx(1.0).epsilon(1e-9));
    }
    for (std::size_t j = 0; j < 6; ++j) std::swap(values[3 * 6 + j], values[4 * 6 + j]);
    for (std::size_t j = 0; j < 6; ++j) values[4 * 6 + j] = 100.0;
    const Tensor lp2 = alsm.classify(Tensor::from({2, 5, 6}, values), mask);
    for (std::size_t i = 0; i < 16; ++i) CHECK(std::abs(lp.data()[i] - lp2.data()[i]) < 1e-9);
}

TEST_CASE("without positions, duplicating every valid frame leaves the prediction unchanged") {
    AlsmConfig c = desk_config();
    c.positional_encoding = false;
    ParamStore store(6);
    const Alsm alsm(store, c);
    const auto v = randn(3 * 6, 8);
    std::vector<double> twice;
    for (std::size_t t = 0; t < 3; ++t)
        for (int rep = 0; rep < 2; ++rep) twice.insert(twice.end(), v.begin() + t * 6, v.begin() + (t + 1) * 6);
    const Tensor a = alsm.classify(Tensor::from({1, 3, 6}, v), ones(3));
    const Tensor b = alsm.classify(Tensor::from({1, 6, 6}, twice), ones(6));
    for (std::size_t k = 0; k < 8; ++k) CHECK(std::abs(a.data()[k] - b.data()[k]) < 1e-9);
}

TEST_CASE("full forward shapes and gradients at small dims") {
    ParamStore store(7);
    const Alsm alsm(store, desk_config());
    const Tensor emb_a = Tensor::from({2, 5, 6}, randn(60, 1));
    const Tensor emb_t = Tensor::from({2, 3, 5}, randn(30, 2));
    const std::vector<unsigned char> frames = {1, 1, 1, 1, 1, 1, 1, 1, 0, 0};
    const std::vector<unsigned char> text = {1, 1, 1, 1, 0, 0};
    const AlsmOutput out = alsm.forward(emb_a, emb_t, {frames, text});
    CHECK(out.log_probs.shape() == Shape{2, 8});
    CHECK(out.h_a.shape() == Shape{2, 5, 8});
    CHECK(out.h_t_al.shape() == Shape{2, 5, 8});
    CHECK(out.similarities.shape() == Shape{2, 5, 2});
    CHECK(out.h_cm.shape() == Shape{2, 5, 6});
    CHECK(out.attention_weights.shape() == Shape{2, 5, 3});

    const std::vector<long> labels = {3, 5};
    const GradCheckReport r = grad_check([&] { return alsm.loss(alsm.forward(emb_a, emb_t, {frames, text}), labels); },
                                         store.entries());
    CHECK(r.passed);
    CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("the parallel path memorizes eight items") {
    ParamStore store(8);
    const Alsm alsm(store, desk_config());
    const Tensor emb_a = Tensor::from({8, 5, 6}, randn(240, 11));
    const Tensor emb_t = Tensor::from({8, 3, 5}, randn(120, 12));
    const std::vector<long> labels = {0, 1, 2, 3, 4, 5, 6, 7};
    const auto frames = ones(40), text = ones(24);
    AdamW opt(store.tensors(), AdamWConfig{});
    bool solved = false;
    for (int step = 0; step < 500 && !solved; ++step) {
        opt.zero_grad();
        const AlsmOutput out = alsm.forward(emb_a, emb_t, {frames, text});
        solved = true;
        for (std::size_t b = 0; b < 8; ++b) {
            const auto row = out.log_probs.data().subspan(b * 8, 8);
            solved = solved && static_cast<long>(std::max_element(row.begin(), row.end()) - row.begin()) == labels[b];
        }
        if (solved) break;
        alsm.loss(out, labels).backward();
        opt.step();
    }
    CHECK(solved);
}
