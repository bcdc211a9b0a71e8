#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"

#include "spdp/gradcheck.hpp"
#include "spdp/kernels.hpp"
#include "spdp/optim.hpp"
#include "spdp/params.hpp"
#include "spdp/tensor.hpp"

using namespace spdp;
namespace fs = std::filesystem;

namespace {

std::vector<double> randn(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d(0.0, 1.0);
    std::vector<double> v(n);
    for (auto& x : v) x = d(rng);
    return v;
}

fs::path temp_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("spdp_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST_CASE("gelu uses the tanh approximation") {
    const Tensor y = ops::gelu(Tensor::from({3}, {1.0, 0.0, -2.0}));
    CHECK(y.data()[0] == doctest::Approx(0.841192).epsilon(1e-6));
    CHECK(y.data()[1] == 0.0);
    const double x = -2.0;
    const double oracle = 0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (x + 0.044715 * x * x * x)));
    CHECK(y.data()[2] == doctest::Approx(oracle).epsilon(1e-15));
}

TEST_CASE("parallel kernels match the serial reference bit for bit") {
    const std::size_t M = 37, N = 23, K = 41;
    const auto A = randn(M * K, 1), B = randn(K * N, 2), Bt = randn(N * K, 3), At = randn(K * M, 4);
    auto check = [](const std::vector<double>& x, const std::vector<double>& y) {
        REQUIRE(x.size() == y.size());
        for (std::size_t i = 0; i < x.size(); ++i) REQUIRE(x[i] == y[i]);
    };
    std::vector<double> c1(M * N, 0.5), c2(M * N, 0.5);
    kernels::gemm_nn(M, N, K, A.data(), B.data(), c1.data());
    kernels::reference::gemm_nn(M, N, K, A.data(), B.data(), c2.data());
    check(c1, c2);
    std::fill(c1.begin(), c1.end(), 0.0);
    std::fill(c2.begin(), c2.end(), 0.0);
    kernels::gemm_nt(M, N, K, A.data(), Bt.data(), c1.data());
    kernels::reference::gemm_nt(M, N, K, A.data(), Bt.data(), c2.data());
    check(c1, c2);
    std::fill(c1.begin(), c1.end(), 0.0);
    std::fill(c2.begin(), c2.end(), 0.0);
    kernels::gemm_tn(M, N, K, At.data(), B.data(), c1.data());
    kernels::reference::gemm_tn(M, N, K, At.data(), B.data(), c2.data());
    check(c1, c2);

    // naive triple loop
    std::vector<double> c3(M * N, 0.0);
    for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < N; ++j)
            for (std::size_t k = 0; k < K; ++k) c3[i * N + j] += At[k * M + i] * B[k * N + j];
    check(c1, c3);
}

TEST_CASE("softmax gives exact zeros under -inf and reports fully masked rows") {
    const double inf = std::numeric_limits<double>::infinity();
    const std::vector<double> x = {1.0, -inf, 2.0, -inf, -inf, -inf};
    std::vector<double> y(6);
    CHECK_FALSE(kernels::softmax_rows(2, 3, x.data(), y.data()));
    CHECK(kernels::softmax_rows(1, 3, x.data(), y.data()));
    CHECK(y[1] == 0.0);
    CHECK(y[0] == doctest::Approx(1.0 / (1.0 + std::exp(1.0))));
    CHECK(y[0] + y[2] == doctest::Approx(1.0));
}

TEST_CASE("shared subexpressions accumulate gradient once per use") {
    const Tensor x = Tensor::from({2}, {3.0, -1.0}, true);
    const Tensor y = ops::mul(x, x);  // x^2
    const Tensor z = ops::sum(ops::add(y, ops::mul(y, x)));  // x^2 + x^3
    z.backward();
    CHECK(x.grad()[0] == doctest::Approx(2 * 3.0 + 3 * 9.0));
    CHECK(x.grad()[1] == doctest::Approx(-2.0 + 3.0));
}

TEST_CASE("no-grad mode records no history") {
    const Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
    NoGradGuard guard;
    const Tensor y = ops::scale(x, 2.0);
    CHECK_FALSE(y.requires_grad());
    CHECK(y.node()->parents.empty());
}

TEST_CASE("op gradients agree with central differences") {
    ParamStore store(5);
    const Tensor a = store.uniform("a", {2, 3, 4}, 4);
    const Tensor w = store.uniform("w", {4, 5}, 4);
    const Tensor bias = store.uniform("bias", {5}, 4);
    const Tensor gamma = store.constant("gamma", {5}, 1.2);
    const Tensor beta = store.constant("beta", {5}, -0.1);
    const Tensor other = store.uniform("other", {2, 3, 5}, 1);
    const std::vector<double> inf_mask = {0, 0, -std::numeric_limits<double>::infinity(), 0, 0,
                                          0, 0, 0, 0, 0, 0, 0, 0, 0, 0,
                                          0, 0, 0, 0, 0, 0, 0, 0, 0, 0,
                                          0, 0, 0, 0, 0};
    const std::vector<long> index = {2, -1, 0};
    const std::vector<long> targets = {1, 4, -1, 0, 2, 3};
    const std::vector<unsigned char> mask = {1, 1, 0, 1, 0, 0};

    auto loss = [&] {
        Tensor h = ops::linear(a, w, bias);
        h = ops::layer_norm(ops::gelu(h), gamma, beta);
        const Tensor att = ops::softmax(ops::bmm(h, other, true), -1);  // [2,3,3]
        h = ops::add(h, ops::bmm(att, other));
        Tensor s = ops::softmax(h, -1, inf_mask);
        const Tensor cos = ops::cosine_sim(h, other, -1);
        const Tensor rows = ops::gather_rows(ops::reshape(h, {6, 5}), index);
        const Tensor pooled = ops::masked_mean(ops::tanh(h), mask);
        const Tensor unf = ops::unfold_time(h, 3, 2);
        const Tensor ce = ops::cross_entropy(ops::reshape(h, {6, 5}), targets);
        const Tensor nll = ops::nll_loss(ops::log_softmax(pooled, -1), std::vector<long>{3, 1});
        const Tensor cat = ops::concat({ops::slice(s, 1, 0, 2), ops::permute(ops::mask_rows(h, mask), {0, 1, 2})}, 1);
        return ops::add(ops::add(ops::add(ops::sum(ops::mul(cat, cat)), ops::mean(cos)),
                                 ops::add(ops::sum(rows), ops::mean(ops::mul(unf, unf)))),
                        ops::add(ce, ops::scale(nll, 0.5)));
    };
    const GradCheckReport r = grad_check(loss, store.entries());
    CHECK(r.finite);
    CHECK(r.max_rel_error < 1e-6);
    CHECK(r.passed);
}

TEST_CASE("a corrupted backward is detected") {
    ParamStore store(3);
    const Tensor w = store.uniform("w", {3, 3}, 3);
    const Tensor x = Tensor::from({2, 3}, randn(6, 9));
    auto loss = [&] { return ops::sum(ops::gelu(ops::linear(x, w))); };
    debug::set_corrupt_gelu_backward(true);
    const GradCheckReport bad = grad_check(loss, store.entries());
    debug::set_corrupt_gelu_backward(false);
    CHECK_FALSE(bad.passed);
    CHECK(bad.max_rel_error > 1e-2);
    CHECK(grad_check(loss, store.entries()).passed);
}

TEST_CASE("checkpoint round trip preserves names, order, shapes and bits") {
    ParamStore a(11);
    a.uniform("z.first", {3, 4}, 3);
    a.constant("a.second", {5}, 0.25);
    a.uniform("m.third", {2, 2, 2}, 2);
    const fs::path dir = temp_dir("ckpt");
    checkpoint::save(dir / "m.spdp", a);

    const auto records = checkpoint::read(dir / "m.spdp");
    REQUIRE(records.size() == 3);
    CHECK(records[0].name == "z.first");
    CHECK(records[1].name == "a.second");
    CHECK(records[2].shape == Shape{2, 2, 2});

    ParamStore b(99);
    b.uniform("z.first", {3, 4}, 3);
    b.constant("a.second", {5}, 0.0);
    b.uniform("m.third", {2, 2, 2}, 2);
    checkpoint::load(dir / "m.spdp", b);
    for (std::size_t i = 0; i < 3; ++i) {
        const auto x = a.entries()[i].second.data(), y = b.entries()[i].second.data();
        CHECK(std::equal(x.begin(), x.end(), y.begin()));
    }

    ParamStore c(1);
    c.uniform("z.first", {4, 3}, 3);
    CHECK_THROWS_AS(checkpoint::load(dir / "m.spdp", c), Error);

    std::ofstream(dir / "bad.spdp", std::ios::binary) << "NOPE";
    CHECK_THROWS_AS(checkpoint::read(dir / "bad.spdp"), Error);
}

TEST_CASE("AdamW step matches a hand-computed update") {
    const Tensor p = Tensor::from({2}, {1.0, -2.0}, true);
    const Tensor untouched = Tensor::from({1}, {4.0}, true);
    AdamWConfig cfg;
    cfg.lr = 0.1;
    cfg.weight_decay = 0.01;
    AdamW opt({p, untouched}, cfg);
    const std::array<double, 2> g = {0.5, -0.25};
    double m[2] = {0, 0}, v[2] = {0, 0}, theta[2] = {1.0, -2.0};
    for (int t = 1; t <= 3; ++t) {
        opt.zero_grad();
        ops::sum(ops::mul(p, Tensor::from({2}, {g[0], g[1]}))).backward();
        opt.step();
        for (int i = 0; i < 2; ++i) {
            m[i] = 0.9 * m[i] + 0.1 * g[i];
            v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
            const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.999, t));
            theta[i] -= 0.1 * (mh / (std::sqrt(vh) + 1e-8) + 0.01 * theta[i]);
        }
    }
    CHECK(p.data()[0] == doctest::Approx(theta[0]).epsilon(1e-12));
    CHECK(p.data()[1] == doctest::Approx(theta[1]).epsilon(1e-12));
    // No gradient: only the decoupled decay applies.
    CHECK(untouched.data()[0] == doctest::Approx(4.0 * std::pow(1 - 0.1 * 0.01, 3)).epsilon(1e-12));
    CHECK(opt.state().step == 3);
}

TEST_CASE("softmax edge cases") {
    const double inf = std::numeric_limits<double>::infinity();
    auto sm = [](std::vector<double> x, std::vector<double> mask = {}) {
        const std::size_t n = x.size();
        const Tensor t = Tensor::from({n}, std::move(x));
        const Tensor y = ops::softmax(t, 0, mask);
        return std::vector<double>(y.data().begin(), y.data().end());
    };
    CHECK(sm({0, 0}) == std::vector<double>{0.5, 0.5});
    CHECK(sm({1000, 1000}) == std::vector<double>{0.5, 0.5});
    CHECK(sm({0, 0}, {0, -inf}) == std::vector<double>{1.0, 0.0});
}

TEST_CASE("layer norm edge cases") {
    const Tensor g = Tensor::full({2}, 1.0), b = Tensor::zeros({2});
    const Tensor y = ops::layer_norm(Tensor::from({2}, {1.0, 3.0}), g, b, 1e-12);
    CHECK(y.data()[0] == doctest::Approx(-1.0));
    CHECK(y.data()[1] == doctest::Approx(1.0));
    const Tensor z = ops::layer_norm(Tensor::from({3}, {5, 5, 5}), Tensor::full({3}, 1.0), Tensor::zeros({3}));
    for (double v : z.data()) CHECK(v == 0.0);

    ParamStore store(2);
    const Tensor x = store.uniform("x", {3, 7}, 1);
    const Tensor gamma = store.uniform("gamma", {7}, 1);
    const Tensor beta = store.uniform("beta", {7}, 1);
    const Tensor w = Tensor::from({3, 7}, randn(21, 8));
    CHECK(grad_check([&] { return ops::sum(ops::mul(ops::layer_norm(x, gamma, beta), w)); }, store.entries()).passed);
}

TEST_CASE("gelu and cosine fixed points") {
    CHECK(std::abs(ops::gelu(Tensor::scalar(-10.0)).item()) < 1e-6);
    auto cos = [](std::vector<double> u, std::vector<double> v) {
        return ops::cosine_sim(Tensor::from({2}, std::move(u)), Tensor::from({2}, std::move(v)), 0).item();
    };
    CHECK(cos({1, 0}, {0, 1}) == doctest::Approx(0.0));
    CHECK(cos({2, 2}, {1, 1}) == doctest::Approx(1.0));
    CHECK(cos({0, 0}, {1, 1}) == 0.0);
}

TEST_CASE("cross entropy cases") {
    const std::vector<long> t = {3, 0};
    CHECK(ops::cross_entropy(Tensor::zeros({2, 8}), t).item() == doctest::Approx(std::log(8.0)));
    std::vector<double> peaked(16, 0.0);
    peaked[3] = 800.0;
    peaked[8] = 800.0;
    CHECK(ops::cross_entropy(Tensor::from({2, 8}, peaked), t).item() == doctest::Approx(0.0));
    const std::vector<long> none = {-1, -1};
    CHECK_THROWS_WITH_AS(ops::cross_entropy(Tensor::zeros({2, 8}), none), "no loss support", Error);
}

TEST_CASE("AdamW elementary updates") {
    AdamWConfig cfg;
    cfg.lr = 0.1;
    cfg.weight_decay = 0.01;
    const Tensor p = Tensor::from({1}, {2.0}, true);
    AdamW decay_only({p}, cfg);
    decay_only.step();
    CHECK(p.data()[0] == doctest::Approx(2.0 * (1 - 0.001)).epsilon(1e-15));

    cfg.weight_decay = 0.0;
    const Tensor a = Tensor::from({2}, {1.0, 1.0}, true);
    const Tensor b = Tensor::from({2}, {1.0, 1.0}, true);
    AdamW opt({a, b}, cfg);
    ops::sum(ops::add(ops::scale(a, 3.0), ops::scale(b, 3.0))).backward();
    opt.step();
    CHECK(a.data()[0] == doctest::Approx(1.0 - 0.1 * 3.0 / (3.0 + 1e-8)).epsilon(1e-14));
    CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
}

TEST_CASE("finite differences on a quadratic") {
    const Tensor t = Tensor::from({1}, {3.0}, true);
    const GradCheckReport r = grad_check([&] { return ops::sum(ops::mul(t, t)); }, {{"theta", t}});
    CHECK(r.params[0].analytic == 6.0);
    CHECK(r.max_rel_error < 1e-8);
}
