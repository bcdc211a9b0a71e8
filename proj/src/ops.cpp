#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "spdp/kernels.hpp"
#include "spdp/tensor.hpp"

namespace spdp::ops {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::size_t axis_of(const Tensor& x, int axis) {
    const int r = static_cast<int>(x.rank());
    const int a = axis < 0 ? axis + r : axis;
    require(a >= 0 && a < r, "axis " + std::to_string(axis) + " invalid for " + shape_str(x.shape()));
    return static_cast<std::size_t>(a);
}

// [outer, len, inner] view of a shape around one axis.
struct AxisView {
    std::size_t outer = 1, len = 1, inner = 1;
};

AxisView view_of(const Shape& s, std::size_t axis) {
    AxisView v;
    for (std::size_t i = 0; i < axis; ++i) v.outer *= s[i];
    v.len = s[axis];
    for (std::size_t i = axis + 1; i < s.size(); ++i) v.inner *= s[i];
    return v;
}

Node& parent(const Node& out, std::size_t i) { return *out.parents[i]; }

bool is_suffix(const Shape& big, const Shape& small) {
    if (small.size() > big.size()) return false;
    return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

}  // namespace

// ---- elementwise --------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    require(is_suffix(a.shape(), b.shape()),
            "add: " + shape_str(b.shape()) + " does not broadcast onto " + shape_str(a.shape()));
    const std::size_t nb = b.numel();
    std::vector<double> out(a.data().begin(), a.data().end());
    const auto bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i % nb];
    return make_result(a.shape(), std::move(out), {a, b}, [nb](const Node& o) {
        Node& pa = parent(o, 0);
        Node& pb = parent(o, 1);
        if (pa.requires_grad) {
            double* g = pa.ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
        }
        if (pb.requires_grad) {
            double* g = pb.ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) g[i % nb] += o.grad[i];
        }
    }, "add");
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

Tensor mul(const Tensor& a, const Tensor& b) {
    require(a.shape() == b.shape(), "mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<double> out(a.numel());
    const auto ad = a.data();
    const auto bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
    return make_result(a.shape(), std::move(out), {a, b}, [](const Node& o) {
        Node& pa = parent(o, 0);
        Node& pb = parent(o, 1);
        if (pa.requires_grad) {
            double* g = pa.ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * pb.data[i];
        }
        if (pb.requires_grad) {
            double* g = pb.ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * pa.data[i];
        }
    }, "mul");
}

Tensor scale(const Tensor& a, double s) {
    std::vector<double> out(a.data().begin(), a.data().end());
    for (auto& v : out) v *= s;
    return make_result(a.shape(), std::move(out), {a}, [s](const Node& o) {
        double* g = parent(o, 0).ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += s * o.grad[i];
    }, "scale");
}

Tensor gelu(const Tensor& x) {
    constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
    constexpr double k = 0.044715;
    std::vector<double> out(x.numel());
    const auto xd = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = xd[i];
        out[i] = 0.5 * v * (1.0 + std::tanh(c * (v + k * v * v * v)));
    }
    return make_result(x.shape(), std::move(out), {x}, [](const Node& o) {
        Node& px = parent(o, 0);
        double* g = px.ensure_grad();
        const bool corrupt = debug::corrupt_gelu_backward();
        for (std::size_t i = 0; i < o.grad.size(); ++i) {
            const double v = px.data[i];
            const double t = std::tanh(c * (v + k * v * v * v));
            double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * c * (1.0 + 3.0 * k * v * v);
            if (corrupt) d *= 1.1;
            g[i] += o.grad[i] * d;
        }
    }, "gelu");
}

Tensor tanh(const Tensor& x) {
    std::vector<double> out(x.numel());
    const auto xd = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(xd[i]);
    return make_result(x.shape(), std::move(out), {x}, [](const Node& o) {
        double* g = parent(o, 0).ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * (1.0 - o.data[i] * o.data[i]);
    }, "tanh");
}

// ---- reductions / shape -----------------------------------------------------------

Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    return make_result({}, {s}, {x}, [](const Node& o) {
        Node& px = parent(o, 0);
        double* g = px.ensure_grad();
        for (std::size_t i = 0; i < px.data.size(); ++i) g[i] += o.grad[0];
    }, "sum");
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor reshape(const Tensor& x, Shape shape) {
    require(spdp::numel(shape) == x.numel(),
            "reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
    std::vector<double> out(x.data().begin(), x.data().end());
    return make_result(std::move(shape), std::move(out), {x}, [](const Node& o) {
        double* g = parent(o, 0).ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
    }, "reshape");
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm) {
    const std::size_t r = x.rank();
    require(perm.size() == r, "permute: rank mismatch");
    std::vector<std::size_t> in_stride(r, 1);
    for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * x.shape()[i];
    Shape out_shape(r);
    std::vector<std::size_t> src_stride(r);
    for (std::size_t i = 0; i < r; ++i) {
        require(perm[i] < r, "permute: bad axis");
        out_shape[i] = x.shape()[perm[i]];
        src_stride[i] = in_stride[perm[i]];
    }
    // Source offset for every destination element, walked with an odometer.
    const std::size_t n = x.numel();
    std::vector<std::size_t> src(n);
    std::vector<std::size_t> idx(r, 0);
    std::size_t off = 0;
    for (std::size_t i = 0; i < n; ++i) {
        src[i] = off;
        for (std::size_t d = r; d-- > 0;) {
            ++idx[d];
            off += src_stride[d];
            if (idx[d] < out_shape[d]) break;
            off -= src_stride[d] * idx[d];
            idx[d] = 0;
        }
    }
    std::vector<double> out(n);
    const auto xd = x.data();
    for (std::size_t i = 0; i < n; ++i) out[i] = xd[src[i]];
    return make_result(std::move(out_shape), std::move(out), {x}, [src = std::move(src)](const Node& o) {
        double* g = parent(o, 0).ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i) g[src[i]] += o.grad[i];
    }, "permute");
}

Tensor concat(const std::vector<Tensor>& xs, int axis) {
    require(!xs.empty(), "concat: no inputs");
    const std::size_t ax = axis_of(xs[0], axis);
    Shape out_shape = xs[0].shape();
    out_shape[ax] = 0;
    std::vector<std::size_t> widths;
    for (const auto& t : xs) {
        require(t.rank() == out_shape.size(), "concat: rank mismatch");
        for (std::size_t i = 0; i < out_shape.size(); ++i)
            if (i != ax) require(t.shape()[i] == xs[0].shape()[i], "concat: extent mismatch on axis " + std::to_string(i));
        out_shape[ax] += t.shape()[ax];
    }
    const AxisView v = view_of(out_shape, ax);
    for (const auto& t : xs) widths.push_back(t.shape()[ax] * v.inner);
    const std::size_t row = v.len * v.inner;
    std::vector<double> out(numel(out_shape));
    std::size_t col = 0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
        const auto d = xs[k].data();
        for (std::size_t o = 0; o < v.outer; ++o)
            std::copy_n(d.begin() + static_cast<long>(o * widths[k]), widths[k], out.begin() + static_cast<long>(o * row + col));
        col += widths[k];
    }
    return make_result(std::move(out_shape), std::move(out), xs, [widths, outer = v.outer, row](const Node& o) {
        std::size_t c = 0;
        for (std::size_t k = 0; k < widths.size(); ++k) {
            Node& p = parent(o, k);
            if (p.requires_grad) {
                double* g = p.ensure_grad();
                for (std::size_t r = 0; r < outer; ++r)
                    for (std::size_t j = 0; j < widths[k]; ++j) g[r * widths[k] + j] += o.grad[r * row + c + j];
            }
            c += widths[k];
        }
    }, "concat");
}

Tensor slice(const Tensor& x, int axis, std::size_t start, std::size_t length) {
    const std::size_t ax = axis_of(x, axis);
    require(length > 0 && start + length <= x.shape()[ax], "slice out of range");
    const AxisView v = view_of(x.shape(), ax);
    Shape out_shape = x.shape();
    out_shape[ax] = length;
    const std::size_t w = length * v.inner;
    const std::size_t row = v.len * v.inner;
    const std::size_t off = start * v.inner;
    std::vector<double> out(v.outer * w);
    const auto d = x.data();
    for (std::size_t o = 0; o < v.outer; ++o)
        std::copy_n(d.begin() + static_cast<long>(o * row + off), w, out.begin() + static_cast<long>(o * w));
    return make_result(std::move(out_shape), std::move(out), {x}, [outer = v.outer, w, row, off](const Node& o) {
        double* g = parent(o, 0).ensure_grad();
        for (std::size_t r = 0; r < outer; ++r)
            for (std::size_t j = 0; j < w; ++j) g[r * row + off + j] += o.grad[r * w + j];
    }, "slice");
}

Tensor gather_rows(const Tensor& table, std::span<const long> index) {
    require(table.rank() == 2, "gather_rows: table must be rank 2");
    const std::size_t rows = table.shape()[0];
    const std::size_t width = table.shape()[1];
    require(!index.empty(), "gather_rows: empty index");
    std::vector<double> out(index.size() * width, 0.0);
    const auto d = table.data();
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (index[i] < 0) continue;
        require(static_cast<std::size_t>(index[i]) < rows, "gather_rows: index " + std::to_string(index[i]) + " out of range");
        std::copy_n(d.begin() + index[i] * static_cast<long>(width), width, out.begin() + static_cast<long>(i * width));
    }
    std::vector<long> idx(index.begin(), index.end());
    return make_result({index.size(), width}, std::move(out), {table}, [idx = std::move(idx), width](const Node& o) {
        double* g = parent(o, 0).ensure_grad();
        for (std::size_t i = 0; i < idx.size(); ++i) {
            if (idx[i] < 0) continue;
            double* gr = g + idx[i] * static_cast<long>(width);
            for (std::size_t j = 0; j < width; ++j) gr[j] += o.grad[i * width + j];
        }
    }, "gather_rows");
}

// ---- linear algebra ---------------------------------------------------------------

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    require(weight.rank() == 2, "linear: weight must be rank 2");
    const std::size_t K = weight.shape()[0];
    const std::size_t N = weight.shape()[1];
    require(x.rank() >= 1 && x.shape().back() == K,
            "linear: input " + shape_str(x.shape()) + " incompatible with weight " + shape_str(weight.shape()));
    const std::size_t rows = x.numel() / K;
    std::vector<double> out(rows * N, 0.0);
    if (bias.defined()) {
        require(bias.numel() == N, "linear: bias extent mismatch");
        const auto bd = bias.data();
        for (std::size_t r = 0; r < rows; ++r) std::copy(bd.begin(), bd.end(), out.begin() + static_cast<long>(r * N));
    }
    kernels::gemm_nn(rows, N, K, x.data().data(), weight.data().data(), out.data());
    Shape out_shape = x.shape();
    out_shape.back() = N;
    std::vector<Tensor> parents{x, weight};
    if (bias.defined()) parents.push_back(bias);
    return make_result(std::move(out_shape), std::move(out), std::move(parents), [rows, N, K](const Node& o) {
        Node& px = parent(o, 0);
        Node& pw = parent(o, 1);
        if (px.requires_grad) kernels::gemm_nt(rows, K, N, o.grad.data(), pw.data.data(), px.ensure_grad());
        if (pw.requires_grad) kernels::gemm_tn(K, N, rows, px.data.data(), o.grad.data(), pw.ensure_grad());
        if (o.parents.size() > 2 && parent(o, 2).requires_grad) {
            double* gb = parent(o, 2).ensure_grad();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < N; ++j) gb[j] += o.grad[r * N + j];
        }
    }, "linear");
}

Tensor bmm(const Tensor& a, const Tensor& b, bool trans_b) {
    require(a.rank() >= 2 && a.rank() == b.rank(), "bmm: rank mismatch");
    const std::size_t r = a.rank();
    for (std::size_t i = 0; i + 2 < r; ++i) require(a.shape()[i] == b.shape()[i], "bmm: batch extent mismatch");
    const std::size_t M = a.shape()[r - 2];
    const std::size_t K = a.shape()[r - 1];
    const std::size_t N = trans_b ? b.shape()[r - 2] : b.shape()[r - 1];
    require((trans_b ? b.shape()[r - 1] : b.shape()[r - 2]) == K,
            "bmm: inner extent mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const std::size_t G = a.numel() / (M * K);
    std::vector<double> out(G * M * N, 0.0);
    const double* ad = a.data().data();
    const double* bd = b.data().data();
    for (std::size_t g = 0; g < G; ++g) {
        if (trans_b) kernels::gemm_nt(M, N, K, ad + g * M * K, bd + g * N * K, out.data() + g * M * N);
        else kernels::gemm_nn(M, N, K, ad + g * M * K, bd + g * K * N, out.data() + g * M * N);
    }
    Shape out_shape = a.shape();
    out_shape[r - 1] = N;
    return make_result(std::move(out_shape), std::move(out), {a, b}, [G, M, N, K, trans_b](const Node& o) {
        Node& pa = parent(o, 0);
        Node& pb = parent(o, 1);
        for (std::size_t g = 0; g < G; ++g) {
            const double* go = o.grad.data() + g * M * N;
            if (pa.requires_grad) {
                double* ga = pa.ensure_grad() + g * M * K;
                if (trans_b) kernels::gemm_nn(M, K, N, go, pb.data.data() + g * N * K, ga);
                else kernels::gemm_nt(M, K, N, go, pb.data.data() + g * K * N, ga);
            }
            if (pb.requires_grad) {
                const double* av = pa.data.data() + g * M * K;
                if (trans_b) kernels::gemm_tn(N, K, M, go, av, pb.ensure_grad() + g * N * K);
                else kernels::gemm_tn(K, N, M, av, go, pb.ensure_grad() + g * K * N);
            }
        }
    }, "bmm");
}

// ---- normalisation / probability ----------------------------------------------------

Tensor softmax(const Tensor& x, int axis, std::span<const double> additive_mask) {
    const std::size_t ax = axis_of(x, axis);
    require(additive_mask.empty() || additive_mask.size() == x.numel(), "softmax: mask size mismatch");
    const AxisView v = view_of(x.shape(), ax);
    std::vector<double> z(x.data().begin(), x.data().end());
    if (!additive_mask.empty())
        for (std::size_t i = 0; i < z.size(); ++i) z[i] += additive_mask[i];
    std::vector<double> out(z.size());
    bool ok = true;
    if (v.inner == 1) {
        ok = kernels::softmax_rows(v.outer, v.len, z.data(), out.data());
    } else {
        std::vector<double> col(v.len), res(v.len);
        for (std::size_t o = 0; o < v.outer && ok; ++o)
            for (std::size_t in = 0; in < v.inner && ok; ++in) {
                for (std::size_t j = 0; j < v.len; ++j) col[j] = z[(o * v.len + j) * v.inner + in];
                ok = kernels::reference::softmax_rows(1, v.len, col.data(), res.data());
                for (std::size_t j = 0; j < v.len; ++j) out[(o * v.len + j) * v.inner + in] = res[j];
            }
    }
    if (!ok) fail(ErrorKind::Numeric, "empty softmax support");
    return make_result(x.shape(), std::move(out), {x}, [v](const Node& o) {
        double* g = parent(o, 0).ensure_grad();
        for (std::size_t oo = 0; oo < v.outer; ++oo)
            for (std::size_t in = 0; in < v.inner; ++in) {
                const std::size_t base = oo * v.len * v.inner + in;
                double dot = 0.0;
                for (std::size_t j = 0; j < v.len; ++j) dot += o.grad[base + j * v.inner] * o.data[base + j * v.inner];
                for (std::size_t j = 0; j < v.len; ++j) {
                    const std::size_t k = base + j * v.inner;
                    g[k] += o.data[k] * (o.grad[k] - dot);
                }
            }
    }, "softmax");
}

Tensor log_softmax(const Tensor& x, int axis) {
    const std::size_t ax = axis_of(x, axis);
    const AxisView v = view_of(x.shape(), ax);
    std::vector<double> out(x.numel());
    const auto xd = x.data();
    for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t in = 0; in < v.inner; ++in) {
            const std::size_t base = o * v.len * v.inner + in;
            double mx = kNegInf;
            for (std::size_t j = 0; j < v.len; ++j) mx = std::max(mx, xd[base + j * v.inner]);
            if (!std::isfinite(mx)) fail(ErrorKind::Numeric, "empty softmax support");
            double s = 0.0;
            for (std::size_t j = 0; j < v.len; ++j) s += std::exp(xd[base + j * v.inner] - mx);
            const double lse = mx + std::log(s);
            for (std::size_t j = 0; j < v.len; ++j) out[base + j * v.inner] = xd[base + j * v.inner] - lse;
        }
    return make_result(x.shape(), std::move(out), {x}, [v](const Node& o) {
        double* g = parent(o, 0).ensure_grad();
        for (std::size_t oo = 0; oo < v.outer; ++oo)
            for (std::size_t in = 0; in < v.inner; ++in) {
                const std::size_t base = oo * v.len * v.inner + in;
                double gs = 0.0;
                for (std::size_t j = 0; j < v.len; ++j) gs += o.grad[base + j * v.inner];
                for (std::size_t j = 0; j < v.len; ++j) {
                    const std::size_t k = base + j * v.inner;
                    g[k] += o.grad[k] - std::exp(o.data[k]) * gs;
                }
            }
    }, "log_softmax");
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    require(x.rank() >= 1 && x.shape().back() > 0, "layer_norm: feature extent 0");
    const std::size_t F = x.shape().back();
    require(gamma.numel() == F && beta.numel() == F,
            "layer_norm: gamma/beta extent must equal feature extent " + std::to_string(F));
    const std::size_t rows = x.numel() / F;
    std::vector<double> out(x.numel());
    std::vector<double> xhat(x.numel());
    std::vector<double> rstd(rows);
    const auto xd = x.data();
    const auto gd = gamma.data();
    const auto bd = beta.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = xd.data() + r * F;
        double mu = 0.0;
        for (std::size_t j = 0; j < F; ++j) mu += row[j];
        mu /= static_cast<double>(F);
        double var = 0.0;
        for (std::size_t j = 0; j < F; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<double>(F);
        const double rs = 1.0 / std::sqrt(var + eps);
        rstd[r] = rs;
        for (std::size_t j = 0; j < F; ++j) {
            const double h = (row[j] - mu) * rs;
            xhat[r * F + j] = h;
            out[r * F + j] = h * gd[j] + bd[j];
        }
    }
    return make_result(x.shape(), std::move(out), {x, gamma, beta},
                       [F, rows, xhat = std::move(xhat), rstd = std::move(rstd)](const Node& o) {
        Node& px = parent(o, 0);
        Node& pg = parent(o, 1);
        Node& pb = parent(o, 2);
        if (pg.requires_grad) {
            double* g = pg.ensure_grad();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < F; ++j) g[j] += o.grad[r * F + j] * xhat[r * F + j];
        }
        if (pb.requires_grad) {
            double* g = pb.ensure_grad();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < F; ++j) g[j] += o.grad[r * F + j];
        }
        if (px.requires_grad) {
            double* g = px.ensure_grad();
            const double inv_f = 1.0 / static_cast<double>(F);
            for (std::size_t r = 0; r < rows; ++r) {
                double m1 = 0.0, m2 = 0.0;
                for (std::size_t j = 0; j < F; ++j) {
                    const double gh = o.grad[r * F + j] * pg.data[j];
                    m1 += gh;
                    m2 += gh * xhat[r * F + j];
                }
                m1 *= inv_f;
                m2 *= inv_f;
                for (std::size_t j = 0; j < F; ++j) {
                    const double gh = o.grad[r * F + j] * pg.data[j];
                    g[r * F + j] += rstd[r] * (gh - m1 - xhat[r * F + j] * m2);
                }
            }
        }
    }, "layer_norm");
}

Tensor cosine_sim(const Tensor& u, const Tensor& v, int axis, double eps) {
    require(u.shape() == v.shape(), "cosine_sim: shape mismatch " + shape_str(u.shape()) + " vs " + shape_str(v.shape()));
    require(eps > 0.0, "cosine_sim: eps must be positive");
    const std::size_t ax = axis_of(u, axis);
    const AxisView w = view_of(u.shape(), ax);
    Shape out_shape;
    for (std::size_t i = 0; i < u.rank(); ++i)
        if (i != ax) out_shape.push_back(u.shape()[i]);
    const std::size_t n = w.outer * w.inner;
    std::vector<double> out(n), dots(n), nu(n), nv(n);
    const auto ud = u.data();
    const auto vd = v.data();
    for (std::size_t o = 0; o < w.outer; ++o)
        for (std::size_t in = 0; in < w.inner; ++in) {
            const std::size_t base = o * w.len * w.inner + in;
            double d = 0.0, a = 0.0, b = 0.0;
            for (std::size_t j = 0; j < w.len; ++j) {
                const double x = ud[base + j * w.inner];
                const double y = vd[base + j * w.inner];
                d += x * y;
                a += x * x;
                b += y * y;
            }
            const std::size_t k = o * w.inner + in;
            dots[k] = d;
            nu[k] = std::sqrt(a);
            nv[k] = std::sqrt(b);
            out[k] = d / (nu[k] * nv[k] + eps);
        }
    return make_result(std::move(out_shape), std::move(out), {u, v},
                       [w, eps, dots = std::move(dots), nu = std::move(nu), nv = std::move(nv)](const Node& o) {
        Node& pu = parent(o, 0);
        Node& pv = parent(o, 1);
        double* gu = pu.requires_grad ? pu.ensure_grad() : nullptr;
        double* gv = pv.requires_grad ? pv.ensure_grad() : nullptr;
        for (std::size_t oo = 0; oo < w.outer; ++oo)
            for (std::size_t in = 0; in < w.inner; ++in) {
                const std::size_t k = oo * w.inner + in;
                const std::size_t base = oo * w.len * w.inner + in;
                const double den = nu[k] * nv[k] + eps;
                const double g = o.grad[k];
                // d/du [dot / (|u||v| + eps)] = v/den - dot*|v|*(u/|u|)/den^2
                const double cu = nu[k] > 0.0 ? dots[k] * nv[k] / (nu[k] * den * den) : 0.0;
                const double cv = nv[k] > 0.0 ? dots[k] * nu[k] / (nv[k] * den * den) : 0.0;
                for (std::size_t j = 0; j < w.len; ++j) {
                    const std::size_t i = base + j * w.inner;
                    if (gu) gu[i] += g * (pv.data[i] / den - cu * pu.data[i]);
                    if (gv) gv[i] += g * (pu.data[i] / den - cv * pv.data[i]);
                }
            }
    }, "cosine_sim");
}

// ---- sequence helpers -----------------------------------------------------------------

Tensor unfold_time(const Tensor& x, std::size_t kernel, std::size_t stride) {
    require(x.rank() == 3, "unfold_time: expected [B,T,C], got " + shape_str(x.shape()));
    require(kernel >= 1 && stride >= 1, "unfold_time: kernel and stride must be positive");
    const std::size_t B = x.shape()[0], T = x.shape()[1], C = x.shape()[2];
    const std::size_t To = (T + stride - 1) / stride;
    const long left = static_cast<long>((kernel - 1) / 2);
    const std::size_t W = kernel * C;
    // src[i] is the flat input offset for output element i, or -1 for padding.
    std::vector<long> src(B * To * W, -1);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t t = 0; t < To; ++t)
            for (std::size_t k = 0; k < kernel; ++k) {
                const long ti = static_cast<long>(t * stride + k) - left;
                if (ti < 0 || ti >= static_cast<long>(T)) continue;
                for (std::size_t c = 0; c < C; ++c)
                    src[(b * To + t) * W + k * C + c] = static_cast<long>((b * T + static_cast<std::size_t>(ti)) * C + c);
            }
    std::vector<double> out(src.size(), 0.0);
    const auto xd = x.data();
    for (std::size_t i = 0; i < src.size(); ++i)
        if (src[i] >= 0) out[i] = xd[static_cast<std::size_t>(src[i])];
    return make_result({B, To, W}, std::move(out), {x}, [src = std::move(src)](const Node& o) {
        double* g = parent(o, 0).ensure_grad();
        for (std::size_t i = 0; i < src.size(); ++i)
            if (src[i] >= 0) g[src[i]] += o.grad[i];
    }, "unfold_time");
}

Tensor mask_rows(const Tensor& x, std::span<const unsigned char> mask) {
    require(x.rank() >= 2, "mask_rows: expected at least [B,T]");
    const std::size_t rows = x.shape()[0] * x.shape()[1];
    require(mask.size() == rows, "mask_rows: mask size mismatch");
    const std::size_t w = x.numel() / rows;
    std::vector<double> out(x.data().begin(), x.data().end());
    for (std::size_t r = 0; r < rows; ++r)
        if (!mask[r]) std::fill_n(out.begin() + static_cast<long>(r * w), w, 0.0);
    std::vector<unsigned char> m(mask.begin(), mask.end());
    return make_result(x.shape(), std::move(out), {x}, [m = std::move(m), w](const Node& o) {
        double* g = parent(o, 0).ensure_grad();
        for (std::size_t r = 0; r < m.size(); ++r)
            if (m[r])
                for (std::size_t j = 0; j < w; ++j) g[r * w + j] += o.grad[r * w + j];
    }, "mask_rows");
}

Tensor masked_mean(const Tensor& x, std::span<const unsigned char> mask) {
    require(x.rank() == 3, "masked_mean: expected [B,T,F]");
    const std::size_t B = x.shape()[0], T = x.shape()[1], F = x.shape()[2];
    require(mask.size() == B * T, "masked_mean: mask size mismatch");
    std::vector<double> inv(B);
    std::vector<double> out(B * F, 0.0);
    const auto xd = x.data();
    for (std::size_t b = 0; b < B; ++b) {
        std::size_t count = 0;
        for (std::size_t t = 0; t < T; ++t) {
            if (!mask[b * T + t]) continue;
            ++count;
            for (std::size_t f = 0; f < F; ++f) out[b * F + f] += xd[(b * T + t) * F + f];
        }
        if (count == 0) fail(ErrorKind::Data, "masked_mean: zero valid frames in batch item " + std::to_string(b));
        inv[b] = 1.0 / static_cast<double>(count);
        for (std::size_t f = 0; f < F; ++f) out[b * F + f] *= inv[b];
    }
    std::vector<unsigned char> m(mask.begin(), mask.end());
    return make_result({B, F}, std::move(out), {x}, [m = std::move(m), inv = std::move(inv), B, T, F](const Node& o) {
        double* g = parent(o, 0).ensure_grad();
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t t = 0; t < T; ++t) {
                if (!m[b * T + t]) continue;
                for (std::size_t f = 0; f < F; ++f) g[(b * T + t) * F + f] += o.grad[b * F + f] * inv[b];
            }
    }, "masked_mean");
}

// ---- losses --------------------------------------------------------------------------

Tensor cross_entropy(const Tensor& logits, std::span<const long> targets, long ignore_index) {
    require(logits.rank() == 2, "cross_entropy: logits must be [n, V]");
    const std::size_t n = logits.shape()[0], V = logits.shape()[1];
    require(targets.size() == n, "cross_entropy: target count mismatch");
    std::vector<double> probs(n * V);
    const auto ld = logits.data();
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (targets[i] == ignore_index) continue;
        require(targets[i] >= 0 && static_cast<std::size_t>(targets[i]) < V,
                "cross_entropy: target index " + std::to_string(targets[i]) + " out of range");
        const double* row = ld.data() + i * V;
        double mx = *std::max_element(row, row + V);
        double s = 0.0;
        for (std::size_t j = 0; j < V; ++j) {
            probs[i * V + j] = std::exp(row[j] - mx);
            s += probs[i * V + j];
        }
        for (std::size_t j = 0; j < V; ++j) probs[i * V + j] /= s;
        total += mx + std::log(s) - row[targets[i]];
        ++count;
    }
    if (count == 0) fail(ErrorKind::Data, "no loss support");
    std::vector<long> tg(targets.begin(), targets.end());
    const double inv = 1.0 / static_cast<double>(count);
    return make_result({}, {total * inv}, {logits},
                       [probs = std::move(probs), tg = std::move(tg), ignore_index, inv, V](const Node& o) {
        double* g = parent(o, 0).ensure_grad();
        const double go = o.grad[0] * inv;
        for (std::size_t i = 0; i < tg.size(); ++i) {
            if (tg[i] == ignore_index) continue;
            for (std::size_t j = 0; j < V; ++j) g[i * V + j] += go * probs[i * V + j];
            g[i * V + static_cast<std::size_t>(tg[i])] -= go;
        }
    }, "cross_entropy");
}

Tensor nll_loss(const Tensor& log_probs, std::span<const long> targets) {
    require(log_probs.rank() == 2, "nll_loss: expected [n, C]");
    const std::size_t n = log_probs.shape()[0], C = log_probs.shape()[1];
    require(targets.size() == n, "nll_loss: target count mismatch");
    if (n == 0) fail(ErrorKind::Data, "no loss support");
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        require(targets[i] >= 0 && static_cast<std::size_t>(targets[i]) < C,
                "nll_loss: target index " + std::to_string(targets[i]) + " out of range");
        total -= log_probs.data()[i * C + static_cast<std::size_t>(targets[i])];
    }
    std::vector<long> tg(targets.begin(), targets.end());
    const double inv = 1.0 / static_cast<double>(n);
    return make_result({}, {total * inv}, {log_probs}, [tg = std::move(tg), inv, C](const Node& o) {
        double* g = parent(o, 0).ensure_grad();
        for (std::size_t i = 0; i < tg.size(); ++i) g[i * C + static_cast<std::size_t>(tg[i])] -= o.grad[0] * inv;
    }, "nll_loss");
}

}  // namespace spdp::ops
