#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "spdp/error.hpp"

namespace spdp {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct Node;
using BackwardFn = std::function<void(const Node& out)>;

// One value in the define-by-run graph. Parents are kept alive by the child,
// so dropping the loss tensor frees the whole graph.
struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // allocated lazily for interior nodes
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    BackwardFn backward;
    const char* op = "leaf";

    double* ensure_grad();
};

// Dense row-major float64 tensor handle. Copies share the underlying node.
class Tensor {
 public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    // Negative indices count from the back.
    std::size_t dim(int axis) const;
    std::size_t numel() const { return node_->data.size(); }

    std::span<const double> data() const { return node_->data; }
    std::span<double> mutable_data() { return node_->data; }
    std::span<const double> grad() const { return node_->grad; }
    std::span<double> mutable_grad() { return node_->grad; }
    bool has_grad() const { return !node_->grad.empty(); }
    bool requires_grad() const { return node_->requires_grad; }

    double item() const;
    double at(std::initializer_list<std::size_t> index) const;

    void zero_grad();
    // Seeds d(self)/d(self) = 1 and runs reverse-mode accumulation.
    void backward() const;
    // Same data, no history, no gradient tracking.
    Tensor detach() const;

    Node* node() const { return node_.get(); }
    const std::shared_ptr<Node>& node_ptr() const { return node_; }

 private:
    std::shared_ptr<Node> node_;
};

// Nodes reachable from a root, ordered so that every node follows its parents.
class ComputeGraph {
 public:
    explicit ComputeGraph(const Tensor& root);

    const std::vector<Node*>& nodes() const { return order_; }
    // Visits each node once, in reverse topological order.
    void backward();

 private:
    Tensor root_;
    std::vector<Node*> order_;
};

// Disables graph construction on the current thread while alive.
class NoGradGuard {
 public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
    bool previous_;
};

bool grad_enabled();

// Creates a result node; parents and the backward closure are dropped when no
// parent requires a gradient or grad mode is off.
Tensor make_result(Shape shape, std::vector<double> data,
                   std::vector<Tensor> parents, BackwardFn backward, const char* op);

namespace ops {

// ---- elementwise -----------------------------------------------------------
Tensor add(const Tensor& a, const Tensor& b);  // b's shape must be a suffix of a's
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // same shape
Tensor scale(const Tensor& a, double s);
Tensor gelu(const Tensor& x);
Tensor tanh(const Tensor& x);

// ---- reductions / shape ----------------------------------------------------
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm);
Tensor concat(const std::vector<Tensor>& xs, int axis);
Tensor slice(const Tensor& x, int axis, std::size_t start, std::size_t length);

// rows of `table` (rank 2) picked by index; index -1 yields a zero row
Tensor gather_rows(const Tensor& table, std::span<const long> index);

// ---- linear algebra --------------------------------------------------------
// x[..., K] * W[K, N] (+ bias[N])
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias = {});
// batched a[G..., M, K] * b[G..., K, N], or b[G..., N, K] when trans_b
Tensor bmm(const Tensor& a, const Tensor& b, bool trans_b = false);

// ---- normalisation / probability -------------------------------------------
// Additive mask (0 or -inf), same element count as x, applied before the exp.
Tensor softmax(const Tensor& x, int axis, std::span<const double> additive_mask = {});
Tensor log_softmax(const Tensor& x, int axis);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
Tensor cosine_sim(const Tensor& u, const Tensor& v, int axis, double eps = 1e-8);

// ---- sequence helpers ------------------------------------------------------
// x[B,T,C] -> [B, ceil(T/stride), kernel*C]; window centred on t*stride, zero padded.
Tensor unfold_time(const Tensor& x, std::size_t kernel, std::size_t stride);
// Zeroes rows of x[B,T,...] whose mask entry (B*T) is 0.
Tensor mask_rows(const Tensor& x, std::span<const unsigned char> mask);
// Mean of x[B,T,F] over valid T positions -> [B,F].
Tensor masked_mean(const Tensor& x, std::span<const unsigned char> mask);

// ---- losses ----------------------------------------------------------------
// Token-level: logits[n, V], mean over positions whose target != ignore_index.
Tensor cross_entropy(const Tensor& logits, std::span<const long> targets, long ignore_index = -1);
// Class-level: log_probs[n, C] from log_softmax, mean negative log-likelihood.
Tensor nll_loss(const Tensor& log_probs, std::span<const long> targets);

}  // namespace ops

namespace debug {
// Test hook: when set, the GELU backward returns a deliberately wrong gradient.
void set_corrupt_gelu_backward(bool on);
bool corrupt_gelu_backward();
}  // namespace debug

}  // namespace spdp
