#include "spdp/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>
#include <utility>

namespace spdp {

namespace {

thread_local bool g_grad_enabled = true;

}  // namespace

std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

double* Node::ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad.data();
}

// ---- Tensor -----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    std::vector<double> values(spdp::numel(shape), value);
    return from(std::move(shape), std::move(values), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    for (auto e : shape) require(e > 0, "tensor extents must be positive: " + shape_str(shape));
    require(spdp::numel(shape) == values.size(),
            "shape " + shape_str(shape) + " does not match " + std::to_string(values.size()) + " values");
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data = std::move(values);
    node->requires_grad = requires_grad;
    if (requires_grad) node->grad.assign(node->data.size(), 0.0);
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

std::size_t Tensor::dim(int axis) const {
    const int r = static_cast<int>(rank());
    const int a = axis < 0 ? axis + r : axis;
    require(a >= 0 && a < r, "axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
    return node_->shape[static_cast<std::size_t>(a)];
}

double Tensor::item() const {
    require(numel() == 1, "item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
    require(index.size() == rank(), "index rank mismatch");
    std::size_t flat = 0;
    std::size_t i = 0;
    for (auto v : index) {
        require(v < node_->shape[i], "index out of range");
        flat = flat * node_->shape[i] + v;
        ++i;
    }
    return node_->data[flat];
}

void Tensor::zero_grad() {
    if (node_->requires_grad) node_->grad.assign(node_->data.size(), 0.0);
}

void Tensor::backward() const {
    require(numel() == 1, "backward() needs a scalar root, got " + shape_str(shape()), ErrorKind::Numeric);
    ComputeGraph graph(*this);
    graph.backward();
}

Tensor Tensor::detach() const {
    auto node = std::make_shared<Node>();
    node->shape = node_->shape;
    node->data = node_->data;
    node->op = "detach";
    return Tensor(std::move(node));
}

// ---- graph ------------------------------------------------------------------

ComputeGraph::ComputeGraph(const Tensor& root) : root_(root) {
    std::unordered_set<Node*> seen;
    // Iterative post-order DFS: a node is emitted after all of its parents.
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.node(), 0);
    seen.insert(root.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order_.push_back(node);
            stack.pop_back();
        }
    }
}

void ComputeGraph::backward() {
    Node* root = root_.node();
    if (!root->requires_grad) return;
    root->ensure_grad()[0] += 1.0;
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
        Node* n = *it;
        if (n->backward && !n->grad.empty()) n->backward(*n);
    }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
                   BackwardFn backward, const char* op) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->op = op;
    bool needs = false;
    if (g_grad_enabled)
        for (const auto& p : parents) needs = needs || p.requires_grad();
    if (needs) {
        node->requires_grad = true;
        node->parents.reserve(parents.size());
        for (const auto& p : parents) node->parents.push_back(p.node_ptr());
        node->backward = std::move(backward);
    }
    return Tensor(std::move(node));
}

namespace debug {
namespace {
bool g_corrupt_gelu = false;
}
void set_corrupt_gelu_backward(bool on) { g_corrupt_gelu = on; }
bool corrupt_gelu_backward() { return g_corrupt_gelu; }
}  // namespace debug

}  // namespace spdp
