#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "moss/tensor.hpp"

namespace moss::ad {

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// One vertex of the reverse-mode tape. `backward_fn` reads this node's grad
/// and accumulates into the inputs' grads.
struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool grad_alloc = false;
    std::vector<NodePtr> inputs;
    std::function<void(Node&)> backward_fn;

    Tensor& ensure_grad() {
        if (!grad_alloc) {
            grad = Tensor::zeros(value.shape());
            grad_alloc = true;
        }
        return grad;
    }
};

/// Handle to a tape node. Cheap to copy; graphs are freed when the last
/// handle to their loss node is dropped.
class Var {
public:
    Var() = default;
    explicit Var(NodePtr n) : node_(std::move(n)) {}

    /// Leaf variable. Parameters pass requires_grad=true, constants false.
    static Var leaf(Tensor value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Tensor& value() const { return node_->value; }
    Tensor& mutable_value() { return node_->value; }
    const Tensor& grad() const { return node_->grad; }
    bool requires_grad() const { return node_->requires_grad; }
    void zero_grad() {
        if (node_->grad_alloc) node_->grad.fill(0.0);
    }
    NodePtr node() const { return node_; }

private:
    NodePtr node_;
};

/// Runs reverse-mode accumulation from `loss` (a {1} scalar), seeding d loss/d loss = 1.
void backward(const Var& loss);

// Elementwise / arithmetic.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var square(const Var& a);

// Linear algebra and layers.
Var matmul(const Var& x, const Var& w);              // {B,I} x {I,O} -> {B,O}
Var add_rows(const Var& x, const Var& bias);         // {B,O} + {O}
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
Var dwconv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
Var relu(const Var& x);
Var avgpool2d(const Var& x, int k, int s);
Var global_avgpool(const Var& x);                    // {B,C,H,W} -> {B,C}
Var flatten(const Var& x);                           // {B,...} -> {B,D}
Var bilinear_resize(const Var& x, int out_h, int out_w);
Var mul_channels(const Var& x, const Var& w);        // {B,C,H,W} * {C}
Var mul_cols(const Var& x, const Var& w);            // {B,D} * {D}
Var broadcast_spatial(const Var& x, int h, int w);   // {B,C} -> {B,C,h,w}

// Softmax family.
Var softmax_rows(const Var& x);                                      // {B,N}
Var cross_entropy_with_logits(const Var& logits, const std::vector<int>& labels);  // -> {1}

// Reductions / reshaping helpers.
Var mean_all(const Var& x);                // -> {1}
Var sum_all(const Var& x);                 // -> {1}
Var mean_rows(const Var& x);               // {B,N} -> {N}
Var concat_cols(const std::vector<Var>& parts);  // each {B,k_i} -> {B, sum k_i}
Var gather_scalar(const Var& v, int index);      // 1-d -> {1}

}  // namespace moss::ad
