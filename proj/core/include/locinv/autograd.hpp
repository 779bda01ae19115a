#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "locinv/tensor.hpp"

namespace locinv::ag {

// Reverse-mode autodiff over dense double tensors. Graphs are built per
// forward pass; leaves (parameters, learnable embeddings) persist across
// passes so optimizer state can key off their nodes.
struct Node {
    Tensor value;
    Tensor grad;  // allocated on first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Accumulates d(out)/d(parent) * out_grad into each parent's grad.
    std::function<void(const Tensor& out_grad)> backprop;

    void ensure_grad();
    void accumulate(const Tensor& g);
};

class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    static Var constant(Tensor v);
    static Var leaf(Tensor v);  // requires_grad = true

    const Tensor& value() const { return node_->value; }
    Tensor& value() { return node_->value; }
    const Tensor& grad() const { return node_->grad; }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    bool defined() const { return static_cast<bool>(node_); }
    std::shared_ptr<Node> node() const { return node_; }

    void zero_grad();

private:
    std::shared_ptr<Node> node_;
};

// Runs the reverse sweep from a scalar root (shape {1}), seeding d(root)=1.
void backward(const Var& root);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);       // elementwise
Var scale(const Var& a, scalar_t s);
Var add_scalar(const Var& a, scalar_t s);
Var vpow(const Var& a, scalar_t p);        // elementwise, positive inputs
Var silu(const Var& a);
Var relu(const Var& a);

Var matmul(const Var& a, const Var& b);    // [m x k] * [k x n]
Var matmul_nt(const Var& a, const Var& b); // [m x k] * [n x k]^T -> [m x n]
Var softmax_rows(const Var& a);            // [m x n], softmax over n
Var layer_norm_rows(const Var& a, const Var& gain, const Var& bias);

Var concat_rows(const std::vector<Var>& rows);  // k vectors [d] -> [k x d]
Var col(const Var& a, int j);                   // [m x n] -> [m]
Var reshape(const Var& a, std::vector<int> shape);
Var add_row_bias(const Var& x, const Var& b);   // [m x n] + [n] per row

Var to_cell_rows(const Var& x);                  // [C,H,W] -> [H*W x C]
Var from_cell_rows(const Var& x, int h, int w);  // [H*W x C] -> [C,H,W]

Var conv3x3(const Var& x, const Var& w, const Var& b);  // [C,H,W], [Co,Ci,3,3], [Co]
Var avg_pool2(const Var& x);
Var upsample2(const Var& x);  // nearest
Var concat_channels(const Var& a, const Var& b);
Var add_channel_bias(const Var& x, const Var& b);

Var sum(const Var& a);             // -> {1}
Var mean(const Var& a);            // -> {1}
Var dot(const Var& a, const Var& b);
Var mean_squared_error(const Var& a, const Var& b);

// cos(a, b) over flattened entries; caller handles the zero-vector case.
Var cosine(const Var& a, const Var& b);

}  // namespace locinv::ag
