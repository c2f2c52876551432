#pragma once

#include <functional>
#include <memory>
#include <unordered_map>
#include <vector>

#include "mage/rng.hpp"
#include "mage/tensor.hpp"

namespace mage::ag {

// A trainable parameter: value plus accumulated gradient.
struct Param {
    std::string name;
    Tensor value;
    Tensor grad;

    Param() = default;
    Param(std::string n, Tensor t) : name(std::move(n)), value(std::move(t)), grad(value.shape) {}
    void zero_grad() { grad.zero(); }
};

using NodeId = int;

// Eager reverse-mode tape. Ops compute their value immediately and record a
// backward closure; backward() replays closures in reverse creation order.
class Graph {
  public:
    explicit Graph(bool training = true) : training_(training) {}

    bool training() const { return training_; }

    // Leaves.
    NodeId input(Tensor t);          // constant, no gradient
    NodeId use(Param& p);            // parameter leaf; cached per Param per graph

    // Elementwise / shape.
    NodeId add(NodeId a, NodeId b);
    NodeId sub(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    NodeId scale(NodeId a, float s);
    NodeId add_scalar_nodes(NodeId a, NodeId b, float wb); // scalar a + wb * scalar b
    NodeId gelu(NodeId a);
    NodeId tanh_op(NodeId a);
    NodeId dropout(NodeId a, float p, RngStream& rng); // identity when !training_ or p==0

    // Linear algebra ([m,k] x [k,n], optional transposes on stored operands).
    NodeId matmul(NodeId a, NodeId b, bool trans_a = false, bool trans_b = false);
    NodeId add_bias(NodeId x, NodeId bias); // x[n,m] + bias[m] per row
    NodeId transpose(NodeId a);

    // Row/column rearrangement. gather_rows backward scatter-adds, so repeated
    // indices (nearest-neighbor upsampling) accumulate correctly.
    NodeId gather_rows(NodeId x, std::vector<int> idx);
    NodeId slice_cols(NodeId x, int c0, int c1);
    NodeId concat_cols(const std::vector<NodeId>& xs);
    NodeId concat_rows(const std::vector<NodeId>& xs);
    NodeId mean_rows(NodeId x); // [n,m] -> [1,m]

    // Normalization / activations over rows.
    NodeId layer_norm(NodeId x, NodeId gain, NodeId bias, float eps = 1e-5f);
    NodeId softmax_rows(NodeId x);
    NodeId l2_normalize_rows(NodeId x, float eps = 1e-8f);

    // Smoothed cross-entropy, mean over rows with weight > 0.
    // weights empty => all rows weight 1. Returns scalar node.
    NodeId cross_entropy_rows(NodeId logits, const std::vector<int>& targets, float smoothing,
                              const std::vector<float>& row_weights = {});

    // Scalar reductions.
    NodeId mse(NodeId a, NodeId b); // mean squared error over all elements
    NodeId sum_squares(NodeId a);   // sum of squares (not averaged)

    // Gradient barrier: value copied, no gradient flows to the argument.
    NodeId stop_gradient(NodeId a);

    // Straight-through: value of q, gradient passed unchanged to f.
    NodeId straight_through(NodeId f, NodeId q);

    // Convolution support: k x k patches of a [H*W, C] channel-last feature map,
    // zero padding, output [Ho*Wo, k*k*C].
    NodeId im2col(NodeId x, int H, int W, int k, int stride, int pad);

    // Access.
    const Tensor& val(NodeId id) const { return nodes_[static_cast<size_t>(id)].value; }
    Tensor& val_mut(NodeId id) { return nodes_[static_cast<size_t>(id)].value; }
    const Tensor& grad(NodeId id) const { return nodes_[static_cast<size_t>(id)].grad; }
    float scalar(NodeId id) const { return nodes_[static_cast<size_t>(id)].value.v.at(0); }

    // Seeds d(loss)=1 and runs the tape backwards. Parameter gradients are
    // accumulated into their Param::grad buffers.
    void backward(NodeId loss);

    size_t size() const { return nodes_.size(); }
    void set_check_finite(bool b) { check_finite_ = b; }

  private:
    struct Node {
        Tensor value;
        Tensor grad; // lazily allocated
        std::function<void()> back; // null for leaves
        Param* param = nullptr;
        bool needs_grad = false;
    };

    NodeId push(Tensor value, const std::vector<NodeId>& parents, std::function<void()> back);
    // Gradient accumulator for a parent; nullptr when no gradient is needed there.
    Tensor* gacc(NodeId id);

    std::vector<Node> nodes_;
    std::unordered_map<Param*, NodeId> param_ids_;
    bool training_;
    bool check_finite_ = false;
};

// sgemm wrapper (row-major). C = A x B with optional stored-operand transposes.
void gemm(const float* a, const float* b, float* c, int m, int n, int k, bool trans_a, bool trans_b,
          float beta = 0.0f);

} // namespace mage::ag
