#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cclab/tensor.hpp"

namespace cclab {

class EngineError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Inconsistent shapes, either at graph construction or when a binding disagrees with its leaf.
class ShapeError : public EngineError {
public:
    using EngineError::EngineError;
};

class BindingError : public EngineError {
public:
    using EngineError::EngineError;
};

struct NodeId {
    std::size_t index = std::numeric_limits<std::size_t>::max();
    bool valid() const { return index != std::numeric_limits<std::size_t>::max(); }
    friend bool operator==(NodeId, NodeId) = default;
};

using Bindings = std::map<std::string, Tensor>;

/// User-supplied primitive. `backward` must accumulate into `grad_inputs`.
struct CustomOp {
    std::string name;
    std::function<void(std::span<const Tensor* const> inputs, Tensor& out)> forward;
    std::function<void(std::span<const Tensor* const> inputs, const Tensor& out, const Tensor& grad_out,
                       std::span<Tensor* const> grad_inputs)>
        backward;
};

enum class OpKind {
    Parameter,
    Input,
    MatMul,
    BatchMatMul,
    Add,
    Multiply,
    Scale,
    Sum,
    RowSoftmax,
    RmsNorm,
    Rotary,
    Gather,
    CrossEntropy,
    Silu,
    Sigmoid,
    Reshape,
    Permute,
    RepeatHeads,
    CausalMask,
    Custom,
};

const char* op_name(OpKind kind);

/// Static computation graph over dense tensors with reverse-mode differentiation.
///
/// Nodes are appended in topological order: every op can only reference nodes that
/// already exist. Shapes are fixed at construction and checked there; `forward`
/// binds leaf tensors by name and evaluates every node, `backward` propagates
/// the gradient of a scalar node back to the leaves.
///
/// A graph instance holds its evaluation buffers and must not be evaluated from
/// several threads at once.
class Graph {
public:
    /// Trainable leaf; gradients are reported for these.
    NodeId parameter(std::string name, Shape shape);
    /// Non-trainable leaf (tokens, targets, fixed data).
    NodeId input(std::string name, Shape shape);

    /// [M,K] x [K,N] -> [M,N]
    NodeId matmul(NodeId a, NodeId b);
    /// [G,M,K] x [G,K,N] -> [G,M,N]; with `transpose_b`, b is [G,N,K].
    NodeId batch_matmul(NodeId a, NodeId b, bool transpose_b = false);
    /// Elementwise; `b` may instead be 1-D with the length of a's last extent.
    NodeId add(NodeId a, NodeId b);
    NodeId multiply(NodeId a, NodeId b);
    NodeId scale(NodeId a, double factor);
    NodeId sum(NodeId a);
    /// Softmax over the last extent, row-max subtracted.
    NodeId row_softmax(NodeId a);
    /// x / sqrt(mean(x^2) + eps) over the last extent.
    NodeId rms_normalize(NodeId a, double eps = 1e-6);
    /// Rotary position rotation of [G,T,D] (D even); position is the index along T.
    /// Pairs are (i, i + D/2), rotated by t * base^(-2i/D).
    NodeId rotary(NodeId a, double base);
    /// Rows of `table` [V,D] selected by integer-valued `ids` [N] -> [N,D].
    NodeId gather_rows(NodeId table, NodeId ids);
    /// Mean over rows of -log softmax(logits)[target]; logits [N,V], targets [N].
    NodeId cross_entropy(NodeId logits, NodeId targets);
    NodeId silu(NodeId a);
    NodeId sigmoid(NodeId a);
    NodeId reshape(NodeId a, Shape shape);
    NodeId permute(NodeId a, std::vector<std::size_t> perm);
    /// [B,H,T,D] -> [B,H*groups,T,D]; output head h reads input head h / groups.
    NodeId repeat_heads(NodeId a, std::size_t groups);
    /// [G,T,T]: entries above the diagonal become -inf.
    NodeId causal_mask(NodeId a);
    NodeId custom(std::shared_ptr<const CustomOp> op, std::vector<NodeId> inputs, Shape out_shape);

    /// Names a node so that `forward` reports its value.
    void name_output(NodeId id, std::string name);

    /// Evaluates every node. Returns the values of named outputs.
    std::map<std::string, Tensor> forward(const Bindings& bindings);
    /// Gradients of `loss` (a single-element node) for every parameter leaf.
    std::map<std::string, Tensor> backward(NodeId loss);

    const Tensor& value(NodeId id) const;
    const Tensor& grad(NodeId id) const;
    const Shape& shape(NodeId id) const;
    OpKind kind(NodeId id) const;
    std::string describe(NodeId id) const;
    std::optional<NodeId> find_leaf(const std::string& name) const;
    std::vector<std::string> parameter_names() const;
    std::size_t size() const { return nodes_.size(); }
    bool evaluated() const { return evaluated_; }

private:
    struct Node {
        OpKind kind;
        std::vector<std::size_t> inputs;
        Shape shape;
        std::string name;
        double attr = 0.0;
        std::vector<std::size_t> iattr;
        bool flag = false;
        std::shared_ptr<const CustomOp> custom;
        Tensor value;
        Tensor grad;
    };

    NodeId push(Node node);
    NodeId leaf(OpKind kind, std::string name, Shape shape);
    const Node& node(NodeId id) const;
    void eval_node(Node& n);
    void backprop_node(std::size_t index);

    std::vector<Node> nodes_;
    std::map<std::string, std::size_t> leaves_;
    std::map<std::string, std::size_t> outputs_;
    bool evaluated_ = false;
};

}  // namespace cclab
