#include "cclab/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cclab {

const char* op_name(OpKind kind) {
    switch (kind) {
    case OpKind::Parameter: return "parameter";
    case OpKind::Input: return "input";
    case OpKind::MatMul: return "matmul";
    case OpKind::BatchMatMul: return "batch_matmul";
    case OpKind::Add: return "add";
    case OpKind::Multiply: return "multiply";
    case OpKind::Scale: return "scale";
    case OpKind::Sum: return "sum";
    case OpKind::RowSoftmax: return "row_softmax";
    case OpKind::RmsNorm: return "rms_normalize";
    case OpKind::Rotary: return "rotary";
    case OpKind::Gather: return "gather_rows";
    case OpKind::CrossEntropy: return "cross_entropy";
    case OpKind::Silu: return "silu";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Reshape: return "reshape";
    case OpKind::Permute: return "permute";
    case OpKind::RepeatHeads: return "repeat_heads";
    case OpKind::CausalMask: return "causal_mask";
    case OpKind::Custom: return "custom";
    }
    return "?";
}

namespace {

std::size_t last_extent(const Shape& s) { return s.back(); }

// b broadcasts along a when it is 1-D with a's last extent.
bool is_row_broadcast(const Shape& a, const Shape& b) {
    return a != b && b.size() == 1 && b[0] == a.back();
}

double sigmoid_of(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::vector<std::size_t> strides_of(const Shape& s) {
    std::vector<std::size_t> st(s.size(), 1);
    for (std::size_t d = s.size(); d-- > 1;) st[d - 1] = st[d] * s[d];
    return st;
}

// Calls fn(out_index, in_index) for every element of a permuted view.
template <class Fn>
void for_each_permuted(const Shape& in_shape, const std::vector<std::size_t>& perm, Fn&& fn) {
    const auto in_strides = strides_of(in_shape);
    const std::size_t rank = in_shape.size();
    Shape out_shape(rank);
    std::vector<std::size_t> step(rank);
    for (std::size_t d = 0; d < rank; ++d) {
        out_shape[d] = in_shape[perm[d]];
        step[d] = in_strides[perm[d]];
    }
    std::vector<std::size_t> idx(rank, 0);
    const std::size_t total = shape_numel(in_shape);
    std::size_t in = 0;
    for (std::size_t out = 0; out < total; ++out) {
        fn(out, in);
        for (std::size_t d = rank; d-- > 0;) {
            if (++idx[d] < out_shape[d]) {
                in += step[d];
                break;
            }
            in -= step[d] * (out_shape[d] - 1);
            idx[d] = 0;
        }
    }
}

std::size_t checked_index(double v, std::size_t bound, const std::string& what) {
    if (!(v >= 0.0) || v != std::floor(v) || v >= static_cast<double>(bound))
        throw EngineError(what + ": index " + std::to_string(v) + " out of range [0, " + std::to_string(bound) + ")");
    return static_cast<std::size_t>(v);
}

}  // namespace

// ---------------------------------------------------------------------------
// construction

NodeId Graph::push(Node n) {
    nodes_.push_back(std::move(n));
    evaluated_ = false;
    return NodeId{nodes_.size() - 1};
}

const Graph::Node& Graph::node(NodeId id) const {
    if (!id.valid() || id.index >= nodes_.size()) throw EngineError("invalid node id");
    return nodes_[id.index];
}

NodeId Graph::leaf(OpKind kind, std::string name, Shape shape) {
    if (leaves_.count(name)) throw EngineError("duplicate leaf name '" + name + "'");
    if (shape.empty() || shape_numel(shape) == 0)
        throw ShapeError("leaf '" + name + "' needs a non-empty shape");
    Node n{kind, {}, std::move(shape), name};
    auto id = push(std::move(n));
    leaves_[name] = id.index;
    return id;
}

NodeId Graph::parameter(std::string name, Shape shape) { return leaf(OpKind::Parameter, std::move(name), std::move(shape)); }
NodeId Graph::input(std::string name, Shape shape) { return leaf(OpKind::Input, std::move(name), std::move(shape)); }

NodeId Graph::matmul(NodeId a, NodeId b) {
    const auto& sa = node(a).shape;
    const auto& sb = node(b).shape;
    if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0])
        throw ShapeError("matmul#" + std::to_string(nodes_.size()) + ": cannot multiply " + shape_str(sa) + " by " +
                         shape_str(sb));
    return push(Node{OpKind::MatMul, {a.index, b.index}, {sa[0], sb[1]}});
}

NodeId Graph::batch_matmul(NodeId a, NodeId b, bool transpose_b) {
    const auto& sa = node(a).shape;
    const auto& sb = node(b).shape;
    if (sa.size() != 3 || sb.size() != 3)
        throw ShapeError("batch_matmul#" + std::to_string(nodes_.size()) + ": expects rank-3 operands, got " +
                         shape_str(sa) + " and " + shape_str(sb));
    const std::size_t k_b = transpose_b ? sb[2] : sb[1];
    const std::size_t n_b = transpose_b ? sb[1] : sb[2];
    if (sa[0] != sb[0] || sa[2] != k_b)
        throw ShapeError("batch_matmul#" + std::to_string(nodes_.size()) + ": incompatible " + shape_str(sa) +
                         " and " + shape_str(sb) + (transpose_b ? " (b transposed)" : ""));
    Node n{OpKind::BatchMatMul, {a.index, b.index}, {sa[0], sa[1], n_b}};
    n.flag = transpose_b;
    return push(std::move(n));
}

NodeId Graph::add(NodeId a, NodeId b) {
    const auto& sa = node(a).shape;
    const auto& sb = node(b).shape;
    if (sa != sb && !is_row_broadcast(sa, sb))
        throw ShapeError("add#" + std::to_string(nodes_.size()) + ": " + shape_str(sa) + " vs " + shape_str(sb));
    return push(Node{OpKind::Add, {a.index, b.index}, sa});
}

NodeId Graph::multiply(NodeId a, NodeId b) {
    const auto& sa = node(a).shape;
    const auto& sb = node(b).shape;
    if (sa != sb && !is_row_broadcast(sa, sb))
        throw ShapeError("multiply#" + std::to_string(nodes_.size()) + ": " + shape_str(sa) + " vs " + shape_str(sb));
    return push(Node{OpKind::Multiply, {a.index, b.index}, sa});
}

NodeId Graph::scale(NodeId a, double factor) {
    Node n{OpKind::Scale, {a.index}, node(a).shape};
    n.attr = factor;
    return push(std::move(n));
}

NodeId Graph::sum(NodeId a) { return push(Node{OpKind::Sum, {a.index}, {1}}); }

NodeId Graph::row_softmax(NodeId a) { return push(Node{OpKind::RowSoftmax, {a.index}, node(a).shape}); }

NodeId Graph::rms_normalize(NodeId a, double eps) {
    Node n{OpKind::RmsNorm, {a.index}, node(a).shape};
    n.attr = eps;
    return push(std::move(n));
}

NodeId Graph::rotary(NodeId a, double base) {
    const auto& sa = node(a).shape;
    if (sa.size() != 3 || sa[2] % 2 != 0)
        throw ShapeError("rotary#" + std::to_string(nodes_.size()) + ": expects [G,T,D] with even D, got " +
                         shape_str(sa));
    Node n{OpKind::Rotary, {a.index}, sa};
    n.attr = base;
    return push(std::move(n));
}

NodeId Graph::gather_rows(NodeId table, NodeId ids) {
    const auto& st = node(table).shape;
    const auto& si = node(ids).shape;
    if (st.size() != 2 || si.size() != 1)
        throw ShapeError("gather_rows#" + std::to_string(nodes_.size()) + ": table " + shape_str(st) + ", ids " +
                         shape_str(si));
    return push(Node{OpKind::Gather, {table.index, ids.index}, {si[0], st[1]}});
}

NodeId Graph::cross_entropy(NodeId logits, NodeId targets) {
    const auto& sl = node(logits).shape;
    const auto& st = node(targets).shape;
    if (sl.size() != 2 || st.size() != 1 || st[0] != sl[0])
        throw ShapeError("cross_entropy#" + std::to_string(nodes_.size()) + ": logits " + shape_str(sl) +
                         ", targets " + shape_str(st));
    return push(Node{OpKind::CrossEntropy, {logits.index, targets.index}, {1}});
}

NodeId Graph::silu(NodeId a) { return push(Node{OpKind::Silu, {a.index}, node(a).shape}); }
NodeId Graph::sigmoid(NodeId a) { return push(Node{OpKind::Sigmoid, {a.index}, node(a).shape}); }

NodeId Graph::reshape(NodeId a, Shape shape) {
    const auto& sa = node(a).shape;
    if (shape.empty() || shape_numel(shape) != shape_numel(sa))
        throw ShapeError("reshape#" + std::to_string(nodes_.size()) + ": " + shape_str(sa) + " -> " + shape_str(shape));
    return push(Node{OpKind::Reshape, {a.index}, std::move(shape)});
}

NodeId Graph::permute(NodeId a, std::vector<std::size_t> perm) {
    const auto& sa = node(a).shape;
    auto sorted = perm;
    std::sort(sorted.begin(), sorted.end());
    std::vector<std::size_t> expect(sa.size());
    std::iota(expect.begin(), expect.end(), 0);
    if (sorted != expect)
        throw ShapeError("permute#" + std::to_string(nodes_.size()) + ": invalid permutation for " + shape_str(sa));
    Shape out(sa.size());
    for (std::size_t d = 0; d < sa.size(); ++d) out[d] = sa[perm[d]];
    Node n{OpKind::Permute, {a.index}, out};
    n.iattr = std::move(perm);
    return push(std::move(n));
}

NodeId Graph::repeat_heads(NodeId a, std::size_t groups) {
    const auto& sa = node(a).shape;
    if (sa.size() != 4 || groups == 0)
        throw ShapeError("repeat_heads#" + std::to_string(nodes_.size()) + ": expects [B,H,T,D], got " + shape_str(sa));
    Node n{OpKind::RepeatHeads, {a.index}, {sa[0], sa[1] * groups, sa[2], sa[3]}};
    n.iattr = {groups};
    return push(std::move(n));
}

NodeId Graph::causal_mask(NodeId a) {
    const auto& sa = node(a).shape;
    if (sa.size() != 3 || sa[1] != sa[2])
        throw ShapeError("causal_mask#" + std::to_string(nodes_.size()) + ": expects [G,T,T], got " + shape_str(sa));
    return push(Node{OpKind::CausalMask, {a.index}, sa});
}

NodeId Graph::custom(std::shared_ptr<const CustomOp> op, std::vector<NodeId> inputs, Shape out_shape) {
    if (!op || !op->forward || !op->backward) throw EngineError("custom op needs forward and backward");
    Node n{OpKind::Custom, {}, std::move(out_shape), op->name};
    for (auto id : inputs) {
        node(id);
        n.inputs.push_back(id.index);
    }
    n.custom = std::move(op);
    return push(std::move(n));
}

void Graph::name_output(NodeId id, std::string name) {
    node(id);
    outputs_[std::move(name)] = id.index;
}

// ---------------------------------------------------------------------------
// queries

const Tensor& Graph::value(NodeId id) const {
    if (!evaluated_) throw EngineError("value requested before forward");
    return node(id).value;
}

const Tensor& Graph::grad(NodeId id) const { return node(id).grad; }
const Shape& Graph::shape(NodeId id) const { return node(id).shape; }
OpKind Graph::kind(NodeId id) const { return node(id).kind; }

std::string Graph::describe(NodeId id) const {
    const auto& n = node(id);
    std::string s = std::string(op_name(n.kind)) + "#" + std::to_string(id.index);
    if (!n.name.empty()) s += " '" + n.name + "'";
    return s;
}

std::optional<NodeId> Graph::find_leaf(const std::string& name) const {
    auto it = leaves_.find(name);
    if (it == leaves_.end()) return std::nullopt;
    return NodeId{it->second};
}

std::vector<std::string> Graph::parameter_names() const {
    std::vector<std::string> names;
    for (const auto& [name, idx] : leaves_)
        if (nodes_[idx].kind == OpKind::Parameter) names.push_back(name);
    return names;
}

// ---------------------------------------------------------------------------
// forward

std::map<std::string, Tensor> Graph::forward(const Bindings& bindings) {
    evaluated_ = false;
    for (auto& n : nodes_) {
        if (n.kind == OpKind::Parameter || n.kind == OpKind::Input) {
            auto it = bindings.find(n.name);
            if (it == bindings.end()) throw BindingError("unbound leaf '" + n.name + "'");
            if (it->second.shape() != n.shape)
                throw ShapeError("leaf '" + n.name + "' expects " + shape_str(n.shape) + ", bound " +
                                 shape_str(it->second.shape()));
            n.value.reset(n.shape);
            std::copy(it->second.data().begin(), it->second.data().end(), n.value.data().begin());
        } else {
            n.value.reset(n.shape);
            eval_node(n);
        }
    }
    evaluated_ = true;
    std::map<std::string, Tensor> out;
    for (const auto& [name, idx] : outputs_) out.emplace(name, nodes_[idx].value);
    return out;
}

void Graph::eval_node(Node& n) {
    auto& out = n.value.storage();
    auto in = [&](std::size_t k) -> const Tensor& { return nodes_[n.inputs[k]].value; };

    switch (n.kind) {
    case OpKind::Parameter:
    case OpKind::Input: break;

    case OpKind::MatMul: {
        const auto& a = in(0).storage();
        const auto& b = in(1).storage();
        const std::size_t M = n.shape[0], N = n.shape[1], K = in(0).dim(1);
        std::fill(out.begin(), out.end(), 0.0);
        for (std::size_t i = 0; i < M; ++i) {
            double* row = &out[i * N];
            for (std::size_t k = 0; k < K; ++k) {
                const double aik = a[i * K + k];
                const double* brow = &b[k * N];
                for (std::size_t j = 0; j < N; ++j) row[j] += aik * brow[j];
            }
        }
        break;
    }

    case OpKind::BatchMatMul: {
        const auto& a = in(0).storage();
        const auto& b = in(1).storage();
        const std::size_t G = n.shape[0], M = n.shape[1], N = n.shape[2], K = in(0).dim(2);
        std::fill(out.begin(), out.end(), 0.0);
        for (std::size_t g = 0; g < G; ++g) {
            const double* ag = &a[g * M * K];
            const double* bg = &b[g * K * N];
            double* og = &out[g * M * N];
            if (n.flag) {
                for (std::size_t i = 0; i < M; ++i)
                    for (std::size_t j = 0; j < N; ++j) {
                        double s = 0.0;
                        for (std::size_t k = 0; k < K; ++k) s += ag[i * K + k] * bg[j * K + k];
                        og[i * N + j] = s;
                    }
            } else {
                for (std::size_t i = 0; i < M; ++i)
                    for (std::size_t k = 0; k < K; ++k) {
                        const double aik = ag[i * K + k];
                        for (std::size_t j = 0; j < N; ++j) og[i * N + j] += aik * bg[k * N + j];
                    }
            }
        }
        break;
    }

    case OpKind::Add:
    case OpKind::Multiply: {
        const auto& a = in(0).storage();
        const auto& b = in(1).storage();
        const bool mul = n.kind == OpKind::Multiply;
        if (in(1).shape() == n.shape) {
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = mul ? a[i] * b[i] : a[i] + b[i];
        } else {
            const std::size_t D = b.size();
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = mul ? a[i] * b[i % D] : a[i] + b[i % D];
        }
        break;
    }

    case OpKind::Scale: {
        const auto& a = in(0).storage();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = n.attr * a[i];
        break;
    }

    case OpKind::Sum: {
        double s = 0.0;
        for (double v : in(0).data()) s += v;
        out[0] = s;
        break;
    }

    case OpKind::RowSoftmax: {
        const auto& a = in(0).storage();
        const std::size_t D = last_extent(n.shape), R = out.size() / D;
        for (std::size_t r = 0; r < R; ++r) {
            const double* x = &a[r * D];
            double* y = &out[r * D];
            const double mx = *std::max_element(x, x + D);
            double z = 0.0;
            for (std::size_t j = 0; j < D; ++j) z += (y[j] = std::exp(x[j] - mx));
            for (std::size_t j = 0; j < D; ++j) y[j] /= z;
        }
        break;
    }

    case OpKind::RmsNorm: {
        const auto& a = in(0).storage();
        const std::size_t D = last_extent(n.shape), R = out.size() / D;
        for (std::size_t r = 0; r < R; ++r) {
            const double* x = &a[r * D];
            double ms = 0.0;
            for (std::size_t j = 0; j < D; ++j) ms += x[j] * x[j];
            const double inv = 1.0 / std::sqrt(ms / static_cast<double>(D) + n.attr);
            for (std::size_t j = 0; j < D; ++j) out[r * D + j] = x[j] * inv;
        }
        break;
    }

    case OpKind::Rotary: {
        const auto& a = in(0).storage();
        const std::size_t G = n.shape[0], T = n.shape[1], D = n.shape[2], H = D / 2;
        for (std::size_t g = 0; g < G; ++g)
            for (std::size_t t = 0; t < T; ++t) {
                const std::size_t off = (g * T + t) * D;
                for (std::size_t i = 0; i < H; ++i) {
                    const double theta =
                        static_cast<double>(t) * std::pow(n.attr, -2.0 * static_cast<double>(i) / static_cast<double>(D));
                    const double c = std::cos(theta), s = std::sin(theta);
                    const double x0 = a[off + i], x1 = a[off + i + H];
                    out[off + i] = x0 * c - x1 * s;
                    out[off + i + H] = x0 * s + x1 * c;
                }
            }
        break;
    }

    case OpKind::Gather: {
        const auto& table = in(0);
        const auto& ids = in(1).storage();
        const std::size_t V = table.dim(0), D = table.dim(1);
        for (std::size_t r = 0; r < ids.size(); ++r) {
            const std::size_t id = checked_index(ids[r], V, "gather_rows");
            std::copy_n(&table.storage()[id * D], D, &out[r * D]);
        }
        break;
    }

    case OpKind::CrossEntropy: {
        const auto& logits = in(0).storage();
        const auto& targets = in(1).storage();
        const std::size_t N = in(0).dim(0), V = in(0).dim(1);
        double total = 0.0;
        for (std::size_t r = 0; r < N; ++r) {
            const double* x = &logits[r * V];
            const std::size_t t = checked_index(targets[r], V, "cross_entropy target");
            const double mx = *std::max_element(x, x + V);
            double z = 0.0;
            for (std::size_t j = 0; j < V; ++j) z += std::exp(x[j] - mx);
            total += std::log(z) + mx - x[t];
        }
        out[0] = total / static_cast<double>(N);
        break;
    }

    case OpKind::Silu: {
        const auto& a = in(0).storage();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * sigmoid_of(a[i]);
        break;
    }

    case OpKind::Sigmoid: {
        const auto& a = in(0).storage();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid_of(a[i]);
        break;
    }

    case OpKind::Reshape: std::copy(in(0).data().begin(), in(0).data().end(), out.begin()); break;

    case OpKind::Permute: {
        const auto& a = in(0).storage();
        for_each_permuted(in(0).shape(), n.iattr, [&](std::size_t o, std::size_t i) { out[o] = a[i]; });
        break;
    }

    case OpKind::RepeatHeads: {
        const auto& a = in(0).storage();
        const std::size_t B = n.shape[0], H = n.shape[1], block = n.shape[2] * n.shape[3];
        const std::size_t groups = n.iattr[0], Hkv = H / groups;
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t h = 0; h < H; ++h)
                std::copy_n(&a[(b * Hkv + h / groups) * block], block, &out[(b * H + h) * block]);
        break;
    }

    case OpKind::CausalMask: {
        const auto& a = in(0).storage();
        const std::size_t G = n.shape[0], T = n.shape[1];
        const double ninf = -std::numeric_limits<double>::infinity();
        for (std::size_t g = 0; g < G; ++g)
            for (std::size_t i = 0; i < T; ++i)
                for (std::size_t j = 0; j < T; ++j) {
                    const std::size_t k = (g * T + i) * T + j;
                    out[k] = j > i ? ninf : a[k];
                }
        break;
    }

    case OpKind::Custom: {
        std::vector<const Tensor*> ins;
        for (auto idx : n.inputs) ins.push_back(&nodes_[idx].value);
        n.custom->forward(ins, n.value);
        if (n.value.shape() != n.shape)
            throw ShapeError("custom op '" + n.name + "' produced " + shape_str(n.value.shape()) + ", declared " +
                             shape_str(n.shape));
        break;
    }
    }
}

// ---------------------------------------------------------------------------
// backward

std::map<std::string, Tensor> Graph::backward(NodeId loss) {
    if (!evaluated_) throw EngineError("backward called before forward");
    const auto& ln = node(loss);
    if (ln.value.size() != 1)
        throw EngineError("loss node " + describe(loss) + " is not scalar: " + shape_str(ln.shape));

    for (auto& n : nodes_) {
        n.grad.reset(n.shape);
        n.grad.fill(0.0);
    }
    nodes_[loss.index].grad[0] = 1.0;
    for (std::size_t i = loss.index + 1; i-- > 0;) backprop_node(i);

    std::map<std::string, Tensor> grads;
    for (const auto& [name, idx] : leaves_)
        if (nodes_[idx].kind == OpKind::Parameter) grads.emplace(name, nodes_[idx].grad);
    return grads;
}

void Graph::backprop_node(std::size_t index) {
    Node& n = nodes_[index];
    const auto& gy = n.grad.storage();
    auto in = [&](std::size_t k) -> const Tensor& { return nodes_[n.inputs[k]].value; };
    auto gin = [&](std::size_t k) -> std::vector<double>& { return nodes_[n.inputs[k]].grad.storage(); };

    switch (n.kind) {
    case OpKind::Parameter:
    case OpKind::Input: break;

    case OpKind::MatMul: {
        const auto& a = in(0).storage();
        const auto& b = in(1).storage();
        auto& ga = gin(0);
        auto& gb = gin(1);
        const std::size_t M = n.shape[0], N = n.shape[1], K = in(0).dim(1);
        for (std::size_t i = 0; i < M; ++i) {
            const double* gyr = &gy[i * N];
            for (std::size_t k = 0; k < K; ++k) {
                const double* brow = &b[k * N];
                double s = 0.0;
                for (std::size_t j = 0; j < N; ++j) s += gyr[j] * brow[j];
                ga[i * K + k] += s;
                const double aik = a[i * K + k];
                double* gbrow = &gb[k * N];
                for (std::size_t j = 0; j < N; ++j) gbrow[j] += aik * gyr[j];
            }
        }
        break;
    }

    case OpKind::BatchMatMul: {
        const auto& a = in(0).storage();
        const auto& b = in(1).storage();
        auto& ga = gin(0);
        auto& gb = gin(1);
        const std::size_t G = n.shape[0], M = n.shape[1], N = n.shape[2], K = in(0).dim(2);
        for (std::size_t g = 0; g < G; ++g) {
            const double* ag = &a[g * M * K];
            const double* bg = &b[g * K * N];
            double* gag = &ga[g * M * K];
            double* gbg = &gb[g * K * N];
            const double* gyg = &gy[g * M * N];
            for (std::size_t i = 0; i < M; ++i)
                for (std::size_t j = 0; j < N; ++j) {
                    const double c = gyg[i * N + j];
                    if (c == 0.0) continue;
                    if (n.flag) {
                        for (std::size_t k = 0; k < K; ++k) {
                            gag[i * K + k] += c * bg[j * K + k];
                            gbg[j * K + k] += c * ag[i * K + k];
                        }
                    } else {
                        for (std::size_t k = 0; k < K; ++k) {
                            gag[i * K + k] += c * bg[k * N + j];
                            gbg[k * N + j] += c * ag[i * K + k];
                        }
                    }
                }
        }
        break;
    }

    case OpKind::Add:
    case OpKind::Multiply: {
        const auto& a = in(0).storage();
        const auto& b = in(1).storage();
        auto& ga = gin(0);
        auto& gb = gin(1);
        const bool mul = n.kind == OpKind::Multiply;
        const std::size_t D = b.size();
        const bool full = in(1).shape() == n.shape;
        for (std::size_t i = 0; i < gy.size(); ++i) {
            const std::size_t j = full ? i : i % D;
            ga[i] += mul ? gy[i] * b[j] : gy[i];
            gb[j] += mul ? gy[i] * a[i] : gy[i];
        }
        break;
    }

    case OpKind::Scale: {
        auto& ga = gin(0);
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += n.attr * gy[i];
        break;
    }

    case OpKind::Sum: {
        auto& ga = gin(0);
        for (auto& g : ga) g += gy[0];
        break;
    }

    case OpKind::RowSoftmax: {
        const auto& y = n.value.storage();
        auto& ga = gin(0);
        const std::size_t D = last_extent(n.shape), R = y.size() / D;
        for (std::size_t r = 0; r < R; ++r) {
            double dot = 0.0;
            for (std::size_t j = 0; j < D; ++j) dot += gy[r * D + j] * y[r * D + j];
            for (std::size_t j = 0; j < D; ++j) ga[r * D + j] += y[r * D + j] * (gy[r * D + j] - dot);
        }
        break;
    }

    case OpKind::RmsNorm: {
        const auto& a = in(0).storage();
        const auto& y = n.value.storage();
        auto& ga = gin(0);
        const std::size_t D = last_extent(n.shape), R = y.size() / D;
        for (std::size_t r = 0; r < R; ++r) {
            double ms = 0.0, dot = 0.0;
            for (std::size_t j = 0; j < D; ++j) {
                ms += a[r * D + j] * a[r * D + j];
                dot += gy[r * D + j] * y[r * D + j];
            }
            const double inv = 1.0 / std::sqrt(ms / static_cast<double>(D) + n.attr);
            const double mean_dot = dot / static_cast<double>(D);
            for (std::size_t j = 0; j < D; ++j) ga[r * D + j] += (gy[r * D + j] - y[r * D + j] * mean_dot) * inv;
        }
        break;
    }

    case OpKind::Rotary: {
        auto& ga = gin(0);
        const std::size_t G = n.shape[0], T = n.shape[1], D = n.shape[2], H = D / 2;
        for (std::size_t g = 0; g < G; ++g)
            for (std::size_t t = 0; t < T; ++t) {
                const std::size_t off = (g * T + t) * D;
                for (std::size_t i = 0; i < H; ++i) {
                    const double theta =
                        static_cast<double>(t) * std::pow(n.attr, -2.0 * static_cast<double>(i) / static_cast<double>(D));
                    const double c = std::cos(theta), s = std::sin(theta);
                    const double g0 = gy[off + i], g1 = gy[off + i + H];
                    ga[off + i] += g0 * c + g1 * s;
                    ga[off + i + H] += -g0 * s + g1 * c;
                }
            }
        break;
    }

    case OpKind::Gather: {
        const auto& ids = in(1).storage();
        auto& gt = gin(0);
        const std::size_t D = in(0).dim(1);
        for (std::size_t r = 0; r < ids.size(); ++r) {
            const auto id = static_cast<std::size_t>(ids[r]);
            for (std::size_t j = 0; j < D; ++j) gt[id * D + j] += gy[r * D + j];
        }
        break;
    }

    case OpKind::CrossEntropy: {
        const auto& logits = in(0).storage();
        const auto& targets = in(1).storage();
        auto& gl = gin(0);
        const std::size_t N = in(0).dim(0), V = in(0).dim(1);
        const double w = gy[0] / static_cast<double>(N);
        for (std::size_t r = 0; r < N; ++r) {
            const double* x = &logits[r * V];
            const double mx = *std::max_element(x, x + V);
            double z = 0.0;
            for (std::size_t j = 0; j < V; ++j) z += std::exp(x[j] - mx);
            for (std::size_t j = 0; j < V; ++j) gl[r * V + j] += w * std::exp(x[j] - mx) / z;
            gl[r * V + static_cast<std::size_t>(targets[r])] -= w;
        }
        break;
    }

    case OpKind::Silu: {
        const auto& a = in(0).storage();
        auto& ga = gin(0);
        for (std::size_t i = 0; i < gy.size(); ++i) {
            const double s = sigmoid_of(a[i]);
            ga[i] += gy[i] * s * (1.0 + a[i] * (1.0 - s));
        }
        break;
    }

    case OpKind::Sigmoid: {
        const auto& y = n.value.storage();
        auto& ga = gin(0);
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * y[i] * (1.0 - y[i]);
        break;
    }

    case OpKind::Reshape: {
        auto& ga = gin(0);
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
        break;
    }

    case OpKind::Permute: {
        auto& ga = gin(0);
        for_each_permuted(in(0).shape(), n.iattr, [&](std::size_t o, std::size_t i) { ga[i] += gy[o]; });
        break;
    }

    case OpKind::RepeatHeads: {
        auto& ga = gin(0);
        const std::size_t B = n.shape[0], H = n.shape[1], block = n.shape[2] * n.shape[3];
        const std::size_t groups = n.iattr[0], Hkv = H / groups;
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t h = 0; h < H; ++h) {
                double* dst = &ga[(b * Hkv + h / groups) * block];
                const double* src = &gy[(b * H + h) * block];
                for (std::size_t k = 0; k < block; ++k) dst[k] += src[k];
            }
        break;
    }

    case OpKind::CausalMask: {
        auto& ga = gin(0);
        const std::size_t G = n.shape[0], T = n.shape[1];
        for (std::size_t g = 0; g < G; ++g)
            for (std::size_t i = 0; i < T; ++i)
                for (std::size_t j = 0; j <= i; ++j) {
                    const std::size_t k = (g * T + i) * T + j;
                    ga[k] += gy[k];
                }
        break;
    }

    case OpKind::Custom: {
        std::vector<const Tensor*> ins;
        std::vector<Tensor*> gins;
        for (auto idx : n.inputs) {
            ins.push_back(&nodes_[idx].value);
            gins.push_back(&nodes_[idx].grad);
        }
        n.custom->backward(ins, n.value, n.grad, gins);
        break;
    }
    }
}

}  // namespace cclab
