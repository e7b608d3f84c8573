#include "gfs/tape.hpp"

#include "gfs/fastmath.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace gfs {

namespace {

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

[[noreturn]] void shape_error(const char* prim, const std::string& detail) {
    throw std::invalid_argument(std::string(prim) + ": " + detail);
}

void require_same_shape(const char* prim, const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) {
        shape_error(prim, "shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    }
}

}  // namespace

const char* op_name(Op op) {
    switch (op) {
        case Op::Constant: return "constant";
        case Op::Param: return "param";
        case Op::Affine: return "affine";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Mul: return "mul";
        case Op::ScalarMul: return "scalar-mul";
        case Op::Square: return "square";
        case Op::Sum: return "sum";
        case Op::Mean: return "mean";
        case Op::Tanh: return "tanh";
        case Op::Gelu: return "gelu";
        case Op::Exp: return "exp";
        case Op::Log: return "log";
        case Op::LogSumExp: return "logsumexp";
        case Op::Concat: return "concat";
        case Op::Slice: return "slice";
        case Op::Dot: return "dot";
        case Op::Clip: return "clip";
    }
    return "?";
}

NodeRef Tape::push(Node n) {
    if (n.op == Op::Param) {
        n.requires_grad = true;
    } else {
        for (std::uint32_t i : n.inputs) {
            if (nodes_[i].requires_grad) {
                n.requires_grad = true;
                break;
            }
        }
    }
    nodes_.push_back(std::move(n));
    return NodeRef{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

NodeRef Tape::constant(Tensor v) {
    Node n;
    n.op = Op::Constant;
    n.value = std::move(v);
    return push(std::move(n));
}

NodeRef Tape::param(ParameterStore& store, const std::string& name) {
    const auto key = std::make_pair(static_cast<const void*>(&store), name);
    auto it = param_cache_.find(key);
    if (it != param_cache_.end()) return NodeRef{it->second};
    Node n;
    n.op = Op::Param;
    n.bound = &store.entry(name);
    n.value = n.bound->value;
    NodeRef r = push(std::move(n));
    param_cache_.emplace(key, r.idx);
    return r;
}

NodeRef Tape::affine(NodeRef w, NodeRef b, NodeRef x) {
    const Tensor& W = value(w);
    const Tensor& B = value(b);
    const Tensor& X = value(x);
    if (W.rank() != 2) shape_error("affine", "W must be rank 2, got " + W.shape_str());
    if (W.cols() != X.rows()) {
        shape_error("affine", "W " + W.shape_str() + " incompatible with x " + X.shape_str());
    }
    if (B.numel() != W.rows()) {
        shape_error("affine", "b " + B.shape_str() + " incompatible with W " + W.shape_str());
    }
    Node n;
    n.op = Op::Affine;
    n.inputs = {w.idx, b.idx, x.idx};
    gemm_nn(W, X, n.value, false);
    const std::size_t m = n.value.rows(), c = n.value.cols();
    for (std::size_t i = 0; i < m; ++i) {
        const double bi = B.data[i];
        double* row = n.value.data.data() + i * c;
        for (std::size_t j = 0; j < c; ++j) row[j] += bi;
    }
    return push(std::move(n));
}

NodeRef Tape::add(NodeRef a, NodeRef b) {
    require_same_shape("add", value(a), value(b));
    Node n;
    n.op = Op::Add;
    n.inputs = {a.idx, b.idx};
    n.value = value(a);
    const auto& vb = value(b).data;
    for (std::size_t i = 0; i < vb.size(); ++i) n.value.data[i] += vb[i];
    return push(std::move(n));
}

NodeRef Tape::sub(NodeRef a, NodeRef b) {
    require_same_shape("sub", value(a), value(b));
    Node n;
    n.op = Op::Sub;
    n.inputs = {a.idx, b.idx};
    n.value = value(a);
    const auto& vb = value(b).data;
    for (std::size_t i = 0; i < vb.size(); ++i) n.value.data[i] -= vb[i];
    return push(std::move(n));
}

NodeRef Tape::mul(NodeRef a, NodeRef b) {
    require_same_shape("mul", value(a), value(b));
    Node n;
    n.op = Op::Mul;
    n.inputs = {a.idx, b.idx};
    n.value = value(a);
    const auto& vb = value(b).data;
    for (std::size_t i = 0; i < vb.size(); ++i) n.value.data[i] *= vb[i];
    return push(std::move(n));
}

NodeRef Tape::scalar_mul(NodeRef a, double c) {
    Node n;
    n.op = Op::ScalarMul;
    n.c0 = c;
    n.inputs = {a.idx};
    n.value = value(a);
    for (double& v : n.value.data) v *= c;
    return push(std::move(n));
}

NodeRef Tape::square(NodeRef a) {
    Node n;
    n.op = Op::Square;
    n.inputs = {a.idx};
    n.value = value(a);
    for (double& v : n.value.data) v *= v;
    return push(std::move(n));
}

NodeRef Tape::sum(NodeRef a) {
    Node n;
    n.op = Op::Sum;
    n.axis = -1;
    n.inputs = {a.idx};
    double acc = 0.0;
    for (double v : value(a).data) acc += v;
    n.value = Tensor::full({1}, acc);
    return push(std::move(n));
}

NodeRef Tape::sum_cols(NodeRef a) {
    const Tensor& X = value(a);
    if (X.rank() != 2) shape_error("sum", "axis-0 reduction needs rank 2, got " + X.shape_str());
    Node n;
    n.op = Op::Sum;
    n.axis = 0;
    n.inputs = {a.idx};
    n.value = Tensor::zeros({1, X.cols()});
    const std::size_t r = X.rows(), c = X.cols();
    for (std::size_t i = 0; i < r; ++i) {
        const double* row = X.data.data() + i * c;
        for (std::size_t j = 0; j < c; ++j) n.value.data[j] += row[j];
    }
    return push(std::move(n));
}

NodeRef Tape::mean(NodeRef a) {
    Node n;
    n.op = Op::Mean;
    n.inputs = {a.idx};
    double acc = 0.0;
    for (double v : value(a).data) acc += v;
    n.value = Tensor::full({1}, acc / static_cast<double>(value(a).numel()));
    return push(std::move(n));
}

NodeRef Tape::tanh(NodeRef a) {
    Node n;
    n.op = Op::Tanh;
    n.inputs = {a.idx};
    n.value = value(a);
    for (double& v : n.value.data) v = fast_tanh(v);
    return push(std::move(n));
}

NodeRef Tape::gelu(NodeRef a) {
    Node n;
    n.op = Op::Gelu;
    n.inputs = {a.idx};
    n.value = value(a);
    for (double& v : n.value.data) v = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
    return push(std::move(n));
}

NodeRef Tape::exp(NodeRef a) {
    Node n;
    n.op = Op::Exp;
    n.inputs = {a.idx};
    n.value = value(a);
    for (double& v : n.value.data) v = fast_exp(v);
    return push(std::move(n));
}

NodeRef Tape::log(NodeRef a) {
    Node n;
    n.op = Op::Log;
    n.inputs = {a.idx};
    n.value = value(a);
    for (double& v : n.value.data) v = std::log(v);
    return push(std::move(n));
}

NodeRef Tape::logsumexp(NodeRef a) {
    const Tensor& X = value(a);
    Node n;
    n.op = Op::LogSumExp;
    n.axis = -1;
    n.inputs = {a.idx};
    double m = -INFINITY;
    for (double v : X.data) m = std::max(m, v);
    double acc = 0.0;
    for (double v : X.data) acc += fast_exp(v - m);
    n.value = Tensor::full({1}, m + std::log(acc));
    return push(std::move(n));
}

NodeRef Tape::logsumexp_cols(NodeRef a) {
    const Tensor& X = value(a);
    if (X.rank() != 2) {
        shape_error("logsumexp", "axis-0 reduction needs rank 2, got " + X.shape_str());
    }
    Node n;
    n.op = Op::LogSumExp;
    n.axis = 0;
    n.inputs = {a.idx};
    const std::size_t r = X.rows(), c = X.cols();
    n.value = Tensor::zeros({1, c});
    for (std::size_t j = 0; j < c; ++j) {
        double m = -INFINITY;
        for (std::size_t i = 0; i < r; ++i) m = std::max(m, X.data[i * c + j]);
        double acc = 0.0;
        for (std::size_t i = 0; i < r; ++i) acc += fast_exp(X.data[i * c + j] - m);
        n.value.data[j] = m + std::log(acc);
    }
    return push(std::move(n));
}

NodeRef Tape::concat_rows(std::span<const NodeRef> parts) {
    if (parts.empty()) shape_error("concat", "no inputs");
    const bool rank2 = value(parts[0]).rank() == 2;
    const std::size_t c = value(parts[0]).cols();
    std::size_t total_rows = 0;
    for (NodeRef p : parts) {
        const Tensor& t = value(p);
        if ((t.rank() == 2) != rank2 || t.cols() != c) {
            shape_error("concat", "incompatible part shape " + t.shape_str());
        }
        total_rows += t.rows();
    }
    Node n;
    n.op = Op::Concat;
    n.inputs.reserve(parts.size());
    for (NodeRef p : parts) n.inputs.push_back(p.idx);
    n.value = rank2 ? Tensor::zeros({total_rows, c}) : Tensor::zeros({total_rows});
    std::size_t offset = 0;
    for (NodeRef p : parts) {
        const auto& src = value(p).data;
        std::copy(src.begin(), src.end(), n.value.data.begin() + offset);
        offset += src.size();
    }
    return push(std::move(n));
}

NodeRef Tape::slice_rows(NodeRef a, std::size_t r0, std::size_t r1) {
    const Tensor& X = value(a);
    if (r0 >= r1 || r1 > X.rows()) {
        std::ostringstream oss;
        oss << "row range [" << r0 << "," << r1 << ") invalid for " << X.shape_str();
        shape_error("slice", oss.str());
    }
    Node n;
    n.op = Op::Slice;
    n.c0 = static_cast<double>(r0);
    n.c1 = static_cast<double>(r1);
    n.inputs = {a.idx};
    const std::size_t c = X.cols(), rows = r1 - r0;
    n.value = X.rank() == 2 ? Tensor::zeros({rows, c}) : Tensor::zeros({rows});
    std::copy(X.data.begin() + r0 * c, X.data.begin() + r1 * c, n.value.data.begin());
    return push(std::move(n));
}

NodeRef Tape::dot(NodeRef a, NodeRef b) {
    require_same_shape("dot", value(a), value(b));
    Node n;
    n.op = Op::Dot;
    n.inputs = {a.idx, b.idx};
    double acc = 0.0;
    const auto& va = value(a).data;
    const auto& vb = value(b).data;
    for (std::size_t i = 0; i < va.size(); ++i) acc += va[i] * vb[i];
    n.value = Tensor::full({1}, acc);
    return push(std::move(n));
}

NodeRef Tape::clip(NodeRef a, double lo, double hi) {
    if (!(lo < hi)) shape_error("clip", "empty interval");
    Node n;
    n.op = Op::Clip;
    n.c0 = lo;
    n.c1 = hi;
    n.inputs = {a.idx};
    n.value = value(a);
    for (double& v : n.value.data) v = std::min(std::max(v, lo), hi);
    return push(std::move(n));
}

Tensor& Tape::adj(std::uint32_t idx, const Tensor& like) {
    Tensor& g = adjoints_[idx];
    if (g.data.empty()) g = Tensor::zeros(like.shape);
    return g;
}

void Tape::backward(NodeRef root, double seed) {
    if (!value(root).is_scalar()) {
        shape_error("backward", "root must be scalar, got " + value(root).shape_str());
    }
    adjoints_.assign(nodes_.size(), Tensor{});
    adjoints_[root.idx] = Tensor::full({1}, seed);

    for (std::uint32_t i = root.idx + 1; i-- > 0;) {
        Node& n = nodes_[i];
        Tensor& g = adjoints_[i];
        if (g.data.empty()) continue;
        switch (n.op) {
            case Op::Constant:
                break;
            case Op::Param: {
                auto& dst = n.bound->grad.data;
                for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += g.data[k];
                break;
            }
            case Op::Affine: {
                const Tensor& W = in(n, 0);
                const Tensor& X = in(n, 2);
                if (wants(n, 0)) gemm_nt(g, X, adj(n.inputs[0], W), true);  // dW += g x^T
                if (wants(n, 1)) {
                    Tensor& gb = adj(n.inputs[1], in(n, 1));
                    const std::size_t m = g.rows(), c = g.cols();
                    for (std::size_t r = 0; r < m; ++r) {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < c; ++j) acc += g.data[r * c + j];
                        gb.data[r] += acc;
                    }
                }
                if (wants(n, 2)) gemm_tn(W, g, adj(n.inputs[2], X), true);  // dx += W^T g
                break;
            }
            case Op::Add: {
                for (int k = 0; k < 2; ++k) {
                    if (!wants(n, k)) continue;
                    Tensor& gi = adj(n.inputs[k], in(n, k));
                    for (std::size_t t = 0; t < g.data.size(); ++t) gi.data[t] += g.data[t];
                }
                break;
            }
            case Op::Sub: {
                if (wants(n, 0)) {
                    Tensor& ga = adj(n.inputs[0], in(n, 0));
                    for (std::size_t t = 0; t < g.data.size(); ++t) ga.data[t] += g.data[t];
                }
                if (wants(n, 1)) {
                    Tensor& gb = adj(n.inputs[1], in(n, 1));
                    for (std::size_t t = 0; t < g.data.size(); ++t) gb.data[t] -= g.data[t];
                }
                break;
            }
            case Op::Mul: {
                const Tensor& a = in(n, 0);
                const Tensor& b = in(n, 1);
                if (wants(n, 0)) {
                    Tensor& ga = adj(n.inputs[0], a);
                    for (std::size_t t = 0; t < g.data.size(); ++t) {
                        ga.data[t] += g.data[t] * b.data[t];
                    }
                }
                if (wants(n, 1)) {
                    Tensor& gb = adj(n.inputs[1], b);
                    for (std::size_t t = 0; t < g.data.size(); ++t) {
                        gb.data[t] += g.data[t] * a.data[t];
                    }
                }
                break;
            }
            case Op::ScalarMul: {
                if (!wants(n, 0)) break;
                Tensor& ga = adj(n.inputs[0], in(n, 0));
                for (std::size_t t = 0; t < g.data.size(); ++t) ga.data[t] += g.data[t] * n.c0;
                break;
            }
            case Op::Square: {
                if (!wants(n, 0)) break;
                const Tensor& a = in(n, 0);
                Tensor& ga = adj(n.inputs[0], a);
                for (std::size_t t = 0; t < g.data.size(); ++t) {
                    ga.data[t] += 2.0 * a.data[t] * g.data[t];
                }
                break;
            }
            case Op::Sum: {
                if (!wants(n, 0)) break;
                const Tensor& a = in(n, 0);
                Tensor& ga = adj(n.inputs[0], a);
                if (n.axis < 0) {
                    const double s = g.data[0];
                    for (double& v : ga.data) v += s;
                } else {
                    const std::size_t r = a.rows(), c = a.cols();
                    for (std::size_t row = 0; row < r; ++row) {
                        for (std::size_t j = 0; j < c; ++j) ga.data[row * c + j] += g.data[j];
                    }
                }
                break;
            }
            case Op::Mean: {
                if (!wants(n, 0)) break;
                const Tensor& a = in(n, 0);
                Tensor& ga = adj(n.inputs[0], a);
                const double s = g.data[0] / static_cast<double>(a.numel());
                for (double& v : ga.data) v += s;
                break;
            }
            case Op::Tanh: {
                if (!wants(n, 0)) break;
                Tensor& ga = adj(n.inputs[0], in(n, 0));
                for (std::size_t t = 0; t < g.data.size(); ++t) {
                    const double y = n.value.data[t];
                    ga.data[t] += (1.0 - y * y) * g.data[t];
                }
                break;
            }
            case Op::Gelu: {
                if (!wants(n, 0)) break;
                const Tensor& a = in(n, 0);
                Tensor& ga = adj(n.inputs[0], a);
                for (std::size_t t = 0; t < g.data.size(); ++t) {
                    const double x = a.data[t];
                    const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
                    const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
                    ga.data[t] += (cdf + x * pdf) * g.data[t];
                }
                break;
            }
            case Op::Exp: {
                if (!wants(n, 0)) break;
                Tensor& ga = adj(n.inputs[0], in(n, 0));
                for (std::size_t t = 0; t < g.data.size(); ++t) {
                    ga.data[t] += n.value.data[t] * g.data[t];
                }
                break;
            }
            case Op::Log: {
                if (!wants(n, 0)) break;
                const Tensor& a = in(n, 0);
                Tensor& ga = adj(n.inputs[0], a);
                for (std::size_t t = 0; t < g.data.size(); ++t) {
                    ga.data[t] += g.data[t] / a.data[t];
                }
                break;
            }
            case Op::LogSumExp: {
                if (!wants(n, 0)) break;
                const Tensor& a = in(n, 0);
                Tensor& ga = adj(n.inputs[0], a);
                if (n.axis < 0) {
                    const double lse = n.value.data[0];
                    const double s = g.data[0];
                    for (std::size_t t = 0; t < a.data.size(); ++t) {
                        ga.data[t] += s * fast_exp(a.data[t] - lse);
                    }
                } else {
                    const std::size_t r = a.rows(), c = a.cols();
                    for (std::size_t row = 0; row < r; ++row) {
                        for (std::size_t j = 0; j < c; ++j) {
                            ga.data[row * c + j] +=
                                g.data[j] * fast_exp(a.data[row * c + j] - n.value.data[j]);
                        }
                    }
                }
                break;
            }
            case Op::Concat: {
                std::size_t offset = 0;
                for (std::size_t k = 0; k < n.inputs.size(); ++k) {
                    if (!wants(n, k)) {
                        offset += in(n, k).data.size();
                        continue;
                    }
                    const Tensor& part = in(n, k);
                    Tensor& gp = adj(n.inputs[k], part);
                    for (std::size_t t = 0; t < part.data.size(); ++t) {
                        gp.data[t] += g.data[offset + t];
                    }
                    offset += part.data.size();
                }
                break;
            }
            case Op::Slice: {
                if (!wants(n, 0)) break;
                const Tensor& a = in(n, 0);
                Tensor& ga = adj(n.inputs[0], a);
                const std::size_t r0 = static_cast<std::size_t>(n.c0);
                const std::size_t base = r0 * a.cols();
                for (std::size_t t = 0; t < g.data.size(); ++t) ga.data[base + t] += g.data[t];
                break;
            }
            case Op::Dot: {
                const Tensor& a = in(n, 0);
                const Tensor& b = in(n, 1);
                const double s = g.data[0];
                if (wants(n, 0)) {
                    Tensor& ga = adj(n.inputs[0], a);
                    for (std::size_t t = 0; t < a.data.size(); ++t) ga.data[t] += s * b.data[t];
                }
                if (wants(n, 1)) {
                    Tensor& gb = adj(n.inputs[1], b);
                    for (std::size_t t = 0; t < a.data.size(); ++t) gb.data[t] += s * a.data[t];
                }
                break;
            }
            case Op::Clip: {
                if (!wants(n, 0)) break;
                const Tensor& a = in(n, 0);
                Tensor& ga = adj(n.inputs[0], a);
                for (std::size_t t = 0; t < g.data.size(); ++t) {
                    if (a.data[t] >= n.c0 && a.data[t] <= n.c1) ga.data[t] += g.data[t];
                }
                break;
            }
        }
    }
}

}  // namespace gfs
