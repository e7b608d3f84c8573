#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gfs/params.hpp"
#include "gfs/tensor.hpp"

namespace gfs {

enum class Op : std::uint8_t {
    Constant,
    Param,
    Affine,     // W x + b, b broadcast over columns
    Add,
    Sub,
    Mul,
    ScalarMul,
    Square,
    Sum,        // full reduction or per-column (axis 0)
    Mean,
    Tanh,
    Gelu,
    Exp,
    Log,
    LogSumExp,  // full reduction or per-column (axis 0), max-subtracted
    Concat,     // along axis 0
    Slice,      // row range [r0, r1)
    Dot,
    Clip,
};

const char* op_name(Op op);

struct NodeRef {
    std::uint32_t idx = 0;
};

// Append-only tape of primitive operations with eager forward evaluation.
// Single-threaded; rebuilt per use. backward() accumulates parameter
// gradients additively into the bound ParameterStore entries.
class Tape {
public:
    NodeRef constant(Tensor v);
    NodeRef constant_scalar(double v) { return constant(Tensor::scalar(v)); }
    NodeRef param(ParameterStore& store, const std::string& name);

    NodeRef affine(NodeRef w, NodeRef b, NodeRef x);
    NodeRef add(NodeRef a, NodeRef b);
    NodeRef sub(NodeRef a, NodeRef b);
    NodeRef mul(NodeRef a, NodeRef b);
    NodeRef scalar_mul(NodeRef a, double c);
    NodeRef square(NodeRef a);
    NodeRef sum(NodeRef a);
    NodeRef sum_cols(NodeRef a);  // {r,c} -> {1,c}
    NodeRef mean(NodeRef a);
    NodeRef tanh(NodeRef a);
    NodeRef gelu(NodeRef a);
    NodeRef exp(NodeRef a);
    NodeRef log(NodeRef a);
    NodeRef logsumexp(NodeRef a);
    NodeRef logsumexp_cols(NodeRef a);  // {r,c} -> {1,c}
    NodeRef concat_rows(std::span<const NodeRef> parts);
    NodeRef slice_rows(NodeRef a, std::size_t r0, std::size_t r1);
    NodeRef dot(NodeRef a, NodeRef b);
    NodeRef clip(NodeRef a, double lo, double hi);

    const Tensor& value(NodeRef r) const { return nodes_[r.idx].value; }
    std::size_t size() const { return nodes_.size(); }

    // Reverse pass from a scalar root. Visits each node once in reverse
    // order; parameter gradients are accumulated into their store entries.
    void backward(NodeRef root, double seed = 1.0);

    // Adjoint of a node from the most recent backward pass (empty tensor if
    // the node was not reached).
    const Tensor& adjoint(NodeRef r) const { return adjoints_[r.idx]; }

    void reserve(std::size_t n) { nodes_.reserve(n); }

private:
    struct Node {
        Op op;
        bool requires_grad = false;         // Param upstream of this node
        int axis = -1;                      // Sum/LogSumExp: -1 full, 0 per column
        double c0 = 0.0, c1 = 0.0;          // ScalarMul factor, Slice range, Clip bounds
        std::vector<std::uint32_t> inputs;
        Tensor value;
        ParameterStore::Entry* bound = nullptr;  // Param nodes only
    };

    NodeRef push(Node n);
    const Tensor& in(const Node& n, std::size_t i) const { return nodes_[n.inputs[i]].value; }
    Tensor& adj(std::uint32_t idx, const Tensor& like);
    bool wants(const Node& n, std::size_t i) const { return nodes_[n.inputs[i]].requires_grad; }

    std::vector<Node> nodes_;
    std::vector<Tensor> adjoints_;
    std::map<std::pair<const void*, std::string>, std::uint32_t> param_cache_;
};

}  // namespace gfs
