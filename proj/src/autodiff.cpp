// Copyright (c) 2026 the bmcl authors
// SPDX-License-Identifier: Apache-2.0
#include "bmcl/autodiff.hpp"

#include <cmath>
#include <stdexcept>

#include "bmcl/kernels.hpp"

namespace bmcl::ad {

const Tensor& GradientMap::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end())
        throw std::invalid_argument("GradientMap: unknown parameter '" + name + "'");
    return grads_[it->second].second;
}

double GradientMap::l2_norm() const {
    double s = 0.0;
    for (const auto& [name, g] : grads_) s += kern::l2_norm_sq(g);
    return std::sqrt(s);
}

// ---------------------------------------------------------------------------

Value Tape::push(Node n) {
    nodes_.push_back(std::move(n));
    return Value{static_cast<int>(nodes_.size()) - 1};
}

const Tape::Node& Tape::node(Value v, const char* caller) const {
    if (!v.valid() || v.idx >= static_cast<int>(nodes_.size()))
        throw std::invalid_argument(std::string(caller) + ": invalid tape value");
    return nodes_[static_cast<std::size_t>(v.idx)];
}

const Tensor& Tape::value(Value v) const { return node(v, "value").val; }

Value Tape::leaf(Tensor t, const std::string& name) {
    if (param_index_.count(name))
        throw std::invalid_argument("Tape: duplicate parameter name '" + name + "'");
    Node n;
    n.op = Op::Leaf;
    n.grad = true;
    n.val = std::move(t);
    const Value v = push(std::move(n));
    params_.emplace_back(name, v.idx);
    param_index_[name] = v.idx;
    return v;
}

Value Tape::constant(Tensor t) {
    Node n;
    n.op = Op::Const;
    n.val = std::move(t);
    return push(std::move(n));
}

Value Tape::unary(Op op, Value a, const char* name) {
    const Node& in = node(a, name);
    Node n;
    n.op = op;
    n.a = a.idx;
    n.grad = in.grad;
    switch (op) {
        case Op::Sigmoid:    n.val = kern::sigmoid(in.val); break;
        case Op::Relu:       n.val = kern::relu(in.val); break;
        case Op::Log:        n.val = kern::log_clamped(in.val); break;
        case Op::Recip:      n.val = kern::reciprocal(in.val); break;
        case Op::Transpose:  n.val = kern::transpose(in.val); break;
        case Op::RowSoftmax: n.val = kern::row_softmax(in.val); break;
        case Op::RowSums:    n.val = kern::row_sums(in.val); break;
        case Op::ColSums:    n.val = kern::col_sums(in.val); break;
        case Op::Mean:       n.val = Tensor::scalar(kern::mean(in.val)); break;
        case Op::Sum:
            if (in.val.empty()) throw std::invalid_argument("sum: empty tensor");
            n.val = Tensor::scalar(kern::sum(in.val));
            break;
        default:
            throw std::logic_error("unary: bad op");
    }
    return push(std::move(n));
}

Value Tape::binary_ew(Op op, Value a, Value b, const char* name) {
    const Tensor& av = node(a, name).val;
    const Tensor& bv = node(b, name).val;
    Node n;
    n.op = op;
    n.a = a.idx;
    n.b = b.idx;
    n.grad = nodes_[a.idx].grad || nodes_[b.idx].grad;
    switch (op) {
        case Op::Add: n.val = kern::add(av, bv); break;
        case Op::Sub: n.val = kern::sub(av, bv); break;
        case Op::Mul: n.val = kern::mul(av, bv); break;
        default: throw std::logic_error("binary_ew: bad op");
    }
    return push(std::move(n));
}

Value Tape::matmul(Value a, Value b) {
    const Tensor& av = node(a, "matmul").val;
    const Tensor& bv = node(b, "matmul").val;
    Node n;
    n.op = Op::MatMul;
    n.a = a.idx;
    n.b = b.idx;
    n.grad = nodes_[a.idx].grad || nodes_[b.idx].grad;
    n.val = kern::matmul(av, bv);
    return push(std::move(n));
}

Value Tape::add(Value a, Value b) { return binary_ew(Op::Add, a, b, "add"); }
Value Tape::sub(Value a, Value b) { return binary_ew(Op::Sub, a, b, "sub"); }
Value Tape::mul(Value a, Value b) { return binary_ew(Op::Mul, a, b, "mul"); }

Value Tape::scale(Value a, double k) {
    const Node& in = node(a, "scale");
    Node n;
    n.op = Op::Scale;
    n.a = a.idx;
    n.k = k;
    n.grad = in.grad;
    n.val = kern::scale(in.val, k);
    return push(std::move(n));
}

Value Tape::sigmoid(Value a) { return unary(Op::Sigmoid, a, "sigmoid"); }
Value Tape::relu(Value a) { return unary(Op::Relu, a, "relu"); }
Value Tape::log(Value a) { return unary(Op::Log, a, "log"); }
Value Tape::reciprocal(Value a) { return unary(Op::Recip, a, "reciprocal"); }
Value Tape::transpose(Value a) { return unary(Op::Transpose, a, "transpose"); }
Value Tape::row_softmax(Value a) { return unary(Op::RowSoftmax, a, "row_softmax"); }
Value Tape::mean(Value a) { return unary(Op::Mean, a, "mean"); }
Value Tape::sum(Value a) { return unary(Op::Sum, a, "sum"); }
Value Tape::row_sums(Value a) { return unary(Op::RowSums, a, "row_sums"); }
Value Tape::col_sums(Value a) { return unary(Op::ColSums, a, "col_sums"); }

Tensor Tape::one_hot(const std::vector<int>& labels, int num_classes) {
    Tensor t(static_cast<int>(labels.size()), num_classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= num_classes)
            throw std::invalid_argument("one_hot: label " + std::to_string(labels[i]) +
                                        " outside [0, " + std::to_string(num_classes) + ")");
        t.at(static_cast<int>(i), labels[i]) = 1.0;
    }
    return t;
}

Value Tape::cross_entropy_rows(Value logits, Tensor targets) {
    const Tensor& z = node(logits, "cross_entropy_rows").val;
    if (z.cols() < 2)
        throw std::invalid_argument("cross_entropy_rows: need at least 2 classes, got " +
                                    z.shape_str());
    if (!z.same_shape(targets))
        throw std::invalid_argument("cross_entropy_rows: logits " + z.shape_str() +
                                    " vs targets " + targets.shape_str());
    for (int i = 0; i < targets.rows(); ++i) {
        double s = 0.0;
        for (int j = 0; j < targets.cols(); ++j) {
            const double t = targets.at(i, j);
            if (t < -1e-12)
                throw std::invalid_argument("cross_entropy_rows: negative target entry");
            s += t;
        }
        if (std::abs(s - 1.0) > 1e-8)
            throw std::invalid_argument(
                "cross_entropy_rows: target row " + std::to_string(i) +
                " sums to " + std::to_string(s) + ", expected 1");
    }
    Node n;
    n.op = Op::CeRows;
    n.a = logits.idx;
    n.grad = nodes_[logits.idx].grad;
    n.val = kern::cross_entropy_rows(z, targets);
    n.aux = std::move(targets);
    return push(std::move(n));
}

Value Tape::cross_entropy_rows(Value logits, const std::vector<int>& labels) {
    const Tensor& z = node(logits, "cross_entropy_rows").val;
    return cross_entropy_rows(logits, one_hot(labels, z.cols()));
}

Value Tape::softmax_cross_entropy(Value logits, Tensor targets) {
    return mean(cross_entropy_rows(logits, std::move(targets)));
}

Value Tape::softmax_cross_entropy(Value logits, const std::vector<int>& labels) {
    return mean(cross_entropy_rows(logits, labels));
}

// ---------------------------------------------------------------------------
// reverse pass

Value Tape::ones_like(Value a) {
    const Tensor& v = nodes_[a.idx].val;
    return constant(Tensor::full(v.rows(), v.cols(), 1.0));
}

void Tape::accumulate(std::vector<Value>& adj, int target, Value g) {
    if (!nodes_[target].grad) return;
    Value& slot = adj[static_cast<std::size_t>(target)];
    slot = slot.valid() ? add(slot, g) : g;
}

// Adjoint reduction for the broadcast side of an elementwise op.
namespace {
struct SideReduce {
    kern::Bcast kind;
    bool left;
};
}  // namespace

void Tape::emit_vjp(int i, Value g, std::vector<Value>& adj) {
    // Copy POD fields first: emitting nodes may reallocate nodes_.
    const Op op = nodes_[i].op;
    const int a = nodes_[i].a, b = nodes_[i].b;
    const double k = nodes_[i].k;

    auto reduce_for = [&](Value grad, kern::Bcast kind, bool left_side) -> Value {
        const bool reduced = left_side ? kind == kern::Bcast::ScalarL
                                       : kind != kern::Bcast::Same &&
                                         kind != kern::Bcast::ScalarL;
        if (!reduced) return grad;
        if (left_side) return sum(grad);
        switch (kind) {
            case kern::Bcast::Row:     return col_sums(grad);
            case kern::Bcast::Col:     return row_sums(grad);
            case kern::Bcast::ScalarR: return sum(grad);
            default:                   return grad;
        }
    };

    switch (op) {
        case Op::Leaf:
        case Op::Const:
            break;
        case Op::MatMul: {
            if (nodes_[a].grad) accumulate(adj, a, matmul(g, transpose(Value{b})));
            if (nodes_[b].grad) accumulate(adj, b, matmul(transpose(Value{a}), g));
            break;
        }
        case Op::Add:
        case Op::Sub: {
            const kern::Bcast kind = kern::bcast_kind(nodes_[a].val, nodes_[b].val, "vjp");
            if (nodes_[a].grad) accumulate(adj, a, reduce_for(g, kind, true));
            if (nodes_[b].grad) {
                Value gb = reduce_for(g, kind, false);
                if (op == Op::Sub) gb = scale(gb, -1.0);
                accumulate(adj, b, gb);
            }
            break;
        }
        case Op::Mul: {
            const kern::Bcast kind = kern::bcast_kind(nodes_[a].val, nodes_[b].val, "vjp");
            if (nodes_[a].grad) accumulate(adj, a, reduce_for(mul(g, Value{b}), kind, true));
            if (nodes_[b].grad) accumulate(adj, b, reduce_for(mul(g, Value{a}), kind, false));
            break;
        }
        case Op::Scale:
            accumulate(adj, a, scale(g, k));
            break;
        case Op::Sigmoid: {
            const Value s{i};
            accumulate(adj, a, mul(g, mul(s, sub(ones_like(s), s))));
            break;
        }
        case Op::Relu:
            // The mask is piecewise constant in the input; treating it as a
            // constant keeps higher-order derivatives correct a.e.
            accumulate(adj, a, mul(g, constant(kern::relu_mask(nodes_[a].val))));
            break;
        case Op::Log:
            accumulate(adj, a, mul(g, reciprocal(Value{a})));
            break;
        case Op::Recip: {
            const Value r{i};
            accumulate(adj, a, scale(mul(g, mul(r, r)), -1.0));
            break;
        }
        case Op::Transpose:
            accumulate(adj, a, transpose(g));
            break;
        case Op::RowSoftmax: {
            // dZ = P * (g - rowsum(g*P))
            const Value p{i};
            const Value gp = mul(g, p);
            accumulate(adj, a, mul(p, sub(g, row_sums(gp))));
            break;
        }
        case Op::Mean:
            accumulate(adj, a,
                       scale(mul(ones_like(Value{a}), g),
                             1.0 / static_cast<double>(nodes_[a].val.size())));
            break;
        case Op::Sum:
        case Op::RowSums:
        case Op::ColSums:
            accumulate(adj, a, mul(ones_like(Value{a}), g));
            break;
        case Op::CeRows: {
            // dZ = (softmax(Z) - Y) * g, with g broadcast over columns.
            const Value p = row_softmax(Value{a});
            const Value d = sub(p, constant(nodes_[i].aux));
            accumulate(adj, a, mul(d, g));
            break;
        }
    }
}

std::vector<Value> Tape::backward_values(Value loss, const std::vector<Value>& wrt) {
    const Node& ln = node(loss, "backward");
    if (!ln.val.is_scalar())
        throw std::invalid_argument("backward: loss must be a scalar, got " +
                                    ln.val.shape_str());

    const int top = loss.idx;
    std::vector<Value> adj(static_cast<std::size_t>(top) + 1);
    if (nodes_[top].grad) adj[static_cast<std::size_t>(top)] = constant(Tensor::scalar(1.0));

    for (int i = top; i >= 0; --i) {
        const Value g = adj[static_cast<std::size_t>(i)];
        if (!g.valid()) continue;
        emit_vjp(i, g, adj);
    }

    std::vector<Value> out;
    out.reserve(wrt.size());
    for (const Value v : wrt) {
        if (v.valid() && v.idx <= top)
            out.push_back(adj[static_cast<std::size_t>(v.idx)]);
        else
            out.push_back(Value{});
    }
    return out;
}

GradientMap Tape::backward(Value loss) {
    std::vector<Value> wrt;
    wrt.reserve(params_.size());
    for (const auto& [name, idx] : params_) wrt.push_back(Value{idx});
    const std::vector<Value> adj = backward_values(loss, wrt);

    GradientMap gm;
    gm.grads_.reserve(params_.size());
    for (std::size_t p = 0; p < params_.size(); ++p) {
        const Tensor& pv = nodes_[static_cast<std::size_t>(params_[p].second)].val;
        Tensor g = adj[p].valid() ? value(adj[p]) : Tensor(pv.rows(), pv.cols());
        gm.index_[params_[p].first] = gm.grads_.size();
        gm.grads_.emplace_back(params_[p].first, std::move(g));
    }
    return gm;
}

}  // namespace bmcl::ad
