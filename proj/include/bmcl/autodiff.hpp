// Copyright (c) 2026 the bmcl authors
// SPDX-License-Identifier: Apache-2.0
//
// Minimal reverse-mode autodiff over 2-D tensors. The tape is eager: every
// op evaluates immediately and records a node. backward() emits the adjoint
// computation as further nodes on the same tape, which makes gradients of
// gradients available for free — adapt a parameter with the returned adjoint
// Values, keep building forward ops, and differentiate again.
#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "bmcl/tensor.hpp"

namespace bmcl::ad {

// Handle to a tape node.
struct Value {
    int idx = -1;
    bool valid() const { return idx >= 0; }
};

// Per-parameter gradients, in tape registration order. Parameters that do
// not lie on the path to the loss get exact zero tensors.
class GradientMap {
public:
    const Tensor& at(const std::string& name) const;
    bool has(const std::string& name) const { return index_.count(name) != 0; }
    std::size_t size() const { return grads_.size(); }
    double l2_norm() const;

    auto begin() const { return grads_.begin(); }
    auto end() const { return grads_.end(); }

private:
    friend class Tape;
    std::vector<std::pair<std::string, Tensor>> grads_;
    std::unordered_map<std::string, std::size_t> index_;
};

class Tape {
public:
    // Trainable leaf; names must be unique per tape.
    Value leaf(Tensor t, const std::string& name);
    // Non-trainable input / constant.
    Value constant(Tensor t);

    Value matmul(Value a, Value b);
    Value add(Value a, Value b);
    Value sub(Value a, Value b);
    Value mul(Value a, Value b);
    Value scale(Value a, double k);
    Value sigmoid(Value a);
    Value relu(Value a);
    Value log(Value a);  // clamps the argument at 1e-300
    Value reciprocal(Value a);
    Value transpose(Value a);
    Value row_softmax(Value a);
    Value mean(Value a);
    Value sum(Value a);
    Value row_sums(Value a);
    Value col_sums(Value a);

    // Softmax cross entropy per row against soft targets (rows must be
    // probability vectors) or integer class labels. Returns Nx1 losses.
    Value cross_entropy_rows(Value logits, Tensor targets);
    Value cross_entropy_rows(Value logits, const std::vector<int>& labels);
    // Batch-mean convenience, returns a scalar.
    Value softmax_cross_entropy(Value logits, Tensor targets);
    Value softmax_cross_entropy(Value logits, const std::vector<int>& labels);

    const Tensor& value(Value v) const;
    double scalar(Value v) const { return value(v).scalar_value(); }

    // Reverse pass from a scalar loss. Gradients are themselves tape nodes;
    // repeated calls give identical results.
    GradientMap backward(Value loss);
    // Adjoint Values for specific nodes (invalid Value when the loss does not
    // depend on them). Use these to build second-order computations.
    std::vector<Value> backward_values(Value loss, const std::vector<Value>& wrt);

    std::size_t node_count() const { return nodes_.size(); }
    std::size_t param_count() const { return params_.size(); }

    static Tensor one_hot(const std::vector<int>& labels, int num_classes);

private:
    enum class Op : std::uint8_t {
        Leaf, Const, MatMul, Add, Sub, Mul, Scale, Sigmoid, Relu, Log, Recip,
        Transpose, RowSoftmax, Mean, Sum, RowSums, ColSums, CeRows
    };

    struct Node {
        Op op = Op::Const;
        int a = -1, b = -1;
        double k = 0.0;   // Scale factor
        bool grad = false;
        Tensor val;
        Tensor aux;       // CeRows: soft targets
    };

    Value push(Node n);
    Value unary(Op op, Value a, const char* name);
    Value binary_ew(Op op, Value a, Value b, const char* name);
    const Node& node(Value v, const char* caller) const;
    Value ones_like(Value a);
    void accumulate(std::vector<Value>& adj, int target, Value g);
    void emit_vjp(int i, Value g, std::vector<Value>& adj);

    std::vector<Node> nodes_;
    std::vector<std::pair<std::string, int>> params_;  // name -> node index
    std::unordered_map<std::string, int> param_index_;
};

}  // namespace bmcl::ad
