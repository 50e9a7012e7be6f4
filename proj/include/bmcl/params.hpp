// Copyright (c) 2026 the bmcl authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "bmcl/autodiff.hpp"
#include "bmcl/kernels.hpp"
#include "bmcl/tensor.hpp"

namespace bmcl {

// Ordered, named parameter snapshot. Snapshots are value types: updates copy
// and modify, which is what the inner/outer adaptation pattern needs.
struct ParamSet {
    std::vector<std::pair<std::string, Tensor>> items;

    void add(std::string name, Tensor t) {
        if (has(name)) throw std::invalid_argument("ParamSet: duplicate '" + name + "'");
        items.emplace_back(std::move(name), std::move(t));
    }
    bool has(const std::string& name) const {
        for (const auto& [n, t] : items)
            if (n == name) return true;
        return false;
    }
    Tensor& at(const std::string& name) {
        for (auto& [n, t] : items)
            if (n == name) return t;
        throw std::invalid_argument("ParamSet: unknown parameter '" + name + "'");
    }
    const Tensor& at(const std::string& name) const {
        return const_cast<ParamSet*>(this)->at(name);
    }
    std::size_t size() const { return items.size(); }

    // p += coef * g for every parameter present in the gradient map.
    // Off-path gradients are exact zeros, so this is a plain SGD step.
    void axpy(const ad::GradientMap& grads, double coef) {
        for (auto& [name, t] : items)
            if (grads.has(name)) kern::axpy(t, coef, grads.at(name));
    }

    bool same_values(const ParamSet& o) const {
        if (items.size() != o.items.size()) return false;
        for (std::size_t i = 0; i < items.size(); ++i) {
            if (items[i].first != o.items[i].first) return false;
            if (!items[i].second.same_shape(o.items[i].second)) return false;
            if (items[i].second.vec() != o.items[i].second.vec()) return false;
        }
        return true;
    }
};

// Parameter names resolved to tape Values. Entries may be leaves (training),
// constants (evaluation) or arbitrary nodes (adapted snapshots).
struct Bound {
    std::unordered_map<std::string, ad::Value> values;

    ad::Value at(const std::string& name) const {
        auto it = values.find(name);
        if (it == values.end())
            throw std::invalid_argument("Bound: unknown parameter '" + name + "'");
        return it->second;
    }
    void set(const std::string& name, ad::Value v) { values[name] = v; }
};

inline Bound bind(ad::Tape& tape, const ParamSet& params) {
    Bound b;
    for (const auto& [name, t] : params.items) b.values[name] = tape.leaf(t, name);
    return b;
}

inline Bound bind_const(ad::Tape& tape, const ParamSet& params) {
    Bound b;
    for (const auto& [name, t] : params.items) b.values[name] = tape.constant(t);
    return b;
}

}  // namespace bmcl
