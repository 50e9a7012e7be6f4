// Copyright (c) 2026 the bmcl authors
// SPDX-License-Identifier: Apache-2.0
//
// Shared test utilities: the central finite-difference gradient oracle and
// the op-composition catalog it runs against. Everything here evaluates
// losses through fresh tapes, independent of the gradient path under test.
#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "bmcl/autodiff.hpp"
#include "bmcl/btg.hpp"
#include "bmcl/params.hpp"
#include "bmcl/rng.hpp"
#include "bmcl/tensor.hpp"

namespace testutil {

using bmcl::DetRng;
using bmcl::ParamSet;
using bmcl::Tensor;

inline Tensor random_tensor(int rows, int cols, DetRng& rng, double scale = 1.0) {
    Tensor t(rows, cols);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = scale * rng.normal();
    return t;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

// Scalar loss evaluated from a parameter snapshot (fresh tape per call).
using LossFn = std::function<double(const ParamSet&)>;

struct GradCheck {
    bool ok = true;
    double worst = 0.0;  // worst |ad-fd| / (abs_tol + rel_tol*max(|ad|,|fd|))
    std::string where;
    long components = 0;
};

// Central differences against a reverse-mode gradient map.
inline GradCheck check_gradients(const ParamSet& params, const LossFn& f,
                                 const bmcl::ad::GradientMap& grads, double step = 1e-5,
                                 double rel_tol = 1e-4, double abs_tol = 1e-6) {
    GradCheck r;
    for (const auto& [name, p] : params.items) {
        const Tensor& g = grads.at(name);
        for (std::size_t i = 0; i < p.size(); ++i) {
            ParamSet hi = params, lo = params;
            hi.at(name)[i] += step;
            lo.at(name)[i] -= step;
            const double fd = (f(hi) - f(lo)) / (2.0 * step);
            const double ad = g[i];
            const double viol =
                std::abs(ad - fd) / (abs_tol + rel_tol * std::max(std::abs(ad), std::abs(fd)));
            ++r.components;
            if (viol > r.worst) {
                r.worst = viol;
                r.where = name + "[" + std::to_string(i) + "] ad=" + std::to_string(ad) +
                          " fd=" + std::to_string(fd);
            }
        }
    }
    r.ok = r.worst <= 1.0;
    return r;
}

// ---------------------------------------------------------------------------
// Op-composition catalog. Each entry builds seeded random parameters, knows
// how to evaluate its loss from any snapshot, and exposes the reverse-mode
// gradient at the base snapshot.

struct Composition {
    std::string name;
    ParamSet params;
    LossFn loss;
    bmcl::ad::GradientMap grads;
};

namespace detail {

using bmcl::ad::Tape;
using bmcl::ad::Value;
using bmcl::Bound;

using Builder = std::function<Value(Tape&, const Bound&)>;

inline Composition make(const std::string& name, ParamSet params, const Builder& build) {
    Composition c;
    c.name = name;
    c.params = std::move(params);
    c.loss = [build](const ParamSet& p) {
        Tape t;
        const Bound b = bind_const(t, p);
        return t.scalar(build(t, b));
    };
    Tape t;
    const Bound b = bind(t, c.params);
    c.grads = t.backward(build(t, b));
    return c;
}

}  // namespace detail

// Seeded random instance of every supported op composition, including the
// split objective with the dummy-scalar penalty and the dummy scalar itself.
inline std::vector<Composition> op_compositions(std::uint64_t seed) {
    using bmcl::ad::Tape;
    using bmcl::ad::Value;
    using bmcl::Bound;
    DetRng rng(seed);
    std::vector<Composition> out;

    const int n = rng.uniform_int(2, 4);
    const int k = rng.uniform_int(2, 4);
    const int m = rng.uniform_int(2, 4);
    const int c = rng.uniform_int(2, 4);

    {
        ParamSet p;
        p.add("a", random_tensor(n, k, rng));
        p.add("b", random_tensor(k, m, rng));
        out.push_back(detail::make("matmul_mean", std::move(p), [](Tape& t, const Bound& b) {
            return t.mean(t.matmul(b.at("a"), b.at("b")));
        }));
    }
    {
        ParamSet p;
        p.add("x", random_tensor(n, m, rng));
        p.add("row", random_tensor(1, m, rng));
        p.add("col", random_tensor(n, 1, rng));
        p.add("s", random_tensor(1, 1, rng));
        out.push_back(detail::make("broadcast_add_mul", std::move(p), [](Tape& t, const Bound& b) {
            const Value u = t.add(b.at("x"), b.at("row"));
            const Value v = t.sub(u, b.at("col"));
            return t.mean(t.mul(v, b.at("s")));
        }));
    }
    {
        ParamSet p;
        p.add("a", random_tensor(n, m, rng));
        p.add("b", random_tensor(n, m, rng));
        out.push_back(detail::make("sigmoid_mul", std::move(p), [](Tape& t, const Bound& b) {
            return t.mean(t.sigmoid(t.mul(b.at("a"), b.at("b"))));
        }));
    }
    {
        ParamSet p;
        p.add("a", random_tensor(n, k, rng));
        p.add("w", random_tensor(k, m, rng));
        p.add("bias", random_tensor(1, m, rng));
        out.push_back(detail::make("relu_affine", std::move(p), [](Tape& t, const Bound& b) {
            return t.mean(t.relu(t.add(t.matmul(b.at("a"), b.at("w")), b.at("bias"))));
        }));
    }
    {
        ParamSet p;
        p.add("a", random_tensor(n, m, rng));
        out.push_back(detail::make("log_sigmoid_sum", std::move(p), [](Tape& t, const Bound& b) {
            return t.sum(t.log(t.sigmoid(b.at("a"))));
        }));
    }
    {
        ParamSet p;
        p.add("a", random_tensor(n, m, rng, 0.5));
        out.push_back(detail::make("reciprocal_cosh", std::move(p), [](Tape& t, const Bound& b) {
            // 1 / (2 + sigmoid(a)) stays well away from poles
            const Value d = t.add(t.sigmoid(b.at("a")), t.constant(Tensor::full(1, 1, 2.0)));
            return t.mean(t.reciprocal(d));
        }));
    }
    {
        ParamSet p;
        p.add("a", random_tensor(n, k, rng));
        out.push_back(detail::make("transpose_gram", std::move(p), [](Tape& t, const Bound& b) {
            return t.mean(t.matmul(t.transpose(b.at("a")), b.at("a")));
        }));
    }
    {
        ParamSet p;
        p.add("z", random_tensor(n, c, rng));
        const Tensor w = random_tensor(n, c, rng);
        out.push_back(detail::make("row_softmax_weighted", std::move(p),
                                   [w](Tape& t, const Bound& b) {
                                       return t.sum(t.mul(t.row_softmax(b.at("z")), t.constant(w)));
                                   }));
    }
    {
        ParamSet p;
        p.add("z", random_tensor(n, c, rng));
        out.push_back(detail::make("rowsum_colsum_mix", std::move(p), [](Tape& t, const Bound& b) {
            const Value rs = t.row_sums(t.sigmoid(b.at("z")));  // n x 1
            const Value cs = t.col_sums(t.mul(b.at("z"), rs));  // 1 x c
            return t.sum(t.mul(cs, cs));
        }));
    }
    {
        ParamSet p;
        p.add("x", random_tensor(n, k, rng));
        p.add("w", random_tensor(k, c, rng));
        p.add("bias", random_tensor(1, c, rng));
        std::vector<int> labels(static_cast<std::size_t>(n));
        for (auto& y : labels) y = rng.uniform_int(0, c - 1);
        out.push_back(detail::make("cross_entropy_hard", std::move(p),
                                   [labels](Tape& t, const Bound& b) {
                                       return t.softmax_cross_entropy(
                                           t.add(t.matmul(b.at("x"), b.at("w")), b.at("bias")),
                                           labels);
                                   }));
    }
    {
        ParamSet p;
        p.add("z", random_tensor(n, c, rng));
        Tensor soft = random_tensor(n, c, rng);
        for (int i = 0; i < n; ++i) {
            double s = 0.0;
            for (int j = 0; j < c; ++j) {
                soft.at(i, j) = std::exp(soft.at(i, j));
                s += soft.at(i, j);
            }
            for (int j = 0; j < c; ++j) soft.at(i, j) /= s;
        }
        out.push_back(detail::make("cross_entropy_soft", std::move(p),
                                   [soft](Tape& t, const Bound& b) {
                                       return t.softmax_cross_entropy(b.at("z"), soft);
                                   }));
    }
    {
        // Two-layer network with cross entropy, the classic case.
        const int h = rng.uniform_int(3, 5);
        ParamSet p;
        p.add("w1", random_tensor(k, h, rng));
        p.add("b1", random_tensor(1, h, rng, 0.2));
        p.add("w2", random_tensor(h, c, rng));
        p.add("b2", random_tensor(1, c, rng, 0.2));
        const Tensor x = random_tensor(n, k, rng);
        std::vector<int> labels(static_cast<std::size_t>(n));
        for (auto& y : labels) y = rng.uniform_int(0, c - 1);
        out.push_back(detail::make(
            "two_layer_net_ce", std::move(p), [x, labels](Tape& t, const Bound& b) {
                const Value h1 = t.relu(t.add(t.matmul(t.constant(x), b.at("w1")), b.at("b1")));
                return t.softmax_cross_entropy(t.add(t.matmul(h1, b.at("w2")), b.at("b2")),
                                               labels);
            }));
    }
    {
        // Split objective over theta: softmax-weighted risks plus the squared
        // dummy-scalar penalty, plus the entropy balance term.
        const int K = rng.uniform_int(6, 12);
        const int splits = rng.uniform_int(2, 4);
        ParamSet p;
        p.add("theta", random_tensor(K, splits, rng));
        const Tensor loss_row = random_tensor(1, K, rng, 0.8);
        const Tensor dummy_row = random_tensor(1, K, rng, 0.8);
        out.push_back(detail::make(
            "irm_split_objective", std::move(p), [loss_row, dummy_row](Tape& t, const Bound& b) {
                return bmcl::btg::build_split_objective(t, b.at("theta"), loss_row, dummy_row,
                                                        1.0, 0.7)
                    .objective;
            }));
    }
    {
        // The dummy scalar itself: d/dw of the weighted risk R(w*h).
        ParamSet p;
        p.add("w", Tensor::full(1, 1, 1.0));
        const Tensor z = random_tensor(n, c, rng);
        std::vector<int> labels(static_cast<std::size_t>(n));
        for (auto& y : labels) y = rng.uniform_int(0, c - 1);
        out.push_back(detail::make("dummy_scalar_risk", std::move(p),
                                   [z, labels](Tape& t, const Bound& b) {
                                       const Value scaled = t.mul(t.constant(z), b.at("w"));
                                       return t.softmax_cross_entropy(scaled, labels);
                                   }));
    }
    return out;
}

}  // namespace testutil
