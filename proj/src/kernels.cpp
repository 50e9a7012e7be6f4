// Copyright (c) 2026 the bmcl authors
// SPDX-License-Identifier: Apache-2.0
#include "bmcl/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace bmcl::kern {

namespace {

// Below this element count the OpenMP fork overhead dominates.
constexpr long kParallelCutoff = 16 * 1024;

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
    throw std::invalid_argument(std::string(op) + ": incompatible shapes (" +
                                a.shape_str() + " vs " + b.shape_str() + ")");
}

double stable_lse_minus_dot(const double* z, const double* t, int c, double* lse_out) {
    double m = z[0];
    for (int j = 1; j < c; ++j) m = std::max(m, z[j]);
    double s = 0.0;
    for (int j = 0; j < c; ++j) s += std::exp(z[j] - m);
    const double lse = m + std::log(s);
    if (lse_out) *lse_out = lse;
    double dot = 0.0;
    for (int j = 0; j < c; ++j) dot += t[j] * z[j];
    return lse - dot;
}

void softmax_row(const double* z, double* p, int c) {
    double m = z[0];
    for (int j = 1; j < c; ++j) m = std::max(m, z[j]);
    double s = 0.0;
    for (int j = 0; j < c; ++j) {
        p[j] = std::exp(z[j] - m);
        s += p[j];
    }
    const double inv = 1.0 / s;
    for (int j = 0; j < c; ++j) p[j] *= inv;
}

}  // namespace

Bcast bcast_kind(const Tensor& a, const Tensor& b, const char* op_name) {
    if (a.same_shape(b)) return Bcast::Same;
    if (b.is_scalar()) return Bcast::ScalarR;
    if (a.is_scalar()) return Bcast::ScalarL;
    if (b.rows() == 1 && b.cols() == a.cols()) return Bcast::Row;
    if (b.cols() == 1 && b.rows() == a.rows()) return Bcast::Col;
    shape_error(op_name, a, b);
}

// ---------------------------------------------------------------------------
// serial reference

namespace serial {

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows()) shape_error("matmul", a, b);
    const int n = a.rows(), k = a.cols(), m = b.cols();
    Tensor out(n, m);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < m; ++j) {
            double acc = 0.0;
            for (int p = 0; p < k; ++p) acc += a.at(i, p) * b.at(p, j);
            out.at(i, j) = acc;
        }
    }
    return out;
}

Tensor transpose(const Tensor& a) {
    Tensor out(a.cols(), a.rows());
    for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < a.cols(); ++j) out.at(j, i) = a.at(i, j);
    return out;
}

namespace {
template <typename F>
Tensor binary(const Tensor& a, const Tensor& b, const char* name, F f) {
    const Bcast kind = bcast_kind(a, b, name);
    const Tensor& big = kind == Bcast::ScalarL ? b : a;
    Tensor out(big.rows(), big.cols());
    const int cols = big.cols();
    for (long i = 0; i < static_cast<long>(big.size()); ++i) {
        const int r = static_cast<int>(i / cols), c = static_cast<int>(i % cols);
        double x, y;
        switch (kind) {
            case Bcast::Same:    x = a[i];        y = b[i];        break;
            case Bcast::Row:     x = a[i];        y = b.at(0, c);  break;
            case Bcast::Col:     x = a[i];        y = b.at(r, 0);  break;
            case Bcast::ScalarR: x = a[i];        y = b[0];        break;
            case Bcast::ScalarL: x = a[0];        y = b[i];        break;
            default:             x = y = 0.0;                      break;
        }
        out[i] = f(x, y);
    }
    return out;
}

template <typename F>
Tensor unary(const Tensor& a, F f) {
    Tensor out(a.rows(), a.cols());
    for (long i = 0; i < static_cast<long>(a.size()); ++i) out[i] = f(a[i]);
    return out;
}
}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary(a, b, "add", [](double x, double y) { return x + y; });
}
Tensor sub(const Tensor& a, const Tensor& b) {
    return binary(a, b, "sub", [](double x, double y) { return x - y; });
}
Tensor mul(const Tensor& a, const Tensor& b) {
    return binary(a, b, "mul", [](double x, double y) { return x * y; });
}
Tensor scale(const Tensor& a, double k) {
    return unary(a, [k](double x) { return k * x; });
}
Tensor sigmoid(const Tensor& a) {
    return unary(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); });
}
Tensor relu(const Tensor& a) {
    return unary(a, [](double x) { return x > 0.0 ? x : 0.0; });
}

Tensor row_softmax(const Tensor& a) {
    if (a.cols() < 1) throw std::invalid_argument("row_softmax: empty rows");
    Tensor out(a.rows(), a.cols());
    for (int i = 0; i < a.rows(); ++i)
        softmax_row(a.data() + static_cast<std::size_t>(i) * a.cols(),
                    out.data() + static_cast<std::size_t>(i) * a.cols(), a.cols());
    return out;
}

Tensor cross_entropy_rows(const Tensor& logits, const Tensor& targets) {
    if (!logits.same_shape(targets)) shape_error("cross_entropy_rows", logits, targets);
    Tensor out(logits.rows(), 1);
    for (int i = 0; i < logits.rows(); ++i)
        out.at(i, 0) = stable_lse_minus_dot(
            logits.data() + static_cast<std::size_t>(i) * logits.cols(),
            targets.data() + static_cast<std::size_t>(i) * logits.cols(), logits.cols(),
            nullptr);
    return out;
}

}  // namespace serial

// ---------------------------------------------------------------------------
// parallel entry points

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows()) shape_error("matmul", a, b);
    const int n = a.rows(), k = a.cols(), m = b.cols();
    if (static_cast<long>(n) * k * m < kParallelCutoff) return serial::matmul(a, b);
    Tensor out(n, m);
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
        const double* arow = a.data() + static_cast<std::size_t>(i) * k;
        double* orow = out.data() + static_cast<std::size_t>(i) * m;
        for (int p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b.data() + static_cast<std::size_t>(p) * m;
            for (int j = 0; j < m; ++j) orow[j] += av * brow[j];
        }
    }
    return out;
}

Tensor transpose(const Tensor& a) { return serial::transpose(a); }

namespace {
template <typename F>
Tensor binary_par(const Tensor& a, const Tensor& b, const char* name, F f) {
    const Bcast kind = bcast_kind(a, b, name);
    const Tensor& big = kind == Bcast::ScalarL ? b : a;
    Tensor out(big.rows(), big.cols());
    const long n = static_cast<long>(big.size());
    const int cols = big.cols();
#pragma omp parallel for schedule(static) if (n >= kParallelCutoff)
    for (long i = 0; i < n; ++i) {
        const int r = static_cast<int>(i / cols), c = static_cast<int>(i % cols);
        double x, y;
        switch (kind) {
            case Bcast::Same:    x = a[i]; y = b[i];       break;
            case Bcast::Row:     x = a[i]; y = b.at(0, c); break;
            case Bcast::Col:     x = a[i]; y = b.at(r, 0); break;
            case Bcast::ScalarR: x = a[i]; y = b[0];       break;
            case Bcast::ScalarL: x = a[0]; y = b[i];       break;
            default:             x = y = 0.0;              break;
        }
        out[i] = f(x, y);
    }
    return out;
}

template <typename F>
Tensor unary_par(const Tensor& a, F f) {
    Tensor out(a.rows(), a.cols());
    const long n = static_cast<long>(a.size());
#pragma omp parallel for schedule(static) if (n >= kParallelCutoff)
    for (long i = 0; i < n; ++i) out[i] = f(a[i]);
    return out;
}
}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_par(a, b, "add", [](double x, double y) { return x + y; });
}
Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_par(a, b, "sub", [](double x, double y) { return x - y; });
}
Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_par(a, b, "mul", [](double x, double y) { return x * y; });
}
Tensor scale(const Tensor& a, double k) {
    return unary_par(a, [k](double x) { return k * x; });
}
Tensor sigmoid(const Tensor& a) {
    return unary_par(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); });
}
Tensor relu(const Tensor& a) {
    return unary_par(a, [](double x) { return x > 0.0 ? x : 0.0; });
}
Tensor relu_mask(const Tensor& a) {
    return unary_par(a, [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}
Tensor log_clamped(const Tensor& a) {
    return unary_par(a, [](double x) { return std::log(std::max(x, 1e-300)); });
}
Tensor reciprocal(const Tensor& a) {
    return unary_par(a, [](double x) { return 1.0 / x; });
}

Tensor row_softmax(const Tensor& a) {
    if (a.cols() < 1) throw std::invalid_argument("row_softmax: empty rows");
    Tensor out(a.rows(), a.cols());
    const int n = a.rows(), c = a.cols();
#pragma omp parallel for schedule(static) if (static_cast<long>(n) * c >= kParallelCutoff)
    for (int i = 0; i < n; ++i)
        softmax_row(a.data() + static_cast<std::size_t>(i) * c,
                    out.data() + static_cast<std::size_t>(i) * c, c);
    return out;
}

Tensor cross_entropy_rows(const Tensor& logits, const Tensor& targets) {
    if (!logits.same_shape(targets)) shape_error("cross_entropy_rows", logits, targets);
    const int n = logits.rows(), c = logits.cols();
    Tensor out(n, 1);
#pragma omp parallel for schedule(static) if (static_cast<long>(n) * c >= kParallelCutoff)
    for (int i = 0; i < n; ++i)
        out.at(i, 0) = stable_lse_minus_dot(
            logits.data() + static_cast<std::size_t>(i) * c,
            targets.data() + static_cast<std::size_t>(i) * c, c, nullptr);
    return out;
}

double sum(const Tensor& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i];
    return s;
}

double mean(const Tensor& a) {
    if (a.empty()) throw std::invalid_argument("mean: empty tensor");
    return sum(a) / static_cast<double>(a.size());
}

Tensor row_sums(const Tensor& a) {
    Tensor out(a.rows(), 1);
    for (int i = 0; i < a.rows(); ++i) {
        double s = 0.0;
        for (int j = 0; j < a.cols(); ++j) s += a.at(i, j);
        out.at(i, 0) = s;
    }
    return out;
}

Tensor col_sums(const Tensor& a) {
    Tensor out(1, a.cols());
    for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < a.cols(); ++j) out.at(0, j) += a.at(i, j);
    return out;
}

void axpy(Tensor& y, double a, const Tensor& x) {
    if (!y.same_shape(x)) shape_error("axpy", y, x);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

double l2_norm_sq(const Tensor& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * a[i];
    return s;
}

bool all_finite(const Tensor& a) {
    for (std::size_t i = 0; i < a.size(); ++i)
        if (!std::isfinite(a[i])) return false;
    return true;
}

}  // namespace bmcl::kern
