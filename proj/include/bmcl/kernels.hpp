// Copyright (c) 2026 the bmcl authors
// SPDX-License-Identifier: Apache-2.0
//
// Numeric kernels behind the tape. The default entry points parallelize with
// OpenMP; bmcl::kern::serial holds the plain reference implementations used
// by the tests and the benchmark. Every parallel kernel writes each output
// element from exactly one thread with a fixed-order inner loop, so results
// are bit-identical to the serial reference for any thread count. Full
// reductions (sum, mean, row/col sums) stay serial in index order for the
// same reason.
#pragma once

#include <vector>

#include "bmcl/tensor.hpp"

namespace bmcl::kern {

// Broadcast rules for binary elementwise ops: equal shapes, row vector (1xM)
// or column vector (Nx1) second operand, or a 1x1 scalar on either side.
enum class Bcast { Same, Row, Col, ScalarL, ScalarR };

Bcast bcast_kind(const Tensor& a, const Tensor& b, const char* op_name);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double k);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor relu_mask(const Tensor& a);  // 1 where a > 0 else 0
Tensor log_clamped(const Tensor& a);  // ln(max(x, 1e-300))
Tensor reciprocal(const Tensor& a);
Tensor row_softmax(const Tensor& a);
// Per-row softmax cross entropy against soft targets; returns Nx1.
Tensor cross_entropy_rows(const Tensor& logits, const Tensor& targets);

double sum(const Tensor& a);
double mean(const Tensor& a);
Tensor row_sums(const Tensor& a);  // Nx1
Tensor col_sums(const Tensor& a);  // 1xM

void axpy(Tensor& y, double a, const Tensor& x);  // y += a*x
double l2_norm_sq(const Tensor& a);
bool all_finite(const Tensor& a);

namespace serial {

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double k);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor row_softmax(const Tensor& a);
Tensor cross_entropy_rows(const Tensor& logits, const Tensor& targets);

}  // namespace serial

}  // namespace bmcl::kern
