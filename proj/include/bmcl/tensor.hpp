// Copyright (c) 2026 the bmcl authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace bmcl {

// Dense row-major matrix of doubles. Scalars are 1x1, row vectors 1xN,
// column vectors Nx1. All numerics in the project are double precision.
class Tensor {
public:
    Tensor() = default;
    Tensor(int rows, int cols)
        : rows_(rows), cols_(cols), v_(check_dims(rows, cols), 0.0) {}

    static Tensor full(int rows, int cols, double value) {
        Tensor t(rows, cols);
        for (auto& x : t.v_) x = value;
        return t;
    }
    static Tensor scalar(double value) { return full(1, 1, value); }
    static Tensor row(std::initializer_list<double> xs) {
        Tensor t(1, static_cast<int>(xs.size()));
        int j = 0;
        for (double x : xs) t.v_[j++] = x;
        return t;
    }
    static Tensor column(std::initializer_list<double> xs) {
        Tensor t(static_cast<int>(xs.size()), 1);
        int i = 0;
        for (double x : xs) t.v_[i++] = x;
        return t;
    }
    static Tensor of(std::initializer_list<std::initializer_list<double>> rows) {
        const int r = static_cast<int>(rows.size());
        const int c = r == 0 ? 0 : static_cast<int>(rows.begin()->size());
        Tensor t(r, c);
        int i = 0;
        for (const auto& rr : rows) {
            if (static_cast<int>(rr.size()) != c)
                throw std::invalid_argument("Tensor::of: ragged rows");
            int j = 0;
            for (double x : rr) t.at(i, j++) = x;
            ++i;
        }
        return t;
    }

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    std::size_t size() const { return v_.size(); }
    bool empty() const { return v_.empty(); }
    bool is_scalar() const { return rows_ == 1 && cols_ == 1; }

    double& at(int r, int c) { return v_[static_cast<std::size_t>(r) * cols_ + c]; }
    double at(int r, int c) const { return v_[static_cast<std::size_t>(r) * cols_ + c]; }
    double& operator[](std::size_t i) { return v_[i]; }
    double operator[](std::size_t i) const { return v_[i]; }

    double* data() { return v_.data(); }
    const double* data() const { return v_.data(); }
    std::vector<double>& vec() { return v_; }
    const std::vector<double>& vec() const { return v_; }

    double scalar_value() const {
        if (!is_scalar())
            throw std::invalid_argument("Tensor: expected scalar, got " + shape_str());
        return v_[0];
    }

    bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
    std::string shape_str() const {
        return std::to_string(rows_) + "x" + std::to_string(cols_);
    }

    void fill(double value) {
        for (auto& x : v_) x = value;
    }

private:
    static std::size_t check_dims(int rows, int cols) {
        if (rows < 0 || cols < 0)
            throw std::invalid_argument("Tensor: negative dimension");
        return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
    }

    int rows_ = 0;
    int cols_ = 0;
    std::vector<double> v_;
};

}  // namespace bmcl
