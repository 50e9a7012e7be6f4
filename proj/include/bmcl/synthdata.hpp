// Copyright (c) 2026 the bmcl authors
// SPDX-License-Identifier: Apache-2.0
//
// Seeded generator of class-by-context datasets with a controllable spurious
// correlation: each class is linked to one training context, features are
// class prototype + context prototype + Gaussian noise, and the test split
// can be restricted to contexts never seen in training.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bmcl/tensor.hpp"

namespace bmcl::synth {

struct GenConfig {
    int num_classes = 10;      // C
    int train_contexts = 4;    // contexts available at train time
    int test_contexts = 2;     // held-out contexts (zero-shot test)
    int feature_dim = 32;      // d
    int class_dims = 8;        // class-signal dims [0, class_dims)
    int context_dims = 8;      // context-signal dims [class_dims, class_dims+context_dims)
    double rho = 0.9;          // P(linked context) = rho + (1-rho)/train_contexts
    double sigma = 0.25;       // Gaussian noise scale on every dim
    double class_scale = 1.0;
    double context_scale = 1.0;
    int n_train = 2000;
    int n_val = 1000;
    int n_test = 1000;
    bool zero_shot = true;     // test contexts drawn only from the held-out set
    std::uint64_t seed = 1;

    void validate() const;
    std::string canonical() const;
    std::uint64_t hash() const;
};

struct Sample {
    std::vector<double> features;
    int class_label = 0;
    int context_label = 0;
};

struct Dataset {
    std::string role;            // train / val / test
    Tensor features;             // N x d
    std::vector<int> labels;     // class per sample
    std::vector<int> contexts;   // context per sample
    int num_classes = 0;
    int num_contexts = 0;        // train + held-out
    std::uint64_t config_hash = 0;

    std::size_t size() const { return labels.size(); }
    Sample get(std::size_t i) const;
    Tensor one_hot_labels() const;
};

struct DataBundle {
    Dataset train, val, test;
};

struct Prototypes {
    Tensor class_protos;    // C x d, nonzero only on class dims
    Tensor context_protos;  // (train+test contexts) x d, nonzero only on context dims
};

// Deterministic prototype regeneration; used by generation and by the
// attention-gate analysis.
Prototypes prototypes(const GenConfig& cfg);

DataBundle generate(const GenConfig& cfg);

// counts[class][context]
std::vector<std::vector<long>> context_histogram(const Dataset& ds);

void save_dataset(const std::string& path, const Dataset& ds);
Dataset load_dataset(const std::string& path);

std::uint64_t fnv1a(const std::string& s);

}  // namespace bmcl::synth
