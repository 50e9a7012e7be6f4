// Copyright (c) 2026 the bmcl authors
// SPDX-License-Identifier: Apache-2.0
//
// The learnable pipeline: MLP encoder producing mixed features, a sigmoid
// gate splitting them into a causal stream and its confounding complement,
// and three linear heads (task, bias, auxiliary).
#pragma once

#include <cstdint>
#include <string>

#include "bmcl/params.hpp"

namespace bmcl {

struct ModelConfig {
    int input_dim = 32;
    int hidden_dim = 64;
    int hidden_layers = 2;
    int feature_dim = 32;
    int num_classes = 10;
    bool use_gate = true;

    void validate() const;
    std::string canonical() const;
};

enum class Head { Task, Bias, Aux };

// Streams produced by one encode pass. fc + fs == fx elementwise by
// construction; the gate lies in (0, 1) per dimension.
struct Decoupled {
    ad::Value fx, gate, fc, fs;
};

class Model {
public:
    explicit Model(ModelConfig cfg);

    ParamSet init_params(std::uint64_t seed) const;

    Decoupled encode(ad::Tape& tape, ad::Value x, const Bound& p) const;
    ad::Value head_logits(ad::Tape& tape, ad::Value features, const Bound& p, Head head) const;
    // encode + stream selection: task/aux heads read the causal stream, the
    // bias head reads the confounding stream.
    ad::Value predict(ad::Tape& tape, ad::Value x, const Bound& p, Head head) const;

    // Grad-free batch helpers.
    Tensor eval_logits(const ParamSet& params, const Tensor& x, Head head) const;
    Tensor eval_gate(const ParamSet& params, const Tensor& x) const;
    Tensor eval_fs(const ParamSet& params, const Tensor& x) const;
    Tensor eval_fx(const ParamSet& params, const Tensor& x) const;

    const ModelConfig& config() const { return cfg_; }

private:
    ModelConfig cfg_;
};

struct Checkpoint {
    ModelConfig model;
    ParamSet params;
    std::uint64_t dataset_hash = 0;
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace bmcl
