// Copyright (c) 2026 the bmcl authors
// SPDX-License-Identifier: Apache-2.0
//
// Meta-causal feature learning: per-split meta-tasks, inner adaptation on
// the support set, outer update from query losses (first-order by default,
// exact second-order behind a flag), and the mixup ERM branch.
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "bmcl/btg.hpp"
#include "bmcl/model.hpp"
#include "bmcl/rng.hpp"
#include "bmcl/synthdata.hpp"

namespace bmcl::mcfl {

struct MetaTaskConfig {
    int classes_per_task = 3;   // w
    int support_per_class = 2;  // i
    int query_per_class = 13;   // j
    int tasks_total = 32;       // s; one update round consumes one task per split
    double inner_lr = 0.05;     // alpha
    double outer_lr = 0.05;     // beta
    int inner_steps = 1;
    bool second_order = false;

    void validate(int splits) const;
    std::string canonical() const;
};

struct MetaTask {
    int split = -1;
    std::vector<int> support;  // indices into the training set
    std::vector<int> query;
    bool fallback = false;     // split too small, sampled with replacement
};

// One task per split, in split order. Normal path: w classes without
// replacement, then i+j samples per class without replacement, first i into
// the support set. Splits lacking eligible classes fall back to sampling
// with replacement and are recorded as warnings.
std::vector<MetaTask> sample_meta_tasks(const btg::Partition& partition,
                                        const std::vector<int>& labels,
                                        const MetaTaskConfig& cfg, DetRng& rng,
                                        std::vector<std::string>* warnings = nullptr);

// Generic inner adaptation: gradient steps of a caller-supplied scalar loss.
// The base snapshot is never mutated.
using LossBuilder = std::function<ad::Value(ad::Tape&, const Bound&)>;
ParamSet adapt(const ParamSet& base, const LossBuilder& loss, double alpha, int steps,
               double* first_loss = nullptr);

struct InnerResult {
    ParamSet adapted;
    double support_loss = 0.0;
};
InnerResult inner_update(const Model& model, const ParamSet& params,
                         const synth::Dataset& train, const MetaTask& task, double alpha,
                         int steps);

// Mean query cross entropy over the adapted snapshots; task count must match
// the number of splits.
double meta_query_loss(const Model& model, const std::vector<MetaTask>& tasks,
                       const std::vector<ParamSet>& adapted, const synth::Dataset& train,
                       int splits);

struct OuterResult {
    ParamSet params;
    double meta_loss = 0.0;
    std::vector<double> task_losses;
    double grad_norm = 0.0;
};
// Inner-adapts every task, then steps the base parameters against the mean
// query gradient (evaluated at the adapted snapshots in first-order mode,
// differentiated through the inner step in second-order mode).
OuterResult outer_update(const Model& model, const ParamSet& params,
                         const std::vector<MetaTask>& tasks, const synth::Dataset& train,
                         const MetaTaskConfig& cfg, double lr_scale = 1.0);

struct MixupConfig {
    double alpha = 1.0;  // Beta(alpha, alpha) mixing coefficient
    int batch_size = 64;

    void validate() const;
    std::string canonical() const;
};

struct MixedBatch {
    Tensor x;  // mixed features
    Tensor y;  // mixed soft labels, rows sum to 1
};
// Row i becomes lambda_i * row_i + (1 - lambda_i) * row_{perm[i]}, with the
// same coefficient applied to features and labels.
MixedBatch mix_with(const Tensor& x, const Tensor& y_onehot, const std::vector<int>& perm,
                    const std::vector<double>& lambdas);
// Pairs the batch against a seeded shuffle of itself; one Beta(alpha, alpha)
// lambda per pair.
MixedBatch mixup_batch(const Tensor& x, const Tensor& y_onehot, const MixupConfig& cfg,
                       DetRng& rng);

struct Stage2Config {
    MetaTaskConfig meta;
    MixupConfig mixup;
    double erm_lr = 0.05;
    double erm_weight = 1.0;
    bool use_meta = true;
    bool use_erm = true;
};

struct StepResult {
    ParamSet params;
    double meta_loss = 0.0;
    double erm_loss = 0.0;
    double total_loss = 0.0;  // meta_loss + erm_loss exactly
    std::vector<double> task_losses;
    double meta_grad_norm = 0.0;
    double erm_grad_norm = 0.0;
    int fallbacks = 0;
};
// One combined update: meta branch through the task head, mixup ERM branch
// through the auxiliary head, both applied to the same starting snapshot.
StepResult stage2_step(const Model& model, const ParamSet& params,
                       const btg::Partition& partition, const synth::Dataset& train,
                       const Stage2Config& cfg, DetRng& task_rng, DetRng& mixup_rng,
                       double lr_scale = 1.0);

// Gathers dataset rows / labels for a set of sample indices.
Tensor gather_rows(const Tensor& x, const std::vector<int>& idx);
std::vector<int> gather_labels(const std::vector<int>& labels, const std::vector<int>& idx);

}  // namespace bmcl::mcfl
