// Copyright (c) 2026 the bmcl authors
// SPDX-License-Identifier: Apache-2.0
//
// Experiment orchestration: the two-stage training schedule with periodic
// partition refresh, evaluation, the ablation ladder and balancing grid,
// metrics persistence, and attention-gate heatmap export.
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "bmcl/btg.hpp"
#include "bmcl/mcfl.hpp"
#include "bmcl/model.hpp"
#include "bmcl/synthdata.hpp"

namespace bmcl::harness {

enum class Variant { Erm, Gate, Meta, Btg, Full };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

struct RunConfig {
    synth::GenConfig gen;
    btg::BtgConfig btg;
    mcfl::MetaTaskConfig meta;
    mcfl::MixupConfig mixup;
    ModelConfig model;

    Variant variant = Variant::Full;
    int epochs = 60;
    int refresh_start = 12;   // first stage-1 refresh epoch
    int refresh_period = 6;
    double lr = 0.05;         // ERM-path learning rate (mixup branch and plain variants)
    double erm_weight = 1.0;
    double lr_decay = 0.1;
    double lr_decay_at = 0.9;  // fraction of total epochs
    int eval_every = 1;
    std::uint64_t seed = 1;
    std::string out_dir;       // empty: keep everything in memory

    void validate() const;
    // Resolved copy: model dims synced to the generator, gate switched off
    // for the plain ERM variant, generator seeded from the run seed.
    RunConfig resolved() const;
    std::string canonical() const;
    std::uint64_t hash() const;
};

// Top-1 accuracy with one-vs-rest confusion counts per class.
struct EvalResult {
    double accuracy = 0.0;  // percent
    long correct = 0;
    long total = 0;
    std::vector<long> tp, fp, fn, tn;

    // Recomputes the metric from the recorded counts (must equal accuracy).
    double accuracy_from_counts() const;
};
EvalResult top1_accuracy(const Tensor& logits, const std::vector<int>& labels);

// Gate focus analysis: which feature dimensions respond to class identity vs
// context identity (main effects over a prototype grid), and how much gate
// mass each group receives.
struct GateFocus {
    Tensor mean_gate;              // 1 x feature_dim
    std::vector<int> dim_is_class; // 1 where class sensitivity dominates
    double class_mass = 0.0;       // mean gate over class-dominant dims
    double context_mass = 0.0;     // mean gate over context-dominant dims
    double soft_class_mass = 0.0;  // gate weighted by normalized sensitivities
    double soft_context_mass = 0.0;

    std::string to_text() const;
};
GateFocus gate_focus_summary(const Model& model, const ParamSet& params,
                             const synth::GenConfig& gen, const Tensor& ref_features);

struct RunResult {
    double val_accuracy = 0.0;
    double test_accuracy = 0.0;
    EvalResult val_eval, test_eval;
    GateFocus gate;
    ParamSet params;
    btg::Partition partition;
    std::uint64_t dataset_hash = 0;
    std::uint64_t config_hash = 0;
    std::string metrics;  // full metrics stream (also written to out_dir)
    int refreshes = 0;
};

RunResult run_training(const RunConfig& cfg);

struct AblationCell {
    Variant variant;
    std::uint64_t seed = 0;
    double val_acc = 0.0, test_acc = 0.0;
    bool gate_class_focused = false;
};
struct AblationReport {
    std::vector<AblationCell> cells;
    std::vector<Variant> ladder;
    std::map<int, double> mean_val, mean_test;  // keyed by static_cast<int>(Variant)
    std::uint64_t config_hash = 0;

    double mean_test_for(Variant v) const { return mean_test.at(static_cast<int>(v)); }
    double mean_val_for(Variant v) const { return mean_val.at(static_cast<int>(v)); }
    std::string to_text() const;
};
// Trains the ladder {erm, gate, meta, btg, full} for every seed on shared
// per-seed datasets.
AblationReport run_ablation(const RunConfig& base, const std::vector<std::uint64_t>& seeds);

struct BalanceCell {
    bool meta_learner = false;
    btg::BalanceStrategy strategy = btg::BalanceStrategy::None;
    double val_acc = 0.0, test_acc = 0.0, entropy = 0.0;
};
struct BalanceComparison {
    std::vector<BalanceCell> cells;  // 8 cells: {backbone, meta} x {none, LB, MB, GB}
    std::uint64_t config_hash = 0;

    const BalanceCell& cell(bool meta_learner, btg::BalanceStrategy s) const;
    std::string to_text() const;
};
BalanceComparison run_balance_comparison(const RunConfig& base,
                                         const std::vector<std::uint64_t>& seeds);

// Renders per-sample gate vectors as grayscale strips (one PGM per class)
// plus a focus summary file.
void export_attention_heatmaps(const Model& model, const ParamSet& params,
                               const synth::Dataset& samples, const synth::GenConfig& gen,
                               const std::string& out_dir, int max_rows_per_class = 48);

// Aggregation helper shared by the report builders: refuses to combine runs
// whose datasets differ.
void check_same_dataset(const std::vector<std::uint64_t>& hashes);

std::string render_pgm(const Tensor& values);  // values in [0,1], P2 format

}  // namespace bmcl::harness
