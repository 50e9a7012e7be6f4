// Copyright (c) 2026 the bmcl authors
// SPDX-License-Identifier: Apache-2.0
//
// Balanced task generation: learn split-assignment logits over the training
// set from confounder features by alternating bias-classifier fitting with
// ascent on an IRM-penalized split loss, then apply a balancing strategy
// (loss balance, manual balance, or aggregation of several matrices) and emit
// the final hard partition.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bmcl/autodiff.hpp"
#include "bmcl/tensor.hpp"

namespace bmcl::btg {

enum class BalanceStrategy { None, LB, MB, GB };

std::string to_string(BalanceStrategy s);
BalanceStrategy strategy_from_string(const std::string& s);

struct BtgConfig {
    int splits = 4;            // m
    int matrices = 4;          // n, aggregation only
    double lambda_irm = 1.0;   // IRM penalty weight inside the split loss
    double lambda_bal = 1.0;   // entropy weight for the LB strategy
    int inner_epochs = 24;     // alternation cap per matrix
    int h_steps = 8;           // bias-head steps per alternation
    double h_lr = 0.5;
    int theta_steps = 8;       // ascent steps per alternation
    double theta_lr = 0.5;
    int early_stop_start = 10;
    int patience = 5;
    BalanceStrategy strategy = BalanceStrategy::GB;

    void validate() const;
    std::string canonical() const;
};

// Hard split assignment. Every sample belongs to exactly one split.
struct Partition {
    int splits = 0;
    std::vector<int> assignment;
    std::vector<std::vector<int>> members;

    static Partition from_assignment(std::vector<int> assignment, int splits);
    std::vector<long> sizes() const;
    double size_entropy() const;  // Shannon entropy (nats) of the size distribution
};

struct BiasHead {
    Tensor w, b;  // feature_dim x C, 1 x C
};

struct BiasFitResult {
    BiasHead head;
    std::vector<double> losses;  // per-step mean cross entropy
    double accuracy = 0.0;       // final top-1 on the fitting data
};

// Fits the bias classifier by full-batch gradient descent on the mean cross
// entropy of h(F_s). A zero learning rate leaves the head untouched.
BiasFitResult train_bias_classifier(const Tensor& fs, const std::vector<int>& labels,
                                    int num_classes, int steps, double lr,
                                    std::optional<BiasHead> warm_start = std::nullopt);

// Per-sample statistics of a frozen bias head: mean cross entropy l_k and the
// dummy-scalar derivative d_k = d/dw ce(w*h(x_k))|_{w=1} = (p - y) . z.
struct BiasStats {
    Tensor loss_row;   // 1 x K
    Tensor dummy_row;  // 1 x K
};
BiasStats bias_head_stats(const BiasHead& head, const Tensor& fs,
                          const std::vector<int>& labels);

// Tape graph of the split objective for a given theta leaf:
//   sum_t [ R_t + lambda_irm * G_t^2 ]  (+ lambda_bal * H(mean split mass))
// where R_t / G_t are softmax(theta)-weighted means of the per-sample loss
// and dummy derivative. Splits whose soft mass falls below 1e-8 contribute
// zero and are reported as degenerate.
struct SplitObjective {
    ad::Value objective;
    ad::Value irm_value;
    std::vector<int> degenerate;
};
SplitObjective build_split_objective(ad::Tape& tape, ad::Value theta,
                                     const Tensor& loss_row, const Tensor& dummy_row,
                                     double lambda_irm, double lambda_bal);

// Value of the IRM split loss for a concrete theta (no balance term).
double irm_split_loss(const Tensor& theta, const BiasHead& head, const Tensor& fs,
                      const std::vector<int>& labels, double lambda_irm,
                      std::vector<int>* degenerate = nullptr);

struct Stage1Log {
    std::vector<double> bias_accuracy;  // per alternation
    std::vector<double> split_objective;
    std::vector<std::string> warnings;
    int alternations = 0;
    bool early_stopped = false;
};

// Alternating min-max: fit h on the ERM loss, then ascend theta on the split
// objective with h frozen. Both the weighted risks and the penalty are
// ascended. Returns the trained K x m logits.
Tensor stage1_optimize(const BtgConfig& cfg, const Tensor& fs,
                       const std::vector<int>& labels, int num_classes,
                       std::uint64_t seed, Stage1Log* log = nullptr);

// Elementwise sum of row-softmaxed matrices, then per-row argmax of the
// softmaxed sum; ties resolve to the lowest split index.
struct AggregateResult {
    Tensor theta_final;
    std::vector<int> assignment;
};
AggregateResult aggregate_partitions(const std::vector<Tensor>& softmaxed);

// Manual balance: per class, split counts are forced to differ by at most
// one; surplus samples move out in order of ascending assignment confidence.
// Classes with fewer samples than splits are left untouched with a warning.
Partition manual_rebalance(const Partition& p, const std::vector<int>& labels,
                           const Tensor& probs, std::vector<std::string>* warnings);

struct BalanceReport {
    BalanceStrategy strategy = BalanceStrategy::None;
    std::vector<long> split_sizes;
    std::vector<std::vector<long>> class_split_counts;
    double entropy = 0.0;
    std::vector<std::string> warnings;
    // Ambiguity resolution recorded with each run: the ascent step maximizes
    // both the weighted risks and the penalty.
    std::string ascent_note = "ascended-terms=risk+penalty";

    std::string to_text() const;
};

struct BtgResult {
    Tensor theta_final;
    Partition partition;
    BalanceReport report;
};

BtgResult run_btg(const BtgConfig& cfg, const Tensor& fs, const std::vector<int>& labels,
                  int num_classes, std::uint64_t seed);

void save_partition(const std::string& path, const Tensor& theta_final,
                    const Partition& partition);

}  // namespace bmcl::btg
