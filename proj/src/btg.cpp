// Copyright (c) 2026 the bmcl authors
// SPDX-License-Identifier: Apache-2.0
#include "bmcl/btg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "bmcl/errors.hpp"
#include "bmcl/kernels.hpp"
#include "bmcl/params.hpp"
#include "bmcl/rng.hpp"

namespace bmcl::btg {

namespace {
constexpr double kDegenerateMass = 1e-8;
}

std::string to_string(BalanceStrategy s) {
    switch (s) {
        case BalanceStrategy::None: return "none";
        case BalanceStrategy::LB: return "LB";
        case BalanceStrategy::MB: return "MB";
        case BalanceStrategy::GB: return "GB";
    }
    return "?";
}

BalanceStrategy strategy_from_string(const std::string& s) {
    if (s == "none") return BalanceStrategy::None;
    if (s == "LB" || s == "lb") return BalanceStrategy::LB;
    if (s == "MB" || s == "mb") return BalanceStrategy::MB;
    if (s == "GB" || s == "gb") return BalanceStrategy::GB;
    throw ConfigError("unknown balance strategy '" + s + "'");
}

void BtgConfig::validate() const {
    if (splits < 2) throw ConfigError("btg: need at least 2 splits");
    if (matrices < 1) throw ConfigError("btg: need at least 1 matrix");
    if (lambda_irm < 0.0) throw ConfigError("btg: lambda_irm must be >= 0");
    if (inner_epochs < 1 || h_steps < 0 || theta_steps < 1)
        throw ConfigError("btg: step counts must be positive");
    if (patience < 1) throw ConfigError("btg: patience must be >= 1");
}

std::string BtgConfig::canonical() const {
    std::ostringstream os;
    os << "btg;m=" << splits << ";n=" << matrices << ";li=" << lambda_irm
       << ";lb=" << lambda_bal << ";ep=" << inner_epochs << ";hs=" << h_steps
       << ";hlr=" << h_lr << ";ts=" << theta_steps << ";tlr=" << theta_lr
       << ";es=" << early_stop_start << ";pat=" << patience
       << ";strat=" << to_string(strategy);
    return os.str();
}

Partition Partition::from_assignment(std::vector<int> assignment, int splits) {
    Partition p;
    p.splits = splits;
    p.members.resize(static_cast<std::size_t>(splits));
    for (std::size_t i = 0; i < assignment.size(); ++i) {
        const int t = assignment[i];
        if (t < 0 || t >= splits)
            throw std::invalid_argument("Partition: split index out of range");
        p.members[static_cast<std::size_t>(t)].push_back(static_cast<int>(i));
    }
    p.assignment = std::move(assignment);
    return p;
}

std::vector<long> Partition::sizes() const {
    std::vector<long> s(static_cast<std::size_t>(splits), 0);
    for (int t : assignment) ++s[static_cast<std::size_t>(t)];
    return s;
}

double Partition::size_entropy() const {
    const auto s = sizes();
    const double n = static_cast<double>(assignment.size());
    double h = 0.0;
    for (long c : s) {
        if (c == 0) continue;
        const double p = c / n;
        h -= p * std::log(p);
    }
    return h;
}

// ---------------------------------------------------------------------------

BiasFitResult train_bias_classifier(const Tensor& fs, const std::vector<int>& labels,
                                    int num_classes, int steps, double lr,
                                    std::optional<BiasHead> warm_start) {
    if (fs.rows() == 0 || labels.empty())
        throw std::invalid_argument("train_bias_classifier: empty dataset");
    if (fs.rows() != static_cast<int>(labels.size()))
        throw std::invalid_argument("train_bias_classifier: features/labels size mismatch");

    BiasFitResult r;
    if (warm_start) {
        r.head = std::move(*warm_start);
    } else {
        r.head.w = Tensor(fs.cols(), num_classes);
        r.head.b = Tensor(1, num_classes);
    }

    for (int s = 0; s < steps; ++s) {
        ad::Tape tape;
        ParamSet p;
        p.add("w", r.head.w);
        p.add("b", r.head.b);
        const Bound bound = bind(tape, p);
        const ad::Value x = tape.constant(fs);
        const ad::Value logits = tape.add(tape.matmul(x, bound.at("w")), bound.at("b"));
        const ad::Value loss = tape.softmax_cross_entropy(logits, labels);
        r.losses.push_back(tape.scalar(loss));
        const ad::GradientMap g = tape.backward(loss);
        kern::axpy(r.head.w, -lr, g.at("w"));
        kern::axpy(r.head.b, -lr, g.at("b"));
    }

    const Tensor logits = kern::add(kern::matmul(fs, r.head.w), r.head.b);
    long correct = 0;
    for (int i = 0; i < logits.rows(); ++i) {
        int best = 0;
        for (int j = 1; j < logits.cols(); ++j)
            if (logits.at(i, j) > logits.at(i, best)) best = j;
        if (best == labels[static_cast<std::size_t>(i)]) ++correct;
    }
    r.accuracy = 100.0 * static_cast<double>(correct) / logits.rows();
    return r;
}

BiasStats bias_head_stats(const BiasHead& head, const Tensor& fs,
                          const std::vector<int>& labels) {
    const Tensor logits = kern::add(kern::matmul(fs, head.w), head.b);
    const Tensor probs = kern::row_softmax(logits);
    const Tensor targets = ad::Tape::one_hot(labels, logits.cols());
    const Tensor losses = kern::cross_entropy_rows(logits, targets);

    BiasStats s;
    s.loss_row = Tensor(1, logits.rows());
    s.dummy_row = Tensor(1, logits.rows());
    for (int i = 0; i < logits.rows(); ++i) {
        s.loss_row.at(0, i) = losses.at(i, 0);
        double d = 0.0;
        for (int j = 0; j < logits.cols(); ++j)
            d += (probs.at(i, j) - targets.at(i, j)) * logits.at(i, j);
        s.dummy_row.at(0, i) = d;
    }
    return s;
}

SplitObjective build_split_objective(ad::Tape& tape, ad::Value theta,
                                     const Tensor& loss_row, const Tensor& dummy_row,
                                     double lambda_irm, double lambda_bal) {
    const int K = tape.value(theta).rows();
    const int m = tape.value(theta).cols();
    if (loss_row.cols() != K || dummy_row.cols() != K)
        throw std::invalid_argument("split objective: stats do not match theta rows");

    const ad::Value q = tape.row_softmax(theta);      // K x m soft assignment
    const ad::Value mass = tape.col_sums(q);          // 1 x m

    // Degenerate splits contribute zero instead of 0/0: mask the numerator
    // and replace the masked denominators by one.
    SplitObjective out;
    const Tensor& mass_v = tape.value(mass);
    Tensor mask(1, m), pad(1, m);
    for (int t = 0; t < m; ++t) {
        const bool dead = mass_v.at(0, t) < kDegenerateMass;
        mask.at(0, t) = dead ? 0.0 : 1.0;
        pad.at(0, t) = dead ? 1.0 : 0.0;
        if (dead) out.degenerate.push_back(t);
    }
    const ad::Value mask_c = tape.constant(mask);
    const ad::Value safe_mass = tape.add(tape.mul(mass, mask_c), tape.constant(pad));
    const ad::Value inv_mass = tape.reciprocal(safe_mass);

    const ad::Value weighted_loss = tape.matmul(tape.constant(loss_row), q);   // 1 x m
    const ad::Value weighted_dummy = tape.matmul(tape.constant(dummy_row), q); // 1 x m
    const ad::Value risk = tape.mul(tape.mul(weighted_loss, mask_c), inv_mass);
    const ad::Value dummy_grad = tape.mul(tape.mul(weighted_dummy, mask_c), inv_mass);
    const ad::Value penalty = tape.mul(dummy_grad, dummy_grad);

    out.irm_value =
        tape.add(tape.sum(risk), tape.scale(tape.sum(penalty), lambda_irm));
    out.objective = out.irm_value;
    if (lambda_bal != 0.0) {
        const ad::Value share = tape.scale(mass, 1.0 / K);
        const ad::Value entropy =
            tape.scale(tape.sum(tape.mul(share, tape.log(share))), -1.0);
        out.objective = tape.add(out.objective, tape.scale(entropy, lambda_bal));
    }
    return out;
}

double irm_split_loss(const Tensor& theta, const BiasHead& head, const Tensor& fs,
                      const std::vector<int>& labels, double lambda_irm,
                      std::vector<int>* degenerate) {
    const BiasStats stats = bias_head_stats(head, fs, labels);
    ad::Tape tape;
    const ad::Value th = tape.constant(theta);
    const SplitObjective obj =
        build_split_objective(tape, th, stats.loss_row, stats.dummy_row, lambda_irm, 0.0);
    if (degenerate) *degenerate = obj.degenerate;
    return tape.scalar(obj.irm_value);
}

Tensor stage1_optimize(const BtgConfig& cfg, const Tensor& fs,
                       const std::vector<int>& labels, int num_classes,
                       std::uint64_t seed, Stage1Log* log) {
    cfg.validate();
    if (fs.rows() == 0) throw std::invalid_argument("stage1_optimize: empty dataset");
    const int K = fs.rows();
    const double lambda_bal = cfg.strategy == BalanceStrategy::LB ? cfg.lambda_bal : 0.0;

    DetRng rng(DetRng::derive(seed, 11));
    Tensor theta(K, cfg.splits);
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] = 0.01 * rng.normal();

    std::optional<BiasHead> head;
    double best_acc = -1.0;
    int stalls = 0;

    for (int alt = 0; alt < cfg.inner_epochs; ++alt) {
        // (a) minimize the bias ERM loss over h with theta fixed
        BiasFitResult fit = train_bias_classifier(fs, labels, num_classes, cfg.h_steps,
                                                  cfg.h_lr, std::move(head));
        head = std::move(fit.head);

        // (b) ascend the split objective over theta with h frozen. The split
        // risks are softmax-weighted means, so per-row gradients scale like
        // 1/K; the step compensates to keep row logits moving at O(1).
        const BiasStats stats = bias_head_stats(*head, fs, labels);
        const double step = cfg.theta_lr * static_cast<double>(K);
        double obj_value = 0.0;
        for (int s = 0; s < cfg.theta_steps; ++s) {
            ad::Tape tape;
            const ad::Value th = tape.leaf(theta, "theta");
            const SplitObjective obj = build_split_objective(
                tape, th, stats.loss_row, stats.dummy_row, cfg.lambda_irm, lambda_bal);
            obj_value = tape.scalar(obj.objective);
            if (!std::isfinite(obj_value))
                throw NumericError("stage1: non-finite split objective at alternation " +
                                   std::to_string(alt) + " step " + std::to_string(s));
            if (log && s == 0)
                for (int t : obj.degenerate)
                    log->warnings.push_back("alternation " + std::to_string(alt) +
                                            ": degenerate split " + std::to_string(t));
            const ad::GradientMap g = tape.backward(obj.objective);
            kern::axpy(theta, step, g.at("theta"));  // ascent
            if (!kern::all_finite(theta))
                throw NumericError("stage1: non-finite theta at alternation " +
                                   std::to_string(alt) + " step " + std::to_string(s));
        }

        if (log) {
            log->bias_accuracy.push_back(fit.accuracy);
            log->split_objective.push_back(obj_value);
            log->alternations = alt + 1;
        }

        // Early stop once the bias classifier stops improving.
        if (fit.accuracy > best_acc + 1e-9) {
            best_acc = fit.accuracy;
            stalls = 0;
        } else if (alt >= cfg.early_stop_start) {
            if (++stalls >= cfg.patience) {
                if (log) log->early_stopped = true;
                break;
            }
        }
    }
    return theta;
}

AggregateResult aggregate_partitions(const std::vector<Tensor>& softmaxed) {
    if (softmaxed.empty())
        throw std::invalid_argument("aggregate_partitions: no matrices");
    const int K = softmaxed[0].rows(), m = softmaxed[0].cols();
    for (const Tensor& t : softmaxed)
        if (t.rows() != K || t.cols() != m)
            throw std::invalid_argument("aggregate_partitions: shape mismatch (" +
                                        t.shape_str() + " vs " + softmaxed[0].shape_str() +
                                        ")");
    AggregateResult r;
    r.theta_final = Tensor(K, m);
    for (const Tensor& t : softmaxed) kern::axpy(r.theta_final, 1.0, t);

    const Tensor probs = kern::row_softmax(r.theta_final);
    r.assignment.resize(static_cast<std::size_t>(K));
    for (int i = 0; i < K; ++i) {
        int best = 0;
        for (int j = 1; j < m; ++j)
            if (probs.at(i, j) > probs.at(i, best)) best = j;  // ties keep lowest index
        r.assignment[static_cast<std::size_t>(i)] = best;
    }
    return r;
}

Partition manual_rebalance(const Partition& p, const std::vector<int>& labels,
                           const Tensor& probs, std::vector<std::string>* warnings) {
    const int m = p.splits;
    std::vector<int> assignment = p.assignment;

    int num_classes = 0;
    for (int y : labels) num_classes = std::max(num_classes, y + 1);

    for (int c = 0; c < num_classes; ++c) {
        std::vector<int> idx;
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i] == c) idx.push_back(static_cast<int>(i));
        const int count = static_cast<int>(idx.size());
        if (count < m) {
            if (warnings && count > 0)
                warnings->push_back("MB: class " + std::to_string(c) + " has " +
                                    std::to_string(count) + " samples, fewer than " +
                                    std::to_string(m) + " splits; left untouched");
            continue;
        }

        std::vector<long> counts(static_cast<std::size_t>(m), 0);
        for (int i : idx) ++counts[static_cast<std::size_t>(assignment[i])];

        // Capacities: floor(count/m) per split, with the remainder going to
        // the currently largest splits (ties to the lowest index).
        const long target = count / m;
        int remainder = count % m;
        std::vector<int> order(static_cast<std::size_t>(m));
        for (int t = 0; t < m; ++t) order[static_cast<std::size_t>(t)] = t;
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            return counts[static_cast<std::size_t>(a)] > counts[static_cast<std::size_t>(b)];
        });
        std::vector<long> capacity(static_cast<std::size_t>(m), target);
        for (int r = 0; r < remainder; ++r)
            ++capacity[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])];

        // Surplus members leave in order of ascending assignment confidence.
        std::vector<int> movers;
        for (int t = 0; t < m; ++t) {
            long excess = counts[static_cast<std::size_t>(t)] - capacity[static_cast<std::size_t>(t)];
            if (excess <= 0) continue;
            std::vector<int> members;
            for (int i : idx)
                if (assignment[i] == t) members.push_back(i);
            std::stable_sort(members.begin(), members.end(), [&](int a, int b) {
                return probs.at(a, t) < probs.at(b, t);
            });
            for (long k = 0; k < excess; ++k) movers.push_back(members[static_cast<std::size_t>(k)]);
        }
        for (int i : movers) {
            // Destination: largest remaining deficit, ties to the lowest index.
            int dest = -1;
            long best_deficit = 0;
            for (int t = 0; t < m; ++t) {
                const long deficit = capacity[static_cast<std::size_t>(t)] -
                                     counts[static_cast<std::size_t>(t)];
                if (deficit > best_deficit) {
                    best_deficit = deficit;
                    dest = t;
                }
            }
            if (dest < 0) break;
            --counts[static_cast<std::size_t>(assignment[i])];
            ++counts[static_cast<std::size_t>(dest)];
            assignment[i] = dest;
        }
    }
    return Partition::from_assignment(std::move(assignment), m);
}

BalanceReport make_report(BalanceStrategy strategy, const Partition& p,
                          const std::vector<int>& labels, int num_classes,
                          std::vector<std::string> warnings) {
    BalanceReport r;
    r.strategy = strategy;
    r.split_sizes = p.sizes();
    r.entropy = p.size_entropy();
    r.warnings = std::move(warnings);
    r.class_split_counts.assign(static_cast<std::size_t>(num_classes),
                                std::vector<long>(static_cast<std::size_t>(p.splits), 0));
    for (std::size_t i = 0; i < labels.size(); ++i)
        ++r.class_split_counts[static_cast<std::size_t>(labels[i])]
                              [static_cast<std::size_t>(p.assignment[i])];
    return r;
}

std::string BalanceReport::to_text() const {
    std::ostringstream os;
    os << "strategy " << to_string(strategy) << "\n";
    os << "entropy " << entropy << "\n";
    os << "sizes";
    for (long s : split_sizes) os << " " << s;
    os << "\n" << ascent_note << "\n";
    os << "class_split_counts\n";
    for (std::size_t c = 0; c < class_split_counts.size(); ++c) {
        os << c << ":";
        for (long v : class_split_counts[c]) os << " " << v;
        os << "\n";
    }
    for (const auto& w : warnings) os << "warning " << w << "\n";
    return os.str();
}

BtgResult run_btg(const BtgConfig& cfg, const Tensor& fs, const std::vector<int>& labels,
                  int num_classes, std::uint64_t seed) {
    cfg.validate();
    const int n = cfg.strategy == BalanceStrategy::GB ? cfg.matrices : 1;

    std::vector<Tensor> softmaxed;
    std::vector<std::string> warnings;
    softmaxed.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        Stage1Log log;
        const Tensor theta = stage1_optimize(cfg, fs, labels, num_classes,
                                             DetRng::derive(seed, 100 + static_cast<std::uint64_t>(i)),
                                             &log);
        for (auto& w : log.warnings)
            warnings.push_back("matrix " + std::to_string(i) + ": " + w);
        softmaxed.push_back(kern::row_softmax(theta));
    }

    AggregateResult agg = aggregate_partitions(softmaxed);
    Partition part = Partition::from_assignment(agg.assignment, cfg.splits);

    if (cfg.strategy == BalanceStrategy::MB) {
        const Tensor probs = kern::row_softmax(agg.theta_final);
        part = manual_rebalance(part, labels, probs, &warnings);
    }

    BtgResult r;
    r.theta_final = std::move(agg.theta_final);
    r.report = make_report(cfg.strategy, part, labels, num_classes, std::move(warnings));
    r.partition = std::move(part);
    return r;
}

void save_partition(const std::string& path, const Tensor& theta_final,
                    const Partition& partition) {
    std::ofstream out(path);
    if (!out) throw IoError("save_partition: cannot open " + path);
    const Tensor probs = kern::row_softmax(theta_final);
    out << "bmcl-partition 1\n";
    out << "count " << partition.assignment.size() << " splits " << partition.splits << "\n";
    char buf[32];
    for (std::size_t i = 0; i < partition.assignment.size(); ++i) {
        out << i << " " << partition.assignment[i];
        for (int t = 0; t < probs.cols(); ++t) {
            std::snprintf(buf, sizeof(buf), "%.17g", probs.at(static_cast<int>(i), t));
            out << " " << buf;
        }
        out << "\n";
    }
    if (!out) throw IoError("save_partition: write failed for " + path);
}

}  // namespace bmcl::btg
