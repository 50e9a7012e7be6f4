// Copyright (c) 2026 the bmcl authors
// SPDX-License-Identifier: Apache-2.0
#include "bmcl/mcfl.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "bmcl/errors.hpp"
#include "bmcl/kernels.hpp"

namespace bmcl::mcfl {

void MetaTaskConfig::validate(int splits) const {
    if (classes_per_task < 1) throw ConfigError("meta: classes_per_task must be >= 1");
    if (support_per_class < 1 || query_per_class < 1)
        throw ConfigError("meta: support and query sizes must be >= 1");
    if (tasks_total < 1 || tasks_total % splits != 0)
        throw ConfigError("meta: tasks_total must be a positive multiple of the split count");
    if (inner_lr < 0.0 || outer_lr < 0.0) throw ConfigError("meta: step sizes must be >= 0");
    if (inner_steps < 1) throw ConfigError("meta: inner_steps must be >= 1");
}

std::string MetaTaskConfig::canonical() const {
    std::ostringstream os;
    os << "meta;w=" << classes_per_task << ";i=" << support_per_class
       << ";j=" << query_per_class << ";s=" << tasks_total << ";a=" << inner_lr
       << ";b=" << outer_lr << ";st=" << inner_steps << ";so=" << (second_order ? 1 : 0);
    return os.str();
}

void MixupConfig::validate() const {
    if (alpha <= 0.0) throw ConfigError("mixup: alpha must be > 0");
    if (batch_size < 2) throw ConfigError("mixup: batch_size must be >= 2");
}

std::string MixupConfig::canonical() const {
    std::ostringstream os;
    os << "mixup;a=" << alpha << ";bs=" << batch_size;
    return os.str();
}

Tensor gather_rows(const Tensor& x, const std::vector<int>& idx) {
    Tensor out(static_cast<int>(idx.size()), x.cols());
    for (std::size_t i = 0; i < idx.size(); ++i)
        for (int j = 0; j < x.cols(); ++j) out.at(static_cast<int>(i), j) = x.at(idx[i], j);
    return out;
}

std::vector<int> gather_labels(const std::vector<int>& labels, const std::vector<int>& idx) {
    std::vector<int> out;
    out.reserve(idx.size());
    for (int i : idx) out.push_back(labels[static_cast<std::size_t>(i)]);
    return out;
}

// ---------------------------------------------------------------------------

namespace {

// Distinct picks stay disjoint even in fallback: each side is padded by
// cycling its own members rather than borrowing from the other side.
void split_support_query(const std::vector<int>& picked, int i, int j, MetaTask& task) {
    const int n = static_cast<int>(picked.size());
    if (n >= i + j) {
        task.support.insert(task.support.end(), picked.begin(), picked.begin() + i);
        task.query.insert(task.query.end(), picked.begin() + i, picked.begin() + i + j);
        return;
    }
    if (n == 1) {
        // Single sample: it has to serve both sides.
        for (int k = 0; k < i; ++k) task.support.push_back(picked[0]);
        for (int k = 0; k < j; ++k) task.query.push_back(picked[0]);
        return;
    }
    int ns = std::clamp(static_cast<int>(std::lround(
                            static_cast<double>(n) * i / (i + j))),
                        1, n - 1);
    for (int k = 0; k < i; ++k) task.support.push_back(picked[static_cast<std::size_t>(k % ns)]);
    for (int k = 0; k < j; ++k)
        task.query.push_back(picked[static_cast<std::size_t>(ns + k % (n - ns))]);
}

}  // namespace

std::vector<MetaTask> sample_meta_tasks(const btg::Partition& partition,
                                        const std::vector<int>& labels,
                                        const MetaTaskConfig& cfg, DetRng& rng,
                                        std::vector<std::string>* warnings) {
    cfg.validate(partition.splits);
    const int w = cfg.classes_per_task;
    const int need = cfg.support_per_class + cfg.query_per_class;

    std::vector<MetaTask> tasks;
    tasks.reserve(static_cast<std::size_t>(partition.splits));
    for (int t = 0; t < partition.splits; ++t) {
        MetaTask task;
        task.split = t;

        std::map<int, std::vector<int>> by_class;
        for (int i : partition.members[static_cast<std::size_t>(t)])
            by_class[labels[static_cast<std::size_t>(i)]].push_back(i);

        std::vector<int> eligible, present;
        for (const auto& [c, idx] : by_class) {
            present.push_back(c);
            if (static_cast<int>(idx.size()) >= need) eligible.push_back(c);
        }

        std::vector<int> classes;
        if (static_cast<int>(eligible.size()) >= w) {
            rng.shuffle(eligible);
            classes.assign(eligible.begin(), eligible.begin() + w);
        } else {
            task.fallback = true;
            if (warnings)
                warnings->push_back("split " + std::to_string(t) + " lacks " +
                                    std::to_string(w) + " eligible classes; sampling with replacement");
            if (present.empty())
                throw std::invalid_argument("sample_meta_tasks: split " + std::to_string(t) +
                                            " is empty");
            for (int k = 0; k < w; ++k)
                classes.push_back(
                    present[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(present.size()) - 1))]);
        }

        for (int c : classes) {
            std::vector<int> idx = by_class[c];
            rng.shuffle(idx);
            if (static_cast<int>(idx.size()) > need) idx.resize(static_cast<std::size_t>(need));
            split_support_query(idx, cfg.support_per_class, cfg.query_per_class, task);
        }
        tasks.push_back(std::move(task));
    }
    return tasks;
}

ParamSet adapt(const ParamSet& base, const LossBuilder& loss, double alpha, int steps,
               double* first_loss) {
    ParamSet current = base;
    for (int s = 0; s < steps; ++s) {
        ad::Tape tape;
        const Bound bound = bind(tape, current);
        const ad::Value l = loss(tape, bound);
        const double lv = tape.scalar(l);
        if (!std::isfinite(lv)) throw NumericError("adapt: non-finite inner loss");
        if (s == 0 && first_loss) *first_loss = lv;
        const ad::GradientMap g = tape.backward(l);
        current.axpy(g, -alpha);
    }
    return current;
}

InnerResult inner_update(const Model& model, const ParamSet& params,
                         const synth::Dataset& train, const MetaTask& task, double alpha,
                         int steps) {
    if (task.support.empty()) throw std::invalid_argument("inner_update: empty support set");
    const Tensor x = gather_rows(train.features, task.support);
    const std::vector<int> y = gather_labels(train.labels, task.support);

    InnerResult r;
    r.adapted = adapt(
        params,
        [&](ad::Tape& tape, const Bound& bound) {
            return tape.softmax_cross_entropy(
                model.predict(tape, tape.constant(x), bound, Head::Task), y);
        },
        alpha, steps, &r.support_loss);
    return r;
}

double meta_query_loss(const Model& model, const std::vector<MetaTask>& tasks,
                       const std::vector<ParamSet>& adapted, const synth::Dataset& train,
                       int splits) {
    if (static_cast<int>(tasks.size()) != splits)
        throw std::invalid_argument("meta_query_loss: expected " + std::to_string(splits) +
                                    " tasks, got " + std::to_string(tasks.size()));
    if (tasks.size() != adapted.size())
        throw std::invalid_argument("meta_query_loss: missing adapted snapshots");
    double total = 0.0;
    for (std::size_t k = 0; k < tasks.size(); ++k) {
        const Tensor x = gather_rows(train.features, tasks[k].query);
        const std::vector<int> y = gather_labels(train.labels, tasks[k].query);
        const Tensor logits = model.eval_logits(adapted[k], x, Head::Task);
        ad::Tape tape;
        total += tape.scalar(tape.softmax_cross_entropy(tape.constant(logits), y));
    }
    return total / static_cast<double>(tasks.size());
}

namespace {

// Accumulates g into acc (name-aligned), creating zero tensors on first use.
void accumulate_grads(std::vector<std::pair<std::string, Tensor>>& acc,
                      const ad::GradientMap& g, double coef) {
    if (acc.empty()) {
        for (const auto& [name, t] : g) acc.emplace_back(name, kern::scale(t, coef));
        return;
    }
    std::size_t k = 0;
    for (const auto& [name, t] : g) {
        if (acc[k].first != name) throw std::logic_error("accumulate_grads: order mismatch");
        kern::axpy(acc[k].second, coef, t);
        ++k;
    }
}

OuterResult outer_update_second_order(const Model& model, const ParamSet& params,
                                      const std::vector<MetaTask>& tasks,
                                      const synth::Dataset& train, const MetaTaskConfig& cfg,
                                      double lr_scale) {
    OuterResult r;
    std::vector<std::pair<std::string, Tensor>> acc;
    const double inv_m = 1.0 / static_cast<double>(tasks.size());

    for (const MetaTask& task : tasks) {
        ad::Tape tape;
        const Bound base = bind(tape, params);
        std::vector<std::string> names;
        std::vector<ad::Value> leaves;
        for (const auto& [name, t] : params.items) {
            names.push_back(name);
            leaves.push_back(base.at(name));
        }

        // Inner steps stay on the same tape so the outer gradient
        // differentiates through them.
        Bound current = base;
        const Tensor xs = gather_rows(train.features, task.support);
        const std::vector<int> ys = gather_labels(train.labels, task.support);
        for (int s = 0; s < cfg.inner_steps; ++s) {
            const ad::Value support_loss = tape.softmax_cross_entropy(
                model.predict(tape, tape.constant(xs), current, Head::Task), ys);
            std::vector<ad::Value> wrt;
            for (const std::string& name : names) wrt.push_back(current.at(name));
            const std::vector<ad::Value> adj = tape.backward_values(support_loss, wrt);
            Bound next;
            for (std::size_t k = 0; k < names.size(); ++k) {
                ad::Value v = current.at(names[k]);
                if (adj[k].valid()) v = tape.sub(v, tape.scale(adj[k], cfg.inner_lr));
                next.set(names[k], v);
            }
            current = std::move(next);
        }

        const Tensor xq = gather_rows(train.features, task.query);
        const std::vector<int> yq = gather_labels(train.labels, task.query);
        const ad::Value query_loss = tape.softmax_cross_entropy(
            model.predict(tape, tape.constant(xq), current, Head::Task), yq);
        const double lv = tape.scalar(query_loss);
        if (!std::isfinite(lv))
            throw NumericError("outer_update: non-finite query loss (split " +
                               std::to_string(task.split) + ")");
        r.task_losses.push_back(lv);
        accumulate_grads(acc, tape.backward(query_loss), inv_m);
    }

    for (double l : r.task_losses) r.meta_loss += l;
    r.meta_loss *= inv_m;
    r.params = params;
    double norm_sq = 0.0;
    for (auto& [name, g] : acc) {
        norm_sq += kern::l2_norm_sq(g);
        kern::axpy(r.params.at(name), -cfg.outer_lr * lr_scale, g);
    }
    r.grad_norm = std::sqrt(norm_sq);
    return r;
}

}  // namespace

OuterResult outer_update(const Model& model, const ParamSet& params,
                         const std::vector<MetaTask>& tasks, const synth::Dataset& train,
                         const MetaTaskConfig& cfg, double lr_scale) {
    if (tasks.empty()) throw std::invalid_argument("outer_update: no tasks");
    if (cfg.second_order)
        return outer_update_second_order(model, params, tasks, train, cfg, lr_scale);

    OuterResult r;
    std::vector<std::pair<std::string, Tensor>> acc;
    const double inv_m = 1.0 / static_cast<double>(tasks.size());

    for (const MetaTask& task : tasks) {
        const InnerResult inner =
            inner_update(model, params, train, task, cfg.inner_lr, cfg.inner_steps);

        // First order: the query gradient at the adapted snapshot stands in
        // for the gradient at the base parameters.
        ad::Tape tape;
        const Bound bound = bind(tape, inner.adapted);
        const Tensor xq = gather_rows(train.features, task.query);
        const std::vector<int> yq = gather_labels(train.labels, task.query);
        const ad::Value loss = tape.softmax_cross_entropy(
            model.predict(tape, tape.constant(xq), bound, Head::Task), yq);
        const double lv = tape.scalar(loss);
        if (!std::isfinite(lv))
            throw NumericError("outer_update: non-finite query loss (split " +
                               std::to_string(task.split) + ")");
        r.task_losses.push_back(lv);
        accumulate_grads(acc, tape.backward(loss), inv_m);
    }

    for (double l : r.task_losses) r.meta_loss += l;
    r.meta_loss *= inv_m;
    r.params = params;
    double norm_sq = 0.0;
    for (auto& [name, g] : acc) {
        norm_sq += kern::l2_norm_sq(g);
        kern::axpy(r.params.at(name), -cfg.outer_lr * lr_scale, g);
    }
    r.grad_norm = std::sqrt(norm_sq);
    return r;
}

MixedBatch mix_with(const Tensor& x, const Tensor& y_onehot, const std::vector<int>& perm,
                    const std::vector<double>& lambdas) {
    if (x.rows() != y_onehot.rows() || perm.size() != x.size() / x.cols() ||
        lambdas.size() != perm.size())
        throw std::invalid_argument("mix_with: inconsistent batch sizes");
    MixedBatch out{x, y_onehot};
    for (int i = 0; i < x.rows(); ++i) {
        const double lam = lambdas[static_cast<std::size_t>(i)];
        const int p = perm[static_cast<std::size_t>(i)];
        for (int j = 0; j < x.cols(); ++j)
            out.x.at(i, j) = lam * x.at(i, j) + (1.0 - lam) * x.at(p, j);
        for (int j = 0; j < y_onehot.cols(); ++j)
            out.y.at(i, j) = lam * y_onehot.at(i, j) + (1.0 - lam) * y_onehot.at(p, j);
    }
    return out;
}

MixedBatch mixup_batch(const Tensor& x, const Tensor& y_onehot, const MixupConfig& cfg,
                       DetRng& rng) {
    cfg.validate();
    const int n = x.rows();
    if (n < 2) return MixedBatch{x, y_onehot};

    const std::vector<int> perm = rng.permutation(n);
    std::vector<double> lambdas(static_cast<std::size_t>(n));
    for (auto& lam : lambdas) lam = rng.beta(cfg.alpha, cfg.alpha);
    return mix_with(x, y_onehot, perm, lambdas);
}

StepResult stage2_step(const Model& model, const ParamSet& params,
                       const btg::Partition& partition, const synth::Dataset& train,
                       const Stage2Config& cfg, DetRng& task_rng, DetRng& mixup_rng,
                       double lr_scale) {
    StepResult r;
    r.params = params;

    if (cfg.use_meta) {
        std::vector<std::string> warnings;
        const std::vector<MetaTask> tasks =
            sample_meta_tasks(partition, train.labels, cfg.meta, task_rng, &warnings);
        for (const MetaTask& t : tasks)
            if (t.fallback) ++r.fallbacks;
        OuterResult outer = outer_update(model, params, tasks, train, cfg.meta, lr_scale);
        r.meta_loss = outer.meta_loss;
        r.task_losses = std::move(outer.task_losses);
        r.meta_grad_norm = outer.grad_norm;
        // Transfer the meta step; the ERM gradient below is also taken at the
        // starting snapshot, so both land in the same combined update.
        r.params = std::move(outer.params);
    }

    if (cfg.use_erm) {
        const int n = static_cast<int>(train.size());
        const int bs = std::min(cfg.mixup.batch_size, n);
        std::vector<int> idx(static_cast<std::size_t>(bs));
        for (int i = 0; i < bs; ++i) idx[static_cast<std::size_t>(i)] = mixup_rng.uniform_int(0, n - 1);
        const Tensor xb = gather_rows(train.features, idx);
        Tensor yb(bs, train.num_classes);
        for (int i = 0; i < bs; ++i)
            yb.at(i, train.labels[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])]) = 1.0;
        const MixedBatch mixed = mixup_batch(xb, yb, cfg.mixup, mixup_rng);

        ad::Tape tape;
        const Bound bound = bind(tape, params);
        ad::Value loss = tape.softmax_cross_entropy(
            model.predict(tape, tape.constant(mixed.x), bound, Head::Aux), mixed.y);
        if (cfg.erm_weight != 1.0) loss = tape.scale(loss, cfg.erm_weight);
        r.erm_loss = tape.scalar(loss);
        if (!std::isfinite(r.erm_loss)) throw NumericError("stage2: non-finite mixup loss");
        const ad::GradientMap g = tape.backward(loss);
        r.erm_grad_norm = g.l2_norm();
        r.params.axpy(g, -cfg.erm_lr * lr_scale);
    }

    r.total_loss = r.meta_loss + r.erm_loss;
    return r;
}

}  // namespace bmcl::mcfl
