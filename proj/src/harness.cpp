// Copyright (c) 2026 the bmcl authors
// SPDX-License-Identifier: Apache-2.0
#include "bmcl/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "bmcl/errors.hpp"
#include "bmcl/kernels.hpp"
#include "bmcl/rng.hpp"

namespace bmcl::harness {

namespace {

std::string g17(double x) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

std::string hex64(std::uint64_t x) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(x));
    return buf;
}

template <typename T>
std::string join(const std::vector<T>& xs) {
    std::ostringstream os;
    for (std::size_t i = 0; i < xs.size(); ++i) os << (i ? "," : "") << xs[i];
    return os.str();
}

std::string join_g17(const std::vector<double>& xs) {
    std::ostringstream os;
    for (std::size_t i = 0; i < xs.size(); ++i) os << (i ? "," : "") << g17(xs[i]);
    return os.str();
}

// Append-only metrics stream: mirrored in memory and flushed line by line so
// aborted runs leave usable partial artifacts. Wall-clock timings go to a
// separate file; the metrics stream itself is bit-reproducible.
class MetricsStream {
public:
    explicit MetricsStream(const std::string& dir) {
        if (!dir.empty()) {
            std::filesystem::create_directories(dir);
            file_.open(dir + "/metrics.txt");
            if (!file_) throw IoError("cannot open metrics stream in " + dir);
        }
    }
    void line(const std::string& text) {
        buffer_ += text;
        buffer_ += '\n';
        if (file_.is_open()) {
            file_ << text << '\n';
            file_.flush();
        }
    }
    const std::string& text() const { return buffer_; }

private:
    std::string buffer_;
    std::ofstream file_;
};

double erm_step(const Model& model, ParamSet& params, const Tensor& x,
                const std::vector<int>& y, double lr) {
    ad::Tape tape;
    const Bound bound = bind(tape, params);
    const ad::Value loss = tape.softmax_cross_entropy(
        model.predict(tape, tape.constant(x), bound, Head::Task), y);
    const double lv = tape.scalar(loss);
    if (!std::isfinite(lv)) throw NumericError("erm step: non-finite loss");
    const ad::GradientMap g = tape.backward(loss);
    params.axpy(g, -lr);
    return lv;
}

std::string eval_record(int epoch, const std::string& split, const EvalResult& ev) {
    std::ostringstream os;
    os << "eval epoch=" << epoch << " split=" << split << " acc=" << g17(ev.accuracy)
       << " correct=" << ev.correct << " total=" << ev.total << " tp=" << join(ev.tp)
       << " fp=" << join(ev.fp) << " fn=" << join(ev.fn) << " tn=" << join(ev.tn);
    return os.str();
}

}  // namespace

std::string to_string(Variant v) {
    switch (v) {
        case Variant::Erm: return "erm";
        case Variant::Gate: return "gate";
        case Variant::Meta: return "meta";
        case Variant::Btg: return "btg";
        case Variant::Full: return "full";
    }
    return "?";
}

Variant variant_from_string(const std::string& s) {
    if (s == "erm") return Variant::Erm;
    if (s == "gate") return Variant::Gate;
    if (s == "meta") return Variant::Meta;
    if (s == "btg") return Variant::Btg;
    if (s == "full") return Variant::Full;
    throw ConfigError("unknown variant '" + s + "'");
}

void RunConfig::validate() const {
    gen.validate();
    btg.validate();
    meta.validate(btg.splits);
    mixup.validate();
    model.validate();
    if (epochs < 1) throw ConfigError("run: epochs must be >= 1");
    if (refresh_start < 1 || refresh_period < 1)
        throw ConfigError("run: refresh schedule must be positive");
    if (lr <= 0.0) throw ConfigError("run: lr must be > 0");
    if (erm_weight < 0.0) throw ConfigError("run: erm_weight must be >= 0");
    if (lr_decay <= 0.0 || lr_decay_at < 0.0 || lr_decay_at > 1.0)
        throw ConfigError("run: bad learning-rate schedule");
    if (eval_every < 1) throw ConfigError("run: eval_every must be >= 1");
}

RunConfig RunConfig::resolved() const {
    RunConfig r = *this;
    r.gen.seed = seed;  // the run seed drives data, init and sampling
    r.model.input_dim = r.gen.feature_dim;
    r.model.num_classes = r.gen.num_classes;
    r.model.use_gate = variant != Variant::Erm;
    return r;
}

std::string RunConfig::canonical() const {
    std::ostringstream os;
    os << gen.canonical() << "|" << btg.canonical() << "|" << meta.canonical() << "|"
       << mixup.canonical() << "|" << model.canonical() << "|run;var=" << to_string(variant)
       << ";ep=" << epochs << ";rs=" << refresh_start << ";rp=" << refresh_period
       << ";lr=" << g17(lr) << ";ew=" << g17(erm_weight) << ";ld=" << g17(lr_decay)
       << ";la=" << g17(lr_decay_at) << ";ee=" << eval_every << ";seed=" << seed;
    return os.str();
}

std::uint64_t RunConfig::hash() const { return synth::fnv1a(canonical()); }

// ---------------------------------------------------------------------------

double EvalResult::accuracy_from_counts() const {
    if (tp.empty()) return 0.0;
    long correct_sum = 0;
    for (long c : tp) correct_sum += c;
    const long n = tp[0] + fp[0] + fn[0] + tn[0];
    return n == 0 ? 0.0 : 100.0 * static_cast<double>(correct_sum) / static_cast<double>(n);
}

EvalResult top1_accuracy(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.rows() == 0 || labels.empty())
        throw std::invalid_argument("top1_accuracy: empty input");
    if (logits.rows() != static_cast<int>(labels.size()))
        throw std::invalid_argument("top1_accuracy: got " + std::to_string(logits.rows()) +
                                    " predictions for " + std::to_string(labels.size()) +
                                    " labels");
    const int c = logits.cols();
    EvalResult ev;
    ev.total = logits.rows();
    ev.tp.assign(static_cast<std::size_t>(c), 0);
    ev.fp.assign(static_cast<std::size_t>(c), 0);
    ev.fn.assign(static_cast<std::size_t>(c), 0);
    ev.tn.assign(static_cast<std::size_t>(c), 0);
    for (int i = 0; i < logits.rows(); ++i) {
        int best = 0;
        for (int j = 1; j < c; ++j)
            if (logits.at(i, j) > logits.at(i, best)) best = j;
        const int y = labels[static_cast<std::size_t>(i)];
        if (best == y) ++ev.correct;
        for (int j = 0; j < c; ++j) {
            const bool pred = best == j, truth = y == j;
            if (pred && truth) ++ev.tp[static_cast<std::size_t>(j)];
            else if (pred) ++ev.fp[static_cast<std::size_t>(j)];
            else if (truth) ++ev.fn[static_cast<std::size_t>(j)];
            else ++ev.tn[static_cast<std::size_t>(j)];
        }
    }
    ev.accuracy = 100.0 * static_cast<double>(ev.correct) / static_cast<double>(ev.total);
    return ev;
}

// ---------------------------------------------------------------------------

GateFocus gate_focus_summary(const Model& model, const ParamSet& params,
                             const synth::GenConfig& gen, const Tensor& ref_features) {
    const int df = model.config().feature_dim;
    GateFocus f;

    const Tensor gate = model.eval_gate(params, ref_features);
    f.mean_gate = kern::scale(kern::col_sums(gate), 1.0 / gate.rows());

    // Main effects over the noise-free prototype grid: how strongly each
    // feature dimension responds to class identity vs context identity.
    const synth::Prototypes proto = synth::prototypes(gen);
    const int C = gen.num_classes, E = gen.train_contexts;
    Tensor grid(C * E, gen.feature_dim);
    for (int c = 0; c < C; ++c)
        for (int e = 0; e < E; ++e)
            for (int j = 0; j < gen.feature_dim; ++j)
                grid.at(c * E + e, j) =
                    proto.class_protos.at(c, j) + proto.context_protos.at(e, j);
    const Tensor fx = model.eval_fx(params, grid);

    std::vector<double> s_class(static_cast<std::size_t>(df), 0.0);
    std::vector<double> s_context(static_cast<std::size_t>(df), 0.0);
    for (int j = 0; j < df; ++j) {
        std::vector<double> class_mean(static_cast<std::size_t>(C), 0.0);
        std::vector<double> ctx_mean(static_cast<std::size_t>(E), 0.0);
        for (int c = 0; c < C; ++c)
            for (int e = 0; e < E; ++e) {
                const double v = fx.at(c * E + e, j);
                class_mean[static_cast<std::size_t>(c)] += v / E;
                ctx_mean[static_cast<std::size_t>(e)] += v / C;
            }
        auto stddev = [](const std::vector<double>& xs) {
            double mu = 0.0;
            for (double x : xs) mu += x;
            mu /= static_cast<double>(xs.size());
            double var = 0.0;
            for (double x : xs) var += (x - mu) * (x - mu);
            return std::sqrt(var / static_cast<double>(xs.size()));
        };
        s_class[static_cast<std::size_t>(j)] = stddev(class_mean);
        s_context[static_cast<std::size_t>(j)] = stddev(ctx_mean);
    }

    f.dim_is_class.resize(static_cast<std::size_t>(df));
    double class_sum = 0.0, ctx_sum = 0.0;
    long class_dims = 0, ctx_dims = 0;
    for (int j = 0; j < df; ++j) {
        const bool is_class = s_class[static_cast<std::size_t>(j)] >
                              s_context[static_cast<std::size_t>(j)];
        f.dim_is_class[static_cast<std::size_t>(j)] = is_class ? 1 : 0;
        if (is_class) {
            class_sum += f.mean_gate.at(0, j);
            ++class_dims;
        } else {
            ctx_sum += f.mean_gate.at(0, j);
            ++ctx_dims;
        }
    }
    f.class_mass = class_dims ? class_sum / class_dims : 0.0;
    f.context_mass = ctx_dims ? ctx_sum / ctx_dims : 0.0;

    double total_c = 0.0, total_s = 0.0;
    for (int j = 0; j < df; ++j) {
        total_c += s_class[static_cast<std::size_t>(j)];
        total_s += s_context[static_cast<std::size_t>(j)];
    }
    for (int j = 0; j < df; ++j) {
        if (total_c > 0.0)
            f.soft_class_mass += f.mean_gate.at(0, j) * s_class[static_cast<std::size_t>(j)] / total_c;
        if (total_s > 0.0)
            f.soft_context_mass += f.mean_gate.at(0, j) * s_context[static_cast<std::size_t>(j)] / total_s;
    }
    return f;
}

std::string GateFocus::to_text() const {
    std::ostringstream os;
    os << "class_mass " << g17(class_mass) << "\n";
    os << "context_mass " << g17(context_mass) << "\n";
    os << "soft_class_mass " << g17(soft_class_mass) << "\n";
    os << "soft_context_mass " << g17(soft_context_mass) << "\n";
    os << "dim_is_class " << join(dim_is_class) << "\n";
    os << "mean_gate";
    for (int j = 0; j < mean_gate.cols(); ++j) os << " " << g17(mean_gate.at(0, j));
    os << "\n";
    return os.str();
}

// ---------------------------------------------------------------------------

RunResult run_training(const RunConfig& raw) {
    const RunConfig cfg = raw.resolved();
    cfg.validate();

    MetricsStream ms(cfg.out_dir);
    std::ofstream timings;
    if (!cfg.out_dir.empty()) timings.open(cfg.out_dir + "/timings.txt");

    const synth::DataBundle data = synth::generate(cfg.gen);
    const Model model(cfg.model);
    ParamSet params = model.init_params(DetRng::derive(cfg.seed, 21));

    const int m = cfg.btg.splits;
    const int n_train = static_cast<int>(data.train.size());

    DetRng part_rng(DetRng::derive(cfg.seed, 22));
    std::vector<int> init_assign(static_cast<std::size_t>(n_train));
    for (auto& a : init_assign) a = part_rng.uniform_int(0, m - 1);
    btg::Partition partition = btg::Partition::from_assignment(std::move(init_assign), m);

    DetRng task_rng(DetRng::derive(cfg.seed, 23));
    DetRng mixup_rng(DetRng::derive(cfg.seed, 24));
    DetRng batch_rng(DetRng::derive(cfg.seed, 25));

    RunResult out;
    out.dataset_hash = cfg.gen.hash();
    out.config_hash = cfg.hash();

    ms.line("run variant=" + to_string(cfg.variant) + " seed=" + std::to_string(cfg.seed) +
            " config_hash=" + hex64(out.config_hash) + " dataset_hash=" +
            hex64(out.dataset_hash) + " meta_grad=averaged");

    const bool uses_meta = cfg.variant == Variant::Meta || cfg.variant == Variant::Full;
    const bool uses_btg = cfg.variant == Variant::Btg || cfg.variant == Variant::Full;
    const int bs = cfg.mixup.batch_size;

    mcfl::Stage2Config s2;
    s2.meta = cfg.meta;
    s2.mixup = cfg.mixup;
    s2.erm_lr = cfg.lr;
    s2.erm_weight = cfg.erm_weight;

    const int decay_epoch = static_cast<int>(std::floor(cfg.lr_decay_at * cfg.epochs));
    int refresh_idx = 0;

    try {
        for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
            const auto t0 = std::chrono::steady_clock::now();
            const double lr_scale = epoch > decay_epoch ? cfg.lr_decay : 1.0;

            if (uses_btg && epoch >= cfg.refresh_start &&
                (epoch - cfg.refresh_start) % cfg.refresh_period == 0) {
                const Tensor fs = model.eval_fs(params, data.train.features);
                btg::BtgResult br =
                    btg::run_btg(cfg.btg, fs, data.train.labels, cfg.gen.num_classes,
                                 DetRng::derive(cfg.seed, 1000 + static_cast<std::uint64_t>(refresh_idx)));
                partition = std::move(br.partition);
                // Keep the last bias classifier in the checkpoint so the
                // confounder stream stays inspectable.
                btg::BiasFitResult bias = btg::train_bias_classifier(
                    fs, data.train.labels, cfg.gen.num_classes, 30, cfg.btg.h_lr);
                params.at("head.bias.w") = bias.head.w;
                params.at("head.bias.b") = bias.head.b;
                ++refresh_idx;
                ms.line("partition epoch=" + std::to_string(epoch) + " strategy=" +
                        btg::to_string(cfg.btg.strategy) + " entropy=" +
                        g17(partition.size_entropy()) + " sizes=" + join(partition.sizes()) +
                        " bias_acc=" + g17(bias.accuracy) + " warnings=" +
                        std::to_string(br.report.warnings.size()));
                if (!cfg.out_dir.empty()) {
                    btg::save_partition(cfg.out_dir + "/partition_epoch" +
                                            std::to_string(epoch) + ".txt",
                                        br.theta_final, partition);
                    std::ofstream rep(cfg.out_dir + "/balance_epoch" +
                                      std::to_string(epoch) + ".txt");
                    rep << br.report.to_text();
                }
            }

            if (uses_meta) {
                const int rounds = cfg.meta.tasks_total / m;
                for (int r = 0; r < rounds; ++r) {
                    mcfl::StepResult sr = mcfl::stage2_step(model, params, partition,
                                                            data.train, s2, task_rng,
                                                            mixup_rng, lr_scale);
                    params = std::move(sr.params);
                    ms.line("step epoch=" + std::to_string(epoch) + " round=" +
                            std::to_string(r) + " meta=" + g17(sr.meta_loss) + " erm=" +
                            g17(sr.erm_loss) + " total=" + g17(sr.total_loss) + " tasks=" +
                            join_g17(sr.task_losses) + " meta_gnorm=" +
                            g17(sr.meta_grad_norm) + " erm_gnorm=" + g17(sr.erm_grad_norm) +
                            " fallbacks=" + std::to_string(sr.fallbacks));
                }
            } else if (uses_btg) {
                const int rounds = std::max(1, (n_train + bs * m - 1) / (bs * m));
                for (int r = 0; r < rounds; ++r) {
                    double loss_sum = 0.0;
                    int steps = 0;
                    for (int t = 0; t < m; ++t) {
                        const auto& members = partition.members[static_cast<std::size_t>(t)];
                        if (members.empty()) continue;
                        std::vector<int> idx(static_cast<std::size_t>(std::min(bs,
                            static_cast<int>(members.size()))));
                        for (auto& i : idx)
                            i = members[static_cast<std::size_t>(batch_rng.uniform_int(
                                0, static_cast<int>(members.size()) - 1))];
                        const Tensor x = mcfl::gather_rows(data.train.features, idx);
                        const std::vector<int> y = mcfl::gather_labels(data.train.labels, idx);
                        loss_sum += erm_step(model, params, x, y, cfg.lr * lr_scale);
                        ++steps;
                    }
                    ms.line("train epoch=" + std::to_string(epoch) + " round=" +
                            std::to_string(r) + " loss=" +
                            g17(steps ? loss_sum / steps : 0.0));
                }
            } else {
                const std::vector<int> perm = batch_rng.permutation(n_train);
                const int rounds = (n_train + bs - 1) / bs;
                for (int r = 0; r < rounds; ++r) {
                    const int lo = r * bs, hi = std::min(n_train, lo + bs);
                    const std::vector<int> idx(perm.begin() + lo, perm.begin() + hi);
                    const Tensor x = mcfl::gather_rows(data.train.features, idx);
                    const std::vector<int> y = mcfl::gather_labels(data.train.labels, idx);
                    const double loss = erm_step(model, params, x, y, cfg.lr * lr_scale);
                    ms.line("train epoch=" + std::to_string(epoch) + " round=" +
                            std::to_string(r) + " loss=" + g17(loss));
                }
            }

            if (epoch % cfg.eval_every == 0 || epoch == cfg.epochs) {
                const EvalResult val = top1_accuracy(
                    model.eval_logits(params, data.val.features, Head::Task), data.val.labels);
                const EvalResult test = top1_accuracy(
                    model.eval_logits(params, data.test.features, Head::Task),
                    data.test.labels);
                ms.line(eval_record(epoch, "val", val));
                ms.line(eval_record(epoch, "test", test));
                out.val_eval = val;
                out.test_eval = test;
            }

            if (timings.is_open()) {
                const auto ms_elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
                                            std::chrono::steady_clock::now() - t0)
                                            .count();
                timings << "epoch " << epoch << " ms " << ms_elapsed << "\n";
            }
        }
    } catch (const NumericError& e) {
        ms.line(std::string("abort error=numeric detail=") + e.what());
        throw;
    }

    out.val_accuracy = out.val_eval.accuracy;
    out.test_accuracy = out.test_eval.accuracy;
    out.gate = gate_focus_summary(model, params, cfg.gen, data.train.features);
    out.refreshes = refresh_idx;
    ms.line("final val=" + g17(out.val_accuracy) + " test=" + g17(out.test_accuracy) +
            " gate_class=" + g17(out.gate.class_mass) + " gate_context=" +
            g17(out.gate.context_mass) + " refreshes=" + std::to_string(refresh_idx));

    out.params = std::move(params);
    out.partition = std::move(partition);
    out.metrics = ms.text();

    if (!cfg.out_dir.empty()) {
        Checkpoint ck{cfg.model, out.params, out.dataset_hash};
        save_checkpoint(cfg.out_dir + "/checkpoint.txt", ck);
        std::ofstream rep(cfg.out_dir + "/report.txt");
        rep << "variant " << to_string(cfg.variant) << "\n";
        rep << "config_hash " << hex64(out.config_hash) << "\n";
        rep << "dataset_hash " << hex64(out.dataset_hash) << "\n";
        rep << "val_accuracy " << g17(out.val_accuracy) << "\n";
        rep << "test_accuracy " << g17(out.test_accuracy) << "\n";
        rep << out.gate.to_text();
    }
    return out;
}

// ---------------------------------------------------------------------------

void check_same_dataset(const std::vector<std::uint64_t>& hashes) {
    for (std::size_t i = 1; i < hashes.size(); ++i)
        if (hashes[i] != hashes[0])
            throw ConfigError("refusing to compare runs over different datasets (hash " +
                              hex64(hashes[i]) + " vs " + hex64(hashes[0]) + ")");
}

AblationReport run_ablation(const RunConfig& base, const std::vector<std::uint64_t>& seeds) {
    AblationReport rep;
    rep.ladder = {Variant::Erm, Variant::Gate, Variant::Meta, Variant::Btg, Variant::Full};
    rep.config_hash = base.hash();

    std::map<int, std::vector<double>> vals, tests;
    for (const std::uint64_t seed : seeds) {
        std::vector<std::uint64_t> hashes;
        for (const Variant v : rep.ladder) {
            RunConfig cfg = base;
            cfg.seed = seed;
            cfg.variant = v;
            if (!base.out_dir.empty())
                cfg.out_dir = base.out_dir + "/seed" + std::to_string(seed) + "_" + to_string(v);
            const RunResult r = run_training(cfg);
            hashes.push_back(r.dataset_hash);
            rep.cells.push_back({v, seed, r.val_accuracy, r.test_accuracy,
                                 r.gate.class_mass > r.gate.context_mass});
            vals[static_cast<int>(v)].push_back(r.val_accuracy);
            tests[static_cast<int>(v)].push_back(r.test_accuracy);
        }
        check_same_dataset(hashes);
    }

    auto mean = [](const std::vector<double>& xs) {
        double s = 0.0;
        for (double x : xs) s += x;
        return xs.empty() ? 0.0 : s / static_cast<double>(xs.size());
    };
    for (const auto& [k, xs] : vals) rep.mean_val[k] = mean(xs);
    for (const auto& [k, xs] : tests) rep.mean_test[k] = mean(xs);
    return rep;
}

std::string AblationReport::to_text() const {
    std::ostringstream os;
    os << "ablation config_hash=" << hex64(config_hash) << "\n";
    os << "variant  val_acc  test_acc\n";
    for (const Variant v : ladder) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%-8s %7.2f  %7.2f\n", to_string(v).c_str(),
                      mean_val.at(static_cast<int>(v)), mean_test.at(static_cast<int>(v)));
        os << buf;
    }
    os << "cells\n";
    for (const AblationCell& c : cells) {
        char buf[96];
        std::snprintf(buf, sizeof(buf), "%-8s seed=%llu val=%.4f test=%.4f gate_class_focused=%d\n",
                      to_string(c.variant).c_str(), static_cast<unsigned long long>(c.seed),
                      c.val_acc, c.test_acc, c.gate_class_focused ? 1 : 0);
        os << buf;
    }
    return os.str();
}

BalanceComparison run_balance_comparison(const RunConfig& base,
                                         const std::vector<std::uint64_t>& seeds) {
    BalanceComparison rep;
    rep.config_hash = base.hash();
    const btg::BalanceStrategy strategies[] = {
        btg::BalanceStrategy::None, btg::BalanceStrategy::LB, btg::BalanceStrategy::MB,
        btg::BalanceStrategy::GB};

    for (const bool meta_learner : {false, true}) {
        for (const btg::BalanceStrategy s : strategies) {
            BalanceCell cell;
            cell.meta_learner = meta_learner;
            cell.strategy = s;
            std::vector<std::uint64_t> hashes;
            for (const std::uint64_t seed : seeds) {
                RunConfig cfg = base;
                cfg.seed = seed;
                cfg.variant = meta_learner ? Variant::Full : Variant::Btg;
                cfg.btg.strategy = s;
                if (!base.out_dir.empty())
                    cfg.out_dir = base.out_dir + "/seed" + std::to_string(seed) + "_" +
                                  (meta_learner ? "meta_" : "backbone_") + btg::to_string(s);
                const RunResult r = run_training(cfg);
                hashes.push_back(r.dataset_hash);
                cell.val_acc += r.val_accuracy;
                cell.test_acc += r.test_accuracy;
                cell.entropy += r.partition.size_entropy();
            }
            check_same_dataset(hashes);
            const double n = static_cast<double>(seeds.size());
            cell.val_acc /= n;
            cell.test_acc /= n;
            cell.entropy /= n;
            rep.cells.push_back(cell);
        }
    }
    return rep;
}

const BalanceCell& BalanceComparison::cell(bool meta_learner, btg::BalanceStrategy s) const {
    for (const BalanceCell& c : cells)
        if (c.meta_learner == meta_learner && c.strategy == s) return c;
    throw std::invalid_argument("BalanceComparison: no such cell");
}

std::string BalanceComparison::to_text() const {
    std::ostringstream os;
    os << "balance-comparison config_hash=" << hex64(config_hash) << "\n";
    os << "learner   strategy  val_acc  test_acc  entropy\n";
    for (const BalanceCell& c : cells) {
        char buf[96];
        std::snprintf(buf, sizeof(buf), "%-9s %-9s %7.2f  %7.2f  %7.4f\n",
                      c.meta_learner ? "meta" : "backbone", btg::to_string(c.strategy).c_str(),
                      c.val_acc, c.test_acc, c.entropy);
        os << buf;
    }
    return os.str();
}

// ---------------------------------------------------------------------------

std::string render_pgm(const Tensor& values) {
    std::ostringstream os;
    os << "P2\n" << values.cols() << " " << values.rows() << "\n255\n";
    for (int i = 0; i < values.rows(); ++i) {
        for (int j = 0; j < values.cols(); ++j) {
            const double v = std::clamp(values.at(i, j), 0.0, 1.0);
            os << (j ? " " : "") << static_cast<int>(std::lround(v * 255.0));
        }
        os << "\n";
    }
    return os.str();
}

void export_attention_heatmaps(const Model& model, const ParamSet& params,
                               const synth::Dataset& samples, const synth::GenConfig& gen,
                               const std::string& out_dir, int max_rows_per_class) {
    std::filesystem::create_directories(out_dir);
    const Tensor gate = model.eval_gate(params, samples.features);

    for (int c = 0; c < samples.num_classes; ++c) {
        std::vector<int> idx;
        for (std::size_t i = 0; i < samples.size(); ++i)
            if (samples.labels[i] == c) idx.push_back(static_cast<int>(i));
        if (idx.empty()) continue;
        if (static_cast<int>(idx.size()) > max_rows_per_class)
            idx.resize(static_cast<std::size_t>(max_rows_per_class));
        Tensor rows(static_cast<int>(idx.size()), gate.cols());
        for (std::size_t r = 0; r < idx.size(); ++r)
            for (int j = 0; j < gate.cols(); ++j)
                rows.at(static_cast<int>(r), j) = gate.at(idx[r], j);
        std::ofstream out(out_dir + "/gate_class_" + std::to_string(c) + ".pgm");
        if (!out) throw IoError("heatmaps: cannot write to " + out_dir);
        out << render_pgm(rows);
    }

    const GateFocus focus = gate_focus_summary(model, params, gen, samples.features);
    std::ofstream summary(out_dir + "/gate_summary.txt");
    if (!summary) throw IoError("heatmaps: cannot write summary in " + out_dir);
    summary << focus.to_text();
}

}  // namespace bmcl::harness
