// Copyright (c) 2026 the bmcl authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: dataset generation, training, evaluation, the
// ablation ladder, the balancing-strategy grid, and heatmap export.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "bmcl/errors.hpp"
#include "bmcl/harness.hpp"

namespace {

using bmcl::harness::RunConfig;
using nlohmann::json;

// Config file first, explicit flags override (they are parsed afterwards).
void apply_json(RunConfig& cfg, const json& j) {
    auto get = [](const json& o, const char* key, auto& out) {
        if (o.contains(key)) out = o.at(key).get<std::decay_t<decltype(out)>>();
    };
    if (j.contains("gen")) {
        const json& g = j.at("gen");
        get(g, "classes", cfg.gen.num_classes);
        get(g, "train_contexts", cfg.gen.train_contexts);
        get(g, "test_contexts", cfg.gen.test_contexts);
        get(g, "dim", cfg.gen.feature_dim);
        get(g, "class_dims", cfg.gen.class_dims);
        get(g, "context_dims", cfg.gen.context_dims);
        get(g, "rho", cfg.gen.rho);
        get(g, "sigma", cfg.gen.sigma);
        get(g, "class_scale", cfg.gen.class_scale);
        get(g, "context_scale", cfg.gen.context_scale);
        get(g, "n_train", cfg.gen.n_train);
        get(g, "n_val", cfg.gen.n_val);
        get(g, "n_test", cfg.gen.n_test);
        get(g, "zero_shot", cfg.gen.zero_shot);
    }
    if (j.contains("btg")) {
        const json& b = j.at("btg");
        get(b, "splits", cfg.btg.splits);
        get(b, "matrices", cfg.btg.matrices);
        get(b, "lambda_irm", cfg.btg.lambda_irm);
        get(b, "lambda_bal", cfg.btg.lambda_bal);
        get(b, "inner_epochs", cfg.btg.inner_epochs);
        get(b, "h_steps", cfg.btg.h_steps);
        get(b, "h_lr", cfg.btg.h_lr);
        get(b, "theta_steps", cfg.btg.theta_steps);
        get(b, "theta_lr", cfg.btg.theta_lr);
        get(b, "early_stop_start", cfg.btg.early_stop_start);
        get(b, "patience", cfg.btg.patience);
        if (b.contains("strategy"))
            cfg.btg.strategy = bmcl::btg::strategy_from_string(b.at("strategy").get<std::string>());
    }
    if (j.contains("meta")) {
        const json& m = j.at("meta");
        get(m, "classes_per_task", cfg.meta.classes_per_task);
        get(m, "support_per_class", cfg.meta.support_per_class);
        get(m, "query_per_class", cfg.meta.query_per_class);
        get(m, "tasks_total", cfg.meta.tasks_total);
        get(m, "inner_lr", cfg.meta.inner_lr);
        get(m, "outer_lr", cfg.meta.outer_lr);
        get(m, "inner_steps", cfg.meta.inner_steps);
        get(m, "second_order", cfg.meta.second_order);
    }
    if (j.contains("mixup")) {
        const json& m = j.at("mixup");
        get(m, "alpha", cfg.mixup.alpha);
        get(m, "batch_size", cfg.mixup.batch_size);
    }
    if (j.contains("model")) {
        const json& m = j.at("model");
        get(m, "hidden_dim", cfg.model.hidden_dim);
        get(m, "hidden_layers", cfg.model.hidden_layers);
        get(m, "feature_dim", cfg.model.feature_dim);
    }
    if (j.contains("variant"))
        cfg.variant = bmcl::harness::variant_from_string(j.at("variant").get<std::string>());
    get(j, "epochs", cfg.epochs);
    get(j, "refresh_start", cfg.refresh_start);
    get(j, "refresh_period", cfg.refresh_period);
    get(j, "lr", cfg.lr);
    get(j, "erm_weight", cfg.erm_weight);
    get(j, "lr_decay", cfg.lr_decay);
    get(j, "lr_decay_at", cfg.lr_decay_at);
    get(j, "eval_every", cfg.eval_every);
    get(j, "seed", cfg.seed);
}

void add_gen_options(CLI::App* app, bmcl::synth::GenConfig& g) {
    app->add_option("--classes", g.num_classes, "number of classes");
    app->add_option("--train-contexts", g.train_contexts, "contexts seen in training");
    app->add_option("--test-contexts", g.test_contexts, "held-out contexts");
    app->add_option("--dim", g.feature_dim, "feature dimension");
    app->add_option("--class-dims", g.class_dims, "class-signal dimensions");
    app->add_option("--context-dims", g.context_dims, "context-signal dimensions");
    app->add_option("--rho", g.rho, "class-context correlation");
    app->add_option("--sigma", g.sigma, "noise scale");
    app->add_option("--class-scale", g.class_scale, "class prototype norm");
    app->add_option("--context-scale", g.context_scale, "context prototype norm");
    app->add_option("--n-train", g.n_train, "training samples");
    app->add_option("--n-val", g.n_val, "validation samples");
    app->add_option("--n-test", g.n_test, "test samples");
    app->add_flag("--zero-shot,!--no-zero-shot", g.zero_shot,
                  "test contexts unseen during training");
}

void add_run_options(CLI::App* app, RunConfig& cfg, std::string& variant,
                     std::string& strategy) {
    add_gen_options(app, cfg.gen);
    app->add_option("--variant", variant, "erm | gate | meta | btg | full");
    app->add_option("--epochs", cfg.epochs, "total training epochs");
    app->add_option("--refresh-start", cfg.refresh_start, "first partition refresh epoch");
    app->add_option("--refresh-period", cfg.refresh_period, "epochs between refreshes");
    app->add_option("--lr", cfg.lr, "ERM-path learning rate");
    app->add_option("--erm-weight", cfg.erm_weight, "mixup branch weight");
    app->add_option("--lr-decay", cfg.lr_decay, "decay factor");
    app->add_option("--lr-decay-at", cfg.lr_decay_at, "decay point as fraction of epochs");
    app->add_option("--eval-every", cfg.eval_every, "evaluation cadence");
    app->add_option("--seed", cfg.seed, "run seed");
    app->add_option("--splits", cfg.btg.splits, "partition splits (m)");
    app->add_option("--matrices", cfg.btg.matrices, "partition matrices for GB (n)");
    app->add_option("--lambda-irm", cfg.btg.lambda_irm, "IRM penalty weight");
    app->add_option("--lambda-bal", cfg.btg.lambda_bal, "LB entropy weight");
    app->add_option("--btg-epochs", cfg.btg.inner_epochs, "stage-1 alternation cap");
    app->add_option("--strategy", strategy, "none | LB | MB | GB");
    app->add_option("--classes-per-task", cfg.meta.classes_per_task, "classes per meta-task (w)");
    app->add_option("--support", cfg.meta.support_per_class, "support images per class (i)");
    app->add_option("--query", cfg.meta.query_per_class, "query images per class (j)");
    app->add_option("--tasks", cfg.meta.tasks_total, "meta-tasks per epoch (s)");
    app->add_option("--inner-lr", cfg.meta.inner_lr, "inner step size (alpha)");
    app->add_option("--outer-lr", cfg.meta.outer_lr, "meta step size (beta)");
    app->add_option("--inner-steps", cfg.meta.inner_steps, "inner gradient steps");
    app->add_flag("--second-order,!--first-order", cfg.meta.second_order,
                  "differentiate through the inner step");
    app->add_option("--mixup-alpha", cfg.mixup.alpha, "Beta parameter for mixup");
    app->add_option("--batch-size", cfg.mixup.batch_size, "ERM batch size");
}

bmcl::synth::Dataset dataset_for_eval(const std::string& data_path, const RunConfig& cfg,
                                      const std::string& split) {
    if (!data_path.empty()) return bmcl::synth::load_dataset(data_path);
    const bmcl::synth::DataBundle b = bmcl::synth::generate(cfg.resolved().gen);
    if (split == "train") return b.train;
    if (split == "val") return b.val;
    return b.test;
}

int run_cli(int argc, char** argv) {
    CLI::App app{"balanced meta-causal training on synthetic class-context benchmarks"};
    app.require_subcommand(1);

    // A config file provides the base values; flags parsed later win.
    RunConfig cfg;
    for (int i = 1; i + 1 < argc; ++i) {
        if (std::string(argv[i]) == "--config") {
            std::ifstream in(argv[i + 1]);
            if (!in) throw bmcl::IoError(std::string("cannot open config ") + argv[i + 1]);
            json j;
            try {
                in >> j;
            } catch (const json::exception& e) {
                throw bmcl::ConfigError(std::string("bad config file: ") + e.what());
            }
            apply_json(cfg, j);
        }
    }
    std::string config_path, variant = to_string(cfg.variant);
    std::string strategy = bmcl::btg::to_string(cfg.btg.strategy);
    app.add_option("--config", config_path, "JSON config file (flags override)");

    auto* gen = app.add_subcommand("generate", "write dataset files");
    std::string gen_out = "data";
    bmcl::synth::GenConfig gen_cfg = cfg.gen;
    add_gen_options(gen, gen_cfg);
    gen->add_option("--seed", gen_cfg.seed, "generator seed");
    gen->add_option("--out", gen_out, "output directory");

    auto* train = app.add_subcommand("train", "run one training configuration");
    std::string train_out = "runs/run";
    add_run_options(train, cfg, variant, strategy);
    train->add_option("--out", train_out, "output directory");
    train->add_option("--config", config_path, "JSON config file (flags override)");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string ck_path, data_path, split = "test";
    eval->add_option("--checkpoint", ck_path, "checkpoint file")->required();
    eval->add_option("--data", data_path, "dataset file (default: regenerate from config)");
    eval->add_option("--split", split, "train | val | test");
    std::string eval_variant = variant, eval_strategy = strategy;
    add_run_options(eval, cfg, eval_variant, eval_strategy);

    auto* ablate = app.add_subcommand("ablate", "train the ablation ladder");
    std::string ablate_out = "runs/ablate", seeds_csv = "1,2,3,4,5";
    add_run_options(ablate, cfg, variant, strategy);
    ablate->add_option("--out", ablate_out, "output directory");
    ablate->add_option("--seeds", seeds_csv, "comma-separated seeds");
    ablate->add_option("--config", config_path, "JSON config file (flags override)");

    auto* bal = app.add_subcommand("balance-compare", "train the balancing-strategy grid");
    std::string bal_out = "runs/balance";
    add_run_options(bal, cfg, variant, strategy);
    bal->add_option("--out", bal_out, "output directory");
    bal->add_option("--seeds", seeds_csv, "comma-separated seeds");
    bal->add_option("--config", config_path, "JSON config file (flags override)");

    auto* heat = app.add_subcommand("heatmaps", "export attention-gate heatmaps");
    std::string heat_out = "heatmaps";
    heat->add_option("--checkpoint", ck_path, "checkpoint file")->required();
    heat->add_option("--data", data_path, "dataset file (default: regenerate from config)");
    heat->add_option("--split", split, "train | val | test");
    heat->add_option("--out", heat_out, "output directory");
    std::string heat_variant = variant, heat_strategy = strategy;
    add_run_options(heat, cfg, heat_variant, heat_strategy);

    app.parse(argc, argv);

    auto parse_seeds = [&]() {
        std::vector<std::uint64_t> seeds;
        std::stringstream ss(seeds_csv);
        std::string tok;
        while (std::getline(ss, tok, ',')) seeds.push_back(std::stoull(tok));
        if (seeds.empty()) throw bmcl::ConfigError("no seeds given");
        return seeds;
    };
    cfg.variant = bmcl::harness::variant_from_string(variant);
    cfg.btg.strategy = bmcl::btg::strategy_from_string(strategy);

    if (gen->parsed()) {
        gen_cfg.validate();
        std::filesystem::create_directories(gen_out);
        const bmcl::synth::DataBundle b = bmcl::synth::generate(gen_cfg);
        bmcl::synth::save_dataset(gen_out + "/train.txt", b.train);
        bmcl::synth::save_dataset(gen_out + "/val.txt", b.val);
        bmcl::synth::save_dataset(gen_out + "/test.txt", b.test);
        std::cout << "wrote " << gen_out << "/{train,val,test}.txt ("
                  << b.train.size() << "/" << b.val.size() << "/" << b.test.size()
                  << " samples)\n";
        return 0;
    }

    if (train->parsed()) {
        cfg.out_dir = train_out;
        const bmcl::harness::RunResult r = bmcl::harness::run_training(cfg);
        std::printf("val %.2f test %.2f (gate class %.4f vs context %.4f), artifacts in %s\n",
                    r.val_accuracy, r.test_accuracy, r.gate.class_mass, r.gate.context_mass,
                    train_out.c_str());
        return 0;
    }

    if (eval->parsed()) {
        cfg.variant = bmcl::harness::variant_from_string(eval_variant);
        const bmcl::Checkpoint ck = bmcl::load_checkpoint(ck_path);
        const bmcl::synth::Dataset ds = dataset_for_eval(data_path, cfg, split);
        if (ck.dataset_hash != ds.config_hash)
            std::cout << "note: checkpoint dataset hash differs from evaluated dataset\n";
        const bmcl::Model model(ck.model);
        const bmcl::harness::EvalResult ev = bmcl::harness::top1_accuracy(
            model.eval_logits(ck.params, ds.features, bmcl::Head::Task), ds.labels);
        std::printf("%s accuracy %.4f (%ld/%ld)\n", ds.role.c_str(), ev.accuracy, ev.correct,
                    ev.total);
        return 0;
    }

    if (ablate->parsed()) {
        cfg.out_dir = ablate_out;
        const auto rep = bmcl::harness::run_ablation(cfg, parse_seeds());
        std::cout << rep.to_text();
        std::ofstream out(ablate_out + "/ablation.txt");
        out << rep.to_text();
        return 0;
    }

    if (bal->parsed()) {
        cfg.out_dir = bal_out;
        const auto rep = bmcl::harness::run_balance_comparison(cfg, parse_seeds());
        std::cout << rep.to_text();
        std::ofstream out(bal_out + "/balance.txt");
        out << rep.to_text();
        return 0;
    }

    if (heat->parsed()) {
        cfg.variant = bmcl::harness::variant_from_string(heat_variant);
        const bmcl::Checkpoint ck = bmcl::load_checkpoint(ck_path);
        const bmcl::synth::Dataset ds = dataset_for_eval(data_path, cfg, split);
        const bmcl::Model model(ck.model);
        bmcl::harness::export_attention_heatmaps(model, ck.params, ds, cfg.resolved().gen,
                                                 heat_out);
        std::cout << "wrote gate heatmaps to " << heat_out << "\n";
        return 0;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run_cli(argc, argv);
    } catch (const CLI::CallForHelp&) {
        std::cout << "run with --help on a subcommand for options\n";
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << "argument error: " << e.what() << "\n";
        return 2;
    } catch (const bmcl::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const bmcl::NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const bmcl::IoError& e) {
        std::cerr << "i/o failure: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
