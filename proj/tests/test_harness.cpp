// Copyright (c) 2026 the bmcl authors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "bmcl/errors.hpp"
#include "bmcl/harness.hpp"
#include "helpers.hpp"

using namespace bmcl;
using namespace bmcl::harness;

namespace {

// Small config that still exercises every stage: meta steps, one refresh,
// evaluation, and the gate analysis.
RunConfig tiny_config() {
    RunConfig cfg;
    cfg.gen.n_train = 240;
    cfg.gen.n_val = 80;
    cfg.gen.n_test = 80;
    cfg.epochs = 4;
    cfg.refresh_start = 2;
    cfg.refresh_period = 2;
    cfg.btg.inner_epochs = 3;
    cfg.btg.h_steps = 4;
    cfg.btg.theta_steps = 3;
    cfg.btg.matrices = 2;
    cfg.meta.tasks_total = 8;
    cfg.meta.query_per_class = 4;
    cfg.seed = 5;
    return cfg;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("top-1 accuracy") {
    SUBCASE("all correct gives 100") {
        Tensor logits(3, 3);
        for (int i = 0; i < 3; ++i) logits.at(i, i) = 5.0;
        const EvalResult ev = top1_accuracy(logits, {0, 1, 2});
        CHECK(ev.accuracy == 100.0);
    }
    SUBCASE("3 of 4 gives 75") {
        Tensor logits(4, 2);
        logits.at(0, 0) = 1.0;
        logits.at(1, 1) = 1.0;
        logits.at(2, 0) = 1.0;
        logits.at(3, 0) = 1.0;  // wrong, label 1
        const EvalResult ev = top1_accuracy(logits, {0, 1, 0, 1});
        CHECK(ev.accuracy == 75.0);
    }
    SUBCASE("empty input rejected") {
        CHECK_THROWS_AS(top1_accuracy(Tensor(0, 3), {}), std::invalid_argument);
        CHECK_THROWS_AS(top1_accuracy(Tensor(2, 3), {0}), std::invalid_argument);
    }
    SUBCASE("accuracy recomputed from the confusion counts matches") {
        DetRng rng(7);
        for (int trial = 0; trial < 10; ++trial) {
            const int n = rng.uniform_int(5, 60), c = rng.uniform_int(2, 6);
            const Tensor logits = testutil::random_tensor(n, c, rng);
            std::vector<int> labels(static_cast<std::size_t>(n));
            for (auto& y : labels) y = rng.uniform_int(0, c - 1);
            const EvalResult ev = top1_accuracy(logits, labels);
            CHECK(ev.accuracy == ev.accuracy_from_counts());
            // per-class counts all add up to n
            for (int j = 0; j < c; ++j)
                CHECK(ev.tp[static_cast<std::size_t>(j)] + ev.fp[static_cast<std::size_t>(j)] +
                          ev.fn[static_cast<std::size_t>(j)] +
                          ev.tn[static_cast<std::size_t>(j)] ==
                      n);
        }
    }
}

TEST_CASE("run_training determinism: identical config and seed, identical stream") {
    RunConfig cfg = tiny_config();
    const RunResult a = run_training(cfg);
    const RunResult b = run_training(cfg);
    CHECK(a.metrics == b.metrics);
    CHECK(a.val_accuracy == b.val_accuracy);
    CHECK(a.test_accuracy == b.test_accuracy);
    CHECK(a.params.same_values(b.params));
    CHECK(a.refreshes == 2);  // start 2, period 2 -> refreshed at epochs 2 and 4
}

TEST_CASE("no refresh when the start epoch lies past the schedule") {
    RunConfig cfg = tiny_config();
    cfg.refresh_start = 99;  // past the final epoch
    const RunResult r = run_training(cfg);
    CHECK(r.refreshes == 0);
    // initial random partition stays in place and training still completes
    CHECK(r.metrics.find("final") != std::string::npos);
}

TEST_CASE("erm and gate variants skip partition machinery") {
    RunConfig cfg = tiny_config();
    cfg.variant = Variant::Erm;
    const RunResult r = run_training(cfg);
    CHECK(r.refreshes == 0);
    CHECK(r.metrics.find("train epoch=") != std::string::npos);
    // ungated model reports equal masses
    CHECK(r.gate.class_mass == r.gate.context_mass);

    cfg.variant = Variant::Gate;
    const RunResult g = run_training(cfg);
    CHECK(g.refreshes == 0);
}

TEST_CASE("checkpoint round-trip reproduces the recorded evaluation exactly") {
    const std::string dir = "harness_ck_test";
    std::filesystem::remove_all(dir);
    RunConfig cfg = tiny_config();
    cfg.out_dir = dir;
    const RunResult r = run_training(cfg);

    const Checkpoint ck = load_checkpoint(dir + "/checkpoint.txt");
    CHECK(ck.dataset_hash == r.dataset_hash);
    const Model model(ck.model);
    const synth::DataBundle data = synth::generate(cfg.resolved().gen);
    const EvalResult ev = top1_accuracy(
        model.eval_logits(ck.params, data.test.features, Head::Task), data.test.labels);
    CHECK(ev.accuracy == r.test_accuracy);
    CHECK(ev.correct == r.test_eval.correct);
    std::filesystem::remove_all(dir);
}

TEST_CASE("aborted runs leave a failure marker in the flushed stream") {
    const std::string dir = "harness_abort_test";
    std::filesystem::remove_all(dir);
    RunConfig cfg = tiny_config();
    cfg.variant = Variant::Erm;
    cfg.lr = 1e200;  // guaranteed blow-up
    cfg.out_dir = dir;
    CHECK_THROWS_AS(run_training(cfg), NumericError);
    const std::string metrics = slurp(dir + "/metrics.txt");
    CHECK(metrics.find("abort error=numeric") != std::string::npos);
    std::filesystem::remove_all(dir);
}

TEST_CASE("metrics stream embeds config and dataset hashes") {
    RunConfig cfg = tiny_config();
    const RunResult r = run_training(cfg);
    CHECK(r.metrics.find("config_hash=") != std::string::npos);
    CHECK(r.metrics.find("dataset_hash=") != std::string::npos);
    CHECK(r.config_hash == cfg.hash());
    CHECK(r.dataset_hash == cfg.resolved().gen.hash());
}

TEST_CASE("report aggregation refuses mismatched dataset hashes") {
    CHECK_NOTHROW(check_same_dataset({7, 7, 7}));
    CHECK_THROWS_AS(check_same_dataset({7, 8}), ConfigError);
}

TEST_CASE("pgm rendering") {
    SUBCASE("gate of ones renders all white") {
        const std::string pgm = render_pgm(Tensor::full(2, 3, 1.0));
        CHECK(pgm.rfind("P2\n3 2\n255\n", 0) == 0);
        std::istringstream body(pgm.substr(9));
        int v;
        int count = 0;
        while (body >> v) {
            CHECK(v == 255);
            ++count;
        }
        CHECK(count == 6);
    }
    SUBCASE("gate of halves renders mid gray") {
        const std::string pgm = render_pgm(Tensor::full(1, 4, 0.5));
        std::istringstream body(pgm.substr(std::string("P2\n4 1\n255\n").size()));
        int v;
        while (body >> v) CHECK(v == 128);
    }
}

TEST_CASE("heatmap export writes one strip per class plus the summary") {
    const std::string dir = "harness_heatmap_test";
    std::filesystem::remove_all(dir);
    RunConfig cfg = tiny_config();
    cfg.epochs = 1;
    cfg.refresh_start = 99;
    const RunConfig rc = cfg.resolved();
    const synth::DataBundle data = synth::generate(rc.gen);
    const Model model(rc.model);
    const ParamSet params = model.init_params(3);  // zero-init gate -> 0.5 everywhere

    export_attention_heatmaps(model, params, data.test, rc.gen, dir);
    for (int c = 0; c < rc.gen.num_classes; ++c)
        CHECK(std::filesystem::exists(dir + "/gate_class_" + std::to_string(c) + ".pgm"));
    const std::string strip = slurp(dir + "/gate_class_0.pgm");
    std::istringstream body(strip.substr(strip.find("255\n") + 4));
    int v;
    while (body >> v) CHECK(v == 128);  // untrained gate renders uniform gray

    const std::string summary = slurp(dir + "/gate_summary.txt");
    CHECK(summary.find("class_mass") != std::string::npos);
    std::filesystem::remove_all(dir);
}

TEST_CASE("config validation catches schedule and field errors") {
    RunConfig cfg = tiny_config();
    cfg.epochs = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = tiny_config();
    cfg.gen.rho = 2.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = tiny_config();
    cfg.meta.tasks_total = 9;  // not divisible by splits
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = tiny_config();
    cfg.lr = -1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("ablation report shape on a minimal ladder") {
    RunConfig cfg = tiny_config();
    cfg.epochs = 2;
    cfg.refresh_start = 1;
    cfg.refresh_period = 1;
    cfg.btg.inner_epochs = 2;
    cfg.btg.matrices = 2;
    const AblationReport rep = run_ablation(cfg, {3});
    CHECK(rep.cells.size() == 5);
    CHECK(rep.ladder.size() == 5);
    const std::string text = rep.to_text();
    for (const char* name : {"erm", "gate", "meta", "btg", "full"})
        CHECK(text.find(name) != std::string::npos);
}

TEST_CASE("balance comparison grid has eight cells sharing the datasets") {
    RunConfig cfg = tiny_config();
    cfg.epochs = 2;
    cfg.refresh_start = 1;
    cfg.refresh_period = 1;
    cfg.btg.inner_epochs = 2;
    cfg.btg.matrices = 2;
    const BalanceComparison rep = run_balance_comparison(cfg, {4});
    CHECK(rep.cells.size() == 8);
    CHECK_NOTHROW(rep.cell(true, btg::BalanceStrategy::GB));
    CHECK_NOTHROW(rep.cell(false, btg::BalanceStrategy::None));
    CHECK(rep.to_text().find("backbone") != std::string::npos);
}
