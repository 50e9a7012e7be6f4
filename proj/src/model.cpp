// Copyright (c) 2026 the bmcl authors
// SPDX-License-Identifier: Apache-2.0
#include "bmcl/model.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "bmcl/errors.hpp"
#include "bmcl/rng.hpp"

namespace bmcl {

namespace {

std::string enc_w(int layer) { return "enc.w" + std::to_string(layer); }
std::string enc_b(int layer) { return "enc.b" + std::to_string(layer); }

Tensor he_uniform(int rows, int cols, DetRng& rng) {
    const double lim = std::sqrt(6.0 / rows);
    Tensor t(rows, cols);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-lim, lim);
    return t;
}

std::string fmt_double(double x) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

}  // namespace

void ModelConfig::validate() const {
    if (input_dim < 1 || hidden_dim < 1 || feature_dim < 1)
        throw ConfigError("model: dimensions must be positive");
    if (hidden_layers < 1) throw ConfigError("model: need at least one hidden layer");
    if (num_classes < 2) throw ConfigError("model: num_classes must be >= 2");
}

std::string ModelConfig::canonical() const {
    std::ostringstream os;
    os << "model;in=" << input_dim << ";hid=" << hidden_dim << ";L=" << hidden_layers
       << ";df=" << feature_dim << ";C=" << num_classes << ";gate=" << (use_gate ? 1 : 0);
    return os.str();
}

Model::Model(ModelConfig cfg) : cfg_(cfg) { cfg_.validate(); }

ParamSet Model::init_params(std::uint64_t seed) const {
    DetRng rng(DetRng::derive(seed, 7));
    ParamSet p;
    int in = cfg_.input_dim;
    for (int l = 0; l < cfg_.hidden_layers; ++l) {
        p.add(enc_w(l), he_uniform(in, cfg_.hidden_dim, rng));
        p.add(enc_b(l), Tensor(1, cfg_.hidden_dim));
        in = cfg_.hidden_dim;
    }
    p.add("enc.w_out", he_uniform(in, cfg_.feature_dim, rng));
    p.add("enc.b_out", Tensor(1, cfg_.feature_dim));
    // Zero-init gate keeps the split exactly at 0.5 before training.
    p.add("gate.w", Tensor(cfg_.feature_dim, cfg_.feature_dim));
    p.add("gate.b", Tensor(1, cfg_.feature_dim));
    p.add("head.task.w", Tensor(cfg_.feature_dim, cfg_.num_classes));
    p.add("head.task.b", Tensor(1, cfg_.num_classes));
    p.add("head.bias.w", Tensor(cfg_.feature_dim, cfg_.num_classes));
    p.add("head.bias.b", Tensor(1, cfg_.num_classes));
    p.add("head.aux.w", Tensor(cfg_.feature_dim, cfg_.num_classes));
    p.add("head.aux.b", Tensor(1, cfg_.num_classes));
    return p;
}

Decoupled Model::encode(ad::Tape& t, ad::Value x, const Bound& p) const {
    const int in_dim = t.value(x).cols();
    if (in_dim != cfg_.input_dim)
        throw std::invalid_argument("encode: input has dim " + std::to_string(in_dim) +
                                    ", model expects " + std::to_string(cfg_.input_dim));
    ad::Value h = x;
    for (int l = 0; l < cfg_.hidden_layers; ++l)
        h = t.relu(t.add(t.matmul(h, p.at(enc_w(l))), p.at(enc_b(l))));
    const ad::Value fx = t.add(t.matmul(h, p.at("enc.w_out")), p.at("enc.b_out"));

    Decoupled d;
    d.fx = fx;
    if (cfg_.use_gate) {
        d.gate = t.sigmoid(t.add(t.matmul(fx, p.at("gate.w")), p.at("gate.b")));
        d.fc = t.mul(d.gate, fx);
    } else {
        d.gate = t.constant(Tensor::full(t.value(fx).rows(), cfg_.feature_dim, 1.0));
        d.fc = fx;
    }
    d.fs = t.sub(fx, d.fc);
    return d;
}

ad::Value Model::head_logits(ad::Tape& t, ad::Value features, const Bound& p, Head head) const {
    switch (head) {
        case Head::Task:
            return t.add(t.matmul(features, p.at("head.task.w")), p.at("head.task.b"));
        case Head::Bias:
            return t.add(t.matmul(features, p.at("head.bias.w")), p.at("head.bias.b"));
        case Head::Aux:
            return t.add(t.matmul(features, p.at("head.aux.w")), p.at("head.aux.b"));
    }
    throw std::invalid_argument("head_logits: unknown head tag");
}

ad::Value Model::predict(ad::Tape& t, ad::Value x, const Bound& p, Head head) const {
    const Decoupled d = encode(t, x, p);
    return head_logits(t, head == Head::Bias ? d.fs : d.fc, p, head);
}

Tensor Model::eval_logits(const ParamSet& params, const Tensor& x, Head head) const {
    ad::Tape t;
    const Bound b = bind_const(t, params);
    return t.value(predict(t, t.constant(x), b, head));
}

Tensor Model::eval_gate(const ParamSet& params, const Tensor& x) const {
    ad::Tape t;
    const Bound b = bind_const(t, params);
    return t.value(encode(t, t.constant(x), b).gate);
}

Tensor Model::eval_fs(const ParamSet& params, const Tensor& x) const {
    ad::Tape t;
    const Bound b = bind_const(t, params);
    return t.value(encode(t, t.constant(x), b).fs);
}

Tensor Model::eval_fx(const ParamSet& params, const Tensor& x) const {
    ad::Tape t;
    const Bound b = bind_const(t, params);
    return t.value(encode(t, t.constant(x), b).fx);
}

// ---------------------------------------------------------------------------
// checkpoint I/O; plain text, bit-exact round trip via %.17g

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    std::ofstream out(path);
    if (!out) throw IoError("save_checkpoint: cannot open " + path);
    out << "bmcl-checkpoint 1\n";
    out << "model " << ck.model.input_dim << " " << ck.model.hidden_dim << " "
        << ck.model.hidden_layers << " " << ck.model.feature_dim << " "
        << ck.model.num_classes << " " << (ck.model.use_gate ? 1 : 0) << "\n";
    out << "dataset_hash " << std::hex << ck.dataset_hash << std::dec << "\n";
    out << "params " << ck.params.size() << "\n";
    for (const auto& [name, t] : ck.params.items) {
        out << name << " " << t.rows() << " " << t.cols() << "\n";
        for (std::size_t i = 0; i < t.size(); ++i)
            out << fmt_double(t[i]) << (i + 1 == t.size() ? "" : " ");
        out << "\n";
    }
    if (!out) throw IoError("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("load_checkpoint: cannot open " + path);
    std::string magic;
    int version = 0;
    in >> magic >> version;
    if (magic != "bmcl-checkpoint" || version != 1)
        throw IoError("load_checkpoint: bad header in " + path);

    Checkpoint ck;
    std::string key;
    int gate = 0;
    in >> key >> ck.model.input_dim >> ck.model.hidden_dim >> ck.model.hidden_layers >>
        ck.model.feature_dim >> ck.model.num_classes >> gate;
    if (key != "model") throw IoError("load_checkpoint: expected model line");
    ck.model.use_gate = gate != 0;
    in >> key >> std::hex >> ck.dataset_hash >> std::dec;
    if (key != "dataset_hash") throw IoError("load_checkpoint: expected dataset_hash");
    std::size_t n = 0;
    in >> key >> n;
    if (key != "params") throw IoError("load_checkpoint: expected params count");
    for (std::size_t i = 0; i < n; ++i) {
        std::string name;
        int rows = 0, cols = 0;
        in >> name >> rows >> cols;
        Tensor t(rows, cols);
        for (std::size_t j = 0; j < t.size(); ++j) in >> t[j];
        ck.params.add(name, std::move(t));
    }
    if (!in) throw IoError("load_checkpoint: truncated file " + path);
    return ck;
}

}  // namespace bmcl
