// Copyright (c) 2026 the bmcl authors
// SPDX-License-Identifier: Apache-2.0
#include "bmcl/synthdata.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "bmcl/errors.hpp"
#include "bmcl/rng.hpp"

namespace bmcl::synth {

namespace {

std::string fmt_double(double x) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

// Unit-norm random direction on dims [off, off+len), scaled.
void fill_prototype(Tensor& row_out, int row, int off, int len, double scale, DetRng& rng) {
    double norm_sq = 0.0;
    std::vector<double> v(static_cast<std::size_t>(len));
    for (int j = 0; j < len; ++j) {
        v[static_cast<std::size_t>(j)] = rng.normal();
        norm_sq += v[static_cast<std::size_t>(j)] * v[static_cast<std::size_t>(j)];
    }
    const double k = scale / std::sqrt(norm_sq);
    for (int j = 0; j < len; ++j) row_out.at(row, off + j) = k * v[static_cast<std::size_t>(j)];
}

}  // namespace

void GenConfig::validate() const {
    if (num_classes < 2) throw ConfigError("gen: num_classes must be >= 2");
    if (train_contexts < 1 || test_contexts < 0)
        throw ConfigError("gen: context counts must be positive");
    if (zero_shot && test_contexts < 1)
        throw ConfigError("gen: zero-shot mode needs held-out contexts");
    if (feature_dim < 1 || class_dims < 1 || context_dims < 1)
        throw ConfigError("gen: dimensions must be positive");
    if (class_dims + context_dims > feature_dim)
        throw ConfigError("gen: class_dims + context_dims exceeds feature_dim");
    const double lo = 1.0 / train_contexts;
    if (rho < lo - 1e-12 || rho > 1.0 + 1e-12)
        throw ConfigError("gen: rho must lie in [1/train_contexts, 1], got " +
                          std::to_string(rho));
    if (sigma < 0.0) throw ConfigError("gen: sigma must be >= 0");
    if (n_train < 1 || n_val < 1 || n_test < 1)
        throw ConfigError("gen: sample counts must be positive");
    if (class_scale <= 0.0 || context_scale <= 0.0)
        throw ConfigError("gen: prototype scales must be positive");
}

std::string GenConfig::canonical() const {
    std::ostringstream os;
    os << "gen;C=" << num_classes << ";Etr=" << train_contexts << ";Ete=" << test_contexts
       << ";d=" << feature_dim << ";dc=" << class_dims << ";ds=" << context_dims
       << ";rho=" << fmt_double(rho) << ";sigma=" << fmt_double(sigma)
       << ";cs=" << fmt_double(class_scale) << ";xs=" << fmt_double(context_scale)
       << ";ntr=" << n_train << ";nva=" << n_val << ";nte=" << n_test
       << ";zs=" << (zero_shot ? 1 : 0) << ";seed=" << seed;
    return os.str();
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t GenConfig::hash() const { return fnv1a(canonical()); }

Sample Dataset::get(std::size_t i) const {
    Sample s;
    s.features.assign(features.data() + i * features.cols(),
                      features.data() + (i + 1) * features.cols());
    s.class_label = labels[i];
    s.context_label = contexts[i];
    return s;
}

Tensor Dataset::one_hot_labels() const {
    Tensor t(static_cast<int>(size()), num_classes);
    for (std::size_t i = 0; i < size(); ++i) t.at(static_cast<int>(i), labels[i]) = 1.0;
    return t;
}

Prototypes prototypes(const GenConfig& cfg) {
    DetRng rng(DetRng::derive(cfg.seed, 0));
    Prototypes p;
    p.class_protos = Tensor(cfg.num_classes, cfg.feature_dim);
    for (int c = 0; c < cfg.num_classes; ++c)
        fill_prototype(p.class_protos, c, 0, cfg.class_dims, cfg.class_scale, rng);
    const int total_ctx = cfg.train_contexts + cfg.test_contexts;
    p.context_protos = Tensor(total_ctx, cfg.feature_dim);
    for (int e = 0; e < total_ctx; ++e)
        fill_prototype(p.context_protos, e, cfg.class_dims, cfg.context_dims,
                       cfg.context_scale, rng);
    return p;
}

namespace {

Dataset make_split(const GenConfig& cfg, const Prototypes& proto, const std::string& role,
                   int n, std::uint64_t stream) {
    DetRng rng(DetRng::derive(cfg.seed, stream));
    const bool is_test = role == "test";
    const int d = cfg.feature_dim;

    Dataset ds;
    ds.role = role;
    ds.features = Tensor(n, d);
    ds.labels.resize(static_cast<std::size_t>(n));
    ds.contexts.resize(static_cast<std::size_t>(n));
    ds.num_classes = cfg.num_classes;
    ds.num_contexts = cfg.train_contexts + cfg.test_contexts;
    ds.config_hash = cfg.hash();

    // Round-robin class assignment keeps per-class counts within one of each
    // other; the sample order is shuffled afterwards.
    const std::vector<int> order = rng.permutation(n);
    for (int slot = 0; slot < n; ++slot) {
        const int i = order[static_cast<std::size_t>(slot)];
        const int y = slot % cfg.num_classes;
        int e;
        if (is_test && cfg.zero_shot) {
            e = cfg.train_contexts + rng.uniform_int(0, cfg.test_contexts - 1);
        } else {
            const int linked = y % cfg.train_contexts;
            e = rng.uniform01() < cfg.rho ? linked : rng.uniform_int(0, cfg.train_contexts - 1);
        }
        ds.labels[static_cast<std::size_t>(i)] = y;
        ds.contexts[static_cast<std::size_t>(i)] = e;
        for (int j = 0; j < d; ++j)
            ds.features.at(i, j) = proto.class_protos.at(y, j) +
                                   proto.context_protos.at(e, j) + cfg.sigma * rng.normal();
    }
    return ds;
}

}  // namespace

DataBundle generate(const GenConfig& cfg) {
    cfg.validate();
    const Prototypes proto = prototypes(cfg);
    DataBundle b;
    b.train = make_split(cfg, proto, "train", cfg.n_train, 1);
    b.val = make_split(cfg, proto, "val", cfg.n_val, 2);
    b.test = make_split(cfg, proto, "test", cfg.n_test, 3);
    return b;
}

std::vector<std::vector<long>> context_histogram(const Dataset& ds) {
    if (ds.size() == 0) throw std::invalid_argument("context_histogram: empty dataset");
    std::vector<std::vector<long>> counts(
        static_cast<std::size_t>(ds.num_classes),
        std::vector<long>(static_cast<std::size_t>(ds.num_contexts), 0));
    for (std::size_t i = 0; i < ds.size(); ++i)
        ++counts[static_cast<std::size_t>(ds.labels[i])]
                [static_cast<std::size_t>(ds.contexts[i])];
    return counts;
}

void save_dataset(const std::string& path, const Dataset& ds) {
    std::ofstream out(path);
    if (!out) throw IoError("save_dataset: cannot open " + path);
    out << "bmcl-dataset 1\n";
    out << "role " << ds.role << "\n";
    out << "config_hash " << std::hex << ds.config_hash << std::dec << "\n";
    out << "classes " << ds.num_classes << " contexts " << ds.num_contexts << " dim "
        << ds.features.cols() << "\n";
    out << "count " << ds.size() << "\n";
    // One sample per row: context, class, then the feature values.
    for (std::size_t i = 0; i < ds.size(); ++i) {
        out << ds.contexts[i] << " " << ds.labels[i];
        for (int j = 0; j < ds.features.cols(); ++j)
            out << " " << fmt_double(ds.features.at(static_cast<int>(i), j));
        out << "\n";
    }
    if (!out) throw IoError("save_dataset: write failed for " + path);
}

Dataset load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("load_dataset: cannot open " + path);
    std::string magic;
    int version = 0;
    in >> magic >> version;
    if (magic != "bmcl-dataset" || version != 1)
        throw IoError("load_dataset: bad header in " + path);

    Dataset ds;
    std::string key;
    in >> key >> ds.role;
    if (key != "role") throw IoError("load_dataset: expected role in " + path);
    in >> key >> std::hex >> ds.config_hash >> std::dec;
    if (key != "config_hash") throw IoError("load_dataset: expected config_hash");
    std::string k2, k3;
    int dim = 0;
    in >> key >> ds.num_classes >> k2 >> ds.num_contexts >> k3 >> dim;
    if (key != "classes" || k2 != "contexts" || k3 != "dim")
        throw IoError("load_dataset: bad shape line");
    std::size_t count = 0;
    in >> key >> count;
    if (key != "count") throw IoError("load_dataset: expected count");

    ds.features = Tensor(static_cast<int>(count), dim);
    ds.labels.resize(count);
    ds.contexts.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        in >> ds.contexts[i] >> ds.labels[i];
        for (int j = 0; j < dim; ++j) in >> ds.features.at(static_cast<int>(i), j);
    }
    if (!in) throw IoError("load_dataset: truncated file " + path);
    return ds;
}

}  // namespace bmcl::synth
