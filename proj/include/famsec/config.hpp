// Copyright (c) 2026 the famsec authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "famsec/common.hpp"
#include "famsec/eval.hpp"

namespace famsec {

// Key/value run configuration: the CLI's config-file schema and the snapshot
// format written into every run directory. Flag overrides are merged before
// snapshotting, so a run is reproducible from its snapshot alone.
struct RunConfig {
    std::uint64_t seed = 0;
    std::string data_root;
    std::string out_dir;

    EncoderSpec encoder = EncoderSpec::toy();
    std::string encoder_weights;  // optional pretrained weights file

    bool fam_enabled = true;
    FamConfig fam = default_toy_fam();

    std::string objective = "sec";  // sec | classification
    double lr = 1e-4;
    int batch_size = 16;
    long steps = 1000;
    double tau0 = 0.07;
    bool balance = true;
    int threads = 0;
    long checkpoint_every = 0;
    std::vector<std::string> train_sources;
    std::size_t train_subset = 0;

    int bank_k = 1;
    std::string bank_aggregation = "single";  // single | mean_centroid
    std::uint64_t bank_seed = 0;

    int eval_threads = 2;

    static FamConfig default_toy_fam() {
        FamConfig f;
        f.adapted_block_count = 2;  // matches the toy encoder's depth of 4
        return f;
    }

    void validate() const {
        encoder.validate();
        if (fam_enabled) fam.validate();
        FAMSEC_REQUIRE(objective == "sec" || objective == "classification", config_error,
                       "train.objective must be 'sec' or 'classification'");
        FAMSEC_REQUIRE(bank_aggregation == "single" || bank_aggregation == "mean_centroid",
                       config_error, "bank.aggregation must be 'single' or 'mean_centroid'");
        FAMSEC_REQUIRE(lr > 0, config_error, "train.lr must be positive");
        FAMSEC_REQUIRE(batch_size >= 2, config_error, "train.batch_size must be >= 2");
        FAMSEC_REQUIRE(steps >= 0, config_error, "train.steps must be >= 0");
        FAMSEC_REQUIRE(tau0 > 0, config_error, "train.tau0 must be positive");
        FAMSEC_REQUIRE(bank_k >= 1, config_error, "bank.k must be >= 1");
        if (fam_enabled)
            FAMSEC_REQUIRE(fam.adapted_block_count <= encoder.depth, config_error,
                           "fam.blocks exceeds encoder depth");
    }

    PipelineConfig<double> to_pipeline() const {
        validate();
        PipelineConfig<double> p;
        p.spec = encoder;
        p.encoder_weights = encoder_weights;
        p.fam = fam;
        p.trainer.adam.lr = lr;
        p.trainer.batch_size = batch_size;
        p.trainer.steps = steps;
        p.trainer.seed = seed;
        p.trainer.tau0 = tau0;
        p.trainer.balance = balance;
        p.trainer.threads = threads;
        p.trainer.fam_on = fam_enabled;
        p.trainer.objective =
            objective == "sec" ? TrainObjective::contrastive : TrainObjective::classification;
        p.train_sources = train_sources;
        p.train_subset = train_subset;
        p.bank_k = bank_k;
        p.bank_agg = bank_aggregation == "single" ? BankAggregation::single
                                                  : BankAggregation::mean_centroid;
        p.bank_seed = bank_seed;
        p.eval_threads = eval_threads;
        return p;
    }
};

namespace configdetail {

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else if (!std::isspace(static_cast<unsigned char>(c))) {
            cur += c;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

inline std::string join_list(const std::vector<std::string>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + v[i];
    return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "on") return true;
    if (v == "false" || v == "0" || v == "off") return false;
    throw config_error("config: field '" + key + "' expects a boolean, got '" + v + "'");
}

template <typename T>
T parse_num(const std::string& key, const std::string& v) {
    std::istringstream ss(v);
    T out;
    ss >> out;
    if (ss.fail() || !ss.eof())
        throw config_error("config: field '" + key + "' has invalid value '" + v + "'");
    return out;
}

}  // namespace configdetail

inline void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value) {
    using namespace configdetail;
    if (key == "seed") cfg.seed = parse_num<std::uint64_t>(key, value);
    else if (key == "data.root") cfg.data_root = value;
    else if (key == "out.dir") cfg.out_dir = value;
    else if (key == "encoder.image_size") cfg.encoder.image_size = parse_num<int>(key, value);
    else if (key == "encoder.patch_size") cfg.encoder.patch_size = parse_num<int>(key, value);
    else if (key == "encoder.depth") cfg.encoder.depth = parse_num<int>(key, value);
    else if (key == "encoder.width") cfg.encoder.width = parse_num<int>(key, value);
    else if (key == "encoder.heads") cfg.encoder.heads = parse_num<int>(key, value);
    else if (key == "encoder.embed_dim") cfg.encoder.embed_dim = parse_num<int>(key, value);
    else if (key == "encoder.pooling") {
        if (value == "class_token") cfg.encoder.pooling = Pooling::class_token;
        else if (value == "mean_pool") cfg.encoder.pooling = Pooling::mean_pool;
        else throw config_error("config: encoder.pooling must be class_token or mean_pool");
    }
    else if (key == "encoder.weights") cfg.encoder_weights = value;
    else if (key == "fam.enabled") cfg.fam_enabled = parse_bool(key, value);
    else if (key == "fam.rank") cfg.fam.rank = parse_num<int>(key, value);
    else if (key == "fam.dropout") cfg.fam.dropout_p = parse_num<double>(key, value);
    else if (key == "fam.blocks") cfg.fam.adapted_block_count = parse_num<int>(key, value);
    else if (key == "fam.scale") cfg.fam.scale = parse_num<double>(key, value);
    else if (key == "fam.projections") {
        cfg.fam.projections.clear();
        for (const auto& p : split_list(value)) {
            auto proj = projection_from_string(p);
            if (!proj) throw config_error("config: unknown projection '" + p + "'");
            cfg.fam.projections.insert(*proj);
        }
    }
    else if (key == "train.objective") cfg.objective = value;
    else if (key == "train.lr") cfg.lr = parse_num<double>(key, value);
    else if (key == "train.batch_size") cfg.batch_size = parse_num<int>(key, value);
    else if (key == "train.steps") cfg.steps = parse_num<long>(key, value);
    else if (key == "train.tau0") cfg.tau0 = parse_num<double>(key, value);
    else if (key == "train.balance") cfg.balance = parse_bool(key, value);
    else if (key == "train.threads") cfg.threads = parse_num<int>(key, value);
    else if (key == "train.checkpoint_every") cfg.checkpoint_every = parse_num<long>(key, value);
    else if (key == "train.sources") cfg.train_sources = split_list(value);
    else if (key == "train.subset") cfg.train_subset = parse_num<std::size_t>(key, value);
    else if (key == "bank.k") cfg.bank_k = parse_num<int>(key, value);
    else if (key == "bank.aggregation") cfg.bank_aggregation = value;
    else if (key == "bank.seed") cfg.bank_seed = parse_num<std::uint64_t>(key, value);
    else if (key == "eval.threads") cfg.eval_threads = parse_num<int>(key, value);
    else throw config_error("config: unknown key '" + key + "'");
}

// Parse `key = value` lines; '#' starts a comment.
inline RunConfig parse_config(const std::string& text, RunConfig base = {}) {
    std::istringstream ss(text);
    std::string line;
    int line_no = 0;
    while (std::getline(ss, line)) {
        ++line_no;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        auto trim = [](std::string s) {
            auto b = s.find_first_not_of(" \t\r");
            auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw config_error("config: line " + std::to_string(line_no) +
                               " is not a key = value pair: '" + line + "'");
        apply_config_entry(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return base;
}

inline RunConfig load_config(const fs::path& path, RunConfig base = {}) {
    if (!fs::exists(path)) throw config_error("config file not found: " + path.string());
    return parse_config(read_text_file(path), base);
}

// Serialize every field, sorted by key. parse_config(serialize(cfg)) == cfg.
inline std::string serialize_config(const RunConfig& cfg) {
    using namespace configdetail;
    std::map<std::string, std::string> kv;
    kv["seed"] = std::to_string(cfg.seed);
    kv["data.root"] = cfg.data_root;
    kv["out.dir"] = cfg.out_dir;
    kv["encoder.image_size"] = std::to_string(cfg.encoder.image_size);
    kv["encoder.patch_size"] = std::to_string(cfg.encoder.patch_size);
    kv["encoder.depth"] = std::to_string(cfg.encoder.depth);
    kv["encoder.width"] = std::to_string(cfg.encoder.width);
    kv["encoder.heads"] = std::to_string(cfg.encoder.heads);
    kv["encoder.embed_dim"] = std::to_string(cfg.encoder.embed_dim);
    kv["encoder.pooling"] = to_string(cfg.encoder.pooling);
    kv["encoder.weights"] = cfg.encoder_weights;
    kv["fam.enabled"] = cfg.fam_enabled ? "true" : "false";
    kv["fam.rank"] = std::to_string(cfg.fam.rank);
    kv["fam.dropout"] = csv_num(cfg.fam.dropout_p);
    kv["fam.blocks"] = std::to_string(cfg.fam.adapted_block_count);
    kv["fam.scale"] = csv_num(cfg.fam.scale);
    {
        std::vector<std::string> projs;
        for (auto p : cfg.fam.projections) projs.push_back(to_string(p));
        kv["fam.projections"] = join_list(projs);
    }
    kv["train.objective"] = cfg.objective;
    kv["train.lr"] = csv_num(cfg.lr);
    kv["train.batch_size"] = std::to_string(cfg.batch_size);
    kv["train.steps"] = std::to_string(cfg.steps);
    kv["train.tau0"] = csv_num(cfg.tau0);
    kv["train.balance"] = cfg.balance ? "true" : "false";
    kv["train.threads"] = std::to_string(cfg.threads);
    kv["train.checkpoint_every"] = std::to_string(cfg.checkpoint_every);
    kv["train.sources"] = join_list(cfg.train_sources);
    kv["train.subset"] = std::to_string(cfg.train_subset);
    kv["bank.k"] = std::to_string(cfg.bank_k);
    kv["bank.aggregation"] = cfg.bank_aggregation;
    kv["bank.seed"] = std::to_string(cfg.bank_seed);
    kv["eval.threads"] = std::to_string(cfg.eval_threads);

    std::string out;
    for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
    return out;
}

}  // namespace famsec
