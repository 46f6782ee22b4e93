// Copyright (c) 2026 the famsec authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <chrono>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "famsec/data.hpp"
#include "famsec/inference.hpp"
#include "famsec/plot.hpp"
#include "famsec/trainer.hpp"
#include "famsec/tsne.hpp"
#include "famsec/vit.hpp"

namespace famsec {

// ---------------------------------------------------------------------------
// Accuracy reports
// ---------------------------------------------------------------------------

struct SourceAccuracy {
    std::string source;
    std::size_t correct = 0;
    std::size_t total = 0;
    double accuracy = 0;
};

struct EvalReport {
    std::vector<SourceAccuracy> per_source;          // sorted by source name
    std::map<std::string, double> per_dataset;       // mean over member sources
    double overall = 0;                              // uniform mean over sources
    std::vector<std::string> warnings;
    std::string timestamp;                           // excluded from report.csv
};

inline std::string now_iso8601() {
    auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char buf[32];
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// Fold (entry, prediction) pairs into per-source accuracies. `dataset_of`
// optionally groups sources into datasets for the per-dataset means.
inline EvalReport summarize(const std::vector<ManifestEntry>& entries,
                            const std::vector<int>& predicted_labels,
                            const std::map<std::string, std::string>& dataset_of = {}) {
    FAMSEC_REQUIRE(entries.size() == predicted_labels.size(), contract_error,
                   "summarize: one prediction per entry required");
    std::map<std::string, SourceAccuracy> acc;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        auto& a = acc[entries[i].source];
        a.source = entries[i].source;
        a.total += 1;
        a.correct += predicted_labels[i] == entries[i].label;
    }
    EvalReport report;
    report.timestamp = now_iso8601();
    std::map<std::string, std::pair<double, int>> dataset_sums;
    for (auto& [name, a] : acc) {
        if (a.total == 0) {
            report.warnings.push_back("source '" + name + "' has no evaluable images; excluded");
            continue;
        }
        a.accuracy = double(a.correct) / double(a.total);
        report.per_source.push_back(a);
        auto it = dataset_of.find(name);
        std::string ds = it == dataset_of.end() ? name : it->second;
        dataset_sums[ds].first += a.accuracy;
        dataset_sums[ds].second += 1;
    }
    FAMSEC_REQUIRE(!report.per_source.empty(), config_error, "summarize: nothing to report");
    double sum = 0;
    for (const auto& a : report.per_source) sum += a.accuracy;
    report.overall = sum / double(report.per_source.size());
    for (const auto& [ds, s] : dataset_sums) report.per_dataset[ds] = s.first / s.second;
    return report;
}

// Classify every image of the test split (optionally restricted to sources)
// and report accuracies.
template <typename T>
EvalReport evaluate(const Encoder<T>& enc, const std::type_identity_t<AdapterSet<T>>* adapters,
                    const ReferenceBank<T>& bank, const DatasetManifest& manifest,
                    const std::vector<std::string>& sources = {}, int threads = 2,
                    std::vector<std::pair<std::string, Verdict>>* verdicts_out = nullptr) {
    auto entries = manifest.select("test", sources);
    FAMSEC_REQUIRE(!entries.empty(), config_error, "evaluate: empty test selection");
    const std::string fp = adapters ? fingerprint(enc, *adapters) : fingerprint(enc);
    FAMSEC_REQUIRE(bank.fingerprint == fp, contract_error,
                   "evaluate: bank fingerprint does not match extractor");

    const int n = int(entries.size());
    std::vector<Verdict> verdicts(entries.size());
    threads = std::max(1, std::min(threads, n));
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t)
        pool.emplace_back([&, t]() {
            try {
                for (int i = t; i < n; i += threads) {
                    Image img = png::read_file(entries[std::size_t(i)].path);
                    Image in = eval_crop(img, enc.spec().image_size);
                    auto e = encode_image(enc, adapters, in);
                    verdicts[std::size_t(i)] = classify_embedding(e, bank);
                }
            } catch (...) {
                errors[std::size_t(t)] = std::current_exception();
            }
        });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);

    std::vector<int> predicted;
    predicted.reserve(entries.size());
    for (const auto& v : verdicts) predicted.push_back(v.fake ? 0 : 1);
    if (verdicts_out) {
        verdicts_out->clear();
        for (std::size_t i = 0; i < entries.size(); ++i)
            verdicts_out->emplace_back(entries[i].path, verdicts[i]);
    }
    return summarize(entries, predicted);
}

// report.csv carries no timestamp so byte-level determinism holds; the
// timestamp lives in report.txt.
inline void write_report_csv(const fs::path& path, const EvalReport& report) {
    std::string out = "scope,name,correct,total,accuracy\n";
    for (const auto& a : report.per_source)
        out += "source," + a.source + "," + std::to_string(a.correct) + "," +
               std::to_string(a.total) + "," + csv_num(a.accuracy) + "\n";
    for (const auto& [ds, acc] : report.per_dataset)
        out += "dataset," + ds + ",,," + csv_num(acc) + "\n";
    out += "overall,avg,,," + csv_num(report.overall) + "\n";
    write_text_file(path, out);
}

inline void write_report_text(const fs::path& path, const EvalReport& report,
                              const std::string& config_snapshot) {
    std::string out = "evaluation report\ntimestamp: " + report.timestamp + "\n\n";
    for (const auto& a : report.per_source) {
        char line[160];
        std::snprintf(line, sizeof(line), "  %-16s %5zu/%-5zu  acc %.4f\n", a.source.c_str(),
                      a.correct, a.total, a.accuracy);
        out += line;
    }
    char avg[64];
    std::snprintf(avg, sizeof(avg), "\n  overall average: %.4f\n", report.overall);
    out += avg;
    for (const auto& w : report.warnings) out += "warning: " + w + "\n";
    if (!config_snapshot.empty()) out += "\nconfig:\n" + config_snapshot;
    write_text_file(path, out);
}

// ---------------------------------------------------------------------------
// One full train + bank + evaluate cycle
// ---------------------------------------------------------------------------

template <typename T>
struct PipelineConfig {
    EncoderSpec spec = EncoderSpec::toy();
    std::string encoder_weights;  // optional pretrained base; empty = seed init
    FamConfig fam;
    TrainerConfig<T> trainer;
    std::vector<std::string> train_sources;  // empty = every train source
    std::size_t train_subset = 0;            // 0 = all samples
    int bank_k = 1;
    BankAggregation bank_agg = BankAggregation::single;
    std::uint64_t bank_seed = 0;
    int eval_threads = 2;
};

template <typename T>
struct PipelineResult {
    EncoderPair<T> pair;
    std::vector<LossPoint> history;
    ReferenceBank<T> bank;
    EvalReport report;
};

template <typename T>
PipelineResult<T> run_pipeline(const PipelineConfig<T>& cfg, const DatasetManifest& manifest) {
    LoadedDataset train_data = load_images(manifest, "train", cfg.train_sources);
    FAMSEC_REQUIRE(!train_data.items.empty(), config_error, "pipeline: no training images");
    if (cfg.train_subset > 0 && cfg.train_subset < train_data.items.size()) {
        auto keep = sample_subset(train_data.labels(), cfg.train_subset,
                                  mix_seed(cfg.trainer.seed, 0x5b5eULL));
        LoadedDataset sub;
        for (auto i : keep) sub.items.push_back(train_data.items[i]);
        train_data = std::move(sub);
    }

    PipelineResult<T> result;
    Encoder<T> base = cfg.encoder_weights.empty()
                          ? build_encoder<T>(cfg.spec, cfg.trainer.seed)
                          : attach_pretrained<T>(cfg.encoder_weights, cfg.spec);
    result.pair = EncoderPair<T>::from_base(std::move(base), cfg.trainer.seed, cfg.fam,
                                            cfg.trainer.fam_on,
                                            /*share_base=*/cfg.trainer.fam_on);
    {
        Trainer<T> trainer(result.pair, cfg.trainer);
        result.history = train(trainer, train_data);
    }
    const AdapterSet<T>* adapters = cfg.trainer.fam_on ? &result.pair.adapters : nullptr;
    result.bank = build_bank<T>(train_data, result.pair.extractor, adapters, cfg.bank_k,
                                cfg.bank_agg, mix_seed(cfg.trainer.seed, cfg.bank_seed));
    result.report = evaluate<T>(result.pair.extractor, adapters, result.bank, manifest, {},
                                cfg.eval_threads);
    return result;
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

enum class SweepAxis { rank, blocks, samples, components };

inline const char* to_string(SweepAxis a) {
    switch (a) {
        case SweepAxis::rank: return "rank";
        case SweepAxis::blocks: return "blocks";
        case SweepAxis::samples: return "samples";
        case SweepAxis::components: return "components";
    }
    return "?";
}

inline std::optional<SweepAxis> sweep_axis_from_string(const std::string& s) {
    if (s == "rank") return SweepAxis::rank;
    if (s == "blocks") return SweepAxis::blocks;
    if (s == "samples") return SweepAxis::samples;
    if (s == "components") return SweepAxis::components;
    return std::nullopt;
}

struct SweepCell {
    std::string value;
    bool ok = false;
    std::string error;
    EvalReport report;
};

// The ablation grid: component cells map onto (fam on/off, objective).
// "none" is the fully fine-tuned classification baseline.
template <typename T>
void apply_axis_value(PipelineConfig<T>& cfg, SweepAxis axis, const std::string& value) {
    switch (axis) {
        case SweepAxis::rank:
            cfg.fam.rank = std::stoi(value);
            break;
        case SweepAxis::blocks:
            cfg.fam.adapted_block_count = std::stoi(value);
            break;
        case SweepAxis::samples:
            cfg.train_subset = std::size_t(std::stoul(value));
            break;
        case SweepAxis::components: {
            if (value == "none") {
                cfg.trainer.fam_on = false;
                cfg.trainer.objective = TrainObjective::classification;
            } else if (value == "fam") {
                cfg.trainer.fam_on = true;
                cfg.trainer.objective = TrainObjective::classification;
            } else if (value == "sec") {
                cfg.trainer.fam_on = false;
                cfg.trainer.objective = TrainObjective::contrastive;
            } else if (value == "fam+sec") {
                cfg.trainer.fam_on = true;
                cfg.trainer.objective = TrainObjective::contrastive;
            } else {
                throw config_error("unknown components cell '" + value +
                                   "' (expected none|fam|sec|fam+sec)");
            }
            break;
        }
    }
}

// One full train+eval cycle per axis value; seeds and everything else come
// from the base config. A failed cell is recorded and the sweep continues.
template <typename T>
std::vector<SweepCell> run_sweep(SweepAxis axis, const std::vector<std::string>& values,
                                 const PipelineConfig<T>& base, const DatasetManifest& manifest) {
    FAMSEC_REQUIRE(!values.empty(), config_error, "sweep: no axis values");
    std::vector<SweepCell> cells;
    for (const auto& value : values) {
        SweepCell cell;
        cell.value = value;
        try {
            PipelineConfig<T> cfg = base;
            apply_axis_value(cfg, axis, value);
            if (axis == SweepAxis::rank || axis == SweepAxis::blocks) cfg.fam.validate();
            auto result = run_pipeline(cfg, manifest);
            cell.report = std::move(result.report);
            cell.ok = true;
        } catch (const std::exception& e) {
            cell.ok = false;
            cell.error = e.what();
        }
        cells.push_back(std::move(cell));
    }
    return cells;
}

inline std::vector<std::string> sweep_sources(const std::vector<SweepCell>& cells) {
    std::set<std::string> s;
    for (const auto& c : cells)
        if (c.ok)
            for (const auto& a : c.report.per_source) s.insert(a.source);
    return {s.begin(), s.end()};
}

inline void write_sweep_csv(const fs::path& path, SweepAxis axis,
                            const std::vector<SweepCell>& cells) {
    auto sources = sweep_sources(cells);
    std::string out = std::string(to_string(axis)) + ",status";
    for (const auto& s : sources) out += ",acc_" + s;
    out += ",avg_acc,error\n";
    for (const auto& c : cells) {
        out += c.value;
        out += c.ok ? ",ok" : ",failed";
        for (const auto& s : sources) {
            out += ",";
            if (c.ok) {
                auto it = std::find_if(c.report.per_source.begin(), c.report.per_source.end(),
                                       [&](const SourceAccuracy& a) { return a.source == s; });
                if (it != c.report.per_source.end()) out += csv_num(it->accuracy);
            }
        }
        out += ",";
        if (c.ok) out += csv_num(c.report.overall);
        out += ",";
        std::string err = c.error;
        std::replace(err.begin(), err.end(), ',', ';');
        std::replace(err.begin(), err.end(), '\n', ' ');
        out += err;
        out += "\n";
    }
    write_text_file(path, out);
}

// Sample-size sweep: train with increasing sample budgets, emit curve.csv and
// a line plot.
template <typename T>
std::vector<SweepCell> sample_size_curve(const std::vector<std::size_t>& sizes,
                                         const PipelineConfig<T>& base,
                                         const DatasetManifest& manifest, const fs::path& out_dir) {
    std::vector<std::string> values;
    for (auto s : sizes) values.push_back(std::to_string(s));
    auto cells = run_sweep(SweepAxis::samples, values, base, manifest);

    auto sources = sweep_sources(cells);
    std::string out = "size";
    for (const auto& s : sources) out += ",acc_" + s;
    out += ",avg_acc\n";
    std::vector<double> xs;
    std::vector<std::vector<double>> series(sources.size() + 1);
    for (const auto& c : cells) {
        out += c.value;
        for (std::size_t k = 0; k < sources.size(); ++k) {
            out += ",";
            if (!c.ok) continue;
            auto it = std::find_if(c.report.per_source.begin(), c.report.per_source.end(),
                                   [&](const SourceAccuracy& a) { return a.source == sources[k]; });
            if (it != c.report.per_source.end()) {
                out += csv_num(it->accuracy);
                if (c.ok) series[k].push_back(it->accuracy);
            }
        }
        out += ",";
        if (c.ok) {
            out += csv_num(c.report.overall);
            xs.push_back(std::stod(c.value));
            series.back().push_back(c.report.overall);
        }
        out += "\n";
    }
    write_text_file(out_dir / "curve.csv", out);
    plot::lines(out_dir / "curve.png", xs, series);
    return cells;
}

// ---------------------------------------------------------------------------
// t-SNE artifact
// ---------------------------------------------------------------------------

// Canonical visualization groups; odd ids are fakes.
enum : int {
    kGroupSeenReal = 0,
    kGroupSeenFake = 1,
    kGroupUnseenReal = 2,
    kGroupUnseenFake = 3,
};

inline const char* tsne_group_name(int g) {
    switch (g) {
        case kGroupSeenReal: return "seen-real";
        case kGroupSeenFake: return "seen-fake";
        case kGroupUnseenReal: return "unseen-real";
        case kGroupUnseenFake: return "unseen-fake";
    }
    return "?";
}

template <typename T>
struct TsneArtifacts {
    Matrix<T> coords;          // n x 2
    std::vector<int> groups;
    double silhouette_real_fake = 0;
};

// Project grouped embeddings to 2-D, export coordinates (tsne.csv), render
// the scatter (tsne.png), and report the real/fake silhouette on the
// exported coordinates.
template <typename T>
TsneArtifacts<T> tsne_plot(const Matrix<T>& embeddings, const std::vector<int>& groups,
                           double perplexity, std::uint64_t seed, const fs::path& out_dir) {
    const int n = embeddings.rows();
    FAMSEC_REQUIRE(int(groups.size()) == n, contract_error, "tsne_plot: group per embedding");
    FAMSEC_REQUIRE(perplexity < double(n), contract_error,
                   "tsne_plot: perplexity must be below the point count");
    std::map<int, int> group_counts;
    for (int g : groups) group_counts[g]++;
    for (const auto& [g, c] : group_counts)
        FAMSEC_REQUIRE(c >= 4, contract_error,
                       std::string("tsne_plot: group '") + tsne_group_name(g) +
                           "' has fewer than 4 points");

    TsneConfig cfg;
    cfg.perplexity = perplexity;
    cfg.seed = seed;
    TsneArtifacts<T> art;
    art.coords = tsne(embeddings, cfg);
    art.groups = groups;

    std::vector<int> real_fake(groups.size());
    for (std::size_t i = 0; i < groups.size(); ++i) real_fake[i] = groups[i] % 2;
    art.silhouette_real_fake = silhouette(art.coords, real_fake);

    std::string csv = "x,y,group\n";
    for (int i = 0; i < n; ++i)
        csv += csv_num(double(art.coords(i, 0))) + "," + csv_num(double(art.coords(i, 1))) + "," +
               tsne_group_name(groups[std::size_t(i)]) + "\n";
    write_text_file(out_dir / "tsne.csv", csv);
    plot::scatter(out_dir / "tsne.png", art.coords, groups);
    return art;
}

// Gather a seeded, capped sample of test embeddings grouped by
// seen/unseen x real/fake for the visualization.
template <typename T>
std::pair<Matrix<T>, std::vector<int>> collect_tsne_embeddings(
    const DatasetManifest& manifest, const Encoder<T>& enc,
    const std::type_identity_t<AdapterSet<T>>* adapters,
    const std::vector<std::string>& seen_sources, int per_group_cap, std::uint64_t seed,
    int threads = 2) {
    auto entries = manifest.select("test");
    FAMSEC_REQUIRE(!entries.empty(), config_error, "collect_tsne_embeddings: empty test split");
    std::map<int, std::vector<std::size_t>> by_group;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const bool seen = std::find(seen_sources.begin(), seen_sources.end(), entries[i].source) !=
                          seen_sources.end();
        const int group = (seen ? 0 : 2) + (entries[i].label == 0 ? 1 : 0);
        by_group[group].push_back(i);
    }
    Rng rng(mix_seed(seed, 0x75e3ULL));
    std::vector<std::size_t> chosen;
    std::vector<int> groups;
    for (auto& [g, idx] : by_group) {
        rng.shuffle(idx);
        const std::size_t take = std::min(idx.size(), std::size_t(per_group_cap));
        for (std::size_t k = 0; k < take; ++k) {
            chosen.push_back(idx[k]);
            groups.push_back(g);
        }
    }
    Matrix<T> emb(int(chosen.size()), enc.spec().embed_dim);
    const int n = int(chosen.size());
    threads = std::max(1, std::min(threads, n));
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t)
        pool.emplace_back([&, t]() {
            try {
                for (int i = t; i < n; i += threads) {
                    Image img = png::read_file(entries[chosen[std::size_t(i)]].path);
                    auto e = encode_image(enc, adapters, eval_crop(img, enc.spec().image_size));
                    std::copy(e.begin(), e.end(), emb.row(i));
                }
            } catch (...) {
                errors[std::size_t(t)] = std::current_exception();
            }
        });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return {std::move(emb), std::move(groups)};
}

}  // namespace famsec
