// Copyright (c) 2026 the famsec authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "famsec/eval.hpp"

using namespace famsec;
namespace stdfs = std::filesystem;

namespace {

struct TempDir {
    stdfs::path path;
    explicit TempDir(const std::string& name) : path(stdfs::temp_directory_path() / name) {
        stdfs::remove_all(path);
        stdfs::create_directories(path);
    }
    ~TempDir() { stdfs::remove_all(path); }
};

std::vector<ManifestEntry> fake_entries(const std::string& source, int n_real, int n_fake) {
    std::vector<ManifestEntry> out;
    for (int i = 0; i < n_real; ++i) out.push_back({"r" + std::to_string(i), "test", source, 1});
    for (int i = 0; i < n_fake; ++i) out.push_back({"f" + std::to_string(i), "test", source, 0});
    return out;
}

PipelineConfig<double> tiny_pipeline(std::uint64_t seed) {
    PipelineConfig<double> cfg;
    cfg.spec = EncoderSpec::toy();
    cfg.fam.rank = 2;
    cfg.fam.adapted_block_count = 2;
    cfg.trainer.steps = 3;
    cfg.trainer.batch_size = 4;
    cfg.trainer.seed = seed;
    cfg.trainer.threads = 2;
    cfg.eval_threads = 2;
    return cfg;
}

}  // namespace

TEST_CASE("summarize: exact accuracies and recomputable averages") {
    auto entries = fake_entries("srcA", 5, 5);
    auto more = fake_entries("srcB", 4, 4);
    entries.insert(entries.end(), more.begin(), more.end());

    std::vector<int> perfect;
    for (const auto& e : entries) perfect.push_back(e.label);
    auto rep = summarize(entries, perfect);
    REQUIRE(rep.per_source.size() == 2);
    CHECK(rep.per_source[0].accuracy == 1.0);
    CHECK(rep.per_source[1].accuracy == 1.0);
    CHECK(rep.overall == 1.0);

    // flip all predictions for srcB
    std::vector<int> mixed = perfect;
    for (std::size_t i = 0; i < entries.size(); ++i)
        if (entries[i].source == "srcB") mixed[i] = 1 - mixed[i];
    rep = summarize(entries, mixed);
    double recomputed = 0;
    for (const auto& a : rep.per_source) {
        CHECK(a.accuracy == doctest::Approx(double(a.correct) / a.total).epsilon(1e-15));
        recomputed += a.accuracy;
    }
    recomputed /= double(rep.per_source.size());
    CHECK(std::abs(rep.overall - recomputed) < 1e-12);
    CHECK(rep.overall == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("summarize: per-dataset grouping averages member sources") {
    auto entries = fake_entries("a1", 4, 4);
    auto e2 = fake_entries("a2", 4, 4);
    auto e3 = fake_entries("b1", 4, 4);
    entries.insert(entries.end(), e2.begin(), e2.end());
    entries.insert(entries.end(), e3.begin(), e3.end());
    std::vector<int> preds;
    for (const auto& e : entries) {
        if (e.source == "a1")
            preds.push_back(e.label);          // 1.0
        else if (e.source == "a2")
            preds.push_back(1 - e.label);      // 0.0
        else
            preds.push_back(e.label);          // 1.0
    }
    auto rep = summarize(entries, preds, {{"a1", "dsA"}, {"a2", "dsA"}, {"b1", "dsB"}});
    CHECK(rep.per_dataset.at("dsA") == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(rep.per_dataset.at("dsB") == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("coin-flip classifier lands near 0.5 within binomial bounds") {
    const int n = 2000;
    auto entries = fake_entries("coin", n / 2, n / 2);
    Rng rng(77);
    std::vector<int> preds;
    for (int i = 0; i < n; ++i) preds.push_back(int(rng.uniform_int(2)));
    auto rep = summarize(entries, preds);
    const double sigma = std::sqrt(0.25 / n);
    CHECK(std::abs(rep.overall - 0.5) < 3 * sigma + 1e-12);
}

TEST_CASE("report csv is deterministic and timestamp-free") {
    auto entries = fake_entries("srcA", 3, 3);
    std::vector<int> preds;
    for (const auto& e : entries) preds.push_back(e.label);
    auto r1 = summarize(entries, preds);
    auto r2 = summarize(entries, preds);
    TempDir tmp("famsec_eval_csv");
    write_report_csv(tmp.path / "r1.csv", r1);
    write_report_csv(tmp.path / "r2.csv", r2);
    CHECK(read_text_file(tmp.path / "r1.csv") == read_text_file(tmp.path / "r2.csv"));
    CHECK(read_text_file(tmp.path / "r1.csv").find("scope,name,correct,total,accuracy") == 0);

    write_report_text(tmp.path / "r1.txt", r1, "k = v\n");
    auto text = read_text_file(tmp.path / "r1.txt");
    CHECK(text.find("timestamp:") != std::string::npos);
}

TEST_CASE("tsne: determinism, contracts, and separation") {
    Rng rng(5);
    const int per = 12;
    Matrix<double> emb(2 * per, 6);
    std::vector<int> labels;
    for (int i = 0; i < 2 * per; ++i) {
        const double center = i < per ? -4.0 : 4.0;
        for (int k = 0; k < 6; ++k) emb(i, k) = center + rng.normal(0.0, 0.3);
        labels.push_back(i < per ? 0 : 1);
    }

    TsneConfig cfg;
    cfg.perplexity = 6;
    cfg.seed = 9;
    auto y1 = tsne(emb, cfg);
    auto y2 = tsne(emb, cfg);
    CHECK(max_abs_diff(y1, y2) == 0.0);

    double s = silhouette(y1, labels);
    CHECK(s > 0.15);  // clearly separated inputs stay separated in 2-D
    auto shuffled = labels;
    Rng srng(123);
    srng.shuffle(shuffled);
    CHECK(s > silhouette(y1, shuffled) + 0.1);  // and far above a label-scrambled baseline

    cfg.perplexity = 2 * per;  // >= point count
    CHECK_THROWS_AS((void)tsne(emb, cfg), contract_error);

    Matrix<double> degenerate(8, 4);
    TsneConfig dc;
    dc.perplexity = 4;
    CHECK_THROWS_AS((void)tsne(degenerate, dc), numeric_error);
}

TEST_CASE("silhouette orders tight vs overlapping clusterings") {
    Rng rng(6);
    const int per = 20;
    Matrix<double> tight(2 * per, 2), loose(2 * per, 2);
    std::vector<int> labels;
    for (int i = 0; i < 2 * per; ++i) {
        const double c = i < per ? -3.0 : 3.0;
        tight(i, 0) = c + rng.normal(0.0, 0.2);
        tight(i, 1) = c + rng.normal(0.0, 0.2);
        loose(i, 0) = rng.normal(0.0, 2.0);
        loose(i, 1) = rng.normal(0.0, 2.0);
        labels.push_back(i < per ? 0 : 1);
    }
    CHECK(silhouette(tight, labels) > silhouette(loose, labels));
    CHECK(silhouette(tight, labels) > 0.8);
}

TEST_CASE("tsne_plot artifact: files, group floor, silhouette field") {
    TempDir tmp("famsec_tsne_plot");
    Rng rng(8);
    const int per = 6;
    Matrix<double> emb(4 * per, 5);
    std::vector<int> groups;
    for (int g = 0; g < 4; ++g)
        for (int i = 0; i < per; ++i) {
            int row = g * per + i;
            const double c = (g % 2 == 0) ? -3.0 : 3.0;  // reals left, fakes right
            for (int k = 0; k < 5; ++k) emb(row, k) = c + rng.normal(0.0, 0.3);
            groups.push_back(g);
        }
    auto art = tsne_plot(emb, groups, 5.0, 11, tmp.path);
    CHECK(stdfs::exists(tmp.path / "tsne.csv"));
    CHECK(stdfs::exists(tmp.path / "tsne.png"));
    CHECK(art.silhouette_real_fake > 0.2);
    auto csv = read_text_file(tmp.path / "tsne.csv");
    CHECK(csv.find("x,y,group") == 0);
    CHECK(csv.find("seen-real") != std::string::npos);
    CHECK(csv.find("unseen-fake") != std::string::npos);

    // a group below the 4-point floor is rejected
    Matrix<double> few(13, 5);
    for (int i = 0; i < 13; ++i)
        for (int k = 0; k < 5; ++k) few(i, k) = rng.normal();
    std::vector<int> bad_groups(13, 0);
    bad_groups[12] = 1;  // singleton-ish group
    CHECK_THROWS_AS((void)tsne_plot(few, bad_groups, 4.0, 1, tmp.path), contract_error);
}

TEST_CASE("rank sweep emits one row per value and tolerates failed cells") {
    TempDir corpus("famsec_eval_corpus");
    SyntheticSpec sspec;
    sspec.image_size = 32;
    sspec.train_count_per_class = 8;
    sspec.test_count_per_class = 4;
    sspec.families = {"A", "B"};
    sspec.holdout_families = {"B"};
    sspec.seed = 13;
    auto manifest = make_synthetic(sspec, corpus.path);

    auto base = tiny_pipeline(21);
    auto cells = run_sweep(SweepAxis::rank, {"1", "2", "999"}, base, manifest);
    REQUIRE(cells.size() == 3);
    CHECK(cells[0].ok);
    CHECK(cells[1].ok);
    CHECK_FALSE(cells[2].ok);  // rank 999 > min(d,k) fails, sweep continues
    CHECK(cells[2].error.find("rank") != std::string::npos);

    TempDir out("famsec_eval_sweepcsv");
    write_sweep_csv(out.path / "sweep.csv", SweepAxis::rank, cells);
    auto csv = read_text_file(out.path / "sweep.csv");
    CHECK(csv.find("rank,status") == 0);
    CHECK(csv.find("acc_synthA") != std::string::npos);
    CHECK(csv.find("999,failed") != std::string::npos);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);  // header + 3 rows
}

TEST_CASE("components axis instantiates the four ablation cells") {
    PipelineConfig<double> cfg = tiny_pipeline(1);
    apply_axis_value(cfg, SweepAxis::components, std::string("none"));
    CHECK_FALSE(cfg.trainer.fam_on);
    CHECK(cfg.trainer.objective == TrainObjective::classification);
    apply_axis_value(cfg, SweepAxis::components, std::string("fam"));
    CHECK(cfg.trainer.fam_on);
    CHECK(cfg.trainer.objective == TrainObjective::classification);
    apply_axis_value(cfg, SweepAxis::components, std::string("sec"));
    CHECK_FALSE(cfg.trainer.fam_on);
    CHECK(cfg.trainer.objective == TrainObjective::contrastive);
    apply_axis_value(cfg, SweepAxis::components, std::string("fam+sec"));
    CHECK(cfg.trainer.fam_on);
    CHECK(cfg.trainer.objective == TrainObjective::contrastive);
    CHECK_THROWS_AS(apply_axis_value(cfg, SweepAxis::components, std::string("bogus")),
                    config_error);
}

TEST_CASE("pipeline produces a full report on the synthetic corpus") {
    TempDir corpus("famsec_eval_pipeline");
    SyntheticSpec sspec;
    sspec.image_size = 32;
    sspec.train_count_per_class = 8;
    sspec.test_count_per_class = 4;
    sspec.families = {"A", "B"};
    sspec.holdout_families = {"B"};
    sspec.seed = 17;
    auto manifest = make_synthetic(sspec, corpus.path);

    auto cfg = tiny_pipeline(31);
    auto result = run_pipeline(cfg, manifest);
    REQUIRE(result.history.size() == 3);
    REQUIRE(result.report.per_source.size() == 2);  // synthA + synthB test sources
    for (const auto& a : result.report.per_source) {
        CHECK(a.total == 8);
        CHECK(a.accuracy >= 0.0);
        CHECK(a.accuracy <= 1.0);
    }
    CHECK(result.bank.real_refs.rows() == 1);

    // determinism across identical pipeline runs
    auto result2 = run_pipeline(cfg, manifest);
    REQUIRE(result2.history.size() == result.history.size());
    for (std::size_t i = 0; i < result.history.size(); ++i)
        CHECK(result.history[i].loss == result2.history[i].loss);
    CHECK(result.report.overall == result2.report.overall);
}

TEST_CASE("sample size curve emits csv and plot") {
    TempDir corpus("famsec_eval_curve");
    SyntheticSpec sspec;
    sspec.image_size = 32;
    sspec.train_count_per_class = 10;
    sspec.test_count_per_class = 4;
    sspec.families = {"A"};
    sspec.seed = 19;
    auto manifest = make_synthetic(sspec, corpus.path);

    TempDir out("famsec_eval_curve_out");
    auto cells = sample_size_curve<double>({8, 12}, tiny_pipeline(41), manifest, out.path);
    REQUIRE(cells.size() == 2);
    CHECK(cells[0].ok);
    CHECK(cells[1].ok);
    auto csv = read_text_file(out.path / "curve.csv");
    CHECK(csv.find("size,") == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
    CHECK(stdfs::exists(out.path / "curve.png"));
}

TEST_CASE("collect_tsne_embeddings groups by seen/unseen and label") {
    TempDir corpus("famsec_eval_collect");
    SyntheticSpec sspec;
    sspec.image_size = 32;
    sspec.train_count_per_class = 4;
    sspec.test_count_per_class = 6;
    sspec.families = {"A", "B"};
    sspec.holdout_families = {"B"};
    sspec.seed = 23;
    auto manifest = make_synthetic(sspec, corpus.path);
    auto enc = build_encoder<double>(EncoderSpec::toy(), 51);

    auto [emb, groups] = collect_tsne_embeddings<double>(manifest, enc, nullptr, {"synthA"}, 5, 3);
    REQUIRE(emb.rows() == int(groups.size()));
    std::map<int, int> counts;
    for (int g : groups) counts[g]++;
    CHECK(counts[kGroupSeenReal] == 5);
    CHECK(counts[kGroupSeenFake] == 5);
    CHECK(counts[kGroupUnseenReal] == 5);
    CHECK(counts[kGroupUnseenFake] == 5);
}
