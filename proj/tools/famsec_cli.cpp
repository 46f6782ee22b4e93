// Copyright (c) 2026 the famsec authors
// SPDX-License-Identifier: Apache-2.0
//
// famsec command-line front end: synth / train / bank / eval / infer /
// ablate / visualize. Every command echoes its effective configuration to
// stderr and is replayable from the config snapshot it writes.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <iostream>
#include <optional>
#include <string>

#include "famsec/famsec.hpp"

using json = nlohmann::json;
using namespace famsec;

namespace {

using Real = double;

struct CommonOpts {
    std::string config_file;
    std::vector<std::string> overrides;  // key=value pairs
    bool json_out = false;
};

RunConfig merged_config(const CommonOpts& common) {
    RunConfig cfg;
    if (!common.config_file.empty()) cfg = load_config(common.config_file, cfg);
    for (const auto& kv : common.overrides) {
        auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw config_error("--set expects key=value, got '" + kv + "'");
        apply_config_entry(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    return cfg;
}

void echo_config(const RunConfig& cfg) {
    std::string s = serialize_config(cfg);
    std::fputs("# effective config\n", stderr);
    std::fputs(s.c_str(), stderr);
}

fs::path resolve_out_dir(const RunConfig& cfg, const std::string& flag_out) {
    if (!flag_out.empty()) return flag_out;
    if (!cfg.out_dir.empty()) return cfg.out_dir;
    const char* env_root = std::getenv("FAMSEC_RUNS_DIR");
    fs::path root = env_root && *env_root ? fs::path(env_root) : fs::path("runs");
    char stamp[64];
    std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::strftime(stamp, sizeof(stamp), "run-%Y%m%d-%H%M%S", &tm);
    return root / (std::string(stamp) + "-s" + std::to_string(cfg.seed));
}

Encoder<Real> build_base_encoder(const RunConfig& cfg) {
    if (!cfg.encoder_weights.empty())
        return attach_pretrained<Real>(cfg.encoder_weights, cfg.encoder);
    return build_encoder<Real>(cfg.encoder, cfg.seed);
}

struct LoadedModel {
    Encoder<Real> encoder;
    AdapterSet<Real> adapters;
    bool has_adapters = false;
    double tau = 0.07;
};

LoadedModel load_model(const RunConfig& cfg, const std::string& ckpt_path) {
    LoadedModel m{build_base_encoder(cfg), {}, false, cfg.tau0};
    if (!ckpt_path.empty()) {
        auto ck = load_adapter_checkpoint<Real>(ckpt_path);
        m.adapters = attach_checkpoint(ck, m.encoder);
        m.has_adapters = true;
        m.tau = ck.tau;
    }
    return m;
}

const AdapterSet<Real>* adapters_of(const LoadedModel& m) {
    return m.has_adapters ? &m.adapters : nullptr;
}

void save_head(const fs::path& path, const ClassifierHead<Real>& head) {
    auto os = open_out(path);
    os.write("FAMSECH1", 8);
    write_le<std::uint32_t>(os, 1);
    write_matrix_f32(os, head.w);
    write_matrix_f32(os, head.b);
}

// ---- commands -------------------------------------------------------------

int cmd_synth(const CommonOpts& common, const SyntheticSpec& spec, const std::string& out) {
    FAMSEC_REQUIRE(!out.empty(), config_error, "synth: --out is required");
    auto manifest = make_synthetic(spec, out);
    json j;
    j["root"] = out;
    for (const char* split : kSplits)
        for (const auto& src : manifest.sources(split)) {
            j["counts"][split][src]["real"] = manifest.count(split, src, 1);
            j["counts"][split][src]["fake"] = manifest.count(split, src, 0);
        }
    if (common.json_out) {
        std::cout << j.dump(2) << "\n";
    } else {
        std::cout << "synthetic corpus written to " << out << "\n";
        for (const char* split : kSplits)
            for (const auto& src : manifest.sources(split))
                std::cout << "  " << split << "/" << src << ": " << manifest.count(split, src, 1)
                          << " real, " << manifest.count(split, src, 0) << " fake\n";
    }
    return 0;
}

int cmd_train(const CommonOpts& common, const std::string& flag_out) {
    RunConfig cfg = merged_config(common);
    FAMSEC_REQUIRE(!cfg.data_root.empty(), config_error, "train: data.root is required");
    cfg.validate();
    const fs::path out = resolve_out_dir(cfg, flag_out);
    fs::create_directories(out);
    RunConfig snapshot = cfg;
    snapshot.out_dir = out.string();
    write_text_file(out / "config.snapshot", serialize_config(snapshot));
    echo_config(snapshot);

    auto manifest = load_manifest(cfg.data_root);
    auto pipe = cfg.to_pipeline();
    LoadedDataset train_data = load_images(manifest, "train", pipe.train_sources);
    FAMSEC_REQUIRE(!train_data.items.empty(), config_error, "train: no training images");
    if (pipe.train_subset > 0 && pipe.train_subset < train_data.items.size()) {
        auto keep = sample_subset(train_data.labels(), pipe.train_subset,
                                  mix_seed(cfg.seed, 0x5b5eULL));
        LoadedDataset sub;
        for (auto i : keep) sub.items.push_back(train_data.items[i]);
        train_data = std::move(sub);
    }

    auto pair = EncoderPair<Real>::from_base(build_base_encoder(cfg), cfg.seed, pipe.fam,
                                             pipe.trainer.fam_on, pipe.trainer.fam_on);
    Trainer<Real> trainer(pair, pipe.trainer);

    auto save_state = [&](long step) {
        if (pipe.trainer.fam_on) {
            save_adapter_checkpoint(out / "adapters.ckpt", pair.adapters, trainer.tau(),
                                    fingerprint(pair.extractor));
        } else {
            save_encoder(pair.extractor, out / "extractor.wts");
        }
        if (pipe.trainer.objective == TrainObjective::classification)
            save_head(out / "head.bin", trainer.head());
        (void)step;
    };
    auto history = train(trainer, train_data, cfg.checkpoint_every, save_state);
    write_loss_history(out / "losses.csv", history);

    json j;
    j["run_dir"] = out.string();
    j["steps"] = history.size();
    j["final_loss"] = history.empty() ? 0.0 : history.back().loss;
    j["final_tau"] = trainer.tau();
    if (common.json_out)
        std::cout << j.dump(2) << "\n";
    else
        std::cout << "trained " << history.size() << " steps; final loss "
                  << (history.empty() ? 0.0 : history.back().loss) << "; run dir " << out.string()
                  << "\n";
    return 0;
}

int cmd_bank(const CommonOpts& common, const std::string& ckpt, const std::string& out_file) {
    RunConfig cfg = merged_config(common);
    FAMSEC_REQUIRE(!cfg.data_root.empty(), config_error, "bank: data.root is required");
    FAMSEC_REQUIRE(!out_file.empty(), config_error, "bank: --out is required");
    echo_config(cfg);
    auto model = load_model(cfg, ckpt);
    auto manifest = load_manifest(cfg.data_root);
    auto train_data = load_images(manifest, "train", cfg.train_sources);
    auto bank = build_bank<Real>(train_data, model.encoder, adapters_of(model), cfg.bank_k,
                                 cfg.bank_aggregation == "single" ? BankAggregation::single
                                                                  : BankAggregation::mean_centroid,
                                 mix_seed(cfg.seed, cfg.bank_seed));
    save_bank(out_file, bank);
    if (common.json_out) {
        json j;
        j["bank"] = out_file;
        j["real_refs"] = bank.real_refs.rows();
        j["fake_refs"] = bank.fake_refs.rows();
        j["fingerprint"] = bank.fingerprint;
        std::cout << j.dump(2) << "\n";
    } else {
        std::cout << "bank written to " << out_file << " (" << bank.real_refs.rows() << " real, "
                  << bank.fake_refs.rows() << " fake refs)\n";
    }
    return 0;
}

int cmd_eval(const CommonOpts& common, const std::string& ckpt, const std::string& bank_file,
             const std::string& flag_out, const std::vector<std::string>& sources) {
    RunConfig cfg = merged_config(common);
    FAMSEC_REQUIRE(!cfg.data_root.empty(), config_error, "eval: data.root is required");
    cfg.validate();
    const fs::path out = resolve_out_dir(cfg, flag_out);
    fs::create_directories(out);
    RunConfig snapshot = cfg;
    snapshot.out_dir = out.string();
    write_text_file(out / "config.snapshot", serialize_config(snapshot));
    echo_config(snapshot);

    auto model = load_model(cfg, ckpt);
    auto manifest = load_manifest(cfg.data_root);
    ReferenceBank<Real> bank;
    if (!bank_file.empty()) {
        bank = load_bank<Real>(bank_file);
    } else {
        auto train_data = load_images(manifest, "train", cfg.train_sources);
        bank = build_bank<Real>(train_data, model.encoder, adapters_of(model), cfg.bank_k,
                                cfg.bank_aggregation == "single"
                                    ? BankAggregation::single
                                    : BankAggregation::mean_centroid,
                                mix_seed(cfg.seed, cfg.bank_seed));
        save_bank(out / "bank.bank", bank);
    }

    std::vector<std::pair<std::string, Verdict>> verdicts;
    auto report = evaluate<Real>(model.encoder, adapters_of(model), bank, manifest, sources,
                                 cfg.eval_threads, &verdicts);
    write_report_csv(out / "report.csv", report);
    write_report_text(out / "report.txt", report, serialize_config(snapshot));
    write_verdicts(out / "verdicts.csv", verdicts);

    if (common.json_out) {
        json j;
        j["overall"] = report.overall;
        for (const auto& a : report.per_source)
            j["per_source"][a.source] = {{"correct", a.correct},
                                         {"total", a.total},
                                         {"accuracy", a.accuracy}};
        j["run_dir"] = out.string();
        std::cout << j.dump(2) << "\n";
    } else {
        for (const auto& a : report.per_source)
            std::printf("%-16s %5zu/%-5zu acc %.4f\n", a.source.c_str(), a.correct, a.total,
                        a.accuracy);
        std::printf("overall avg acc %.4f\nreports in %s\n", report.overall, out.string().c_str());
    }
    return 0;
}

int cmd_infer(const CommonOpts& common, const std::string& image_path, const std::string& bank_file,
              const std::string& ckpt) {
    RunConfig cfg = merged_config(common);
    FAMSEC_REQUIRE(!image_path.empty() && !bank_file.empty(), config_error,
                   "infer: --image and --bank are required");
    echo_config(cfg);
    auto model = load_model(cfg, ckpt);
    auto bank = load_bank<Real>(bank_file);
    Image img = png::read_file(image_path);
    auto v = classify(img, bank, model.encoder, adapters_of(model));
    if (common.json_out) {
        json j;
        j["image"] = image_path;
        j["label"] = v.label();
        j["d_f"] = v.d_f;
        j["d_r"] = v.d_r;
        j["margin"] = v.margin;
        std::cout << j.dump(2) << "\n";
    } else {
        std::printf("%s d_f=%.6f d_r=%.6f\n", v.label(), v.d_f, v.d_r);
    }
    return 0;
}

int cmd_ablate(const CommonOpts& common, const std::string& axis_name,
               const std::vector<std::string>& values, const std::string& flag_out) {
    RunConfig cfg = merged_config(common);
    FAMSEC_REQUIRE(!cfg.data_root.empty(), config_error, "ablate: data.root is required");
    auto axis = sweep_axis_from_string(axis_name);
    FAMSEC_REQUIRE(axis.has_value(), config_error,
                   "ablate: unknown axis '" + axis_name + "' (rank|blocks|samples|components)");
    std::vector<std::string> vals = values;
    if (vals.empty() && *axis == SweepAxis::components)
        vals = {"none", "fam", "sec", "fam+sec"};
    FAMSEC_REQUIRE(!vals.empty(), config_error, "ablate: --values is required for this axis");
    const fs::path out = resolve_out_dir(cfg, flag_out);
    fs::create_directories(out);
    RunConfig snapshot = cfg;
    snapshot.out_dir = out.string();
    write_text_file(out / "config.snapshot", serialize_config(snapshot));
    echo_config(snapshot);

    auto manifest = load_manifest(cfg.data_root);
    auto base = cfg.to_pipeline();
    std::vector<SweepCell> cells;
    if (*axis == SweepAxis::samples) {
        std::vector<std::size_t> sizes;
        for (const auto& v : vals) sizes.push_back(std::stoul(v));
        cells = sample_size_curve(sizes, base, manifest, out);
    } else {
        cells = run_sweep(*axis, vals, base, manifest);
    }
    write_sweep_csv(out / "sweep.csv", *axis, cells);

    json j;
    int failed = 0;
    for (const auto& c : cells) {
        json row;
        row["value"] = c.value;
        row["status"] = c.ok ? "ok" : "failed";
        if (c.ok)
            row["avg_acc"] = c.report.overall;
        else {
            row["error"] = c.error;
            ++failed;
        }
        j["cells"].push_back(row);
    }
    j["sweep_csv"] = (out / "sweep.csv").string();
    if (common.json_out)
        std::cout << j.dump(2) << "\n";
    else {
        for (const auto& c : cells)
            if (c.ok)
                std::printf("%-10s %-8s avg acc %.4f\n", c.value.c_str(), "ok", c.report.overall);
            else
                std::printf("%-10s %-8s %s\n", c.value.c_str(), "failed", c.error.c_str());
        std::printf("sweep table in %s\n", (out / "sweep.csv").string().c_str());
    }
    return failed == int(cells.size()) ? 1 : 0;
}

int cmd_visualize(const CommonOpts& common, const std::string& ckpt, const std::string& flag_out,
                  double perplexity, int cap) {
    RunConfig cfg = merged_config(common);
    FAMSEC_REQUIRE(!cfg.data_root.empty(), config_error, "visualize: data.root is required");
    const fs::path out = resolve_out_dir(cfg, flag_out);
    fs::create_directories(out);
    echo_config(cfg);

    auto model = load_model(cfg, ckpt);
    auto manifest = load_manifest(cfg.data_root);
    std::vector<std::string> seen = cfg.train_sources;
    if (seen.empty()) seen = manifest.sources("train");
    auto [emb, groups] = collect_tsne_embeddings<Real>(manifest, model.encoder,
                                                       adapters_of(model), seen, cap, cfg.seed,
                                                       cfg.eval_threads);
    auto art = tsne_plot(emb, groups, perplexity, cfg.seed, out);
    if (common.json_out) {
        json j;
        j["tsne_csv"] = (out / "tsne.csv").string();
        j["tsne_png"] = (out / "tsne.png").string();
        j["silhouette_real_fake"] = art.silhouette_real_fake;
        std::cout << j.dump(2) << "\n";
    } else {
        std::printf("t-SNE artifacts in %s (silhouette real/fake: %.4f)\n", out.string().c_str(),
                    art.silhouette_real_fake);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"FAMSeC: LoRA forgery-awareness adapters with semantic-guided contrastive "
                 "training and cosine-distance inference"};
    app.require_subcommand(1);

    CommonOpts common;
    app.add_flag("--json", common.json_out, "machine-readable JSON output on stdout");

    long long common_seed = -1;
    auto add_common = [&](CLI::App* sub, bool with_seed = true) {
        sub->add_option("--config", common.config_file, "config file (key = value lines)");
        sub->add_option("--set", common.overrides,
                        "override a config key, e.g. --set train.steps=200 (repeatable)");
        if (with_seed) sub->add_option("--seed", common_seed, "run seed");
    };

    // synth
    SyntheticSpec synth_spec;
    std::string synth_out;
    std::string synth_families = "A,B", synth_holdout;
    auto* synth = app.add_subcommand("synth", "generate a synthetic real/fake corpus");
    synth->add_option("--out", synth_out, "output dataset root")->required();
    synth->add_option("--families", synth_families, "comma-separated family ids");
    synth->add_option("--holdout", synth_holdout, "families kept out of the train split");
    synth->add_option("--count", synth_spec.train_count_per_class,
                      "train images per class per family");
    synth->add_option("--test-count", synth_spec.test_count_per_class,
                      "test images per class per family");
    synth->add_option("--size", synth_spec.image_size, "generated image size in pixels");
    synth->add_option("--amplitude", synth_spec.fingerprint_amplitude, "fingerprint amplitude");
    synth->add_option("--noise", synth_spec.noise_level, "sensor noise ceiling");
    std::string synth_grid = "A";
    synth->add_option("--grid", synth_grid, "families that carry the checkerboard artifact");
    synth->add_option("--grid-amplitude", synth_spec.grid_amplitude, "checkerboard amplitude");
    synth->add_option("--domain-shift", synth_spec.domain_shift,
                      "strength of the per-family brightness/contrast domain");
    synth->add_option("--seed", synth_spec.seed, "generation seed");

    // train
    std::string train_out;
    auto* train_cmd = app.add_subcommand("train", "train adapters (or a full fine-tune baseline)");
    add_common(train_cmd, /*with_seed=*/false);
    std::string train_data, train_sources_flag, train_objective;
    long train_steps = -1;
    int train_batch = -1, train_rank = -1, train_blocks = -1, train_threads = -1;
    double train_lr = -1, train_dropout = -1, train_tau0 = -1;
    long long train_seed = -1;
    std::string fam_flag;
    train_cmd->add_option("--data", train_data, "dataset root (overrides data.root)");
    train_cmd->add_option("--out", train_out, "run directory");
    train_cmd->add_option("--steps", train_steps, "training steps");
    train_cmd->add_option("--batch", train_batch, "batch size");
    train_cmd->add_option("--lr", train_lr, "learning rate");
    train_cmd->add_option("--seed", train_seed, "run seed");
    train_cmd->add_option("--rank", train_rank, "LoRA rank");
    train_cmd->add_option("--blocks", train_blocks, "adapted block count (from the last block)");
    train_cmd->add_option("--dropout", train_dropout, "LoRA branch dropout probability");
    train_cmd->add_option("--tau0", train_tau0, "initial temperature");
    train_cmd->add_option("--sources", train_sources_flag, "train sources (comma-separated)");
    train_cmd->add_option("--objective", train_objective, "sec | classification");
    train_cmd->add_option("--fam", fam_flag, "on | off (off = full fine-tune)");
    train_cmd->add_option("--threads", train_threads, "worker threads");

    // bank
    std::string bank_ckpt, bank_out, bank_data;
    int bank_k = -1;
    auto* bank_cmd = app.add_subcommand("bank", "build and save a reference bank");
    add_common(bank_cmd);
    bank_cmd->add_option("--data", bank_data, "dataset root");
    bank_cmd->add_option("--ckpt", bank_ckpt, "adapter checkpoint");
    bank_cmd->add_option("--k", bank_k, "references per class");
    std::string bank_sources;
    bank_cmd->add_option("--sources", bank_sources, "train sources filter (comma-separated)");
    bank_cmd->add_option("--out", bank_out, "output bank file")->required();

    // eval
    std::string eval_ckpt, eval_bank, eval_out, eval_data, eval_sources;
    auto* eval_cmd = app.add_subcommand("eval", "evaluate on the test split");
    add_common(eval_cmd);
    eval_cmd->add_option("--data", eval_data, "dataset root");
    eval_cmd->add_option("--ckpt", eval_ckpt, "adapter checkpoint");
    eval_cmd->add_option("--bank", eval_bank, "reference bank file (default: build from train)");
    eval_cmd->add_option("--sources", eval_sources, "test sources filter (comma-separated)");
    eval_cmd->add_option("--out", eval_out, "output directory");

    // infer
    std::string infer_image, infer_bank, infer_ckpt;
    auto* infer_cmd = app.add_subcommand("infer", "classify a single image");
    add_common(infer_cmd);
    infer_cmd->add_option("--image", infer_image, "input image (png)")->required();
    infer_cmd->add_option("--bank", infer_bank, "reference bank file")->required();
    infer_cmd->add_option("--ckpt", infer_ckpt, "adapter checkpoint");

    // ablate
    std::string ablate_axis, ablate_values, ablate_out, ablate_data;
    auto* ablate_cmd = app.add_subcommand("ablate", "run an ablation sweep");
    add_common(ablate_cmd);
    ablate_cmd->add_option("--axis", ablate_axis, "rank | blocks | samples | components")
        ->required();
    ablate_cmd->add_option("--values", ablate_values, "comma-separated axis values");
    ablate_cmd->add_option("--data", ablate_data, "dataset root");
    ablate_cmd->add_option("--out", ablate_out, "output directory");

    // visualize
    std::string vis_ckpt, vis_out, vis_data;
    double vis_perplexity = 15.0;
    int vis_cap = 40;
    auto* vis_cmd = app.add_subcommand("visualize", "t-SNE of test embeddings");
    add_common(vis_cmd);
    vis_cmd->add_option("--data", vis_data, "dataset root");
    vis_cmd->add_option("--ckpt", vis_ckpt, "adapter checkpoint");
    vis_cmd->add_option("--perplexity", vis_perplexity, "t-SNE perplexity");
    vis_cmd->add_option("--cap", vis_cap, "max points per group");
    vis_cmd->add_option("--out", vis_out, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    if (common_seed >= 0)
        common.overrides.push_back("seed=" + std::to_string(common_seed));
    try {
        if (synth->parsed()) {
            synth_spec.families = configdetail::split_list(synth_families);
            synth_spec.holdout_families = configdetail::split_list(synth_holdout);
            synth_spec.grid_families = configdetail::split_list(synth_grid);
            return cmd_synth(common, synth_spec, synth_out);
        }
        if (train_cmd->parsed()) {
            // flag overrides win over file values
            if (!train_data.empty()) common.overrides.push_back("data.root=" + train_data);
            if (train_steps >= 0)
                common.overrides.push_back("train.steps=" + std::to_string(train_steps));
            if (train_batch >= 0)
                common.overrides.push_back("train.batch_size=" + std::to_string(train_batch));
            if (train_lr >= 0) common.overrides.push_back("train.lr=" + csv_num(train_lr));
            if (train_seed >= 0) common.overrides.push_back("seed=" + std::to_string(train_seed));
            if (train_rank >= 0)
                common.overrides.push_back("fam.rank=" + std::to_string(train_rank));
            if (train_blocks >= 0)
                common.overrides.push_back("fam.blocks=" + std::to_string(train_blocks));
            if (train_dropout >= 0)
                common.overrides.push_back("fam.dropout=" + csv_num(train_dropout));
            if (train_tau0 >= 0) common.overrides.push_back("train.tau0=" + csv_num(train_tau0));
            if (train_threads >= 0)
                common.overrides.push_back("train.threads=" + std::to_string(train_threads));
            if (!train_sources_flag.empty())
                common.overrides.push_back("train.sources=" + train_sources_flag);
            if (!train_objective.empty())
                common.overrides.push_back("train.objective=" + train_objective);
            if (!fam_flag.empty()) {
                if (fam_flag != "on" && fam_flag != "off")
                    throw config_error("--fam expects 'on' or 'off'");
                common.overrides.push_back(std::string("fam.enabled=") +
                                           (fam_flag == "on" ? "true" : "false"));
            }
            return cmd_train(common, train_out);
        }
        if (bank_cmd->parsed()) {
            if (!bank_data.empty()) common.overrides.push_back("data.root=" + bank_data);
            if (!bank_sources.empty()) common.overrides.push_back("train.sources=" + bank_sources);
            if (bank_k >= 1) common.overrides.push_back("bank.k=" + std::to_string(bank_k));
            return cmd_bank(common, bank_ckpt, bank_out);
        }
        if (eval_cmd->parsed()) {
            if (!eval_data.empty()) common.overrides.push_back("data.root=" + eval_data);
            return cmd_eval(common, eval_ckpt, eval_bank, eval_out,
                            configdetail::split_list(eval_sources));
        }
        if (infer_cmd->parsed()) return cmd_infer(common, infer_image, infer_bank, infer_ckpt);
        if (ablate_cmd->parsed()) {
            if (!ablate_data.empty()) common.overrides.push_back("data.root=" + ablate_data);
            return cmd_ablate(common, ablate_axis, configdetail::split_list(ablate_values),
                              ablate_out);
        }
        if (vis_cmd->parsed()) {
            if (!vis_data.empty()) common.overrides.push_back("data.root=" + vis_data);
            return cmd_visualize(common, vis_ckpt, vis_out, vis_perplexity, vis_cap);
        }
    } catch (const config_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const contract_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}
