// Copyright (c) 2026 the famsec authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include "famsec/common.hpp"
#include "famsec/data.hpp"
#include "famsec/io.hpp"
#include "famsec/lora.hpp"
#include "famsec/sec.hpp"
#include "famsec/vit.hpp"

namespace famsec {

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

template <typename T>
struct AdamConfig {
    T lr = T(1e-4);
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T eps = T(1e-8);
};

// Flat-buffer Adam over a fixed parameter registry. The registry order is
// fixed at construction, so updates are bit-reproducible.
template <typename T>
class Adam {
public:
    struct Entry {
        T* param;
        const T* grad;
        std::size_t n;
    };

    Adam() = default;
    Adam(AdamConfig<T> cfg, std::vector<Entry> entries)
        : cfg_(cfg), entries_(std::move(entries)) {
        for (const auto& e : entries_) {
            m_.emplace_back(e.n, T(0));
            v_.emplace_back(e.n, T(0));
        }
    }

    void step() {
        ++t_;
        const T bc1 = T(1) - std::pow(cfg_.beta1, T(t_));
        const T bc2 = T(1) - std::pow(cfg_.beta2, T(t_));
        for (std::size_t k = 0; k < entries_.size(); ++k) {
            auto& e = entries_[k];
            T* m = m_[k].data();
            T* v = v_[k].data();
            for (std::size_t i = 0; i < e.n; ++i) {
                const T g = e.grad[i];
                m[i] = cfg_.beta1 * m[i] + (T(1) - cfg_.beta1) * g;
                v[i] = cfg_.beta2 * v[i] + (T(1) - cfg_.beta2) * g * g;
                const T mhat = m[i] / bc1;
                const T vhat = v[i] / bc2;
                e.param[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
        }
    }

    long step_count() const { return t_; }

private:
    AdamConfig<T> cfg_;
    std::vector<Entry> entries_;
    std::vector<std::vector<T>> m_, v_;
    long t_ = 0;
};

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

enum class TrainObjective { contrastive, classification };

template <typename T>
struct TrainerConfig {
    AdamConfig<T> adam;                                      // lr 1e-4 default
    int batch_size = 16;
    long steps = 1000;
    std::uint64_t seed = 0;
    double tau0 = 0.07;                                      // initial temperature
    bool balance = true;
    TrainObjective objective = TrainObjective::contrastive;
    bool fam_on = true;  // adapters trainable, base frozen; off = full fine-tune
    int threads = 0;     // 0 = hardware concurrency (capped)

    void validate() const {
        FAMSEC_REQUIRE(adam.lr > T(0), config_error, "trainer: learning rate must be positive");
        FAMSEC_REQUIRE(batch_size >= 2, config_error, "trainer: batch size must be >= 2");
        FAMSEC_REQUIRE(steps >= 0, config_error, "trainer: negative step count");
        FAMSEC_REQUIRE(tau0 > 0.0, config_error, "trainer: tau0 must be positive");
    }

    int effective_threads() const {
        if (threads > 0) return threads;
        unsigned hw = std::thread::hardware_concurrency();
        return int(std::min(8u, std::max(1u, hw)));
    }
};

// Binary logistic head used by the classification-loss ablation cells.
template <typename T>
struct ClassifierHead {
    Matrix<T> w;  // 1 x embed_dim
    Matrix<T> b;  // 1 x 1
};

struct StepStats {
    double loss = 0;
    double tau = 0;
    bool uniform_labels = false;
};

// Owns the training state: adapter factors (through the pair), the log-tau
// temperature, optimizer moments, step counter, and rng state. One trainer
// drives one run; nothing here is shared across concurrent trainers.
template <typename T>
class Trainer {
public:
    Trainer(EncoderPair<T>& pair, TrainerConfig<T> cfg)
        : pair_(pair), cfg_(cfg), rng_(mix_seed(cfg.seed, 0x7261696eULL)) {
        cfg_.validate();
        log_tau_ = T(std::log(cfg_.tau0));
        if (!cfg_.fam_on) {
            FAMSEC_REQUIRE(pair_.adapters.sites.empty(), config_error,
                           "trainer: fam_on=false but the pair carries adapters");
            // Full fine-tune must not write through to the guide's weights.
            if (pair_.extractor.shares_params_with(pair_.guide))
                pair_.extractor = pair_.extractor.clone_params();
            base_grads_ = std::make_unique<EncoderGrads<T>>(pair_.extractor);
        } else {
            FAMSEC_REQUIRE(!pair_.adapters.sites.empty(), config_error,
                           "trainer: fam_on=true needs injected adapters");
            ad_grads_ = std::make_unique<AdapterGrads<T>>(pair_.adapters);
        }
        if (cfg_.objective == TrainObjective::classification) {
            const int e = pair_.extractor.spec().embed_dim;
            Rng hr = rng_.derive(0x48454144ULL);
            head_.w = Matrix<T>(1, e);
            for (int i = 0; i < e; ++i) head_.w(0, i) = T(hr.normal(0.0, 0.02));
            head_.b = Matrix<T>(1, 1);
            head_grad_w_ = Matrix<T>(1, e);
            head_grad_b_ = Matrix<T>(1, 1);
        }
        build_registry();
    }

    Trainer(const Trainer&) = delete;
    Trainer& operator=(const Trainer&) = delete;

    // One optimization step on a prepared batch. Returns the loss *before*
    // the update.
    StepStats step(const std::vector<Image>& images, const std::vector<int>& labels) {
        const int n = int(images.size());
        FAMSEC_REQUIRE(n >= 2 && labels.size() == images.size(), contract_error,
                       "train step: need a batch of >= 2 labeled images");
        StepStats stats;
        stats.uniform_labels =
            std::all_of(labels.begin(), labels.end(), [&](int y) { return y == labels[0]; });

        zero_grads();
        Rng step_rng = rng_.derive(0x53544550ULL + std::uint64_t(step_));

        // ---- forward (parallel over images) ----
        const int embed = pair_.extractor.spec().embed_dim;
        Matrix<T> guide_emb(n, embed), ext_emb(n, embed);
        std::vector<vitdetail::ForwardCache<T>> caches(static_cast<std::size_t>(n));
        const bool need_guide = cfg_.objective == TrainObjective::contrastive;
        parallel_images(n, [&](int i) {
            if (need_guide) {
                auto ge = encode_image(pair_.guide, nullptr, images[std::size_t(i)]);
                std::copy(ge.begin(), ge.end(), guide_emb.row(i));
            }
            Rng drop_rng = step_rng.derive(std::uint64_t(i));
            auto te = encode_image(pair_.extractor, adapters_ptr(), images[std::size_t(i)],
                                   /*training=*/true, &drop_rng, &caches[std::size_t(i)]);
            std::copy(te.begin(), te.end(), ext_emb.row(i));
        });

        for (std::size_t i = 0; i < ext_emb.size(); ++i)
            if (!std::isfinite(double(ext_emb.data()[i])) ||
                (need_guide && !std::isfinite(double(guide_emb.data()[i]))))
                throw divergence_error(
                    "training diverged: non-finite embedding at step " + std::to_string(step_),
                    step_, 0.0);

        // ---- loss and embedding gradients ----
        Matrix<T> d_ext;  // n x embed
        if (cfg_.objective == TrainObjective::contrastive) {
            Matrix<T> p = similarity_matrix(guide_emb, ext_emb);
            Matrix<int> l = pair_labels(labels);
            auto lg = sec_loss_backward(p, l, std::exp(log_tau_));
            stats.loss = double(lg.loss);
            check_finite(stats.loss, "loss");
            d_ext = similarity_backward(guide_emb, ext_emb, p, lg.d_p);
            log_tau_grad_ = lg.d_log_tau;
        } else {
            d_ext = Matrix<T>(n, embed);
            T loss{};
            for (int i = 0; i < n; ++i) {
                T z = head_.b(0, 0) + dot(head_.w.row(0), ext_emb.row(i), embed);
                T s = secdetail::sigmoid(z);
                s = std::min(T(1) - T(1e-12), std::max(T(1e-12), s));
                loss -= labels[std::size_t(i)] ? std::log(s) : std::log(T(1) - s);
                const T dz = (s - T(labels[std::size_t(i)])) / T(n);
                for (int e = 0; e < embed; ++e) {
                    d_ext(i, e) = dz * head_.w(0, e);
                    head_grad_w_(0, e) += dz * ext_emb(i, e);
                }
                head_grad_b_(0, 0) += dz;
            }
            stats.loss = double(loss) / n;
            check_finite(stats.loss, "loss");
        }

        // ---- backward (parallel over images, deterministic accumulation) ----
        if (cfg_.fam_on) {
            std::vector<AdapterGrads<T>> per_image(std::size_t(n),
                                                   AdapterGrads<T>(pair_.adapters));
            parallel_images(n, [&](int i) {
                std::vector<T> seed(d_ext.row(i), d_ext.row(i) + embed);
                encode_backward(pair_.extractor, adapters_ptr(), caches[std::size_t(i)], seed,
                                nullptr, &per_image[std::size_t(i)]);
            });
            for (int i = 0; i < n; ++i) ad_grads_->add_scaled(per_image[std::size_t(i)], T(1));
        } else {
            std::vector<std::unique_ptr<EncoderGrads<T>>> per_image(static_cast<std::size_t>(n));
            parallel_images(n, [&](int i) {
                per_image[std::size_t(i)] = std::make_unique<EncoderGrads<T>>(pair_.extractor);
                std::vector<T> seed(d_ext.row(i), d_ext.row(i) + embed);
                encode_backward(pair_.extractor, nullptr, caches[std::size_t(i)], seed,
                                per_image[std::size_t(i)].get(), nullptr);
            });
            std::vector<Matrix<T>*> totals;
            for_each_param(base_grads_->g,
                           [&](const std::string&, Matrix<T>& m) { totals.push_back(&m); });
            for (int i = 0; i < n; ++i) {
                std::vector<const Matrix<T>*> parts;
                for_each_param(per_image[std::size_t(i)]->g,
                               [&](const std::string&, Matrix<T>& m) { parts.push_back(&m); });
                for (std::size_t k = 0; k < totals.size(); ++k)
                    for (std::size_t j = 0; j < totals[k]->size(); ++j)
                        totals[k]->data()[j] += parts[k]->data()[j];
            }
        }

        check_grads_finite();
        adam_.step();
        ++step_;
        stats.tau = double(std::exp(log_tau_));
        return stats;
    }

    double tau() const { return double(std::exp(log_tau_)); }
    long step_count() const { return step_; }
    const ClassifierHead<T>& head() const { return head_; }
    const TrainerConfig<T>& config() const { return cfg_; }
    EncoderPair<T>& pair() { return pair_; }

private:
    const AdapterSet<T>* adapters_ptr() const {
        return cfg_.fam_on ? &pair_.adapters : nullptr;
    }

    void build_registry() {
        std::vector<typename Adam<T>::Entry> entries;
        if (cfg_.fam_on) {
            for (auto& [site, f] : pair_.adapters.sites) {
                auto& fg = ad_grads_->sites.at(site);
                entries.push_back({f.up.data(), fg.d_up.data(), f.up.size()});
                entries.push_back({f.down.data(), fg.d_down.data(), f.down.size()});
            }
        } else {
            auto& P = pair_.extractor.mutable_params();
            auto& G = base_grads_->g;
            std::vector<Matrix<T>*> params, grads;
            for_each_param(P, [&](const std::string&, Matrix<T>& m) { params.push_back(&m); });
            for_each_param(G, [&](const std::string&, Matrix<T>& m) { grads.push_back(&m); });
            for (std::size_t i = 0; i < params.size(); ++i)
                entries.push_back({params[i]->data(), grads[i]->data(), params[i]->size()});
        }
        if (cfg_.objective == TrainObjective::contrastive)
            entries.push_back({&log_tau_, &log_tau_grad_, 1});
        if (cfg_.objective == TrainObjective::classification) {
            entries.push_back({head_.w.data(), head_grad_w_.data(), head_.w.size()});
            entries.push_back({head_.b.data(), head_grad_b_.data(), head_.b.size()});
        }
        adam_ = Adam<T>(cfg_.adam, std::move(entries));
    }

    void zero_grads() {
        if (ad_grads_)
            for (auto& [site, fg] : ad_grads_->sites) {
                fg.d_up.zero();
                fg.d_down.zero();
            }
        if (base_grads_)
            for_each_param(base_grads_->g, [](const std::string&, Matrix<T>& m) { m.zero(); });
        log_tau_grad_ = T(0);
        if (!head_grad_w_.empty()) {
            head_grad_w_.zero();
            head_grad_b_.zero();
        }
    }

    void check_finite(double v, const char* what) const {
        if (!std::isfinite(v))
            throw divergence_error(std::string("training diverged: non-finite ") + what +
                                       " at step " + std::to_string(step_),
                                   step_, v);
    }

    void check_grads_finite() const {
        auto check_m = [&](const Matrix<T>& m, const std::string& name) {
            for (std::size_t i = 0; i < m.size(); ++i)
                if (!std::isfinite(double(m.data()[i])))
                    throw divergence_error("training diverged: non-finite gradient in " + name +
                                               " at step " + std::to_string(step_),
                                           step_, 0.0);
        };
        if (ad_grads_)
            for (const auto& [site, fg] : ad_grads_->sites) {
                check_m(fg.d_up, site_id(site) + ".up");
                check_m(fg.d_down, site_id(site) + ".down");
            }
        if (base_grads_)
            for_each_param(base_grads_->g, [&](const std::string& n, const Matrix<T>& m) {
                check_m(m, n);
            });
        if (!std::isfinite(double(log_tau_grad_)))
            throw divergence_error("training diverged: non-finite tau gradient", step_, 0.0);
    }

    template <typename F>
    void parallel_images(int n, F&& f) {
        const int threads = std::min(cfg_.effective_threads(), n);
        if (threads <= 1) {
            for (int i = 0; i < n; ++i) f(i);
            return;
        }
        std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
        std::vector<std::thread> pool;
        pool.reserve(std::size_t(threads));
        for (int t = 0; t < threads; ++t)
            pool.emplace_back([&, t]() {
                try {
                    for (int i = t; i < n; i += threads) f(i);
                } catch (...) {
                    errors[std::size_t(t)] = std::current_exception();
                }
            });
        for (auto& th : pool) th.join();
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
    }

    EncoderPair<T>& pair_;
    TrainerConfig<T> cfg_;
    Rng rng_;
    T log_tau_ = T(0);
    T log_tau_grad_ = T(0);
    ClassifierHead<T> head_;
    Matrix<T> head_grad_w_, head_grad_b_;
    std::unique_ptr<AdapterGrads<T>> ad_grads_;
    std::unique_ptr<EncoderGrads<T>> base_grads_;
    Adam<T> adam_;
    long step_ = 0;
};

// ---------------------------------------------------------------------------
// Training loop over a loaded dataset
// ---------------------------------------------------------------------------

struct LossPoint {
    long step = 0;
    double loss = 0;
    double tau = 0;
    double wall_ms = 0;
};

inline void write_loss_history(const fs::path& path, const std::vector<LossPoint>& history) {
    std::string out = "step,loss,tau,wall_ms\n";
    for (const auto& p : history)
        out += std::to_string(p.step) + "," + csv_num(p.loss) + "," + csv_num(p.tau) + "," +
               csv_num(p.wall_ms) + "\n";
    write_text_file(path, out);
}

// Drives trainer.step over seeded batches with per-step random crops.
// `on_checkpoint` (optional) fires every `checkpoint_every` steps and once
// at the end.
template <typename T>
std::vector<LossPoint> train(Trainer<T>& trainer, const LoadedDataset& data,
                             long checkpoint_every = 0,
                             const std::function<void(long)>& on_checkpoint = {}) {
    const auto& cfg = trainer.config();
    FAMSEC_REQUIRE(!data.items.empty(), config_error, "train: empty dataset");
    Batcher batcher(data.labels(), cfg.batch_size, cfg.balance, mix_seed(cfg.seed, 0xba7c4ULL));

    const int crop_size = trainer.pair().extractor.spec().image_size;
    std::vector<LossPoint> history;
    history.reserve(std::size_t(cfg.steps));
    bool warned_uniform = false;
    for (long s = 0; s < cfg.steps; ++s) {
        auto t0 = std::chrono::steady_clock::now();
        auto idx = batcher.next();
        std::vector<Image> images;
        std::vector<int> labels;
        images.reserve(idx.size());
        for (std::size_t slot = 0; slot < idx.size(); ++slot) {
            const auto& item = data.items[idx[slot]];
            images.push_back(random_crop(item.image, crop_size,
                                         mix_seed(cfg.seed, 0xc40bULL + std::uint64_t(s) * 1024 +
                                                                slot)));
            labels.push_back(item.label);
        }
        auto stats = trainer.step(images, labels);
        if (stats.uniform_labels && !warned_uniform) {
            std::fprintf(stderr,
                         "warning: batch at step %ld has uniform labels; contrastive pairs are "
                         "all positive\n",
                         s);
            warned_uniform = true;
        }
        auto t1 = std::chrono::steady_clock::now();
        history.push_back({s, stats.loss, stats.tau,
                           std::chrono::duration<double, std::milli>(t1 - t0).count()});
        if (checkpoint_every > 0 && on_checkpoint && (s + 1) % checkpoint_every == 0)
            on_checkpoint(s + 1);
    }
    if (on_checkpoint) on_checkpoint(cfg.steps);
    return history;
}

// ---------------------------------------------------------------------------
// Adapter checkpoint file
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[9] = "FAMSECK1";

template <typename T>
struct AdapterCheckpoint {
    AdapterSet<T> adapters;
    double tau = 0.07;
    std::string encoder_fingerprint;
};

// Container: header (magic, version, rank, scale, dropout_p, tau, encoder
// fingerprint, site count) then per site "block{i}.{projection}" -> up
// (d x r) and down (r x k) matrices, both dense float32 little-endian.
template <typename T>
void save_adapter_checkpoint(const fs::path& path, const AdapterSet<T>& adapters, double tau,
                             const std::string& encoder_fingerprint) {
    auto os = open_out(path);
    os.write(kCheckpointMagic, 8);
    write_le<std::uint32_t>(os, 1);
    write_le<std::uint32_t>(os, std::uint32_t(adapters.config.rank));
    write_le<float>(os, float(adapters.config.scale));
    write_le<float>(os, float(adapters.config.dropout_p));
    write_le<double>(os, tau);
    write_str(os, encoder_fingerprint);
    write_le<std::uint32_t>(os, std::uint32_t(adapters.sites.size()));
    for (const auto& [site, f] : adapters.sites) {
        write_str(os, site_id(site));
        write_matrix_f32(os, f.up);
        write_matrix_f32(os, f.down);
    }
    FAMSEC_REQUIRE(bool(os), load_error, "failed writing checkpoint " + path.string());
}

template <typename T>
AdapterCheckpoint<T> load_adapter_checkpoint(const fs::path& path) {
    if (!fs::exists(path)) throw load_error("checkpoint not found: " + path.string());
    auto is = open_in(path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::string(magic, 8) != std::string(kCheckpointMagic, 8))
        throw load_error("not an adapter checkpoint: " + path.string());
    auto version = read_le<std::uint32_t>(is);
    if (version != 1) throw load_error("unsupported checkpoint version");
    AdapterCheckpoint<T> ck;
    ck.adapters.config.rank = int(read_le<std::uint32_t>(is));
    ck.adapters.config.scale = double(read_le<float>(is));
    ck.adapters.config.dropout_p = double(read_le<float>(is));
    ck.tau = read_le<double>(is);
    ck.encoder_fingerprint = read_str(is);
    auto count = read_le<std::uint32_t>(is);
    ck.adapters.config.projections.clear();
    int min_block = -1;
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string id = read_str(is);
        auto dotpos = id.find('.');
        if (dotpos == std::string::npos || id.rfind("block", 0) != 0)
            throw load_error("checkpoint: bad site id '" + id + "'");
        int block = std::stoi(id.substr(5, dotpos - 5));
        auto proj = projection_from_string(id.substr(dotpos + 1));
        if (!proj) throw load_error("checkpoint: bad projection in site id '" + id + "'");
        LoraFactors<T> f;
        f.up = read_matrix_f32<T>(is);
        f.down = read_matrix_f32<T>(is);
        f.rank = f.up.cols();
        f.scale = T(ck.adapters.config.scale);
        f.dropout_p = T(ck.adapters.config.dropout_p);
        if (f.down.rows() != f.rank)
            throw load_error("checkpoint: factor rank mismatch in site " + id);
        ck.adapters.sites.emplace(AdapterSite{block, *proj}, std::move(f));
        ck.adapters.config.projections.insert(*proj);
        if (min_block < 0 || block < min_block) min_block = block;
    }
    return ck;
}

// Attach loaded factors to an encoder, enforcing the fingerprint contract.
template <typename T>
AdapterSet<T> attach_checkpoint(const AdapterCheckpoint<T>& ck, const Encoder<T>& enc) {
    if (!ck.encoder_fingerprint.empty() && ck.encoder_fingerprint != fingerprint(enc))
        throw load_error("checkpoint was trained on encoder " + ck.encoder_fingerprint +
                         " but this encoder is " + fingerprint(enc));
    for (const auto& [site, f] : ck.adapters.sites) {
        FAMSEC_REQUIRE(site.block_index < enc.spec().depth, load_error,
                       "checkpoint site " + site_id(site) + " outside encoder depth");
        FAMSEC_REQUIRE(f.up.rows() == enc.spec().width && f.down.cols() == enc.spec().width,
                       load_error, "checkpoint factor shapes do not match encoder width");
    }
    AdapterSet<T> out = ck.adapters;
    out.config.adapted_block_count =
        out.sites.empty() ? 0
                          : enc.spec().depth - out.sites.begin()->first.block_index;
    return out;
}

}  // namespace famsec
