// Copyright (c) 2026 the famsec authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <thread>
#include <type_traits>
#include <vector>

#include "famsec/common.hpp"
#include "famsec/image.hpp"
#include "famsec/io.hpp"
#include "famsec/lora.hpp"
#include "famsec/matrix.hpp"
#include "famsec/rng.hpp"

namespace famsec {

enum class Pooling { class_token, mean_pool };

inline const char* to_string(Pooling p) {
    return p == Pooling::class_token ? "class_token" : "mean_pool";
}

// Architecture of a vision-transformer encoder. The default matches the
// CLIP ViT-L/14 visual tower; EncoderSpec::toy() is the desk-scale variant
// used throughout the tests.
struct EncoderSpec {
    int image_size = 224;
    int patch_size = 14;
    int depth = 24;
    int width = 1024;
    int heads = 16;
    int embed_dim = 768;
    Pooling pooling = Pooling::class_token;

    static EncoderSpec toy() {
        EncoderSpec s;
        s.image_size = 32;
        s.patch_size = 8;
        s.depth = 4;
        s.width = 64;
        s.heads = 4;
        s.embed_dim = 32;
        return s;
    }

    void validate() const {
        FAMSEC_REQUIRE(image_size >= 1 && patch_size >= 1 && depth >= 1 && width >= 1 &&
                           heads >= 1 && embed_dim >= 1,
                       config_error, "encoder spec: all dimensions must be positive");
        FAMSEC_REQUIRE(image_size % patch_size == 0, config_error,
                       "encoder spec: image_size must be divisible by patch_size");
        FAMSEC_REQUIRE(width % heads == 0, config_error,
                       "encoder spec: width must be divisible by heads");
    }

    int patches_per_side() const { return image_size / patch_size; }
    int patch_count() const { return patches_per_side() * patches_per_side(); }
    int token_count() const { return patch_count() + 1; }  // + class token
    int patch_dim() const { return patch_size * patch_size * 3; }
    int head_dim() const { return width / heads; }

    bool operator==(const EncoderSpec&) const = default;

    std::string describe() const {
        return "i" + std::to_string(image_size) + "p" + std::to_string(patch_size) + "d" +
               std::to_string(depth) + "w" + std::to_string(width) + "h" + std::to_string(heads) +
               "e" + std::to_string(embed_dim) + (pooling == Pooling::class_token ? ".ct" : ".mp");
    }
};

template <typename T>
struct BlockParams {
    Matrix<T> ln1_g, ln1_b;
    Matrix<T> wq, bq, wk, bk, wv, bv, wo, bo;  // weights are (out x in), biases (1 x out)
    Matrix<T> ln2_g, ln2_b;
    Matrix<T> fc1_w, fc1_b;  // width -> 4*width
    Matrix<T> fc2_w, fc2_b;  // 4*width -> width
};

template <typename T>
struct EncoderParams {
    Matrix<T> patch_w, patch_b;  // patch_dim -> width
    Matrix<T> cls;               // 1 x width
    Matrix<T> pos;               // tokens x width
    std::vector<BlockParams<T>> blocks;
    Matrix<T> lnf_g, lnf_b;
    Matrix<T> proj;  // embed_dim x width
};

// Visits every parameter matrix in a fixed, documented order. Serialization,
// checksums, fingerprints and the optimizer all share this order.
template <typename T, typename F>
void for_each_param(EncoderParams<T>& p, F&& f) {
    f("patch_w", p.patch_w);
    f("patch_b", p.patch_b);
    f("cls", p.cls);
    f("pos", p.pos);
    for (std::size_t b = 0; b < p.blocks.size(); ++b) {
        auto& blk = p.blocks[b];
        const std::string pre = "block" + std::to_string(b) + ".";
        f(pre + "ln1_g", blk.ln1_g);
        f(pre + "ln1_b", blk.ln1_b);
        f(pre + "wq", blk.wq);
        f(pre + "bq", blk.bq);
        f(pre + "wk", blk.wk);
        f(pre + "bk", blk.bk);
        f(pre + "wv", blk.wv);
        f(pre + "bv", blk.bv);
        f(pre + "wo", blk.wo);
        f(pre + "bo", blk.bo);
        f(pre + "ln2_g", blk.ln2_g);
        f(pre + "ln2_b", blk.ln2_b);
        f(pre + "fc1_w", blk.fc1_w);
        f(pre + "fc1_b", blk.fc1_b);
        f(pre + "fc2_w", blk.fc2_w);
        f(pre + "fc2_b", blk.fc2_b);
    }
    f("lnf_g", p.lnf_g);
    f("lnf_b", p.lnf_b);
    f("proj", p.proj);
}

template <typename T, typename F>
void for_each_param(const EncoderParams<T>& p, F&& f) {
    for_each_param(const_cast<EncoderParams<T>&>(p),
                   [&](const std::string& n, Matrix<T>& m) { f(n, std::as_const(m)); });
}

// A configured encoder. Parameters are held by shared_ptr so a frozen guide
// and an adapted extractor can share one copy of the base weights.
template <typename T>
class Encoder {
public:
    Encoder() = default;
    Encoder(EncoderSpec spec, std::shared_ptr<EncoderParams<T>> params)
        : spec_(spec), params_(std::move(params)) {}

    const EncoderSpec& spec() const { return spec_; }
    const EncoderParams<T>& params() const { return *params_; }
    EncoderParams<T>& mutable_params() { return *params_; }
    const std::shared_ptr<EncoderParams<T>>& shared_params() const { return params_; }

    bool shares_params_with(const Encoder& other) const { return params_ == other.params_; }

    // Deep copy of the parameter block; used when a training mode needs to
    // mutate base weights without touching the guide.
    Encoder clone_params() const {
        return Encoder(spec_, std::make_shared<EncoderParams<T>>(*params_));
    }

private:
    EncoderSpec spec_;
    std::shared_ptr<EncoderParams<T>> params_;
};

namespace detail {

template <typename T>
Matrix<T> gaussian_matrix(int rows, int cols, double stddev, Rng& rng) {
    Matrix<T> m(rows, cols);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = T(rng.normal(0.0, stddev));
    return m;
}

template <typename T>
Matrix<T> const_matrix(int rows, int cols, T v) {
    Matrix<T> m(rows, cols);
    m.fill(v);
    return m;
}

}  // namespace detail

// Deterministic from-scratch initialization. Xavier-style scales keep the
// random feature extractor numerically healthy at any depth.
template <typename T>
Encoder<T> build_encoder(const EncoderSpec& spec, std::uint64_t seed) {
    spec.validate();
    Rng rng(mix_seed(seed, 0x5649540aULL));
    auto p = std::make_shared<EncoderParams<T>>();
    const int w = spec.width;
    auto xavier = [&](int rows, int cols) {
        return detail::gaussian_matrix<T>(rows, cols, std::sqrt(2.0 / (rows + cols)), rng);
    };
    p->patch_w = xavier(w, spec.patch_dim());
    p->patch_b = Matrix<T>(1, w);
    p->cls = detail::gaussian_matrix<T>(1, w, 0.02, rng);
    p->pos = detail::gaussian_matrix<T>(spec.token_count(), w, 0.02, rng);
    p->blocks.resize(std::size_t(spec.depth));
    for (auto& blk : p->blocks) {
        blk.ln1_g = detail::const_matrix<T>(1, w, T(1));
        blk.ln1_b = Matrix<T>(1, w);
        blk.wq = xavier(w, w);
        blk.bq = Matrix<T>(1, w);
        blk.wk = xavier(w, w);
        blk.bk = Matrix<T>(1, w);
        blk.wv = xavier(w, w);
        blk.bv = Matrix<T>(1, w);
        blk.wo = xavier(w, w);
        blk.bo = Matrix<T>(1, w);
        blk.ln2_g = detail::const_matrix<T>(1, w, T(1));
        blk.ln2_b = Matrix<T>(1, w);
        blk.fc1_w = xavier(4 * w, w);
        blk.fc1_b = Matrix<T>(1, 4 * w);
        blk.fc2_w = xavier(w, 4 * w);
        blk.fc2_b = Matrix<T>(1, w);
    }
    p->lnf_g = detail::const_matrix<T>(1, w, T(1));
    p->lnf_b = Matrix<T>(1, w);
    p->proj = xavier(spec.embed_dim, w);
    return Encoder<T>(spec, std::move(p));
}

// Bitwise checksum over the raw parameter bytes, for frozen-weight
// conservation checks.
template <typename T>
std::uint64_t param_checksum(const Encoder<T>& enc) {
    Fnv64 h;
    for_each_param(enc.params(), [&](const std::string&, const Matrix<T>& m) {
        h.update(m.data(), m.size() * sizeof(T));
    });
    return h.digest();
}

// Hash of the float32 serialization; stable across a save/load round trip.
template <typename T>
std::uint64_t param_hash_f32(const Encoder<T>& enc) {
    Fnv64 h;
    for_each_param(enc.params(), [&](const std::string&, const Matrix<T>& m) {
        for (std::size_t i = 0; i < m.size(); ++i) {
            float f = float(m.data()[i]);
            h.update(&f, sizeof(f));
        }
    });
    return h.digest();
}

template <typename T>
std::string fingerprint(const Encoder<T>& enc) {
    return "vit." + enc.spec().describe() + "-" + hex64(param_hash_f32(enc));
}

// Fingerprint of the full embedding function: base weights plus adapter
// state. A bank built from one adapter state will not silently match an
// extractor that trained further.
template <typename T>
std::string fingerprint(const Encoder<T>& enc, const AdapterSet<T>& adapters) {
    if (adapters.sites.empty()) return fingerprint(enc);
    Fnv64 h;
    h.update_value(param_hash_f32(enc));
    for (const auto& [site, f] : adapters.sites) {
        std::string id = site_id(site);
        h.update(id.data(), id.size());
        auto hash_m = [&](const Matrix<T>& m) {
            for (std::size_t i = 0; i < m.size(); ++i) {
                float v = float(m.data()[i]);
                h.update(&v, sizeof(v));
            }
        };
        hash_m(f.up);
        hash_m(f.down);
    }
    return "vit." + enc.spec().describe() + "+fam-" + hex64(h.digest());
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

namespace vitdetail {

template <typename T>
inline T gelu(T x) {
    return T(0.5) * x * (T(1) + std::erf(x * T(0.7071067811865475)));
}

template <typename T>
inline T gelu_grad(T x) {
    const T cdf = T(0.5) * (T(1) + std::erf(x * T(0.7071067811865475)));
    const T pdf = std::exp(T(-0.5) * x * x) * T(0.3989422804014327);
    return cdf + x * pdf;
}

constexpr double kLnEps = 1e-5;

template <typename T>
struct LnCache {
    Matrix<T> xhat;
    std::vector<T> inv_std;
};

// y = gamma * (x - mean)/std + beta, per row.
template <typename T>
Matrix<T> layer_norm(const Matrix<T>& x, const Matrix<T>& gamma, const Matrix<T>& beta,
                     LnCache<T>* cache) {
    const int rows = x.rows(), cols = x.cols();
    Matrix<T> y(rows, cols);
    if (cache) {
        cache->xhat = Matrix<T>(rows, cols);
        cache->inv_std.assign(std::size_t(rows), T(0));
    }
    for (int i = 0; i < rows; ++i) {
        const T* xi = x.row(i);
        T mean{};
        for (int j = 0; j < cols; ++j) mean += xi[j];
        mean /= T(cols);
        T var{};
        for (int j = 0; j < cols; ++j) {
            T d = xi[j] - mean;
            var += d * d;
        }
        var /= T(cols);
        T inv_std = T(1) / std::sqrt(var + T(kLnEps));
        T* yi = y.row(i);
        for (int j = 0; j < cols; ++j) {
            T xh = (xi[j] - mean) * inv_std;
            yi[j] = gamma(0, j) * xh + beta(0, j);
            if (cache) cache->xhat(i, j) = xh;
        }
        if (cache) cache->inv_std[std::size_t(i)] = inv_std;
    }
    return y;
}

template <typename T>
Matrix<T> layer_norm_backward(const Matrix<T>& dy, const Matrix<T>& gamma, const LnCache<T>& c,
                              Matrix<T>* dgamma, Matrix<T>* dbeta) {
    const int rows = dy.rows(), cols = dy.cols();
    Matrix<T> dx(rows, cols);
    for (int i = 0; i < rows; ++i) {
        const T* dyi = dy.row(i);
        const T* xh = c.xhat.row(i);
        T m1{}, m2{};
        for (int j = 0; j < cols; ++j) {
            T g = gamma(0, j) * dyi[j];
            m1 += g;
            m2 += g * xh[j];
        }
        m1 /= T(cols);
        m2 /= T(cols);
        const T inv_std = c.inv_std[std::size_t(i)];
        T* dxi = dx.row(i);
        for (int j = 0; j < cols; ++j)
            dxi[j] = inv_std * (gamma(0, j) * dyi[j] - m1 - xh[j] * m2);
    }
    if (dgamma) {
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j) {
                (*dgamma)(0, j) += dy(i, j) * c.xhat(i, j);
                (*dbeta)(0, j) += dy(i, j);
            }
    }
    return dx;
}

template <typename T>
void add_bias(Matrix<T>& y, const Matrix<T>& b) {
    for (int i = 0; i < y.rows(); ++i) {
        T* yi = y.row(i);
        for (int j = 0; j < y.cols(); ++j) yi[j] += b(0, j);
    }
}

template <typename T>
struct LoraSiteCache {
    bool active = false;
    Matrix<T> xd;    // branch input after dropout
    Matrix<T> h;     // xd * down^T
    Matrix<T> mask;  // empty when dropout was off
};

// y = x W^T + b (+ adapter branch). The cache captures what the backward
// pass needs for both the base matrix and the factors.
template <typename T>
Matrix<T> linear_adapted(const Matrix<T>& x, const Matrix<T>& w, const Matrix<T>& b,
                         const LoraFactors<T>* lora, bool training, Rng* rng,
                         LoraSiteCache<T>* cache) {
    Matrix<T> y = matmul_nt(x, w);
    add_bias(y, b);
    if (!lora) {
        if (cache) cache->active = false;
        return y;
    }
    Matrix<T> xd = x;
    Matrix<T> mask;
    if (training && lora->dropout_p > T(0)) {
        FAMSEC_REQUIRE(rng != nullptr, contract_error, "training dropout requires an rng");
        mask = dropout_mask(x.rows(), x.cols(), lora->dropout_p, *rng);
        for (std::size_t i = 0; i < xd.size(); ++i) xd.data()[i] *= mask.data()[i];
    }
    Matrix<T> h = matmul_nt(xd, lora->down);
    Matrix<T> lo = matmul_nt(h, lora->up);
    for (std::size_t i = 0; i < y.size(); ++i) y.data()[i] += lora->scale * lo.data()[i];
    if (cache) {
        cache->active = true;
        cache->xd = std::move(xd);
        cache->h = std::move(h);
        cache->mask = std::move(mask);
    }
    return y;
}

template <typename T>
struct FactorGrads {
    Matrix<T> d_up;    // d x r
    Matrix<T> d_down;  // r x k
};

// Backward of linear_adapted. Returns dx; accumulates base grads (when
// requested) and factor grads (when the site was adapted).
template <typename T>
Matrix<T> linear_adapted_backward(const Matrix<T>& dy, const Matrix<T>& x, const Matrix<T>& w,
                                  const LoraFactors<T>* lora, const LoraSiteCache<T>& cache,
                                  Matrix<T>* dw, Matrix<T>* db, FactorGrads<T>* dfac) {
    Matrix<T> dx = matmul(dy, w);
    if (dw) {
        matmul_tn_acc(dy, x, *dw);
        for (int i = 0; i < dy.rows(); ++i)
            for (int j = 0; j < dy.cols(); ++j) (*db)(0, j) += dy(i, j);
    }
    if (lora && cache.active) {
        // dh = scale * dy * up ; d_up += scale * dy^T h ; d_down += dh^T xd
        Matrix<T> dh = matmul(dy, lora->up);
        for (std::size_t i = 0; i < dh.size(); ++i) dh.data()[i] *= lora->scale;
        if (dfac) {
            Matrix<T> dup(lora->up.rows(), lora->up.cols());
            matmul_tn_acc(dy, cache.h, dup);
            for (std::size_t i = 0; i < dup.size(); ++i)
                dfac->d_up.data()[i] += lora->scale * dup.data()[i];
            matmul_tn_acc(dh, cache.xd, dfac->d_down);
        }
        Matrix<T> dxd = matmul(dh, lora->down);
        if (!cache.mask.empty()) {
            for (std::size_t i = 0; i < dxd.size(); ++i) dxd.data()[i] *= cache.mask.data()[i];
        }
        for (std::size_t i = 0; i < dx.size(); ++i) dx.data()[i] += dxd.data()[i];
    }
    return dx;
}

template <typename T>
struct BlockCache {
    Matrix<T> x0;  // block input
    LnCache<T> ln1;
    Matrix<T> xn1;
    Matrix<T> q, k, v;
    std::vector<Matrix<T>> attn;  // per-head softmax rows, each T x T
    Matrix<T> ctx;
    LoraSiteCache<T> cq, ck, cv, co;
    Matrix<T> x1;  // after attention residual
    LnCache<T> ln2;
    Matrix<T> xn2;
    Matrix<T> h_pre, h_act;
};

template <typename T>
struct ForwardCache {
    Matrix<T> patches;  // patch_count x patch_dim
    Matrix<T> tokens;   // input to block 0
    std::vector<BlockCache<T>> blocks;
    LnCache<T> lnf;
    Matrix<T> xnf;
    std::vector<T> pooled;
    std::vector<T> embedding;
};

}  // namespace vitdetail

template <typename T>
Matrix<T> patchify(const EncoderSpec& spec, const Image& img) {
    FAMSEC_REQUIRE(img.height == spec.image_size && img.width == spec.image_size, contract_error,
                   "patchify: image size " + std::to_string(img.height) + "x" +
                       std::to_string(img.width) + " does not match encoder input " +
                       std::to_string(spec.image_size));
    const int ps = spec.patch_size, per_side = spec.patches_per_side();
    Matrix<T> out(spec.patch_count(), spec.patch_dim());
    for (int py = 0; py < per_side; ++py)
        for (int px = 0; px < per_side; ++px) {
            T* row = out.row(py * per_side + px);
            int at = 0;
            for (int dy = 0; dy < ps; ++dy)
                for (int dx = 0; dx < ps; ++dx)
                    for (int c = 0; c < 3; ++c)
                        row[at++] = T(img.at(py * ps + dy, px * ps + dx, c));
        }
    return out;
}

// Full encoder forward pass for one image. `adapters` may be null (plain
// encoder). In training mode the adapter branches apply dropout drawn from
// `rng`, and `cache` (when non-null) records everything backward needs.
template <typename T>
std::vector<T> encode_image(const Encoder<T>& enc, const std::type_identity_t<AdapterSet<T>>* adapters,
                            const Image& img, bool training = false, Rng* rng = nullptr,
                            std::type_identity_t<vitdetail::ForwardCache<T>>* cache = nullptr) {
    using namespace vitdetail;
    const EncoderSpec& spec = enc.spec();
    const EncoderParams<T>& P = enc.params();
    const int tokens = spec.token_count(), w = spec.width, heads = spec.heads,
              dh = spec.head_dim();
    const T inv_sqrt_dh = T(1) / std::sqrt(T(dh));

    Matrix<T> patches = patchify<T>(spec, img);
    Matrix<T> x(tokens, w);
    {
        Matrix<T> pe = matmul_nt(patches, P.patch_w);
        add_bias(pe, P.patch_b);
        for (int j = 0; j < w; ++j) x(0, j) = P.cls(0, j) + P.pos(0, j);
        for (int i = 1; i < tokens; ++i)
            for (int j = 0; j < w; ++j) x(i, j) = pe(i - 1, j) + P.pos(i, j);
    }
    if (cache) {
        cache->patches = patches;
        cache->tokens = x;
        cache->blocks.assign(std::size_t(spec.depth), BlockCache<T>{});
    }

    for (int b = 0; b < spec.depth; ++b) {
        const BlockParams<T>& blk = P.blocks[std::size_t(b)];
        BlockCache<T>* bc = cache ? &cache->blocks[std::size_t(b)] : nullptr;
        if (bc) bc->x0 = x;

        LnCache<T> ln1;
        Matrix<T> xn1 = layer_norm(x, blk.ln1_g, blk.ln1_b, bc ? &ln1 : nullptr);

        auto site = [&](Projection p) {
            return adapters ? adapters->find(b, p) : nullptr;
        };
        Matrix<T> q = linear_adapted(xn1, blk.wq, blk.bq, site(Projection::query), training, rng,
                                     bc ? &bc->cq : nullptr);
        Matrix<T> k = linear_adapted(xn1, blk.wk, blk.bk, site(Projection::key), training, rng,
                                     bc ? &bc->ck : nullptr);
        Matrix<T> v = linear_adapted(xn1, blk.wv, blk.bv, site(Projection::value), training, rng,
                                     bc ? &bc->cv : nullptr);

        Matrix<T> ctx(tokens, w);
        std::vector<Matrix<T>> attn;
        if (bc) attn.assign(std::size_t(heads), Matrix<T>{});
        for (int h = 0; h < heads; ++h) {
            const int off = h * dh;
            Matrix<T> scores(tokens, tokens);
            for (int i = 0; i < tokens; ++i) {
                const T* qi = q.row(i) + off;
                T* si = scores.row(i);
                for (int j = 0; j < tokens; ++j) {
                    const T* kj = k.row(j) + off;
                    T s{};
                    for (int d = 0; d < dh; ++d) s += qi[d] * kj[d];
                    si[j] = s * inv_sqrt_dh;
                }
                // softmax row, max-subtracted
                T mx = si[0];
                for (int j = 1; j < tokens; ++j) mx = std::max(mx, si[j]);
                T sum{};
                for (int j = 0; j < tokens; ++j) {
                    si[j] = std::exp(si[j] - mx);
                    sum += si[j];
                }
                const T inv = T(1) / sum;
                for (int j = 0; j < tokens; ++j) si[j] *= inv;
            }
            for (int i = 0; i < tokens; ++i) {
                const T* pi = scores.row(i);
                T* ci = ctx.row(i) + off;
                for (int j = 0; j < tokens; ++j) {
                    const T pij = pi[j];
                    const T* vj = v.row(j) + off;
                    for (int d = 0; d < dh; ++d) ci[d] += pij * vj[d];
                }
            }
            if (bc) attn[std::size_t(h)] = std::move(scores);
        }

        Matrix<T> attn_out = linear_adapted(ctx, blk.wo, blk.bo, site(Projection::output),
                                            training, rng, bc ? &bc->co : nullptr);
        Matrix<T> x1 = x;
        for (std::size_t i = 0; i < x1.size(); ++i) x1.data()[i] += attn_out.data()[i];

        LnCache<T> ln2;
        Matrix<T> xn2 = layer_norm(x1, blk.ln2_g, blk.ln2_b, bc ? &ln2 : nullptr);
        Matrix<T> h_pre = matmul_nt(xn2, blk.fc1_w);
        add_bias(h_pre, blk.fc1_b);
        Matrix<T> h_act(h_pre.rows(), h_pre.cols());
        for (std::size_t i = 0; i < h_pre.size(); ++i) h_act.data()[i] = gelu(h_pre.data()[i]);
        Matrix<T> mlp_out = matmul_nt(h_act, blk.fc2_w);
        add_bias(mlp_out, blk.fc2_b);

        Matrix<T> x_next = x1;
        for (std::size_t i = 0; i < x_next.size(); ++i) x_next.data()[i] += mlp_out.data()[i];

        if (bc) {
            bc->ln1 = std::move(ln1);
            bc->xn1 = std::move(xn1);
            bc->q = std::move(q);
            bc->k = std::move(k);
            bc->v = std::move(v);
            bc->attn = std::move(attn);
            bc->ctx = std::move(ctx);
            bc->x1 = std::move(x1);
            bc->ln2 = std::move(ln2);
            bc->xn2 = std::move(xn2);
            bc->h_pre = std::move(h_pre);
            bc->h_act = std::move(h_act);
        }
        x = std::move(x_next);
    }

    LnCache<T> lnf;
    Matrix<T> xnf = layer_norm(x, P.lnf_g, P.lnf_b, cache ? &lnf : nullptr);

    std::vector<T> pooled(std::size_t(w), T(0));
    if (spec.pooling == Pooling::class_token) {
        for (int j = 0; j < w; ++j) pooled[std::size_t(j)] = xnf(0, j);
    } else {
        for (int i = 0; i < tokens; ++i)
            for (int j = 0; j < w; ++j) pooled[std::size_t(j)] += xnf(i, j) / T(tokens);
    }

    std::vector<T> emb(std::size_t(spec.embed_dim), T(0));
    for (int e = 0; e < spec.embed_dim; ++e) emb[std::size_t(e)] = dot(P.proj.row(e), pooled.data(), w);

    if (cache) {
        cache->lnf = std::move(lnf);
        cache->xnf = std::move(xnf);
        cache->pooled = pooled;
        cache->embedding = emb;
    }
    return emb;
}

// Gradient mirrors of the parameter structs.
template <typename T>
struct EncoderGrads {
    EncoderParams<T> g;

    explicit EncoderGrads(const Encoder<T>& enc) {
        g.blocks.resize(enc.params().blocks.size());
        auto& src = enc.params();
        auto shape = [](Matrix<T>& dst, const Matrix<T>& like) {
            dst = Matrix<T>(like.rows(), like.cols());
        };
        shape(g.patch_w, src.patch_w);
        shape(g.patch_b, src.patch_b);
        shape(g.cls, src.cls);
        shape(g.pos, src.pos);
        for (std::size_t b = 0; b < src.blocks.size(); ++b) {
            auto& d = g.blocks[b];
            auto& s = src.blocks[b];
            shape(d.ln1_g, s.ln1_g);
            shape(d.ln1_b, s.ln1_b);
            shape(d.wq, s.wq);
            shape(d.bq, s.bq);
            shape(d.wk, s.wk);
            shape(d.bk, s.bk);
            shape(d.wv, s.wv);
            shape(d.bv, s.bv);
            shape(d.wo, s.wo);
            shape(d.bo, s.bo);
            shape(d.ln2_g, s.ln2_g);
            shape(d.ln2_b, s.ln2_b);
            shape(d.fc1_w, s.fc1_w);
            shape(d.fc1_b, s.fc1_b);
            shape(d.fc2_w, s.fc2_w);
            shape(d.fc2_b, s.fc2_b);
        }
        shape(g.lnf_g, src.lnf_g);
        shape(g.lnf_b, src.lnf_b);
        shape(g.proj, src.proj);
    }
};

template <typename T>
struct AdapterGrads {
    std::map<AdapterSite, vitdetail::FactorGrads<T>> sites;

    explicit AdapterGrads(const AdapterSet<T>& adapters) {
        for (const auto& [site, f] : adapters.sites) {
            vitdetail::FactorGrads<T> fg;
            fg.d_up = Matrix<T>(f.up.rows(), f.up.cols());
            fg.d_down = Matrix<T>(f.down.rows(), f.down.cols());
            sites.emplace(site, std::move(fg));
        }
    }

    void add_scaled(const AdapterGrads& other, T alpha) {
        for (auto& [site, fg] : sites) {
            const auto& o = other.sites.at(site);
            for (std::size_t i = 0; i < fg.d_up.size(); ++i)
                fg.d_up.data()[i] += alpha * o.d_up.data()[i];
            for (std::size_t i = 0; i < fg.d_down.size(); ++i)
                fg.d_down.data()[i] += alpha * o.d_down.data()[i];
        }
    }
};

// Backward pass for one image. `d_embedding` seeds the gradient at the
// encoder output. Adapter grads accumulate into `ad_grads` (if given); base
// parameter grads into `base_grads` (if given — the full fine-tune path).
template <typename T>
void encode_backward(const Encoder<T>& enc, const std::type_identity_t<AdapterSet<T>>* adapters,
                     const std::type_identity_t<vitdetail::ForwardCache<T>>& cache,
                     const std::vector<T>& d_embedding,
                     std::type_identity_t<EncoderGrads<T>>* base_grads,
                     std::type_identity_t<AdapterGrads<T>>* ad_grads) {
    using namespace vitdetail;
    const EncoderSpec& spec = enc.spec();
    const EncoderParams<T>& P = enc.params();
    const int tokens = spec.token_count(), w = spec.width, heads = spec.heads,
              dh = spec.head_dim();
    const T inv_sqrt_dh = T(1) / std::sqrt(T(dh));
    FAMSEC_REQUIRE(int(d_embedding.size()) == spec.embed_dim, contract_error,
                   "encode_backward: bad seed gradient length");

    // Projection head.
    std::vector<T> dpooled(std::size_t(w), T(0));
    for (int e = 0; e < spec.embed_dim; ++e) {
        const T de = d_embedding[std::size_t(e)];
        if (base_grads) axpy(de, cache.pooled.data(), base_grads->g.proj.row(e), w);
        axpy(de, P.proj.row(e), dpooled.data(), w);
    }

    Matrix<T> dxnf(tokens, w);
    if (spec.pooling == Pooling::class_token) {
        for (int j = 0; j < w; ++j) dxnf(0, j) = dpooled[std::size_t(j)];
    } else {
        for (int i = 0; i < tokens; ++i)
            for (int j = 0; j < w; ++j) dxnf(i, j) = dpooled[std::size_t(j)] / T(tokens);
    }

    Matrix<T> dx = layer_norm_backward(dxnf, P.lnf_g, cache.lnf,
                                       base_grads ? &base_grads->g.lnf_g : nullptr,
                                       base_grads ? &base_grads->g.lnf_b : nullptr);

    for (int b = spec.depth - 1; b >= 0; --b) {
        const BlockParams<T>& blk = P.blocks[std::size_t(b)];
        const BlockCache<T>& bc = cache.blocks[std::size_t(b)];
        auto* bg = base_grads ? &base_grads->g.blocks[std::size_t(b)] : nullptr;
        auto site = [&](Projection p) { return adapters ? adapters->find(b, p) : nullptr; };
        auto fac_grad = [&](Projection p) -> FactorGrads<T>* {
            if (!ad_grads) return nullptr;
            auto it = ad_grads->sites.find(AdapterSite{b, p});
            return it == ad_grads->sites.end() ? nullptr : &it->second;
        };

        // ---- MLP ----
        // dx arrives at the block output: x_next = x1 + mlp_out.
        Matrix<T>& dmlp_out = dx;  // alias: same tensor seeds both paths
        Matrix<T> dh_act = matmul(dmlp_out, blk.fc2_w);
        if (bg) {
            matmul_tn_acc(dmlp_out, bc.h_act, bg->fc2_w);
            for (int i = 0; i < tokens; ++i)
                for (int j = 0; j < w; ++j) bg->fc2_b(0, j) += dmlp_out(i, j);
        }
        Matrix<T> dh_pre(dh_act.rows(), dh_act.cols());
        for (std::size_t i = 0; i < dh_pre.size(); ++i)
            dh_pre.data()[i] = dh_act.data()[i] * gelu_grad(bc.h_pre.data()[i]);
        Matrix<T> dxn2 = matmul(dh_pre, blk.fc1_w);
        if (bg) {
            matmul_tn_acc(dh_pre, bc.xn2, bg->fc1_w);
            for (int i = 0; i < tokens; ++i)
                for (int j = 0; j < 4 * w; ++j) bg->fc1_b(0, j) += dh_pre(i, j);
        }
        Matrix<T> dx1 = layer_norm_backward(dxn2, blk.ln2_g, bc.ln2, bg ? &bg->ln2_g : nullptr,
                                            bg ? &bg->ln2_b : nullptr);
        for (std::size_t i = 0; i < dx1.size(); ++i) dx1.data()[i] += dx.data()[i];  // residual

        // ---- attention ----
        // x1 = x0 + attn_out
        Matrix<T> dctx = linear_adapted_backward(dx1, bc.ctx, blk.wo, site(Projection::output),
                                                 bc.co, bg ? &bg->wo : nullptr,
                                                 bg ? &bg->bo : nullptr, fac_grad(Projection::output));

        Matrix<T> dq(tokens, w), dk(tokens, w), dv(tokens, w);
        for (int h = 0; h < heads; ++h) {
            const int off = h * dh;
            const Matrix<T>& probs = bc.attn[std::size_t(h)];
            // dP = dctx_h V_h^T ; dV = P^T dctx_h
            Matrix<T> dprobs(tokens, tokens);
            for (int i = 0; i < tokens; ++i) {
                const T* dci = dctx.row(i) + off;
                for (int j = 0; j < tokens; ++j) {
                    const T* vj = bc.v.row(j) + off;
                    T s{};
                    for (int d = 0; d < dh; ++d) s += dci[d] * vj[d];
                    dprobs(i, j) = s;
                }
            }
            for (int i = 0; i < tokens; ++i) {
                const T* pi = probs.row(i);
                const T* dci = dctx.row(i) + off;
                for (int j = 0; j < tokens; ++j) {
                    T* dvj = dv.row(j) + off;
                    const T pij = pi[j];
                    for (int d = 0; d < dh; ++d) dvj[d] += pij * dci[d];
                }
            }
            // softmax backward per row, then distribute to q and k
            for (int i = 0; i < tokens; ++i) {
                const T* pi = probs.row(i);
                T* dpi = dprobs.row(i);
                T inner{};
                for (int j = 0; j < tokens; ++j) inner += dpi[j] * pi[j];
                for (int j = 0; j < tokens; ++j) dpi[j] = pi[j] * (dpi[j] - inner);
            }
            for (int i = 0; i < tokens; ++i) {
                const T* dsi = dprobs.row(i);
                T* dqi = dq.row(i) + off;
                const T* qi = bc.q.row(i) + off;
                for (int j = 0; j < tokens; ++j) {
                    const T g = dsi[j] * inv_sqrt_dh;
                    if (g == T{}) continue;
                    const T* kj = bc.k.row(j) + off;
                    T* dkj = dk.row(j) + off;
                    for (int d = 0; d < dh; ++d) {
                        dqi[d] += g * kj[d];
                        dkj[d] += g * qi[d];
                    }
                }
            }
        }

        Matrix<T> dxn1 = linear_adapted_backward(dq, bc.xn1, blk.wq, site(Projection::query),
                                                 bc.cq, bg ? &bg->wq : nullptr,
                                                 bg ? &bg->bq : nullptr, fac_grad(Projection::query));
        {
            Matrix<T> t = linear_adapted_backward(dk, bc.xn1, blk.wk, site(Projection::key), bc.ck,
                                                  bg ? &bg->wk : nullptr, bg ? &bg->bk : nullptr,
                                                  fac_grad(Projection::key));
            for (std::size_t i = 0; i < dxn1.size(); ++i) dxn1.data()[i] += t.data()[i];
            t = linear_adapted_backward(dv, bc.xn1, blk.wv, site(Projection::value), bc.cv,
                                        bg ? &bg->wv : nullptr, bg ? &bg->bv : nullptr,
                                        fac_grad(Projection::value));
            for (std::size_t i = 0; i < dxn1.size(); ++i) dxn1.data()[i] += t.data()[i];
        }
        Matrix<T> dx0 = layer_norm_backward(dxn1, blk.ln1_g, bc.ln1, bg ? &bg->ln1_g : nullptr,
                                            bg ? &bg->ln1_b : nullptr);
        for (std::size_t i = 0; i < dx0.size(); ++i) dx0.data()[i] += dx1.data()[i];  // residual
        dx = std::move(dx0);
    }

    if (base_grads) {
        // token assembly: x = [cls; patch_embed] + pos
        for (int i = 0; i < tokens; ++i)
            for (int j = 0; j < w; ++j) base_grads->g.pos(i, j) += dx(i, j);
        for (int j = 0; j < w; ++j) base_grads->g.cls(0, j) += dx(0, j);
        // patch embedding
        Matrix<T> dpe(tokens - 1, w);
        for (int i = 1; i < tokens; ++i)
            for (int j = 0; j < w; ++j) dpe(i - 1, j) = dx(i, j);
        matmul_tn_acc(dpe, cache.patches, base_grads->g.patch_w);
        for (int i = 0; i < tokens - 1; ++i)
            for (int j = 0; j < w; ++j) base_grads->g.patch_b(0, j) += dpe(i, j);
    }
}

// Embeddings for a whole batch, order preserved. Eval mode is pure, so the
// images can be spread over worker threads; results land by index.
template <typename T>
Matrix<T> embed_batch(const Encoder<T>& enc, const std::type_identity_t<AdapterSet<T>>* adapters,
                      const std::vector<Image>& images, int threads = 1) {
    FAMSEC_REQUIRE(!images.empty(), contract_error, "embed_batch: empty batch");
    Matrix<T> out(int(images.size()), enc.spec().embed_dim);
    const std::size_t n = images.size();
    threads = std::max(1, std::min<int>(threads, int(n)));
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
    auto work = [&](int t) {
        try {
            for (std::size_t i = std::size_t(t); i < n; i += std::size_t(threads)) {
                auto e = encode_image(enc, adapters, images[i]);
                std::copy(e.begin(), e.end(), out.row(int(i)));
            }
        } catch (...) {
            errors[std::size_t(t)] = std::current_exception();
        }
    };
    if (threads == 1) {
        work(0);
    } else {
        std::vector<std::thread> pool;
        pool.reserve(std::size_t(threads));
        for (int t = 0; t < threads; ++t) pool.emplace_back(work, t);
        for (auto& th : pool) th.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return out;
}

// ---------------------------------------------------------------------------
// Injection, merging, pairs
// ---------------------------------------------------------------------------

// Attach fresh factors to the last `adapted_block_count` blocks. Per-site
// seeds are derived from the site identity, so the registry does not depend
// on map iteration order.
template <typename T>
AdapterSet<T> inject(const Encoder<T>& encoder, const FamConfig& config, std::uint64_t seed) {
    config.validate();
    const int depth = encoder.spec().depth;
    FAMSEC_REQUIRE(config.adapted_block_count <= depth, config_error,
                   "inject: adapted_block_count " + std::to_string(config.adapted_block_count) +
                       " exceeds encoder depth " + std::to_string(depth));
    AdapterSet<T> set;
    set.config = config;
    Rng base(mix_seed(seed, 0x4c6f5241ULL));
    const int w = encoder.spec().width;
    for (int b = depth - config.adapted_block_count; b < depth; ++b) {
        for (Projection p : config.projections) {
            AdapterSite s{b, p};
            Fnv64 h;
            std::string id = site_id(s);
            h.update(id.data(), id.size());
            set.sites.emplace(s, init_factors<T>(w, w, config, base.derive(h.digest())));
        }
    }
    return set;
}

// Encoder with all adapter deltas baked into the base matrices. Base params
// are deep-copied; the input encoder is untouched.
template <typename T>
Encoder<T> merge_adapters(const Encoder<T>& enc, const AdapterSet<T>& adapters) {
    Encoder<T> merged = enc.clone_params();
    auto& blocks = merged.mutable_params().blocks;
    for (const auto& [site, f] : adapters.sites) {
        FAMSEC_REQUIRE(site.block_index >= 0 && site.block_index < int(blocks.size()),
                       contract_error, "merge_adapters: site outside encoder depth");
        auto& blk = blocks[std::size_t(site.block_index)];
        Matrix<T>* target = nullptr;
        switch (site.projection) {
            case Projection::query: target = &blk.wq; break;
            case Projection::key: target = &blk.wk; break;
            case Projection::value: target = &blk.wv; break;
            case Projection::output: target = &blk.wo; break;
        }
        *target = merge_factors(*target, f);
    }
    return merged;
}

// Guide/extractor pairing. Both see the same base weights; the guide never
// carries adapters. When `share_base` is false the extractor gets its own
// copy (full fine-tune ablation path).
template <typename T>
struct EncoderPair {
    Encoder<T> guide;
    Encoder<T> extractor;
    AdapterSet<T> adapters;

    static EncoderPair make(const EncoderSpec& spec, std::uint64_t seed, const FamConfig& fam,
                            bool fam_on = true, bool share_base = true) {
        return from_base(build_encoder<T>(spec, seed), seed, fam, fam_on, share_base);
    }

    // Pair around an existing ("pretrained") base encoder.
    static EncoderPair from_base(Encoder<T> base, std::uint64_t seed, const FamConfig& fam,
                                 bool fam_on = true, bool share_base = true) {
        EncoderPair pair;
        pair.guide = std::move(base);
        pair.extractor = share_base ? pair.guide : pair.guide.clone_params();
        if (fam_on) pair.adapters = inject<T>(pair.extractor, fam, seed);
        return pair;
    }
};

// ---------------------------------------------------------------------------
// Weights file (the pretrained pathway)
// ---------------------------------------------------------------------------

inline constexpr char kWeightsMagic[9] = "FAMSECW1";

template <typename T>
void save_encoder(const Encoder<T>& enc, const std::filesystem::path& path) {
    auto os = open_out(path);
    os.write(kWeightsMagic, 8);
    write_le<std::uint32_t>(os, 1);  // version
    const EncoderSpec& s = enc.spec();
    write_le<std::uint32_t>(os, std::uint32_t(s.image_size));
    write_le<std::uint32_t>(os, std::uint32_t(s.patch_size));
    write_le<std::uint32_t>(os, std::uint32_t(s.depth));
    write_le<std::uint32_t>(os, std::uint32_t(s.width));
    write_le<std::uint32_t>(os, std::uint32_t(s.heads));
    write_le<std::uint32_t>(os, std::uint32_t(s.embed_dim));
    write_le<std::uint8_t>(os, s.pooling == Pooling::class_token ? 0 : 1);
    write_le<std::uint64_t>(os, param_hash_f32(enc));
    for_each_param(enc.params(), [&](const std::string&, const Matrix<T>& m) {
        write_matrix_f32(os, m);
    });
    FAMSEC_REQUIRE(bool(os), load_error, "failed writing weights to " + path.string());
}

// Load a weights file, checking that it matches the requested spec and that
// its parameter payload hashes to the recorded fingerprint.
template <typename T>
Encoder<T> attach_pretrained(const std::filesystem::path& path, const EncoderSpec& spec) {
    spec.validate();
    if (!std::filesystem::exists(path)) throw load_error("weights file not found: " + path.string());
    auto is = open_in(path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::string(magic, 8) != std::string(kWeightsMagic, 8))
        throw load_error("not an encoder weights file: " + path.string());
    auto version = read_le<std::uint32_t>(is);
    if (version != 1) throw load_error("unsupported weights version");
    EncoderSpec file_spec;
    file_spec.image_size = int(read_le<std::uint32_t>(is));
    file_spec.patch_size = int(read_le<std::uint32_t>(is));
    file_spec.depth = int(read_le<std::uint32_t>(is));
    file_spec.width = int(read_le<std::uint32_t>(is));
    file_spec.heads = int(read_le<std::uint32_t>(is));
    file_spec.embed_dim = int(read_le<std::uint32_t>(is));
    file_spec.pooling = read_le<std::uint8_t>(is) == 0 ? Pooling::class_token : Pooling::mean_pool;
    auto stored_hash = read_le<std::uint64_t>(is);
    if (!(file_spec == spec))
        throw load_error("weights file " + path.string() + " holds spec " + file_spec.describe() +
                         " but " + spec.describe() + " was requested");

    Encoder<T> enc = build_encoder<T>(spec, 0);  // shape template; contents replaced below
    for_each_param(enc.mutable_params(), [&](const std::string& name, Matrix<T>& m) {
        Matrix<T> loaded = read_matrix_f32<T>(is);
        FAMSEC_REQUIRE(loaded.rows() == m.rows() && loaded.cols() == m.cols(), load_error,
                       "weights file: parameter " + name + " has wrong shape");
        m = std::move(loaded);
    });
    if (param_hash_f32(enc) != stored_hash)
        throw load_error("weights file fingerprint mismatch (corrupt file?): " + path.string());
    return enc;
}

}  // namespace famsec
