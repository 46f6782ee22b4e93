// Copyright (c) 2026 the famsec authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "famsec/common.hpp"
#include "famsec/matrix.hpp"
#include "famsec/rng.hpp"

namespace famsec {

// Attention projections that can carry a low-rank adapter.
enum class Projection { query, key, value, output };

inline const char* to_string(Projection p) {
    switch (p) {
        case Projection::query: return "query";
        case Projection::key: return "key";
        case Projection::value: return "value";
        case Projection::output: return "output";
    }
    return "?";
}

inline std::optional<Projection> projection_from_string(const std::string& s) {
    if (s == "query") return Projection::query;
    if (s == "key") return Projection::key;
    if (s == "value") return Projection::value;
    if (s == "output") return Projection::output;
    return std::nullopt;
}

// One adapter attachment point: a projection matrix of one transformer block.
struct AdapterSite {
    int block_index = 0;
    Projection projection = Projection::query;

    auto operator<=>(const AdapterSite&) const = default;
};

inline std::string site_id(const AdapterSite& s) {
    return "block" + std::to_string(s.block_index) + "." + to_string(s.projection);
}

// Forgery-awareness module configuration. Defaults follow the reference
// training recipe: rank 2, dropout 0.25, adapters on the last 12 blocks,
// all four attention projections.
struct FamConfig {
    int rank = 2;
    double dropout_p = 0.25;
    int adapted_block_count = 12;
    std::set<Projection> projections = {Projection::query, Projection::key, Projection::value,
                                        Projection::output};
    double scale = 1.0;

    void validate() const {
        FAMSEC_REQUIRE(rank >= 1, config_error, "fam: rank must be >= 1");
        FAMSEC_REQUIRE(dropout_p >= 0.0 && dropout_p < 1.0, config_error,
                       "fam: dropout_p must be in [0,1)");
        FAMSEC_REQUIRE(adapted_block_count >= 1, config_error,
                       "fam: adapted_block_count must be >= 1");
        FAMSEC_REQUIRE(!projections.empty(), config_error, "fam: empty projection set");
        FAMSEC_REQUIRE(scale > 0.0, config_error, "fam: scale must be positive");
    }
};

// One low-rank factor pair. The effective weight update is
//     delta(W) = scale * up * down            (up: d x r, down: r x k)
// so a frozen base matrix W0 behaves as W0 + scale * up * down.
template <typename T>
struct LoraFactors {
    Matrix<T> down;  // r x k
    Matrix<T> up;    // d x r
    int rank = 0;
    T dropout_p = T(0);
    T scale = T(1);

    int out_dim() const { return up.rows(); }
    int in_dim() const { return down.cols(); }
};

// Fresh factors: up = 0 exactly, down ~ N(0, 0.02^2). The zero up-factor
// makes the initial update vanish, so an adapted layer starts out identical
// to its base layer.
template <typename T>
LoraFactors<T> init_factors(int d, int k, const FamConfig& config, Rng rng) {
    config.validate();
    FAMSEC_REQUIRE(d >= 1 && k >= 1, config_error, "init_factors: dimensions must be >= 1");
    FAMSEC_REQUIRE(config.rank <= std::min(d, k), config_error,
                   "init_factors: rank " + std::to_string(config.rank) + " exceeds min(d,k) = " +
                       std::to_string(std::min(d, k)));
    LoraFactors<T> f;
    f.rank = config.rank;
    f.dropout_p = T(config.dropout_p);
    f.scale = T(config.scale);
    f.up = Matrix<T>(d, config.rank);  // zeros
    f.down = Matrix<T>(config.rank, k);
    for (std::size_t i = 0; i < f.down.size(); ++i) f.down.data()[i] = T(rng.normal(0.0, 0.02));
    return f;
}

// scale * up * down, as a dense d x k matrix.
template <typename T>
Matrix<T> factor_delta(const LoraFactors<T>& f) {
    Matrix<T> d = matmul(f.up, f.down);
    for (std::size_t i = 0; i < d.size(); ++i) d.data()[i] *= f.scale;
    return d;
}

template <typename T>
Matrix<T> merge_factors(const Matrix<T>& base, const LoraFactors<T>& f) {
    FAMSEC_REQUIRE(base.rows() == f.up.rows() && base.cols() == f.down.cols(), contract_error,
                   "merge_factors: base shape does not match factors");
    Matrix<T> m = base;
    Matrix<T> d = factor_delta(f);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] += d.data()[i];
    return m;
}

// Inverse of merge_factors.
template <typename T>
Matrix<T> unmerge_factors(const Matrix<T>& merged, const LoraFactors<T>& f) {
    FAMSEC_REQUIRE(merged.rows() == f.up.rows() && merged.cols() == f.down.cols(), contract_error,
                   "unmerge_factors: shape mismatch");
    Matrix<T> m = merged;
    Matrix<T> d = factor_delta(f);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] -= d.data()[i];
    return m;
}

// Inverted-dropout mask values: 0 with probability p, otherwise 1/(1-p).
template <typename T>
Matrix<T> dropout_mask(int rows, int cols, T p, Rng& rng) {
    Matrix<T> m(rows, cols);
    const T keep = T(1) / (T(1) - p);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform() < double(p) ? T(0) : keep;
    return m;
}

// Forward through an adapted matrix: rows of x are input vectors.
//     y = x W0^T + scale * drop(x) down^T up^T
// Dropout is applied to the low-rank branch input only, and only in
// training mode.
template <typename T>
Matrix<T> apply_delta(const Matrix<T>& base, const LoraFactors<T>& factors, const Matrix<T>& x,
                      bool training = false, Rng* rng = nullptr) {
    FAMSEC_REQUIRE(x.cols() == base.cols(), contract_error,
                   "apply_delta: input width does not match base matrix");
    FAMSEC_REQUIRE(base.rows() == factors.up.rows() && base.cols() == factors.down.cols(),
                   contract_error, "apply_delta: factors do not match base matrix");
    Matrix<T> y = matmul_nt(x, base);
    Matrix<T> xd = x;
    if (training && factors.dropout_p > T(0)) {
        FAMSEC_REQUIRE(rng != nullptr, contract_error, "apply_delta: training dropout needs an rng");
        Matrix<T> mask = dropout_mask(x.rows(), x.cols(), factors.dropout_p, *rng);
        for (std::size_t i = 0; i < xd.size(); ++i) xd.data()[i] *= mask.data()[i];
    }
    Matrix<T> h = matmul_nt(xd, factors.down);   // N x r
    Matrix<T> lo = matmul_nt(h, factors.up);     // N x d
    for (std::size_t i = 0; i < y.size(); ++i) y.data()[i] += factors.scale * lo.data()[i];
    return y;
}

// Vector convenience overload.
template <typename T>
std::vector<T> apply_delta(const Matrix<T>& base, const LoraFactors<T>& factors,
                           const std::vector<T>& x, bool training = false, Rng* rng = nullptr) {
    Matrix<T> xm(1, int(x.size()));
    for (std::size_t i = 0; i < x.size(); ++i) xm(0, int(i)) = x[i];
    Matrix<T> y = apply_delta(base, factors, xm, training, rng);
    return std::vector<T>(y.data(), y.data() + y.size());
}

// The adapter registry produced by injection: site -> factors.
template <typename T>
struct AdapterSet {
    FamConfig config;
    std::map<AdapterSite, LoraFactors<T>> sites;

    const LoraFactors<T>* find(int block_index, Projection proj) const {
        auto it = sites.find(AdapterSite{block_index, proj});
        return it == sites.end() ? nullptr : &it->second;
    }
    LoraFactors<T>* find(int block_index, Projection proj) {
        auto it = sites.find(AdapterSite{block_index, proj});
        return it == sites.end() ? nullptr : &it->second;
    }

    std::size_t trainable_parameter_count() const {
        std::size_t n = 0;
        for (const auto& [site, f] : sites) n += f.up.size() + f.down.size();
        return n;
    }
};

}  // namespace famsec
