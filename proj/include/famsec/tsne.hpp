// Copyright (c) 2026 the famsec authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <vector>

#include "famsec/common.hpp"
#include "famsec/matrix.hpp"
#include "famsec/rng.hpp"

namespace famsec {

struct TsneConfig {
    double perplexity = 10.0;
    int iterations = 750;
    double learning_rate = 0.0;       // 0 = auto: max(50, N / (exaggeration * 4))
    double early_exaggeration = 12.0;  // first quarter of the iterations
    std::uint64_t seed = 0;
};

// Exact (O(N^2)) t-SNE to 2-D. Deterministic given the seed. Suited to the
// few hundred points the visualization exports use.
template <typename T>
Matrix<T> tsne(const Matrix<T>& x, const TsneConfig& cfg) {
    const int n = x.rows();
    FAMSEC_REQUIRE(n >= 4, contract_error, "tsne: need at least 4 points");
    FAMSEC_REQUIRE(cfg.perplexity >= 1.0 && cfg.perplexity < double(n), contract_error,
                   "tsne: perplexity must be in [1, point count)");

    // pairwise squared distances
    Matrix<T> d2(n, n);
    T max_d2{};
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            T acc{};
            for (int k = 0; k < x.cols(); ++k) {
                T d = x(i, k) - x(j, k);
                acc += d * d;
            }
            d2(i, j) = d2(j, i) = acc;
            max_d2 = std::max(max_d2, acc);
        }
    FAMSEC_REQUIRE(max_d2 > T(0), numeric_error, "tsne: degenerate identical embeddings");

    // conditional affinities with per-point bandwidth matched to perplexity
    const double target_entropy = std::log(cfg.perplexity);
    Matrix<T> p(n, n);
    for (int i = 0; i < n; ++i) {
        double beta = 1.0, beta_lo = 0.0, beta_hi = 1e300;
        for (int iter = 0; iter < 64; ++iter) {
            double sum = 0, sum_dp = 0;
            for (int j = 0; j < n; ++j) {
                if (j == i) continue;
                double e = std::exp(-double(d2(i, j)) * beta);
                sum += e;
                sum_dp += double(d2(i, j)) * e;
            }
            if (sum <= 0) {
                beta_hi = beta;
                beta = (beta_lo + beta_hi) / 2;
                continue;
            }
            // Shannon entropy of the conditional distribution
            double h = std::log(sum) + beta * sum_dp / sum;
            if (std::abs(h - target_entropy) < 1e-5) break;
            if (h > target_entropy) {
                beta_lo = beta;
                beta = beta_hi > 1e299 ? beta * 2 : (beta_lo + beta_hi) / 2;
            } else {
                beta_hi = beta;
                beta = (beta_lo + beta_hi) / 2;
            }
        }
        double sum = 0;
        for (int j = 0; j < n; ++j)
            if (j != i) sum += std::exp(-double(d2(i, j)) * beta);
        for (int j = 0; j < n; ++j)
            p(i, j) = j == i ? T(0) : T(std::exp(-double(d2(i, j)) * beta) / sum);
    }
    // symmetrize
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            T v = (p(i, j) + p(j, i)) / (2 * T(n));
            p(i, j) = std::max(v, T(1e-12));
        }

    Rng rng(mix_seed(cfg.seed, 0x74534e45ULL));
    Matrix<T> y(n, 2), vel(n, 2), grad(n, 2), gains(n, 2);
    for (std::size_t i = 0; i < y.size(); ++i) y.data()[i] = T(rng.normal(0.0, 1e-4));
    gains.fill(T(1));

    const double lr = cfg.learning_rate > 0
                          ? cfg.learning_rate
                          : std::max(50.0, double(n) / (cfg.early_exaggeration * 4.0));
    const int exaggerate_until = cfg.iterations / 3;
    Matrix<T> q(n, n);
    for (int iter = 0; iter < cfg.iterations; ++iter) {
        const T ex = iter < exaggerate_until ? T(cfg.early_exaggeration) : T(1);
        // student-t affinities in the embedding
        T qsum{};
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) {
                T dy0 = y(i, 0) - y(j, 0), dy1 = y(i, 1) - y(j, 1);
                T w = T(1) / (T(1) + dy0 * dy0 + dy1 * dy1);
                q(i, j) = q(j, i) = w;
                qsum += 2 * w;
            }
        grad.zero();
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                if (j == i) continue;
                T qij = std::max(q(i, j) / qsum, T(1e-12));
                T mult = 4 * (ex * p(i, j) - qij) * q(i, j);
                grad(i, 0) += mult * (y(i, 0) - y(j, 0));
                grad(i, 1) += mult * (y(i, 1) - y(j, 1));
            }
        const T momentum = iter < exaggerate_until ? T(0.5) : T(0.8);
        T mean0{}, mean1{};
        for (int i = 0; i < n; ++i)
            for (int d = 0; d < 2; ++d) {
                // adaptive per-coordinate gains, the standard recipe
                const bool same_sign = (grad(i, d) > 0) == (vel(i, d) > 0);
                gains(i, d) = same_sign ? std::max(T(0.01), gains(i, d) * T(0.8))
                                        : gains(i, d) + T(0.2);
                vel(i, d) = momentum * vel(i, d) - T(lr) * gains(i, d) * grad(i, d);
                y(i, d) += vel(i, d);
                (d == 0 ? mean0 : mean1) += y(i, d) / T(n);
            }
        for (int i = 0; i < n; ++i) {
            y(i, 0) -= mean0;
            y(i, 1) -= mean1;
        }
    }
    return y;
}

// Mean silhouette coefficient over all points, euclidean metric, arbitrary
// integer cluster labels. Singleton clusters contribute 0 for their point.
template <typename T>
double silhouette(const Matrix<T>& points, const std::vector<int>& labels) {
    const int n = points.rows();
    FAMSEC_REQUIRE(int(labels.size()) == n && n >= 2, contract_error,
                   "silhouette: labels must match points");
    std::vector<int> distinct;
    for (int l : labels)
        if (std::find(distinct.begin(), distinct.end(), l) == distinct.end())
            distinct.push_back(l);
    FAMSEC_REQUIRE(distinct.size() >= 2, contract_error, "silhouette: need >= 2 clusters");

    auto dist = [&](int i, int j) {
        double acc = 0;
        for (int k = 0; k < points.cols(); ++k) {
            double d = double(points(i, k)) - double(points(j, k));
            acc += d * d;
        }
        return std::sqrt(acc);
    };

    double total = 0;
    for (int i = 0; i < n; ++i) {
        double a = 0, a_count = 0;
        std::vector<double> b_sum(distinct.size(), 0.0);
        std::vector<double> b_count(distinct.size(), 0.0);
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            double d = dist(i, j);
            if (labels[std::size_t(j)] == labels[std::size_t(i)]) {
                a += d;
                a_count += 1;
            } else {
                for (std::size_t c = 0; c < distinct.size(); ++c)
                    if (labels[std::size_t(j)] == distinct[c]) {
                        b_sum[c] += d;
                        b_count[c] += 1;
                    }
            }
        }
        if (a_count == 0) continue;  // singleton cluster: s(i) = 0
        a /= a_count;
        double b = 1e300;
        for (std::size_t c = 0; c < distinct.size(); ++c)
            if (b_count[c] > 0) b = std::min(b, b_sum[c] / b_count[c]);
        total += (b - a) / std::max(a, b);
    }
    return total / n;
}

}  // namespace famsec
