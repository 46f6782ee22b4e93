// Copyright (c) 2026 the famsec authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <vector>

#include "famsec/common.hpp"
#include "famsec/matrix.hpp"

namespace famsec {

// Cosine similarity between two embeddings. Zero-norm inputs are a
// numeric-domain error; anything downstream of a cosine needs a direction.
template <typename T>
T cosine_similarity(const std::vector<T>& u, const std::vector<T>& v) {
    FAMSEC_REQUIRE(u.size() == v.size() && !u.empty(), contract_error,
                   "cosine_similarity: dimension mismatch");
    const T nu = norm(u), nv = norm(v);
    FAMSEC_REQUIRE(nu > T(0) && nv > T(0), numeric_error,
                   "cosine_similarity: zero-norm embedding");
    return dot(u.data(), v.data(), int(u.size())) / (nu * nv);
}

// Pairwise XNOR labels: l[i][j] = 1 iff y_i == y_j. Labels must be exactly
// 0 or 1.
inline Matrix<int> pair_labels(const std::vector<int>& labels) {
    const int n = int(labels.size());
    for (int y : labels)
        FAMSEC_REQUIRE(y == 0 || y == 1, contract_error, "pair_labels: labels must be 0 or 1");
    Matrix<int> l(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) l(i, j) = labels[std::size_t(i)] == labels[std::size_t(j)] ? 1 : 0;
    return l;
}

// One training batch's similarity scores and pair labels.
template <typename T>
struct SimilarityBatch {
    Matrix<T> p;    // N x N cosine similarities, p(i,j) = cos(guide_i, extractor_j)
    Matrix<int> l;  // N x N XNOR labels
};

// p(i,j) = cos(guide_i, extractor_j) over full batches (rows = embeddings).
template <typename T>
Matrix<T> similarity_matrix(const Matrix<T>& guide, const Matrix<T>& extractor) {
    FAMSEC_REQUIRE(guide.rows() == extractor.rows() && guide.cols() == extractor.cols(),
                   contract_error, "similarity_matrix: batch shape mismatch");
    const int n = guide.rows(), e = guide.cols();
    std::vector<T> ng(static_cast<std::size_t>(n)), nt(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        ng[std::size_t(i)] = norm(guide.row(i), e);
        nt[std::size_t(i)] = norm(extractor.row(i), e);
        FAMSEC_REQUIRE(ng[std::size_t(i)] > T(0) && nt[std::size_t(i)] > T(0), numeric_error,
                       "similarity_matrix: zero-norm embedding in batch");
    }
    Matrix<T> p(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            p(i, j) = dot(guide.row(i), extractor.row(j), e) / (ng[std::size_t(i)] * nt[std::size_t(j)]);
    return p;
}

namespace secdetail {
template <typename T>
inline T sigmoid(T x) {
    return x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}
constexpr double kSigmoidClamp = 1e-12;
}  // namespace secdetail

// Temperature-scaled pairwise binary cross-entropy over all N*N pairs
// (self-pairs included):
//   L = -(1/N^2) sum_ij [ l*log(sig(p/tau)) + (1-l)*log(1-sig(p/tau)) ]
// Sigmoid outputs are clamped to [1e-12, 1-1e-12] before the log.
template <typename T>
T sec_loss(const Matrix<T>& p, const Matrix<int>& l, T tau) {
    FAMSEC_REQUIRE(tau > T(0), contract_error, "sec_loss: tau must be positive");
    FAMSEC_REQUIRE(p.rows() == p.cols() && l.rows() == p.rows() && l.cols() == p.cols(),
                   contract_error, "sec_loss: p and l must be square and shape-matched");
    const int n = p.rows();
    FAMSEC_REQUIRE(n >= 1, contract_error, "sec_loss: empty batch");
    T acc{};
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            T s = secdetail::sigmoid(p(i, j) / tau);
            s = std::min(T(1) - T(secdetail::kSigmoidClamp),
                         std::max(T(secdetail::kSigmoidClamp), s));
            acc += l(i, j) ? std::log(s) : std::log(T(1) - s);
        }
    return -acc / (T(n) * T(n));
}

// Gradient of sec_loss with respect to every p(i,j) and to log(tau).
// At clamped sigmoid values the corresponding term's gradient is zero,
// matching the piecewise-flat loss.
template <typename T>
struct SecLossGrads {
    T loss{};
    Matrix<T> d_p;
    T d_log_tau{};
};

template <typename T>
SecLossGrads<T> sec_loss_backward(const Matrix<T>& p, const Matrix<int>& l, T tau) {
    FAMSEC_REQUIRE(tau > T(0), contract_error, "sec_loss_backward: tau must be positive");
    const int n = p.rows();
    SecLossGrads<T> out;
    out.d_p = Matrix<T>(n, n);
    const T inv_nn = T(1) / (T(n) * T(n));
    T acc{};
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            const T u = p(i, j) / tau;
            T s = secdetail::sigmoid(u);
            const bool clamped = s < T(secdetail::kSigmoidClamp) ||
                                 s > T(1) - T(secdetail::kSigmoidClamp);
            s = std::min(T(1) - T(secdetail::kSigmoidClamp),
                         std::max(T(secdetail::kSigmoidClamp), s));
            acc += l(i, j) ? std::log(s) : std::log(T(1) - s);
            if (clamped) continue;
            // dL/du = (sigma - l)/N^2 ; u = p/tau
            const T du = (s - T(l(i, j))) * inv_nn;
            out.d_p(i, j) = du / tau;
            out.d_log_tau += du * (-u);  // d u / d log(tau) = -u
        }
    out.loss = -acc * inv_nn;
    return out;
}

// Gradients of the cosine similarity matrix with respect to the extractor
// embeddings (the guide side is frozen). Returns dL/dET with rows matching
// `extractor`.
template <typename T>
Matrix<T> similarity_backward(const Matrix<T>& guide, const Matrix<T>& extractor,
                              const Matrix<T>& p, const Matrix<T>& d_p) {
    const int n = guide.rows(), e = guide.cols();
    Matrix<T> d_et(n, e);
    std::vector<T> ng(static_cast<std::size_t>(n)), nt(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        ng[std::size_t(i)] = norm(guide.row(i), e);
        nt[std::size_t(i)] = norm(extractor.row(i), e);
    }
    for (int j = 0; j < n; ++j) {
        T* out = d_et.row(j);
        const T* tj = extractor.row(j);
        const T inv_nt2 = T(1) / (nt[std::size_t(j)] * nt[std::size_t(j)]);
        for (int i = 0; i < n; ++i) {
            const T g = d_p(i, j);
            if (g == T{}) continue;
            const T* gi = guide.row(i);
            const T inv_ngnt = T(1) / (ng[std::size_t(i)] * nt[std::size_t(j)]);
            for (int k = 0; k < e; ++k)
                out[k] += g * (gi[k] * inv_ngnt - p(i, j) * tj[k] * inv_nt2);
        }
    }
    return d_et;
}

}  // namespace famsec
