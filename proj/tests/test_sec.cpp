// Copyright (c) 2026 the famsec authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "famsec/rng.hpp"
#include "famsec/sec.hpp"

using namespace famsec;

namespace {

// Independent scalar evaluation of the pairwise BCE loss, kept deliberately
// separate from the library implementation.
double oracle_loss(const Matrix<double>& p, const Matrix<int>& l, double tau) {
    double acc = 0;
    int n = p.rows();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            double s = 1.0 / (1.0 + std::exp(-p(i, j) / tau));
            s = std::min(1.0 - 1e-12, std::max(1e-12, s));
            acc += l(i, j) ? std::log(s) : std::log(1.0 - s);
        }
    return -acc / (double(n) * double(n));
}

}  // namespace

TEST_CASE("cosine similarity basics") {
    std::vector<double> u{0.3, -1.2, 4.0};
    CHECK(cosine_similarity(u, u) == doctest::Approx(1.0).epsilon(1e-12));

    std::vector<double> e1{1, 0}, e2{0, 1};
    CHECK(cosine_similarity(e1, e2) == doctest::Approx(0.0));

    // hand value: (2 + 2 + 4) / (3 * 3) = 8/9
    std::vector<double> a{1, 2, 2}, b{2, 1, 2};
    CHECK(cosine_similarity(a, b) == doctest::Approx(8.0 / 9.0).epsilon(1e-12));
}

TEST_CASE("cosine similarity is symmetric and scale invariant") {
    Rng rng(17);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> u(8), v(8);
        for (auto& x : u) x = rng.normal();
        for (auto& x : v) x = rng.normal();
        double base = cosine_similarity(u, v);
        CHECK(cosine_similarity(v, u) == doctest::Approx(base).epsilon(1e-12));
        double alpha = rng.uniform(1e-3, 1e3), beta = rng.uniform(1e-3, 1e3);
        auto us = u, vs = v;
        for (auto& x : us) x *= alpha;
        for (auto& x : vs) x *= beta;
        CHECK(cosine_similarity(us, vs) == doctest::Approx(base).epsilon(1e-9));
        CHECK(base >= -1.0 - 1e-6);
        CHECK(base <= 1.0 + 1e-6);
    }
}

TEST_CASE("cosine similarity rejects zero norm") {
    std::vector<double> z{0, 0, 0}, u{1, 2, 3};
    CHECK_THROWS_AS((void)cosine_similarity(z, u), numeric_error);
    CHECK_THROWS_AS((void)cosine_similarity(u, z), numeric_error);
}

TEST_CASE("pair labels implement the XNOR table") {
    SUBCASE("all real") {
        auto l = pair_labels({1, 1});
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) CHECK(l(i, j) == 1);
    }
    SUBCASE("mixed pair") {
        auto l = pair_labels({1, 0});
        CHECK(l(0, 0) == 1);
        CHECK(l(0, 1) == 0);
        CHECK(l(1, 0) == 0);
        CHECK(l(1, 1) == 1);
    }
    SUBCASE("three labels, elementwise truth table") {
        std::vector<int> y{0, 0, 1};
        auto l = pair_labels(y);
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                int want = (y[std::size_t(i)] == y[std::size_t(j)]) ? 1 : 0;
                CHECK(l(i, j) == want);
            }
        CHECK(l(0, 1) == 1);
        CHECK(l(0, 2) == 0);
        CHECK(l(1, 2) == 0);
    }
    SUBCASE("non-binary labels rejected") {
        CHECK_THROWS_AS((void)pair_labels({0, 2}), contract_error);
        CHECK_THROWS_AS((void)pair_labels({-1, 1}), contract_error);
    }
}

TEST_CASE("pair labels invariant under global label flip") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        int n = 2 + int(rng.uniform_int(6));
        std::vector<int> y(static_cast<std::size_t>(n)), flipped(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            y[std::size_t(i)] = int(rng.uniform_int(2));
            flipped[std::size_t(i)] = 1 - y[std::size_t(i)];
        }
        auto a = pair_labels(y), b = pair_labels(flipped);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) CHECK(a(i, j) == b(i, j));
    }
}

TEST_CASE("loss fixture N=1: -log sigmoid(0) = log 2") {
    Matrix<double> p(1, 1);
    Matrix<int> l(1, 1);
    l(0, 0) = 1;
    for (double tau : {0.07, 0.5, 1.0, 3.0}) {
        double v = sec_loss(p, l, tau);
        CHECK(v == doctest::Approx(0.693147180559945309).epsilon(1e-10));
    }
}

TEST_CASE("loss fixture N=2 against scalar hand evaluation") {
    Matrix<double> p(2, 2);
    p(0, 0) = 1;
    p(0, 1) = -1;
    p(1, 0) = -1;
    p(1, 1) = 1;
    Matrix<int> l(2, 2);
    l(0, 0) = l(1, 1) = 1;
    double got = sec_loss(p, l, 1.0);
    // all four BCE terms equal log(1 + e^-1)
    double want = std::log(1.0 + std::exp(-1.0));
    CHECK(got == doctest::Approx(want).epsilon(1e-12));
    CHECK(got == doctest::Approx(0.313261687518222834).epsilon(1e-10));
    CHECK(got == doctest::Approx(oracle_loss(p, l, 1.0)).epsilon(1e-14));
}

TEST_CASE("loss matches oracle on random batches") {
    Rng rng(21);
    for (int trial = 0; trial < 30; ++trial) {
        int n = 1 + int(rng.uniform_int(7));
        Matrix<double> p(n, n);
        std::vector<int> y(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) y[std::size_t(i)] = int(rng.uniform_int(2));
        auto l = pair_labels(y);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) p(i, j) = rng.uniform(-1.0, 1.0);
        double tau = rng.uniform(0.05, 2.0);
        CHECK(sec_loss(p, l, tau) == doctest::Approx(oracle_loss(p, l, tau)).epsilon(1e-13));
        CHECK(sec_loss(p, l, tau) >= 0.0);
    }
}

TEST_CASE("loss is invariant under simultaneous row/column permutation") {
    Rng rng(31);
    const int n = 6;
    Matrix<double> p(n, n);
    std::vector<int> y(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) y[std::size_t(i)] = int(rng.uniform_int(2));
    auto l = pair_labels(y);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) p(i, j) = rng.uniform(-1.0, 1.0);
    double base = sec_loss(p, l, 0.3);

    std::vector<int> perm(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) perm[std::size_t(i)] = i;
    for (int trial = 0; trial < 10; ++trial) {
        rng.shuffle(perm);
        Matrix<double> pp(n, n);
        Matrix<int> lp(n, n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                pp(i, j) = p(perm[std::size_t(i)], perm[std::size_t(j)]);
                lp(i, j) = l(perm[std::size_t(i)], perm[std::size_t(j)]);
            }
        CHECK(sec_loss(pp, lp, 0.3) == doctest::Approx(base).epsilon(1e-12));
    }
}

TEST_CASE("loss rejects bad arguments") {
    Matrix<double> p(2, 2);
    Matrix<int> l(2, 2);
    CHECK_THROWS_AS((void)sec_loss(p, l, 0.0), contract_error);
    CHECK_THROWS_AS((void)sec_loss(p, l, -1.0), contract_error);
    Matrix<int> bad(3, 3);
    CHECK_THROWS_AS((void)sec_loss(p, bad, 1.0), contract_error);
}

TEST_CASE("loss gradients match finite differences on the p entries and log tau") {
    Rng rng(41);
    const int n = 5;
    Matrix<double> p(n, n);
    std::vector<int> y(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) y[std::size_t(i)] = int(rng.uniform_int(2));
    auto l = pair_labels(y);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) p(i, j) = rng.uniform(-1.0, 1.0);
    const double tau = 0.45;
    auto g = sec_loss_backward(p, l, tau);
    CHECK(g.loss == doctest::Approx(sec_loss(p, l, tau)).epsilon(1e-14));

    const double eps = 1e-6;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            Matrix<double> pp = p, pm = p;
            pp(i, j) += eps;
            pm(i, j) -= eps;
            double fd = (sec_loss(pp, l, tau) - sec_loss(pm, l, tau)) / (2 * eps);
            CHECK(g.d_p(i, j) == doctest::Approx(fd).epsilon(1e-6));
        }
    double lt = std::log(tau);
    double fd_tau = (sec_loss(p, l, std::exp(lt + eps)) - sec_loss(p, l, std::exp(lt - eps))) /
                    (2 * eps);
    CHECK(g.d_log_tau == doctest::Approx(fd_tau).epsilon(1e-6));
}

TEST_CASE("similarity matrix bounds and gradient") {
    Rng rng(51);
    const int n = 4, e = 8;
    Matrix<double> guide(n, e), ext(n, e);
    for (std::size_t i = 0; i < guide.size(); ++i) guide.data()[i] = rng.normal();
    for (std::size_t i = 0; i < ext.size(); ++i) ext.data()[i] = rng.normal();
    auto p = similarity_matrix(guide, ext);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            CHECK(p(i, j) >= -1.0 - 1e-6);
            CHECK(p(i, j) <= 1.0 + 1e-6);
        }

    // chain through the loss: dL/dET vs finite differences
    std::vector<int> yv{1, 0, 1, 0};
    auto l = pair_labels(yv);
    const double tau = 0.6;
    auto lg = sec_loss_backward(p, l, tau);
    auto d_et = similarity_backward(guide, ext, p, lg.d_p);

    const double eps = 1e-6;
    for (int j = 0; j < n; ++j)
        for (int k = 0; k < e; ++k) {
            auto ep = ext, em = ext;
            ep(j, k) += eps;
            em(j, k) -= eps;
            double fp = sec_loss(similarity_matrix(guide, ep), l, tau);
            double fm = sec_loss(similarity_matrix(guide, em), l, tau);
            double fd = (fp - fm) / (2 * eps);
            CHECK(d_et(j, k) == doctest::Approx(fd).epsilon(1e-5));
        }
}

TEST_CASE("similarity matrix rejects zero-norm rows") {
    Matrix<double> guide(2, 3), ext(2, 3);
    guide(0, 0) = 1;
    guide(1, 1) = 1;
    ext(0, 0) = 1;  // ext row 1 is all zeros
    CHECK_THROWS_AS((void)similarity_matrix(guide, ext), numeric_error);
}
