// Copyright (c) 2026 the famsec authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "famsec/lora.hpp"
#include "famsec/rng.hpp"
#include "famsec/vit.hpp"

using namespace famsec;

namespace {
FamConfig cfg(int rank, double dropout = 0.0, int blocks = 2, double scale = 1.0) {
    FamConfig c;
    c.rank = rank;
    c.dropout_p = dropout;
    c.adapted_block_count = blocks;
    c.scale = scale;
    return c;
}
}  // namespace

TEST_CASE("init produces an exactly-zero update") {
    auto f = init_factors<double>(4, 4, cfg(2), Rng(123));
    for (std::size_t i = 0; i < f.up.size(); ++i) CHECK(f.up.data()[i] == 0.0);
    auto d = factor_delta(f);
    for (std::size_t i = 0; i < d.size(); ++i) CHECK(d.data()[i] == 0.0);
}

TEST_CASE("init is bitwise reproducible for a fixed seed") {
    auto a = init_factors<double>(3, 5, cfg(2), Rng(777));
    auto b = init_factors<double>(3, 5, cfg(2), Rng(777));
    REQUIRE(a.down.size() == b.down.size());
    for (std::size_t i = 0; i < a.down.size(); ++i) CHECK(a.down.data()[i] == b.down.data()[i]);
    auto c = init_factors<double>(3, 5, cfg(2), Rng(778));
    bool any_diff = false;
    for (std::size_t i = 0; i < a.down.size(); ++i) any_diff |= a.down.data()[i] != c.down.data()[i];
    CHECK(any_diff);
}

TEST_CASE("rank precondition") {
    CHECK_THROWS_AS((void)init_factors<double>(4, 4, cfg(5), Rng(0)), config_error);
    CHECK_THROWS_AS((void)init_factors<double>(2, 8, cfg(3), Rng(0)), config_error);
}

TEST_CASE("delta rank stays bounded by r after arbitrary factor updates") {
    Rng rng(5);
    auto f = init_factors<double>(8, 8, cfg(2), rng.derive(0));
    // simulate many gradient updates by randomizing both factors
    for (std::size_t i = 0; i < f.up.size(); ++i) f.up.data()[i] = rng.normal();
    for (std::size_t i = 0; i < f.down.size(); ++i) f.down.data()[i] = rng.normal();
    auto d = factor_delta(f);
    CHECK(numerical_rank(d, 1e-8) <= 2);
}

TEST_CASE("apply_delta with zero factors is the base map") {
    Matrix<double> w0(2, 2);
    w0(0, 0) = 1;
    w0(1, 1) = 1;
    auto f = init_factors<double>(2, 2, cfg(1), Rng(1));
    std::vector<double> y = apply_delta(w0, f, std::vector<double>{3, -1});
    CHECK(y[0] == 3.0);
    CHECK(y[1] == -1.0);
}

TEST_CASE("apply_delta matches the hand product") {
    // W0 = 0, up = [[1],[0]], down = [[0,1]] -> delta = [[0,1],[0,0]]
    Matrix<double> w0(2, 2);
    LoraFactors<double> f;
    f.rank = 1;
    f.scale = 1.0;
    f.up = Matrix<double>(2, 1);
    f.up(0, 0) = 1;
    f.down = Matrix<double>(1, 2);
    f.down(0, 1) = 1;
    std::vector<double> y = apply_delta(w0, f, std::vector<double>{5, 7});
    CHECK(y[0] == doctest::Approx(7).epsilon(1e-12));
    CHECK(y[1] == doctest::Approx(0).epsilon(1e-12));
}

TEST_CASE("apply_delta equals merged multiply in eval mode") {
    Rng rng(99);
    Matrix<double> w0(6, 5);
    for (std::size_t i = 0; i < w0.size(); ++i) w0.data()[i] = rng.normal();
    auto f = init_factors<double>(6, 5, cfg(2), rng.derive(1));
    for (std::size_t i = 0; i < f.up.size(); ++i) f.up.data()[i] = rng.normal();
    auto merged = merge_factors(w0, f);

    Matrix<double> x(3, 5);
    for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
    auto live = apply_delta(w0, f, x);
    auto direct = matmul_nt(x, merged);
    for (std::size_t i = 0; i < live.size(); ++i)
        CHECK(live.data()[i] == doctest::Approx(direct.data()[i]).epsilon(1e-6));
}

TEST_CASE("apply_delta rejects shape mismatch") {
    Matrix<double> w0(2, 2);
    auto f = init_factors<double>(2, 2, cfg(1), Rng(1));
    Matrix<double> bad(1, 3);
    CHECK_THROWS_AS((void)apply_delta(w0, f, bad), contract_error);
}

TEST_CASE("merge arithmetic") {
    // identity stays identity with zero factors
    Matrix<double> eye(2, 2);
    eye(0, 0) = eye(1, 1) = 1;
    auto f0 = init_factors<double>(2, 2, cfg(1), Rng(4));
    auto m0 = merge_factors(eye, f0);
    CHECK(max_abs_diff(eye, m0) == 0.0);

    // 0 + 0.5 * [[1],[1]] * [[2,0]] = [[1,0],[1,0]]
    Matrix<double> zero(2, 2);
    LoraFactors<double> f;
    f.rank = 1;
    f.scale = 0.5;
    f.up = Matrix<double>(2, 1);
    f.up(0, 0) = 1;
    f.up(1, 0) = 1;
    f.down = Matrix<double>(1, 2);
    f.down(0, 0) = 2;
    auto m = merge_factors(zero, f);
    CHECK(m(0, 0) == doctest::Approx(1).epsilon(1e-12));
    CHECK(m(0, 1) == doctest::Approx(0).epsilon(1e-12));
    CHECK(m(1, 0) == doctest::Approx(1).epsilon(1e-12));
    CHECK(m(1, 1) == doctest::Approx(0).epsilon(1e-12));
}

TEST_CASE("merge then unmerge restores the base") {
    Rng rng(2024);
    Matrix<double> w0(16, 16);
    for (std::size_t i = 0; i < w0.size(); ++i) w0.data()[i] = rng.normal();
    auto f = init_factors<double>(16, 16, cfg(3), rng.derive(9));
    for (std::size_t i = 0; i < f.up.size(); ++i) f.up.data()[i] = rng.normal();
    auto restored = unmerge_factors(merge_factors(w0, f), f);
    CHECK(max_abs_diff(w0, restored) < 1e-6);
}

TEST_CASE("merge does not modify its input") {
    Matrix<double> w0(4, 4);
    w0(2, 2) = 5;
    auto copy = w0;
    LoraFactors<double> f;
    f.rank = 1;
    f.scale = 1;
    f.up = Matrix<double>(4, 1);
    f.up(0, 0) = 1;
    f.down = Matrix<double>(1, 4);
    f.down(0, 0) = 1;
    (void)merge_factors(w0, f);
    CHECK(max_abs_diff(w0, copy) == 0.0);
}

TEST_CASE("inject creates sites on the last blocks only") {
    auto spec = EncoderSpec::toy();
    auto enc = build_encoder<double>(spec, 1);

    SUBCASE("default-style full config on a deep encoder") {
        EncoderSpec deep = spec;
        deep.depth = 24;
        auto big = build_encoder<double>(deep, 1);
        FamConfig c;  // rank 2, 12 blocks, all projections
        auto set = inject<double>(big, c, 7);
        CHECK(set.sites.size() == 48);
        for (const auto& [site, f] : set.sites) {
            CHECK(site.block_index >= 12);
            CHECK(site.block_index < 24);
        }
    }

    SUBCASE("subset of projections") {
        FamConfig c = cfg(2, 0.25, 2);
        c.projections = {Projection::query, Projection::value};
        auto set = inject<double>(enc, c, 7);
        CHECK(set.sites.size() == 4);
        for (const auto& [site, f] : set.sites) {
            CHECK((site.block_index == 2 || site.block_index == 3));
            CHECK((site.projection == Projection::query || site.projection == Projection::value));
        }
    }

    SUBCASE("too many blocks is a configuration error") {
        FamConfig c = cfg(2, 0.25, 5);
        CHECK_THROWS_AS((void)inject<double>(enc, c, 7), config_error);
    }

    SUBCASE("at most one factor pair per site") {
        FamConfig c = cfg(2, 0.25, 3);
        auto set = inject<double>(enc, c, 7);
        CHECK(set.sites.size() == 12);  // map keying makes duplicates impossible
        CHECK(set.trainable_parameter_count() == 12 * 2 * (64 + 64));
    }
}

TEST_CASE("trainable parameter count follows the analytic formula") {
    auto spec = EncoderSpec::toy();
    auto enc = build_encoder<double>(spec, 3);
    for (int rank : {1, 2, 4}) {
        FamConfig c = cfg(rank, 0.25, 2);
        auto set = inject<double>(enc, c, 11);
        std::size_t expected = 0;
        for (const auto& [site, f] : set.sites)
            expected += std::size_t(rank) * (spec.width + spec.width);
        CHECK(set.trainable_parameter_count() == expected);
    }
}

TEST_CASE("site ids name block and projection") {
    CHECK(site_id({3, Projection::query}) == "block3.query");
    CHECK(site_id({11, Projection::output}) == "block11.output");
    CHECK(projection_from_string("value") == Projection::value);
    CHECK_FALSE(projection_from_string("bogus").has_value());
}

TEST_CASE("dropout mask is inverted-scaled and seeded") {
    Rng rng(1);
    auto m = dropout_mask<double>(50, 50, 0.25, rng);
    int zeros = 0;
    for (std::size_t i = 0; i < m.size(); ++i) {
        if (m.data()[i] == 0.0)
            ++zeros;
        else
            CHECK(m.data()[i] == doctest::Approx(1.0 / 0.75));
    }
    double frac = double(zeros) / double(m.size());
    CHECK(frac > 0.20);
    CHECK(frac < 0.30);

    Rng r2(1);
    auto m2 = dropout_mask<double>(50, 50, 0.25, r2);
    CHECK(max_abs_diff(m, m2) == 0.0);
}
