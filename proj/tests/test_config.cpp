// Copyright (c) 2026 the famsec authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "famsec/config.hpp"

using namespace famsec;

TEST_CASE("defaults form a valid toy profile") {
    RunConfig cfg;
    cfg.validate();
    CHECK(cfg.lr == 1e-4);  // reference training recipe
    CHECK(cfg.fam.rank == 2);
    CHECK(cfg.fam.dropout_p == 0.25);
    CHECK(cfg.tau0 == 0.07);
    CHECK(cfg.encoder.image_size == 32);
    CHECK(cfg.fam.adapted_block_count == 2);  // last 2 of the toy depth 4
    CHECK(cfg.bank_k == 1);
    CHECK(cfg.bank_aggregation == "single");
}

TEST_CASE("parse and serialize round trip") {
    RunConfig cfg;
    cfg.seed = 77;
    cfg.data_root = "/data/corpus";
    cfg.lr = 0.003;
    cfg.steps = 42;
    cfg.fam.rank = 4;
    cfg.fam.projections = {Projection::query, Projection::value};
    cfg.train_sources = {"synthA", "synthB"};
    cfg.objective = "classification";
    cfg.encoder.pooling = Pooling::mean_pool;
    cfg.encoder_weights = "base.wts";

    auto text = serialize_config(cfg);
    auto back = parse_config(text);
    CHECK(serialize_config(back) == text);
    CHECK(back.seed == 77);
    CHECK(back.lr == 0.003);
    CHECK(back.fam.rank == 4);
    CHECK(back.fam.projections.size() == 2);
    CHECK(back.train_sources == cfg.train_sources);
    CHECK(back.encoder.pooling == Pooling::mean_pool);
    CHECK(back.encoder_weights == "base.wts");
}

TEST_CASE("comments and blank lines are ignored") {
    auto cfg = parse_config("# a comment\n\nseed = 9   # trailing\n  train.steps = 5\n");
    CHECK(cfg.seed == 9);
    CHECK(cfg.steps == 5);
}

TEST_CASE("invalid fields are named in the error") {
    CHECK_THROWS_AS((void)parse_config("bogus.key = 1\n"), config_error);
    CHECK_THROWS_AS((void)parse_config("fam.rank = banana\n"), config_error);
    CHECK_THROWS_AS((void)parse_config("train.balance = maybe\n"), config_error);
    CHECK_THROWS_AS((void)parse_config("not a pair\n"), config_error);
    try {
        (void)parse_config("fam.rank = banana\n");
    } catch (const config_error& e) {
        CHECK(std::string(e.what()).find("fam.rank") != std::string::npos);
    }
}

TEST_CASE("validation catches bad values") {
    RunConfig cfg;
    cfg.fam.rank = 0;
    CHECK_THROWS_AS(cfg.validate(), config_error);
    cfg = RunConfig{};
    cfg.lr = -1;
    CHECK_THROWS_AS(cfg.validate(), config_error);
    cfg = RunConfig{};
    cfg.fam.adapted_block_count = 9;  // toy depth is 4
    CHECK_THROWS_AS(cfg.validate(), config_error);
    cfg = RunConfig{};
    cfg.objective = "mystery";
    CHECK_THROWS_AS(cfg.validate(), config_error);
}

TEST_CASE("pipeline conversion carries every knob") {
    RunConfig cfg;
    cfg.seed = 3;
    cfg.lr = 0.002;
    cfg.batch_size = 8;
    cfg.steps = 17;
    cfg.fam_enabled = false;
    cfg.objective = "classification";
    cfg.train_subset = 40;
    cfg.bank_k = 3;
    cfg.bank_aggregation = "mean_centroid";
    cfg.encoder_weights = "w.wts";
    auto p = cfg.to_pipeline();
    CHECK(p.trainer.adam.lr == 0.002);
    CHECK(p.trainer.batch_size == 8);
    CHECK(p.trainer.steps == 17);
    CHECK_FALSE(p.trainer.fam_on);
    CHECK(p.trainer.objective == TrainObjective::classification);
    CHECK(p.train_subset == 40);
    CHECK(p.bank_k == 3);
    CHECK(p.bank_agg == BankAggregation::mean_centroid);
    CHECK(p.encoder_weights == "w.wts");
}
