// Copyright (c) 2026 the famsec authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "famsec/rng.hpp"
#include "famsec/vit.hpp"

using namespace famsec;

namespace {

Image random_image(int size, Rng& rng) {
    Image img(size, size);
    for (auto& v : img.data) v = float(rng.uniform());
    return img;
}

}  // namespace

TEST_CASE("spec validation") {
    auto spec = EncoderSpec::toy();
    CHECK(spec.token_count() == 17);  // (32/8)^2 + 1
    CHECK(spec.patch_dim() == 8 * 8 * 3);
    spec.validate();

    EncoderSpec bad = spec;
    bad.patch_size = 5;  // 32 % 5 != 0
    CHECK_THROWS_AS(bad.validate(), config_error);
    CHECK_THROWS_AS((void)build_encoder<double>(bad, 0), config_error);

    bad = spec;
    bad.heads = 3;  // 64 % 3 != 0
    CHECK_THROWS_AS(bad.validate(), config_error);
}

TEST_CASE("encoder output length follows the spec") {
    auto spec = EncoderSpec::toy();
    auto enc = build_encoder<double>(spec, 42);
    Rng rng(1);
    auto img = random_image(32, rng);
    auto emb = encode_image(enc, nullptr, img);
    CHECK(emb.size() == 32);
    for (double v : emb) CHECK(std::isfinite(v));
    double n = norm(emb);
    CHECK(n > 0.0);
}

TEST_CASE("same spec and seed give identical embeddings") {
    auto spec = EncoderSpec::toy();
    auto a = build_encoder<double>(spec, 7);
    auto b = build_encoder<double>(spec, 7);
    Rng rng(2);
    auto img = random_image(32, rng);
    auto ea = encode_image(a, nullptr, img);
    auto eb = encode_image(b, nullptr, img);
    for (std::size_t i = 0; i < ea.size(); ++i) CHECK(ea[i] == eb[i]);

    auto c = build_encoder<double>(spec, 8);
    auto ec = encode_image(c, nullptr, img);
    bool differs = false;
    for (std::size_t i = 0; i < ea.size(); ++i) differs |= ea[i] != ec[i];
    CHECK(differs);
}

TEST_CASE("eval-mode purity: repeated calls differ by exactly zero") {
    auto enc = build_encoder<double>(EncoderSpec::toy(), 3);
    Rng rng(4);
    auto img = random_image(32, rng);
    auto e1 = encode_image(enc, nullptr, img);
    auto e2 = encode_image(enc, nullptr, img);
    for (std::size_t i = 0; i < e1.size(); ++i) CHECK(e1[i] == e2[i]);
}

TEST_CASE("wrong image size is rejected") {
    auto enc = build_encoder<double>(EncoderSpec::toy(), 3);
    Rng rng(4);
    auto img = random_image(16, rng);
    CHECK_THROWS_AS((void)encode_image(enc, nullptr, img), contract_error);
}

TEST_CASE("batch embedding equals single calls, order preserved") {
    auto enc = build_encoder<double>(EncoderSpec::toy(), 5);
    Rng rng(6);
    std::vector<Image> batch;
    for (int i = 0; i < 5; ++i) batch.push_back(random_image(32, rng));
    auto m = embed_batch(enc, nullptr, batch, 2);
    for (int i = 0; i < 5; ++i) {
        auto single = encode_image(enc, nullptr, batch[std::size_t(i)]);
        for (int j = 0; j < 32; ++j)
            CHECK(m(i, j) == doctest::Approx(single[std::size_t(j)]).epsilon(1e-6));
    }
    CHECK_THROWS_AS((void)embed_batch(enc, nullptr, std::vector<Image>{}), contract_error);
}

TEST_CASE("zero-init injection leaves embeddings unchanged") {
    auto spec = EncoderSpec::toy();
    auto enc = build_encoder<double>(spec, 11);
    FamConfig fam;
    fam.adapted_block_count = 2;
    auto adapters = inject<double>(enc, fam, 12);
    Rng rng(13);
    for (int trial = 0; trial < 4; ++trial) {
        auto img = random_image(32, rng);
        auto plain = encode_image(enc, nullptr, img);
        auto adapted = encode_image(enc, &adapters, img);
        for (std::size_t i = 0; i < plain.size(); ++i)
            CHECK(adapted[i] == doctest::Approx(plain[i]).epsilon(1e-6));
    }
}

TEST_CASE("mean pooling differs from class token but keeps the shape") {
    auto spec = EncoderSpec::toy();
    auto ct = build_encoder<double>(spec, 21);
    spec.pooling = Pooling::mean_pool;
    auto mp = Encoder<double>(spec, ct.shared_params());
    Rng rng(22);
    auto img = random_image(32, rng);
    auto ect = encode_image(ct, nullptr, img);
    auto emp = encode_image(mp, nullptr, img);
    CHECK(ect.size() == emp.size());
    bool differs = false;
    for (std::size_t i = 0; i < ect.size(); ++i) differs |= std::abs(ect[i] - emp[i]) > 1e-9;
    CHECK(differs);
}

TEST_CASE("live adapters equal merged weights in eval mode") {
    auto spec = EncoderSpec::toy();
    auto enc = build_encoder<double>(spec, 31);
    FamConfig fam;
    fam.adapted_block_count = 3;
    auto adapters = inject<double>(enc, fam, 32);
    // push the factors away from zero so the check is not vacuous
    Rng rng(33);
    for (auto& [site, f] : adapters.sites) {
        for (std::size_t i = 0; i < f.up.size(); ++i) f.up.data()[i] = rng.normal(0.0, 0.05);
        for (std::size_t i = 0; i < f.down.size(); ++i) f.down.data()[i] = rng.normal(0.0, 0.05);
    }
    auto merged = merge_adapters(enc, adapters);
    for (int trial = 0; trial < 5; ++trial) {
        auto img = random_image(32, rng);
        auto live = encode_image(enc, &adapters, img);
        auto baked = encode_image(merged, nullptr, img);
        for (std::size_t i = 0; i < live.size(); ++i) {
            double denom = std::max({std::abs(live[i]), std::abs(baked[i]), 1e-3});
            CHECK(std::abs(live[i] - baked[i]) / denom < 1e-5);
        }
    }
    // merging must not disturb the source encoder
    auto img = random_image(32, rng);
    auto before = encode_image(enc, nullptr, img);
    auto enc2 = build_encoder<double>(spec, 31);
    auto again = encode_image(enc2, nullptr, img);
    for (std::size_t i = 0; i < before.size(); ++i) CHECK(before[i] == again[i]);
}

TEST_CASE("fingerprints track params, spec, and adapter state") {
    auto spec = EncoderSpec::toy();
    auto a = build_encoder<double>(spec, 1);
    auto b = build_encoder<double>(spec, 1);
    auto c = build_encoder<double>(spec, 2);
    CHECK(fingerprint(a) == fingerprint(b));
    CHECK(fingerprint(a) != fingerprint(c));

    FamConfig fam;
    fam.adapted_block_count = 1;
    auto ad = inject<double>(a, fam, 9);
    auto fp0 = fingerprint(a, ad);
    CHECK(fp0 != fingerprint(a));
    ad.sites.begin()->second.up(0, 0) += 0.5;
    CHECK(fingerprint(a, ad) != fp0);
}

TEST_CASE("weights save/load round trip with fingerprint checks") {
    namespace fs = std::filesystem;
    auto dir = fs::temp_directory_path() / "famsec_vit_test";
    fs::create_directories(dir);
    auto path = dir / "toy.wts";

    auto spec = EncoderSpec::toy();
    auto enc = build_encoder<double>(spec, 77);
    save_encoder(enc, path);

    // fixture: embeddings computed by the saved ("external") model
    Rng rng(78);
    std::vector<Image> fixtures;
    for (int i = 0; i < 3; ++i) fixtures.push_back(random_image(32, rng));
    std::vector<std::vector<double>> expected;
    for (const auto& img : fixtures) expected.push_back(encode_image(enc, nullptr, img));

    auto loaded = attach_pretrained<double>(path, spec);
    for (std::size_t i = 0; i < fixtures.size(); ++i) {
        auto got = encode_image(loaded, nullptr, fixtures[i]);
        for (std::size_t j = 0; j < got.size(); ++j)
            CHECK(got[j] == doctest::Approx(expected[i][j]).epsilon(1e-4));
    }

    SUBCASE("spec mismatch is a load error") {
        EncoderSpec other = spec;
        other.depth = 2;
        CHECK_THROWS_AS((void)attach_pretrained<double>(path, other), load_error);
    }
    SUBCASE("missing file is a load error") {
        CHECK_THROWS_AS((void)attach_pretrained<double>(dir / "nope.wts", spec), load_error);
    }
    SUBCASE("corrupt payload is a load error") {
        auto bytes = read_text_file(path);
        bytes[bytes.size() / 2] = char(bytes[bytes.size() / 2] ^ 0x40);
        write_text_file(dir / "corrupt.wts", bytes);
        CHECK_THROWS_AS((void)attach_pretrained<double>(dir / "corrupt.wts", spec), load_error);
    }
    fs::remove_all(dir);
}

TEST_CASE("backward pass matches finite differences through every layer kind") {
    // Tiny encoder so the dense finite-difference sweep stays fast.
    EncoderSpec spec;
    spec.image_size = 16;
    spec.patch_size = 8;
    spec.depth = 2;
    spec.width = 16;
    spec.heads = 2;
    spec.embed_dim = 8;

    auto enc = build_encoder<double>(spec, 55);
    FamConfig fam;
    fam.rank = 2;
    fam.dropout_p = 0.0;  // finite differences need a deterministic forward
    fam.adapted_block_count = 2;
    auto adapters = inject<double>(enc, fam, 56);
    Rng rng(57);
    for (auto& [site, f] : adapters.sites) {
        for (std::size_t i = 0; i < f.up.size(); ++i) f.up.data()[i] = rng.normal(0.0, 0.05);
        for (std::size_t i = 0; i < f.down.size(); ++i) f.down.data()[i] = rng.normal(0.0, 0.05);
    }

    auto img = random_image(16, rng);
    // Scalar objective: fixed random linear functional of the embedding.
    std::vector<double> probe(8);
    for (auto& v : probe) v = rng.normal();
    auto objective = [&]() {
        auto e = encode_image(enc, &adapters, img, true, nullptr, nullptr);
        return dot(e.data(), probe.data(), 8);
    };

    vitdetail::ForwardCache<double> cache;
    (void)encode_image(enc, &adapters, img, true, nullptr, &cache);
    EncoderGrads<double> base_grads(enc);
    AdapterGrads<double> ad_grads(adapters);
    encode_backward(enc, &adapters, cache, probe, &base_grads, &ad_grads);

    const double eps = 1e-5;
    auto fd_check = [&](double* param, double analytic) {
        const double save = *param;
        *param = save + eps;
        double fp = objective();
        *param = save - eps;
        double fm = objective();
        *param = save;
        double fd = (fp - fm) / (2 * eps);
        double denom = std::max({std::abs(fd), std::abs(analytic), 1e-6});
        CHECK(std::abs(fd - analytic) / denom < 1e-5);
    };

    // A spread of base parameters from every layer family.
    auto& P = enc.mutable_params();
    auto& G = base_grads.g;
    fd_check(&P.patch_w(0, 3), G.patch_w(0, 3));
    fd_check(&P.patch_b(0, 1), G.patch_b(0, 1));
    fd_check(&P.cls(0, 2), G.cls(0, 2));
    fd_check(&P.pos(1, 5), G.pos(1, 5));
    fd_check(&P.proj(2, 7), G.proj(2, 7));
    fd_check(&P.lnf_g(0, 4), G.lnf_g(0, 4));
    fd_check(&P.lnf_b(0, 9), G.lnf_b(0, 9));
    for (int b = 0; b < 2; ++b) {
        auto& blk = P.blocks[std::size_t(b)];
        auto& gb = G.blocks[std::size_t(b)];
        fd_check(&blk.wq(3, 2), gb.wq(3, 2));
        fd_check(&blk.bq(0, 7), gb.bq(0, 7));
        fd_check(&blk.wk(5, 5), gb.wk(5, 5));
        fd_check(&blk.wv(1, 8), gb.wv(1, 8));
        fd_check(&blk.wo(9, 0), gb.wo(9, 0));
        fd_check(&blk.ln1_g(0, 3), gb.ln1_g(0, 3));
        fd_check(&blk.ln2_b(0, 12), gb.ln2_b(0, 12));
        fd_check(&blk.fc1_w(20, 3), gb.fc1_w(20, 3));
        fd_check(&blk.fc1_b(0, 40), gb.fc1_b(0, 40));
        fd_check(&blk.fc2_w(3, 33), gb.fc2_w(3, 33));
        fd_check(&blk.fc2_b(0, 2), gb.fc2_b(0, 2));
    }
    // Adapter factors: every scalar of one site plus samples from the rest.
    for (auto& [site, f] : adapters.sites) {
        auto& fg = ad_grads.sites.at(site);
        fd_check(&f.up(0, 0), fg.d_up(0, 0));
        fd_check(&f.up(7, 1), fg.d_up(7, 1));
        fd_check(&f.down(0, 3), fg.d_down(0, 3));
        fd_check(&f.down(1, 11), fg.d_down(1, 11));
    }
}

TEST_CASE("class-token count law") {
    for (int img_size : {16, 32, 64}) {
        EncoderSpec spec = EncoderSpec::toy();
        spec.image_size = img_size;
        spec.patch_size = 8;
        CHECK(spec.token_count() == (img_size / 8) * (img_size / 8) + 1);
    }
}
