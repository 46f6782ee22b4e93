// Copyright (c) 2026 the famsec authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "famsec/image.hpp"
#include "famsec/io.hpp"
#include "famsec/matrix.hpp"
#include "famsec/png_io.hpp"
#include "famsec/rng.hpp"

using namespace famsec;

TEST_CASE("matmul against hand-computed products") {
    Matrix<double> a(2, 3), b(3, 2);
    // a = [[1,2,3],[4,5,6]], b = [[7,8],[9,10],[11,12]]
    double av[] = {1, 2, 3, 4, 5, 6}, bv[] = {7, 8, 9, 10, 11, 12};
    std::copy(av, av + 6, a.data());
    std::copy(bv, bv + 6, b.data());
    auto c = matmul(a, b);
    CHECK(c(0, 0) == doctest::Approx(58));
    CHECK(c(0, 1) == doctest::Approx(64));
    CHECK(c(1, 0) == doctest::Approx(139));
    CHECK(c(1, 1) == doctest::Approx(154));

    auto cnt = matmul_nt(a, b.transposed());
    CHECK(max_abs_diff(c, cnt) == doctest::Approx(0));

    Matrix<double> acc(2, 2);
    matmul_tn_acc(a.transposed(), b, acc);  // (a^T)^T b = a b
    CHECK(max_abs_diff(acc, c) == doctest::Approx(0).epsilon(1e-12));
}

TEST_CASE("matmul rejects mismatched shapes") {
    Matrix<double> a(2, 3), b(2, 2);
    CHECK_THROWS_AS((void)matmul(a, b), contract_error);
}

TEST_CASE("numerical rank counts singular values above tolerance") {
    Rng rng(7);
    Matrix<double> up(8, 2), down(2, 8);
    for (std::size_t i = 0; i < up.size(); ++i) up.data()[i] = rng.normal();
    for (std::size_t i = 0; i < down.size(); ++i) down.data()[i] = rng.normal();
    auto prod = matmul(up, down);
    CHECK(numerical_rank(prod, 1e-8) <= 2);
    CHECK(numerical_rank(prod, 1e-8) == 2);

    Matrix<double> zero(6, 6);
    CHECK(numerical_rank(zero, 1e-8) == 0);
}

TEST_CASE("rng is deterministic and derivable") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

    Rng base(9);
    Rng c1 = base.derive(1), c1_again = base.derive(1), c2 = base.derive(2);
    CHECK(c1.next_u64() == c1_again.next_u64());
    CHECK(c1.next_u64() != c2.next_u64());
}

TEST_CASE("rng normal has sane moments") {
    Rng rng(3);
    double sum = 0, sum2 = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        double v = rng.normal();
        sum += v;
        sum2 += v * v;
    }
    CHECK(std::abs(sum / n) < 0.05);
    CHECK(std::abs(sum2 / n - 1.0) < 0.05);
}

TEST_CASE("little-endian round trip") {
    namespace fs = std::filesystem;
    auto tmp = fs::temp_directory_path() / "famsec_io_test.bin";
    {
        auto os = open_out(tmp);
        write_le<std::uint32_t>(os, 0xdeadbeef);
        write_le<float>(os, 1.5f);
        write_le<double>(os, -2.25);
        write_str(os, "hello");
        Matrix<double> m(2, 2);
        m(0, 0) = 1; m(0, 1) = 2; m(1, 0) = 3; m(1, 1) = 4;
        write_matrix_f32(os, m);
    }
    {
        auto is = open_in(tmp);
        CHECK(read_le<std::uint32_t>(is) == 0xdeadbeef);
        CHECK(read_le<float>(is) == 1.5f);
        CHECK(read_le<double>(is) == -2.25);
        CHECK(read_str(is) == "hello");
        auto m = read_matrix_f32<double>(is);
        CHECK(m.rows() == 2);
        CHECK(m(1, 0) == 3.0);
    }
    fs::remove(tmp);
}

TEST_CASE("png encode/decode round trip") {
    Rng rng(11);
    Image img(19, 23);
    for (auto& v : img.data) v = float(rng.uniform());
    auto bytes = png::encode(img);
    Image back = png::decode(bytes.data(), bytes.size(), "mem");
    REQUIRE(back.height == img.height);
    REQUIRE(back.width == img.width);
    float max_err = 0;
    for (std::size_t i = 0; i < img.data.size(); ++i)
        max_err = std::max(max_err, std::abs(img.data[i] - back.data[i]));
    CHECK(max_err <= 0.5f / 255.0f + 1e-6f);  // 8-bit quantization only
}

TEST_CASE("png rejects garbage") {
    std::vector<unsigned char> junk(64, 0x5a);
    CHECK_THROWS_AS((void)png::decode(junk.data(), junk.size(), "junk"), ingestion_error);
}

TEST_CASE("png header probe") {
    namespace fs = std::filesystem;
    auto tmp = fs::temp_directory_path() / "famsec_probe.png";
    Image img(8, 8);
    png::write_file(tmp, img);
    int w = 0, h = 0;
    CHECK(png::header_ok(tmp, &w, &h));
    CHECK(w == 8);
    CHECK(h == 8);
    write_text_file(tmp, "not a png at all");
    CHECK_FALSE(png::header_ok(tmp));
    fs::remove(tmp);
}

TEST_CASE("crop and resize geometry") {
    Image img(10, 12);
    for (int y = 0; y < 10; ++y)
        for (int x = 0; x < 12; ++x) img.at(y, x, 0) = float(y * 100 + x);
    auto c = crop(img, 2, 3, 4, 5);
    CHECK(c.height == 4);
    CHECK(c.width == 5);
    CHECK(c.at(0, 0, 0) == 203.0f);
    CHECK_THROWS_AS((void)crop(img, 8, 0, 4, 4), contract_error);

    auto up = resize_bilinear(img, 20, 24);
    CHECK(up.height == 20);
    CHECK(up.at(0, 0, 0) == img.at(0, 0, 0));          // corners preserved
    CHECK(up.at(19, 23, 0) == img.at(9, 11, 0));
}
