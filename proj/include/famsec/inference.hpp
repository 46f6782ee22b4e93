// Copyright (c) 2026 the famsec authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "famsec/common.hpp"
#include "famsec/data.hpp"
#include "famsec/io.hpp"
#include "famsec/sec.hpp"
#include "famsec/vit.hpp"

namespace famsec {

enum class BankAggregation { single, mean_centroid };

inline const char* to_string(BankAggregation a) {
    return a == BankAggregation::single ? "single" : "mean_centroid";
}

// Stored reference embeddings for the distance classifier. `real_refs` and
// `fake_refs` rows are extractor embeddings of known training images.
template <typename T>
struct ReferenceBank {
    Matrix<T> real_refs;
    Matrix<T> fake_refs;
    BankAggregation aggregation = BankAggregation::single;
    std::string fingerprint;

    int embed_dim() const { return real_refs.cols(); }

    void validate() const {
        FAMSEC_REQUIRE(real_refs.rows() >= 1 && fake_refs.rows() >= 1, config_error,
                       "reference bank: both classes need at least one embedding");
        FAMSEC_REQUIRE(real_refs.cols() == fake_refs.cols(), contract_error,
                       "reference bank: embed_dim mismatch between classes");
    }
};

// Test-phase verdict: similarity to the fake references vs similarity to the
// real references. Larger d_f means closer to the fakes.
struct Verdict {
    bool fake = false;
    double d_f = 0;
    double d_r = 0;
    double margin = 0;  // d_f - d_r

    const char* label() const { return fake ? "fake" : "real"; }
};

// The decision rule alone: fake iff d_f > d_r; ties go to real.
inline Verdict decide(double d_f, double d_r) {
    Verdict v;
    v.d_f = d_f;
    v.d_r = d_r;
    v.margin = d_f - d_r;
    v.fake = d_f > d_r;
    return v;
}

// Build a bank by drawing k seeded samples per class from `sample` and
// embedding them with the extractor. With mean_centroid the k embeddings
// collapse to their component-wise mean per class.
template <typename T>
ReferenceBank<T> build_bank(const LoadedDataset& sample, const Encoder<T>& enc,
                            const std::type_identity_t<AdapterSet<T>>* adapters, int k_per_class,
                            BankAggregation aggregation, std::uint64_t seed) {
    FAMSEC_REQUIRE(k_per_class >= 1, config_error, "build_bank: k_per_class must be >= 1");
    std::vector<std::size_t> real_idx, fake_idx;
    for (std::size_t i = 0; i < sample.items.size(); ++i)
        (sample.items[i].label == 1 ? real_idx : fake_idx).push_back(i);
    FAMSEC_REQUIRE(real_idx.size() >= std::size_t(k_per_class), config_error,
                   "build_bank: requested " + std::to_string(k_per_class) + " real references but only " +
                       std::to_string(real_idx.size()) + " available");
    FAMSEC_REQUIRE(fake_idx.size() >= std::size_t(k_per_class), config_error,
                   "build_bank: requested " + std::to_string(k_per_class) + " fake references but only " +
                       std::to_string(fake_idx.size()) + " available");

    Rng rng(mix_seed(seed, 0xba4bULL));
    rng.shuffle(real_idx);
    rng.shuffle(fake_idx);

    const int size = enc.spec().image_size;
    auto embed_rows = [&](const std::vector<std::size_t>& idx) {
        Matrix<T> rows(k_per_class, enc.spec().embed_dim);
        for (int i = 0; i < k_per_class; ++i) {
            Image img = eval_crop(sample.items[idx[std::size_t(i)]].image, size);
            auto e = encode_image(enc, adapters, img);
            std::copy(e.begin(), e.end(), rows.row(i));
        }
        return rows;
    };

    ReferenceBank<T> bank;
    bank.aggregation = aggregation;
    bank.real_refs = embed_rows(real_idx);
    bank.fake_refs = embed_rows(fake_idx);
    if (aggregation == BankAggregation::mean_centroid) {
        auto centroid = [&](const Matrix<T>& rows) {
            Matrix<T> c(1, rows.cols());
            for (int i = 0; i < rows.rows(); ++i)
                for (int j = 0; j < rows.cols(); ++j) c(0, j) += rows(i, j) / T(rows.rows());
            return c;
        };
        bank.real_refs = centroid(bank.real_refs);
        bank.fake_refs = centroid(bank.fake_refs);
    }
    bank.fingerprint = adapters ? fingerprint(enc, *adapters) : fingerprint(enc);
    bank.validate();
    return bank;
}

// Classify a precomputed embedding. d_f/d_r are the max cosine similarity
// against each class's references (a single centroid degenerates to one
// comparison).
template <typename T>
Verdict classify_embedding(const std::vector<T>& embedding, const ReferenceBank<T>& bank) {
    bank.validate();
    FAMSEC_REQUIRE(int(embedding.size()) == bank.embed_dim(), contract_error,
                   "classify: embedding length does not match bank");
    auto best = [&](const Matrix<T>& refs) {
        double best_sim = -2.0;
        for (int i = 0; i < refs.rows(); ++i) {
            std::vector<T> ref(refs.row(i), refs.row(i) + refs.cols());
            best_sim = std::max(best_sim, double(cosine_similarity(ref, embedding)));
        }
        return best_sim;
    };
    return decide(best(bank.fake_refs), best(bank.real_refs));
}

template <typename T>
Verdict classify(const Image& image, const ReferenceBank<T>& bank, const Encoder<T>& enc,
                 const std::type_identity_t<AdapterSet<T>>* adapters) {
    const std::string fp = adapters ? fingerprint(enc, *adapters) : fingerprint(enc);
    FAMSEC_REQUIRE(bank.fingerprint == fp, contract_error,
                   "classify: bank fingerprint " + bank.fingerprint +
                       " does not match extractor " + fp);
    Image in = eval_crop(image, enc.spec().image_size);
    auto e = encode_image(enc, adapters, in);
    return classify_embedding(e, bank);
}

// Order-preserving batch classification; elementwise identical to classify.
template <typename T>
std::vector<Verdict> classify_batch(const std::vector<Image>& images, const ReferenceBank<T>& bank,
                                    const Encoder<T>& enc,
                                    const std::type_identity_t<AdapterSet<T>>* adapters,
                                    int threads = 1) {
    FAMSEC_REQUIRE(!images.empty(), contract_error, "classify_batch: empty batch");
    const std::string fp = adapters ? fingerprint(enc, *adapters) : fingerprint(enc);
    FAMSEC_REQUIRE(bank.fingerprint == fp, contract_error,
                   "classify_batch: bank fingerprint does not match extractor");
    std::vector<Verdict> out(images.size());
    const int n = int(images.size());
    threads = std::max(1, std::min(threads, n));
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
    auto work = [&](int t) {
        try {
            for (int i = t; i < n; i += threads) {
                Image in = eval_crop(images[std::size_t(i)], enc.spec().image_size);
                auto e = encode_image(enc, adapters, in);
                out[std::size_t(i)] = classify_embedding(e, bank);
            }
        } catch (...) {
            errors[std::size_t(t)] = std::current_exception();
        }
    };
    if (threads == 1) {
        work(0);
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t) pool.emplace_back(work, t);
        for (auto& th : pool) th.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return out;
}

// ---------------------------------------------------------------------------
// Bank / embedding export
// ---------------------------------------------------------------------------

inline constexpr char kBankMagic[9] = "FAMSECB1";
inline constexpr char kEmbMagic[9] = "FAMSECE1";

template <typename T>
void save_bank(const fs::path& path, const ReferenceBank<T>& bank) {
    bank.validate();
    auto os = open_out(path);
    os.write(kBankMagic, 8);
    write_le<std::uint32_t>(os, 1);
    write_le<std::uint32_t>(os, std::uint32_t(bank.embed_dim()));
    write_le<std::uint32_t>(os, std::uint32_t(bank.real_refs.rows() + bank.fake_refs.rows()));
    write_str(os, bank.fingerprint);
    write_le<std::uint32_t>(os, std::uint32_t(bank.real_refs.rows()));
    write_le<std::uint32_t>(os, std::uint32_t(bank.fake_refs.rows()));
    write_le<std::uint8_t>(os, bank.aggregation == BankAggregation::single ? 0 : 1);
    for (int i = 0; i < bank.real_refs.rows(); ++i)
        for (int j = 0; j < bank.real_refs.cols(); ++j)
            write_le<float>(os, float(bank.real_refs(i, j)));
    for (int i = 0; i < bank.fake_refs.rows(); ++i)
        for (int j = 0; j < bank.fake_refs.cols(); ++j)
            write_le<float>(os, float(bank.fake_refs(i, j)));
    FAMSEC_REQUIRE(bool(os), load_error, "failed writing bank " + path.string());
}

template <typename T>
ReferenceBank<T> load_bank(const fs::path& path) {
    if (!fs::exists(path)) throw load_error("bank not found: " + path.string());
    auto is = open_in(path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::string(magic, 8) != std::string(kBankMagic, 8))
        throw load_error("not a reference bank: " + path.string());
    if (read_le<std::uint32_t>(is) != 1) throw load_error("unsupported bank version");
    const int embed = int(read_le<std::uint32_t>(is));
    const auto total = read_le<std::uint32_t>(is);
    ReferenceBank<T> bank;
    bank.fingerprint = read_str(is);
    const int n_real = int(read_le<std::uint32_t>(is));
    const int n_fake = int(read_le<std::uint32_t>(is));
    if (n_real + n_fake != int(total)) throw load_error("bank count fields disagree");
    bank.aggregation =
        read_le<std::uint8_t>(is) == 0 ? BankAggregation::single : BankAggregation::mean_centroid;
    bank.real_refs = Matrix<T>(n_real, embed);
    bank.fake_refs = Matrix<T>(n_fake, embed);
    for (std::size_t i = 0; i < bank.real_refs.size(); ++i)
        bank.real_refs.data()[i] = T(read_le<float>(is));
    for (std::size_t i = 0; i < bank.fake_refs.size(); ++i)
        bank.fake_refs.data()[i] = T(read_le<float>(is));
    bank.validate();
    return bank;
}

// Plain embedding container (used by the visualization exports).
template <typename T>
void save_embeddings(const fs::path& path, const Matrix<T>& rows, const std::string& fingerprint) {
    auto os = open_out(path);
    os.write(kEmbMagic, 8);
    write_le<std::uint32_t>(os, 1);
    write_le<std::uint32_t>(os, std::uint32_t(rows.cols()));
    write_le<std::uint32_t>(os, std::uint32_t(rows.rows()));
    write_str(os, fingerprint);
    for (std::size_t i = 0; i < rows.size(); ++i) write_le<float>(os, float(rows.data()[i]));
    FAMSEC_REQUIRE(bool(os), load_error, "failed writing embeddings " + path.string());
}

template <typename T>
Matrix<T> load_embeddings(const fs::path& path, std::string* fingerprint_out = nullptr) {
    auto is = open_in(path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::string(magic, 8) != std::string(kEmbMagic, 8))
        throw load_error("not an embedding file: " + path.string());
    if (read_le<std::uint32_t>(is) != 1) throw load_error("unsupported embedding file version");
    const int embed = int(read_le<std::uint32_t>(is));
    const int count = int(read_le<std::uint32_t>(is));
    std::string fp = read_str(is);
    if (fingerprint_out) *fingerprint_out = fp;
    Matrix<T> rows(count, embed);
    for (std::size_t i = 0; i < rows.size(); ++i) rows.data()[i] = T(read_le<float>(is));
    return rows;
}

// Verdict CSV: path,label,d_f,d_r,margin
inline void write_verdicts(const fs::path& path,
                           const std::vector<std::pair<std::string, Verdict>>& rows) {
    std::string out = "path,label,d_f,d_r,margin\n";
    for (const auto& [p, v] : rows)
        out += p + "," + v.label() + "," + csv_num(v.d_f) + "," + csv_num(v.d_r) + "," +
               csv_num(v.margin) + "\n";
    write_text_file(path, out);
}

}  // namespace famsec
