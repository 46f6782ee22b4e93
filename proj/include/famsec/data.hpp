// Copyright (c) 2026 the famsec authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "famsec/common.hpp"
#include "famsec/image.hpp"
#include "famsec/io.hpp"
#include "famsec/png_io.hpp"
#include "famsec/rng.hpp"

namespace famsec {

namespace fs = std::filesystem;

// Dataset layout:  root/{train|test}/{source}/{real|fake}/*.png
inline constexpr const char* kSplits[2] = {"train", "test"};

struct ManifestEntry {
    std::string path;  // absolute
    std::string split;
    std::string source;
    int label = 0;  // real = 1, fake = 0
};

struct DatasetManifest {
    fs::path root;
    std::vector<ManifestEntry> entries;

    std::vector<std::string> sources(const std::string& split) const {
        std::set<std::string> s;
        for (const auto& e : entries)
            if (e.split == split) s.insert(e.source);
        return {s.begin(), s.end()};
    }

    std::size_t count(const std::string& split, const std::string& source, int label) const {
        std::size_t n = 0;
        for (const auto& e : entries)
            if (e.split == split && e.source == source && e.label == label) ++n;
        return n;
    }

    std::vector<ManifestEntry> select(const std::string& split,
                                      const std::vector<std::string>& sources_filter = {}) const {
        std::vector<ManifestEntry> out;
        for (const auto& e : entries) {
            if (e.split != split) continue;
            if (!sources_filter.empty() &&
                std::find(sources_filter.begin(), sources_filter.end(), e.source) ==
                    sources_filter.end())
                continue;
            out.push_back(e);
        }
        return out;
    }
};

// Scan the on-disk layout. Every *.png is probed (signature + header); any
// unreadable or corrupt file makes the scan fail with the offending paths
// listed, rather than being silently skipped.
inline DatasetManifest load_manifest(const fs::path& root) {
    if (!fs::is_directory(root)) throw ingestion_error("dataset root not found: " + root.string());
    DatasetManifest m;
    m.root = root;
    std::vector<std::string> problems;
    bool any_split = false;
    for (const char* split : kSplits) {
        fs::path split_dir = root / split;
        if (!fs::is_directory(split_dir)) continue;
        any_split = true;
        for (const auto& src_entry : fs::directory_iterator(split_dir)) {
            if (!src_entry.is_directory()) continue;
            const std::string source = src_entry.path().filename().string();
            bool has_class_dir = false;
            for (const auto& [cls, label] : {std::pair<const char*, int>{"real", 1},
                                             std::pair<const char*, int>{"fake", 0}}) {
                fs::path cls_dir = src_entry.path() / cls;
                if (!fs::is_directory(cls_dir)) continue;
                has_class_dir = true;
                std::vector<fs::path> files;
                for (const auto& f : fs::directory_iterator(cls_dir))
                    if (f.is_regular_file() && f.path().extension() == ".png")
                        files.push_back(f.path());
                std::sort(files.begin(), files.end());
                for (const auto& f : files) {
                    if (!png::header_ok(f)) {
                        problems.push_back(f.string());
                        continue;
                    }
                    m.entries.push_back({f.string(), split, source, label});
                }
            }
            if (!has_class_dir)
                problems.push_back(src_entry.path().string() + " (no real/ or fake/ subdirectory)");
        }
    }
    if (!any_split)
        throw ingestion_error("dataset layout missing split directories: " +
                              (root / "train").string() + ", " + (root / "test").string());
    if (!problems.empty()) {
        std::string msg = "dataset scan found unreadable or malformed entries:";
        for (const auto& p : problems) msg += "\n  " + p;
        throw ingestion_error(msg);
    }
    return m;
}

// Manifest cache: one header line then `split,source,label,path` rows with
// paths relative to the cache's own directory, so the corpus tree stays
// relocatable and byte-reproducible. Written beside generated corpora so
// large trees need not be rescanned; a fresh load_manifest scan remains the
// source of truth.
inline void write_manifest_cache(const DatasetManifest& m, const fs::path& path) {
    const fs::path base = path.parent_path();
    std::string out = "split,source,label,path\n";
    for (const auto& e : m.entries)
        out += e.split + "," + e.source + "," + std::to_string(e.label) + "," +
               fs::relative(e.path, base).generic_string() + "\n";
    write_text_file(path, out);
}

inline DatasetManifest read_manifest_cache(const fs::path& path) {
    auto text = read_text_file(path);
    DatasetManifest m;
    m.root = path.parent_path();
    std::istringstream ss(text);
    std::string line;
    bool first = true;
    while (std::getline(ss, line)) {
        if (first) {
            FAMSEC_REQUIRE(line == "split,source,label,path", ingestion_error,
                           "manifest cache: unexpected header in " + path.string());
            first = false;
            continue;
        }
        if (line.empty()) continue;
        ManifestEntry e;
        auto c1 = line.find(',');
        auto c2 = line.find(',', c1 + 1);
        auto c3 = line.find(',', c2 + 1);
        FAMSEC_REQUIRE(c1 != std::string::npos && c2 != std::string::npos &&
                           c3 != std::string::npos,
                       ingestion_error, "manifest cache: malformed row '" + line + "'");
        e.split = line.substr(0, c1);
        e.source = line.substr(c1 + 1, c2 - c1 - 1);
        e.label = std::stoi(line.substr(c2 + 1, c3 - c2 - 1));
        e.path = (m.root / line.substr(c3 + 1)).string();
        m.entries.push_back(std::move(e));
    }
    return m;
}

// ---------------------------------------------------------------------------
// Crops
// ---------------------------------------------------------------------------

// Random square crop. Images smaller than the target are bilinearly upscaled
// first so the crop window always fits.
inline Image random_crop(const Image& img, int size, std::uint64_t seed) {
    Image base = img;
    if (base.height < size || base.width < size) {
        double scale = std::max(double(size) / base.height, double(size) / base.width);
        int nh = std::max(size, int(std::ceil(base.height * scale)));
        int nw = std::max(size, int(std::ceil(base.width * scale)));
        base = resize_bilinear(base, nh, nw);
    }
    Rng rng(mix_seed(seed, 0xc309u));
    int dy = int(rng.uniform_int(std::uint64_t(base.height - size + 1)));
    int dx = int(rng.uniform_int(std::uint64_t(base.width - size + 1)));
    return crop(base, dy, dx, size, size);
}

// Deterministic eval-time counterpart.
inline Image eval_crop(const Image& img, int size) {
    Image base = img;
    if (base.height < size || base.width < size) {
        double scale = std::max(double(size) / base.height, double(size) / base.width);
        int nh = std::max(size, int(std::ceil(base.height * scale)));
        int nw = std::max(size, int(std::ceil(base.width * scale)));
        base = resize_bilinear(base, nh, nw);
    }
    return center_crop(base, size);
}

// ---------------------------------------------------------------------------
// Synthetic corpus
// ---------------------------------------------------------------------------

// Desk-scale stand-in for public real/fake corpora. "Real" images come from
// a smooth random texture process; "fake" images add a family-keyed periodic
// artifact, emulating a generator fingerprint. Held-out families appear only
// in the test split and play the role of unseen generators.
struct SyntheticSpec {
    int image_size = 48;
    int train_count_per_class = 250;
    int test_count_per_class = 250;
    std::vector<std::string> families = {"A", "B"};
    std::vector<std::string> holdout_families = {};
    double fingerprint_amplitude = 0.30;
    // Every image (real or fake) carries broadband "sensor" noise with a
    // per-image sigma drawn from [noise_level/3, noise_level]. Total
    // high-frequency energy therefore overlaps between classes; what
    // separates a fake is its family's narrowband peak, not raw energy.
    double noise_level = 0.12;
    // Families listed here additionally imprint a weak pixel-grid
    // (checkerboard) artifact, the classic upsampler trace. It is a
    // family-specific shortcut: a detector that keys on it will not carry
    // over to families without it.
    std::vector<std::string> grid_families = {"A"};
    double grid_amplitude = 0.10;
    // Each family's images (real and fake alike) pass through a family-keyed
    // brightness/contrast transform, emulating the scene/camera domain of
    // one dataset. 0 disables, 1 is the full keyed shift.
    double domain_shift = 1.0;
    std::uint64_t seed = 0;

    void validate() const {
        FAMSEC_REQUIRE(image_size >= 8, config_error, "synthetic: image_size too small");
        FAMSEC_REQUIRE(train_count_per_class >= 2 && test_count_per_class >= 2, config_error,
                       "synthetic: counts must be >= 2 per class");
        FAMSEC_REQUIRE(!families.empty(), config_error, "synthetic: need at least one family");
        FAMSEC_REQUIRE(fingerprint_amplitude > 0.0, config_error,
                       "synthetic: fingerprint amplitude must be positive");
        for (const auto& h : holdout_families)
            FAMSEC_REQUIRE(std::find(families.begin(), families.end(), h) != families.end(),
                           config_error, "synthetic: holdout family '" + h + "' not in families");

    }
};

namespace synthdetail {

// Family fingerprint: a fixed high-frequency direction per family id, chosen
// from a small grid by name hash. Distinct ids map to distinct grid cells
// for all single-letter ids used in practice; make_synthetic still verifies
// population separation after generation.
struct Fingerprint {
    double fx, fy;  // cycles per pixel * image dimension at generation time
};

inline Fingerprint family_fingerprint(const std::string& id) {
    Fnv64 h;
    h.update(id.data(), id.size());
    std::uint64_t v = mix_seed(h.digest());
    // grid of 4 x 4 mid-band frequency cells: above the base texture band
    // (<= 3 cycles/image) but low enough that the peak adds little total
    // high-frequency energy compared to the sensor noise. Consecutive table
    // entries are spaced so distinct ids land on well-separated bins.
    static const double fx_table[4] = {4.0, 8.0, 6.0, 9.0};
    static const double fy_table[4] = {4.0, 9.0, 6.0, 8.0};
    return {fx_table[v % 4], fy_table[(v / 4) % 4]};
}

// Smooth random texture in [0,1] (a handful of low-frequency waves squashed
// through tanh) plus broadband per-image noise. The noise sigma is drawn
// from [noise_level/3, noise_level] so "how much high-frequency energy"
// varies image to image for reals and fakes alike.
inline Image base_texture(int size, double noise_level, Rng& rng) {
    constexpr int kWaves = 5;
    double u[kWaves], v[kWaves], phase[kWaves], amp[kWaves];
    for (int m = 0; m < kWaves; ++m) {
        u[m] = rng.uniform(-3.0, 3.0);
        v[m] = rng.uniform(-3.0, 3.0);
        phase[m] = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
        amp[m] = rng.uniform(0.5, 1.0);
    }
    double tint[3];
    for (auto& t : tint) t = rng.uniform(0.65, 1.0);
    const double sigma = rng.uniform(noise_level / 3.0, noise_level);
    Image img(size, size);
    const double two_pi_over = 2.0 * 3.14159265358979323846 / size;
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            double f = 0;
            for (int m = 0; m < kWaves; ++m)
                f += amp[m] * std::sin(two_pi_over * (u[m] * x + v[m] * y) + phase[m]);
            double base = 0.5 + 0.5 * std::tanh(0.8 * f);
            double noise = sigma * rng.normal();
            for (int c = 0; c < 3; ++c) {
                double val = base * tint[c] + noise;
                img.at(y, x, c) = clamp01(float(val));
            }
        }
    return img;
}

inline void add_fingerprint(Image& img, const Fingerprint& fp, double amplitude, Rng& rng) {
    const int size = img.width;
    const double two_pi_over = 2.0 * 3.14159265358979323846 / size;
    const double phase = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    const double amp = amplitude * rng.uniform(0.8, 1.2);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            double p = amp * std::sin(two_pi_over * (fp.fx * x + fp.fy * y) + phase);
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = clamp01(img.at(y, x, c) + float(p));
        }
}

// Family "domain": a gain/bias pair derived from the family id, applied to
// every image of that family's sources. Within-family class geometry is
// untouched; cross-family it is a distribution shift.
struct Domain {
    double gain, bias;
};

inline Domain family_domain(const std::string& id, double strength) {
    Fnv64 h;
    h.update(id.data(), id.size());
    double u1 = double(mix_seed(h.digest(), 0xd0a111ULL) & 0xffff) / 65535.0;
    double u2 = double(mix_seed(h.digest(), 0x5ce9e2ULL) & 0xffff) / 65535.0;
    Domain d;
    d.gain = 1.0 + strength * (0.45 * u1 - 0.30);  // in [1-0.30s, 1+0.15s]
    d.bias = strength * (0.30 * u2 - 0.08);        // in [-0.08s, 0.22s]
    return d;
}

inline void apply_domain(Image& img, const Domain& d) {
    for (auto& v : img.data) v = clamp01(float(d.gain * v + d.bias));
}

// Pixel-aligned checkerboard trace, phase-locked to the pixel grid.
inline void add_grid_artifact(Image& img, double amplitude, Rng& rng) {
    const double amp = amplitude * rng.uniform(0.8, 1.2);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            double p = ((x + y) & 1) ? amp : -amp;
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = clamp01(img.at(y, x, c) + float(p));
        }
}

}  // namespace synthdetail

// Single-bin spectral energy of the mean-channel image at a given frequency
// pair (cycles per `period` pixels), normalized by pixel count. Crops of a
// fingerprinted image keep this statistic because only the phase shifts.
inline double bin_energy(const Image& img, double fx, double fy, int period) {
    double re = 0, im = 0, mean = 0;
    const double wx = 2.0 * 3.14159265358979323846 * fx / period;
    const double wy = 2.0 * 3.14159265358979323846 * fy / period;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            mean += (img.at(y, x, 0) + img.at(y, x, 1) + img.at(y, x, 2)) / 3.0;
    const double n = double(img.height) * img.width;
    mean /= n;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            double g = (img.at(y, x, 0) + img.at(y, x, 1) + img.at(y, x, 2)) / 3.0 - mean;
            double arg = wx * x + wy * y;
            re += g * std::cos(arg);
            im += g * std::sin(arg);
        }
    return (re * re + im * im) / (n * n);
}

// Mean squared discrete-Laplacian response: a family-agnostic high-frequency
// energy statistic.
inline double highband_energy(const Image& img) {
    double acc = 0;
    int count = 0;
    for (int y = 1; y + 1 < img.height; ++y)
        for (int x = 1; x + 1 < img.width; ++x) {
            auto g = [&](int yy, int xx) {
                return (img.at(yy, xx, 0) + img.at(yy, xx, 1) + img.at(yy, xx, 2)) / 3.0;
            };
            double lap = 4 * g(y, x) - g(y - 1, x) - g(y + 1, x) - g(y, x - 1) - g(y, x + 1);
            acc += lap * lap;
            ++count;
        }
    return count ? acc / count : 0.0;
}

// Generate the corpus on disk in the standard layout. Returns the manifest.
// Per-image seeds derive from (spec.seed, family, split, class, index), so
// equal specs produce byte-identical trees regardless of generation order.
inline DatasetManifest make_synthetic(const SyntheticSpec& spec, const fs::path& root) {
    spec.validate();
    Rng base(spec.seed);
    std::vector<std::pair<std::string, synthdetail::Fingerprint>> fps;
    for (const auto& fam : spec.families)
        fps.emplace_back(fam, synthdetail::family_fingerprint(fam));
    // refuse colliding fingerprints up front
    for (std::size_t i = 0; i < fps.size(); ++i)
        for (std::size_t j = i + 1; j < fps.size(); ++j)
            FAMSEC_REQUIRE(fps[i].second.fx != fps[j].second.fx ||
                               fps[i].second.fy != fps[j].second.fy,
                           config_error,
                           "synthetic: families '" + fps[i].first + "' and '" + fps[j].first +
                               "' map to the same fingerprint; rename one");

    for (const auto& [fam, fp] : fps) {
        const bool holdout = std::find(spec.holdout_families.begin(), spec.holdout_families.end(),
                                       fam) != spec.holdout_families.end();
        for (const char* split : kSplits) {
            if (holdout && std::string(split) == "train") continue;
            const int count = std::string(split) == "train" ? spec.train_count_per_class
                                                            : spec.test_count_per_class;
            for (const auto& [cls, is_real] : {std::pair<const char*, bool>{"real", true},
                                               std::pair<const char*, bool>{"fake", false}}) {
                for (int i = 0; i < count; ++i) {
                    Fnv64 h;
                    std::string key = fam + "/" + split + "/" + cls;
                    h.update(key.data(), key.size());
                    h.update_value(std::int64_t(i));
                    Rng rng = base.derive(h.digest());
                    Image img = synthdetail::base_texture(spec.image_size, spec.noise_level, rng);
                    if (spec.domain_shift > 0)
                        synthdetail::apply_domain(
                            img, synthdetail::family_domain(fam, spec.domain_shift));
                    if (!is_real) {
                        synthdetail::add_fingerprint(img, fp, spec.fingerprint_amplitude, rng);
                        if (std::find(spec.grid_families.begin(), spec.grid_families.end(), fam) !=
                            spec.grid_families.end())
                            synthdetail::add_grid_artifact(img, spec.grid_amplitude, rng);
                    }
                    char name[32];
                    std::snprintf(name, sizeof(name), "%05d.png", i);
                    png::write_file(root / split / ("synth" + fam) / cls / name, img);
                }
            }
        }
    }

    // record the generation recipe alongside the data
    std::ostringstream meta;
    meta << "image_size = " << spec.image_size << "\n"
         << "train_count_per_class = " << spec.train_count_per_class << "\n"
         << "test_count_per_class = " << spec.test_count_per_class << "\n"
         << "fingerprint_amplitude = " << spec.fingerprint_amplitude << "\n"
         << "noise_level = " << spec.noise_level << "\n"
         << "seed = " << spec.seed << "\n";
    meta << "families =";
    for (const auto& f : spec.families) meta << " " << f;
    meta << "\nholdout_families =";
    for (const auto& f : spec.holdout_families) meta << " " << f;
    meta << "\ngrid_families =";
    for (const auto& f : spec.grid_families) meta << " " << f;
    meta << "\ngrid_amplitude = " << spec.grid_amplitude << "\n";
    meta << "domain_shift = " << spec.domain_shift << "\n";
    for (const auto& [fam, fp] : fps) {
        auto dom = synthdetail::family_domain(fam, spec.domain_shift);
        meta << "domain." << fam << " = " << dom.gain << "," << dom.bias << "\n";
    }
    for (const auto& [fam, fp] : fps)
        meta << "fingerprint." << fam << " = " << fp.fx << "," << fp.fy << "\n";
    write_text_file(root / "synthetic_spec.txt", meta.str());

    auto manifest = load_manifest(root);
    write_manifest_cache(manifest, root / "manifest.cache");
    return manifest;
}

// ---------------------------------------------------------------------------
// In-memory datasets and batching
// ---------------------------------------------------------------------------

struct DataItem {
    Image image;
    int label = 0;
    std::string source;
    std::string path;
};

struct LoadedDataset {
    std::vector<DataItem> items;

    std::vector<int> labels() const {
        std::vector<int> out;
        out.reserve(items.size());
        for (const auto& it : items) out.push_back(it.label);
        return out;
    }
};

inline LoadedDataset load_images(const DatasetManifest& manifest, const std::string& split,
                                 const std::vector<std::string>& sources_filter = {}) {
    LoadedDataset ds;
    for (const auto& e : manifest.select(split, sources_filter)) {
        DataItem item;
        item.image = png::read_file(e.path);
        item.label = e.label;
        item.source = e.source;
        item.path = e.path;
        ds.items.push_back(std::move(item));
    }
    return ds;
}

// Deterministic batch index stream. With balance=true each batch holds
// ceil(N/2) real and floor(N/2) fake items; an epoch touches each image at
// most once (remainders are dropped, pools reshuffle next epoch).
class Batcher {
public:
    Batcher(const std::vector<int>& labels, int batch_size, bool balance, std::uint64_t seed)
        : batch_size_(batch_size), balance_(balance), rng_(seed) {
        FAMSEC_REQUIRE(batch_size_ >= 2, config_error, "batcher: batch size must be >= 2");
        FAMSEC_REQUIRE(std::size_t(batch_size_) <= labels.size(), config_error,
                       "batcher: batch size exceeds dataset size");
        for (std::size_t i = 0; i < labels.size(); ++i) {
            FAMSEC_REQUIRE(labels[i] == 0 || labels[i] == 1, contract_error,
                           "batcher: labels must be 0 or 1");
            (labels[i] == 1 ? real_ : fake_).push_back(i);
        }
        if (balance_) {
            FAMSEC_REQUIRE(real_.size() >= std::size_t(real_per_batch()) &&
                               fake_.size() >= std::size_t(fake_per_batch()),
                           config_error,
                           "batcher: not enough images of each class for a balanced batch");
        }
        new_epoch();
    }

    int real_per_batch() const { return (batch_size_ + 1) / 2; }
    int fake_per_batch() const { return batch_size_ / 2; }

    std::size_t batches_per_epoch() const {
        if (balance_)
            return std::min(real_.size() / std::size_t(real_per_batch()),
                            fake_.size() / std::size_t(fake_per_batch()));
        return (real_.size() + fake_.size()) / std::size_t(batch_size_);
    }

    std::vector<std::size_t> next() {
        if (cursor_ >= batches_per_epoch()) new_epoch();
        std::vector<std::size_t> batch;
        batch.reserve(std::size_t(batch_size_));
        if (balance_) {
            const std::size_t r0 = cursor_ * std::size_t(real_per_batch());
            const std::size_t f0 = cursor_ * std::size_t(fake_per_batch());
            for (int i = 0; i < real_per_batch(); ++i) batch.push_back(real_shuf_[r0 + i]);
            for (int i = 0; i < fake_per_batch(); ++i) batch.push_back(fake_shuf_[f0 + i]);
        } else {
            const std::size_t a0 = cursor_ * std::size_t(batch_size_);
            for (int i = 0; i < batch_size_; ++i) batch.push_back(all_shuf_[a0 + i]);
        }
        ++cursor_;
        return batch;
    }

private:
    void new_epoch() {
        Rng r = rng_.derive(epoch_++);
        if (balance_) {
            real_shuf_ = real_;
            fake_shuf_ = fake_;
            r.shuffle(real_shuf_);
            r.shuffle(fake_shuf_);
        } else {
            all_shuf_ = real_;
            all_shuf_.insert(all_shuf_.end(), fake_.begin(), fake_.end());
            std::sort(all_shuf_.begin(), all_shuf_.end());
            r.shuffle(all_shuf_);
        }
        cursor_ = 0;
        FAMSEC_REQUIRE(batches_per_epoch() >= 1, config_error,
                       "batcher: dataset too small for even one batch");
    }

    int batch_size_;
    bool balance_;
    Rng rng_;
    std::vector<std::size_t> real_, fake_;
    std::vector<std::size_t> real_shuf_, fake_shuf_, all_shuf_;
    std::uint64_t epoch_ = 0;
    std::size_t cursor_ = 0;
};

// Seeded subset selection: the "train on s samples" regime. Picks a
// class-balanced subset when possible.
inline std::vector<std::size_t> sample_subset(const std::vector<int>& labels, std::size_t count,
                                              std::uint64_t seed) {
    FAMSEC_REQUIRE(count >= 2 && count <= labels.size(), config_error,
                   "sample_subset: bad subset size");
    std::vector<std::size_t> real, fake;
    for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] == 1 ? real : fake).push_back(i);
    Rng rng(mix_seed(seed, 0x5ab5e7ULL));
    rng.shuffle(real);
    rng.shuffle(fake);
    std::vector<std::size_t> out;
    std::size_t want_real = std::min(real.size(), (count + 1) / 2);
    std::size_t want_fake = std::min(fake.size(), count - want_real);
    want_real = std::min(real.size(), count - want_fake);
    out.insert(out.end(), real.begin(), real.begin() + long(want_real));
    out.insert(out.end(), fake.begin(), fake.begin() + long(want_fake));
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace famsec
