#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include "srw/dataset.hpp"

namespace fs = std::filesystem;
using namespace srw;

namespace {
fs::path temp_dir(const char* tag) {
    const fs::path dir = fs::temp_directory_path() / "srw_tests" / tag;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}
}  // namespace

TEST_CASE("gen_synthetic is deterministic per seed") {
    const auto a = gen_synthetic(4, 16, 9);
    const auto b = gen_synthetic(4, 16, 9);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].id == b[i].id);
        CHECK(std::memcmp(a[i].image.data.data(), b[i].image.data.data(),
                          a[i].image.data.size() * sizeof(double)) == 0);
        CHECK(a[i].clean_mask.data == b[i].clean_mask.data);
    }
    const auto c = gen_synthetic(4, 16, 10);
    CHECK(std::memcmp(a[0].image.data.data(), c[0].image.data.data(),
                      a[0].image.data.size() * sizeof(double)) != 0);
}

TEST_CASE("blob area fraction stays within [5%, 60%] for n=500, seed=0") {
    const auto samples = gen_synthetic(500, 24, 0);
    for (const auto& s : samples) {
        int64_t fg = 0;
        for (double v : s.clean_mask.data) fg += v == 1.0;
        const double frac = static_cast<double>(fg) / 576.0;
        CHECK(frac >= 0.05);
        CHECK(frac <= 0.60);
    }
}

TEST_CASE("raster files round trip") {
    const auto dir = temp_dir("raster");
    const auto samples = gen_synthetic(2, 16, 4);

    const std::string ppm = (dir / "img.ppm").string();
    save_ppm(samples[0].image, ppm);
    const Tensor img = load_ppm(ppm);
    // 8-bit quantization, then lossless round trip
    save_ppm(img, ppm);
    const Tensor img2 = load_ppm(ppm);
    CHECK(img.data == img2.data);

    const std::string pgm = (dir / "mask.pgm").string();
    save_pgm(samples[0].clean_mask, pgm);
    const Tensor mask = load_pgm(pgm);
    CHECK(mask.data == samples[0].clean_mask.data);
}

TEST_CASE("loading a 3-channel file as a mask fails with the contract message") {
    const auto dir = temp_dir("badmask");
    const auto samples = gen_synthetic(1, 16, 4);
    const std::string path = (dir / "img.ppm").string();
    save_ppm(samples[0].image, path);
    CHECK_THROWS_WITH_AS(load_pgm(path), doctest::Contains("mask must be single-channel"),
                         IoError);
}

TEST_CASE("malformed and truncated rasters are rejected") {
    const auto dir = temp_dir("trunc");
    {
        std::ofstream f(dir / "bad.pgm", std::ios::binary);
        f << "P5\n4 4\n255\n";
        f << "ab";  // 2 of 16 bytes
    }
    CHECK_THROWS_AS(load_pgm((dir / "bad.pgm").string()), IoError);
    {
        std::ofstream f(dir / "junk.pgm", std::ios::binary);
        f << "Px\n";
    }
    CHECK_THROWS_AS(load_pgm((dir / "junk.pgm").string()), IoError);
}

TEST_CASE("normalization: the training pool itself becomes zero mean, unit std") {
    auto samples = gen_synthetic(6, 16, 12);
    std::vector<const Tensor*> pool;
    for (const auto& s : samples) pool.push_back(&s.image);
    const NormStats stats = compute_norm_stats(pool);
    for (auto& s : samples) normalize_inplace(s.image, stats);

    const int64_t plane = 16 * 16;
    for (int64_t ch = 0; ch < 3; ++ch) {
        double mean = 0.0, var = 0.0;
        for (const auto& s : samples) {
            for (int64_t q = 0; q < plane; ++q) mean += s.image.data[ch * plane + q];
        }
        mean /= static_cast<double>(plane * 6);
        for (const auto& s : samples) {
            for (int64_t q = 0; q < plane; ++q) {
                const double d = s.image.data[ch * plane + q] - mean;
                var += d * d;
            }
        }
        const double sd = std::sqrt(var / static_cast<double>(plane * 6));
        CHECK(std::abs(mean) < 1e-6);
        CHECK(std::abs(sd - 1.0) < 1e-6);
    }
}

TEST_CASE("a constant channel raises the zero-std error") {
    Tensor flat = Tensor::full({3, 8, 8}, 0.5);
    std::vector<const Tensor*> pool{&flat};
    CHECK_THROWS_AS(compute_norm_stats(pool), NumericalError);
}

TEST_CASE("precomputed stats applied to held-out data match hand arithmetic") {
    NormStats stats;
    stats.mean = {0.5, 0.25, 0.75};
    stats.stdev = {0.5, 0.25, 0.25};
    Tensor img = Tensor::full({3, 2, 2}, 1.0);
    normalize_inplace(img, stats);
    CHECK(img.at({0, 0, 0}) == 1.0);   // (1-0.5)/0.5
    CHECK(img.at({1, 0, 0}) == 3.0);   // (1-0.25)/0.25
    CHECK(img.at({2, 0, 0}) == 1.0);   // (1-0.75)/0.25

    const NormStats back = norm_stats_from_text(norm_stats_to_text(stats));
    CHECK(back.mean == stats.mean);
    CHECK(back.stdev == stats.stdev);
}

TEST_CASE("disjoint split: exact sizes, pairwise disjoint sets") {
    const auto samples = gen_synthetic(120, 16, 5);
    NoiseSpec spec{NoiseKind::KVertex, 3, -1};
    const DatasetSplit split =
        make_splits(samples, 10, 90, 10, 10, spec, SplitPolicy::Disjoint, 5);
    CHECK(split.clean.size() == 10);
    CHECK(split.noisy.size() == 90);
    CHECK(split.val.size() == 10);
    CHECK(split.test.size() == 10);

    std::set<std::string> seen;
    for (const auto* set : {&split.noisy, &split.clean, &split.val, &split.test}) {
        for (const auto& s : *set) CHECK(seen.insert(s.id).second);
    }
    for (const auto& s : split.noisy) {
        CHECK(s.noisy_mask.numel() == s.clean_mask.numel());
        CHECK(s.noisy_mask.data == make_noisy_mask(s.clean_mask, spec).data);
    }
}

TEST_CASE("subset split: every clean image has a noisy twin") {
    const auto samples = gen_synthetic(30, 16, 6);
    NoiseSpec spec{NoiseKind::KVertex, 3, -1};
    const DatasetSplit split =
        make_splits(samples, 12, 12, 3, 3, spec, SplitPolicy::Subset, 6);
    CHECK(split.clean.size() == 12);
    CHECK(split.noisy.size() == 12);
    std::set<std::string> noisy_ids;
    for (const auto& s : split.noisy) noisy_ids.insert(s.id);
    for (const auto& s : split.clean) CHECK(noisy_ids.count(s.id) == 1);
}

TEST_CASE("K=0 yields a split usable by plain mode only") {
    const auto samples = gen_synthetic(20, 16, 7);
    NoiseSpec spec{NoiseKind::Maximal, 0, -1};
    const DatasetSplit split =
        make_splits(samples, 0, 16, 2, 2, spec, SplitPolicy::Disjoint, 7);
    CHECK(split.clean.empty());
    CHECK(split.noisy.size() == 16);
}

TEST_CASE("insufficient samples are rejected") {
    const auto samples = gen_synthetic(10, 16, 8);
    NoiseSpec spec{NoiseKind::KVertex, 3, -1};
    CHECK_THROWS_AS(make_splits(samples, 4, 6, 2, 2, spec, SplitPolicy::Disjoint, 8),
                    ContractViolation);
}

TEST_CASE("corpus directory round trips through save and load") {
    const auto dir = temp_dir("corpus");
    const auto samples = gen_synthetic(3, 16, 13);
    save_corpus(samples, dir.string());
    const auto loaded = load_corpus(dir.string());
    REQUIRE(loaded.size() == 3);
    for (size_t i = 0; i < 3; ++i) {
        CHECK(loaded[i].id == samples[i].id);
        CHECK(loaded[i].clean_mask.data == samples[i].clean_mask.data);
    }
}

TEST_CASE("area-average resize and mask re-binarization") {
    Tensor mask = Tensor::zeros({8, 8});
    for (int64_t r = 0; r < 4; ++r) {
        for (int64_t c = 0; c < 8; ++c) mask.at({r, c}) = 1.0;
    }
    const Tensor small = resize_mask(mask, 4);
    CHECK(small.shape == std::vector<int64_t>{4, 4});
    for (int64_t c = 0; c < 4; ++c) {
        CHECK(small.at({0, c}) == 1.0);
        CHECK(small.at({1, c}) == 1.0);
        CHECK(small.at({2, c}) == 0.0);
    }

    Tensor img = Tensor::full({3, 8, 8}, 0.25);
    const Tensor rimg = resize_image(img, 4);
    for (double v : rimg.data) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));
}
