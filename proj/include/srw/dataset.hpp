#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "srw/polygon.hpp"
#include "srw/tensor.hpp"

namespace srw {

struct Sample {
    std::string id;
    Tensor image;       // [3,H,W]
    Tensor clean_mask;  // [H,W] in {0,1}
    Tensor noisy_mask;  // [H,W]; empty until a split assigns noise
};

struct NormStats {
    std::array<double, 3> mean{};
    std::array<double, 3> stdev{};
};

enum class SplitPolicy { Disjoint, Subset };

SplitPolicy split_policy_from_string(const std::string& s);
const char* split_policy_name(SplitPolicy p);

struct DatasetSplit {
    std::vector<Sample> noisy;  // D^n, noisy_mask populated
    std::vector<Sample> clean;  // D^c, clean labels
    std::vector<Sample> val;
    std::vector<Sample> test;
    NormStats stats;  // from the training pool, reused everywhere
    SplitPolicy policy = SplitPolicy::Disjoint;
    NoiseSpec noise;
    uint64_t seed = 0;
    std::string policy_record;
};

// One lesion-like blob per image: a rotated ellipse with low-frequency radial
// perturbation, darker than the textured background. Deterministic per
// (seed, index); every clean mask is a single 4-connected component.
std::vector<Sample> gen_synthetic(int64_t n, int64_t side, uint64_t seed);

// Portable pixmap IO. Images are [3,H,W] in [0,1] (P6), masks [H,W] in {0,1}
// (P5 with 0 background / 255 lesion). Round trips are lossless for 8-bit data.
Tensor load_ppm(const std::string& path);
void save_ppm(const Tensor& image, const std::string& path);
Tensor load_pgm(const std::string& path);
void save_pgm(const Tensor& mask, const std::string& path);
// 8-bit visualization of values in [0,1] (not a mask)
void save_pgm_gray(const Tensor& gray, const std::string& path);

// Area-averaging resize for externally supplied rasters; masks re-binarize
// at 0.5 after averaging.
Tensor resize_image(const Tensor& image, int64_t side);
Tensor resize_mask(const Tensor& mask, int64_t side);

NormStats compute_norm_stats(const std::vector<const Tensor*>& images);
void normalize_inplace(Tensor& image, const NormStats& stats);
std::string norm_stats_to_text(const NormStats& stats);
NormStats norm_stats_from_text(const std::string& text);

// Partition samples, synthesize noisy masks for D^n, compute training-pool
// channel statistics and normalize every image in the split with them.
// Disjoint policy keeps all five sets pairwise disjoint; Subset mirrors the
// "clean set inside the noisy set" reading (clean images also appear in D^n
// under noisy labels).
DatasetSplit make_splits(const std::vector<Sample>& samples, int64_t clean_count,
                         int64_t noisy_count, int64_t val_count, int64_t test_count,
                         const NoiseSpec& spec, SplitPolicy policy, uint64_t seed,
                         std::vector<std::string>* warnings = nullptr);

std::string split_manifest(const DatasetSplit& split);

// Corpus directory layout: images/<id>.ppm, masks/<id>.pgm, manifest.txt with
// one id per line.
void save_corpus(const std::vector<Sample>& samples, const std::string& dir);
std::vector<Sample> load_corpus(const std::string& dir, int64_t resize_to = 0);

}  // namespace srw
