#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "abn/rng.hpp"
#include "abn/tensor.hpp"

namespace abn {

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Half-open pixel rectangle [x0,x1) x [y0,y1).
struct Rect {
    long x0 = 0, y0 = 0, x1 = 0, y1 = 0;
    bool valid() const { return x1 > x0 && y1 > y0; }
    long area() const { return valid() ? (x1 - x0) * (y1 - y0) : 0; }
    static Rect none() { return Rect{0, 0, 0, 0}; }
};

struct Dataset {
    Tensor images;            // [N,C,H,W], values in [0,1]
    std::vector<int> labels;  // single-task class indices, size N
    Tensor multi_labels;      // [N,T] of 0/1; undefined for single-task data
    // Per sample: one rect (single-task) or T rects (multi-task, invalid
    // where the attribute is absent). Empty when ground truth is unknown.
    std::vector<std::vector<Rect>> gt_regions;

    std::size_t size() const { return images.defined() ? images.dim(0) : 0; }
    std::size_t tasks() const { return multi_labels.defined() ? multi_labels.dim(1) : 1; }
    bool multitask() const { return multi_labels.defined(); }
};

using Batch = Dataset;

Batch gather(const Dataset& ds, const std::vector<std::size_t>& indices);

struct AugmentConfig {
    std::size_t pad = 4;
    std::size_t crop_h = 32;
    std::size_t crop_w = 32;
    double hflip_prob = 0.5;
};

// Zero-pad, per-sample random crop, per-sample random horizontal flip.
// Labels pass through; gt rectangles are shifted/mirrored and clipped.
Batch augment(const Batch& batch, const AugmentConfig& cfg, Rng& rng);

// Deterministic pieces of the augmentation pipeline, exposed for direct use.
Tensor pad_images(const Tensor& images, std::size_t pad);
Tensor crop_images(const Tensor& images, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w);
Tensor hflip_images(const Tensor& images);
Rect shift_clip_rect(const Rect& r, long dy, long dx, long h, long w);
Rect hflip_rect(const Rect& r, long w);

// Channelwise (x - mean) / std, in place.
void normalize_images(Tensor& images, const std::vector<double>& mean, const std::vector<double>& stddev);
Batch normalize(const Batch& batch, const std::vector<double>& mean, const std::vector<double>& stddev);
// (mean, std) per channel over a [N,C,H,W] tensor; std is the biased estimate.
std::pair<std::vector<double>, std::vector<double>> channel_stats(const Tensor& images);

// CIFAR-10 binary batches: 3073-byte records, 1 label byte + 3072 pixel
// bytes in CHW order (R plane, G plane, B plane). Pixels land in [0,1].
Dataset load_cifar10_file(const std::string& path);
// Reads data_batch_{1..5}.bin as the train split and test_batch.bin as test.
std::pair<Dataset, Dataset> load_cifar10(const std::string& dir);

// Writes 3x32x32 datasets in the same record format; pixel values must sit
// on the k/255 grid (the synthetic generator guarantees this).
void save_records(const Dataset& ds, const std::string& path);
// Sidecar ground-truth file, one "idx x0 y0 x1 y1" line per sample.
void save_regions(const Dataset& ds, const std::string& path);
std::vector<std::vector<Rect>> load_regions(const std::string& path);

// K distinct binary 8x8-style glyphs (horizontally symmetric so mirroring
// augmentation cannot alias classes); cls may exceed the built-in set, in
// which case a seeded random pattern is used.
std::vector<std::uint8_t> glyph_pattern(std::size_t cls, std::size_t ph, std::size_t pw);

// Localized-pattern classification set: background noise plus one
// class-specific glyph stamped at a random location per sample. Pixels are
// quantized to the byte grid so record round-trips are exact.
Dataset make_synthetic(std::size_t num_per_class, std::size_t num_classes, std::size_t channels,
                       std::size_t height, std::size_t width, std::size_t patch_h,
                       std::size_t patch_w, double noise_std, std::uint64_t seed);

// Multi-task variant: T attributes, each independently present with
// probability 1/2, each stamping its own glyph; labels are [N,T].
Dataset make_synthetic_multitask(std::size_t num_samples, std::size_t num_tasks,
                                 std::size_t channels, std::size_t height, std::size_t width,
                                 std::size_t patch_h, std::size_t patch_w, double noise_std,
                                 std::uint64_t seed);

}  // namespace abn
