#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "core/rng.hpp"
#include "core/tensor.hpp"

namespace dfkd {
namespace data {

// Labeled image set with pixels scaled to [-1, 1].
struct Dataset {
    Tensor images;                        // (M, C, H, W)
    std::vector<int> labels;              // M entries in 0..classes-1
    std::vector<std::string> class_names; // label -> directory name

    int count() const { return images.empty() ? 0 : images.size(0); }
    int classes() const { return static_cast<int>(class_names.size()); }
};

// 8-bit raster image, rows interleaved; 1 channel (PGM) or 3 channels (PPM).
struct RasterImage {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<uint8_t> pixels;
};

RasterImage read_raster(const std::string& path);
// Writes P5/P6 according to the channel count, via a temp file and rename.
void write_raster(const std::string& path, const RasterImage& img);

// (C,H,W) in [-1,1] -> 8 bit through (v+1)*127.5, rounded half away from
// zero and clamped: -1 -> 0, 0 -> 128, +1 -> 255.
RasterImage raster_from_chw(const Tensor& chw);
// Inverse map p/127.5 - 1, so 0 -> -1 and 255 -> +1 exactly.
Tensor chw_from_raster(const RasterImage& img);

// Bilinear interpolation with half-pixel-centered sampling.
Tensor resize_bilinear(const Tensor& chw, int out_h, int out_w);

// One (C,H,W) sample copied out of a (M,C,H,W) batch.
Tensor slice_sample(const Tensor& batch, int index);

// On-disk layout: one directory per class under root, holding .ppm/.pgm
// files; class indices follow the sorted directory names. Files are resized
// to out_h x out_w. Any unreadable file fails the load with an itemized list.
Dataset load_image_tree(const std::string& root, int out_h, int out_w);
void write_image_tree(const Dataset& d, const std::string& root);

// Deterministic per-class split: every class list is shuffled under the seed
// and cut at the fraction, so class proportions carry over to both sides.
void split_stratified(const Dataset& all, double train_fraction, uint64_t seed,
                      Dataset& train, Dataset& test);
// The selected portion alone (the real subset for query training).
Dataset stratified_subset(const Dataset& d, double fraction, uint64_t seed);

// Color-coded classes with brightness, patch, and noise jitter: hue encodes
// the class, so compact models separate them quickly. The desk-scale recipe.
Dataset make_synthetic(int classes, int per_class, int h, int w, uint64_t seed);

} // namespace data
} // namespace dfkd
