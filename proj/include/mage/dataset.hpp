#pragma once

#include <string>
#include <vector>

#include "mage/config.hpp"
#include "mage/rng.hpp"
#include "mage/tensor.hpp"

namespace mage {

struct LabeledImage {
    Tensor image; // [S*S, 3] in [-1, 1]
    int label = 0;
};

struct Dataset {
    std::vector<LabeledImage> train;
    std::vector<LabeledImage> test;
    int image_size = 0;
    int num_classes = 0;
};

// Builtin corpus of colored geometric shapes; class = shape type. Fully
// determined by (seed, counts, image_size) — identical on every machine.
Dataset synthetic_corpus(uint64_t seed, int train_per_class, int test_per_class, int image_size,
                         int num_classes = 10);

// Directory of PNGs with one subfolder per class; 80/20 split by
// filename-sorted order within each class.
Dataset load_png_dir(const std::string& path, int image_size);

// Dispatch on cfg.data_source.
Dataset ingest_dataset(const RunConfig& cfg);

// Random-resized-crop (scale range by policy, aspect in [3/4, 4/3]) +
// horizontal flip p=0.5, bilinear resize back to the input resolution.
// Policy None is the identity.
Tensor augment(const Tensor& image, int size, AugPolicy policy, RngStream& rng);

// Bilinear crop-resize used by augment; crop box in source pixel coords.
Tensor bilinear_crop_resize(const Tensor& image, int src_size, float y0, float x0, float crop_h,
                            float crop_w, int out_size);

} // namespace mage
