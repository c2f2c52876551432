#pragma once

#include <string>

#include "mage/tensor.hpp"

namespace mage {

// Images are [H*W, 3] tensors, channel-last, values in [-1, 1].
struct ImageSize {
    int height = 0;
    int width = 0;
};

Tensor read_png(const std::string& path, ImageSize* size_out = nullptr);
void write_png(const std::string& path, const Tensor& image, int height, int width);

} // namespace mage
