#pragma once

#include <string>

#include "ursct/tensor.hpp"

namespace ursct {

// Decodes an 8-bit PNG or JPEG (sniffed by magic bytes) into a channel-first
// [3,H,W] float tensor with values byte/255. Grayscale and alpha inputs are
// expanded/stripped to RGB.
Tensor<float> load_image(const std::string& path);

// Writes a [3,H,W] tensor as an 8-bit RGB PNG. Values are clamped to [0,1]
// and quantized round-half-up to byte = round(v*255).
void save_image(const Tensor<float>& image, const std::string& path);

}  // namespace ursct
