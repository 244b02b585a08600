#pragma once

#include <string>

#include "erode/tensor.hpp"

namespace erode {

// Binary PGM (P5, one channel) or PPM (P6, three channels); values rounded
// to the nearest integer and clamped to [0, 255].
void write_image(const Tensor& chw, const std::string& path);

// Writes aligned clean/adversarial pairs as <prefix>_NNN_clean.* and
// <prefix>_NNN_adv.* (extension .pgm or .ppm by channel count).
void dump_images(const Tensor& clean_batch, const Tensor& adv_batch, const std::string& prefix);

// Raw tensor snapshot ("ERODE-TENSOR"): shape then little-endian doubles.
void save_tensor(const Tensor& t, const std::string& path);
Tensor load_tensor(const std::string& path);

}  // namespace erode
