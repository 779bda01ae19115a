#pragma once

#include <string>

#include "locinv/tensor.hpp"

namespace locinv {

// Portable anymap IO. Images are [3 x H x W] (PPM) or [1 x H x W] (PGM) in
// [0,1]; both binary (P5/P6) and ASCII (P2/P3) variants load.
Tensor read_image(const std::string& path);            // [3 x H x W]
Tensor read_mask_image(const std::string& path);       // [1 x H x W], any channels collapsed
void write_ppm(const std::string& path, const Tensor& image);
void write_pgm(const std::string& path, const Tensor& gray);

}  // namespace locinv
