#pragma once

#include <string>

#include "numcore/tensor.hpp"

namespace fge {

// Binary P6, maxval 255. Pixels map linearly: byte = round(clamp01(v) * 255)
// on save, v = byte / 255 on load, so a save/load round trip moves any
// in-range value by at most 1/510.
void save_ppm(const Tensor& img, const std::string& path);
Tensor load_ppm(const std::string& path);

}  // namespace fge
