#pragma once

#include "numcore/tensor.hpp"

namespace fge {

// Blockwise-DCT quantization proxy for JPEG recompression: per channel,
// 8x8 type-II DCT, quantization by the standard luminance table scaled for
// quality q, dequantization, inverse DCT. Operates at the image's native
// resolution. Throws BadQuality outside [1,100].
Tensor jpeg_proxy(const Tensor& img, int quality);

// Separable Gaussian blur, kernel radius ceil(3*sigma), reflect padding.
// sigma == 0 returns the input unchanged.
Tensor gaussian_blur(const Tensor& img, double sigma);

}  // namespace fge
