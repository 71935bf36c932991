#pragma once

#include <vector>

#include "dynkit/image.hpp"

namespace dynkit {

// Peak signal-to-noise ratio for images in [0,1], capped at 99 dB.
// With a mask (one byte per pixel, nonzero = counted) only masked pixels
// contribute; an empty selection yields the cap.
double psnr(const Image& a, const Image& b,
            const std::vector<uint8_t>& mask = {});

// Mean SSIM on Rec.601 luma, 11x11 Gaussian window (sigma 1.5),
// valid-mode convolution, k1=0.01, k2=0.03, dynamic range 1.
double ssim(const Image& a, const Image& b);

}  // namespace dynkit
