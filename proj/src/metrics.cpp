#include "dynkit/metrics.hpp"

#include <cmath>

namespace dynkit {

static void require_same(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height || a.channels != b.channels)
    throw DataError("metric inputs have mismatched dimensions");
}

double psnr(const Image& a, const Image& b, const std::vector<uint8_t>& mask) {
  require_same(a, b);
  size_t npix = static_cast<size_t>(a.width) * a.height;
  if (!mask.empty() && mask.size() != npix)
    throw DataError("psnr mask size mismatch");
  double se = 0.0;
  int64_t count = 0;
  for (size_t p = 0; p < npix; ++p) {
    if (!mask.empty() && !mask[p]) continue;
    for (int c = 0; c < a.channels; ++c) {
      double d = static_cast<double>(a.pixels[p * a.channels + c]) -
                 static_cast<double>(b.pixels[p * a.channels + c]);
      se += d * d;
      ++count;
    }
  }
  if (count == 0) return 99.0;
  double mse = se / static_cast<double>(count);
  if (mse <= 0.0) return 99.0;
  return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

static std::vector<double> luma(const Image& im) {
  size_t npix = static_cast<size_t>(im.width) * im.height;
  std::vector<double> y(npix);
  if (im.channels == 1) {
    for (size_t p = 0; p < npix; ++p) y[p] = im.pixels[p];
  } else if (im.channels >= 3) {
    for (size_t p = 0; p < npix; ++p)
      y[p] = 0.299 * im.pixels[p * im.channels] +
             0.587 * im.pixels[p * im.channels + 1] +
             0.114 * im.pixels[p * im.channels + 2];
  } else {
    throw DataError("ssim needs 1 or >=3 channels");
  }
  return y;
}

double ssim(const Image& a, const Image& b) {
  require_same(a, b);
  constexpr int kWin = 11, kHalf = 5;
  constexpr double kSigma = 1.5;
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  if (a.width < kWin || a.height < kWin)
    throw DataError("ssim needs images of at least 11x11");

  double wsum = 0.0;
  double w[kWin][kWin];
  for (int i = 0; i < kWin; ++i)
    for (int j = 0; j < kWin; ++j) {
      double d2 = (i - kHalf) * (i - kHalf) + (j - kHalf) * (j - kHalf);
      w[i][j] = std::exp(-d2 / (2.0 * kSigma * kSigma));
      wsum += w[i][j];
    }
  for (int i = 0; i < kWin; ++i)
    for (int j = 0; j < kWin; ++j) w[i][j] /= wsum;

  std::vector<double> ya = luma(a), yb = luma(b);
  int wd = a.width, ht = a.height;
  double total = 0.0;
  int64_t count = 0;
  for (int cy = kHalf; cy < ht - kHalf; ++cy) {
    for (int cx = kHalf; cx < wd - kHalf; ++cx) {
      double mu1 = 0, mu2 = 0;
      for (int i = 0; i < kWin; ++i)
        for (int j = 0; j < kWin; ++j) {
          size_t idx = static_cast<size_t>(cy + i - kHalf) * wd + cx + j - kHalf;
          mu1 += w[i][j] * ya[idx];
          mu2 += w[i][j] * yb[idx];
        }
      double s11 = 0, s22 = 0, s12 = 0;
      for (int i = 0; i < kWin; ++i)
        for (int j = 0; j < kWin; ++j) {
          size_t idx = static_cast<size_t>(cy + i - kHalf) * wd + cx + j - kHalf;
          double d1 = ya[idx] - mu1, d2 = yb[idx] - mu2;
          s11 += w[i][j] * d1 * d1;
          s22 += w[i][j] * d2 * d2;
          s12 += w[i][j] * d1 * d2;
        }
      double num = (2 * mu1 * mu2 + c1) * (2 * s12 + c2);
      double den = (mu1 * mu1 + mu2 * mu2 + c1) * (s11 + s22 + c2);
      total += num / den;
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

}  // namespace dynkit
