#include <algorithm>
#include <cmath>
#include <cstring>

#include "dynkit/ops.hpp"

namespace dynkit::diff {

static void require_hwc(const Tensor& x, const char* op) {
  if (x.ndim() != 3)
    throw ShapeError(std::string(op) + " expects [H,W,C], got " +
                     shape_str(x.shape()));
  if (x.dim(0) < 2 || x.dim(1) < 2)
    throw ShapeError(std::string(op) + " needs height/width >= 2");
}

Tensor bilinear_sample(const Tensor& img, const Tensor& uv,
                       const std::vector<uint8_t>& valid,
                       std::vector<uint8_t>* valid_out) {
  require_hwc(img, "bilinear_sample");
  if (uv.ndim() != 2 || uv.dim(1) != 2)
    throw ShapeError("bilinear_sample expects uv [B,2], got " +
                     shape_str(uv.shape()));
  int64_t h = img.dim(0), w = img.dim(1), c = img.dim(2);
  int64_t bn = uv.dim(0);
  if (!valid.empty() && static_cast<int64_t>(valid.size()) != bn)
    throw ShapeError("bilinear_sample valid mask length mismatch");

  auto vals = buffer_acquire(static_cast<size_t>(bn * c));
  std::fill(vals.begin(), vals.end(), 0.0);
  std::vector<uint8_t> ok(bn, 0);
  const auto& iv = img.data();
  const auto& uvv = uv.data();
  for (int64_t b = 0; b < bn; ++b) {
    if (!valid.empty() && !valid[b]) continue;
    double u = uvv[2 * b], v = uvv[2 * b + 1];
    if (!(u >= 0.0 && u <= static_cast<double>(w - 1) && v >= 0.0 &&
          v <= static_cast<double>(h - 1)))
      continue;
    ok[b] = 1;
    int64_t x0 = std::min<int64_t>(static_cast<int64_t>(u), w - 2);
    int64_t y0 = std::min<int64_t>(static_cast<int64_t>(v), h - 2);
    double fx = u - static_cast<double>(x0);
    double fy = v - static_cast<double>(y0);
    const double* p00 = iv.data() + (y0 * w + x0) * c;
    const double* p01 = p00 + c;
    const double* p10 = p00 + w * c;
    const double* p11 = p10 + c;
    double* out = vals.data() + b * c;
    for (int64_t k = 0; k < c; ++k)
      out[k] = (1 - fx) * (1 - fy) * p00[k] + fx * (1 - fy) * p01[k] +
               (1 - fx) * fy * p10[k] + fx * fy * p11[k];
  }
  check_finite("bilinear_sample", vals);
  if (valid_out) *valid_out = ok;

  bool rg = img.requires_grad() || uv.requires_grad();
  Tensor out(Shape{bn, c}, std::move(vals), rg && Tape::active() != nullptr);
  if (out.requires_grad()) {
    auto ii = img.impl(), ui = uv.impl(), oi = out.impl();
    Tape::active()->record([ii, ui, oi, ok, h, w, c, bn]() {
      if (oi->grad.empty()) return;
      bool wi = ii->requires_grad, wu = ui->requires_grad;
      if (wi) ii->ensure_grad();
      if (wu) ui->ensure_grad();
      for (int64_t b = 0; b < bn; ++b) {
        if (!ok[b]) continue;
        double u = ui->value[2 * b], v = ui->value[2 * b + 1];
        int64_t x0 = std::min<int64_t>(static_cast<int64_t>(u), w - 2);
        int64_t y0 = std::min<int64_t>(static_cast<int64_t>(v), h - 2);
        double fx = u - static_cast<double>(x0);
        double fy = v - static_cast<double>(y0);
        const double* g = oi->grad.data() + b * c;
        const double* p00 = ii->value.data() + (y0 * w + x0) * c;
        double du = 0.0, dv = 0.0;
        for (int64_t k = 0; k < c; ++k) {
          double i00 = p00[k], i01 = p00[c + k];
          double i10 = p00[w * c + k], i11 = p00[w * c + c + k];
          if (wu) {
            du += g[k] * ((1 - fy) * (i01 - i00) + fy * (i11 - i10));
            dv += g[k] * ((1 - fx) * (i10 - i00) + fx * (i11 - i01));
          }
          if (wi) {
            double* d00 = ii->grad.data() + (y0 * w + x0) * c;
            d00[k] += g[k] * (1 - fx) * (1 - fy);
            d00[c + k] += g[k] * fx * (1 - fy);
            d00[w * c + k] += g[k] * (1 - fx) * fy;
            d00[w * c + c + k] += g[k] * fx * fy;
          }
        }
        if (wu) {
          ui->grad[2 * b] += du;
          ui->grad[2 * b + 1] += dv;
        }
      }
    });
  }
  return out;
}

// Reflect-101 index: ...2,1,|0,1,...,n-1|,n-2,n-3...
static int64_t reflect(int64_t i, int64_t n) {
  if (i < 0) i = -i;
  if (i >= n) i = 2 * n - 2 - i;
  return i;
}

// Source pixel of every (pixel, tap) pair, reflected at the border.
static std::vector<int32_t> conv_tap_sources(int64_t h, int64_t wd) {
  std::vector<int32_t> src(static_cast<size_t>(h * wd * 9));
  for (int64_t y = 0; y < h; ++y)
    for (int64_t dy = 0; dy < 3; ++dy) {
      int64_t sy = reflect(y + dy - 1, h);
      for (int64_t xx = 0; xx < wd; ++xx)
        for (int64_t dx = 0; dx < 3; ++dx) {
          int64_t sx = reflect(xx + dx - 1, wd);
          src[(y * wd + xx) * 9 + dy * 3 + dx] =
              static_cast<int32_t>(sy * wd + sx);
        }
    }
  return src;
}

// Patch matrix [H*W, 9*Cin]: row p holds the 3x3 neighborhood of pixel p,
// laid out tap-major so it multiplies the [3,3,Cin,Cout] kernel directly.
static std::vector<double> conv_im2col(const std::vector<double>& xv,
                                       const std::vector<int32_t>& src,
                                       int64_t pixels, int64_t ci) {
  auto col = buffer_acquire(static_cast<size_t>(pixels * 9 * ci));
  for (int64_t p = 0; p < pixels; ++p) {
    double* row = col.data() + p * 9 * ci;
    const int32_t* sp = src.data() + p * 9;
    for (int64_t t = 0; t < 9; ++t)
      std::memcpy(row + t * ci, xv.data() + int64_t(sp[t]) * ci,
                  sizeof(double) * ci);
  }
  return col;
}

Tensor conv3x3_reflect(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_hwc(x, "conv3x3");
  if (w.ndim() != 4 || w.dim(0) != 3 || w.dim(1) != 3 ||
      w.dim(2) != x.dim(2))
    throw ShapeError("conv3x3 kernel must be [3,3," +
                     std::to_string(x.dim(2)) + ",Cout], got " +
                     shape_str(w.shape()));
  int64_t h = x.dim(0), wd = x.dim(1), ci = x.dim(2), co = w.dim(3);
  if (b.size() != co)
    throw ShapeError("conv3x3 bias length mismatch");

  int64_t pixels = h * wd;
  std::vector<int32_t> src = conv_tap_sources(h, wd);
  std::vector<double> col = conv_im2col(x.data(), src, pixels, ci);

  auto vals = buffer_acquire(static_cast<size_t>(pixels * co));
  const auto& bv = b.data();
  for (int64_t p = 0; p < pixels; ++p)
    std::memcpy(vals.data() + p * co, bv.data(), sizeof(double) * co);
  gemm_rm(false, false, pixels, co, 9 * ci, col.data(), 9 * ci,
          w.data().data(), co, 1.0, vals.data(), co);
  buffer_release(std::move(col));
  check_finite("conv3x3", vals);

  bool rg = x.requires_grad() || w.requires_grad() || b.requires_grad();
  Tensor out(Shape{h, wd, co}, std::move(vals),
             rg && Tape::active() != nullptr);
  if (out.requires_grad()) {
    auto xi = x.impl(), wi = w.impl(), bi = b.impl(), oi = out.impl();
    Tape::active()->record([xi, wi, bi, oi, src = std::move(src), pixels, ci,
                            co]() {
      if (oi->grad.empty()) return;
      bool wx = xi->requires_grad, ww = wi->requires_grad,
           wb = bi->requires_grad;
      const double* g = oi->grad.data();
      if (wb) {
        bi->ensure_grad();
        for (int64_t p = 0; p < pixels; ++p)
          for (int64_t k = 0; k < co; ++k) bi->grad[k] += g[p * co + k];
      }
      if (ww) {
        wi->ensure_grad();
        std::vector<double> col = conv_im2col(xi->value, src, pixels, ci);
        gemm_rm(true, false, 9 * ci, co, pixels, col.data(), 9 * ci, g, co,
                1.0, wi->grad.data(), co);
        buffer_release(std::move(col));
      }
      if (wx) {
        xi->ensure_grad();
        auto dcol = buffer_acquire(static_cast<size_t>(pixels * 9 * ci));
        gemm_rm(false, true, pixels, 9 * ci, co, g, co, wi->value.data(), co,
                0.0, dcol.data(), 9 * ci);
        // col2im: scatter-accumulate each tap row back to its source pixel.
        for (int64_t p = 0; p < pixels; ++p) {
          const double* row = dcol.data() + p * 9 * ci;
          const int32_t* sp = src.data() + p * 9;
          for (int64_t t = 0; t < 9; ++t) {
            double* dst = xi->grad.data() + int64_t(sp[t]) * ci;
            const double* sr = row + t * ci;
            for (int64_t c = 0; c < ci; ++c) dst[c] += sr[c];
          }
        }
        buffer_release(std::move(dcol));
      }
    });
  }
  return out;
}

Tensor avgpool2(const Tensor& x) {
  require_hwc(x, "avgpool2");
  int64_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  if (h % 2 || w % 2)
    throw ShapeError("avgpool2 needs even height/width, got " +
                     shape_str(x.shape()));
  int64_t oh = h / 2, ow = w / 2;
  auto vals = buffer_acquire(static_cast<size_t>(oh * ow * c));
  const auto& xv = x.data();
  for (int64_t y = 0; y < oh; ++y)
    for (int64_t xx = 0; xx < ow; ++xx) {
      const double* p0 = xv.data() + (2 * y * w + 2 * xx) * c;
      const double* p1 = p0 + c;
      const double* p2 = p0 + w * c;
      const double* p3 = p2 + c;
      double* out = vals.data() + (y * ow + xx) * c;
      for (int64_t k = 0; k < c; ++k)
        out[k] = 0.25 * (p0[k] + p1[k] + p2[k] + p3[k]);
    }
  check_finite("avgpool2", vals);
  Tensor out(Shape{oh, ow, c}, std::move(vals),
             x.requires_grad() && Tape::active() != nullptr);
  if (out.requires_grad()) {
    auto xi = x.impl(), oi = out.impl();
    Tape::active()->record([xi, oi, oh, ow, w, c]() {
      if (oi->grad.empty()) return;
      xi->ensure_grad();
      for (int64_t y = 0; y < oh; ++y)
        for (int64_t xx = 0; xx < ow; ++xx) {
          const double* g = oi->grad.data() + (y * ow + xx) * c;
          double* d0 = xi->grad.data() + (2 * y * w + 2 * xx) * c;
          for (int64_t k = 0; k < c; ++k) {
            double gv = 0.25 * g[k];
            d0[k] += gv;
            d0[c + k] += gv;
            d0[w * c + k] += gv;
            d0[w * c + c + k] += gv;
          }
        }
    });
  }
  return out;
}

Tensor upsample_bilinear2x(const Tensor& x) {
  require_hwc(x, "upsample2x");
  int64_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  int64_t oh = 2 * h, ow = 2 * w;
  // Half-pixel mapping: src = (dst + 0.5)/2 - 0.5, clamped.
  auto src_of = [](int64_t dst, int64_t n, int64_t& i0, double& f) {
    double s = (static_cast<double>(dst) + 0.5) * 0.5 - 0.5;
    if (s < 0) s = 0;
    double cap = static_cast<double>(n - 1);
    if (s > cap) s = cap;
    i0 = std::min<int64_t>(static_cast<int64_t>(s), n - 2);
    f = s - static_cast<double>(i0);
  };
  auto vals = buffer_acquire(static_cast<size_t>(oh * ow * c));
  const auto& xv = x.data();
  for (int64_t y = 0; y < oh; ++y) {
    int64_t y0;
    double fy;
    src_of(y, h, y0, fy);
    for (int64_t xx = 0; xx < ow; ++xx) {
      int64_t x0;
      double fx;
      src_of(xx, w, x0, fx);
      const double* p00 = xv.data() + (y0 * w + x0) * c;
      double* out = vals.data() + (y * ow + xx) * c;
      for (int64_t k = 0; k < c; ++k)
        out[k] = (1 - fx) * (1 - fy) * p00[k] + fx * (1 - fy) * p00[c + k] +
                 (1 - fx) * fy * p00[w * c + k] + fx * fy * p00[w * c + c + k];
    }
  }
  check_finite("upsample2x", vals);
  Tensor out(Shape{oh, ow, c}, std::move(vals),
             x.requires_grad() && Tape::active() != nullptr);
  if (out.requires_grad()) {
    auto xi = x.impl(), oi = out.impl();
    Tape::active()->record([xi, oi, oh, ow, h, w, c, src_of]() {
      if (oi->grad.empty()) return;
      xi->ensure_grad();
      for (int64_t y = 0; y < oh; ++y) {
        int64_t y0;
        double fy;
        src_of(y, h, y0, fy);
        for (int64_t xx = 0; xx < ow; ++xx) {
          int64_t x0;
          double fx;
          src_of(xx, w, x0, fx);
          const double* g = oi->grad.data() + (y * ow + xx) * c;
          double* d00 = xi->grad.data() + (y0 * w + x0) * c;
          for (int64_t k = 0; k < c; ++k) {
            d00[k] += g[k] * (1 - fx) * (1 - fy);
            d00[c + k] += g[k] * fx * (1 - fy);
            d00[w * c + k] += g[k] * (1 - fx) * fy;
            d00[w * c + c + k] += g[k] * fx * fy;
          }
        }
      }
    });
  }
  return out;
}

}  // namespace dynkit::diff
