#include "dynkit/ops.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <mutex>

#include "dynkit/threadpool.hpp"

extern "C" {
void cblas_dgemm(int order, int transa, int transb, int m, int n, int k,
                 double alpha, const double* a, int lda, const double* b,
                 int ldb, double beta, double* c, int ldc);
void openblas_set_num_threads(int n);
}

namespace {
// CBLAS enum values (row-major order, transpose flags).
constexpr int kRowMajor = 101;
constexpr int kNoTrans = 111;
constexpr int kTrans = 112;
}  // namespace

namespace dynkit::diff {

void check_finite(const char* op, const std::vector<double>& v) {
  // Branch-free scan (a throw inside the loop would block vectorization):
  // a double is non-finite iff its exponent bits are all ones.
  constexpr uint64_t kExp = 0x7ff0000000000000ull;
  uint64_t bad = 0;
  for (double x : v) bad |= (std::bit_cast<uint64_t>(x) & kExp) == kExp;
  if (bad)
    throw NumericError(std::string("non-finite value produced by op '") + op +
                       "'");
}

static std::vector<int64_t> strides_of(const Shape& s) {
  std::vector<int64_t> st(s.size());
  int64_t acc = 1;
  for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
    st[i] = acc;
    acc *= s[i];
  }
  return st;
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
  size_t n = std::max(a.size(), b.size());
  Shape out(n);
  for (size_t i = 0; i < n; ++i) {
    int64_t da = i < n - a.size() ? 1 : a[i - (n - a.size())];
    int64_t db = i < n - b.size() ? 1 : b[i - (n - b.size())];
    if (da != db && da != 1 && db != 1)
      throw ShapeError("shapes " + shape_str(a) + " and " + shape_str(b) +
                       " are not broadcastable");
    out[i] = std::max(da, db);
  }
  return out;
}

// Strides of `s` viewed as shape `target` (0 where broadcast), aligned on
// trailing axes.
static std::vector<int64_t> broadcast_strides(const Shape& s,
                                              const Shape& target) {
  auto st = strides_of(s);
  std::vector<int64_t> out(target.size(), 0);
  size_t off = target.size() - s.size();
  for (size_t i = 0; i < s.size(); ++i)
    out[off + i] = s[i] == 1 ? 0 : st[i];
  return out;
}

// Walks every index of `shape`, calling fn(out_linear, a_off, b_off).
template <class F>
static void bcast_walk(const Shape& shape, const std::vector<int64_t>& sa,
                       const std::vector<int64_t>& sb, F&& fn) {
  int64_t n = numel(shape);
  int nd = static_cast<int>(shape.size());
  if (nd == 0) {
    if (n > 0) fn(0, 0, 0);
    return;
  }
  std::vector<int64_t> idx(nd, 0);
  int64_t ao = 0, bo = 0;
  for (int64_t i = 0; i < n; ++i) {
    fn(i, ao, bo);
    for (int d = nd - 1; d >= 0; --d) {
      if (++idx[d] < shape[d]) {
        ao += sa[d];
        bo += sb[d];
        break;
      }
      idx[d] = 0;
      ao -= sa[d] * (shape[d] - 1);
      bo -= sb[d] * (shape[d] - 1);
    }
  }
}

std::vector<double> reduce_to_shape(const std::vector<double>& data,
                                    const Shape& from, const Shape& to) {
  auto out = buffer_acquire(static_cast<size_t>(numel(to)));
  std::fill(out.begin(), out.end(), 0.0);
  auto st = broadcast_strides(to, from);
  std::vector<int64_t> zero(from.size(), 0);
  bcast_walk(from, st, zero,
             [&](int64_t i, int64_t toff, int64_t) { out[toff] += data[i]; });
  return out;
}

static bool grad_wanted(const Tensor& t) { return t.requires_grad(); }

static Tensor make_out(Shape shape, std::vector<double> vals, bool rg) {
  return Tensor(std::move(shape), std::move(vals),
                rg && Tape::active() != nullptr);
}

// ---------------------------------------------------------------- binary --

namespace {
struct AddOp {
  static constexpr const char* name = "add";
  static constexpr bool kNeedsA = false, kNeedsB = false, kNeedsY = false;
  static double f(double a, double b) { return a + b; }
  static void df(double, double, double, double g, double& da, double& db) {
    da = g;
    db = g;
  }
};
struct SubOp {
  static constexpr const char* name = "sub";
  static constexpr bool kNeedsA = false, kNeedsB = false, kNeedsY = false;
  static double f(double a, double b) { return a - b; }
  static void df(double, double, double, double g, double& da, double& db) {
    da = g;
    db = -g;
  }
};
struct MulOp {
  static constexpr const char* name = "mul";
  static constexpr bool kNeedsA = true, kNeedsB = true, kNeedsY = false;
  static double f(double a, double b) { return a * b; }
  static void df(double a, double b, double, double g, double& da,
                 double& db) {
    da = g * b;
    db = g * a;
  }
};
struct DivOp {
  static constexpr const char* name = "div";
  static constexpr bool kNeedsA = false, kNeedsB = true, kNeedsY = true;
  static double f(double a, double b) { return a / b; }
  static void df(double, double b, double y, double g, double& da,
                 double& db) {
    da = g / b;
    db = -g * y / b;
  }
};

// Splits a broadcast loop into an outer index walk and an inner contiguous
// run: the longest trailing span over which each operand is either laid out
// contiguously or completely broadcast (fixed). Inner runs then use tight
// branch-free kernels instead of the generic per-element walker.
struct RunPlan {
  int split;       // first dim of the run; dims [split, nd) form the run
  int64_t inner;   // run length in elements
  bool a_fixed, b_fixed;
};

RunPlan plan_runs(const dynkit::diff::Shape& shape,
                  const std::vector<int64_t>& sa,
                  const std::vector<int64_t>& sb) {
  int nd = static_cast<int>(shape.size());
  RunPlan p{nd, 1, true, true};
  bool a_contig = true, b_contig = true;
  for (int d = nd - 1; d >= 0; --d) {
    if (shape[d] != 1) {
      bool ac = a_contig && sa[d] == p.inner;
      bool af = p.a_fixed && sa[d] == 0;
      bool bc = b_contig && sb[d] == p.inner;
      bool bf = p.b_fixed && sb[d] == 0;
      if (!((ac || af) && (bc || bf))) break;
      a_contig = ac;
      p.a_fixed = af;
      b_contig = bc;
      p.b_fixed = bf;
    }
    p.split = d;
    p.inner *= shape[d];
  }
  return p;
}
}  // namespace

template <class Op>
static Tensor binary_op(const Tensor& a, const Tensor& b) {
  Shape oshape = broadcast_shape(a.shape(), b.shape());
  int64_t n = numel(oshape);
  auto vals = buffer_acquire(static_cast<size_t>(n));
  const auto& av = a.data();
  const auto& bv = b.data();
  if (a.shape() == b.shape()) {
    for (int64_t i = 0; i < n; ++i) vals[i] = Op::f(av[i], bv[i]);
  } else {
    auto sa = broadcast_strides(a.shape(), oshape);
    auto sb = broadcast_strides(b.shape(), oshape);
    RunPlan p = plan_runs(oshape, sa, sb);
    Shape pre(oshape.begin(), oshape.begin() + p.split);
    std::vector<int64_t> pa(sa.begin(), sa.begin() + p.split);
    std::vector<int64_t> pb(sb.begin(), sb.begin() + p.split);
    int64_t inner = p.inner;
    bcast_walk(pre, pa, pb, [&](int64_t o, int64_t ao, int64_t bo) {
      const double* ap = av.data() + ao;
      const double* bp = bv.data() + bo;
      double* op = vals.data() + o * inner;
      if (p.a_fixed && !p.b_fixed) {
        double s = *ap;
        for (int64_t i = 0; i < inner; ++i) op[i] = Op::f(s, bp[i]);
      } else if (!p.a_fixed && p.b_fixed) {
        double s = *bp;
        for (int64_t i = 0; i < inner; ++i) op[i] = Op::f(ap[i], s);
      } else if (!p.a_fixed && !p.b_fixed) {
        for (int64_t i = 0; i < inner; ++i) op[i] = Op::f(ap[i], bp[i]);
      } else {
        double s = Op::f(*ap, *bp);
        for (int64_t i = 0; i < inner; ++i) op[i] = s;
      }
    });
  }
  check_finite(Op::name, vals);
  Tensor out = make_out(oshape, std::move(vals),
                        grad_wanted(a) || grad_wanted(b));
  if (out.requires_grad()) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    Tape::active()->record([ai, bi, oi]() {
      if (oi->grad.empty()) return;
      const auto& g = oi->grad;
      bool wa = ai->requires_grad, wb = bi->requires_grad;
      if (wa) ai->ensure_grad();
      if (wb) bi->ensure_grad();
      auto load_a = [&](int64_t i) {
        return Op::kNeedsA ? ai->value[i] : 0.0;
      };
      auto load_b = [&](int64_t i) {
        return Op::kNeedsB ? bi->value[i] : 0.0;
      };
      auto load_y = [&](int64_t i) {
        return Op::kNeedsY ? oi->value[i] : 0.0;
      };
      if (ai->shape == bi->shape) {
        int64_t n = static_cast<int64_t>(g.size());
        if (wa && wb) {
          for (int64_t i = 0; i < n; ++i) {
            double da, db;
            Op::df(load_a(i), load_b(i), load_y(i), g[i], da, db);
            ai->grad[i] += da;
            bi->grad[i] += db;
          }
        } else if (wa) {
          for (int64_t i = 0; i < n; ++i) {
            double da, db;
            Op::df(load_a(i), load_b(i), load_y(i), g[i], da, db);
            ai->grad[i] += da;
          }
        } else {
          for (int64_t i = 0; i < n; ++i) {
            double da, db;
            Op::df(load_a(i), load_b(i), load_y(i), g[i], da, db);
            bi->grad[i] += db;
          }
        }
      } else {
        auto sa = broadcast_strides(ai->shape, oi->shape);
        auto sb = broadcast_strides(bi->shape, oi->shape);
        RunPlan p = plan_runs(oi->shape, sa, sb);
        Shape pre(oi->shape.begin(), oi->shape.begin() + p.split);
        std::vector<int64_t> pa(sa.begin(), sa.begin() + p.split);
        std::vector<int64_t> pb(sb.begin(), sb.begin() + p.split);
        int64_t inner = p.inner;
        bcast_walk(pre, pa, pb, [&](int64_t o, int64_t ao, int64_t bo) {
          const double* gp = g.data() + o * inner;
          int64_t ybase = o * inner;
          double acc_a = 0.0, acc_b = 0.0;
          for (int64_t i = 0; i < inner; ++i) {
            int64_t aidx = p.a_fixed ? ao : ao + i;
            int64_t bidx = p.b_fixed ? bo : bo + i;
            double da, db;
            Op::df(load_a(aidx), load_b(bidx), load_y(ybase + i), gp[i], da,
                   db);
            if (wa) {
              if (p.a_fixed)
                acc_a += da;
              else
                ai->grad[aidx] += da;
            }
            if (wb) {
              if (p.b_fixed)
                acc_b += db;
              else
                bi->grad[bidx] += db;
            }
          }
          if (wa && p.a_fixed) ai->grad[ao] += acc_a;
          if (wb && p.b_fixed) bi->grad[bo] += acc_b;
        });
      }
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) { return binary_op<AddOp>(a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op<SubOp>(a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op<MulOp>(a, b); }
Tensor div(const Tensor& a, const Tensor& b) { return binary_op<DivOp>(a, b); }

// ----------------------------------------------------------------- unary --

// fwd: y = f(x); dfn(x, y) = dy/dx.
template <class FwdF, class DerF>
static Tensor unary_op(const char* name, const Tensor& x, FwdF fwd,
                       DerF der) {
  int64_t n = x.size();
  auto vals = buffer_acquire(static_cast<size_t>(n));
  const auto& xv = x.data();
  for (int64_t i = 0; i < n; ++i) vals[i] = fwd(xv[i]);
  check_finite(name, vals);
  Tensor out = make_out(x.shape(), std::move(vals), grad_wanted(x));
  if (out.requires_grad()) {
    auto xi = x.impl(), oi = out.impl();
    Tape::active()->record([xi, oi, der]() {
      if (oi->grad.empty()) return;
      xi->ensure_grad();
      int64_t n = static_cast<int64_t>(oi->grad.size());
      for (int64_t i = 0; i < n; ++i)
        xi->grad[i] += oi->grad[i] * der(xi->value[i], oi->value[i]);
    });
  }
  return out;
}

static double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

Tensor affine(const Tensor& x, double a, double b) {
  return unary_op(
      "affine", x, [a, b](double v) { return a * v + b; },
      [a](double, double) { return a; });
}

Tensor exp(const Tensor& x) {
  return unary_op(
      "exp", x, [](double v) { return std::exp(v); },
      [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary_op(
      "log", x, [](double v) { return std::log(v); },
      [](double v, double) { return 1.0 / v; });
}

Tensor sin(const Tensor& x) {
  return unary_op(
      "sin", x, [](double v) { return std::sin(v); },
      [](double v, double) { return std::cos(v); });
}

Tensor cos(const Tensor& x) {
  return unary_op(
      "cos", x, [](double v) { return std::cos(v); },
      [](double v, double) { return -std::sin(v); });
}

Tensor pow(const Tensor& x, double p) {
  // Fast paths for the exponents that appear in hot loops; std::pow costs
  // two orders of magnitude more than a multiply.
  if (p == 2.0)
    return unary_op(
        "pow", x, [](double v) { return v * v; },
        [](double v, double) { return 2.0 * v; });
  if (p == 0.5)
    return unary_op(
        "pow", x, [](double v) { return std::sqrt(v); },
        [](double, double y) { return 0.5 / y; });
  if (p == -1.0)
    return unary_op(
        "pow", x, [](double v) { return 1.0 / v; },
        [](double, double y) { return -y * y; });
  return unary_op(
      "pow", x, [p](double v) { return std::pow(v, p); },
      [p](double v, double) { return p * std::pow(v, p - 1.0); });
}

Tensor sqrt(const Tensor& x) {
  return unary_op(
      "sqrt", x, [](double v) { return std::sqrt(v); },
      [](double, double y) { return 0.5 / y; });
}

Tensor abs(const Tensor& x) {
  return unary_op(
      "abs", x, [](double v) { return std::abs(v); },
      [](double v, double) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}

Tensor sigmoid(const Tensor& x) {
  return unary_op(
      "sigmoid", x, [](double v) { return stable_sigmoid(v); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor softplus(const Tensor& x) {
  return unary_op(
      "softplus", x,
      [](double v) {
        if (v > 30.0) return v;
        if (v < -30.0) return std::exp(v);
        return std::log1p(std::exp(v));
      },
      [](double v, double) { return stable_sigmoid(v); });
}

Tensor relu(const Tensor& x) {
  return unary_op(
      "relu", x, [](double v) { return v > 0 ? v : 0.0; },
      [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor clamp_min(const Tensor& x, double c) {
  return unary_op(
      "clamp_min", x, [c](double v) { return v > c ? v : c; },
      [c](double v, double) { return v > c ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------- matmul --

static void blas_init() {
  static std::once_flag once;
  std::call_once(once, []() { openblas_set_num_threads(1); });
}

void gemm_rm(bool ta, bool tb, int64_t m, int64_t n, int64_t k,
             const double* a, int64_t lda, const double* b, int64_t ldb,
             double beta, double* c, int64_t ldc) {
  blas_init();
  cblas_dgemm(kRowMajor, ta ? kTrans : kNoTrans, tb ? kTrans : kNoTrans,
              static_cast<int>(m), static_cast<int>(n), static_cast<int>(k),
              1.0, a, static_cast<int>(lda), b, static_cast<int>(ldb), beta,
              c, static_cast<int>(ldc));
}

static void dgemm(bool ta, bool tb, int64_t m, int64_t n, int64_t k,
                  const double* a, int64_t lda, const double* b, int64_t ldb,
                  double beta, double* c, int64_t ldc) {
  gemm_rm(ta, tb, m, n, k, a, lda, b, ldb, beta, c, ldc);
}

Tensor matmul(const Tensor& a, const Tensor& b, bool ta, bool tb) {
  blas_init();
  if (a.ndim() < 2 || b.ndim() < 2)
    throw ShapeError("matmul needs rank >= 2, got " + shape_str(a.shape()) +
                     " x " + shape_str(b.shape()));
  int64_t ar = a.dim(-2), ac = a.dim(-1);
  int64_t br = b.dim(-2), bc = b.dim(-1);
  int64_t n = ta ? ac : ar, ka = ta ? ar : ac;
  int64_t kb = tb ? bc : br, m = tb ? br : bc;
  if (ka != kb)
    throw ShapeError("matmul inner dims disagree: " + shape_str(a.shape()) +
                     (ta ? "^T" : "") + " x " + shape_str(b.shape()) +
                     (tb ? "^T" : ""));
  int64_t k = ka;
  Shape abatch(a.shape().begin(), a.shape().end() - 2);
  Shape bbatch(b.shape().begin(), b.shape().end() - 2);
  Shape obatch = broadcast_shape(abatch, bbatch);
  Shape oshape = obatch;
  oshape.push_back(n);
  oshape.push_back(m);

  int64_t nbatch = numel(obatch);
  int64_t amat = ar * ac, bmat = br * bc, omat = n * m;
  auto sa = broadcast_strides(abatch, obatch);
  auto sb = broadcast_strides(bbatch, obatch);
  // Element offsets of each operand matrix for every output batch index.
  std::vector<int64_t> aoffs(nbatch), boffs(nbatch);
  bcast_walk(obatch, sa, sb, [&](int64_t i, int64_t ao, int64_t bo) {
    aoffs[i] = ao * amat;
    boffs[i] = bo * bmat;
  });

  auto vals = buffer_acquire(static_cast<size_t>(nbatch * omat));
  const double* ap = a.data().data();
  const double* bp = b.data().data();
  for (int64_t i = 0; i < nbatch; ++i)
    dgemm(ta, tb, n, m, k, ap + aoffs[i], ac, bp + boffs[i], bc, 0.0,
          vals.data() + i * omat, m);
  check_finite("matmul", vals);

  Tensor out = make_out(std::move(oshape), std::move(vals),
                        grad_wanted(a) || grad_wanted(b));
  if (out.requires_grad()) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    Tape::active()->record([ai, bi, oi, ta, tb, n, m, k, ar, ac, br, bc, omat,
                            aoffs, boffs, nbatch]() {
      if (oi->grad.empty()) return;
      const double* g = oi->grad.data();
      const double* ap = ai->value.data();
      const double* bp = bi->value.data();
      bool wa = ai->requires_grad, wb = bi->requires_grad;
      if (wa) ai->ensure_grad();
      if (wb) bi->ensure_grad();
      for (int64_t i = 0; i < nbatch; ++i) {
        const double* gb = g + i * omat;
        if (wa) {
          double* da = ai->grad.data() + aoffs[i];
          const double* bb = bp + boffs[i];
          if (!ta && !tb)       dgemm(false, true, n, k, m, gb, m, bb, bc, 1.0, da, ac);
          else if (!ta && tb)   dgemm(false, false, n, k, m, gb, m, bb, bc, 1.0, da, ac);
          else if (ta && !tb)   dgemm(false, true, k, n, m, bb, bc, gb, m, 1.0, da, ac);
          else                  dgemm(true, true, k, n, m, bb, bc, gb, m, 1.0, da, ac);
        }
        if (wb) {
          double* db = bi->grad.data() + boffs[i];
          const double* ab = ap + aoffs[i];
          if (!ta && !tb)       dgemm(true, false, k, m, n, ab, ac, gb, m, 1.0, db, bc);
          else if (ta && !tb)   dgemm(false, false, k, m, n, ab, ac, gb, m, 1.0, db, bc);
          else if (!ta && tb)   dgemm(true, false, m, k, n, gb, m, ab, ac, 1.0, db, bc);
          else                  dgemm(true, true, m, k, n, gb, m, ab, ac, 1.0, db, bc);
        }
      }
    });
  }
  return out;
}

// ------------------------------------------------------------- reductions --

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  std::vector<double> vals{acc};
  check_finite("sum", vals);
  Tensor out = make_out(Shape{}, std::move(vals), grad_wanted(x));
  if (out.requires_grad()) {
    auto xi = x.impl(), oi = out.impl();
    Tape::active()->record([xi, oi]() {
      if (oi->grad.empty()) return;
      xi->ensure_grad();
      double g = oi->grad[0];
      for (auto& gv : xi->grad) gv += g;
    });
  }
  return out;
}

Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw ShapeError("mean of empty tensor");
  Tensor s = sum(x);
  return affine(s, 1.0 / static_cast<double>(x.size()), 0.0);
}

// Shared axis-reduction machinery: out[o,i] = reduce_j x[o,j,i].
static void axis_geometry(const Shape& s, int axis, int64_t& outer,
                          int64_t& n, int64_t& inner) {
  outer = 1;
  inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[i];
  n = s[axis];
  for (size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
}

static int norm_axis(const Tensor& x, int axis, const char* op) {
  int nd = x.ndim();
  if (axis < 0) axis += nd;
  if (axis < 0 || axis >= nd)
    throw ShapeError(std::string(op) + ": axis out of range for " +
                     shape_str(x.shape()));
  return axis;
}

Tensor sum(const Tensor& x, int axis, bool keepdim) {
  axis = norm_axis(x, axis, "sum");
  int64_t outer, n, inner;
  axis_geometry(x.shape(), axis, outer, n, inner);
  Shape oshape = x.shape();
  if (keepdim)
    oshape[axis] = 1;
  else
    oshape.erase(oshape.begin() + axis);
  auto vals = buffer_acquire(static_cast<size_t>(outer * inner));
  std::fill(vals.begin(), vals.end(), 0.0);
  const auto& xv = x.data();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t j = 0; j < n; ++j) {
      const double* row = xv.data() + (o * n + j) * inner;
      double* dst = vals.data() + o * inner;
      for (int64_t i = 0; i < inner; ++i) dst[i] += row[i];
    }
  check_finite("sum", vals);
  Tensor out = make_out(std::move(oshape), std::move(vals), grad_wanted(x));
  if (out.requires_grad()) {
    auto xi = x.impl(), oi = out.impl();
    Tape::active()->record([xi, oi, outer, n, inner]() {
      if (oi->grad.empty()) return;
      xi->ensure_grad();
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t j = 0; j < n; ++j) {
          double* dst = xi->grad.data() + (o * n + j) * inner;
          const double* g = oi->grad.data() + o * inner;
          for (int64_t i = 0; i < inner; ++i) dst[i] += g[i];
        }
    });
  }
  return out;
}

Tensor mean(const Tensor& x, int axis, bool keepdim) {
  int ax = norm_axis(x, axis, "mean");
  int64_t n = x.shape()[ax];
  if (n == 0) throw ShapeError("mean over empty axis");
  return affine(sum(x, axis, keepdim), 1.0 / static_cast<double>(n), 0.0);
}

// ------------------------------------------------------------- reshaping --

Tensor concat(const std::vector<Tensor>& xs, int axis) {
  if (xs.empty()) throw ShapeError("concat of zero tensors");
  int ax = norm_axis(xs[0], axis, "concat");
  Shape oshape = xs[0].shape();
  int64_t total = 0;
  for (const auto& t : xs) {
    if (t.ndim() != xs[0].ndim())
      throw ShapeError("concat rank mismatch");
    for (int d = 0; d < t.ndim(); ++d)
      if (d != ax && t.shape()[d] != oshape[d])
        throw ShapeError("concat shape mismatch: " + shape_str(t.shape()) +
                         " vs " + shape_str(xs[0].shape()));
    total += t.shape()[ax];
  }
  oshape[ax] = total;

  int64_t outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= oshape[i];
  for (size_t i = ax + 1; i < oshape.size(); ++i) inner *= oshape[i];

  auto vals = buffer_acquire(static_cast<size_t>(numel(oshape)));
  bool rg = false;
  int64_t row_off = 0;
  for (const auto& t : xs) {
    rg = rg || grad_wanted(t);
    int64_t tn = t.shape()[ax];
    const auto& tv = t.data();
    for (int64_t o = 0; o < outer; ++o)
      std::memcpy(vals.data() + (o * total + row_off) * inner,
                  tv.data() + o * tn * inner,
                  sizeof(double) * tn * inner);
    row_off += tn;
  }
  Tensor out = make_out(std::move(oshape), std::move(vals), rg);
  if (out.requires_grad()) {
    std::vector<std::shared_ptr<TensorImpl>> impls;
    for (const auto& t : xs) impls.push_back(t.impl());
    auto oi = out.impl();
    Tape::active()->record([impls, oi, outer, inner, total, ax]() {
      if (oi->grad.empty()) return;
      int64_t row_off = 0;
      for (auto& xi : impls) {
        int64_t tn = xi->shape[ax];
        if (xi->requires_grad) {
          xi->ensure_grad();
          for (int64_t o = 0; o < outer; ++o) {
            const double* g = oi->grad.data() + (o * total + row_off) * inner;
            double* dst = xi->grad.data() + o * tn * inner;
            for (int64_t i = 0; i < tn * inner; ++i) dst[i] += g[i];
          }
        }
        row_off += tn;
      }
    });
  }
  return out;
}

Tensor slice(const Tensor& x, int axis, int64_t start, int64_t len) {
  int ax = norm_axis(x, axis, "slice");
  int64_t n = x.shape()[ax];
  if (start < 0 || len < 0 || start + len > n)
    throw ShapeError("slice [" + std::to_string(start) + "," +
                     std::to_string(start + len) + ") out of range for axis " +
                     std::to_string(ax) + " of " + shape_str(x.shape()));
  Shape oshape = x.shape();
  oshape[ax] = len;
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= x.shape()[i];
  for (size_t i = ax + 1; i < x.shape().size(); ++i) inner *= x.shape()[i];

  auto vals = buffer_acquire(static_cast<size_t>(numel(oshape)));
  const auto& xv = x.data();
  for (int64_t o = 0; o < outer; ++o)
    std::memcpy(vals.data() + o * len * inner,
                xv.data() + (o * n + start) * inner,
                sizeof(double) * len * inner);
  Tensor out = make_out(std::move(oshape), std::move(vals), grad_wanted(x));
  if (out.requires_grad()) {
    auto xi = x.impl(), oi = out.impl();
    Tape::active()->record([xi, oi, outer, inner, n, start, len]() {
      if (oi->grad.empty()) return;
      xi->ensure_grad();
      for (int64_t o = 0; o < outer; ++o) {
        const double* g = oi->grad.data() + o * len * inner;
        double* dst = xi->grad.data() + (o * n + start) * inner;
        for (int64_t i = 0; i < len * inner; ++i) dst[i] += g[i];
      }
    });
  }
  return out;
}

Tensor reshape(const Tensor& x, Shape new_shape) {
  // One dim may be -1 and is inferred.
  int64_t known = 1;
  int infer = -1;
  for (size_t i = 0; i < new_shape.size(); ++i) {
    if (new_shape[i] == -1) {
      if (infer >= 0) throw ShapeError("reshape with multiple -1 dims");
      infer = static_cast<int>(i);
    } else {
      known *= new_shape[i];
    }
  }
  if (infer >= 0) {
    if (known == 0 || x.size() % known != 0)
      throw ShapeError("reshape cannot infer dim for " + shape_str(x.shape()) +
                       " -> " + shape_str(new_shape));
    new_shape[infer] = x.size() / known;
  }
  if (numel(new_shape) != x.size())
    throw ShapeError("reshape " + shape_str(x.shape()) + " -> " +
                     shape_str(new_shape) + " changes element count");
  auto vals = buffer_acquire(static_cast<size_t>(x.size()));
  std::copy(x.data().begin(), x.data().end(), vals.begin());
  Tensor out = make_out(new_shape, std::move(vals), grad_wanted(x));
  if (out.requires_grad()) {
    auto xi = x.impl(), oi = out.impl();
    Tape::active()->record([xi, oi]() {
      if (oi->grad.empty()) return;
      xi->ensure_grad();
      for (size_t i = 0; i < oi->grad.size(); ++i) xi->grad[i] += oi->grad[i];
    });
  }
  return out;
}

Tensor transpose(const Tensor& x, int ax1, int ax2) {
  int a1 = norm_axis(x, ax1, "transpose");
  int a2 = norm_axis(x, ax2, "transpose");
  Shape oshape = x.shape();
  std::swap(oshape[a1], oshape[a2]);
  auto xst = strides_of(x.shape());
  std::swap(xst[a1], xst[a2]);  // strides of x indexed by out coordinates
  // Dims after the swapped pair keep their layout in both tensors, so they
  // copy as one contiguous run; walk only the leading dims.
  int nd = static_cast<int>(oshape.size());
  int head = std::max(a1, a2) + 1;
  int64_t tail = 1;
  for (int d = head; d < nd; ++d) tail *= oshape[d];
  Shape pre(oshape.begin(), oshape.begin() + head);
  std::vector<int64_t> px(xst.begin(), xst.begin() + head);
  std::vector<int64_t> zero(pre.size(), 0);
  auto vals = buffer_acquire(static_cast<size_t>(x.size()));
  const auto& xv = x.data();
  bcast_walk(pre, px, zero, [&](int64_t i, int64_t xo, int64_t) {
    std::memcpy(vals.data() + i * tail, xv.data() + xo,
                sizeof(double) * tail);
  });
  Tensor out = make_out(std::move(oshape), std::move(vals), grad_wanted(x));
  if (out.requires_grad()) {
    auto xi = x.impl(), oi = out.impl();
    Tape::active()->record([xi, oi, pre, px, zero, tail]() {
      if (oi->grad.empty()) return;
      xi->ensure_grad();
      bcast_walk(pre, px, zero, [&](int64_t i, int64_t xo, int64_t) {
        const double* g = oi->grad.data() + i * tail;
        double* dst = xi->grad.data() + xo;
        for (int64_t t = 0; t < tail; ++t) dst[t] += g[t];
      });
    });
  }
  return out;
}

Tensor broadcast_to(const Tensor& x, const Shape& target) {
  Shape oshape = broadcast_shape(x.shape(), target);
  if (oshape != target)
    throw ShapeError("cannot broadcast " + shape_str(x.shape()) + " to " +
                     shape_str(target));
  auto sx = broadcast_strides(x.shape(), target);
  std::vector<int64_t> zero(target.size(), 0);
  auto vals = buffer_acquire(static_cast<size_t>(numel(target)));
  const auto& xv = x.data();
  bcast_walk(target, sx, zero,
             [&](int64_t i, int64_t xo, int64_t) { vals[i] = xv[xo]; });
  Tensor out = make_out(target, std::move(vals), grad_wanted(x));
  if (out.requires_grad()) {
    auto xi = x.impl(), oi = out.impl();
    Tape::active()->record([xi, oi, sx, zero]() {
      if (oi->grad.empty()) return;
      xi->ensure_grad();
      bcast_walk(oi->shape, sx, zero, [&](int64_t i, int64_t xo, int64_t) {
        xi->grad[xo] += oi->grad[i];
      });
    });
  }
  return out;
}

// ------------------------------------------------------------- row kernels --

static int64_t last_dim(const Tensor& x, const char* op) {
  if (x.ndim() < 1)
    throw ShapeError(std::string(op) + " needs rank >= 1");
  return x.dim(-1);
}

Tensor softmax_last(const Tensor& x) {
  int64_t c = last_dim(x, "softmax");
  int64_t rows = x.size() / c;
  auto vals = buffer_acquire(static_cast<size_t>(x.size()));
  const auto& xv = x.data();
  for (int64_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * c;
    double* out = vals.data() + r * c;
    double mx = in[0];
    for (int64_t i = 1; i < c; ++i) mx = std::max(mx, in[i]);
    double denom = 0.0;
    for (int64_t i = 0; i < c; ++i) {
      out[i] = std::exp(in[i] - mx);
      denom += out[i];
    }
    for (int64_t i = 0; i < c; ++i) out[i] /= denom;
  }
  check_finite("softmax", vals);
  Tensor out = make_out(x.shape(), std::move(vals), grad_wanted(x));
  if (out.requires_grad()) {
    auto xi = x.impl(), oi = out.impl();
    Tape::active()->record([xi, oi, rows, c]() {
      if (oi->grad.empty()) return;
      xi->ensure_grad();
      for (int64_t r = 0; r < rows; ++r) {
        const double* y = oi->value.data() + r * c;
        const double* g = oi->grad.data() + r * c;
        double* dx = xi->grad.data() + r * c;
        double dot = 0.0;
        for (int64_t i = 0; i < c; ++i) dot += g[i] * y[i];
        for (int64_t i = 0; i < c; ++i) dx[i] += y[i] * (g[i] - dot);
      }
    });
  }
  return out;
}

Tensor layernorm_last(const Tensor& x, const Tensor& gamma,
                      const Tensor& beta, double eps) {
  int64_t c = last_dim(x, "layernorm");
  if (gamma.size() != c || beta.size() != c)
    throw ShapeError("layernorm scale/shift must have " + std::to_string(c) +
                     " elements");
  int64_t rows = x.size() / c;
  auto vals = buffer_acquire(static_cast<size_t>(x.size()));
  std::vector<double> inv_sigma(rows), mu(rows);
  const auto& xv = x.data();
  const auto& gv = gamma.data();
  const auto& bv = beta.data();
  for (int64_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * c;
    double m = 0.0;
    for (int64_t i = 0; i < c; ++i) m += in[i];
    m /= c;
    double var = 0.0;
    for (int64_t i = 0; i < c; ++i) var += (in[i] - m) * (in[i] - m);
    var /= c;
    double is = 1.0 / std::sqrt(var + eps);
    mu[r] = m;
    inv_sigma[r] = is;
    double* out = vals.data() + r * c;
    for (int64_t i = 0; i < c; ++i)
      out[i] = (in[i] - m) * is * gv[i] + bv[i];
  }
  check_finite("layernorm", vals);
  Tensor out = make_out(x.shape(), std::move(vals),
                        grad_wanted(x) || grad_wanted(gamma) ||
                            grad_wanted(beta));
  if (out.requires_grad()) {
    auto xi = x.impl(), gi = gamma.impl(), bi = beta.impl(), oi = out.impl();
    Tape::active()->record([xi, gi, bi, oi, rows, c, mu, inv_sigma]() {
      if (oi->grad.empty()) return;
      bool wx = xi->requires_grad, wg = gi->requires_grad,
           wb = bi->requires_grad;
      if (wx) xi->ensure_grad();
      if (wg) gi->ensure_grad();
      if (wb) bi->ensure_grad();
      for (int64_t r = 0; r < rows; ++r) {
        const double* in = xi->value.data() + r * c;
        const double* g = oi->grad.data() + r * c;
        double is = inv_sigma[r], m = mu[r];
        if (wg || wb) {
          for (int64_t i = 0; i < c; ++i) {
            double yhat = (in[i] - m) * is;
            if (wg) gi->grad[i] += g[i] * yhat;
            if (wb) bi->grad[i] += g[i];
          }
        }
        if (wx) {
          // dx = is * (dy - mean(dy) - yhat * mean(dy * yhat)), dy = g*gamma
          double mean_dy = 0.0, mean_dyy = 0.0;
          for (int64_t i = 0; i < c; ++i) {
            double dy = g[i] * gi->value[i];
            double yhat = (in[i] - m) * is;
            mean_dy += dy;
            mean_dyy += dy * yhat;
          }
          mean_dy /= c;
          mean_dyy /= c;
          double* dx = xi->grad.data() + r * c;
          for (int64_t i = 0; i < c; ++i) {
            double dy = g[i] * gi->value[i];
            double yhat = (in[i] - m) * is;
            dx[i] += is * (dy - mean_dy - yhat * mean_dyy);
          }
        }
      }
    });
  }
  return out;
}

Tensor cumsum_last(const Tensor& x, bool exclusive) {
  int64_t c = last_dim(x, "cumsum");
  int64_t rows = x.size() / c;
  auto vals = buffer_acquire(static_cast<size_t>(x.size()));
  const auto& xv = x.data();
  for (int64_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * c;
    double* out = vals.data() + r * c;
    double acc = 0.0;
    for (int64_t i = 0; i < c; ++i) {
      if (exclusive) {
        out[i] = acc;
        acc += in[i];
      } else {
        acc += in[i];
        out[i] = acc;
      }
    }
  }
  check_finite("cumsum", vals);
  Tensor out = make_out(x.shape(), std::move(vals), grad_wanted(x));
  if (out.requires_grad()) {
    auto xi = x.impl(), oi = out.impl();
    Tape::active()->record([xi, oi, rows, c, exclusive]() {
      if (oi->grad.empty()) return;
      xi->ensure_grad();
      for (int64_t r = 0; r < rows; ++r) {
        const double* g = oi->grad.data() + r * c;
        double* dx = xi->grad.data() + r * c;
        double acc = 0.0;
        for (int64_t i = c - 1; i >= 0; --i) {
          if (exclusive) {
            dx[i] += acc;      // out_j for j > i depend on x_i
            acc += g[i];
          } else {
            acc += g[i];
            dx[i] += acc;
          }
        }
      }
    });
  }
  return out;
}

}  // namespace dynkit::diff
