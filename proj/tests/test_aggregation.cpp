#include <cmath>
#include <vector>

#include "doctest.h"
#include "dynkit/aggregation.hpp"
#include "dynkit/gradcheck.hpp"

using namespace dynkit;
using diff::Tensor;

namespace {

Tensor random_tensor(diff::Shape shape, Rng& rng, double lo = -1, double hi = 1,
                     bool rg = false) {
  std::vector<double> v(static_cast<size_t>(diff::numel(shape)));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v), rg);
}

Camera simple_camera(int w, int h, double fx) {
  Camera cam;
  cam.fx = cam.fy = fx;
  cam.cx = (w - 1) / 2.0;
  cam.cy = (h - 1) / 2.0;
  cam.width = w;
  cam.height = h;
  return cam;  // identity pose: camera at origin looking down +z
}

}  // namespace

TEST_CASE("source view windows clamp and exclude") {
  CHECK(select_source_views(5, 3, 100) ==
        std::vector<int>{2, 3, 4, 5, 6, 7, 8});
  CHECK(select_source_views(0, 3, 100) == std::vector<int>{0, 1, 2, 3});
  CHECK(select_source_views(99, 3, 100) == std::vector<int>{96, 97, 98, 99});
  CHECK(select_source_views(5, 3, 100, true) ==
        std::vector<int>{2, 3, 4, 6, 7, 8});
  CHECK(select_source_views(0, 2, 1) == std::vector<int>{0});
  CHECK(select_source_views(0, 0, 5) == std::vector<int>{0});
  CHECK_THROWS_AS(select_source_views(5, 3, 5), ConfigError);
  CHECK_THROWS_AS(select_source_views(-1, 3, 5), ConfigError);
  CHECK_THROWS_AS(select_source_views(1, -1, 5), ConfigError);
}

TEST_CASE("feature extractor maps constant images to constant maps") {
  Rng rng(7);
  diff::ParamStore ps;
  FeatureExtractor fe = FeatureExtractor::create(ps, rng);
  CHECK(ps.has("agg.conv.w"));
  CHECK(ps.has("agg.conv.b"));

  Tensor img = Tensor::full({5, 6, 3}, 0.25);
  Tensor out = fe.apply(img);
  REQUIRE(out.shape() == diff::Shape{5, 6, FeatureExtractor::kChannels});

  // With reflect borders a constant image stays constant; the value is the
  // bias plus the input level times the summed kernel.
  const auto& wv = fe.w.data();
  for (int c = 0; c < FeatureExtractor::kChannels; ++c) {
    double acc = fe.b[c];
    for (int tap = 0; tap < 9 * 3; ++tap)
      acc += 0.25 * wv[static_cast<size_t>(tap) * 8 + static_cast<size_t>(c)];
    for (int p = 0; p < 5 * 6; ++p)
      CHECK(out[p * 8 + c] == doctest::Approx(acc).epsilon(1e-12));
  }
}

TEST_CASE("sample_view hits exact pixel centers and flags invalid points") {
  Rng rng(11);
  Frame f;
  f.cam = simple_camera(4, 3, 10.0);
  f.image = random_tensor({3, 4, 3}, rng, 0, 1);
  Tensor feats = random_tensor({3, 4, 8}, rng);

  // Points placed so they project exactly onto pixel centers (2,1) and
  // (0,0), one point behind the camera, one far outside the frame.
  double z = 2.0;
  auto back = [&](double u, double v) {
    return std::vector<double>{(u - f.cam.cx) / f.cam.fx * z,
                               (v - f.cam.cy) / f.cam.fy * z, z};
  };
  std::vector<double> pts;
  for (double c : back(2, 1)) pts.push_back(c);
  for (double c : back(0, 0)) pts.push_back(c);
  pts.insert(pts.end(), {0, 0, -2.0});
  for (double c : back(40, 1)) pts.push_back(c);

  std::vector<uint8_t> valid;
  Tensor s = sample_view(f, feats, Tensor({4, 3}, pts), &valid);
  REQUIRE(s.shape() == diff::Shape{4, 11});
  CHECK(valid == std::vector<uint8_t>{1, 1, 0, 0});
  for (int c = 0; c < 3; ++c) {
    CHECK(s[0 * 11 + c] == doctest::Approx(f.image[(1 * 4 + 2) * 3 + c]));
    CHECK(s[1 * 11 + c] == doctest::Approx(f.image[(0 * 4 + 0) * 3 + c]));
  }
  for (int c = 0; c < 8; ++c) {
    CHECK(s[0 * 11 + 3 + c] == doctest::Approx(feats[(1 * 4 + 2) * 8 + c]));
    CHECK(s[1 * 11 + 3 + c] == doctest::Approx(feats[(0 * 4 + 0) * 8 + c]));
  }
  for (int c = 0; c < 11; ++c) {
    CHECK(s[2 * 11 + c] == 0.0);
    CHECK(s[3 * 11 + c] == 0.0);
  }
}

TEST_CASE("pooling: single view, equal logits, all-invalid") {
  Rng rng(3);
  diff::ParamStore ps;
  PoolParams pool = PoolParams::create(ps, "agg.pool.st", rng);

  // Hand map: m[k][o] = relu(sum_i x[i] w[i][o] + b[o]).
  auto mapped = [&](const std::vector<double>& x) {
    std::vector<double> m(32);
    const auto& w = pool.map.w.data();
    const auto& b = pool.map.b.data();
    for (int o = 0; o < 32; ++o) {
      double acc = b[static_cast<size_t>(o)];
      for (int i = 0; i < 11; ++i)
        acc += x[static_cast<size_t>(i)] * w[static_cast<size_t>(i * 32 + o)];
      m[static_cast<size_t>(o)] = std::max(0.0, acc);
    }
    return m;
  };

  std::vector<double> xa(11), xb(11);
  for (auto& v : xa) v = rng.uniform(-1, 1);
  for (auto& v : xb) v = rng.uniform(-1, 1);

  SUBCASE("one valid view pools to its mapped vector with zero variance") {
    std::vector<double> s = xa;
    s.insert(s.end(), xb.begin(), xb.end());
    Tensor pooled = pool.apply(Tensor({1, 2, 11}, s), Tensor({1, 2, 1}, {1, 0}));
    auto ma = mapped(xa);
    for (int o = 0; o < 32; ++o) {
      CHECK(pooled[o] == doctest::Approx(ma[static_cast<size_t>(o)]).epsilon(1e-12));
      CHECK(pooled[32 + o] == 0.0);
    }
  }

  SUBCASE("zero logit head averages views uniformly") {
    for (auto& v : pool.logit.w.data()) v = 0.0;
    for (auto& v : pool.logit.b.data()) v = 0.0;
    std::vector<double> s = xa;
    s.insert(s.end(), xb.begin(), xb.end());
    Tensor pooled = pool.apply(Tensor({1, 2, 11}, s), Tensor({1, 2, 1}, {1, 1}));
    auto ma = mapped(xa), mb = mapped(xb);
    for (int o = 0; o < 32; ++o) {
      double mu = 0.5 * (ma[static_cast<size_t>(o)] + mb[static_cast<size_t>(o)]);
      double dv = 0.5 * std::pow(ma[static_cast<size_t>(o)] - mu, 2) +
                  0.5 * std::pow(mb[static_cast<size_t>(o)] - mu, 2);
      CHECK(pooled[o] == doctest::Approx(mu).epsilon(1e-12));
      CHECK(pooled[32 + o] == doctest::Approx(dv).epsilon(1e-10));
    }
  }

  SUBCASE("no valid view pools to exactly zero") {
    std::vector<double> s = xa;
    s.insert(s.end(), xb.begin(), xb.end());
    Tensor pooled = pool.apply(Tensor({1, 2, 11}, s), Tensor({1, 2, 1}, {0, 0}));
    for (int o = 0; o < 64; ++o) CHECK(pooled[o] == 0.0);
  }

  SUBCASE("invalid views do not influence the result") {
    std::vector<double> s1 = xa;
    s1.insert(s1.end(), xb.begin(), xb.end());
    Tensor with_junk =
        pool.apply(Tensor({1, 2, 11}, s1), Tensor({1, 2, 1}, {1, 0}));
    Tensor alone = pool.apply(Tensor({1, 1, 11}, xa), Tensor({1, 1, 1}, {1}));
    for (int o = 0; o < 64; ++o)
      CHECK(with_junk[o] == doctest::Approx(alone[o]).epsilon(1e-14));
  }

  SUBCASE("view order does not matter") {
    std::vector<double> ab = xa, ba = xb;
    ab.insert(ab.end(), xb.begin(), xb.end());
    ba.insert(ba.end(), xa.begin(), xa.end());
    Tensor p1 = pool.apply(Tensor({1, 2, 11}, ab), Tensor({1, 2, 1}, {1, 1}));
    Tensor p2 = pool.apply(Tensor({1, 2, 11}, ba), Tensor({1, 2, 1}, {1, 1}));
    for (int o = 0; o < 64; ++o)
      CHECK(p1[o] == doctest::Approx(p2[o]).epsilon(1e-12));
  }
}

TEST_CASE("ray transformer shapes, ranges, and permutation equivariance") {
  Rng rng(19);
  diff::ParamStore ps;
  RayTransformer rt = RayTransformer::create(ps, "agg.rt.dy", 8, 5, rng);

  Tensor x = random_tensor({2, 4, 8}, rng);
  Tensor post = random_tensor({2, 4, 5}, rng);
  auto [c, s] = rt.apply(x, post);
  REQUIRE(c.shape() == diff::Shape{2, 4, 3});
  REQUIRE(s.shape() == diff::Shape{2, 4});
  for (int64_t i = 0; i < c.size(); ++i) {
    CHECK(c[i] > 0.0);
    CHECK(c[i] < 1.0);
  }
  for (int64_t i = 0; i < s.size(); ++i) CHECK(s[i] >= 0.0);

  // Reversing the sample order permutes the outputs identically.
  auto reverse_samples = [](const Tensor& t) {
    int64_t r = t.shape()[0], n = t.shape()[1], d = t.shape()[2];
    std::vector<double> v(t.data().size());
    for (int64_t a = 0; a < r; ++a)
      for (int64_t k = 0; k < n; ++k)
        for (int64_t e = 0; e < d; ++e)
          v[static_cast<size_t>((a * n + k) * d + e)] =
              t[(a * n + (n - 1 - k)) * d + e];
    return Tensor(t.shape(), std::move(v));
  };
  auto [cr, sr] = rt.apply(reverse_samples(x), reverse_samples(post));
  for (int64_t a = 0; a < 2; ++a)
    for (int64_t k = 0; k < 4; ++k) {
      for (int64_t e = 0; e < 3; ++e)
        CHECK(cr[(a * 4 + k) * 3 + e] ==
              doctest::Approx(c[(a * 4 + (3 - k)) * 3 + e]).epsilon(1e-9));
      CHECK(sr[a * 4 + k] ==
            doctest::Approx(s[a * 4 + (3 - k)]).epsilon(1e-9));
    }

  SUBCASE("input tensor rank is validated") {
    CHECK_THROWS_AS(rt.apply(random_tensor({4, 8}, rng), Tensor()),
                    ShapeError);
  }
}

TEST_CASE("ray transformer gradients match finite differences") {
  Rng rng(23);
  diff::ParamStore ps;
  RayTransformer rt = RayTransformer::create(ps, "rt", 6, 4, rng);
  Tensor x = random_tensor({1, 3, 6}, rng, -1, 1, true);
  Tensor post = random_tensor({1, 3, 4}, rng, -1, 1, true);

  std::vector<Tensor> inputs{x, post};
  for (const auto& [name, t] : ps.items()) {
    (void)name;
    inputs.push_back(t);
  }
  auto f = [&]() {
    auto [c, s] = rt.apply(x, post);
    return diff::add(diff::sum(c), diff::sum(s));
  };
  Rng sel(5);
  auto res = diff::grad_check(f, inputs, 1e-5, 4, &sel);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("sample-pool chain gradients reach the image and the points") {
  Rng rng(31);
  diff::ParamStore ps;
  PoolParams pool = PoolParams::create(ps, "pool", rng);
  Frame f;
  f.cam = simple_camera(6, 5, 8.0);
  f.image = random_tensor({5, 6, 3}, rng, 0, 1, true);
  Tensor feats = random_tensor({5, 6, 8}, rng, -1, 1, true);

  // Interior points with fractional projections keep bilinear smooth.
  std::vector<double> pts;
  Rng prng(2);
  for (int p = 0; p < 3; ++p) {
    double u = prng.uniform(1.2, 4.8), v = prng.uniform(1.2, 3.8), z = 2.0;
    pts.insert(pts.end(), {(u - f.cam.cx) / f.cam.fx * z,
                           (v - f.cam.cy) / f.cam.fy * z, z});
  }
  Tensor x = Tensor({3, 3}, pts, true);

  std::vector<Tensor> inputs{x, f.image, feats, pool.map.w, pool.map.b,
                             pool.logit.w, pool.logit.b};
  auto loss = [&]() {
    std::vector<uint8_t> valid;
    Tensor s = sample_view(f, feats, x, &valid);
    Tensor mask({3, 1, 1}, {1, 1, 1});
    Tensor pooled =
        pool.apply(diff::reshape(s, {3, 1, 11}), mask);
    return diff::sum(diff::mul(pooled, pooled));
  };
  Rng sel(9);
  auto res = diff::grad_check(loss, inputs, 1e-5, 6, &sel);
  CHECK(res.max_rel_err < 1e-4);
}
