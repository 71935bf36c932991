#include <doctest.h>

#include <cmath>

#include "dynkit/geometry.hpp"
#include "dynkit/gradcheck.hpp"

using namespace dynkit;
using diff::Shape;
using diff::Tensor;

static Camera test_camera() {
  Camera c;
  c.fx = 120.0;
  c.fy = 110.0;
  c.cx = 79.5;
  c.cy = 59.5;
  c.width = 160;
  c.height = 120;
  c.R = rot_y(0.3) * rot_x(-0.1);
  c.t = {0.2, -0.1, -1.5};
  return c;
}

TEST_CASE("rotation matrices are orthonormal") {
  Mat3 r = rot_z(0.7) * rot_y(-1.1) * rot_x(0.4);
  Mat3 rtr = r.transposed() * r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      CHECK(rtr(i, j) == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-12));
}

TEST_CASE("project after ray round trips") {
  Camera cam = test_camera();
  Rng rng(5);
  for (int i = 0; i < 50; ++i) {
    double u = rng.uniform(0, cam.width - 1);
    double v = rng.uniform(0, cam.height - 1);
    Ray r = ray_through_pixel(cam, u, v);
    CHECK(r.dir.norm() == doctest::Approx(1.0).epsilon(1e-12));
    double t = rng.uniform(0.5, 5.0);
    Vec3 x = r.origin + t * r.dir;
    Projection p = project_point(cam, x);
    REQUIRE(p.in_front);
    CHECK(p.u == doctest::Approx(u).epsilon(1e-9));
    CHECK(p.v == doctest::Approx(v).epsilon(1e-9));
    // distance along a unit ray equals the parameter
    CHECK((x - cam.t).norm() == doctest::Approx(t).epsilon(1e-9));
  }
}

TEST_CASE("points behind the camera are flagged") {
  Camera cam = test_camera();
  Ray r = ray_through_pixel(cam, 40.0, 30.0);
  Vec3 behind = r.origin - 2.0 * r.dir;
  CHECK(!project_point(cam, behind).in_front);
}

TEST_CASE("pluecker coordinates ignore the origin parameterization") {
  Ray r;
  r.origin = {0.3, -0.2, 1.0};
  r.dir = Vec3{0.2, 0.5, -0.8}.normalized();
  auto a = pluecker(r);
  Ray shifted;
  shifted.dir = r.dir;
  shifted.origin = r.origin + 3.7 * r.dir;
  auto b = pluecker(shifted);
  for (int i = 0; i < 6; ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
}

TEST_CASE("positional encoding") {
  SUBCASE("dimension and zero point") {
    auto e = posenc({0.0, 0.0, 0.0}, 16);
    CHECK(e.size() == 3 * (1 + 2 * 16));  // 99
    for (int i = 0; i < 3; ++i) CHECK(e[i] == 0.0);
    // first sin block zero, first cos block one
    for (int i = 3; i < 6; ++i) CHECK(e[i] == 0.0);
    for (int i = 6; i < 9; ++i) CHECK(e[i] == 1.0);
  }
  SUBCASE("frequencies are linear in k") {
    double x = 0.37;
    auto e = posenc({x}, 4);
    for (int k = 1; k <= 4; ++k) {
      CHECK(e[1 + 2 * (k - 1)] == doctest::Approx(std::sin(k * M_PI * x)).epsilon(1e-15));
      CHECK(e[2 + 2 * (k - 1)] == doctest::Approx(std::cos(k * M_PI * x)).epsilon(1e-15));
    }
  }
  SUBCASE("tensor version matches the scalar version exactly") {
    std::vector<double> vals{0.1, -0.7, 0.43, 0.9, -0.2, 0.05};
    Tensor x({2, 3}, vals);
    Tensor enc = posenc_t(x, 5);
    CHECK(enc.shape() == Shape{2, 3 * 11});
    for (int row = 0; row < 2; ++row) {
      auto ref = posenc({vals[row * 3], vals[row * 3 + 1], vals[row * 3 + 2]}, 5);
      for (size_t i = 0; i < ref.size(); ++i)
        CHECK(enc[row * 33 + i] == ref[i]);
    }
  }
  SUBCASE("encoding is differentiable") {
    Rng rng(77);
    std::vector<double> v(6);
    for (auto& x : v) x = rng.uniform(-1, 1);
    Tensor x({2, 3}, v);
    Tensor w({2, 33}, [&] {
      std::vector<double> ww(66);
      for (auto& q : ww) q = rng.uniform(-1, 1);
      return ww;
    }());
    auto res = diff::grad_check(
        [&] { return diff::sum(diff::mul(posenc_t(x, 5), w)); }, {x});
    CHECK(res.max_rel_err < 1e-5);
  }
}

TEST_CASE("stratified samples") {
  SUBCASE("midpoints when jitter is off") {
    auto s = stratified_samples(1.0, 3.0, 4, false, nullptr);
    CHECK(s[0] == doctest::Approx(1.25).epsilon(1e-15));
    CHECK(s[1] == doctest::Approx(1.75).epsilon(1e-15));
    CHECK(s[2] == doctest::Approx(2.25).epsilon(1e-15));
    CHECK(s[3] == doctest::Approx(2.75).epsilon(1e-15));
  }
  SUBCASE("jittered samples stay in their bins") {
    Rng rng(3);
    auto s = stratified_samples(0.5, 2.5, 8, true, &rng);
    for (int i = 0; i < 8; ++i) {
      double lo = 0.5 + 0.25 * i, hi = lo + 0.25;
      CHECK(s[i] >= lo);
      CHECK(s[i] < hi);
    }
  }
}

TEST_CASE("batched projection matches the scalar camera model") {
  Camera cam = test_camera();
  Rng rng(9);
  std::vector<double> pts;
  std::vector<Vec3> ref;
  for (int i = 0; i < 20; ++i) {
    Ray r = ray_through_pixel(cam, rng.uniform(0, 159), rng.uniform(0, 119));
    Vec3 x = r.origin + rng.uniform(0.5, 4.0) * r.dir;
    ref.push_back(x);
    pts.insert(pts.end(), {x.x, x.y, x.z});
  }
  Tensor xw({20, 3}, pts);
  std::vector<uint8_t> valid;
  Tensor uv = project_points(cam, xw, &valid);
  for (int i = 0; i < 20; ++i) {
    Projection p = project_point(cam, ref[i]);
    CHECK(valid[i] == 1);
    CHECK(uv[2 * i] == doctest::Approx(p.u).epsilon(1e-12));
    CHECK(uv[2 * i + 1] == doctest::Approx(p.v).epsilon(1e-12));
  }

  SUBCASE("projection is differentiable in the points") {
    Tensor w({20, 2}, [&] {
      std::vector<double> ww(40);
      for (auto& q : ww) q = rng.uniform(-1, 1);
      return ww;
    }());
    auto res = diff::grad_check(
        [&] {
          return diff::sum(diff::mul(project_points(cam, xw, nullptr), w));
        },
        {xw});
    CHECK(res.max_rel_err < 1e-5);
  }

  SUBCASE("points behind the camera are masked out") {
    Vec3 behind = cam.t - 1.0 * (cam.R * Vec3{0, 0, 1});
    Tensor xb({1, 3}, {behind.x, behind.y, behind.z});
    std::vector<uint8_t> vb;
    project_points(cam, xb, &vb);
    CHECK(vb[0] == 0);
  }
}
