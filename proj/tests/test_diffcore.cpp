#include <doctest.h>

#include <cmath>
#include <cstring>

#include "dynkit/checkpoint.hpp"
#include "dynkit/gradcheck.hpp"
#include "dynkit/nn.hpp"
#include "dynkit/ops.hpp"
#include "dynkit/rng.hpp"
#include "dynkit/tensor.hpp"
#include "dynkit/threadpool.hpp"

using namespace dynkit;
using namespace dynkit::diff;

static Tensor rand_tensor(Shape shape, Rng& rng, double lo = -1.0,
                          double hi = 1.0) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v));
}

TEST_CASE("rng is deterministic and resumable") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  auto st = a.state();
  double x1 = a.uniform();
  a.set_state(st);
  CHECK(a.uniform() == x1);
  Rng c(7);
  for (int i = 0; i < 1000; ++i) {
    double u = c.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(std::isfinite(c.normal()));
  }
  for (int i = 0; i < 1000; ++i) {
    int64_t k = c.uniform_int(7);
    CHECK(k >= 0);
    CHECK(k < 7);
  }
}

TEST_CASE("parallel_for covers the range exactly once") {
  std::vector<int> hits(10000, 0);
  parallel_for(hits.size(), [&](size_t b, size_t e) {
    for (size_t i = b; i < e; ++i) hits[i] += 1;
  });
  for (int h : hits) CHECK(h == 1);
}

TEST_CASE("forward oracles") {
  SUBCASE("softmax of a uniform row") {
    Tensor x = Tensor::full({2, 4}, 3.7);
    Tensor y = softmax_last(x);
    for (int64_t i = 0; i < y.size(); ++i)
      CHECK(y[i] == doctest::Approx(0.25).epsilon(1e-12));
  }
  SUBCASE("softplus and sigmoid at zero") {
    Tensor z = Tensor::scalar(0.0);
    CHECK(softplus(z).item() == doctest::Approx(0.6931471805599453).epsilon(1e-14));
    CHECK(sigmoid(z).item() == doctest::Approx(0.5).epsilon(1e-14));
  }
  SUBCASE("matmul 2x2 by hand") {
    Tensor a({2, 2}, {1, 2, 3, 4});
    Tensor b({2, 2}, {5, 6, 7, 8});
    Tensor c = matmul(a, b);
    CHECK(c[0] == 19);
    CHECK(c[1] == 22);
    CHECK(c[2] == 43);
    CHECK(c[3] == 50);
    // a^T stored as a: (a^T)b with a pre-transposed storage
    Tensor at({2, 2}, {1, 3, 2, 4});
    Tensor c2 = matmul(at, b, true, false);
    for (int i = 0; i < 4; ++i) CHECK(c2[i] == c[i]);
    Tensor bt({2, 2}, {5, 7, 6, 8});
    Tensor c3 = matmul(a, bt, false, true);
    for (int i = 0; i < 4; ++i) CHECK(c3[i] == c[i]);
  }
  SUBCASE("cumsum") {
    Tensor x({3}, {1, 2, 3});
    Tensor inc = cumsum_last(x, false);
    CHECK(inc[0] == 1);
    CHECK(inc[1] == 3);
    CHECK(inc[2] == 6);
    Tensor exc = cumsum_last(x, true);
    CHECK(exc[0] == 0);
    CHECK(exc[1] == 1);
    CHECK(exc[2] == 3);
  }
  SUBCASE("layernorm centers and scales") {
    Tensor x({1, 3}, {1, 2, 3});
    Tensor g = Tensor::full({3}, 1.0);
    Tensor b = Tensor::zeros({3});
    Tensor y = layernorm_last(x, g, b);
    double s = 1.0 / std::sqrt(2.0 / 3.0 + 1e-5);
    CHECK(y[0] == doctest::Approx(-s).epsilon(1e-12));
    CHECK(y[1] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(y[2] == doctest::Approx(s).epsilon(1e-12));
  }
  SUBCASE("broadcast add aligns trailing axes") {
    Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor b({3}, {10, 20, 30});
    Tensor c = add(a, b);
    CHECK(c[0] == 11);
    CHECK(c[4] == 25);
    CHECK(c[5] == 36);
  }
}

TEST_CASE("backward oracles") {
  SUBCASE("d/dx sum(x^2) = 2x") {
    Tensor x({3}, {1, 2, 3}, true);
    Tape tape;
    Tensor loss = sum(mul(x, x));
    tape.backward(loss);
    CHECK(x.grad()[0] == doctest::Approx(2.0).epsilon(1e-14));
    CHECK(x.grad()[1] == doctest::Approx(4.0).epsilon(1e-14));
    CHECK(x.grad()[2] == doctest::Approx(6.0).epsilon(1e-14));
  }
  SUBCASE("d/dx sin(x) at 0 is 1") {
    Tensor x = Tensor::scalar(0.0, true);
    Tape tape;
    tape.backward(sin(x));
    CHECK(x.grad()[0] == doctest::Approx(1.0).epsilon(1e-14));
  }
  SUBCASE("broadcast reduces gradients to operand shape") {
    Tensor a = Tensor::full({2, 3}, 1.0, true);
    Tensor b = Tensor::full({3}, 2.0, true);
    Tape tape;
    tape.backward(sum(mul(a, b)));
    for (double g : a.grad()) CHECK(g == 2.0);
    for (double g : b.grad()) CHECK(g == 2.0);  // summed over 2 rows of 1
  }
  SUBCASE("gradient flows through both uses of a shared tensor") {
    Tensor x = Tensor::scalar(3.0, true);
    Tape tape;
    tape.backward(mul(x, x));
    CHECK(x.grad()[0] == doctest::Approx(6.0).epsilon(1e-14));
  }
}

TEST_CASE("tape lifecycle") {
  Tensor x = Tensor::scalar(2.0, true);
  SUBCASE("backward twice is rejected") {
    Tape tape;
    Tensor y = mul(x, x);
    tape.backward(y);
    CHECK_THROWS_AS(tape.backward(y), NumericError);
  }
  SUBCASE("backward needs a scalar") {
    Tape tape;
    Tensor v({2}, {1, 2}, true);
    Tensor w = mul(v, v);
    CHECK_THROWS_AS(tape.backward(w), ShapeError);
  }
  SUBCASE("no recording without an active tape") {
    Tensor y = mul(x, x);
    CHECK(!y.requires_grad());
  }
  SUBCASE("NoTape suspends recording") {
    Tape tape;
    size_t before = tape.size();
    {
      NoTape guard;
      Tensor y = mul(x, x);
      CHECK(!y.requires_grad());
    }
    CHECK(tape.size() == before);
    Tensor z = mul(x, x);
    CHECK(z.requires_grad());
    tape.backward(z);
  }
}

TEST_CASE("non-finite results are trapped") {
  Tensor neg = Tensor::scalar(-1.0);
  CHECK_THROWS_AS(log(neg), NumericError);
  Tensor zero = Tensor::scalar(0.0);
  CHECK_THROWS_AS(div(Tensor::scalar(1.0), zero), NumericError);
  Tensor big = Tensor::scalar(1e308);
  CHECK_THROWS_AS(mul(big, big), NumericError);
}

TEST_CASE("shape errors") {
  Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor b({2, 2}, {1, 2, 3, 4});
  CHECK_THROWS_AS(matmul(a, b), ShapeError);
  CHECK_THROWS_AS(add(a, b), ShapeError);
  CHECK_THROWS_AS(slice(a, 1, 2, 5), ShapeError);
  CHECK_THROWS_AS(reshape(a, {4, 2}), ShapeError);
}

static void check_grads(const std::function<Tensor()>& f,
                        const std::vector<Tensor>& inputs, double tol = 1e-5) {
  auto res = grad_check(f, inputs, 1e-5);
  CHECK(res.max_rel_err < tol);
}

TEST_CASE("gradient checks: elementwise and broadcast") {
  Rng rng(101);
  for (int rep = 0; rep < 3; ++rep) {
    Tensor a = rand_tensor({2, 3, 4}, rng);
    Tensor b = rand_tensor({3, 4}, rng);
    Tensor c = rand_tensor({4}, rng);
    Tensor s = rand_tensor({1}, rng);
    check_grads([&] { return sum(add(a, b)); }, {a, b});
    check_grads([&] { return sum(sub(a, c)); }, {a, c});
    check_grads([&] { return sum(mul(a, b)); }, {a, b});
    check_grads([&] { return sum(mul(a, s)); }, {a, s});
    Tensor bpos = rand_tensor({3, 4}, rng, 0.5, 1.5);
    check_grads([&] { return sum(div(a, bpos)); }, {a, bpos});
  }
}

TEST_CASE("gradient checks: unary kernels") {
  Rng rng(202);
  Tensor x = rand_tensor({3, 5}, rng, -0.9, 0.9);
  Tensor xp = rand_tensor({3, 5}, rng, 0.3, 2.0);
  Tensor xoff = rand_tensor({3, 5}, rng, 0.2, 1.0);   // away from kinks
  Tensor xneg = rand_tensor({3, 5}, rng, -1.0, -0.2);
  check_grads([&] { return sum(exp(x)); }, {x});
  check_grads([&] { return sum(log(xp)); }, {xp});
  check_grads([&] { return sum(sin(x)); }, {x});
  check_grads([&] { return sum(cos(x)); }, {x});
  check_grads([&] { return sum(pow(xp, 2.3)); }, {xp});
  check_grads([&] { return sum(dynkit::diff::sqrt(xp)); }, {xp});
  check_grads([&] { return sum(abs(xoff)); }, {xoff});
  check_grads([&] { return sum(abs(xneg)); }, {xneg});
  check_grads([&] { return sum(sigmoid(x)); }, {x});
  check_grads([&] { return sum(softplus(x)); }, {x});
  check_grads([&] { return sum(relu(xoff)); }, {xoff});
  check_grads([&] { return sum(clamp_min(xoff, 0.1)); }, {xoff});
  check_grads([&] { return sum(affine(x, 2.5, -1.0)); }, {x});
}

TEST_CASE("gradient checks: matmul flag and batch combinations") {
  Rng rng(303);
  SUBCASE("plain 2d") {
    Tensor a = rand_tensor({3, 4}, rng);
    Tensor b = rand_tensor({4, 5}, rng);
    check_grads([&] { return sum(matmul(a, b)); }, {a, b});
  }
  SUBCASE("ta") {
    Tensor a = rand_tensor({4, 3}, rng);
    Tensor b = rand_tensor({4, 5}, rng);
    check_grads([&] { return sum(matmul(a, b, true, false)); }, {a, b});
  }
  SUBCASE("tb") {
    Tensor a = rand_tensor({3, 4}, rng);
    Tensor b = rand_tensor({5, 4}, rng);
    check_grads([&] { return sum(matmul(a, b, false, true)); }, {a, b});
  }
  SUBCASE("ta and tb") {
    Tensor a = rand_tensor({4, 3}, rng);
    Tensor b = rand_tensor({5, 4}, rng);
    check_grads([&] { return sum(matmul(a, b, true, true)); }, {a, b});
  }
  SUBCASE("batched, equal batch") {
    Tensor a = rand_tensor({3, 2, 4}, rng);
    Tensor b = rand_tensor({3, 4, 5}, rng);
    check_grads([&] { return sum(matmul(a, b)); }, {a, b});
  }
  SUBCASE("batched against unbatched weight") {
    Tensor a = rand_tensor({3, 2, 4}, rng);
    Tensor b = rand_tensor({4, 5}, rng);
    check_grads([&] { return sum(matmul(a, b)); }, {a, b});
  }
  SUBCASE("broadcast batch dim") {
    Tensor a = rand_tensor({1, 2, 4}, rng);
    Tensor b = rand_tensor({3, 4, 5}, rng);
    check_grads([&] { return sum(matmul(a, b)); }, {a, b});
  }
  SUBCASE("batched transposed") {
    Tensor a = rand_tensor({2, 4, 3}, rng);
    Tensor b = rand_tensor({2, 5, 4}, rng);
    check_grads([&] { return sum(matmul(a, b, true, true)); }, {a, b});
  }
}

TEST_CASE("gradient checks: reductions and reshaping") {
  Rng rng(404);
  Tensor x = rand_tensor({2, 3, 4}, rng);
  check_grads([&] { return sum(x); }, {x});
  check_grads([&] { return mean(x); }, {x});
  check_grads([&] { return sum(mul(sum(x, 1), sum(x, 1))); }, {x});
  check_grads([&] { return sum(mul(mean(x, -1, true), x)); }, {x});
  Tensor y = rand_tensor({2, 2, 4}, rng);
  check_grads([&] { return sum(mul(concat({x, y}, 1), concat({x, y}, 1))); },
              {x, y});
  check_grads([&] { return sum(mul(slice(x, 2, 1, 2), slice(x, 2, 0, 2))); },
              {x});
  check_grads([&] { return sum(mul(reshape(x, {6, 4}), reshape(x, {6, 4}))); },
              {x});
  check_grads(
      [&] { return sum(mul(transpose(x, 0, 2), transpose(x, 0, 2))); }, {x});
  Tensor z = rand_tensor({3, 1}, rng);
  check_grads([&] {
    Tensor b = broadcast_to(z, {2, 3, 4});
    return sum(mul(b, b));
  }, {z});
}

TEST_CASE("gradient checks: row kernels") {
  Rng rng(505);
  Tensor x = rand_tensor({3, 6}, rng, -2.0, 2.0);
  Tensor g = rand_tensor({6}, rng, 0.5, 1.5);
  Tensor b = rand_tensor({6}, rng);
  Tensor w = rand_tensor({3, 6}, rng);
  check_grads([&] { return sum(mul(softmax_last(x), w)); }, {x});
  check_grads([&] { return sum(mul(layernorm_last(x, g, b), w)); },
              {x, g, b}, 2e-5);
  check_grads([&] { return sum(mul(cumsum_last(x, false), w)); }, {x});
  check_grads([&] { return sum(mul(cumsum_last(x, true), w)); }, {x});
}

TEST_CASE("softmax rows sum to one") {
  Rng rng(606);
  Tensor x = rand_tensor({8, 7}, rng, -30.0, 30.0);
  Tensor y = softmax_last(x);
  for (int64_t r = 0; r < 8; ++r) {
    double s = 0.0;
    for (int64_t c = 0; c < 7; ++c) s += y[r * 7 + c];
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("gradient checks: image kernels") {
  Rng rng(707);
  SUBCASE("bilinear sample, both inputs") {
    Tensor img = rand_tensor({4, 5, 3}, rng);
    // keep fractional parts away from integer kinks for finite differences
    std::vector<double> uvv;
    for (int i = 0; i < 6; ++i) {
      uvv.push_back(rng.uniform_int(4) + rng.uniform(0.2, 0.8));  // u in [0,4)
      uvv.push_back(rng.uniform_int(3) + rng.uniform(0.2, 0.8));  // v in [0,3)
    }
    Tensor uv({6, 2}, uvv);
    Tensor w = rand_tensor({6, 3}, rng);
    check_grads([&] { return sum(mul(bilinear_sample(img, uv, {}), w)); },
                {img, uv});
  }
  SUBCASE("rows outside the image give zeros and no gradient") {
    Tensor img = rand_tensor({4, 5, 3}, rng);
    Tensor uv({2, 2}, {-1.0, 1.0, 2.0, 1.5});
    std::vector<uint8_t> ok;
    Tensor out = bilinear_sample(img, uv, {}, &ok);
    CHECK(ok[0] == 0);
    CHECK(ok[1] == 1);
    for (int k = 0; k < 3; ++k) CHECK(out[k] == 0.0);
  }
  SUBCASE("explicit invalid mask wins") {
    Tensor img = rand_tensor({4, 5, 3}, rng);
    Tensor uv({1, 2}, {2.0, 1.5});
    std::vector<uint8_t> ok;
    bilinear_sample(img, uv, {0}, &ok);
    CHECK(ok[0] == 0);
  }
  SUBCASE("conv3x3 reflect") {
    Tensor x = rand_tensor({4, 5, 2}, rng);
    Tensor w = rand_tensor({3, 3, 2, 3}, rng, -0.5, 0.5);
    Tensor b = rand_tensor({3}, rng, -0.1, 0.1);
    Tensor m = rand_tensor({4, 5, 3}, rng);
    check_grads([&] { return sum(mul(conv3x3_reflect(x, w, b), m)); },
                {x, w, b}, 2e-5);
  }
  SUBCASE("avgpool2") {
    Tensor x = rand_tensor({4, 6, 2}, rng);
    Tensor m = rand_tensor({2, 3, 2}, rng);
    check_grads([&] { return sum(mul(avgpool2(x), m)); }, {x});
  }
  SUBCASE("upsample bilinear 2x") {
    Tensor x = rand_tensor({3, 4, 2}, rng);
    Tensor m = rand_tensor({6, 8, 2}, rng);
    check_grads([&] { return sum(mul(upsample_bilinear2x(x), m)); }, {x});
  }
  SUBCASE("avgpool then upsample of a constant is identity") {
    Tensor x = Tensor::full({4, 4, 1}, 0.7);
    Tensor y = upsample_bilinear2x(avgpool2(x));
    for (int64_t i = 0; i < y.size(); ++i)
      CHECK(y[i] == doctest::Approx(0.7).epsilon(1e-12));
  }
}

TEST_CASE("mlp end to end finite differences") {
  Rng rng(808);
  ParamStore ps;
  Mlp mlp = Mlp::create(ps, "net", {3, 8, 8, 1}, rng);
  Tensor x = rand_tensor({4, 3}, rng);
  std::vector<Tensor> inputs{x};
  for (const auto& [name, t] : ps.items()) inputs.push_back(t);
  auto res = grad_check([&] { return mean(mlp.apply(x)); }, inputs, 1e-5);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("adam") {
  SUBCASE("first step moves by about lr") {
    ParamStore ps;
    Tensor p = ps.create("p", {2}, {1.0, -2.0});
    AdamConfig cfg;
    cfg.lr = 1e-3;
    cfg.clip_norm = 0;
    Adam opt(ps, cfg);
    {
      Tape tape;
      tape.backward(sum(p));  // grad = 1 everywhere
    }
    opt.step();
    CHECK(p[0] == doctest::Approx(1.0 - 1e-3).epsilon(1e-7));
    CHECK(p[1] == doctest::Approx(-2.0 - 1e-3).epsilon(1e-7));
  }
  SUBCASE("zero learning rate leaves parameters bit-identical") {
    Rng rng(11);
    ParamStore ps;
    Tensor p = ps.create("p", {8}, xavier_uniform(8, 8, 8, rng));
    std::vector<double> before = p.data();
    AdamConfig cfg;
    cfg.lr = 0.0;
    Adam opt(ps, cfg);
    for (int it = 0; it < 3; ++it) {
      ps.zero_grads();
      Tape tape;
      tape.backward(sum(mul(p, p)));
      opt.step();
    }
    CHECK(std::memcmp(before.data(), p.data().data(),
                      before.size() * sizeof(double)) == 0);
  }
  SUBCASE("clipping equals pre-scaled gradients") {
    ParamStore a, b;
    Tensor pa = a.create("p", {3}, {0.5, 0.5, 0.5});
    Tensor pb = b.create("p", {3}, {0.5, 0.5, 0.5});
    AdamConfig ca;
    ca.clip_norm = 1.0;
    AdamConfig cb;
    cb.clip_norm = 0.0;
    Adam oa(a, ca), ob(b, cb);
    {
      Tape tape;
      tape.backward(affine(sum(mul(pa, pa)), 50.0, 0.0));  // big grads
    }
    double norm = 0;
    for (double g : pa.grad()) norm += g * g;
    norm = std::sqrt(norm);
    CHECK(norm > 1.0);
    {
      Tape tape;
      tape.backward(affine(sum(mul(pb, pb)), 50.0 / norm, 0.0));
    }
    double ra = oa.step();
    ob.step();
    CHECK(ra == doctest::Approx(norm).epsilon(1e-12));
    for (int i = 0; i < 3; ++i)
      CHECK(pa[i] == doctest::Approx(pb[i]).epsilon(1e-12));
  }
  SUBCASE("missing gradient is an error") {
    ParamStore ps;
    ps.create("used", {1}, {1.0});
    ps.create("unused", {1}, {1.0});
    Adam opt(ps, {});
    Tensor used = ps.get("used");
    Tape tape;
    tape.backward(sum(used));
    CHECK_THROWS_AS(opt.step(), NumericError);
  }
}

TEST_CASE("checkpoint round trip is bit exact") {
  Rng rng(909);
  std::vector<NamedBlob> blobs;
  blobs.push_back({"model.w", {3, 4}, {}});
  blobs.back().data.resize(12);
  for (auto& v : blobs.back().data) v = rng.normal() * 1e3;
  blobs.push_back({"model.b", {4}, {0.0, -0.0, 1e-300, 1e300}});
  blobs.push_back({"scalar", {}, {42.5}});
  std::string path = "ckpt_test.bin";
  save_checkpoint(path, blobs);
  auto loaded = load_checkpoint(path);
  REQUIRE(loaded.size() == blobs.size());
  for (size_t i = 0; i < blobs.size(); ++i) {
    CHECK(loaded[i].name == blobs[i].name);
    CHECK(loaded[i].shape == blobs[i].shape);
    REQUIRE(loaded[i].data.size() == blobs[i].data.size());
    CHECK(std::memcmp(loaded[i].data.data(), blobs[i].data.data(),
                      blobs[i].data.size() * sizeof(double)) == 0);
  }
  std::remove(path.c_str());
  CHECK_THROWS_AS(load_checkpoint("no_such_file.bin"), DataError);
}
