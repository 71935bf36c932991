#include "dynkit/nn.hpp"

#include <cmath>

namespace dynkit::diff {

Tensor ParamStore::create(const std::string& name, Shape shape,
                          std::vector<double> init) {
  if (has(name))
    throw ConfigError("duplicate parameter name '" + name + "'");
  Tensor t(std::move(shape), std::move(init), true);
  items_.emplace_back(name, t);
  return t;
}

Tensor ParamStore::get(const std::string& name) const {
  for (const auto& [n, t] : items_)
    if (n == name) return t;
  throw ConfigError("unknown parameter '" + name + "'");
}

bool ParamStore::has(const std::string& name) const {
  for (const auto& [n, t] : items_)
    if (n == name) return true;
  return false;
}

int64_t ParamStore::total_elements() const {
  int64_t n = 0;
  for (const auto& [name, t] : items_) n += t.size();
  return n;
}

void ParamStore::zero_grads() {
  for (auto& [name, t] : items_) t.zero_grad();
}

std::vector<double> xavier_uniform(int64_t fan_in, int64_t fan_out,
                                   int64_t count, Rng& rng) {
  double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> v(count);
  for (auto& x : v) x = rng.uniform(-limit, limit);
  return v;
}

Linear Linear::create(ParamStore& ps, const std::string& prefix, int64_t in,
                      int64_t out, Rng& rng, bool zero_init) {
  Linear l;
  l.in = in;
  l.out = out;
  std::vector<double> wv = zero_init
                               ? std::vector<double>(in * out, 0.0)
                               : xavier_uniform(in, out, in * out, rng);
  l.w = ps.create(prefix + ".w", Shape{in, out}, std::move(wv));
  l.b = ps.create(prefix + ".b", Shape{out}, std::vector<double>(out, 0.0));
  return l;
}

Tensor Linear::apply(const Tensor& x) const {
  if (x.dim(-1) != in)
    throw ShapeError("linear input " + shape_str(x.shape()) + " expects last dim " +
                     std::to_string(in));
  Shape orig = x.shape();
  Tensor flat = x.ndim() == 2 ? x : reshape(x, Shape{-1, in});
  Tensor y = add(matmul(flat, w), b);
  if (orig.size() != 2) {
    Shape oshape = orig;
    oshape.back() = out;
    y = reshape(y, oshape);
  }
  return y;
}

Mlp Mlp::create(ParamStore& ps, const std::string& prefix,
                const std::vector<int64_t>& dims, Rng& rng,
                bool zero_init_last) {
  if (dims.size() < 2) throw ConfigError("mlp needs at least two dims");
  Mlp m;
  for (size_t i = 0; i + 1 < dims.size(); ++i) {
    bool last = i + 2 == dims.size();
    m.layers.push_back(Linear::create(ps, prefix + "." + std::to_string(i),
                                      dims[i], dims[i + 1], rng,
                                      zero_init_last && last));
  }
  return m;
}

Tensor Mlp::apply(const Tensor& x) const {
  Tensor h = x;
  for (size_t i = 0; i < layers.size(); ++i) {
    h = layers[i].apply(h);
    if (i + 1 < layers.size()) h = relu(h);
  }
  return h;
}

Conv3 Conv3::create(ParamStore& ps, const std::string& prefix, int64_t in,
                    int64_t out, Rng& rng, double bias_init) {
  Conv3 c;
  c.w = ps.create(prefix + ".w", Shape{3, 3, in, out},
                  xavier_uniform(9 * in, 9 * out, 9 * in * out, rng));
  c.b = ps.create(prefix + ".b", Shape{out},
                  std::vector<double>(out, bias_init));
  return c;
}

Tensor Conv3::apply(const Tensor& x) const {
  return conv3x3_reflect(x, w, b);
}

Adam::Adam(ParamStore& params, AdamConfig cfg) : params_(params), cfg_(cfg) {
  for (const auto& [name, t] : params_.items()) {
    m_.emplace_back(t.size(), 0.0);
    v_.emplace_back(t.size(), 0.0);
  }
}

double Adam::step() {
  if (m_.size() != params_.size())
    throw ConfigError("optimizer state does not match parameter store");
  double sq = 0.0;
  for (const auto& [name, t] : params_.items()) {
    if (!t.has_grad())
      throw NumericError("missing gradient for parameter '" + name + "'");
    for (double g : t.grad()) sq += g * g;
  }
  double norm = std::sqrt(sq);
  if (!std::isfinite(norm))
    throw NumericError("non-finite gradient norm in optimizer step");
  double scale = 1.0;
  if (cfg_.clip_norm > 0 && norm > cfg_.clip_norm)
    scale = cfg_.clip_norm / norm;

  ++t_;
  double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    Tensor t = params_.items()[i].second;  // handle copy, same storage
    const auto& g = t.grad();
    auto& val = t.data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (size_t j = 0; j < g.size(); ++j) {
      double gj = g[j] * scale;
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
      double mh = m[j] / bc1;
      double vh = v[j] / bc2;
      val[j] -= cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps);
    }
  }
  return norm;
}

}  // namespace dynkit::diff
