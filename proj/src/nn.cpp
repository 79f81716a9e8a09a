#include "mulsmo/nn.hpp"

#include <cmath>
#include <cstdio>

namespace mulsmo {

std::uint64_t fnv1a(const void* data, std::size_t bytes, std::uint64_t seed) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < bytes; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t fnv1a(const std::string& s) { return fnv1a(s.data(), s.size()); }

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace

Rng Rng::fork(std::uint64_t stream) const { return Rng(splitmix64(seed_ ^ splitmix64(stream + 1))); }

Mat Rng::normal_matrix(Eigen::Index rows, Eigen::Index cols, double stddev) {
  Mat m(rows, cols);
  // Fill in row-major order so the draw sequence matches the on-disk layout.
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = normal() * stddev;
  }
  return m;
}

Var ParamStore::add(const std::string& name, Mat init) {
  if (contains(name)) throw std::invalid_argument("ParamStore: duplicate parameter " + name);
  Var v = ad::leaf(std::move(init));
  v.set_requires_grad(!frozen_);
  entries_.push_back({name, v});
  return v;
}

Var ParamStore::get(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e.var;
  }
  throw std::out_of_range("ParamStore: no parameter " + name);
}

bool ParamStore::contains(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return true;
  }
  return false;
}

void ParamStore::set_frozen(bool frozen) {
  frozen_ = frozen;
  for (auto& e : entries_) {
    e.var.set_requires_grad(!frozen);
    e.var.zero_grad();
  }
}

void ParamStore::zero_grad() {
  for (auto& e : entries_) e.var.zero_grad();
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += static_cast<std::size_t>(e.var.value().size());
  return n;
}

std::uint64_t ParamStore::hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& e : entries_) {
    h = fnv1a(e.name.data(), e.name.size(), h);
    const Mat& m = e.var.value();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        const double x = m(r, c);
        h = fnv1a(&x, sizeof(x), h);
      }
    }
  }
  return h;
}

Linear::Linear(ParamStore& store, const std::string& name, Eigen::Index in, Eigen::Index out,
               Rng& rng, bool zero_init) {
  if (zero_init) {
    weight = store.add(name + ".weight", Mat::Zero(in, out));
  } else {
    weight = store.add(name + ".weight", rng.normal_matrix(in, out, 1.0 / std::sqrt(double(in))));
  }
  bias = store.add(name + ".bias", Mat::Zero(1, out));
}

Var Linear::operator()(const Var& x) const { return ad::add_row(ad::matmul(x, weight), bias); }

LayerNorm::LayerNorm(ParamStore& store, const std::string& name, Eigen::Index width) {
  gain = store.add(name + ".gain", Mat::Ones(1, width));
  bias = store.add(name + ".bias", Mat::Zero(1, width));
}

Var LayerNorm::operator()(const Var& x) const { return ad::layer_norm(x, gain, bias); }

TransformerBlock::TransformerBlock(ParamStore& store, const std::string& name, Eigen::Index width,
                                   int heads_, Eigen::Index ff_width, Rng& rng)
    : ln1(store, name + ".ln1", width),
      ln2(store, name + ".ln2", width),
      q(store, name + ".q", width, width, rng),
      k(store, name + ".k", width, width, rng),
      v(store, name + ".v", width, width, rng),
      o(store, name + ".o", width, width, rng),
      fc1(store, name + ".fc1", width, ff_width, rng),
      fc2(store, name + ".fc2", ff_width, width, rng),
      heads(heads_) {}

Var TransformerBlock::operator()(const Var& x, Eigen::Index tokens) const {
  Var h = ln1(x);
  Var att = ad::attention(q(h), k(h), v(h), tokens, heads);
  Var x1 = ad::add(x, o(att));
  Var h2 = ln2(x1);
  return ad::add(x1, fc2(ad::silu(fc1(h2))));
}

Mlp::Mlp(ParamStore& store, const std::string& name, Eigen::Index in, Eigen::Index hidden,
         Eigen::Index out, Rng& rng)
    : fc1(store, name + ".fc1", in, hidden, rng), fc2(store, name + ".fc2", hidden, out, rng) {}

Var Mlp::operator()(const Var& x) const { return fc2(ad::silu(fc1(x))); }

Mat sinusoidal_embedding(const Eigen::VectorXd& positions, Eigen::Index width) {
  Mat out(positions.size(), width);
  const Eigen::Index half = width / 2;
  for (Eigen::Index i = 0; i < positions.size(); ++i) {
    for (Eigen::Index j = 0; j < half; ++j) {
      const double freq = std::exp(-std::log(10000.0) * double(j) / double(std::max<Eigen::Index>(half, 1)));
      out(i, j) = std::sin(positions(i) * freq);
      out(i, j + half) = std::cos(positions(i) * freq);
    }
    if (width % 2 == 1) out(i, width - 1) = 0.0;
  }
  return out;
}

AdamW::AdamW(ParamStore& store, AdamWConfig config) : store_(store), config_(config) {
  for (const auto& e : store_.entries()) {
    m_.push_back(Mat::Zero(e.var.rows(), e.var.cols()));
    v_.push_back(Mat::Zero(e.var.rows(), e.var.cols()));
  }
}

void AdamW::step() {
  if (store_.frozen()) return;
  auto& entries = store_.entries();
  ++steps_;
  double clip_scale = 1.0;
  if (config_.clip_norm > 0.0) {
    double sq = 0.0;
    for (const auto& e : entries) sq += e.var.grad().squaredNorm();
    const double norm = std::sqrt(sq);
    if (norm > config_.clip_norm) clip_scale = config_.clip_norm / norm;
  }
  const double bc1 = 1.0 - std::pow(config_.beta1, double(steps_));
  const double bc2 = 1.0 - std::pow(config_.beta2, double(steps_));
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Var& var = entries[i].var;
    Mat g = var.grad() * clip_scale;
    m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * g;
    v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * g.cwiseProduct(g);
    Mat& w = var.mutable_value();
    if (config_.lr == 0.0) continue;
    w *= (1.0 - config_.lr * config_.weight_decay);
    w.array() -= config_.lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + config_.eps);
  }
  store_.zero_grad();
}

Var mse(const Var& a, const Var& b) { return ad::mean(ad::square(ad::sub(a, b))); }

}  // namespace mulsmo
