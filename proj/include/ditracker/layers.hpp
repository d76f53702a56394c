#pragma once

#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "ditracker/ops.hpp"

namespace ditracker {

using ad::Var;

/// Named parameter registry shared by all modules of a model. Entries alias the module-held
/// Vars, so updates through the set are visible to the modules.
template <typename T>
class ParameterSet {
 public:
  struct Entry {
    std::string name;
    Var<T> var;
    bool trainable = true;
  };

  Var<T> add(const std::string& name, Matrix<T> value, bool trainable = true) {
    require(!index_.contains(name), "ParameterSet: duplicate parameter " + name);
    Var<T> v(std::move(value), trainable);
    index_[name] = entries_.size();
    entries_.push_back({name, v, trainable});
    return v;
  }

  void set_trainable(const std::string& name, bool trainable) {
    auto& e = entries_.at(index_.at(name));
    e.trainable = trainable;
    e.var.set_requires_grad(trainable);
  }
  void freeze_all() {
    for (auto& e : entries_) {
      e.trainable = false;
      e.var.set_requires_grad(false);
    }
  }

  bool contains(const std::string& name) const { return index_.contains(name); }
  const Entry& at(const std::string& name) const { return entries_.at(index_.at(name)); }
  Var<T> get(const std::string& name) const { return at(name).var; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }

  Index trainable_count() const {
    Index n = 0;
    for (const auto& e : entries_)
      if (e.trainable) n += e.var.size();
    return n;
  }
  Index total_count() const {
    Index n = 0;
    for (const auto& e : entries_) n += e.var.size();
    return n;
  }
  void zero_grad() {
    for (auto& e : entries_) e.var.zero_grad();
  }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

/// Deterministic initializers; values are drawn in double so float and double models built from
/// the same seed agree up to rounding.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  template <typename T>
  Matrix<T> uniform(Index rows, Index cols, double bound) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    Matrix<T> m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(dist(rng_));
    return m;
  }
  template <typename T>
  Matrix<T> normal(Index rows, Index cols, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    Matrix<T> m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(dist(rng_));
    return m;
  }
  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

template <typename T>
struct Linear {
  Var<T> weight;  // in x out
  Var<T> bias;    // 1 x out

  Linear() = default;
  Linear(ParameterSet<T>& params, Initializer& init, const std::string& name, Index in, Index out, double gain = 1.0) {
    const double bound = gain / std::sqrt(static_cast<double>(in));
    weight = params.add(name + ".weight", init.uniform<T>(in, out, bound));
    bias = params.add(name + ".bias", init.uniform<T>(1, out, bound));
  }

  Var<T> operator()(const Var<T>& x) const { return ad::add_row(ad::matmul(x, weight), bias); }
  Index in_features() const { return weight.rows(); }
  Index out_features() const { return weight.cols(); }
};

template <typename T>
struct LayerNorm {
  Var<T> gain;
  Var<T> bias;

  LayerNorm() = default;
  LayerNorm(ParameterSet<T>& params, const std::string& name, Index width) {
    gain = params.add(name + ".gain", Matrix<T>::Ones(1, width));
    bias = params.add(name + ".bias", Matrix<T>::Zero(1, width));
  }
  Var<T> operator()(const Var<T>& x) const { return ad::layer_norm(x, gain, bias); }
};

/// Two-layer perceptron with a GELU between the layers.
template <typename T>
struct Mlp {
  Linear<T> fc1;
  Linear<T> fc2;

  Mlp() = default;
  Mlp(ParameterSet<T>& params, Initializer& init, const std::string& name, Index in, Index hidden, Index out) :
      fc1(params, init, name + ".fc1", in, hidden), fc2(params, init, name + ".fc2", hidden, out) {}

  Var<T> operator()(const Var<T>& x) const { return fc2(ad::gelu(fc1(x))); }
};

/// Pre-norm transformer block whose attention is restricted to row groups.
template <typename T>
struct GroupedBlock {
  LayerNorm<T> norm1;
  Linear<T> qkv;
  Linear<T> proj;
  LayerNorm<T> norm2;
  Mlp<T> mlp;
  Index heads = 1;

  GroupedBlock() = default;
  GroupedBlock(ParameterSet<T>& params, Initializer& init, const std::string& name, Index width, Index heads_, Index mlp_ratio = 4) :
      norm1(params, name + ".norm1", width),
      qkv(params, init, name + ".qkv", width, 3 * width),
      proj(params, init, name + ".proj", width, width),
      norm2(params, name + ".norm2", width),
      mlp(params, init, name + ".mlp", width, mlp_ratio * width, width),
      heads(heads_) {}

  Var<T> operator()(const Var<T>& x, const std::vector<std::vector<Index>>& groups) const {
    const Index w = x.cols();
    const Var<T> h = qkv(norm1(x));
    const Var<T> a = ad::grouped_attention(ad::slice_cols(h, 0, w), ad::slice_cols(h, w, w), ad::slice_cols(h, 2 * w, w), heads, groups);
    const Var<T> x1 = x + proj(a);
    return x1 + mlp(norm2(x1));
  }
};

/// Sinusoidal embedding of a scalar position, width `dim` (even): [sin(p w_k), cos(p w_k)].
template <typename T>
RowVector<T> sinusoid(double position, Index dim, double max_period = 10000.0) {
  RowVector<T> e(dim);
  const Index half = dim / 2;
  for (Index k = 0; k < half; ++k) {
    const double freq = std::exp(-std::log(max_period) * static_cast<double>(k) / static_cast<double>(std::max<Index>(half, 1)));
    e(2 * k) = static_cast<T>(std::sin(position * freq));
    e(2 * k + 1) = static_cast<T>(std::cos(position * freq));
  }
  if (dim % 2 == 1) e(dim - 1) = T(0);
  return e;
}

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;  // global gradient-norm clip; <= 0 disables
};

/// Adam over the trainable entries of a ParameterSet, with optional global-norm clipping.
template <typename T>
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  /// Applies one update with learning rate `lr` and returns the pre-clip gradient norm.
  double step(ParameterSet<T>& params, double lr) {
    double sq = 0.0;
    for (auto& e : params.entries()) {
      if (e.trainable && e.var.has_grad()) sq += static_cast<double>(e.var.grad().squaredNorm());
    }
    const double norm = std::sqrt(sq);
    const double clip = (config_.clip_norm > 0.0 && norm > config_.clip_norm) ? config_.clip_norm / norm : 1.0;
    ++steps_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
    for (auto& e : params.entries()) {
      if (!e.trainable || !e.var.has_grad()) continue;
      auto& state = state_[e.name];
      if (state.m.size() == 0) {
        state.m = Matrix<T>::Zero(e.var.rows(), e.var.cols());
        state.v = Matrix<T>::Zero(e.var.rows(), e.var.cols());
      }
      const Matrix<T> g = e.var.grad() * static_cast<T>(clip);
      state.m = static_cast<T>(config_.beta1) * state.m + static_cast<T>(1.0 - config_.beta1) * g;
      state.v = static_cast<T>(config_.beta2) * state.v + static_cast<T>(1.0 - config_.beta2) * g.cwiseAbs2();
      if (lr == 0.0) continue;
      const T step_size = static_cast<T>(lr / bc1);
      const T denom_scale = static_cast<T>(1.0 / std::sqrt(bc2));
      e.var.mutable_value().array() -=
          step_size * state.m.array() / (state.v.array().sqrt() * denom_scale + static_cast<T>(config_.eps));
    }
    return norm;
  }

  long steps() const { return steps_; }

 private:
  struct State {
    Matrix<T> m;
    Matrix<T> v;
  };
  AdamConfig config_;
  std::map<std::string, State> state_;
  long steps_ = 0;
};

/// Linear warmup followed by cosine decay to `final_fraction * base`.
inline double cosine_lr(double base, long step, long total, long warmup = 0, double final_fraction = 0.05) {
  if (total <= 0) return base;
  if (warmup > 0 && step < warmup) return base * static_cast<double>(step + 1) / static_cast<double>(warmup);
  const double progress = std::clamp(static_cast<double>(step - warmup) / static_cast<double>(std::max<long>(1, total - warmup)), 0.0, 1.0);
  const double pi = 3.14159265358979323846;
  return base * (final_fraction + (1.0 - final_fraction) * 0.5 * (1.0 + std::cos(pi * progress)));
}

}  // namespace ditracker
