#pragma once

// Per-frame residual CNN with total stride 4 producing features on the DiT latent grid.

#include <string>
#include <vector>

#include "ditracker/layers.hpp"
#include "ditracker/video.hpp"

namespace ditracker {

template <typename T>
struct ConvFeatures {
  GridShape shape;  // frames x H/4 x W/4
  Var<T> phi;       // (frames * h * w) x channels
};

template <typename T>
struct Conv2d {
  Var<T> weight;  // (k * k * cin) x cout
  Var<T> bias;
  ad::ConvGeometry geo;

  Conv2d() = default;
  Conv2d(ParameterSet<T>& params, Initializer& init, const std::string& name, Index cin, Index cout, Index kernel, Index stride) {
    geo = {kernel, stride, kernel / 2};
    const double bound = std::sqrt(6.0 / static_cast<double>(kernel * kernel * cin));  // He-uniform
    weight = params.add(name + ".weight", init.uniform<T>(kernel * kernel * cin, cout, bound));
    bias = params.add(name + ".bias", Matrix<T>::Zero(1, cout));
  }
  Var<T> operator()(const Var<T>& x, const GridShape& in, GridShape* out) const { return ad::conv2d(x, in, weight, bias, geo, out); }
};

template <typename T>
struct InstanceNorm {
  Var<T> gain, bias;
  InstanceNorm() = default;
  InstanceNorm(ParameterSet<T>& params, const std::string& name, Index channels) {
    gain = params.add(name + ".gain", Matrix<T>::Ones(1, channels));
    bias = params.add(name + ".bias", Matrix<T>::Zero(1, channels));
  }
  Var<T> operator()(const Var<T>& x, const GridShape& s) const { return ad::instance_norm(x, s.frames, gain, bias); }
};

template <typename T>
struct ResidualBlock {
  Conv2d<T> conv1, conv2, skip;
  InstanceNorm<T> norm1, norm2, norm_skip;
  bool has_skip = false;

  ResidualBlock() = default;
  ResidualBlock(ParameterSet<T>& params, Initializer& init, const std::string& name, Index cin, Index cout, Index stride) :
      conv1(params, init, name + ".conv1", cin, cout, 3, stride),
      conv2(params, init, name + ".conv2", cout, cout, 3, 1),
      norm1(params, name + ".norm1", cout),
      norm2(params, name + ".norm2", cout),
      has_skip(stride != 1 || cin != cout) {
    if (has_skip) {
      skip = Conv2d<T>(params, init, name + ".skip", cin, cout, 1, stride);
      norm_skip = InstanceNorm<T>(params, name + ".norm_skip", cout);
    }
  }

  Var<T> operator()(const Var<T>& x, const GridShape& in, GridShape* out) const {
    GridShape s1, s2;
    Var<T> h = ad::relu(norm1(conv1(x, in, &s1), s1));
    h = norm2(conv2(h, s1, &s2), s2);
    Var<T> shortcut = x;
    if (has_skip) {
      GridShape ss;
      shortcut = norm_skip(skip(x, in, &ss), ss);
    }
    *out = s2;
    return ad::relu(h + shortcut);
  }
};

/// Four residual blocks (strides 2-2-1-1) and a 1x1 output projection to `channels`.
template <typename T>
class ConvBackbone {
 public:
  static constexpr Index kStride = 4;

  ConvBackbone() = default;
  ConvBackbone(ParameterSet<T>& params, std::uint64_t seed, Index channels = 64, const std::string& prefix = "conv") {
    Initializer init(seed);
    const std::array<Index, 5> widths{3, 32, 64, channels, channels};
    const std::array<Index, 4> strides{2, 2, 1, 1};
    for (std::size_t b = 0; b < 4; ++b) {
      blocks_.emplace_back(params, init, prefix + ".block" + std::to_string(b), widths[b], widths[b + 1], strides[b]);
    }
    out_ = Conv2d<T>(params, init, prefix + ".out", channels, channels, 1, 1);
    channels_ = channels;
  }

  Index channels() const { return channels_; }

  ConvFeatures<T> operator()(const Video& video) const {
    require(video.height % kStride == 0 && video.width % kStride == 0, "conv_extract: frame size not divisible by the stride");
    Matrix<T> px = video.to_matrix<T>();
    px = (px.array() * T(2) - T(1)).matrix();
    Var<T> x = Var<T>::constant(std::move(px));
    GridShape shape = video.shape();
    for (const auto& block : blocks_) {
      GridShape next;
      x = block(x, shape, &next);
      shape = next;
    }
    GridShape s;
    x = out_(x, shape, &s);
    return {s, x};
  }

 private:
  std::vector<ResidualBlock<T>> blocks_;
  Conv2d<T> out_;
  Index channels_ = 0;
};

}  // namespace ditracker
