#pragma once

// Multi-iteration supervision: Huber track loss, visibility BCE and confidence BCE.

#include <cmath>
#include <vector>

#include <nlohmann/json.hpp>

#include "ditracker/refiner.hpp"

namespace ditracker {

struct LossConfig {
  double huber_threshold = 6.0;
  double occluded_weight = 0.2;
  double gamma = 0.8;
  double conf_radius = 12.0;

  nlohmann::json to_json() const {
    return {{"huber_threshold", huber_threshold}, {"occluded_weight", occluded_weight}, {"gamma", gamma}, {"conf_radius", conf_radius}};
  }
  static LossConfig from_json(const nlohmann::json& j) {
    LossConfig c;
    c.huber_threshold = j.value("huber_threshold", c.huber_threshold);
    c.occluded_weight = j.value("occluded_weight", c.occluded_weight);
    c.gamma = j.value("gamma", c.gamma);
    c.conf_radius = j.value("conf_radius", c.conf_radius);
    require(c.huber_threshold > 0 && c.occluded_weight >= 0 && c.gamma > 0 && c.gamma <= 1 && c.conf_radius > 0, "LossConfig: invalid values");
    return c;
  }
};

/// Ground truth in estimate row order.
template <typename T>
struct TrackTargets {
  Matrix<T> positions;  // N x 2
  Vector<T> visible;    // N, 0 or 1
};

/// {gamma^{T-1}, ..., gamma^0} for iterations 1..T.
inline std::vector<double> gamma_weights(std::size_t iterations, double gamma) {
  std::vector<double> w(iterations);
  for (std::size_t t = 0; t < iterations; ++t) w[t] = std::pow(gamma, static_cast<double>(iterations - 1 - t));
  return w;
}

namespace detail {
template <typename T>
void check_estimates(const std::vector<TrackEstimate<T>>& est, const TrackTargets<T>& gt) {
  require(!est.empty(), "loss: no iteration estimates");
  require(gt.positions.cols() == 2 && gt.visible.size() == gt.positions.rows(), "loss: malformed targets");
  for (const auto& e : est) require(e.positions.rows() == gt.positions.rows(), "loss: estimate and target lengths differ");
}
}  // namespace detail

template <typename T>
Var<T> track_loss(const std::vector<TrackEstimate<T>>& est, const TrackTargets<T>& gt, const LossConfig& cfg = {}) {
  detail::check_estimates(est, gt);
  const Vector<T> w = (gt.visible.array() + (T(1) - gt.visible.array()) * static_cast<T>(cfg.occluded_weight)).matrix();
  const auto g = gamma_weights(est.size(), cfg.gamma);
  Var<T> total;
  for (std::size_t t = 0; t < est.size(); ++t) {
    const Var<T> term = ad::scale(ad::huber_rows(est[t].positions, gt.positions, w, static_cast<T>(cfg.huber_threshold)), static_cast<T>(g[t]));
    total = total.defined() ? total + term : term;
  }
  return total;
}

template <typename T>
Var<T> vis_loss(const std::vector<TrackEstimate<T>>& est, const TrackTargets<T>& gt, const LossConfig& cfg = {}) {
  detail::check_estimates(est, gt);
  const auto g = gamma_weights(est.size(), cfg.gamma);
  Var<T> total;
  for (std::size_t t = 0; t < est.size(); ++t) {
    const Var<T> term = ad::scale(ad::bce_with_logits(est[t].vis_logits, gt.visible), static_cast<T>(g[t]));
    total = total.defined() ? total + term : term;
  }
  return total;
}

/// Labels 1[||P^(t) - P_gt|| < radius], recomputed from each iteration's own positions.
template <typename T>
Vector<T> confidence_labels(const Matrix<T>& positions, const Matrix<T>& target, double radius) {
  Vector<T> labels(positions.rows());
  for (Index i = 0; i < positions.rows(); ++i) labels(i) = (positions.row(i) - target.row(i)).norm() < static_cast<T>(radius) ? T(1) : T(0);
  return labels;
}

template <typename T>
Var<T> conf_loss(const std::vector<TrackEstimate<T>>& est, const TrackTargets<T>& gt, const LossConfig& cfg = {}) {
  detail::check_estimates(est, gt);
  const auto g = gamma_weights(est.size(), cfg.gamma);
  Var<T> total;
  for (std::size_t t = 0; t < est.size(); ++t) {
    const Vector<T> labels = confidence_labels<T>(est[t].positions.value(), gt.positions, cfg.conf_radius);
    const Var<T> term = ad::scale(ad::bce_with_logits(est[t].conf_logits, labels), static_cast<T>(g[t]));
    total = total.defined() ? total + term : term;
  }
  return total;
}

template <typename T>
Var<T> total_loss(const std::vector<TrackEstimate<T>>& est, const TrackTargets<T>& gt, const LossConfig& cfg = {}) {
  return track_loss(est, gt, cfg) + vis_loss(est, gt, cfg) + conf_loss(est, gt, cfg);
}

}  // namespace ditracker
