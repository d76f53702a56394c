#pragma once

#include <functional>
#include <random>
#include <vector>

#include "ditracker/ops.hpp"

namespace ditracker::testing {

using ad::Var;

inline Matrix<double> random_matrix(Index r, Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix<double> m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

/// Max relative error between analytic and central-difference gradients of
/// sum(f(inputs) .* R) for a fixed random R.
inline double gradcheck(const std::function<Var<double>(const std::vector<Var<double>>&)>& f, std::vector<Matrix<double>> inputs,
                        std::uint64_t seed = 1, double step = 1e-6) {
  std::mt19937_64 rng(seed);
  std::vector<Var<double>> vars;
  for (auto& m : inputs) vars.emplace_back(m, true);
  const Var<double> probe = f(vars);
  const Matrix<double> r = random_matrix(probe.rows(), probe.cols(), rng);
  auto scalar = [&](const std::vector<Var<double>>& v) { return ad::sum(ad::cwise_product(f(v), Var<double>::constant(r))); };
  ad::backward(scalar(vars));
  double worst = 0.0;
  for (std::size_t k = 0; k < vars.size(); ++k) {
    for (Index i = 0; i < inputs[k].size(); ++i) {
      auto eval = [&](double delta) {
        std::vector<Var<double>> pv;
        for (std::size_t j = 0; j < inputs.size(); ++j) {
          Matrix<double> m = inputs[j];
          if (j == k) m.data()[i] += delta;
          pv.push_back(Var<double>::constant(m));
        }
        return scalar(pv).item();
      };
      const double numeric = (eval(step) - eval(-step)) / (2 * step);
      const double analytic = vars[k].has_grad() ? vars[k].grad().data()[i] : 0.0;
      const double err = std::abs(numeric - analytic) / std::max(1.0, std::abs(numeric) + std::abs(analytic));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace ditracker::testing
