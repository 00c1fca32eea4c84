#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "tubelink/rng.hpp"
#include "tubelink/tensor.hpp"

namespace tubelink {

// Largest |analytic - central difference| / max(1, |analytic|) over the
// coordinates of x, for a scalar-valued f.
inline double finite_difference_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                                      double eps = 1e-6) {
  Tensor leaf(x.shape(), std::vector<double>(x.values().begin(), x.values().end()), true);
  f(leaf).backward();
  std::vector<double> analytic(leaf.size(), 0.0);
  if (leaf.has_grad()) std::copy(leaf.grad().begin(), leaf.grad().end(), analytic.begin());

  double worst = 0.0;
  std::vector<double> probe(x.values().begin(), x.values().end());
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double up = f(Tensor(x.shape(), probe)).item();
    probe[i] = orig - eps;
    const double down = f(Tensor(x.shape(), probe)).item();
    probe[i] = orig;
    const double numeric = (up - down) / (2.0 * eps);
    worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i])));
  }
  return worst;
}

// Same measure for a loss closed over a set of parameter leaves. Parameters are
// perturbed in place and restored. When max_coords_per_param is nonzero, that
// many coordinates are sampled per parameter instead of checking all of them.
inline double finite_difference_check(const std::function<Tensor()>& loss, std::vector<Tensor> params,
                                      double eps = 1e-6, std::size_t max_coords_per_param = 0,
                                      std::uint64_t seed = 0) {
  for (auto& p : params) p.zero_grad();
  loss().backward();
  std::vector<std::vector<double>> analytic;
  for (const auto& p : params) {
    analytic.emplace_back(p.size(), 0.0);
    if (p.has_grad()) std::copy(p.grad().begin(), p.grad().end(), analytic.back().begin());
  }
  Rng rng(seed);
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto values = params[k].mutable_values();
    std::vector<std::size_t> coords(values.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (max_coords_per_param != 0 && coords.size() > max_coords_per_param) {
      for (std::size_t i = 0; i < max_coords_per_param; ++i) {
        std::swap(coords[i], coords[i + rng.index(coords.size() - i)]);
      }
      coords.resize(max_coords_per_param);
    }
    for (std::size_t i : coords) {
      const double orig = values[i];
      values[i] = orig + eps;
      const double up = loss().item();
      values[i] = orig - eps;
      const double down = loss().item();
      values[i] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[k][i];
      worst = std::max(worst, std::abs(a - numeric) / std::max(1.0, std::abs(a)));
    }
  }
  for (auto& p : params) p.zero_grad();
  return worst;
}

}  // namespace tubelink
