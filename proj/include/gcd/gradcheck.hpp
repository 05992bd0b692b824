#pragma once

// Central finite-difference check of the contrastive gradients, used by the
// `loss-check` command.

#include <algorithm>
#include <cmath>
#include <random>

#include "gcd/contrastive.hpp"

namespace gcd {

struct GradCheckCase {
  std::size_t images = 4;   // B
  std::size_t input_dim = 6;
  std::size_t hidden_dim = 10;
  std::size_t proj_dim = 8; // P
  ContrastiveConfig config;
  Reduction reduction = Reduction::sum;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t n_checked = 0;
};

/// |a - n| / max(|a|, |n|, floor): relative error with a floor so that
/// components that are numerically zero do not blow up the ratio.
inline double relative_error(double analytic, double numeric, double floor = 1e-3) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

inline GradCheckResult check_head_gradient(const GradCheckCase& c, double step = 1e-5) {
  std::mt19937_64 rng(derive_seed(c.seed, "gradcheck"));
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);
  ProjectionHead head(c.input_dim, c.hidden_dim, c.proj_dim, derive_seed(c.seed, "gradcheck-head"));
  Matrix inputs(2 * c.images, c.input_dim);
  for (double& v : inputs.values()) v = gauss(rng);
  std::vector<std::optional<Label>> labels(c.images);
  for (auto& l : labels) {
    if (coin(rng)) l = static_cast<Label>(std::uniform_int_distribution<int>(0, 2)(rng));
  }
  const HeadGradient g = grad_total_loss(head, inputs, labels, c.config, c.reduction);

  GradCheckResult r;
  auto params = head.parameters();
  for (std::size_t j = 0; j < params.size(); ++j) {
    const double saved = params[j];
    params[j] = saved + step;
    const double up = grad_total_loss(head, inputs, labels, c.config, c.reduction).loss;
    params[j] = saved - step;
    const double down = grad_total_loss(head, inputs, labels, c.config, c.reduction).loss;
    params[j] = saved;
    const double numeric = (up - down) / (2.0 * step);
    r.max_rel_error = std::max(r.max_rel_error, relative_error(g.params[j], numeric));
    ++r.n_checked;
  }
  return r;
}

}  // namespace gcd
