#pragma once

// Estimating the number of classes: cluster all points with plain k-means for
// a candidate k, score the clustering by Hungarian accuracy on the labelled
// points only, and maximise that score over k with Brent's method.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "gcd/accuracy.hpp"
#include "gcd/feature_io.hpp"
#include "gcd/kmeans.hpp"

namespace gcd {

struct ScoreOptions {
  std::size_t kmeans_restarts = 1;  // best-of-n inside each scored run
  std::size_t seeding_trials = 0;   // see KMeansConfig
  std::size_t max_iters = 300;
  double tol = 1e-6;
};

struct KSearchConfig {
  std::size_t k_min = 2;
  std::size_t k_max = 100;
  std::size_t max_evals = 25;
  std::size_t restarts_per_eval = 3;
  std::uint64_t seed = 0;
  ScoreOptions score;
};

struct KScoreTrace {
  std::vector<std::pair<std::size_t, double>> evaluations;  // in evaluation order
  std::size_t best_k = 0;
  double best_score = 0.0;
};

/// Mean labelled-subset accuracy of `restarts` independent k-means runs over
/// all points. Run r uses seed derive_seed(derive_seed(seed, k), r), so the
/// score of a given k does not depend on which other k were evaluated.
inline double score_k(const GcdDataset& data, std::size_t k, std::size_t restarts, std::uint64_t seed,
                      const ScoreOptions& opts = {}) {
  if (restarts == 0) throw Error(ErrorKind::invalid_config, "restarts must be >= 1");
  const auto labelled = data.labelled_indices();
  if (labelled.empty()) throw Error(ErrorKind::invalid_input, "scoring k needs labelled points");
  std::vector<Label> y_true;
  y_true.reserve(labelled.size());
  for (std::size_t i : labelled) y_true.push_back(*data.labels()[i]);

  const std::uint64_t k_seed = derive_seed(seed, static_cast<std::uint64_t>(k));
  double total = 0.0;
  std::vector<Label> y_pred(labelled.size());
  for (std::size_t r = 0; r < restarts; ++r) {
    KMeansConfig cfg;
    cfg.k = k;
    cfg.max_iters = opts.max_iters;
    cfg.tol = opts.tol;
    cfg.n_restarts = opts.kmeans_restarts;
    cfg.seeding_trials = opts.seeding_trials;
    cfg.seed = derive_seed(k_seed, static_cast<std::uint64_t>(r));
    const ClusterModel m = kmeans_fit(data.features(), cfg);
    for (std::size_t j = 0; j < labelled.size(); ++j) y_pred[j] = static_cast<Label>(m.assignments[labelled[j]]);
    total += clustering_accuracy(y_true, y_pred).acc;
  }
  return total / static_cast<double>(restarts);
}

namespace detail {

class MemoizedObjective {
 public:
  MemoizedObjective(const std::function<double(std::size_t)>& f, std::size_t lo, std::size_t hi, std::size_t budget)
      : f_(f), lo_(lo), hi_(hi), budget_(budget) {}

  std::optional<double> at(std::size_t k) {
    k = std::clamp(k, lo_, hi_);
    if (auto it = memo_.find(k); it != memo_.end()) return it->second;
    if (memo_.size() >= budget_) return std::nullopt;
    const double v = f_(k);
    memo_.emplace(k, v);
    trace_.evaluations.emplace_back(k, v);
    return v;
  }

  std::optional<double> at_real(double x) {
    const double r = std::clamp(std::round(x), static_cast<double>(lo_), static_cast<double>(hi_));
    return at(static_cast<std::size_t>(r));
  }

  bool known(std::size_t k) const { return memo_.count(k) > 0; }
  bool exhausted() const { return memo_.size() >= budget_; }
  void set_budget(std::size_t b) { budget_ = b; }

  // Largest score, smallest k on ties.
  std::size_t argmax() const {
    std::size_t best = memo_.begin()->first;
    double best_v = memo_.begin()->second;
    for (const auto& [k, v] : memo_) {
      if (v > best_v) {
        best_v = v;
        best = k;
      }
    }
    return best;
  }

  // Every evaluated k whose score equals the best, ascending.
  std::vector<std::size_t> tied_for_best() const {
    const double best_v = memo_.at(argmax());
    std::vector<std::size_t> out;
    for (const auto& [k, v] : memo_) {
      if (v == best_v) out.push_back(k);
    }
    return out;
  }

  KScoreTrace finish() {
    trace_.best_k = argmax();
    trace_.best_score = memo_.at(trace_.best_k);
    return std::move(trace_);
  }

 private:
  const std::function<double(std::size_t)>& f_;
  std::size_t lo_, hi_, budget_;
  std::map<std::size_t, double> memo_;
  KScoreTrace trace_;
};

}  // namespace detail

/// Maximises an integer black box on [k_min, k_max] using Brent's method
/// (golden section plus parabolic interpolation) on the continuous relaxation,
/// evaluating f only at rounded integers and never twice at the same one.
///
/// Both endpoints are scored first. Brent stops once the bracket is narrower
/// than one integer; a final neighbour walk around every point tied for the
/// best score then resolves rounding and flat tops. At most max_evals distinct evaluations.
inline KScoreTrace brent_maximize(const std::function<double(std::size_t)>& f, std::size_t k_min,
                                  std::size_t k_max, std::size_t max_evals) {
  if (k_min > k_max) throw Error(ErrorKind::invalid_config, "k_min must not exceed k_max");
  if (max_evals < 1 || (k_min < k_max && max_evals < 3)) {
    throw Error(ErrorKind::invalid_config, "max_evals must be >= 3");
  }
  detail::MemoizedObjective obj(f, k_min, k_max, max_evals);
  obj.at(k_min);
  if (k_max == k_min) return obj.finish();
  obj.at(k_max);

  if (k_max - k_min >= 2) {
    // Leave two evaluations for the neighbour check.
    obj.set_budget(std::max<std::size_t>(3, max_evals - 2));
    constexpr double kGold = 0.3819660112501051;  // (3 - sqrt 5) / 2
    constexpr double kStep = 0.5;                 // minimal move: half an integer
    constexpr int kMaxIter = 200;
    double a = static_cast<double>(k_min), b = static_cast<double>(k_max);
    double x = a + kGold * (b - a);
    double w = x, v = x;
    auto g = [&](double t) -> std::optional<double> {
      auto r = obj.at_real(t);
      if (!r) return std::nullopt;
      return -*r;
    };
    auto gx = g(x);
    if (gx) {
      double fx = *gx, fw = fx, fv = fx;
      double d = 0.0, e = 0.0;
      for (int iter = 0; iter < kMaxIter && b - a >= 1.0; ++iter) {
        const double xm = 0.5 * (a + b);
        bool golden = true;
        if (std::abs(e) > kStep) {
          double r = (x - w) * (fx - fv);
          double q = (x - v) * (fx - fw);
          double p = (x - v) * q - (x - w) * r;
          q = 2.0 * (q - r);
          if (q > 0.0) p = -p;
          q = std::abs(q);
          const double e_prev = e;
          e = d;
          if (std::abs(p) < std::abs(0.5 * q * e_prev) && p > q * (a - x) && p < q * (b - x)) {
            d = p / q;
            const double u = x + d;
            if (u - a < 2 * kStep || b - u < 2 * kStep) d = xm >= x ? kStep : -kStep;
            golden = false;
          }
        }
        if (golden) {
          e = x >= xm ? a - x : b - x;
          d = kGold * e;
        }
        const double u = std::abs(d) >= kStep ? x + d : x + (d >= 0 ? kStep : -kStep);
        const auto gu = g(u);
        if (!gu) break;
        const double fu = *gu;
        if (fu <= fx) {
          (u >= x ? a : b) = x;
          v = w;
          fv = fw;
          w = x;
          fw = fx;
          x = u;
          fx = fu;
        } else {
          (u < x ? a : b) = u;
          if (fu <= fw || w == x) {
            v = w;
            fv = fw;
            w = u;
            fw = fu;
          } else if (fu <= fv || v == x || v == w) {
            v = u;
            fv = fu;
          }
        }
      }
    }
    obj.set_budget(max_evals);
  }

  // Walk outwards from every point tied for best, so a flat top is explored
  // to its edges before the budget runs out.
  bool progressed = true;
  while (progressed && !obj.exhausted()) {
    progressed = false;
    for (std::size_t best : obj.tied_for_best()) {
      for (std::size_t nb : {best - 1, best + 1}) {
        if ((best == k_min && nb == best - 1) || nb > k_max || obj.known(nb) || obj.exhausted()) continue;
        obj.at(nb);
        progressed = true;
      }
      if (progressed) break;  // the tie set may have changed
    }
  }
  return obj.finish();
}

inline KScoreTrace estimate_k(const GcdDataset& data, const KSearchConfig& config) {
  if (config.k_max < config.k_min) throw Error(ErrorKind::invalid_config, "k_max must be >= k_min");
  if (data.labelled_indices().empty()) throw Error(ErrorKind::invalid_input, "estimating k needs labelled points");
  const std::size_t floor_k = std::max<std::size_t>(2, data.y_l().size());
  if (config.k_min < floor_k) {
    throw Error(ErrorKind::invalid_config, "k_min must be >= max(2, |Y_L|) = " + std::to_string(floor_k));
  }
  if (config.k_max > data.size()) throw Error(ErrorKind::invalid_config, "k_max exceeds the number of points");
  if (config.restarts_per_eval == 0) throw Error(ErrorKind::invalid_config, "restarts_per_eval must be >= 1");
  const std::function<double(std::size_t)> f = [&](std::size_t k) {
    return score_k(data, k, config.restarts_per_eval, config.seed, config.score);
  };
  return brent_maximize(f, config.k_min, config.k_max, config.max_evals);
}

/// Scores every k in [k_min, k_max]; used for curve files.
inline KScoreTrace scan_k(const GcdDataset& data, const KSearchConfig& config) {
  KScoreTrace t;
  for (std::size_t k = config.k_min; k <= config.k_max; ++k) {
    const double s = score_k(data, k, config.restarts_per_eval, config.seed, config.score);
    t.evaluations.emplace_back(k, s);
    if (t.evaluations.size() == 1 || s > t.best_score) {
      t.best_k = k;
      t.best_score = s;
    }
  }
  return t;
}

inline std::string trace_to_csv(const KScoreTrace& t) {
  auto rows = t.evaluations;
  std::sort(rows.begin(), rows.end());
  std::string out = "k,score\n";
  for (const auto& [k, s] : rows) out += std::to_string(k) + ',' + detail::format_double(s) + '\n';
  return out;
}

inline nlohmann::json trace_summary(const KScoreTrace& t) {
  nlohmann::json evals = nlohmann::json::array();
  for (const auto& [k, s] : t.evaluations) evals.push_back({{"k", k}, {"score", s}});
  return {{"best_k", t.best_k}, {"best_score", t.best_score}, {"evals", evals}};
}

}  // namespace gcd
