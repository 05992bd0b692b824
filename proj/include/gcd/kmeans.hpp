#pragma once

// k-means with k-means++ seeding, and the semi-supervised variant in which
// labelled points are pinned to the cluster of their class.
//
// Cluster layout for the semi-supervised variant: cluster j < |Y_L| belongs
// to class y_l[j] (ascending class id); clusters |Y_L|..k-1 are seeded from
// unlabelled points.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "gcd/dataset.hpp"

namespace gcd {

struct KMeansConfig {
  std::size_t k = 8;
  std::size_t max_iters = 300;
  double tol = 1e-6;  // max centroid displacement
  std::size_t n_restarts = 10;
  std::uint64_t seed = 0;
  /// Candidates drawn per k-means++ step, keeping the one that lowers the
  /// seeding potential most. 1 = plain k-means++, 0 = 2 + floor(ln k).
  std::size_t seeding_trials = 0;

  std::size_t resolved_seeding_trials() const {
    if (seeding_trials > 0) return seeding_trials;
    return 2 + static_cast<std::size_t>(std::log(static_cast<double>(std::max<std::size_t>(k, 1))));
  }

  void validate() const {
    if (k < 1) throw Error(ErrorKind::invalid_config, "k must be >= 1");
    if (max_iters < 1) throw Error(ErrorKind::invalid_config, "max_iters must be >= 1");
    if (n_restarts < 1) throw Error(ErrorKind::invalid_config, "n_restarts must be >= 1");
    if (!(tol >= 0.0)) throw Error(ErrorKind::invalid_config, "tol must be >= 0");
  }
};

struct ClusterModel {
  Matrix centroids;                      // k x D
  std::vector<std::size_t> assignments;  // per point, in [0, k)
  double inertia = 0.0;
  std::size_t n_iters = 0;
  bool converged = false;
  std::size_t n_reseeds = 0;        // empty clusters repaired by farthest-point reseeding
  bool seeding_fallback = false;    // k-means++ fell back to uniform sampling
  std::vector<double> inertia_trace;    // after every assignment step, then the final value
  std::vector<double> restart_inertias;  // final inertia of every restart
};

struct SeedResult {
  Matrix centroids;
  bool uniform_fallback = false;
};

/// D^2 sampling weights of every candidate against `existing`, normalised.
/// With no existing centroids, or when every weight is zero, the result is
/// uniform.
inline std::vector<double> seeding_probabilities(const Matrix& candidates, const Matrix& existing) {
  const std::size_t n = candidates.rows();
  std::vector<double> p(n, 1.0);
  if (!existing.empty()) {
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < existing.rows(); ++c) {
        best = std::min(best, squared_distance(candidates.row(i), existing.row(c)));
      }
      p[i] = best;
    }
  }
  double total = 0.0;
  for (double w : p) total += w;
  if (total == 0.0) {
    std::fill(p.begin(), p.end(), 1.0);
    total = static_cast<double>(n);
  }
  for (double& w : p) w /= total;
  return p;
}

namespace detail {

// Index drawn with probability d2[i] / total; zero-weight entries are never drawn.
inline std::size_t sample_d2(const std::vector<double>& d2, double total, std::mt19937_64& rng) {
  const double u = std::uniform_real_distribution<double>(0.0, total)(rng);
  double cum = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < d2.size(); ++i) {
    if (d2[i] > 0.0) last_positive = i;
    cum += d2[i];
    if (cum > u) return i;
  }
  return last_positive;
}

}  // namespace detail

/// k-means++ seeding constrained on `existing` centroids: each new centroid is
/// a candidate drawn with probability proportional to its squared distance to
/// the nearest of (existing + already chosen).
inline SeedResult kmeans_pp_seed(const Matrix& candidates, std::size_t n_new, const Matrix& existing,
                                 std::uint64_t seed, std::size_t local_trials = 1) {
  if (n_new == 0) throw Error(ErrorKind::invalid_config, "n_new must be >= 1");
  if (candidates.empty()) throw Error(ErrorKind::invalid_input, "k-means++ candidate pool is empty");
  if (!existing.empty() && existing.cols() != candidates.cols()) {
    throw Error(ErrorKind::invalid_input, "existing centroids have the wrong dimension");
  }
  const std::size_t n = candidates.rows();
  std::mt19937_64 rng(seed);

  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  auto absorb = [&](std::span<const double> centroid) {
    for (std::size_t i = 0; i < n; ++i) d2[i] = std::min(d2[i], squared_distance(candidates.row(i), centroid));
  };
  for (std::size_t c = 0; c < existing.rows(); ++c) absorb(existing.row(c));

  SeedResult out;
  out.centroids = Matrix(0, candidates.cols());
  bool have_any = !existing.empty();
  for (std::size_t s = 0; s < n_new; ++s) {
    std::size_t pick = 0;
    double total = 0.0;
    if (have_any) {
      for (double w : d2) total += w;
    }
    if (!have_any || total == 0.0) {
      if (have_any) out.uniform_fallback = true;
      pick = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    } else {
      double best_potential = std::numeric_limits<double>::infinity();
      for (std::size_t t = 0; t < std::max<std::size_t>(1, local_trials); ++t) {
        const std::size_t cand = detail::sample_d2(d2, total, rng);
        if (local_trials <= 1) {
          pick = cand;
          break;
        }
        double potential = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          potential += std::min(d2[i], squared_distance(candidates.row(i), candidates.row(cand)));
        }
        if (potential < best_potential) {
          best_potential = potential;
          pick = cand;
        }
      }
    }
    out.centroids.append_row(candidates.row(pick));
    absorb(candidates.row(pick));
    have_any = true;
  }
  return out;
}

namespace detail {

// Lloyd iterations from `centroids`. forced[i] pins point i to a cluster.
// Empty clusters are moved onto the reseed_pool point farthest from its
// current centroid.
inline ClusterModel lloyd(const FeatureMatrix& x, Matrix centroids, std::span<const std::optional<std::size_t>> forced,
                          std::span<const std::size_t> reseed_pool, std::size_t max_iters, double tol) {
  const std::size_t n = x.n_points();
  const std::size_t d = x.dim();
  const std::size_t k = centroids.rows();
  ClusterModel m;
  m.assignments.assign(n, 0);
  std::vector<double> dist(n, 0.0);

  auto assign = [&] {
    parallel_for(n, [&](std::size_t i) {
      const auto xi = x.row(i);
      if (!forced.empty() && forced[i]) {
        m.assignments[i] = *forced[i];
        dist[i] = squared_distance(xi, centroids.row(*forced[i]));
        return;
      }
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const double dc = squared_distance(xi, centroids.row(c));
        if (dc < best_d) {
          best_d = dc;
          best = c;
        }
      }
      m.assignments[i] = best;
      dist[i] = best_d;
    });
    double total = 0.0;
    for (double v : dist) total += v;
    return total;
  };

  Matrix sums(k, d);
  std::vector<std::size_t> counts(k);
  for (std::size_t it = 0; it < max_iters; ++it) {
    m.inertia_trace.push_back(assign());
    m.n_iters = it + 1;

    std::fill(sums.values().begin(), sums.values().end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      auto s = sums.row(m.assignments[i]);
      const auto xi = x.row(i);
      for (std::size_t j = 0; j < d; ++j) s[j] += xi[j];
      ++counts[m.assignments[i]];
    }

    double shift = 0.0;
    std::vector<char> taken(n, 0);
    for (std::size_t c = 0; c < k; ++c) {
      auto next = sums.row(c);
      if (counts[c] > 0) {
        for (double& v : next) v /= static_cast<double>(counts[c]);
      } else {
        std::size_t far = n;
        for (std::size_t i : reseed_pool) {
          if (!taken[i] && (far == n || dist[i] > dist[far])) far = i;
        }
        if (far == n) continue;  // nothing to reseed from; centroid stays put
        taken[far] = 1;
        ++m.n_reseeds;
        std::copy(x.row(far).begin(), x.row(far).end(), next.begin());
      }
      shift = std::max(shift, std::sqrt(squared_distance(next, centroids.row(c))));
      std::copy(next.begin(), next.end(), centroids.row(c).begin());
    }
    if (shift <= tol) {
      m.converged = true;
      break;
    }
  }

  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += squared_distance(x.row(i), centroids.row(m.assignments[i]));
  m.inertia = total;
  m.inertia_trace.push_back(total);
  m.centroids = std::move(centroids);
  return m;
}

inline void keep_best(std::optional<ClusterModel>& best, ClusterModel candidate) {
  const double inertia = candidate.inertia;
  std::vector<double> history = best ? std::move(best->restart_inertias) : std::vector<double>{};
  history.push_back(inertia);
  if (!best || inertia < best->inertia) best = std::move(candidate);
  best->restart_inertias = std::move(history);
}

}  // namespace detail

/// Plain k-means: best of n_restarts k-means++ seeded Lloyd runs by inertia.
inline ClusterModel kmeans_fit(const FeatureMatrix& x, const KMeansConfig& config) {
  config.validate();
  if (config.k > x.n_points()) {
    throw Error(ErrorKind::invalid_config, "k = " + std::to_string(config.k) + " exceeds the number of points (" +
                                               std::to_string(x.n_points()) + ")");
  }
  std::vector<std::size_t> pool(x.n_points());
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  std::optional<ClusterModel> best;
  for (std::size_t r = 0; r < config.n_restarts; ++r) {
    SeedResult init = kmeans_pp_seed(x.matrix(), config.k, Matrix{}, derive_seed(config.seed, r),
                                     config.resolved_seeding_trials());
    ClusterModel m = detail::lloyd(x, std::move(init.centroids), {}, pool, config.max_iters, config.tol);
    m.seeding_fallback = init.uniform_fallback;
    detail::keep_best(best, std::move(m));
  }
  return std::move(*best);
}

struct Constraints {
  std::vector<std::optional<std::size_t>> forced;  // per point: pinned cluster
  Matrix fixed_centroid_init;                      // |Y_L| x D labelled class means
  std::vector<Label> cluster_class;                // cluster j < |Y_L| -> class id
};

struct SsInit {
  Matrix centroids;
  Constraints constraints;
  bool uniform_fallback = false;
};

/// Class means of the labelled points, followed by k - |Y_L| centroids drawn
/// from the unlabelled points by k-means++ constrained on those means.
inline SsInit ss_kmeans_init(const GcdDataset& data, std::size_t k, std::uint64_t seed,
                             std::size_t seeding_trials = 1) {
  const auto& yl = data.y_l();
  if (k < yl.size()) {
    throw Error(ErrorKind::invalid_config,
                "k = " + std::to_string(k) + " is smaller than the number of labelled classes (" +
                    std::to_string(yl.size()) + ")");
  }
  if (k == 0) throw Error(ErrorKind::invalid_config, "k must be >= 1");
  const FeatureMatrix& x = data.features();
  const std::size_t d = x.dim();

  std::map<Label, std::size_t> cluster_of;
  for (std::size_t j = 0; j < yl.size(); ++j) cluster_of[yl[j]] = j;

  SsInit out;
  out.constraints.cluster_class = yl;
  out.constraints.forced.assign(x.n_points(), std::nullopt);
  Matrix means(yl.size(), d);
  std::vector<std::size_t> counts(yl.size(), 0);
  for (std::size_t i = 0; i < x.n_points(); ++i) {
    const auto& l = data.labels()[i];
    if (!l) continue;
    const std::size_t c = cluster_of.at(*l);
    out.constraints.forced[i] = c;
    auto row = means.row(c);
    for (std::size_t j = 0; j < d; ++j) row[j] += x(i, j);
    ++counts[c];
  }
  for (std::size_t c = 0; c < yl.size(); ++c) {
    for (double& v : means.row(c)) v /= static_cast<double>(counts[c]);
  }
  out.constraints.fixed_centroid_init = means;
  out.centroids = means;
  if (k > yl.size()) {
    const auto pool = data.unlabelled_indices();
    const Matrix candidates = select_rows(x.matrix(), pool);
    SeedResult extra = kmeans_pp_seed(candidates, k - yl.size(), means, seed, seeding_trials);
    out.uniform_fallback = extra.uniform_fallback;
    if (out.centroids.empty()) out.centroids = Matrix(0, d);
    for (std::size_t c = 0; c < extra.centroids.rows(); ++c) out.centroids.append_row(extra.centroids.row(c));
  }
  return out;
}

/// Semi-supervised k-means: labelled points always stay in their class
/// cluster; unlabelled points go to the nearest centroid; centroids average
/// every point assigned to them.
inline ClusterModel ss_kmeans_fit(const GcdDataset& data, const KMeansConfig& config) {
  config.validate();
  if (config.k > data.size()) {
    throw Error(ErrorKind::invalid_config, "k = " + std::to_string(config.k) + " exceeds the number of points (" +
                                               std::to_string(data.size()) + ")");
  }
  const auto pool = data.unlabelled_indices();
  std::optional<ClusterModel> best;
  for (std::size_t r = 0; r < config.n_restarts; ++r) {
    SsInit init = ss_kmeans_init(data, config.k, derive_seed(config.seed, r), config.resolved_seeding_trials());
    ClusterModel m = detail::lloyd(data.features(), std::move(init.centroids), init.constraints.forced, pool,
                                   config.max_iters, config.tol);
    m.seeding_fallback = init.uniform_fallback;
    detail::keep_best(best, std::move(m));
  }
  return std::move(*best);
}

}  // namespace gcd
