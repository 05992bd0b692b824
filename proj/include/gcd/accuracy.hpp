#pragma once

// Hungarian-matched clustering accuracy and the Old/New report over the
// unlabelled points.

#include <map>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include <json.hpp>

#include "gcd/dataset.hpp"
#include "gcd/hungarian.hpp"

namespace gcd {

struct AccuracyResult {
  double acc = 0.0;
  std::size_t correct = 0;
  std::size_t total = 0;
  /// cluster id -> class id, or nullopt for the null set.
  std::map<Label, std::optional<Label>> mapping;
};

/// Best fraction of points matched under an injective cluster -> class map.
/// Surplus clusters (or classes) go to the null set and their points count
/// as incorrect.
inline AccuracyResult clustering_accuracy(std::span<const Label> y_true, std::span<const Label> y_pred) {
  if (y_true.size() != y_pred.size()) throw Error(ErrorKind::invalid_input, "y_true and y_pred lengths differ");
  if (y_true.empty()) throw Error(ErrorKind::invalid_input, "accuracy needs at least one point");

  const std::set<Label> clusters_set(y_pred.begin(), y_pred.end());
  const std::set<Label> classes_set(y_true.begin(), y_true.end());
  const std::vector<Label> clusters(clusters_set.begin(), clusters_set.end());
  const std::vector<Label> classes(classes_set.begin(), classes_set.end());
  std::map<Label, std::size_t> row_of, col_of;
  for (std::size_t i = 0; i < clusters.size(); ++i) row_of[clusters[i]] = i;
  for (std::size_t j = 0; j < classes.size(); ++j) col_of[classes[j]] = j;

  std::vector<double> counts(clusters.size() * classes.size(), 0.0);
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    counts[row_of[y_pred[i]] * classes.size() + col_of[y_true[i]]] += 1.0;
  }
  std::vector<double> cost(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) cost[i] = -counts[i];
  const Assignment a = hungarian(CostMatrix(clusters.size(), classes.size(), std::move(cost)));

  AccuracyResult out;
  out.total = y_true.size();
  for (std::size_t i = 0; i < clusters.size(); ++i) {
    if (const auto j = a.row_to_col[i]) {
      out.mapping[clusters[i]] = classes[*j];
      out.correct += static_cast<std::size_t>(counts[i * classes.size() + *j]);
    } else {
      out.mapping[clusters[i]] = std::nullopt;
    }
  }
  out.acc = static_cast<double>(out.correct) / static_cast<double>(out.total);
  return out;
}

struct AccReport {
  double acc_all = 0.0;
  double acc_old = 0.0;  // 0 when there are no Old points
  double acc_new = 0.0;  // 0 when there are no New points
  std::map<Label, std::optional<Label>> mapping;
  std::size_t count_old = 0;
  std::size_t count_new = 0;
  std::size_t correct_old = 0;
  std::size_t correct_new = 0;
};

/// y_pred holds one cluster id per unlabelled point, in index order. One
/// mapping is computed over all unlabelled points and then scored separately
/// on points of labelled classes (Old) and of the remaining classes (New).
inline AccReport acc_report(const GcdDataset& data, std::span<const Label> y_pred) {
  const EvaluationView eval = data.evaluation();
  const auto unlabelled = data.unlabelled_indices();
  if (y_pred.size() != unlabelled.size()) {
    throw Error(ErrorKind::invalid_input, "expected " + std::to_string(unlabelled.size()) +
                                              " predictions (one per unlabelled point), got " +
                                              std::to_string(y_pred.size()));
  }
  if (unlabelled.empty()) throw Error(ErrorKind::invalid_input, "dataset has no unlabelled points");

  std::vector<Label> y_true;
  y_true.reserve(unlabelled.size());
  for (std::size_t i : unlabelled) y_true.push_back(eval.ground_truth[i]);
  const AccuracyResult acc = clustering_accuracy(y_true, y_pred);

  const std::set<Label> old_classes(data.y_l().begin(), data.y_l().end());
  AccReport r;
  r.mapping = acc.mapping;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const bool old = old_classes.count(y_true[i]) > 0;
    const auto& target = acc.mapping.at(y_pred[i]);
    const bool hit = target && *target == y_true[i];
    (old ? r.count_old : r.count_new) += 1;
    (old ? r.correct_old : r.correct_new) += hit ? 1 : 0;
  }
  auto frac = [](std::size_t a, std::size_t b) { return b ? static_cast<double>(a) / static_cast<double>(b) : 0.0; };
  r.acc_all = frac(r.correct_old + r.correct_new, r.count_old + r.count_new);
  r.acc_old = frac(r.correct_old, r.count_old);
  r.acc_new = frac(r.correct_new, r.count_new);
  return r;
}

inline nlohmann::json to_json(const AccReport& r) {
  nlohmann::json mapping = nlohmann::json::array();
  for (const auto& [cluster, cls] : r.mapping) {
    mapping.push_back({{"cluster", cluster}, {"class", cls ? nlohmann::json(*cls) : nlohmann::json(nullptr)}});
  }
  return {
      {"acc_all", r.acc_all},
      {"acc_old", r.acc_old},
      {"acc_new", r.acc_new},
      {"mapping", mapping},
      {"counts",
       {{"old", r.count_old}, {"new", r.count_new}, {"correct_old", r.correct_old}, {"correct_new", r.correct_new}}},
  };
}

}  // namespace gcd
