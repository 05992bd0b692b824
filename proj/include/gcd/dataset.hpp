#pragma once

// Partially labelled datasets, labelled/unlabelled split construction and a
// seeded Gaussian-blob generator.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "gcd/common.hpp"

namespace gcd {

enum class ClassSelection { first_indices, random };

struct SplitSpec {
  double labelled_class_fraction = 0.5;
  double labelled_image_fraction = 0.5;
  ClassSelection class_selection = ClassSelection::first_indices;
  std::uint64_t seed = 0;

  void validate() const {
    auto ok = [](double f) { return f > 0.0 && f <= 1.0; };
    if (!ok(labelled_class_fraction) || !ok(labelled_image_fraction)) {
      throw Error(ErrorKind::invalid_spec, "split fractions must lie in (0, 1]");
    }
  }
};

/// Visible labels produced by a split: labels[i] is set iff point i is labelled.
struct SplitSkeleton {
  std::vector<std::optional<Label>> labels;
  std::vector<Label> y_l;

  std::size_t n_labelled() const {
    return static_cast<std::size_t>(
        std::count_if(labels.begin(), labels.end(), [](const auto& l) { return l.has_value(); }));
  }
};

/// Maps arbitrary integer labels onto contiguous ids 0..C-1 (ascending order
/// of the original values). original[c] is the raw label behind id c.
struct LabelEncoding {
  std::vector<Label> codes;
  std::vector<Label> original;

  bool is_identity() const {
    for (std::size_t c = 0; c < original.size(); ++c) {
      if (original[c] != static_cast<Label>(c)) return false;
    }
    return true;
  }
};

inline LabelEncoding encode_labels(std::span<const Label> raw) {
  std::set<Label> distinct(raw.begin(), raw.end());
  LabelEncoding enc;
  enc.original.assign(distinct.begin(), distinct.end());
  std::map<Label, Label> code;
  for (std::size_t c = 0; c < enc.original.size(); ++c) code[enc.original[c]] = static_cast<Label>(c);
  enc.codes.reserve(raw.size());
  for (Label l : raw) enc.codes.push_back(code[l]);
  return enc;
}

/// Number of distinct classes, requiring ids to be exactly 0..C-1.
inline std::size_t count_contiguous_classes(std::span<const Label> labels) {
  if (labels.empty()) throw Error(ErrorKind::invalid_input, "labels are empty");
  const Label max_id = *std::max_element(labels.begin(), labels.end());
  if (*std::min_element(labels.begin(), labels.end()) < 0) {
    throw Error(ErrorKind::invalid_input, "class ids must be non-negative");
  }
  std::vector<bool> seen(static_cast<std::size_t>(max_id) + 1, false);
  for (Label l : labels) seen[static_cast<std::size_t>(l)] = true;
  if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
    throw Error(ErrorKind::invalid_input, "class ids must be contiguous 0..C-1 (use encode_labels)");
  }
  return seen.size();
}

class GcdDataset;

/// Ground-truth access for evaluation only. Algorithms take a GcdDataset and
/// only ever see labels of labelled points.
struct EvaluationView {
  std::span<const Label> ground_truth;
  std::vector<Label> y_u_true;
};

class GcdDataset {
 public:
  GcdDataset(FeatureMatrix features, std::vector<std::optional<Label>> labels,
             std::optional<std::vector<Label>> ground_truth = std::nullopt)
      : features_(std::move(features)), labels_(std::move(labels)), truth_(std::move(ground_truth)) {
    if (labels_.size() != features_.n_points()) {
      throw Error(ErrorKind::invalid_input, "label count does not match number of points");
    }
    std::set<Label> yl;
    for (const auto& l : labels_) {
      if (!l) continue;
      if (*l < 0) throw Error(ErrorKind::invalid_input, "class ids must be non-negative");
      yl.insert(*l);
    }
    y_l_.assign(yl.begin(), yl.end());
    if (truth_) {
      if (truth_->size() != labels_.size()) {
        throw Error(ErrorKind::invalid_input, "ground truth length does not match number of points");
      }
      for (std::size_t i = 0; i < labels_.size(); ++i) {
        if ((*truth_)[i] < 0) throw Error(ErrorKind::invalid_input, "ground truth contains negative id");
        if (labels_[i] && *labels_[i] != (*truth_)[i]) {
          throw Error(ErrorKind::invalid_input,
                      "labelled point " + std::to_string(i) + " disagrees with ground truth");
        }
      }
    }
  }

  static GcdDataset from_split(FeatureMatrix features, SplitSkeleton split,
                               std::optional<std::vector<Label>> ground_truth = std::nullopt) {
    return GcdDataset(std::move(features), std::move(split.labels), std::move(ground_truth));
  }

  const FeatureMatrix& features() const noexcept { return features_; }
  std::size_t size() const noexcept { return labels_.size(); }
  std::span<const std::optional<Label>> labels() const noexcept { return labels_; }
  bool is_labelled(std::size_t i) const { return labels_[i].has_value(); }
  const std::vector<Label>& y_l() const noexcept { return y_l_; }

  std::vector<bool> labelled_mask() const {
    std::vector<bool> m(labels_.size());
    for (std::size_t i = 0; i < labels_.size(); ++i) m[i] = labels_[i].has_value();
    return m;
  }

  std::vector<std::size_t> labelled_indices() const { return indices(true); }
  std::vector<std::size_t> unlabelled_indices() const { return indices(false); }

  bool has_ground_truth() const noexcept { return truth_.has_value(); }

  EvaluationView evaluation() const {
    if (!truth_) throw Error(ErrorKind::evaluation_unavailable, "dataset carries no ground-truth labels");
    std::set<Label> yu;
    for (std::size_t i = 0; i < labels_.size(); ++i) {
      if (!labels_[i]) yu.insert((*truth_)[i]);
    }
    return {*truth_, std::vector<Label>(yu.begin(), yu.end())};
  }

  /// Same split over different features (e.g. embeddings of the same points).
  GcdDataset with_features(FeatureMatrix features) const {
    if (features.n_points() != size()) {
      throw Error(ErrorKind::invalid_input, "replacement features have a different point count");
    }
    return GcdDataset(std::move(features), labels_, truth_);
  }

 private:
  std::vector<std::size_t> indices(bool labelled) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < labels_.size(); ++i) {
      if (labels_[i].has_value() == labelled) out.push_back(i);
    }
    return out;
  }

  FeatureMatrix features_;
  std::vector<std::optional<Label>> labels_;
  std::optional<std::vector<Label>> truth_;
  std::vector<Label> y_l_;
};

namespace detail {

// ceil/round with a small slack so that e.g. 0.3 * 10 counts as exactly 3.
inline std::size_t ceil_count(double x) { return static_cast<std::size_t>(std::ceil(x - 1e-9)); }
inline std::size_t round_half_up(double x) { return static_cast<std::size_t>(std::floor(x + 0.5 + 1e-9)); }

}  // namespace detail

/// Chooses the labelled ("Old") classes and, within each, the labelled points.
///
/// ceil(class_fraction * C) classes are chosen, either the lowest ids or a
/// seeded random subset. Each chosen class of size n gets round-half-up
/// (image_fraction * n) labelled points, at least 1, and at most n - 1 when
/// image_fraction < 1 so the class still appears among the unlabelled points.
/// Which points are labelled is a seeded random choice.
inline SplitSkeleton generate_split(std::span<const Label> labels, const SplitSpec& spec) {
  spec.validate();
  const std::size_t n_classes = count_contiguous_classes(labels);
  if (n_classes < 2) throw Error(ErrorKind::invalid_spec, "a split needs at least two classes");

  const std::size_t n_old = detail::ceil_count(spec.labelled_class_fraction * static_cast<double>(n_classes));
  if (n_old == 0) throw Error(ErrorKind::invalid_spec, "class fraction selects zero classes");

  std::mt19937_64 rng(spec.seed);
  std::vector<Label> classes(n_classes);
  std::iota(classes.begin(), classes.end(), Label{0});
  if (spec.class_selection == ClassSelection::random) std::shuffle(classes.begin(), classes.end(), rng);
  std::vector<Label> y_l(classes.begin(), classes.begin() + static_cast<std::ptrdiff_t>(n_old));
  std::sort(y_l.begin(), y_l.end());

  std::vector<std::vector<std::size_t>> members(n_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) members[static_cast<std::size_t>(labels[i])].push_back(i);

  SplitSkeleton out;
  out.labels.assign(labels.size(), std::nullopt);
  out.y_l = y_l;
  for (Label c : y_l) {
    auto& idx = members[static_cast<std::size_t>(c)];
    std::size_t n_lab = detail::round_half_up(spec.labelled_image_fraction * static_cast<double>(idx.size()));
    n_lab = std::max<std::size_t>(n_lab, 1);
    if (spec.labelled_image_fraction < 1.0 && idx.size() >= 2) n_lab = std::min(n_lab, idx.size() - 1);
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t j = 0; j < n_lab; ++j) out.labels[idx[j]] = c;
  }
  return out;
}

struct Blobs {
  FeatureMatrix features;
  std::vector<Label> labels;
  Matrix centers;
};

/// Isotropic Gaussian blobs, points_per_class per class, stored class by
/// class. Centers are drawn uniformly on a sphere whose radius grows with the
/// number of classes, and rejected until every pair is >= separation apart.
inline Blobs make_blobs(std::size_t n_classes, std::size_t points_per_class, std::size_t dim,
                        double separation, double spread, std::uint64_t seed) {
  if (n_classes == 0 || points_per_class == 0 || dim == 0) {
    throw Error(ErrorKind::invalid_config, "make_blobs counts must be >= 1");
  }
  if (!(separation >= 0.0) || !(spread > 0.0) || !std::isfinite(separation) || !std::isfinite(spread)) {
    throw Error(ErrorKind::invalid_config, "need separation >= 0 and spread > 0");
  }
  constexpr int kMaxTries = 10000;

  std::mt19937_64 rng(derive_seed(seed, "blobs"));
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double shape = dim > 1 ? std::pow(static_cast<double>(n_classes), 1.0 / static_cast<double>(dim - 1))
                               : 1.0;
  const double radius = separation * std::max(1.0, shape);

  Matrix centers(n_classes, dim);
  std::vector<double> c(dim);
  for (std::size_t k = 0; k < n_classes; ++k) {
    bool placed = false;
    for (int t = 0; t < kMaxTries && !placed; ++t) {
      double norm2 = 0.0;
      for (double& x : c) {
        x = gauss(rng);
        norm2 += x * x;
      }
      if (norm2 == 0.0) continue;
      const double scale = radius / std::sqrt(norm2);
      for (double& x : c) x *= scale;
      placed = true;
      for (std::size_t j = 0; j < k && placed; ++j) {
        if (std::sqrt(squared_distance(c, centers.row(j))) < separation) placed = false;
      }
    }
    if (!placed) {
      throw Error(ErrorKind::generation, "could not place " + std::to_string(n_classes) +
                                             " centers at separation " + std::to_string(separation) +
                                             " in dimension " + std::to_string(dim));
    }
    std::copy(c.begin(), c.end(), centers.row(k).begin());
  }

  Matrix points(n_classes * points_per_class, dim);
  std::vector<Label> labels;
  labels.reserve(points.rows());
  for (std::size_t k = 0; k < n_classes; ++k) {
    for (std::size_t p = 0; p < points_per_class; ++p) {
      auto r = points.row(k * points_per_class + p);
      for (std::size_t j = 0; j < dim; ++j) r[j] = centers(k, j) + spread * gauss(rng);
      labels.push_back(static_cast<Label>(k));
    }
  }
  return {FeatureMatrix(std::move(points)), std::move(labels), std::move(centers)};
}

}  // namespace gcd
