#pragma once

// Contrastive objectives over a batch of paired views, their analytic
// gradients, a small MLP projection head and a toy SGD trainer.
//
// For anchor row i with logits s_n = z_i . z_n / tau over all rows n != i:
//   unsupervised  L^u_i = lse_i - s_{i'}                 (i' = the other view)
//   supervised    L^s_i = lse_i - mean_{q in N(i)} s_q   (N(i): rows of labelled
//                 images sharing i's label, including i')
//   total         (1 - lambda) sum_i L^u_i + lambda sum_{i labelled} L^s_i
// The "mean" reduction replaces each sum by the mean over its anchors.

#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "gcd/dataset.hpp"

namespace gcd {

struct ContrastiveConfig {
  double tau = 0.07;
  double lambda = 0.35;
  bool normalize = true;

  void validate() const {
    if (!(tau > 0.0) || !std::isfinite(tau)) throw Error(ErrorKind::invalid_config, "tau must be > 0");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw Error(ErrorKind::invalid_config, "lambda must lie in [0, 1]");
  }
};

enum class Reduction { sum, mean };

/// 2B projected rows forming B view pairs, plus per-image optional labels.
class ViewBatch {
 public:
  /// Rows [0, B) are the first view of images 0..B-1, rows [B, 2B) the second.
  ViewBatch(Matrix z, std::vector<std::optional<Label>> labels) : z_(std::move(z)), labels_(std::move(labels)) {
    image_.resize(z_.rows());
    const std::size_t b = std::max<std::size_t>(1, z_.rows() / 2);
    for (std::size_t r = 0; r < image_.size(); ++r) image_[r] = r % b;
    init();
  }

  /// image_of_row[r] names the image behind row r; each image owns exactly two rows.
  ViewBatch(Matrix z, std::vector<std::size_t> image_of_row, std::vector<std::optional<Label>> labels)
      : z_(std::move(z)), image_(std::move(image_of_row)), labels_(std::move(labels)) {
    init();
  }

  const Matrix& z() const noexcept { return z_; }
  std::size_t rows() const noexcept { return z_.rows(); }
  std::size_t images() const noexcept { return labels_.size(); }
  std::size_t partner(std::size_t r) const { return partner_[r]; }
  std::size_t image(std::size_t r) const { return image_[r]; }
  const std::optional<Label>& row_label(std::size_t r) const { return labels_[image_[r]]; }
  std::span<const std::optional<Label>> labels() const noexcept { return labels_; }

  bool rows_unit_norm(double tol = 1e-9) const {
    for (std::size_t r = 0; r < z_.rows(); ++r) {
      if (std::abs(std::sqrt(dot(z_.row(r), z_.row(r))) - 1.0) > tol) return false;
    }
    return true;
  }

 private:
  void init() {
    if (z_.rows() == 0 || z_.rows() % 2 != 0) throw Error(ErrorKind::invalid_input, "batch needs an even, non-zero row count");
    if (image_.size() != z_.rows()) throw Error(ErrorKind::invalid_input, "image_of_row has the wrong length");
    if (labels_.size() * 2 != z_.rows()) throw Error(ErrorKind::invalid_input, "need one label slot per image");
    std::vector<std::vector<std::size_t>> rows_of(labels_.size());
    for (std::size_t r = 0; r < image_.size(); ++r) {
      if (image_[r] >= labels_.size()) throw Error(ErrorKind::invalid_input, "image index out of range");
      rows_of[image_[r]].push_back(r);
    }
    partner_.resize(z_.rows());
    for (const auto& rs : rows_of) {
      if (rs.size() != 2) throw Error(ErrorKind::invalid_input, "every image needs exactly two views");
      partner_[rs[0]] = rs[1];
      partner_[rs[1]] = rs[0];
    }
    for (double v : z_.values()) {
      if (!std::isfinite(v)) throw Error(ErrorKind::invalid_input, "non-finite embedding value");
    }
  }

  Matrix z_;
  std::vector<std::size_t> image_;
  std::vector<std::size_t> partner_;
  std::vector<std::optional<Label>> labels_;
};

struct LossResult {
  double sum = 0.0;
  double mean = 0.0;
  std::vector<double> per_anchor;  // one slot per row; 0 for rows that are not anchors
  std::size_t n_anchors = 0;
  std::size_t empty_positive_anchors = 0;  // supervised anchors with empty N(i)
};

namespace detail {

inline void check_batch(const ViewBatch& b, const ContrastiveConfig& cfg) {
  cfg.validate();
  if (cfg.normalize && !b.rows_unit_norm()) {
    throw Error(ErrorKind::invalid_input, "normalize is set but batch rows are not unit length");
  }
}

// Logits of anchor i against every row (entry i unused), and their maximum over n != i.
inline double anchor_logits(const ViewBatch& b, std::size_t i, double tau, std::vector<double>& s) {
  const std::size_t n = b.rows();
  s.resize(n);
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < n; ++r) {
    if (r == i) continue;
    s[r] = dot(b.z().row(i), b.z().row(r)) / tau;
    m = std::max(m, s[r]);
  }
  return m;
}

// log sum_{n != i} exp(s_n - m)
inline double shifted_lse(const std::vector<double>& s, std::size_t i, double m) {
  double acc = 0.0;
  for (std::size_t r = 0; r < s.size(); ++r) {
    if (r != i) acc += std::exp(s[r] - m);
  }
  return std::log(acc);
}

inline bool positive(const ViewBatch& b, std::size_t i, std::size_t q) {
  if (q == i) return false;
  if (q == b.partner(i)) return true;
  const auto& li = b.row_label(i);
  const auto& lq = b.row_label(q);
  return li && lq && *li == *lq;
}

}  // namespace detail

inline LossResult unsup_loss(const ViewBatch& b, const ContrastiveConfig& cfg) {
  detail::check_batch(b, cfg);
  LossResult out;
  out.per_anchor.assign(b.rows(), 0.0);
  std::vector<double> s;
  for (std::size_t i = 0; i < b.rows(); ++i) {
    const double m = detail::anchor_logits(b, i, cfg.tau, s);
    out.per_anchor[i] = (m - s[b.partner(i)]) + detail::shifted_lse(s, i, m);
    out.sum += out.per_anchor[i];
  }
  out.n_anchors = b.rows();
  out.mean = out.sum / static_cast<double>(out.n_anchors);
  return out;
}

inline LossResult sup_loss(const ViewBatch& b, const ContrastiveConfig& cfg) {
  detail::check_batch(b, cfg);
  LossResult out;
  out.per_anchor.assign(b.rows(), 0.0);
  std::vector<double> s;
  for (std::size_t i = 0; i < b.rows(); ++i) {
    if (!b.row_label(i)) continue;
    ++out.n_anchors;
    const double m = detail::anchor_logits(b, i, cfg.tau, s);
    double gap = 0.0;
    std::size_t n_pos = 0;
    for (std::size_t q = 0; q < b.rows(); ++q) {
      if (!detail::positive(b, i, q)) continue;
      gap += m - s[q];
      ++n_pos;
    }
    if (n_pos == 0) {
      ++out.empty_positive_anchors;
      continue;
    }
    out.per_anchor[i] = gap / static_cast<double>(n_pos) + detail::shifted_lse(s, i, m);
    out.sum += out.per_anchor[i];
  }
  if (out.n_anchors == 0) throw Error(ErrorKind::empty_supervision, "batch has no labelled anchors");
  out.mean = out.sum / static_cast<double>(out.n_anchors);
  return out;
}

struct TotalLoss {
  double summed = 0.0;  // (1 - lambda) sum L^u + lambda sum L^s
  double mean = 0.0;    // same with per-term means
  LossResult unsup;
  std::optional<LossResult> sup;  // absent when the batch has no labelled rows

  double value(Reduction r) const { return r == Reduction::sum ? summed : mean; }
};

inline TotalLoss total_loss(const ViewBatch& b, const ContrastiveConfig& cfg) {
  TotalLoss t;
  t.unsup = unsup_loss(b, cfg);
  bool any_labelled = false;
  for (const auto& l : b.labels()) any_labelled = any_labelled || l.has_value();
  if (any_labelled) t.sup = sup_loss(b, cfg);
  const double s_sum = t.sup ? t.sup->sum : 0.0;
  const double s_mean = t.sup ? t.sup->mean : 0.0;
  t.summed = (1.0 - cfg.lambda) * t.unsup.sum + cfg.lambda * s_sum;
  t.mean = (1.0 - cfg.lambda) * t.unsup.mean + cfg.lambda * s_mean;
  return t;
}

/// d(total loss)/dz for every row of the batch.
inline Matrix grad_total_loss_z(const ViewBatch& b, const ContrastiveConfig& cfg, Reduction red) {
  detail::check_batch(b, cfg);
  const std::size_t n = b.rows();
  const std::size_t p = b.z().cols();
  std::size_t labelled_rows = 0;
  for (std::size_t r = 0; r < n; ++r) labelled_rows += b.row_label(r) ? 1 : 0;

  double wu = 1.0 - cfg.lambda;
  double ws = cfg.lambda;
  if (red == Reduction::mean) {
    wu /= static_cast<double>(n);
    ws = labelled_rows ? ws / static_cast<double>(labelled_rows) : 0.0;
  }

  Matrix g(n, p);
  std::vector<double> s, coef(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double m = detail::anchor_logits(b, i, cfg.tau, s);
    double z_sum = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      if (r != i) z_sum += std::exp(s[r] - m);
    }
    std::size_t n_pos = 0;
    const bool sup = b.row_label(i).has_value() && ws != 0.0;
    if (sup) {
      for (std::size_t q = 0; q < n; ++q) n_pos += detail::positive(b, i, q) ? 1 : 0;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == i) {
        coef[r] = 0.0;
        continue;
      }
      const double prob = std::exp(s[r] - m) / z_sum;
      double c = wu * (prob - (r == b.partner(i) ? 1.0 : 0.0));
      if (sup && n_pos > 0) {
        c += ws * (prob - (detail::positive(b, i, r) ? 1.0 / static_cast<double>(n_pos) : 0.0));
      }
      coef[r] = c / cfg.tau;
    }
    auto gi = g.row(i);
    const auto zi = b.z().row(i);
    for (std::size_t r = 0; r < n; ++r) {
      if (r == i || coef[r] == 0.0) continue;
      const auto zr = b.z().row(r);
      auto gr = g.row(r);
      for (std::size_t j = 0; j < p; ++j) {
        gi[j] += coef[r] * zr[j];
        gr[j] += coef[r] * zi[j];
      }
    }
  }
  for (double v : g.values()) {
    if (!std::isfinite(v)) throw Error(ErrorKind::numerical_overflow, "non-finite loss gradient");
  }
  return g;
}

// ---------------------------------------------------------------------------
// Projection head: in -> hidden (GELU) -> out, optionally L2-normalised.

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

inline double gelu_grad(double x) {
  constexpr double kInvSqrt2Pi = 0.3989422804014327;
  return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

struct HeadForward {
  Matrix pre;   // hidden pre-activations
  Matrix act;   // hidden activations
  Matrix y;     // output before normalisation
  Matrix z;     // output (normalised if requested)
  std::vector<double> y_norm;
};

class ProjectionHead {
 public:
  ProjectionHead(std::size_t in, std::size_t hidden, std::size_t out, std::uint64_t seed)
      : in_(in), hidden_(hidden), out_(out), params_(parameter_count(in, hidden, out), 0.0) {
    if (in == 0 || hidden == 0 || out == 0) throw Error(ErrorKind::invalid_config, "head dimensions must be >= 1");
    std::mt19937_64 rng(derive_seed(seed, "head-init"));
    std::normal_distribution<double> w1(0.0, std::sqrt(2.0 / static_cast<double>(in + hidden)));
    std::normal_distribution<double> w2(0.0, std::sqrt(2.0 / static_cast<double>(hidden + out)));
    for (std::size_t i = 0; i < hidden * in; ++i) params_[i] = w1(rng);
    for (std::size_t i = 0; i < out * hidden; ++i) params_[w2_offset() + i] = w2(rng);
  }

  static ProjectionHead from_parameters(std::size_t in, std::size_t hidden, std::size_t out,
                                        std::vector<double> params) {
    ProjectionHead h(in, hidden, out, 0);
    if (params.size() != h.params_.size()) {
      throw Error(ErrorKind::invalid_input, "parameter vector does not match the declared head shape");
    }
    for (double v : params) {
      if (!std::isfinite(v)) throw Error(ErrorKind::invalid_input, "non-finite head parameter");
    }
    h.params_ = std::move(params);
    return h;
  }

  static std::size_t parameter_count(std::size_t in, std::size_t hidden, std::size_t out) {
    return hidden * in + hidden + out * hidden + out;
  }

  std::size_t input_dim() const noexcept { return in_; }
  std::size_t hidden_dim() const noexcept { return hidden_; }
  std::size_t output_dim() const noexcept { return out_; }
  std::span<double> parameters() noexcept { return params_; }
  std::span<const double> parameters() const noexcept { return params_; }

  HeadForward forward(const Matrix& x, bool normalize) const {
    if (x.cols() != in_) throw Error(ErrorKind::invalid_input, "input width does not match the head");
    const std::size_t n = x.rows();
    HeadForward f{Matrix(n, hidden_), Matrix(n, hidden_), Matrix(n, out_), Matrix(n, out_), std::vector<double>(n, 1.0)};
    for (std::size_t r = 0; r < n; ++r) {
      const auto xr = x.row(r);
      for (std::size_t h = 0; h < hidden_; ++h) {
        const double v = dot(w1_row(h), xr) + params_[b1_offset() + h];
        f.pre(r, h) = v;
        f.act(r, h) = gelu(v);
      }
      for (std::size_t o = 0; o < out_; ++o) f.y(r, o) = dot(w2_row(o), f.act.row(r)) + params_[b2_offset() + o];
      auto zr = f.z.row(r);
      std::copy(f.y.row(r).begin(), f.y.row(r).end(), zr.begin());
      if (normalize) {
        const double nrm = std::sqrt(dot(zr, zr));
        if (!(nrm > 0.0) || !std::isfinite(nrm)) {
          throw Error(ErrorKind::numerical_overflow, "cannot normalise a zero or non-finite projection");
        }
        f.y_norm[r] = nrm;
        for (double& v : zr) v /= nrm;
      }
    }
    return f;
  }

  /// Back-propagates dL/dz to a flat parameter gradient. Also returns dL/dy
  /// (the gradient before normalisation) through `grad_y` when given.
  std::vector<double> backward(const Matrix& x, const HeadForward& f, const Matrix& grad_z, bool normalize,
                               Matrix* grad_y = nullptr) const {
    const std::size_t n = x.rows();
    std::vector<double> g(params_.size(), 0.0);
    Matrix dy(n, out_);
    for (std::size_t r = 0; r < n; ++r) {
      const auto gz = grad_z.row(r);
      auto d = dy.row(r);
      if (normalize) {
        const auto zr = f.z.row(r);
        const double proj = dot(zr, gz);
        for (std::size_t o = 0; o < out_; ++o) d[o] = (gz[o] - zr[o] * proj) / f.y_norm[r];
      } else {
        std::copy(gz.begin(), gz.end(), d.begin());
      }
    }
    std::vector<double> dact(hidden_);
    for (std::size_t r = 0; r < n; ++r) {
      const auto d = dy.row(r);
      const auto a = f.act.row(r);
      std::fill(dact.begin(), dact.end(), 0.0);
      for (std::size_t o = 0; o < out_; ++o) {
        g[b2_offset() + o] += d[o];
        double* gw2 = g.data() + w2_offset() + o * hidden_;
        const auto w2 = w2_row(o);
        for (std::size_t h = 0; h < hidden_; ++h) {
          gw2[h] += d[o] * a[h];
          dact[h] += d[o] * w2[h];
        }
      }
      const auto xr = x.row(r);
      for (std::size_t h = 0; h < hidden_; ++h) {
        const double dpre = dact[h] * gelu_grad(f.pre(r, h));
        g[b1_offset() + h] += dpre;
        double* gw1 = g.data() + h * in_;
        for (std::size_t j = 0; j < in_; ++j) gw1[j] += dpre * xr[j];
      }
    }
    if (grad_y) *grad_y = std::move(dy);
    return g;
  }

  nlohmann::json shape_json(bool normalize) const {
    return {{"input_dim", in_}, {"hidden_dim", hidden_}, {"output_dim", out_},
            {"activation", "gelu"}, {"normalize", normalize},
            {"layout", "W1[hidden][input], b1[hidden], W2[output][hidden], b2[output]"}};
  }

 private:
  std::size_t b1_offset() const { return hidden_ * in_; }
  std::size_t w2_offset() const { return b1_offset() + hidden_; }
  std::size_t b2_offset() const { return w2_offset() + out_ * hidden_; }
  std::span<const double> w1_row(std::size_t h) const { return {params_.data() + h * in_, in_}; }
  std::span<const double> w2_row(std::size_t o) const { return {params_.data() + w2_offset() + o * hidden_, hidden_}; }

  std::size_t in_, hidden_, out_;
  std::vector<double> params_;
};

struct HeadGradient {
  double loss = 0.0;
  std::vector<double> params;  // d loss / d head parameters
  Matrix grad_z;               // d loss / d z
  Matrix grad_y;               // d loss / d y (before normalisation)
  Matrix z;
};

/// Loss and exact parameter gradient for a batch whose 2B input rows follow
/// the ViewBatch halves layout (row r and r + B are views of image r).
inline HeadGradient grad_total_loss(const ProjectionHead& head, const Matrix& inputs,
                                    std::vector<std::optional<Label>> labels, const ContrastiveConfig& cfg,
                                    Reduction red) {
  cfg.validate();
  const HeadForward f = head.forward(inputs, cfg.normalize);
  const ViewBatch batch(f.z, std::move(labels));
  HeadGradient out;
  out.loss = total_loss(batch, cfg).value(red);
  out.grad_z = grad_total_loss_z(batch, cfg, red);
  out.params = head.backward(inputs, f, out.grad_z, cfg.normalize, &out.grad_y);
  out.z = f.z;
  if (!std::isfinite(out.loss)) throw Error(ErrorKind::numerical_overflow, "non-finite loss");
  for (double v : out.params) {
    if (!std::isfinite(v)) throw Error(ErrorKind::numerical_overflow, "non-finite parameter gradient");
  }
  return out;
}

inline FeatureMatrix embed(const ProjectionHead& head, const FeatureMatrix& x, bool normalize) {
  return FeatureMatrix(head.forward(x.matrix(), normalize).z);
}

// ---------------------------------------------------------------------------
// Toy trainer

struct TrainConfig {
  std::size_t epochs = 20;
  double lr = 0.1;            // initial rate, cosine-annealed to 0 over all steps
  double momentum = 0.9;
  std::size_t batch_size = 128;
  double noise_scale = 0.05;  // view jitter sigma, relative to the feature std
  std::uint64_t seed = 0;
};

struct TrainResult {
  std::vector<double> epoch_loss;  // mean of per-batch mean losses
};

/// Mini-batch SGD on the mean-reduced total loss. The two views of a point
/// are the point plus independent Gaussian jitter; only labels of labelled
/// points are used.
inline TrainResult train_toy(const GcdDataset& data, ProjectionHead& head, const ContrastiveConfig& cfg,
                             const TrainConfig& tc) {
  cfg.validate();
  if (data.y_l().size() < 2) throw Error(ErrorKind::invalid_input, "training needs at least two labelled classes");
  if (tc.batch_size < 1 || tc.epochs < 1) throw Error(ErrorKind::invalid_config, "epochs and batch_size must be >= 1");
  if (!(tc.lr >= 0.0) || !(tc.noise_scale >= 0.0)) throw Error(ErrorKind::invalid_config, "lr and noise must be >= 0");
  const FeatureMatrix& x = data.features();
  const std::size_t n = x.n_points();
  const std::size_t d = x.dim();

  double mean = 0.0, sq = 0.0;
  for (double v : x.values()) mean += v;
  mean /= static_cast<double>(x.values().size());
  for (double v : x.values()) sq += (v - mean) * (v - mean);
  const double sigma = tc.noise_scale * std::sqrt(sq / static_cast<double>(x.values().size()));

  std::mt19937_64 rng(derive_seed(tc.seed, "train-toy"));
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t steps_per_epoch = (n + tc.batch_size - 1) / tc.batch_size;
  const double total_steps = static_cast<double>(steps_per_epoch * tc.epochs);
  std::vector<double> velocity(head.parameters().size(), 0.0);

  TrainResult result;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_sum = 0.0;
    for (std::size_t start = 0; start < n; start += tc.batch_size, ++step) {
      const std::size_t b = std::min(tc.batch_size, n - start);
      Matrix inputs(2 * b, d);
      std::vector<std::optional<Label>> labels(b);
      for (std::size_t i = 0; i < b; ++i) {
        const std::size_t p = order[start + i];
        labels[i] = data.labels()[p];
        for (std::size_t v = 0; v < 2; ++v) {
          auto row = inputs.row(v * b + i);
          for (std::size_t j = 0; j < d; ++j) row[j] = x(p, j) + sigma * noise(rng);
        }
      }
      HeadGradient g;
      try {
        g = grad_total_loss(head, inputs, std::move(labels), cfg, Reduction::mean);
      } catch (const Error& e) {
        if (e.kind() == ErrorKind::numerical_overflow) {
          throw Error(ErrorKind::training_diverged, "epoch " + std::to_string(epoch) + ": " + e.what());
        }
        throw;
      }
      epoch_sum += g.loss;
      const double lr = tc.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / total_steps));
      auto params = head.parameters();
      for (std::size_t j = 0; j < params.size(); ++j) {
        velocity[j] = tc.momentum * velocity[j] + g.params[j];
        params[j] -= lr * velocity[j];
        if (!std::isfinite(params[j])) {
          throw Error(ErrorKind::training_diverged, "parameters became non-finite in epoch " + std::to_string(epoch));
        }
      }
    }
    result.epoch_loss.push_back(epoch_sum / static_cast<double>(steps_per_epoch));
    if (!std::isfinite(result.epoch_loss.back())) {
      throw Error(ErrorKind::training_diverged, "loss became non-finite in epoch " + std::to_string(epoch));
    }
  }
  return result;
}

}  // namespace gcd
