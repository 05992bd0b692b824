#include <gtest/gtest.h>

#include <random>

#include "gcd/contrastive.hpp"
#include "gcd/gradcheck.hpp"
#include "gcd/kmeans.hpp"
#include "gcd/accuracy.hpp"
#include "oracles.hpp"

namespace {

using Labels = std::vector<std::optional<gcd::Label>>;

gcd::ContrastiveConfig config(double tau, double lambda, bool normalize) {
  gcd::ContrastiveConfig c;
  c.tau = tau;
  c.lambda = lambda;
  c.normalize = normalize;
  return c;
}

gcd::Matrix random_rows(std::size_t n, std::size_t p, bool unit, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  gcd::Matrix z(n, p);
  for (std::size_t r = 0; r < n; ++r) {
    double norm = 0.0;
    for (double& v : z.row(r)) {
      v = g(rng);
      norm += v * v;
    }
    if (unit) {
      for (double& v : z.row(r)) v /= std::sqrt(norm);
    }
  }
  return z;
}

Labels random_labels(std::size_t images, std::mt19937_64& rng) {
  Labels l(images);
  for (auto& v : l) {
    if (std::bernoulli_distribution(0.6)(rng)) v = std::uniform_int_distribution<int>(0, 2)(rng);
  }
  return l;
}

oracle::LossInput to_oracle(const gcd::ViewBatch& b, double tau) {
  oracle::LossInput in;
  in.tau = tau;
  for (std::size_t r = 0; r < b.rows(); ++r) {
    in.z.emplace_back(b.z().row(r).begin(), b.z().row(r).end());
    in.partner.push_back(b.partner(r));
    in.image.push_back(b.image(r));
    in.label.push_back(b.row_label(r) ? *b.row_label(r) : -1);
  }
  return in;
}

double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

}  // namespace

TEST(UnsupLoss, UniformSimilarityGivesLogOfDenominatorCount) {
  for (std::size_t two_b : {4u, 8u, 64u, 256u}) {
    gcd::Matrix z(two_b, 3);
    for (std::size_t r = 0; r < two_b; ++r) z(r, 1) = 1.0;  // all rows identical
    const gcd::ViewBatch b(z, Labels(two_b / 2));
    for (double tau : {0.07, 1.0, 3.0}) {
      const auto l = gcd::unsup_loss(b, config(tau, 0.35, true));
      for (double v : l.per_anchor) EXPECT_LE(rel(v, std::log(two_b - 1.0)), 1e-12);
    }
  }
}

TEST(UnsupLoss, OppositePairsClosedForm) {
  // z0 = z2 = e1, z1 = z3 = -e1: partner dot 1, every other dot -1.
  const gcd::ViewBatch b(gcd::Matrix(4, 2, {1, 0, -1, 0, 1, 0, -1, 0}), Labels(2));
  const auto l = gcd::unsup_loss(b, config(0.5, 0.0, true));
  const double e = std::exp(1.0);
  const double want = -std::log(e * e / (e * e + 2.0 / (e * e)));
  for (double v : l.per_anchor) EXPECT_NEAR(v, want, 1e-14);
  for (long double v : oracle::unsup_per_anchor(to_oracle(b, 0.5))) EXPECT_NEAR(static_cast<double>(v), want, 1e-14);
  EXPECT_NEAR(l.mean, want, 1e-14);
  EXPECT_NEAR(l.sum, 4 * want, 1e-13);
}

TEST(UnsupLoss, DuplicatingAUniformBatchOnlyChangesTheCount) {
  gcd::Matrix z(6, 2);
  for (std::size_t r = 0; r < 6; ++r) z(r, 0) = 1.0;
  gcd::Matrix twice(12, 2);
  for (std::size_t r = 0; r < 12; ++r) twice(r, 0) = 1.0;
  const auto cfg = config(0.2, 0.0, true);
  const double small = gcd::unsup_loss(gcd::ViewBatch(z, Labels(3)), cfg).mean;
  const double big = gcd::unsup_loss(gcd::ViewBatch(twice, Labels(6)), cfg).mean;
  EXPECT_NEAR(small, std::log(5.0), 1e-14);
  EXPECT_NEAR(big, std::log(11.0), 1e-14);
}

TEST(UnsupLoss, MatchesDirectEvaluation) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t images = std::uniform_int_distribution<std::size_t>(1, 6)(rng);
    const bool unit = trial % 2;
    const double tau = unit ? 0.1 : 1.3;
    const gcd::ViewBatch b(random_rows(2 * images, 5, unit, rng), random_labels(images, rng));
    const auto l = gcd::unsup_loss(b, config(tau, 0.35, unit));
    const auto want = oracle::unsup_per_anchor(to_oracle(b, tau));
    for (std::size_t r = 0; r < b.rows(); ++r) EXPECT_LE(rel(l.per_anchor[r], static_cast<double>(want[r])), 1e-12);
  }
}

TEST(SupLoss, UniformSimilarityIndependentOfPositiveCount) {
  for (std::size_t two_b : {4u, 8u, 64u, 256u}) {
    gcd::Matrix z(two_b, 2);
    for (std::size_t r = 0; r < two_b; ++r) z(r, 0) = 1.0;
    Labels labels(two_b / 2);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (i % 3) labels[i] = static_cast<gcd::Label>(i % 2);  // |N(i)| varies per anchor
    }
    const gcd::ViewBatch b(z, labels);
    const auto l = gcd::sup_loss(b, config(0.07, 0.35, true));
    for (std::size_t r = 0; r < two_b; ++r) {
      if (b.row_label(r)) {
        EXPECT_LE(rel(l.per_anchor[r], std::log(two_b - 1.0)), 1e-12);
      }
    }
  }
}

TEST(SupLoss, AnchorPairOnlyReducesToUnsupervised) {
  std::mt19937_64 rng(2);
  const gcd::ViewBatch b(random_rows(6, 4, true, rng), Labels{0, std::nullopt, 1});
  const auto cfg = config(0.3, 0.5, true);
  const auto u = gcd::unsup_loss(b, cfg);
  const auto s = gcd::sup_loss(b, cfg);
  for (std::size_t r : {0u, 3u, 2u, 5u}) EXPECT_NEAR(s.per_anchor[r], u.per_anchor[r], 1e-14);
  EXPECT_EQ(s.n_anchors, 4u);
}

TEST(SupLoss, ThreeImagesTwoSharingALabel) {
  // Explicit 6x3 table; images 0 and 1 share label 4, image 2 is unlabelled.
  const gcd::Matrix z(6, 3, {0.3, -1.2, 0.5, 1.1, 0.4, -0.7, -0.2, 0.9, 1.3, 0.8, 0.1, 0.2, -1.0, 0.6, 0.4, 0.0, -0.3, 2.0});
  const gcd::ViewBatch b(z, Labels{4, 4, std::nullopt});
  const auto cfg = config(0.8, 0.35, false);
  const auto s = gcd::sup_loss(b, cfg);
  const auto want = oracle::sup_per_anchor(to_oracle(b, 0.8));
  for (std::size_t r = 0; r < 6; ++r) {
    if (want[r]) {
      EXPECT_LE(rel(s.per_anchor[r], static_cast<double>(*want[r])), 1e-12) << "row " << r;
    } else {
      EXPECT_EQ(s.per_anchor[r], 0.0);
    }
  }
  EXPECT_EQ(s.n_anchors, 4u);
}

TEST(SupLoss, MatchesDirectEvaluationOnRandomBatches) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t images = std::uniform_int_distribution<std::size_t>(1, 7)(rng);
    Labels labels = random_labels(images, rng);
    labels[0] = 1;
    const gcd::ViewBatch b(random_rows(2 * images, 4, false, rng), labels);
    const auto s = gcd::sup_loss(b, config(0.9, 0.5, false));
    const auto want = oracle::sup_per_anchor(to_oracle(b, 0.9));
    for (std::size_t r = 0; r < b.rows(); ++r) {
      if (want[r]) {
        EXPECT_LE(rel(s.per_anchor[r], static_cast<double>(*want[r])), 1e-12);
      }
    }
  }
}

TEST(SupLoss, NoLabelledAnchorsIsEmptySupervision) {
  const gcd::ViewBatch b(gcd::Matrix(2, 1, {1, 1}), Labels(1));
  try {
    gcd::sup_loss(b, config(1.0, 0.5, true));
    FAIL();
  } catch (const gcd::Error& e) {
    EXPECT_EQ(e.kind(), gcd::ErrorKind::empty_supervision);
  }
}

TEST(TotalLoss, LambdaBoundariesAndDefault) {
  std::mt19937_64 rng(3);
  const gcd::ViewBatch b(random_rows(8, 5, true, rng), Labels{0, 0, std::nullopt, 1});
  auto cfg = config(0.1, 0.0, true);
  const auto u = gcd::unsup_loss(b, cfg);
  const auto s = gcd::sup_loss(b, cfg);
  EXPECT_DOUBLE_EQ(gcd::total_loss(b, cfg).summed, u.sum);
  cfg.lambda = 1.0;
  EXPECT_DOUBLE_EQ(gcd::total_loss(b, cfg).summed, s.sum);
  EXPECT_DOUBLE_EQ(gcd::total_loss(b, cfg).mean, s.mean);
  EXPECT_EQ(gcd::ContrastiveConfig{}.lambda, 0.35);
  cfg.lambda = 0.35;
  const auto t = gcd::total_loss(b, cfg);
  EXPECT_NEAR(t.summed, 0.65 * u.sum + 0.35 * s.sum, 1e-13);
  EXPECT_NEAR(t.mean, 0.65 * u.mean + 0.35 * s.mean, 1e-13);
}

TEST(TotalLoss, TemperatureRescaling) {
  std::mt19937_64 rng(12);
  for (double c : {0.5, 2.0, 7.0}) {
    const gcd::Matrix z = random_rows(8, 4, false, rng);
    gcd::Matrix scaled = z;
    for (double& v : scaled.values()) v /= std::sqrt(c);
    const Labels labels{0, 1, 0, std::nullopt};
    const auto a = gcd::total_loss(gcd::ViewBatch(z, labels), config(0.4 * c, 0.35, false));
    const auto b = gcd::total_loss(gcd::ViewBatch(scaled, labels), config(0.4, 0.35, false));
    EXPECT_LE(rel(a.summed, b.summed), 1e-12);
    EXPECT_LE(rel(a.mean, b.mean), 1e-12);
  }
}

TEST(TotalLoss, InvariantUnderPairPreservingPermutation) {
  std::mt19937_64 rng(13);
  const std::size_t images = 5;
  const gcd::Matrix z = random_rows(2 * images, 3, true, rng);
  const Labels labels{2, std::nullopt, 2, 0, 1};
  const gcd::ViewBatch base(z, labels);
  std::vector<std::size_t> order(2 * images);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  gcd::Matrix zp(2 * images, 3);
  std::vector<std::size_t> image_of(2 * images);
  for (std::size_t r = 0; r < order.size(); ++r) {
    std::copy(z.row(order[r]).begin(), z.row(order[r]).end(), zp.row(r).begin());
    image_of[r] = base.image(order[r]);
  }
  const gcd::ViewBatch permuted(zp, image_of, labels);
  const auto cfg = config(0.2, 0.35, true);
  EXPECT_NEAR(gcd::total_loss(base, cfg).summed, gcd::total_loss(permuted, cfg).summed, 1e-12);
}

TEST(TotalLoss, Validation) {
  EXPECT_THROW(gcd::unsup_loss(gcd::ViewBatch(gcd::Matrix(2, 1, {1, 1}), Labels(1)), config(0.0, 0.3, true)),
               gcd::Error);
  EXPECT_THROW(gcd::unsup_loss(gcd::ViewBatch(gcd::Matrix(2, 1, {1, 1}), Labels(1)), config(1.0, 1.5, true)),
               gcd::Error);
  EXPECT_THROW(gcd::unsup_loss(gcd::ViewBatch(gcd::Matrix(2, 1, {2, 1}), Labels(1)), config(1.0, 0.3, true)),
               gcd::Error);
  EXPECT_THROW(gcd::ViewBatch(gcd::Matrix(3, 1, {1, 1, 1}), Labels(1)), gcd::Error);
  EXPECT_THROW(gcd::ViewBatch(gcd::Matrix(4, 1, {1, 1, 1, 1}), std::vector<std::size_t>{0, 0, 0, 1}, Labels(2)),
               gcd::Error);
}

TEST(Gradient, WrtEmbeddingsMatchesFiniteDifferences) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t images = std::uniform_int_distribution<std::size_t>(1, 8)(rng);
    const std::size_t p = std::uniform_int_distribution<std::size_t>(1, 16)(rng);
    const Labels labels = random_labels(images, rng);
    const auto cfg = config(0.5 + trial % 3, std::array{0.0, 0.35, 1.0}[trial % 3], false);
    const auto red = trial % 2 ? gcd::Reduction::mean : gcd::Reduction::sum;
    const gcd::Matrix z = random_rows(2 * images, p, false, rng);
    const gcd::Matrix g = gcd::grad_total_loss_z(gcd::ViewBatch(z, labels), cfg, red);
    auto f = [&](const std::vector<double>& v) {
      return gcd::total_loss(gcd::ViewBatch(gcd::Matrix(z.rows(), z.cols(), v), labels), cfg).value(red);
    };
    const auto num = oracle::numeric_gradient(f, std::vector<double>(z.values().begin(), z.values().end()));
    for (std::size_t j = 0; j < num.size(); ++j) EXPECT_LT(gcd::relative_error(g.values()[j], num[j]), 1e-6);
  }
}

TEST(Gradient, VanishesAtUniformSimilarity) {
  // All rows equal: softmax weights are uniform and sum to the one partner
  // indicator, so both the anchor and the mirrored contributions cancel.
  const std::size_t rows = 6;
  gcd::Matrix z(rows, 2);
  for (std::size_t r = 0; r < rows; ++r) z(r, 0) = 1.0;
  const auto cfg = config(0.5, 0.0, false);
  const gcd::ViewBatch b(z, Labels(rows / 2));
  const gcd::Matrix g = gcd::grad_total_loss_z(b, cfg, gcd::Reduction::sum);
  for (double v : g.values()) EXPECT_NEAR(v, 0.0, 1e-12);
  auto f = [&](const std::vector<double>& v) {
    return gcd::total_loss(gcd::ViewBatch(gcd::Matrix(rows, 2, v), Labels(rows / 2)), cfg).summed;
  };
  const auto num = oracle::numeric_gradient(f, std::vector<double>(z.values().begin(), z.values().end()));
  for (std::size_t j = 0; j < num.size(); ++j) EXPECT_NEAR(g.values()[j], num[j], 1e-8);
}

TEST(Gradient, LambdaZeroIgnoresLabels) {
  std::mt19937_64 rng(41);
  const gcd::Matrix z = random_rows(8, 5, true, rng);
  const auto cfg = config(0.2, 0.0, true);
  const auto a = gcd::grad_total_loss_z(gcd::ViewBatch(z, Labels{0, 0, 1, std::nullopt}), cfg, gcd::Reduction::sum);
  const auto b = gcd::grad_total_loss_z(gcd::ViewBatch(z, Labels(4)), cfg, gcd::Reduction::sum);
  EXPECT_EQ(a, b);
}

TEST(Gradient, HeadParametersMatchFiniteDifferences) {
  std::mt19937_64 rng(51);
  for (int trial = 0; trial < 24; ++trial) {
    gcd::GradCheckCase c;
    c.images = std::uniform_int_distribution<std::size_t>(1, 8)(rng);
    c.proj_dim = std::uniform_int_distribution<std::size_t>(1, 16)(rng);
    c.config = config(trial % 2 ? 0.1 : 1.0, std::array{0.0, 0.35, 1.0}[trial % 3], trial % 2);
    c.reduction = (trial / 2) % 2 ? gcd::Reduction::mean : gcd::Reduction::sum;
    c.seed = rng();
    const auto r = gcd::check_head_gradient(c);
    EXPECT_LT(r.max_rel_error, 1e-5) << "trial " << trial;
    EXPECT_EQ(r.n_checked, gcd::ProjectionHead::parameter_count(c.input_dim, c.hidden_dim, c.proj_dim));
  }
}

TEST(Gradient, NormalisedOutputGradientIsTangent) {
  std::mt19937_64 rng(61);
  const gcd::ProjectionHead head(5, 9, 6, 3);
  const gcd::Matrix x = random_rows(10, 5, false, rng);
  const auto g = gcd::grad_total_loss(head, x, Labels{0, 1, 0, std::nullopt, 1}, config(0.1, 0.35, true),
                                      gcd::Reduction::sum);
  // d loss / d y = J^T d loss / d z with J = (I - z z^T) / |y|, so y . dL/dy = 0.
  const auto f = head.forward(x, true);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const double along = gcd::dot(f.y.row(r), g.grad_y.row(r));
    const double scale = std::sqrt(gcd::dot(g.grad_y.row(r), g.grad_y.row(r))) * f.y_norm[r];
    EXPECT_LE(std::abs(along), 1e-12 * std::max(1.0, scale));
  }
}

TEST(ProjectionHead, ShapesAndParameterRoundTrip) {
  const gcd::ProjectionHead h(4, 7, 3, 1);
  EXPECT_EQ(h.parameters().size(), 4u * 7 + 7 + 3 * 7 + 3);
  const auto copy = gcd::ProjectionHead::from_parameters(
      4, 7, 3, std::vector<double>(h.parameters().begin(), h.parameters().end()));
  const gcd::Matrix x(2, 4, {1, 2, 3, 4, -1, 0, 1, 0.5});
  EXPECT_EQ(copy.forward(x, true).z, h.forward(x, true).z);
  for (std::size_t r = 0; r < 2; ++r) EXPECT_NEAR(gcd::dot(h.forward(x, true).z.row(r), h.forward(x, true).z.row(r)), 1.0, 1e-12);
  EXPECT_THROW(gcd::ProjectionHead::from_parameters(4, 7, 3, std::vector<double>(5)), gcd::Error);
  EXPECT_THROW(h.forward(gcd::Matrix(1, 3), true), gcd::Error);
  EXPECT_THROW(gcd::ProjectionHead(0, 1, 1, 0), gcd::Error);
}

namespace {

gcd::GcdDataset four_blobs(std::uint64_t seed) {
  const auto b = gcd::make_blobs(4, 50, 8, 8.0, 1.0, seed);
  gcd::SplitSpec spec;
  spec.seed = seed;
  return gcd::GcdDataset::from_split(b.features, gcd::generate_split(b.labels, spec), b.labels);
}

double ss_acc(const gcd::GcdDataset& d, std::uint64_t seed) {
  gcd::KMeansConfig cfg;
  cfg.k = 4;
  cfg.n_restarts = 1;
  cfg.seed = seed;
  const auto m = gcd::ss_kmeans_fit(d, cfg);
  std::vector<gcd::Label> pred;
  for (std::size_t i : d.unlabelled_indices()) pred.push_back(static_cast<gcd::Label>(m.assignments[i]));
  return gcd::acc_report(d, pred).acc_all;
}

}  // namespace

TEST(TrainToy, ZeroLearningRateLeavesParametersAlone) {
  const auto d = four_blobs(1);
  gcd::ProjectionHead head(8, 16, 4, 2);
  const std::vector<double> before(head.parameters().begin(), head.parameters().end());
  gcd::TrainConfig tc;
  tc.lr = 0.0;
  tc.epochs = 3;
  tc.noise_scale = 0.0;
  tc.batch_size = 1000;  // one batch per epoch, so every epoch sees the same batch
  const auto r = gcd::train_toy(d, head, gcd::ContrastiveConfig{}, tc);
  EXPECT_EQ(std::vector<double>(head.parameters().begin(), head.parameters().end()), before);
  for (double v : r.epoch_loss) EXPECT_NEAR(v, r.epoch_loss.front(), 1e-12);
}

TEST(TrainToy, DeterministicGivenSeed) {
  const auto d = four_blobs(2);
  gcd::TrainConfig tc;
  tc.epochs = 3;
  tc.seed = 5;
  gcd::ProjectionHead a(8, 16, 4, 2), b(8, 16, 4, 2);
  EXPECT_EQ(gcd::train_toy(d, a, gcd::ContrastiveConfig{}, tc).epoch_loss,
            gcd::train_toy(d, b, gcd::ContrastiveConfig{}, tc).epoch_loss);
  EXPECT_TRUE(std::equal(a.parameters().begin(), a.parameters().end(), b.parameters().begin()));
}

TEST(TrainToy, ImprovesSemiSupervisedClusteringOnSeparableBlobs) {
  // View jitter of half the feature std; see the README for why the much
  // smaller default jitter is not enough here.
  for (std::uint64_t s = 0; s < 3; ++s) {
    const auto d = four_blobs(s);
    gcd::ProjectionHead head(8, 64, 16, s);
    gcd::TrainConfig tc;
    tc.epochs = 10;
    tc.noise_scale = 0.5;
    tc.seed = s;
    const auto r = gcd::train_toy(d, head, gcd::ContrastiveConfig{}, tc);
    EXPECT_LT(r.epoch_loss.back(), r.epoch_loss.front());
    const double pre = ss_acc(d, s);
    const double post = ss_acc(d.with_features(gcd::embed(head, d.features(), true)), s);
    EXPECT_GE(post, pre) << "seed " << s;
  }
}

TEST(TrainToy, Errors) {
  const auto b = gcd::make_blobs(2, 5, 2, 5.0, 1.0, 0);
  Labels one_class(b.labels.size());
  one_class[0] = 0;
  gcd::ProjectionHead head(2, 4, 2, 0);
  try {
    gcd::train_toy(gcd::GcdDataset(b.features, one_class), head, gcd::ContrastiveConfig{}, gcd::TrainConfig{});
    FAIL();
  } catch (const gcd::Error& e) {
    EXPECT_EQ(e.kind(), gcd::ErrorKind::invalid_input);
  }
  Labels two(b.labels.size());
  two[0] = 0;
  two[5] = 1;
  gcd::TrainConfig wild;
  wild.lr = 1e300;
  wild.epochs = 2;
  try {
    gcd::train_toy(gcd::GcdDataset(b.features, two), head, gcd::ContrastiveConfig{}, wild);
    FAIL();
  } catch (const gcd::Error& e) {
    EXPECT_EQ(e.kind(), gcd::ErrorKind::training_diverged);
  }
}
