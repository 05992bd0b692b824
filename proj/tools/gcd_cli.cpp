// gcd: command-line front end for the category discovery toolkit.
//
// Every artifact-producing command writes manifest.json next to its outputs.
// JSON reports embed the manifest minus the wall-clock duration and minus
// output/input paths (inputs are identified by file name and SHA-256), so a
// rerun with the same parameters reproduces the report byte for byte.
//
// Seeds: each stage draws from derive_seed(--seed, "<stage>"), i.e.
// splitmix64(seed ^ fnv1a64(stage)).

#include <openssl/evp.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gcd/gcd.hpp"
#include "gcd/gradcheck.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[md[i] >> 4];
    out += kHex[md[i] & 15];
  }
  return out;
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

class Run {
 public:
  Run(std::string command, std::uint64_t seed)
      : command_(std::move(command)), seed_(seed), start_(std::chrono::steady_clock::now()) {}

  json params = json::object();

  void input(const std::string& role, const std::string& path) {
    inputs_[role] = {{"file", fs::path(path).filename().string()}, {"sha256", sha256_hex(gcd::detail::read_file(path))}};
  }

  json manifest_core() const {
    return {{"command", command_}, {"version", gcd::kVersion}, {"seed", seed_}, {"params", params}, {"inputs", inputs_}};
  }

  void write_manifest(const fs::path& out) const {
    json m = manifest_core();
    m["duration_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    gcd::detail::write_file((out / "manifest.json").string(), dump(m));
  }

 private:
  std::string command_;
  std::uint64_t seed_;
  std::chrono::steady_clock::time_point start_;
  json inputs_ = json::object();
};

fs::path prepare_out(const std::string& dir) {
  fs::path p(dir);
  fs::create_directories(p);
  return p;
}

// Visible labels come from the sidecar's is_labelled column. Ground truth is
// the sidecar's label column when it is complete, else the feature file's
// label block; it is only reachable through GcdDataset::evaluation().
gcd::GcdDataset load_dataset(const std::string& features_path, const std::string& labels_path) {
  gcd::FeatureFile ff = gcd::load_features(features_path);
  const std::size_t n = ff.features.n_points();
  std::vector<std::optional<gcd::Label>> visible(n);
  std::optional<std::vector<gcd::Label>> truth;
  if (ff.labels && std::all_of(ff.labels->begin(), ff.labels->end(), [](gcd::Label l) { return l >= 0; })) {
    truth = ff.labels;
  }
  if (!labels_path.empty()) {
    const auto records = gcd::decode_label_sidecar(gcd::detail::read_file(labels_path), labels_path);
    if (records.size() != n) {
      throw gcd::Error(gcd::ErrorKind::invalid_input, labels_path + ": " + std::to_string(records.size()) +
                                                          " label rows for " + std::to_string(n) + " points");
    }
    bool complete = true;
    std::vector<gcd::Label> side(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (records[i].is_labelled) visible[i] = records[i].label;
      if (records[i].label) {
        side[i] = *records[i].label;
      } else {
        complete = false;
      }
    }
    if (complete) truth = std::move(side);
  }
  return gcd::GcdDataset(std::move(ff.features), std::move(visible), std::move(truth));
}

std::string write_split(const std::vector<gcd::Label>& codes, const gcd::SplitSkeleton& split) {
  std::vector<gcd::LabelRecord> rec(codes.size());
  for (std::size_t i = 0; i < codes.size(); ++i) rec[i] = {codes[i], split.labels[i].has_value()};
  return gcd::encode_label_sidecar(rec);
}

struct SplitOptions {
  double class_frac = 0.5;
  double image_frac = 0.5;
  std::string selection = "first";

  void add(CLI::App* app) {
    app->add_option("--class-frac", class_frac, "fraction of classes that are labelled");
    app->add_option("--image-frac", image_frac, "fraction of images labelled within those classes");
    app->add_option("--selection", selection, "labelled class choice")->check(CLI::IsMember({"first", "random"}));
  }

  gcd::SplitSpec spec(std::uint64_t seed) const {
    gcd::SplitSpec s;
    s.labelled_class_fraction = class_frac;
    s.labelled_image_fraction = image_frac;
    s.class_selection = selection == "random" ? gcd::ClassSelection::random : gcd::ClassSelection::first_indices;
    s.seed = gcd::derive_seed(seed, "split");
    return s;
  }

  void record(json& p) const {
    p["class_frac"] = class_frac;
    p["image_frac"] = image_frac;
    p["selection"] = selection;
  }
};

// ---------------------------------------------------------------------------
// Commands

struct GenData {
  std::size_t classes = 20, per_class = 100, dim = 16;
  double sep = 8.0, spread = 1.0;
  SplitOptions split;

  int run(std::uint64_t seed, const std::string& out_dir) const {
    Run r("gen-data", seed);
    r.params = {{"classes", classes}, {"per_class", per_class}, {"dim", dim}, {"sep", sep}, {"spread", spread}};
    split.record(r.params);
    const auto out = prepare_out(out_dir);
    const gcd::Blobs b = gcd::make_blobs(classes, per_class, dim, sep, spread, gcd::derive_seed(seed, "gen-data"));
    const gcd::SplitSkeleton s = gcd::generate_split(b.labels, split.spec(seed));
    gcd::save_features((out / "f.gcdf").string(), b.features, b.labels);
    gcd::detail::write_file((out / "l.csv").string(), write_split(b.labels, s));
    r.write_manifest(out);
    std::cout << "gen-data: " << b.features.n_points() << " points, " << classes << " classes, " << s.y_l.size()
              << " labelled classes, " << s.n_labelled() << " labelled points -> " << out.string() << "\n";
    return 0;
  }
};

struct SplitCmd {
  std::string features;
  SplitOptions split;

  int run(std::uint64_t seed, const std::string& out_dir) const {
    Run r("split", seed);
    split.record(r.params);
    r.input("features", features);
    const gcd::FeatureFile ff = gcd::load_features(features);
    if (!ff.labels) throw gcd::Error(gcd::ErrorKind::invalid_input, features + ": no label block to split on");
    const gcd::LabelEncoding enc = gcd::encode_labels(*ff.labels);
    if (!enc.is_identity()) r.params["class_ids"] = enc.original;
    const gcd::SplitSkeleton s = gcd::generate_split(enc.codes, split.spec(seed));
    const auto out = prepare_out(out_dir);
    gcd::detail::write_file((out / "l.csv").string(), write_split(enc.codes, s));
    r.write_manifest(out);
    std::cout << "split: " << s.y_l.size() << " labelled classes, " << s.n_labelled() << " of "
              << enc.codes.size() << " points labelled -> " << (out / "l.csv").string() << "\n";
    return 0;
  }
};

struct ClusterCmd {
  std::string features, labels, mode = "semi-sup";
  std::size_t k = 0, restarts = 0, max_iters = 300, seeding_trials = 0;
  double tol = 1e-6;
  bool normalize = false, no_eval = false;

  int run(std::uint64_t seed, const std::string& out_dir) const {
    Run r("cluster", seed);
    const bool semi = mode == "semi-sup";
    gcd::KMeansConfig cfg;
    cfg.k = k;
    cfg.max_iters = max_iters;
    cfg.tol = tol;
    cfg.n_restarts = restarts ? restarts : (semi ? 1 : 10);
    cfg.seeding_trials = seeding_trials;
    cfg.seed = gcd::derive_seed(seed, "cluster");
    r.params = {{"mode", mode},         {"k", k},     {"restarts", cfg.n_restarts},
                {"max_iters", max_iters}, {"tol", tol}, {"seeding_trials", cfg.resolved_seeding_trials()},
                {"normalize", normalize}, {"eval", !no_eval}};
    r.input("features", features);
    if (!labels.empty()) r.input("labels", labels);

    gcd::GcdDataset data = load_dataset(features, labels);
    if (normalize) data = data.with_features(gcd::l2_normalize_rows(data.features()));
    if (semi && data.labelled_indices().empty()) {
      throw gcd::Error(gcd::ErrorKind::invalid_input, "semi-sup mode needs labelled points (--labels)");
    }
    const gcd::ClusterModel m = semi ? gcd::ss_kmeans_fit(data, cfg) : gcd::kmeans_fit(data.features(), cfg);

    const auto out = prepare_out(out_dir);
    gcd::detail::write_file((out / "assignments.csv").string(), gcd::encode_assignments(m.assignments));
    gcd::save_features((out / "centroids.gcdf").string(), gcd::FeatureMatrix(m.centroids));

    json report = {{"manifest", r.manifest_core()},
                   {"model",
                    {{"inertia", m.inertia},
                     {"n_iters", m.n_iters},
                     {"converged", m.converged},
                     {"n_reseeds", m.n_reseeds},
                     {"seeding_fallback", m.seeding_fallback}}}};
    std::string summary;
    if (!no_eval && data.has_ground_truth() && !data.unlabelled_indices().empty()) {
      std::vector<gcd::Label> y_pred;
      for (std::size_t i : data.unlabelled_indices()) y_pred.push_back(static_cast<gcd::Label>(m.assignments[i]));
      const gcd::AccReport acc = gcd::acc_report(data, y_pred);
      report["acc"] = gcd::to_json(acc);
      std::ostringstream s;
      s << ", acc all/old/new " << acc.acc_all << "/" << acc.acc_old << "/" << acc.acc_new;
      summary = s.str();
    }
    gcd::detail::write_file((out / "report.json").string(), dump(report));
    r.write_manifest(out);
    std::cout << "cluster: " << mode << " k=" << k << ", inertia " << m.inertia << ", " << m.n_iters << " iters"
              << summary << "\n";
    return 0;
  }
};

std::string gnuplot_script() {
  return "set xlabel 'k'\n"
         "set ylabel 'labelled accuracy'\n"
         "set key off\n"
         "plot 'k_curve.dat' using 1:2 with linespoints\n";
}

struct EstimateK {
  std::string features, labels;
  gcd::KSearchConfig cfg;
  bool scan = false;

  int run(std::uint64_t seed, const std::string& out_dir) {
    Run r("estimate-k", seed);
    cfg.seed = gcd::derive_seed(seed, "estimate-k");
    r.params = {{"k_min", cfg.k_min},
                {"k_max", cfg.k_max},
                {"max_evals", cfg.max_evals},
                {"restarts_per_eval", cfg.restarts_per_eval},
                {"kmeans_restarts", cfg.score.kmeans_restarts},
                {"seeding_trials", cfg.score.seeding_trials},
                {"scan", scan}};
    r.input("features", features);
    r.input("labels", labels);
    const gcd::GcdDataset data = load_dataset(features, labels);
    const gcd::KScoreTrace t = gcd::estimate_k(data, cfg);

    const auto out = prepare_out(out_dir);
    gcd::detail::write_file((out / "k_trace.csv").string(), gcd::trace_to_csv(t));
    json summary = gcd::trace_summary(t);
    summary["manifest"] = r.manifest_core();
    if (scan) {
      const gcd::KScoreTrace s = gcd::scan_k(data, cfg);
      std::string dat = "# k score\n";
      for (const auto& [k, v] : s.evaluations) dat += std::to_string(k) + ' ' + gcd::detail::format_double(v) + '\n';
      gcd::detail::write_file((out / "k_curve.dat").string(), dat);
      gcd::detail::write_file((out / "k_curve.gp").string(), gnuplot_script());
      summary["scan_best_k"] = s.best_k;
      summary["scan_best_score"] = s.best_score;
    }
    gcd::detail::write_file((out / "k_summary.json").string(), dump(summary));
    r.write_manifest(out);
    std::cout << "estimate-k: best_k " << t.best_k << " (score " << t.best_score << ", " << t.evaluations.size()
              << " evaluations)\n";
    return 0;
  }
};

struct EvalCmd {
  std::string features, labels, assignments;

  int run(std::uint64_t seed, const std::string& out_dir) const {
    Run r("eval", seed);
    r.input("features", features);
    r.input("labels", labels);
    r.input("assignments", assignments);
    const gcd::GcdDataset data = load_dataset(features, labels);
    const auto clusters = gcd::decode_assignments(gcd::detail::read_file(assignments), assignments);
    if (clusters.size() != data.size()) {
      throw gcd::Error(gcd::ErrorKind::invalid_input, assignments + ": " + std::to_string(clusters.size()) +
                                                          " assignments for " + std::to_string(data.size()) +
                                                          " points");
    }
    std::vector<gcd::Label> y_pred;
    for (std::size_t i : data.unlabelled_indices()) y_pred.push_back(static_cast<gcd::Label>(clusters[i]));
    const gcd::AccReport acc = gcd::acc_report(data, y_pred);
    const auto out = prepare_out(out_dir);
    gcd::detail::write_file((out / "report.json").string(),
                            dump({{"manifest", r.manifest_core()}, {"acc", gcd::to_json(acc)}}));
    r.write_manifest(out);
    std::cout << "eval: acc all/old/new " << acc.acc_all << "/" << acc.acc_old << "/" << acc.acc_new << "\n";
    return 0;
  }
};

struct TrainToy {
  std::string features, labels;
  std::size_t hidden = 2048, proj = 128;
  gcd::ContrastiveConfig loss;
  gcd::TrainConfig train;
  bool no_normalize = false;

  int run(std::uint64_t seed, const std::string& out_dir) {
    Run r("train-toy", seed);
    loss.normalize = !no_normalize;
    train.seed = gcd::derive_seed(seed, "train-toy");
    r.params = {{"hidden", hidden},       {"proj", proj},           {"tau", loss.tau},
                {"lambda", loss.lambda},  {"normalize", loss.normalize}, {"epochs", train.epochs},
                {"lr", train.lr},         {"momentum", train.momentum},  {"batch", train.batch_size},
                {"noise", train.noise_scale}};
    r.input("features", features);
    r.input("labels", labels);
    const gcd::GcdDataset data = load_dataset(features, labels);
    gcd::ProjectionHead head(data.features().dim(), hidden, proj, gcd::derive_seed(seed, "head"));
    const gcd::TrainResult res = gcd::train_toy(data, head, loss, train);

    // The head file stores f32; embed with the stored values so the two agree.
    const gcd::FeatureMatrix flat([&] {
      gcd::Matrix m(1, head.parameters().size());
      for (std::size_t j = 0; j < m.cols(); ++j) m(0, j) = static_cast<float>(head.parameters()[j]);
      return m;
    }());
    head = gcd::ProjectionHead::from_parameters(head.input_dim(), hidden, proj,
                                                std::vector<double>(flat.values().begin(), flat.values().end()));

    const auto out = prepare_out(out_dir);
    std::string curve = "epoch,mean_loss\n";
    for (std::size_t e = 0; e < res.epoch_loss.size(); ++e) {
      curve += std::to_string(e) + ',' + gcd::detail::format_double(res.epoch_loss[e]) + '\n';
    }
    gcd::detail::write_file((out / "loss_curve.csv").string(), curve);
    gcd::save_features((out / "head.gcdf").string(), flat);
    gcd::detail::write_file((out / "head.json").string(), dump(head.shape_json(loss.normalize)));
    const gcd::FeatureFile src = gcd::load_features(features);
    gcd::save_features((out / "embedded.gcdf").string(), gcd::embed(head, data.features(), loss.normalize),
                       src.labels);
    r.write_manifest(out);
    std::cout << "train-toy: loss " << res.epoch_loss.front() << " -> " << res.epoch_loss.back() << " over "
              << res.epoch_loss.size() << " epochs\n";
    return 0;
  }
};

struct LossCheck {
  std::size_t cases = 50;
  double threshold = 1e-5;

  int run(std::uint64_t seed, const std::string& out_dir) const {
    Run r("loss-check", seed);
    r.params = {{"cases", cases}, {"threshold", threshold}};
    std::mt19937_64 rng(gcd::derive_seed(seed, "loss-check"));
    const double lambdas[] = {0.0, 0.35, 1.0};
    double worst = 0.0;
    std::size_t checked = 0;
    json rows = json::array();
    for (std::size_t c = 0; c < cases; ++c) {
      gcd::GradCheckCase gc;
      gc.images = std::uniform_int_distribution<std::size_t>(2, 8)(rng);
      gc.proj_dim = std::uniform_int_distribution<std::size_t>(2, 16)(rng);
      gc.config.lambda = lambdas[c % 3];
      gc.config.normalize = (c / 3) % 2 == 0;
      gc.config.tau = gc.config.normalize ? 0.1 : 1.0;
      gc.reduction = c % 2 ? gcd::Reduction::mean : gcd::Reduction::sum;
      gc.seed = rng();
      gcd::GradCheckResult res;
      try {
        res = gcd::check_head_gradient(gc);
      } catch (const gcd::Error& e) {
        // All-unlabelled draws have no supervised term when lambda > 0.
        if (e.kind() != gcd::ErrorKind::empty_supervision) throw;
        continue;
      }
      worst = std::max(worst, res.max_rel_error);
      checked += res.n_checked;
      rows.push_back({{"images", gc.images}, {"proj", gc.proj_dim}, {"lambda", gc.config.lambda},
                      {"normalize", gc.config.normalize}, {"max_rel_error", res.max_rel_error}});
    }
    const bool pass = worst < threshold;
    if (!out_dir.empty()) {
      const auto out = prepare_out(out_dir);
      gcd::detail::write_file(
          (out / "loss_check.json").string(),
          dump({{"manifest", r.manifest_core()}, {"max_rel_error", worst}, {"pass", pass}, {"cases", rows}}));
      r.write_manifest(out);
    }
    std::cout << "loss-check: " << rows.size() << " batches, " << checked << " parameters, max relative error "
              << worst << (pass ? " (pass)" : " (FAIL)") << "\n";
    return pass ? 0 : 1;
  }
};

struct ReportCmd {
  std::vector<std::string> dirs;
  std::string out_file;

  static std::optional<json> read_json(const fs::path& p) {
    if (!fs::exists(p)) return std::nullopt;
    return json::parse(gcd::detail::read_file(p.string()));
  }

  int run() const {
    std::ostringstream s;
    for (const auto& d : dirs) {
      const auto manifest = read_json(fs::path(d) / "manifest.json");
      if (!manifest) throw gcd::Error(gcd::ErrorKind::invalid_input, d + ": no manifest.json");
      const json& m = *manifest;
      // Directory name only and no timing, so reruns produce the same text.
      s << fs::path(d).lexically_normal().filename().string() << ": " << m.at("command").get<std::string>()
        << " (seed " << m.at("seed") << ")\n";
      for (const auto& [key, v] : m.at("params").items()) s << "  " << key << " = " << v.dump() << "\n";
      for (const auto& [role, v] : m.at("inputs").items()) {
        s << "  input " << role << ": " << v.at("file").get<std::string>() << " sha256 "
          << v.at("sha256").get<std::string>().substr(0, 16) << "\n";
      }
      if (auto rep = read_json(fs::path(d) / "report.json"); rep && rep->contains("acc")) {
        const json& a = rep->at("acc");
        s << "  acc_all " << a.at("acc_all") << ", acc_old " << a.at("acc_old") << ", acc_new " << a.at("acc_new")
          << "\n";
      }
      if (auto k = read_json(fs::path(d) / "k_summary.json")) {
        s << "  best_k " << k->at("best_k") << " (score " << k->at("best_score") << ", "
          << k->at("evals").size() << " evaluations)\n";
      }
      if (auto lc = read_json(fs::path(d) / "loss_check.json")) {
        s << "  max relative gradient error " << lc->at("max_rel_error") << "\n";
      }
      if (fs::exists(fs::path(d) / "loss_curve.csv")) {
        std::vector<std::string> lines;
        std::istringstream in(gcd::detail::read_file((fs::path(d) / "loss_curve.csv").string()));
        for (std::string line; std::getline(in, line);) lines.push_back(line);
        if (lines.size() > 1) s << "  loss first " << lines[1] << ", last " << lines.back() << "\n";
      }
    }
    std::cout << s.str();
    if (!out_file.empty()) gcd::detail::write_file(out_file, s.str());
    return 0;
  }
};

// ---------------------------------------------------------------------------
// --config support: flat key=value lines become --key=value arguments unless
// the key was given on the command line.

std::vector<std::string> apply_config(std::vector<std::string> args) {
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[i + 1];
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i) + 2);
      break;
    }
    if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
      break;
    }
  }
  if (path.empty()) return args;
  std::ifstream in(path);
  if (!in) throw CLI::ValidationError("--config", "cannot open " + path);
  std::size_t line_no = 0;
  for (std::string raw; std::getline(in, raw);) {
    ++line_no;
    const auto line = gcd::detail::trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw CLI::ValidationError("--config", path + ":" + std::to_string(line_no) + ": expected key=value");
    }
    const std::string key(gcd::detail::trim(line.substr(0, eq)));
    const std::string value(gcd::detail::trim(line.substr(eq + 1)));
    const std::string flag = "--" + key;
    const bool given = std::any_of(args.begin(), args.end(),
                                   [&](const std::string& a) { return a == flag || a.rfind(flag + "=", 0) == 0; });
    if (!given) args.push_back(flag + "=" + value);
  }
  return args;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Generalized category discovery toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", gcd::kVersion);

  std::uint64_t seed = 0;
  std::string out;
  auto common = [&](CLI::App* sub, bool needs_out = true) {
    sub->add_option("--seed", seed, "base seed; stage seeds are derived from it");
    auto* o = sub->add_option("--out", out, "output directory");
    if (needs_out) o->required();
  };

  GenData gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "synthetic Gaussian blobs plus a default split");
  gen_cmd->add_option("--classes", gen.classes);
  gen_cmd->add_option("--per-class", gen.per_class);
  gen_cmd->add_option("--dim", gen.dim);
  gen_cmd->add_option("--sep", gen.sep, "minimum distance between class centres");
  gen_cmd->add_option("--spread", gen.spread, "per-class standard deviation");
  gen.split.add(gen_cmd);
  common(gen_cmd);

  SplitCmd split;
  auto* split_cmd = app.add_subcommand("split", "choose labelled classes and images");
  split_cmd->add_option("--features", split.features)->required()->check(CLI::ExistingFile);
  split.split.add(split_cmd);
  common(split_cmd);

  ClusterCmd cluster;
  auto* cluster_cmd = app.add_subcommand("cluster", "plain or semi-supervised k-means");
  cluster_cmd->add_option("--features", cluster.features)->required()->check(CLI::ExistingFile);
  cluster_cmd->add_option("--labels", cluster.labels)->check(CLI::ExistingFile);
  cluster_cmd->add_option("--mode", cluster.mode)->check(CLI::IsMember({"plain", "semi-sup"}));
  cluster_cmd->add_option("--k", cluster.k)->required();
  cluster_cmd->add_option("--restarts", cluster.restarts, "default 10 for plain, 1 for semi-sup");
  cluster_cmd->add_option("--max-iters", cluster.max_iters);
  cluster_cmd->add_option("--tol", cluster.tol);
  cluster_cmd->add_option("--seeding-trials", cluster.seeding_trials, "k-means++ candidates per step, 0 = auto");
  cluster_cmd->add_flag("--normalize", cluster.normalize, "L2-normalise features first");
  cluster_cmd->add_flag("--no-eval", cluster.no_eval, "skip the accuracy report");
  common(cluster_cmd);

  EstimateK est;
  est.cfg.k_min = 2;
  est.cfg.k_max = 100;
  auto* est_cmd = app.add_subcommand("estimate-k", "estimate the number of classes");
  est_cmd->add_option("--features", est.features)->required()->check(CLI::ExistingFile);
  est_cmd->add_option("--labels", est.labels)->required()->check(CLI::ExistingFile);
  est_cmd->add_option("--k-min", est.cfg.k_min);
  est_cmd->add_option("--k-max", est.cfg.k_max);
  est_cmd->add_option("--max-evals", est.cfg.max_evals);
  est_cmd->add_option("--restarts-per-eval", est.cfg.restarts_per_eval);
  est_cmd->add_option("--kmeans-restarts", est.cfg.score.kmeans_restarts, "best-of-n inside each scored run");
  est_cmd->add_option("--seeding-trials", est.cfg.score.seeding_trials);
  est_cmd->add_flag("--scan", est.scan, "also score every k and write a gnuplot curve");
  common(est_cmd);

  EvalCmd eval;
  auto* eval_cmd = app.add_subcommand("eval", "accuracy of an assignments file");
  eval_cmd->add_option("--features", eval.features)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--labels", eval.labels)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--assignments", eval.assignments)->required()->check(CLI::ExistingFile);
  common(eval_cmd);

  TrainToy train;
  auto* train_cmd = app.add_subcommand("train-toy", "contrastive fine-tuning of a projection head");
  train_cmd->add_option("--features", train.features)->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--labels", train.labels)->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--hidden", train.hidden);
  train_cmd->add_option("--proj", train.proj);
  train_cmd->add_option("--tau", train.loss.tau);
  train_cmd->add_option("--lambda", train.loss.lambda);
  train_cmd->add_flag("--no-normalize", train.no_normalize, "raw dot products instead of cosine");
  train_cmd->add_option("--epochs", train.train.epochs);
  train_cmd->add_option("--lr", train.train.lr);
  train_cmd->add_option("--momentum", train.train.momentum);
  train_cmd->add_option("--batch", train.train.batch_size);
  train_cmd->add_option("--noise", train.train.noise_scale, "view jitter, relative to the feature std");
  common(train_cmd);

  LossCheck check;
  auto* check_cmd = app.add_subcommand("loss-check", "finite-difference check of the loss gradients");
  check_cmd->add_option("--cases", check.cases);
  check_cmd->add_option("--threshold", check.threshold);
  common(check_cmd, false);

  ReportCmd report;
  auto* report_cmd = app.add_subcommand("report", "summarise run directories");
  report_cmd->add_option("dirs", report.dirs, "directories holding manifest.json")->required();
  report_cmd->add_option("--out", report.out_file, "also write the summary to this file");

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = apply_config(std::move(args));
    std::reverse(args.begin(), args.end());  // CLI11 consumes from the back
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*gen_cmd) return gen.run(seed, out);
    if (*split_cmd) return split.run(seed, out);
    if (*cluster_cmd) return cluster.run(seed, out);
    if (*est_cmd) return est.run(seed, out);
    if (*eval_cmd) return eval.run(seed, out);
    if (*train_cmd) return train.run(seed, out);
    if (*check_cmd) return check.run(seed, out);
    if (*report_cmd) return report.run();
  } catch (const gcd::Error& e) {
    std::cerr << "gcd: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "gcd: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
