#pragma once

// Shared building blocks: error type, dense matrices, seed derivation and a
// small deterministic parallel-for.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

namespace gcd {

using Label = std::int64_t;

inline constexpr Label kNoLabel = -1;

enum class ErrorKind {
  invalid_spec,
  invalid_config,
  invalid_input,
  invalid_cost,
  format,
  generation,
  evaluation_unavailable,
  empty_supervision,
  numerical_overflow,
  training_diverged,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_spec: return "invalid-spec";
    case ErrorKind::invalid_config: return "invalid-config";
    case ErrorKind::invalid_input: return "invalid-input";
    case ErrorKind::invalid_cost: return "invalid-cost";
    case ErrorKind::format: return "format";
    case ErrorKind::generation: return "generation";
    case ErrorKind::evaluation_unavailable: return "evaluation-unavailable";
    case ErrorKind::empty_supervision: return "empty-supervision";
    case ErrorKind::numerical_overflow: return "numerical-overflow";
    case ErrorKind::training_diverged: return "training-diverged";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Row-major dense matrix of doubles. May be empty (zero rows).
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
      : rows_(rows), cols_(cols), data_(std::move(values)) {
    if (data_.size() != rows_ * cols_) {
      throw Error(ErrorKind::invalid_input, "matrix payload size does not match shape");
    }
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return rows_ == 0; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<const double> values() const noexcept { return data_; }
  std::span<double> values() noexcept { return data_; }

  void append_row(std::span<const double> r) {
    if (rows_ == 0 && cols_ == 0) cols_ = r.size();
    if (r.size() != cols_) throw Error(ErrorKind::invalid_input, "row length mismatch");
    data_.insert(data_.end(), r.begin(), r.end());
    ++rows_;
  }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Immutable N x D embedding matrix. Every value is finite and N, D >= 1.
class FeatureMatrix {
 public:
  explicit FeatureMatrix(Matrix m) : m_(std::move(m)) {
    if (m_.rows() == 0 || m_.cols() == 0) {
      throw Error(ErrorKind::invalid_input, "feature matrix needs at least one point and one dimension");
    }
    const auto v = m_.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!std::isfinite(v[i])) {
        throw Error(ErrorKind::invalid_input, "non-finite feature value at point " +
                                                  std::to_string(i / m_.cols()) + ", dim " +
                                                  std::to_string(i % m_.cols()));
      }
    }
  }
  FeatureMatrix(std::size_t n_points, std::size_t dim, std::vector<double> values)
      : FeatureMatrix(Matrix(n_points, dim, std::move(values))) {}

  std::size_t n_points() const noexcept { return m_.rows(); }
  std::size_t dim() const noexcept { return m_.cols(); }
  double operator()(std::size_t r, std::size_t c) const { return m_(r, c); }
  std::span<const double> row(std::size_t r) const { return m_.row(r); }
  std::span<const double> values() const noexcept { return m_.values(); }
  const Matrix& matrix() const noexcept { return m_; }

  bool operator==(const FeatureMatrix&) const = default;

 private:
  Matrix m_;
};

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double d = a[j] - b[j];
    s += d * d;
  }
  return s;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) s += a[j] * b[j];
  return s;
}

/// Returns a copy with every row scaled to unit L2 norm. Zero rows stay zero.
inline FeatureMatrix l2_normalize_rows(const FeatureMatrix& f) {
  Matrix out = f.matrix();
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    const double n = std::sqrt(dot(r, r));
    if (n > 0.0) {
      for (double& x : r) x /= n;
    }
  }
  return FeatureMatrix(std::move(out));
}

inline Matrix select_rows(const Matrix& m, std::span<const std::size_t> idx) {
  Matrix out(idx.size(), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy(m.row(idx[i]).begin(), m.row(idx[i]).end(), out.row(i).begin());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Seeds. Every stage seed is splitmix64(seed ^ fnv1a64(stage)), so stages can
// be reordered without perturbing each other's random streams.

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view stage) {
  return splitmix64(seed ^ fnv1a64(stage));
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  return splitmix64(seed ^ splitmix64(index + 0x5851f42d4c957f2dULL));
}

// ---------------------------------------------------------------------------
// Parallelism. GCD_THREADS caps the worker count (0 or unset = hardware).
// parallel_for hands out contiguous index ranges; callers only write to
// per-index slots, so results never depend on the thread count.

inline std::size_t thread_count() {
  std::size_t n = 0;
  if (const char* env = std::getenv("GCD_THREADS")) n = std::strtoul(env, nullptr, 10);
  if (n == 0) n = std::max(1u, std::thread::hardware_concurrency());
  return n;
}

template <class Fn>
void parallel_for(std::size_t n, Fn&& fn, std::size_t min_chunk = 256) {
  const std::size_t workers = std::min(thread_count(), std::max<std::size_t>(1, n / min_chunk));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t lo = w * chunk;
    const std::size_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &fn] {
      for (std::size_t i = lo; i < hi; ++i) fn(i);
    });
  }
}

}  // namespace gcd
