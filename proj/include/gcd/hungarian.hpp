#pragma once

// Minimum-cost assignment (Hungarian / Kuhn-Munkres with potentials).

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "gcd/common.hpp"

namespace gcd {

class CostMatrix {
 public:
  CostMatrix(std::size_t rows, std::size_t cols, std::vector<double> cost)
      : rows_(rows), cols_(cols), cost_(std::move(cost)) {
    if (rows_ == 0 || cols_ == 0) throw Error(ErrorKind::invalid_cost, "cost matrix must be non-empty");
    if (cost_.size() != rows_ * cols_) throw Error(ErrorKind::invalid_cost, "cost payload size mismatch");
    for (double c : cost_) {
      if (!std::isfinite(c)) throw Error(ErrorKind::invalid_cost, "non-finite cost entry");
    }
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  double operator()(std::size_t r, std::size_t c) const { return cost_[r * cols_ + c]; }

 private:
  std::size_t rows_, cols_;
  std::vector<double> cost_;
};

struct Assignment {
  std::vector<std::optional<std::size_t>> row_to_col;  // nullopt: row left unmatched
  double total_cost = 0.0;
};

namespace detail {

// Among all perfect matchings using only zero-reduced-cost ("tight") edges,
// rewrites `match` into the lexicographically smallest one (by row order).
// Every such matching is optimal by complementary slackness.
inline void lex_smallest_tight_matching(const std::vector<std::vector<char>>& tight, std::vector<std::size_t>& match) {
  const std::size_t n = match.size();
  std::vector<std::size_t> owner(n);
  for (std::size_t r = 0; r < n; ++r) owner[match[r]] = r;
  std::vector<char> fixed_col(n, 0);
  std::vector<std::size_t> parent_col(n);
  std::vector<char> seen_col(n);
  std::vector<std::size_t> queue;

  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < match[r]; ++c) {
      if (!tight[r][c] || fixed_col[c]) continue;
      // Try to rematch owner[c] (and onwards) so that column match[r] is freed.
      const std::size_t target = match[r];
      std::fill(seen_col.begin(), seen_col.end(), 0);
      queue.assign(1, owner[c]);
      seen_col[c] = 1;
      parent_col[c] = n;
      std::size_t found = n;
      for (std::size_t qi = 0; qi < queue.size() && found == n; ++qi) {
        const std::size_t row = queue[qi];
        const std::size_t via = match[row];
        for (std::size_t c2 = 0; c2 < n; ++c2) {
          if (!tight[row][c2] || seen_col[c2] || fixed_col[c2]) continue;
          seen_col[c2] = 1;
          parent_col[c2] = via;
          if (c2 == target) {
            found = c2;
            break;
          }
          queue.push_back(owner[c2]);
        }
      }
      if (found == n) continue;
      // Walk back: each column on the path is taken over by the row that owned
      // its parent column.
      for (std::size_t col = found; col != c;) {
        const std::size_t prev = parent_col[col];
        const std::size_t row = owner[prev];
        match[row] = col;
        owner[col] = row;
        col = prev;
      }
      match[r] = c;
      owner[c] = r;
      break;
    }
    fixed_col[match[r]] = 1;
  }
}

}  // namespace detail

/// Returns a minimum-cost injective assignment of min(rows, cols) pairs.
/// Rectangular inputs are padded to square with zero-cost dummies. Among equal
/// optima the lexicographically smallest row->col mapping is returned.
inline Assignment hungarian(const CostMatrix& cost) {
  const std::size_t n = std::max(cost.rows(), cost.cols());
  auto a = [&](std::size_t i, std::size_t j) {
    return (i < cost.rows() && j < cost.cols()) ? cost(i, j) : 0.0;
  };

  // 1-indexed potentials formulation, O(n^3).
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }

  std::vector<std::size_t> match(n);
  for (std::size_t j = 1; j <= n; ++j) match[p[j] - 1] = j - 1;

  double scale = 1.0;
  for (std::size_t i = 0; i < cost.rows(); ++i) {
    for (std::size_t j = 0; j < cost.cols(); ++j) scale = std::max(scale, std::abs(cost(i, j)));
  }
  const double eps = 1e-9 * scale;
  std::vector<std::vector<char>> tight(n, std::vector<char>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) tight[i][j] = std::abs(a(i, j) - u[i + 1] - v[j + 1]) <= eps;
  }
  detail::lex_smallest_tight_matching(tight, match);

  Assignment out;
  out.row_to_col.assign(cost.rows(), std::nullopt);
  for (std::size_t i = 0; i < cost.rows(); ++i) {
    if (match[i] < cost.cols()) {
      out.row_to_col[i] = match[i];
      out.total_cost += cost(i, match[i]);
    }
  }
  return out;
}

}  // namespace gcd
