#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <utility>
#include <vector>

#include "tubelink/error.hpp"

namespace tubelink {

// Row-major rows×cols cost matrix; rows are predictions, columns targets.
struct CostMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  CostMatrix() = default;
  CostMatrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
  CostMatrix(std::size_t r, std::size_t c, std::vector<double> values) : rows(r), cols(c), data(std::move(values)) {
    if (data.size() != r * c) throw ShapeError("CostMatrix: value count mismatch");
  }

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

struct Assignment {
  std::vector<std::pair<int, int>> pairs;  // (row, col), ascending row
  std::vector<int> unmatched_rows;
  double total_cost = 0.0;

  // col index per row, -1 when unmatched.
  std::vector<int> row_to_col(std::size_t rows) const {
    std::vector<int> out(rows, -1);
    for (auto [r, c] : pairs) out[static_cast<std::size_t>(r)] = c;
    return out;
  }
};

namespace detail {

// Shortest augmenting path (Jonker-Volgenant style potentials) for n <= m.
// Returns the column assigned to each row.
inline std::vector<int> solve_assignment(std::size_t n, std::size_t m, const std::vector<double>& a) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, kInf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a[(i0 - 1) * m + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
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
    } while (j0 != 0);
  }
  std::vector<int> row_col(n, -1);
  for (std::size_t j = 1; j <= m; ++j) {
    if (p[j] != 0) row_col[p[j] - 1] = static_cast<int>(j - 1);
  }
  return row_col;
}

}  // namespace detail

// Minimum-cost one-to-one assignment. Every column is matched when
// rows >= cols, every row otherwise.
inline Assignment hungarian(const CostMatrix& cost) {
  for (double c : cost.data) {
    if (!std::isfinite(c)) throw Error("hungarian: cost matrix has non-finite entries");
  }
  Assignment out;
  if (cost.rows == 0 || cost.cols == 0) {
    for (std::size_t r = 0; r < cost.rows; ++r) out.unmatched_rows.push_back(static_cast<int>(r));
    return out;
  }
  std::vector<int> row_col(cost.rows, -1);
  if (cost.rows <= cost.cols) {
    row_col = detail::solve_assignment(cost.rows, cost.cols, cost.data);
  } else {
    std::vector<double> t(cost.rows * cost.cols);
    for (std::size_t r = 0; r < cost.rows; ++r)
      for (std::size_t c = 0; c < cost.cols; ++c) t[c * cost.rows + r] = cost(r, c);
    const auto col_row = detail::solve_assignment(cost.cols, cost.rows, t);
    for (std::size_t c = 0; c < cost.cols; ++c) row_col[static_cast<std::size_t>(col_row[c])] = static_cast<int>(c);
  }
  for (std::size_t r = 0; r < cost.rows; ++r) {
    if (row_col[r] < 0) {
      out.unmatched_rows.push_back(static_cast<int>(r));
    } else {
      out.pairs.emplace_back(static_cast<int>(r), row_col[r]);
      out.total_cost += cost(r, static_cast<std::size_t>(row_col[r]));
    }
  }
  return out;
}

}  // namespace tubelink
