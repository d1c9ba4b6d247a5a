#include "ets/assignment.hpp"

#include <cmath>
#include <limits>

#include "ets/errors.hpp"

namespace ets {

std::vector<int> solve_assignment(const Eigen::MatrixXd& cost) {
  const int n = static_cast<int>(cost.rows());
  if (cost.cols() != n) throw StructuralError("solve_assignment: cost matrix must be square");
  if (n == 0) return {};
  if (!cost.allFinite()) throw NumericError("solve_assignment: non-finite costs");

  constexpr double inf = std::numeric_limits<double>::infinity();
  // 1-based with a virtual row/column 0, the classic Hungarian layout.
  std::vector<double> row_pot(n + 1, 0.0), col_pot(n + 1, 0.0);
  std::vector<int> matched_row(n + 1, 0);  // matched_row[col] = row occupying col
  std::vector<int> path(n + 1, 0);

  for (int row = 1; row <= n; ++row) {
    matched_row[0] = row;
    int col0 = 0;
    std::vector<double> min_slack(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[col0] = true;
      const int row0 = matched_row[col0];
      double delta = inf;
      int col1 = -1;
      for (int col = 1; col <= n; ++col) {
        if (used[col]) continue;
        const double slack = cost(row0 - 1, col - 1) - row_pot[row0] - col_pot[col];
        if (slack < min_slack[col]) {
          min_slack[col] = slack;
          path[col] = col0;
        }
        if (min_slack[col] < delta) {
          delta = min_slack[col];
          col1 = col;
        }
      }
      for (int col = 0; col <= n; ++col) {
        if (used[col]) {
          row_pot[matched_row[col]] += delta;
          col_pot[col] -= delta;
        } else {
          min_slack[col] -= delta;
        }
      }
      col0 = col1;
    } while (matched_row[col0] != 0);
    // Augment along the alternating path.
    while (col0 != 0) {
      const int col1 = path[col0];
      matched_row[col0] = matched_row[col1];
      col0 = col1;
    }
  }

  std::vector<int> row_to_col(n, -1);
  for (int col = 1; col <= n; ++col)
    if (matched_row[col] != 0) row_to_col[matched_row[col] - 1] = col - 1;
  return row_to_col;
}

double assignment_cost(const Eigen::MatrixXd& cost, const std::vector<int>& row_to_col) {
  double total = 0.0;
  for (std::size_t r = 0; r < row_to_col.size(); ++r)
    total += cost(static_cast<Eigen::Index>(r), row_to_col[r]);
  return total;
}

double wasserstein2(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw StructuralError("wasserstein2: clouds must have matching shapes");
  const Eigen::Index count = a.cols();
  Eigen::MatrixXd cost(count, count);
  for (Eigen::Index i = 0; i < count; ++i)
    for (Eigen::Index j = 0; j < count; ++j)
      cost(i, j) = (a.col(i) - b.col(j)).squaredNorm();
  const auto assignment = solve_assignment(cost);
  return std::sqrt(assignment_cost(cost, assignment) / static_cast<double>(count));
}

}  // namespace ets
