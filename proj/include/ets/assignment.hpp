#pragma once

#include <vector>

#include <Eigen/Dense>

namespace ets {

// Exact solution of the square linear assignment problem by shortest
// augmenting paths with dual potentials, O(n^3). Returns the column assigned
// to each row.
std::vector<int> solve_assignment(const Eigen::MatrixXd& cost);

double assignment_cost(const Eigen::MatrixXd& cost, const std::vector<int>& row_to_col);

// 2-Wasserstein distance between two empirical measures with equal particle
// counts (columns of a and b), uniform weights, squared-Euclidean cost.
double wasserstein2(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

}  // namespace ets
