#pragma once

#include <Eigen/Dense>

namespace reachlab {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
// Weight-space point. Dimension is fixed per landscape.
using WeightVector = Eigen::VectorXd;

// Eigenvalues of a symmetric matrix in ascending order.
// Throws NumericalError if the solver fails or the input is not finite.
Vector symmetric_eigenvalues(const Matrix& m);

bool is_symmetric(const Matrix& m, double tol);

}  // namespace reachlab
