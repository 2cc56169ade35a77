// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

namespace leafbench {

// Row-major so that a flat parameter slice maps onto a matrix in the same
// order the checkpoint manifest lists it.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::RowVectorXd;
using MatrixMap = Eigen::Map<Matrix>;
using ConstMatrixMap = Eigen::Map<const Matrix>;

}  // namespace leafbench
