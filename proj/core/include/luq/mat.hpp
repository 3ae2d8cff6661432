#pragma once

#include <Eigen/Dense>

namespace luq {

// Row-major f32 matrix; rows are tokens, columns are channels. Weights are
// stored [out, in] and applied as y = x * W^T.
using Mat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Matd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace luq
