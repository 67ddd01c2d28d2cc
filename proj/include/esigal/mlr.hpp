#pragma once

#include "esigal/types.hpp"
#include "esigal/windowing.hpp"

#include <Eigen/Dense>

namespace esigal {

/// Affine map Y = X * coef + intercept.
struct MlrModel {
  Matrix coef;       // P x 3
  Vector intercept;  // 3
};

/// Minimum-norm least squares on [X, 1] via complete orthogonal decomposition.
/// Rows of X are samples. Throws on shape mismatch or non-finite input.
MlrModel mlr_fit(const Matrix& x, const Matrix& y);
MlrModel mlr_fit(const RowMatrix& x, const Matrix& y);

Matrix mlr_predict(const MlrModel& m, const Matrix& x);
Matrix mlr_predict(const MlrModel& m, const RowMatrix& x);

}  // namespace esigal
