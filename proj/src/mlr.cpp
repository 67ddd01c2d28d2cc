#include "esigal/mlr.hpp"

#include <stdexcept>
#include <string>

namespace esigal {

namespace {

template <typename Derived>
MlrModel fit(const Eigen::MatrixBase<Derived>& x, const Eigen::Ref<const Matrix>& y) {
  if (x.rows() != y.rows()) throw std::invalid_argument("X and Y row counts differ");
  if (x.rows() == 0) throw std::invalid_argument("mLR needs at least one sample");
  if (!x.allFinite() || !y.allFinite()) throw std::invalid_argument("mLR inputs contain non-finite values");
  const Index p = x.cols();
  Matrix a(x.rows(), p + 1);
  a.leftCols(p) = x;
  a.col(p).setOnes();
  const Eigen::CompleteOrthogonalDecomposition<Matrix> cod(a);
  const Matrix beta = cod.solve(y);
  return {beta.topRows(p), beta.row(p).transpose()};
}

template <typename Derived>
Matrix predict(const MlrModel& m, const Eigen::MatrixBase<Derived>& x) {
  if (x.cols() != m.coef.rows())
    throw std::invalid_argument("mLR expects " + std::to_string(m.coef.rows()) + " features, got " +
                                std::to_string(x.cols()));
  Matrix out = x * m.coef;
  out.rowwise() += m.intercept.transpose();
  return out;
}

}  // namespace

MlrModel mlr_fit(const Matrix& x, const Matrix& y) { return fit(x, y); }
MlrModel mlr_fit(const RowMatrix& x, const Matrix& y) { return fit(x, y); }

Matrix mlr_predict(const MlrModel& m, const Matrix& x) { return predict(m, x); }
Matrix mlr_predict(const MlrModel& m, const RowMatrix& x) { return predict(m, x); }

}  // namespace esigal
