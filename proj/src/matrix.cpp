#include "ltla/matrix.hpp"

#include "ltla/errors.hpp"
#include "ltla/simd.hpp"

namespace ltla {

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) throw DomainError("DenseMatrix: data size does not match shape");
}

DenseMatrix DenseMatrix::identity(std::size_t n) {
  DenseMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

std::vector<double> DenseMatrix::right_mul(std::span<const double> x) const {
  if (x.size() != cols_) throw DomainError("DenseMatrix::right_mul: dimension mismatch");
  std::vector<double> y(rows_);
  simd::active().gemv(data_.data(), rows_, cols_, x.data(), y.data());
  return y;
}

std::vector<double> DenseMatrix::left_mul(std::span<const double> x) const {
  if (x.size() != rows_) throw DomainError("DenseMatrix::left_mul: dimension mismatch");
  std::vector<double> y(cols_);
  simd::active().gemv_t(data_.data(), rows_, cols_, x.data(), y.data());
  return y;
}

DenseMatrix DenseMatrix::operator*(const DenseMatrix& rhs) const {
  if (cols_ != rhs.rows_) throw DomainError("DenseMatrix::operator*: dimension mismatch");
  DenseMatrix out(rows_, rhs.cols_);
  const auto& k = simd::active();
  for (std::size_t r = 0; r < rows_; ++r) {
    for (std::size_t m = 0; m < cols_; ++m) {
      const double a = (*this)(r, m);
      if (a != 0.0) k.axpy(a, rhs.data_.data() + m * rhs.cols_, out.data_.data() + r * rhs.cols_, rhs.cols_);
    }
  }
  return out;
}

DenseMatrix DenseMatrix::transpose() const {
  DenseMatrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

}  // namespace ltla
