#include "ltla/monarch.hpp"

#include <algorithm>
#include <cmath>

#include "ltla/errors.hpp"
#include "ltla/simd.hpp"

namespace ltla {

MonarchMatrix::MonarchMatrix(std::size_t rows, std::size_t cols, std::size_t block, std::vector<double> left,
                             std::vector<double> right, std::vector<double> row_scale)
    : rows_(rows), cols_(cols), block_(block), left_(std::move(left)), right_(std::move(right)) {
  check_shape();
  for (double v : left_)
    if (!(v >= 0.0)) throw DomainError("MonarchMatrix: negative or NaN left block entry");
  for (double v : right_)
    if (!(v >= 0.0)) throw DomainError("MonarchMatrix: negative or NaN right block entry");
  left_params_.resize(left_.size());
  right_params_.resize(right_.size());
  std::transform(left_.begin(), left_.end(), left_params_.begin(), [](double v) { return std::log(v); });
  std::transform(right_.begin(), right_.end(), right_params_.begin(), [](double v) { return std::log(v); });
  if (row_scale.empty()) row_scale.assign(rows_, 1.0);
  if (row_scale.size() != rows_) throw DomainError("MonarchMatrix: row_scale size mismatch");
  row_scale_ = std::move(row_scale);
  build_perm();
}

MonarchMatrix MonarchMatrix::from_params(std::size_t rows, std::size_t cols, std::size_t block,
                                         std::vector<double> left_params, std::vector<double> right_params) {
  MonarchMatrix m;
  m.rows_ = rows;
  m.cols_ = cols;
  m.block_ = block;
  m.left_.assign(left_params.size(), 1.0);
  m.right_.assign(right_params.size(), 1.0);
  m.check_shape();
  m.build_perm();
  m.left_params_ = std::move(left_params);
  m.right_params_ = std::move(right_params);
  m.row_scale_.assign(rows, 1.0);
  return m.row_normalize();
}

void MonarchMatrix::check_shape() const {
  if (rows_ == 0 || cols_ == 0 || block_ == 0) throw DomainError("MonarchMatrix: empty shape");
  if (rows_ % block_ != 0 || cols_ % block_ != 0)
    throw DomainError("MonarchMatrix: rows and cols must be divisible by the block size");
  const std::size_t k = rows_ / block_;
  if (left_.size() != k * block_ * block_) throw DomainError("MonarchMatrix: left factor has wrong size");
  if (right_.size() != block_ * k * (cols_ / block_)) throw DomainError("MonarchMatrix: right factor has wrong size");
}

void MonarchMatrix::build_perm() {
  const std::size_t k = rows_ / block_;
  perm_.resize(rows_);
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t j = 0; j < block_; ++j) perm_[a * block_ + j] = j * k + a;
}

std::vector<double> MonarchMatrix::unscaled_right_mul(std::span<const double> x) const {
  if (x.size() != cols_) throw DomainError("MonarchMatrix::right_mul: dimension mismatch");
  const auto& kern = simd::active();
  const std::size_t k = rows_ / block_;
  const std::size_t cw = cols_ / block_;
  std::vector<double> inner(rows_);
  for (std::size_t c = 0; c < block_; ++c)
    kern.gemv(right_.data() + c * k * cw, k, cw, x.data() + c * cw, inner.data() + c * k);
  std::vector<double> shuffled(rows_);
  for (std::size_t i = 0; i < rows_; ++i) shuffled[i] = inner[perm_[i]];
  std::vector<double> y(rows_);
  for (std::size_t a = 0; a < k; ++a)
    kern.gemv(left_.data() + a * block_ * block_, block_, block_, shuffled.data() + a * block_,
              y.data() + a * block_);
  return y;
}

std::vector<double> MonarchMatrix::right_mul(std::span<const double> x) const {
  std::vector<double> y = unscaled_right_mul(x);
  for (std::size_t i = 0; i < rows_; ++i) y[i] /= row_scale_[i];
  return y;
}

std::vector<double> MonarchMatrix::left_mul(std::span<const double> x) const {
  if (x.size() != rows_) throw DomainError("MonarchMatrix::left_mul: dimension mismatch");
  const auto& kern = simd::active();
  const std::size_t k = rows_ / block_;
  const std::size_t cw = cols_ / block_;
  std::vector<double> u(rows_);
  for (std::size_t i = 0; i < rows_; ++i) u[i] = x[i] / row_scale_[i];
  std::vector<double> shuffled(rows_);
  for (std::size_t a = 0; a < k; ++a)
    kern.gemv_t(left_.data() + a * block_ * block_, block_, block_, u.data() + a * block_,
                shuffled.data() + a * block_);
  std::vector<double> inner(rows_);
  for (std::size_t i = 0; i < rows_; ++i) inner[perm_[i]] = shuffled[i];
  std::vector<double> y(cols_);
  for (std::size_t c = 0; c < block_; ++c)
    kern.gemv_t(right_.data() + c * k * cw, k, cw, inner.data() + c * k, y.data() + c * cw);
  return y;
}

DenseMatrix MonarchMatrix::materialize() const {
  if (rows_ * cols_ > kMaterializeLimit)
    throw SizeGuardError("MonarchMatrix::materialize: " + std::to_string(rows_) + "x" + std::to_string(cols_) +
                         " exceeds the 2^22 entry guard");
  const std::size_t k = rows_ / block_;
  const std::size_t cw = cols_ / block_;
  DenseMatrix left(rows_, rows_);
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t i = 0; i < block_; ++i)
      for (std::size_t j = 0; j < block_; ++j)
        left(a * block_ + i, a * block_ + j) = left_[(a * block_ + i) * block_ + j];
  DenseMatrix shuffle(rows_, rows_);
  for (std::size_t i = 0; i < rows_; ++i) shuffle(i, perm_[i]) = 1.0;
  DenseMatrix right(rows_, cols_);
  for (std::size_t c = 0; c < block_; ++c)
    for (std::size_t r = 0; r < k; ++r)
      for (std::size_t j = 0; j < cw; ++j) right(c * k + r, c * cw + j) = right_[(c * k + r) * cw + j];

  auto naive = [](const DenseMatrix& a, const DenseMatrix& b) {
    DenseMatrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
      for (std::size_t m = 0; m < a.cols(); ++m) {
        const double v = a(i, m);
        if (v == 0.0) continue;
        for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += v * b(m, j);
      }
    return out;
  };
  DenseMatrix out = naive(naive(left, shuffle), right);
  for (std::size_t i = 0; i < rows_; ++i)
    for (std::size_t j = 0; j < cols_; ++j) out(i, j) /= row_scale_[i];
  return out;
}

MonarchMatrix MonarchMatrix::row_normalize() const {
  MonarchMatrix out = *this;
  out.clamped_ = false;
  auto expo = [&out](double p) {
    if (!(p >= -kParamClamp && p <= kParamClamp)) {
      out.clamped_ = true;
      p = std::isnan(p) ? 0.0 : std::clamp(p, -kParamClamp, kParamClamp);
    }
    return std::exp(p);
  };
  std::transform(left_params_.begin(), left_params_.end(), out.left_.begin(), expo);
  std::transform(right_params_.begin(), right_params_.end(), out.right_.begin(), expo);
  const std::vector<double> ones(cols_, 1.0);
  out.row_scale_ = out.unscaled_right_mul(ones);
  return out;
}

void MonarchMatrix::set_params(std::vector<double> left_params, std::vector<double> right_params) {
  if (left_params.size() != left_.size() || right_params.size() != right_.size())
    throw DomainError("MonarchMatrix::set_params: size mismatch");
  left_params_ = std::move(left_params);
  right_params_ = std::move(right_params);
  *this = row_normalize();
}

}  // namespace ltla
