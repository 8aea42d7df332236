#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ltla/matrix.hpp"

namespace ltla {

/// Monarch-factored nonnegative operator M = diag(1/scale) * L * P * R.
///
/// Shapes, for rows R, cols C and block size b (both R and C divisible by b):
///   - L is block diagonal with k = R/b dense b x b blocks (R x R overall);
///   - P is the perfect shuffle of the inner dimension R: inner slot a*b + j
///     reads position j*k + a;
///   - R is block diagonal with b dense blocks of shape k x (C/b).
/// With R = C = b^2 both factors hold b^3 = h^{3/2} entries, and an H x V
/// emission costs h^{1/2} V, so a matvec is O(h^{3/2} + h^{1/2} V).
///
/// Entries are exp(params). `row_normalize()` recomputes entries from params
/// and caches the exact row sums in `row_scale`, which makes the composite
/// row-stochastic without densifying it.
class MonarchMatrix {
 public:
  MonarchMatrix() = default;

  /// Builds from explicit nonnegative block entries. params = log(entries);
  /// row_scale defaults to all ones (i.e. not normalized).
  MonarchMatrix(std::size_t rows, std::size_t cols, std::size_t block, std::vector<double> left,
                std::vector<double> right, std::vector<double> row_scale = {});

  /// Entries exp(params), row-normalized.
  static MonarchMatrix from_params(std::size_t rows, std::size_t cols, std::size_t block,
                                   std::vector<double> left_params, std::vector<double> right_params);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t block() const noexcept { return block_; }
  std::size_t left_blocks() const noexcept { return rows_ / block_; }
  std::size_t inner() const noexcept { return rows_; }
  /// Rows of each right block (= number of left blocks).
  std::size_t right_block_rows() const noexcept { return rows_ / block_; }
  std::size_t right_block_cols() const noexcept { return cols_ / block_; }

  std::span<const double> left() const noexcept { return left_; }
  std::span<const double> right() const noexcept { return right_; }
  std::span<const double> left_params() const noexcept { return left_params_; }
  std::span<const double> right_params() const noexcept { return right_params_; }
  std::span<const double> row_scale() const noexcept { return row_scale_; }
  const std::vector<std::size_t>& perm() const noexcept { return perm_; }

  /// True if any parameter was clamped to +-30 by the last row_normalize.
  bool clamped() const noexcept { return clamped_; }

  /// y = M x  (x has cols() entries)
  std::vector<double> right_mul(std::span<const double> x) const;
  /// y = x^T M  (x has rows() entries)
  std::vector<double> left_mul(std::span<const double> x) const;

  /// Dense product, built with plain loops (test oracle). Refuses R*C > 2^22.
  DenseMatrix materialize() const;

  MonarchMatrix row_normalize() const;

  /// Replaces parameters; entries and scale are recomputed (normalized).
  void set_params(std::vector<double> left_params, std::vector<double> right_params);

  std::size_t param_count() const noexcept { return left_.size() + right_.size(); }

  static constexpr std::size_t kMaterializeLimit = std::size_t{1} << 22;
  static constexpr double kParamClamp = 30.0;

 private:
  void check_shape() const;
  void build_perm();
  std::vector<double> unscaled_right_mul(std::span<const double> x) const;

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::size_t block_ = 1;
  std::vector<double> left_;
  std::vector<double> right_;
  std::vector<double> left_params_;
  std::vector<double> right_params_;
  std::vector<double> row_scale_;
  std::vector<std::size_t> perm_;
  bool clamped_ = false;
};

}  // namespace ltla
