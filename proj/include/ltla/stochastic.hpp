#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "ltla/matrix.hpp"
#include "ltla/monarch.hpp"

namespace ltla {

/// A row-stochastic operator backed by either a dense matrix or a Monarch
/// factorization. Forward recursions use left_mul, backward ones right_mul.
class StochasticOperator {
 public:
  StochasticOperator() = default;
  StochasticOperator(DenseMatrix m) : impl_(std::move(m)) {}      // NOLINT(google-explicit-constructor)
  StochasticOperator(MonarchMatrix m) : impl_(std::move(m)) {}    // NOLINT(google-explicit-constructor)

  bool is_dense() const noexcept { return std::holds_alternative<DenseMatrix>(impl_); }
  bool is_monarch() const noexcept { return std::holds_alternative<MonarchMatrix>(impl_); }
  const DenseMatrix& dense() const { return std::get<DenseMatrix>(impl_); }
  const MonarchMatrix& monarch() const { return std::get<MonarchMatrix>(impl_); }
  std::string kind() const { return is_dense() ? "dense" : "monarch"; }

  std::size_t rows() const;
  std::size_t cols() const;

  std::vector<double> right_mul(std::span<const double> x) const;
  std::vector<double> left_mul(std::span<const double> x) const;

  /// Column j, i.e. M e_j.
  std::vector<double> column(std::size_t j) const;

  /// Dense copy (Monarch goes through its size-guarded materialize).
  DenseMatrix to_dense() const;

  /// Throws ValidationError unless every entry is >= 0 and each row sums to 1
  /// within tol. Never renormalizes.
  void validate_row_stochastic(double tol, const std::string& what) const;

 private:
  std::variant<DenseMatrix, MonarchMatrix> impl_;
};

}  // namespace ltla
