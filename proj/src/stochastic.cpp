#include "ltla/stochastic.hpp"

#include <cmath>

#include "ltla/errors.hpp"

namespace ltla {

std::size_t StochasticOperator::rows() const {
  return std::visit([](const auto& m) { return m.rows(); }, impl_);
}

std::size_t StochasticOperator::cols() const {
  return std::visit([](const auto& m) { return m.cols(); }, impl_);
}

std::vector<double> StochasticOperator::right_mul(std::span<const double> x) const {
  return std::visit([&](const auto& m) { return m.right_mul(x); }, impl_);
}

std::vector<double> StochasticOperator::left_mul(std::span<const double> x) const {
  return std::visit([&](const auto& m) { return m.left_mul(x); }, impl_);
}

std::vector<double> StochasticOperator::column(std::size_t j) const {
  if (j >= cols()) throw DomainError("StochasticOperator::column: index out of range");
  if (const auto* d = std::get_if<DenseMatrix>(&impl_)) {
    std::vector<double> out(d->rows());
    for (std::size_t r = 0; r < d->rows(); ++r) out[r] = (*d)(r, j);
    return out;
  }
  std::vector<double> e(cols(), 0.0);
  e[j] = 1.0;
  return right_mul(e);
}

DenseMatrix StochasticOperator::to_dense() const {
  if (const auto* d = std::get_if<DenseMatrix>(&impl_)) return *d;
  return std::get<MonarchMatrix>(impl_).materialize();
}

void StochasticOperator::validate_row_stochastic(double tol, const std::string& what) const {
  if (const auto* d = std::get_if<DenseMatrix>(&impl_)) {
    for (std::size_t r = 0; r < d->rows(); ++r) {
      double s = 0.0;
      for (double v : d->row(r)) {
        if (!(v >= 0.0)) throw ValidationError(what + ": negative or NaN entry in row " + std::to_string(r));
        s += v;
      }
      if (std::abs(s - 1.0) > tol)
        throw ValidationError(what + ": row " + std::to_string(r) + " sums to " + std::to_string(s));
    }
    return;
  }
  const auto& m = std::get<MonarchMatrix>(impl_);
  for (double v : m.left())
    if (!(v >= 0.0)) throw ValidationError(what + ": negative Monarch left entry");
  for (double v : m.right())
    if (!(v >= 0.0)) throw ValidationError(what + ": negative Monarch right entry");
  const std::vector<double> ones(m.cols(), 1.0);
  const std::vector<double> sums = m.right_mul(ones);
  for (std::size_t r = 0; r < sums.size(); ++r)
    if (!(std::abs(sums[r] - 1.0) <= tol))
      throw ValidationError(what + ": Monarch row " + std::to_string(r) + " sums to " + std::to_string(sums[r]) +
                            " (stale row_scale?)");
}

}  // namespace ltla
