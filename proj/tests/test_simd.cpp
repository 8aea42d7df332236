#include <doctest.h>

#include <cmath>

#include "fixtures.hpp"
#include "ltla/hmm.hpp"
#include "ltla/lookahead.hpp"
#include "ltla/monarch.hpp"
#include "ltla/simd.hpp"

using namespace ltla;

namespace {

std::vector<double> normals(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

bool close(double a, double b, double tol) { return std::abs(a - b) <= tol * (1.0 + std::abs(a) + std::abs(b)); }

// Restores the startup kernel choice when a test leaves.
struct IsaGuard {
  simd::Isa saved = simd::active().isa;
  ~IsaGuard() { simd::select(saved); }
};

}  // namespace

TEST_SUITE("simd") {

TEST_CASE("AVX2 kernels match the scalar reference") {
  const simd::Kernels* avx = simd::avx2_kernels();
  if (avx == nullptr) {
    MESSAGE("AVX2 unavailable; scalar only");
    return;
  }
  const simd::Kernels& ref = simd::scalar_kernels();
  Rng rng(31);
  for (std::size_t n = 0; n < 70; ++n) {
    const auto a = normals(n, rng);
    const auto b = normals(n, rng);
    CHECK(close(avx->dot(a.data(), b.data(), n), ref.dot(a.data(), b.data(), n), 1e-13));
    CHECK(close(avx->sum(a.data(), n), ref.sum(a.data(), n), 1e-13));

    auto y1 = b;
    auto y2 = b;
    avx->axpy(0.7, a.data(), y1.data(), n);
    ref.axpy(0.7, a.data(), y2.data(), n);
    for (std::size_t i = 0; i < n; ++i) CHECK(close(y1[i], y2[i], 1e-15));

    std::vector<double> o1(n);
    std::vector<double> o2(n);
    avx->mul(a.data(), b.data(), o1.data(), n);
    ref.mul(a.data(), b.data(), o2.data(), n);
    CHECK(o1 == o2);

    o1 = b;
    o2 = b;
    avx->mul_acc(a.data(), b.data(), o1.data(), n);
    ref.mul_acc(a.data(), b.data(), o2.data(), n);
    for (std::size_t i = 0; i < n; ++i) CHECK(close(o1[i], o2[i], 1e-15));

    o1 = a;
    o2 = a;
    avx->scale(-1.3, o1.data(), n);
    ref.scale(-1.3, o2.data(), n);
    CHECK(o1 == o2);
  }
  for (std::size_t rows = 1; rows < 12; ++rows)
    for (std::size_t cols = 1; cols < 19; ++cols) {
      const auto m = normals(rows * cols, rng);
      const auto x = normals(cols, rng);
      const auto xt = normals(rows, rng);
      std::vector<double> y1(rows);
      std::vector<double> y2(rows);
      avx->gemv(m.data(), rows, cols, x.data(), y1.data());
      ref.gemv(m.data(), rows, cols, x.data(), y2.data());
      for (std::size_t i = 0; i < rows; ++i) CHECK(close(y1[i], y2[i], 1e-13));
      std::vector<double> z1(cols);
      std::vector<double> z2(cols);
      avx->gemv_t(m.data(), rows, cols, xt.data(), z1.data());
      ref.gemv_t(m.data(), rows, cols, xt.data(), z2.data());
      for (std::size_t j = 0; j < cols; ++j) CHECK(close(z1[j], z2[j], 1e-13));
    }
}

TEST_CASE("end-to-end results agree across kernel selections") {
  IsaGuard guard;
  if (simd::avx2_kernels() == nullptr) return;
  Rng rng(32);
  const HmmParams p = fixtures::random_hmm(6, 5, rng);
  const Dfa dfa = build_keyword_dfa({{{1, 2}, {4}}}, p.vocab());
  const MonarchMatrix m = MonarchMatrix::from_params(16, 24, 4, normals(64, rng), normals(96, rng));
  const auto x = normals(24, rng);

  auto run = [&](simd::Isa isa) {
    REQUIRE(simd::select(isa));
    std::vector<double> out;
    const LookaheadTable t = precompute_dfa_table(p, dfa, 8);
    out.insert(out.end(), t.raw().begin(), t.raw().end());
    out.push_back(joint_loglik(TokenSequence{0, 1, 2, 3, 4, 1}, p));
    const auto y = m.right_mul(x);
    out.insert(out.end(), y.begin(), y.end());
    return out;
  };
  const auto a = run(simd::Isa::scalar);
  const auto b = run(simd::Isa::avx2);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(close(a[i], b[i], 1e-12));
}

TEST_CASE("isa names") {
  CHECK(simd::isa_name(simd::Isa::scalar) == "scalar");
  CHECK(simd::isa_name(simd::Isa::avx2) == "avx2");
  CHECK(simd::scalar_kernels().isa == simd::Isa::scalar);
}

}  // TEST_SUITE
