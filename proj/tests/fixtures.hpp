#pragma once

#include <cmath>
#include <vector>

#include "ltla/hmm.hpp"
#include "ltla/matrix.hpp"
#include "ltla/rng.hpp"

namespace fixtures {

// pi = [0.5, 0.5], A = [[0.9, 0.1], [0.1, 0.9]], E = [[0.8, 0.2], [0.2, 0.8]].
inline ltla::HmmParams canonical(std::size_t max_len = 64) {
  return ltla::HmmParams(ltla::Vocabulary::numeric(2), {0.5, 0.5}, ltla::DenseMatrix(2, 2, {0.9, 0.1, 0.1, 0.9}),
                         ltla::DenseMatrix(2, 2, {0.8, 0.2, 0.2, 0.8}), max_len);
}

inline std::vector<double> random_simplex(std::size_t n, ltla::Rng& rng, double zero_prob = 0.0) {
  std::vector<double> p(n);
  double s = 0.0;
  for (double& x : p) {
    x = rng.uniform() < zero_prob ? 0.0 : 0.05 + rng.uniform();
    s += x;
  }
  if (s == 0.0) {
    p[rng.below(n)] = 1.0;
    return p;
  }
  for (double& x : p) x /= s;
  return p;
}

// Random dense HMM; with zero_prob > 0 some entries are exactly zero.
inline ltla::HmmParams random_hmm(std::size_t h, std::size_t v, ltla::Rng& rng, double zero_prob = 0.0,
                                  std::size_t max_len = 64) {
  std::vector<double> a;
  std::vector<double> e;
  for (std::size_t z = 0; z < h; ++z) {
    const auto ra = random_simplex(h, rng, zero_prob);
    const auto re = random_simplex(v, rng, zero_prob);
    a.insert(a.end(), ra.begin(), ra.end());
    e.insert(e.end(), re.begin(), re.end());
  }
  return ltla::HmmParams(ltla::Vocabulary::numeric(v), random_simplex(h, rng), ltla::DenseMatrix(h, h, std::move(a)),
                         ltla::DenseMatrix(h, v, std::move(e)), max_len);
}

// Brute-force q(seq) as a sum over all H^n latent paths.
inline double path_sum(const ltla::HmmParams& p, const ltla::TokenSequence& seq) {
  const std::size_t h = p.hidden_size();
  const ltla::DenseMatrix a = p.transition().to_dense();
  const ltla::DenseMatrix e = p.emission().to_dense();
  std::size_t paths = 1;
  for (std::size_t i = 0; i < seq.size(); ++i) paths *= h;
  double total = 0.0;
  for (std::size_t code = 0; code < paths; ++code) {
    std::size_t c = code;
    double prob = 1.0;
    std::size_t prev = 0;
    for (std::size_t t = 0; t < seq.size(); ++t) {
      const std::size_t z = c % h;
      c /= h;
      prob *= (t == 0 ? p.initial()[z] : a(prev, z)) * e(z, seq[t]);
      prev = z;
    }
    total += prob;
  }
  return total;
}

}  // namespace fixtures
