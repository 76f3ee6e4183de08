#ifndef CBW_TESTS_SUPPORT_HPP
#define CBW_TESTS_SUPPORT_HPP

#include "cbw/common.hpp"
#include "cbw/rng.hpp"

#include <random>

namespace cbw::test {

inline Matrix normal_matrix(Index n, Index p, Rng& rng) {
  std::normal_distribution<double> z(0.0, 1.0);
  Matrix x(n, p);
  for (Index j = 0; j < p; ++j) {
    for (Index i = 0; i < n; ++i) x(i, j) = z(rng);
  }
  return x;
}

/// Logistic treatment on a linear index of x with slope `strength`; at least
/// two units end up in each group.
inline Treatment logistic_treatment(const Matrix& x, double strength, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Treatment t(x.rows());
  for (;;) {
    Index treated = 0;
    for (Index i = 0; i < x.rows(); ++i) {
      double eta = 0.0;
      for (Index j = 0; j < x.cols(); ++j) eta += (j % 2 == 0 ? strength : -strength) * x(i, j) / (1.0 + j);
      t[i] = u(rng) < expit(eta) ? 1 : 0;
      treated += t[i];
    }
    if (treated >= 2 && treated <= x.rows() - 2) return t;
  }
}

inline Treatment treatment(std::initializer_list<int> v) {
  Treatment t(static_cast<Index>(v.size()));
  Index i = 0;
  for (int k : v) t[i++] = k;
  return t;
}

inline Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Index>(v.size()));
  Index i = 0;
  for (double k : v) out[i++] = k;
  return out;
}

inline Matrix column(std::initializer_list<double> v) { return vec(v); }

}  // namespace cbw::test

#endif  // CBW_TESTS_SUPPORT_HPP
