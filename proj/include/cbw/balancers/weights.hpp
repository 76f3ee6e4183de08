#ifndef CBW_BALANCERS_WEIGHTS_HPP
#define CBW_BALANCERS_WEIGHTS_HPP

#include "cbw/balancers/cbps.hpp"
#include "cbw/design.hpp"
#include "cbw/estimator.hpp"
#include "cbw/propensity/logistic.hpp"

namespace cbw {

/// Stabilized weights implied by a fitted propensity model: odds weighting
/// for ATT, inverse probability for ATE, each group normalized to sum to one.
template <typename Model>
Vector weights_from_model(const Model& m, const DesignMatrix& d, const Treatment& t, Estimand estimand) {
  return weights_from_ps(predict_ps(m, d), t, estimand);
}

}  // namespace cbw

#endif  // CBW_BALANCERS_WEIGHTS_HPP
