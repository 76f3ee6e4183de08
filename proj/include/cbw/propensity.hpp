#ifndef CBW_PROPENSITY_HPP
#define CBW_PROPENSITY_HPP

#include "cbw/propensity/gbm.hpp"
#include "cbw/propensity/logistic.hpp"

#endif  // CBW_PROPENSITY_HPP
