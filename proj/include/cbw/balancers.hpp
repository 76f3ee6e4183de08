#ifndef CBW_BALANCERS_HPP
#define CBW_BALANCERS_HPP

#include "cbw/balancers/cbps.hpp"
#include "cbw/balancers/entropy.hpp"
#include "cbw/balancers/weights.hpp"

#endif  // CBW_BALANCERS_HPP
