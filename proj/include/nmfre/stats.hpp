#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

namespace nmfre {

// Standard normal CDF via erfc; absolute accuracy ~1e-15.
inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// Inverse standard normal CDF (Acklam's rational approximation refined by one
// Halley step); accuracy ~1e-13 on (0,1).
double normal_quantile(double p);

// Linear-interpolation sample quantile (R type 7). Copies and sorts.
double quantile_type7(std::vector<double> values, double p);

}  // namespace nmfre
