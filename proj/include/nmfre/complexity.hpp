#pragma once

#include <utility>
#include <vector>

#include "nmfre/data_model.hpp"

namespace nmfre {

// Random-effects complexity state reported with every fit.
struct ComplexityDiagnostics {
    double df_u = 0.0;
    double saturation_ratio = 0.0;  // df_u / (N*Q)
    double cap_ratio = -1.0;        // <= 0 means the cap was disabled
    double lambda_final = 0.0;
    bool cap_ever_activated = false;
    bool binding = false;  // df_u within 1e-6 * NQ of df_u_max
};

// Eigenvalues of X^T X, ascending. Values below 1e-14 * max are floored to
// exactly zero so numerical noise cannot inflate df_U.
Vector gram_eigenvalues(const Matrix& x);

double df_u_from_eigenvalues(const Vector& d, double lambda, Eigen::Index n);

// df_U = N * sum_q d_q / (d_q + lambda), the ridge effective degrees of
// freedom consumed by the random effects.
double df_u(const Matrix& x, double lambda, Eigen::Index n);

// Smallest lambda with df_U(lambda) <= df_max, by bisection on log-lambda
// over [1e-12, 1e12]. Returns 0 when df_max >= NQ (any lambda satisfies the
// cap); throws CapInfeasible when df_max <= 0.
double lambda_cap(const Matrix& x, double df_max, Eigen::Index n);

struct CapResult {
    double lambda;
    bool activated;
};

// lambda <- max(lambda, lambda_cap(X)).
CapResult enforce_cap(double lambda_current, const Matrix& x, double df_max, Eigen::Index n);

struct CapCalibration {
    double df_max;
    // (lambda, r) over a 50-point log grid spanning [1e-6, 1e6]
    std::vector<std::pair<double, double>> lookup;
};

// Translates an analyst lower bound on lambda into df_U^max via the
// initialization basis X_fix.
CapCalibration calibrate_cap(const Matrix& x_fix, double lambda_min, Eigen::Index n);

void write_lookup_csv(const std::string& path, const CapCalibration& cal);

}  // namespace nmfre
