#pragma once

#include <Eigen/Cholesky>
#include <optional>
#include <string>
#include <vector>

#include "nmfre/estimator.hpp"

namespace nmfre {

enum class MultiplierDist { ExpCentered, Rademacher, Gaussian };
enum class DfThetaMode { FixedQK, ActiveSet };
enum class TestSide { OneSidedBoundary, TwoSided };

struct InferenceConfig {
    int b = 1000;
    MultiplierDist multiplier_dist = MultiplierDist::ExpCentered;
    DfThetaMode df_theta_mode = DfThetaMode::FixedQK;
    double active_set_delta = -1.0;  // < 0: use 1e-8 * max(Theta_hat)
    TestSide default_side = TestSide::OneSidedBoundary;
    std::vector<TestSide> side_override;  // per vec(Theta) index; empty = default
    double ci_level = 0.95;
    std::uint64_t rng_seed = 0;
};

struct CoefficientInference {
    int basis = 0;      // q
    int covariate = 0;  // k
    std::string covariate_label;
    double estimate = 0.0;
    double se = 0.0;
    double bse = 0.0;
    double z = 0.0;
    double p_value = 1.0;
    TestSide side = TestSide::OneSidedBoundary;
    double wald_lo = 0.0;  // unclipped
    double wald_hi = 0.0;
    double wald_lo_clipped = 0.0;
    double pct_lo = 0.0;
    double pct_hi = 0.0;
    bool zero_locked = false;  // estimate at exact zero (boundary caveat applies)
};

struct InferenceReport {
    std::vector<CoefficientInference> coefficients;  // vec(Theta) order: k outer, q inner
    double sigma2 = 0.0;
    double df_u = 0.0;
    double df_theta = 0.0;
    DfThetaMode df_theta_mode = DfThetaMode::FixedQK;
    double info_condition = 0.0;
    double jhat_condition = 0.0;
    double score_sum_max_abs = 0.0;  // stationarity diagnostic at Theta_hat
    Matrix sandwich;                 // QK x QK
    Matrix replicates;               // B x QK, projected onto >= 0
    bool boundary_caveat = false;    // any coefficient estimated at exact zero
    int b = 0;
    double ci_level = 0.95;
};

// Degrees-of-freedom adjusted variance scale
// ||Y - X(Theta A + U)||_F^2 / (PN - df_U - df_Theta).
double sigma2_hat(const DataSet& data, const FitResult& fit, DfThetaMode mode, double delta);

// (I - H_lambda)(y_n - X Theta a_n) for all n; identical to substituting the
// ridge-optimal U(Theta).
Matrix profiled_residuals(const DataSet& data, const Matrix& x_hat, const Matrix& theta,
                          double lambda);

// Column n = vec(S_n(Theta)) = -(1/sigma2) vec((X^T r_n) a_n^T); QK x N.
Matrix score_contributions(const DataSet& data, const Matrix& x_hat, const Matrix& theta,
                           double lambda, double sigma2);

// Reduced Fisher information (1/sigma2)(A A^T (x) F) with
// F = lambda X^T X (X^T X + lambda I)^-1, stored in Kronecker factors so the
// inverse applies through K x K and Q x Q solves only.
class ReducedInformation {
  public:
    ReducedInformation(Matrix aat, Matrix f, double sigma2);

    // I^-1 v via vec(F^-1 V (A A^T)^-1) * sigma2
    Vector apply_inverse(const Vector& v) const;

    const Matrix& aat() const { return aat_; }
    const Matrix& f() const { return f_; }
    double sigma2() const { return sigma2_; }
    double condition() const { return condition_; }

  private:
    Matrix aat_;
    Matrix f_;
    double sigma2_;
    double condition_;
    Eigen::LLT<Matrix> aat_llt_;
    Eigen::LLT<Matrix> f_llt_;
};

ReducedInformation reduced_information(const Matrix& x_hat, const Matrix& a, double lambda,
                                       double sigma2);

// I^-1 J I^-1 with J = (N/(N-1)) sum_n vec(S_n) vec(S_n)^T.
Matrix sandwich_cov(const Matrix& scores, const ReducedInformation& info);

struct BootstrapResult {
    Matrix replicates;  // B x QK
    Vector bse;         // sample SD, denominator B-1 (NaN when B < 2)
};

// One-step Newton multiplier bootstrap with projection onto Theta >= 0.
// Replicate b draws its multipliers from a stream derived from (seed, b).
BootstrapResult one_step_bootstrap(const Matrix& theta_hat, const Matrix& scores,
                                   const ReducedInformation& info, const InferenceConfig& cfg);

// Full pipeline: sigma2, scores, information, sandwich, bootstrap, tests.
InferenceReport run_inference(const DataSet& data, const FitResult& fit,
                              const InferenceConfig& cfg);

// Report table (Covariate, Basis, Estimate, SE, BSE, z, p).
std::string report_to_csv(const InferenceReport& report);
std::string report_to_json(const InferenceReport& report, bool include_replicates);

}  // namespace nmfre
