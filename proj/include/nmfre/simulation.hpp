#pragma once

#include <optional>
#include <string>
#include <vector>

#include "nmfre/inference.hpp"

namespace nmfre {

enum class ErrorDist { Gaussian, ExpCentered };
enum class Scenario { NullBoundary, AlternativeInterior };
enum class CovariateGen { OrthodontFixed, Bernoulli };
enum class CapSetting { Strict021, Loose099, Off };

struct SimDesign {
    int n = 27;
    int p = 4;
    int q = 1;
    Matrix x_true;      // P x Q, columns sum to 1
    Matrix theta_true;  // Q x K
    CovariateGen covariate_gen = CovariateGen::OrthodontFixed;
    double p_male = 16.0 / 27.0;
    double sigma2_true = 1.0;
    double tau2_true = 1.0;
    ErrorDist error_dist = ErrorDist::Gaussian;
    int replicates = 200;  // R
    FitConfig fit_cfg;
    InferenceConfig inf_cfg;  // carries B
    Scenario scenario = Scenario::NullBoundary;
    std::uint64_t master_seed = 0;
    int target_covariate = 1;  // male row of A
};

struct GeneratedData {
    DataSet data;
    Matrix u_true;
};

struct ReplicateRecord {
    bool failed = false;
    std::string error;
    double estimate = 0.0;
    double se = 0.0;
    double bse = 0.0;
    double p_value = 1.0;
    double p_value_bse = 1.0;
    double lambda = 0.0;
    double df_ratio = 0.0;
    bool cover_se = false;
    bool cover_bse = false;
    bool pct_cover = false;
    bool reject_se = false;
    bool reject_bse = false;
};

struct MonteCarloSummary {
    double bias = 0.0;
    double sd = 0.0;  // population SD across replicates, so rmse^2 = bias^2 + sd^2
    double rmse = 0.0;
    double mean_se = 0.0;
    double mean_bse = 0.0;
    double reject_se = 0.0;
    double reject_bse = 0.0;
    double cover_se = 0.0;
    double cover_bse = 0.0;
    double pct_cover = 0.0;
    double mean_df_ratio = 0.0;
    double df_ratio_q99 = 0.0;
    double mean_lambda = 0.0;
    int failures = 0;
    int replicates_used = 0;
};

// Draws A (intercept + male row), U ~ N(0, tau2), and E per error_dist, then
// forms Y = X_true(Theta_true A + U) + E. Y may contain negative entries;
// the simulation path bypasses the loader's non-negativity check on purpose.
GeneratedData generate_dataset(const SimDesign& design, std::uint64_t rep_seed);

// Column permutation matching fitted basis columns to x_true columns by
// minimal total squared distance; perm[q_true] = fitted column index.
std::vector<int> align_components(const Matrix& x_fit, const Matrix& x_true);

// Generate/fit/infer R times and aggregate. Individual replicate failures are
// excluded and counted; more than 1% of R aborts with SimulationFailure.
MonteCarloSummary run_monte_carlo(const SimDesign& design, int threads = 1,
                                  std::vector<ReplicateRecord>* raw = nullptr);

SimDesign orthodont_baseline_design(int n, ErrorDist error_dist, Scenario scenario, int r, int b,
                                    std::uint64_t seed);

// Appendix-style stress design: P=4, Q=3, N=100, three-trend basis, male
// effect on Trend1 only, deliberately weak penalty lambda_init = 1/1000.
SimDesign stress_design(CapSetting cap, ErrorDist error_dist, Scenario scenario, int r, int b,
                        std::uint64_t seed);

MonteCarloSummary run_stress_test(CapSetting cap, ErrorDist error_dist, Scenario scenario, int r,
                                  int b, std::uint64_t seed, int threads = 1,
                                  std::vector<ReplicateRecord>* raw = nullptr);

std::string summary_csv_header();
std::string summary_csv_row(const SimDesign& design, const MonteCarloSummary& s);
std::string replicates_csv(const std::vector<ReplicateRecord>& records);

const Matrix& orthodont_x_true();
const Matrix& stress_x_true();

}  // namespace nmfre
