#pragma once

#include <utility>

#include "nmfre/complexity.hpp"
#include "nmfre/data_model.hpp"
#include "nmfre/rng.hpp"

namespace nmfre {

// Floor added to multiplicative denominators; below all reported precision.
inline constexpr double k_denom_floor = 1e-12;

struct IterationRecord {
    int iteration = 0;
    double objective = 0.0;        // accepted value, at this iteration's lambda
    double objective_start = 0.0;  // value entering the iteration, same lambda
    double lambda = 0.0;
    double df_u = 0.0;
    bool cap_activated = false;
    bool safeguard_triggered = false;
};

using ObjectiveTrace = std::vector<IterationRecord>;

struct FitResult {
    ModelParams params;
    ObjectiveTrace trace;
    ComplexityDiagnostics diagnostics;
    int restarts_tried = 0;
    int best_restart = 0;
    bool converged = false;
    double sigma2_working = 1.0;  // final iteration-scale variance
    double final_objective = 0.0;
    double final_rss = 0.0;
};

// Penalized criterion ||Y - X(Theta A + U)||_F^2 + lambda ||U||_F^2.
double objective(const DataSet& data, const ModelParams& p);

// Ridge/BLUP-like closed form, one Q x Q factorization reused across all N
// columns, followed by row centering (the centered solution is the exact
// minimizer under the zero-row-mean constraint).
Matrix u_step(const DataSet& data, const Matrix& x, const Matrix& theta, double lambda);

struct XStepResult {
    Matrix x;  // column-normalized update
    Vector d;  // pre-normalization column sums; caller rescales (Theta, U) <- (D Theta, D U)
};

// Stabilized Euclidean multiplicative update with B_U^+ = max(Theta A + U, 0).
XStepResult x_step(const DataSet& data, const ModelParams& p);

// Covariate-adapted multiplicative update with Y_U^+ = max(Y - X U, 0).
// Exactly-zero entries stay zero (multiplicative zero-locking).
Matrix theta_step(const DataSet& data, const ModelParams& p);

// Covariate-driven NMF with U frozen at 0; supplies the starting point for
// fit() and the X_fix used by cap calibration.
std::pair<Matrix, Matrix> init_covariate_nmf(const DataSet& data, const FitConfig& cfg, Rng& rng);

// Block-wise estimation with cap enforcement, descent safeguard, and the
// warm-start variance schedule. Runs cfg.n_restarts initializations and keeps
// the best objective. Never throws on hitting maxit: converged=false instead.
FitResult fit(const DataSet& data, const FitConfig& cfg);

// JSON round trip for the CLI and for reproducibility checks.
std::string fit_result_to_json(const FitResult& result);
FitResult fit_result_from_json(const std::string& text);

}  // namespace nmfre
