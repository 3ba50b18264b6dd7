#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "nmfre/errors.hpp"

namespace nmfre {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Normalization tolerances. The rescaling identities downstream assume tight
// normalization, so these are fixed constants rather than knobs.
inline constexpr double k_column_sum_tol = 1e-10;
inline constexpr double k_row_center_tol = 1e-8;

// Observed data: non-negative responses Y (P x N) and covariates A (K x N).
// Units (columns) of Y and A correspond by position; labels are advisory.
struct DataSet {
    Matrix Y;
    Matrix A;
    std::vector<std::string> row_labels_y;
    std::vector<std::string> row_labels_a;
    std::vector<std::string> col_labels;

    Eigen::Index p() const { return Y.rows(); }
    Eigen::Index n() const { return Y.cols(); }
    Eigen::Index k() const { return A.rows(); }
};

// Model state: basis X (P x Q, columns sum to 1), covariate effects Theta
// (Q x K, non-negative), random effects U (Q x N, rows centered), and the
// ridge penalty lambda = sigma^2 / tau^2.
struct ModelParams {
    Matrix X;
    Matrix Theta;
    Matrix U;
    double lambda = 1.0;

    Eigen::Index q() const { return X.cols(); }
};

struct WarmStart {
    int freeze_iters = 30;
    double ema_rate = 0.05;
};

struct FitConfig {
    int q = 1;
    double lambda_init = 1.0;
    double cap_ratio = 0.21;  // df_U^max / (NQ); <= 0 disables the cap
    double tol = 1e-8;
    int maxit = 5000;
    int n_restarts = 5;
    std::uint64_t rng_seed = 0;
    WarmStart warm_start;
    double damping_eta = 0.5;

    bool cap_enabled() const { return cap_ratio > 0.0; }
};

// Throws on invalid field values.
void validate_fit_config(const FitConfig& cfg);

// JSON round trip, snake_case keys mirroring the fields above.
FitConfig fit_config_from_json(const std::string& text);
std::string fit_config_to_json(const FitConfig& cfg);

struct LabeledMatrix {
    Matrix values;
    std::vector<std::string> row_labels;
    std::vector<std::string> col_labels;
};

// CSV layout: header row holds column labels (first cell is a corner label),
// each body row starts with its row label. No quoting; labels must not
// contain commas.
LabeledMatrix load_matrix_csv(const std::string& path);
void write_matrix_csv(const std::string& path, const Matrix& values,
                      const std::vector<std::string>& row_labels,
                      const std::vector<std::string>& col_labels);

DataSet load_dataset(const std::string& path_y, const std::string& path_a);
void write_dataset(const DataSet& data, const std::string& path_y, const std::string& path_a);

// Checks the DataSet invariants (shapes, finiteness, Y >= 0); throws.
void validate_dataset(const DataSet& data);

// Positive/negative-part expansion a = a+ - a-; exact, both parts >= 0.
std::pair<Vector, Vector> expand_signed_covariate(const Vector& row);

// Reports violated ModelParams invariants; empty when valid. Never mutates.
std::vector<std::string> validate_params(const ModelParams& p);

}  // namespace nmfre
