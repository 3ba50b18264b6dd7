#include "nmfre/estimator.hpp"

#include <Eigen/Cholesky>
#include <json.hpp>

#include <cmath>
#include <limits>
#include <optional>

namespace nmfre {

namespace {

void check_shapes(const DataSet& data, const ModelParams& p) {
    if (p.X.rows() != data.Y.rows() || p.Theta.rows() != p.X.cols() ||
        p.Theta.cols() != data.A.rows() || p.U.rows() != p.X.cols() ||
        p.U.cols() != data.Y.cols()) {
        throw DimensionMismatch("model parameters do not conform with the data");
    }
}

struct ObjectiveValue {
    double total;
    double rss;
};

ObjectiveValue evaluate(const DataSet& data, const Matrix& x, const Matrix& theta,
                        const Matrix& u, double lambda) {
    const Matrix r = data.Y - x * (theta * data.A + u);
    const double rss = r.squaredNorm();
    return {rss + lambda * u.squaredNorm(), rss};
}

Vector normalize_columns(Matrix& x) {
    Vector d = x.colwise().sum();
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        if (d(j) < 1e-300) {
            throw DegenerateColumn("X column " + std::to_string(j) +
                                   " collapsed during the multiplicative update");
        }
        x.col(j) /= d(j);
    }
    return d;
}

void rescale_rows(Matrix& m, const Vector& d) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) m.row(i) *= d(i);
}

// One sweep of the U-less covariate NMF used for initialization.
struct InitState {
    Matrix x;
    Matrix theta;
};

}  // namespace

double objective(const DataSet& data, const ModelParams& p) {
    check_shapes(data, p);
    return evaluate(data, p.X, p.Theta, p.U, p.lambda).total;
}

Matrix u_step(const DataSet& data, const Matrix& x, const Matrix& theta, double lambda) {
    if (!(lambda > 0.0)) throw SingularSystem("u_step requires lambda > 0");
    const Eigen::Index q = x.cols();
    Matrix gram = x.transpose() * x;
    gram.diagonal().array() += lambda;
    Eigen::LLT<Matrix> llt(gram);
    if (llt.info() != Eigen::Success) {
        throw SingularSystem("ridge system X^T X + lambda I is not positive definite");
    }
    const Matrix residual = data.Y - x * (theta * data.A);
    Matrix u = llt.solve(x.transpose() * residual);
    // center each row; with a common per-column Hessian this is the exact
    // minimizer over {U : row means zero}
    for (Eigen::Index i = 0; i < q; ++i) u.row(i).array() -= u.row(i).mean();
    return u;
}

XStepResult x_step(const DataSet& data, const ModelParams& p) {
    check_shapes(data, p);
    const Matrix b_plus = (p.Theta * data.A + p.U).cwiseMax(0.0);
    const Matrix numer = data.Y * b_plus.transpose();
    const Matrix denom = (p.X * (b_plus * b_plus.transpose())).array() + k_denom_floor;
    Matrix x_new = p.X.cwiseProduct(numer).cwiseQuotient(denom).cwiseMax(0.0);
    Vector d = normalize_columns(x_new);
    return {std::move(x_new), std::move(d)};
}

Matrix theta_step(const DataSet& data, const ModelParams& p) {
    check_shapes(data, p);
    const Matrix y_plus = (data.Y - p.X * p.U).cwiseMax(0.0);
    const Matrix numer = p.X.transpose() * y_plus * data.A.transpose();
    const Matrix denom =
        ((p.X.transpose() * p.X * p.Theta) * (data.A * data.A.transpose())).array() +
        k_denom_floor;
    return p.Theta.cwiseProduct(numer).cwiseQuotient(denom).cwiseMax(0.0);
}

std::pair<Matrix, Matrix> init_covariate_nmf(const DataSet& data, const FitConfig& cfg, Rng& rng) {
    const Eigen::Index p = data.p(), n = data.n(), k = data.k();
    const Eigen::Index q = cfg.q;

    Matrix x(p, q);
    for (Eigen::Index j = 0; j < q; ++j)
        for (Eigen::Index i = 0; i < p; ++i) x(i, j) = rng.uniform(0.5, 1.5);
    normalize_columns(x);

    // scale Theta so the initial reconstruction magnitude matches the data
    const double mean_a = data.A.mean();
    const double scale = 2.0 * static_cast<double>(p) * data.Y.mean() /
                         std::max(static_cast<double>(q * k) * mean_a, 1e-300);
    Matrix theta(q, k);
    for (Eigen::Index j = 0; j < k; ++j)
        for (Eigen::Index i = 0; i < q; ++i) theta(i, j) = rng.uniform(0.0, 1.0) * scale;

    const Matrix u_zero = Matrix::Zero(q, n);
    constexpr int k_inner_budget = 500;
    double l_old = evaluate(data, x, theta, u_zero, 0.0).total;
    for (int t = 0; t < k_inner_budget; ++t) {
        ModelParams cur{x, theta, u_zero, 1.0};
        XStepResult xs = x_step(data, cur);
        Matrix theta_r = theta;
        rescale_rows(theta_r, xs.d);
        ModelParams cand{xs.x, theta_r, u_zero, 1.0};
        Matrix theta_c = theta_step(data, cand);
        double l_new = evaluate(data, xs.x, theta_c, u_zero, 0.0).total;
        if (l_new > l_old) {
            const double eta = cfg.damping_eta;
            Matrix x_d = (1.0 - eta) * x + eta * xs.x;
            normalize_columns(x_d);
            Matrix theta_d = (1.0 - eta) * theta + eta * theta_c;
            const double l_damp = evaluate(data, x_d, theta_d, u_zero, 0.0).total;
            if (l_damp <= l_old) {
                x = std::move(x_d);
                theta = std::move(theta_d);
                l_new = l_damp;
            } else {
                l_new = l_old;  // rollback
            }
        } else {
            x = std::move(xs.x);
            theta = std::move(theta_c);
        }
        if (std::abs(l_old - l_new) / (l_old + 1e-12) < cfg.tol) break;
        l_old = l_new;
    }
    return {x, theta};
}

namespace {

FitResult fit_single(const DataSet& data, const FitConfig& cfg, std::uint64_t seed) {
    const Eigen::Index n = data.n();
    const double pn = static_cast<double>(data.p()) * static_cast<double>(n);
    const double nq = static_cast<double>(n) * static_cast<double>(cfg.q);
    const double df_max = cfg.cap_enabled() ? cfg.cap_ratio * nq : 0.0;

    Rng rng(seed);
    auto [x, theta] = init_covariate_nmf(data, cfg, rng);
    Matrix u = Matrix::Zero(cfg.q, n);

    // lambda = sigma2_working / tau^2 with sigma2 starting at 1, so
    // tau^2 = 1 / lambda_init reproduces the configured initial penalty.
    const double tau2 = 1.0 / cfg.lambda_init;
    double sigma2_w = 1.0;
    double lambda = sigma2_w / tau2;
    double rss = evaluate(data, x, theta, u, lambda).rss;

    FitResult result;
    result.trace.reserve(std::min(cfg.maxit, 4096));
    bool cap_ever = false;
    bool converged = false;

    for (int t = 1; t <= cfg.maxit; ++t) {
        if (t > cfg.warm_start.freeze_iters) {
            sigma2_w = (1.0 - cfg.warm_start.ema_rate) * sigma2_w +
                       cfg.warm_start.ema_rate * rss / pn;
        }
        lambda = sigma2_w / tau2;
        bool cap_activated = false;
        if (cfg.cap_enabled()) {
            const CapResult cap = enforce_cap(lambda, x, df_max, n);
            lambda = cap.lambda;
            cap_activated = cap.activated;
            cap_ever |= cap_activated;
        }

        const double l_start = evaluate(data, x, theta, u, lambda).total;

        u = u_step(data, x, theta, lambda);

        XStepResult xs = x_step(data, {x, theta, u, lambda});
        Matrix theta_r = theta;
        rescale_rows(theta_r, xs.d);
        Matrix u_r = u;
        rescale_rows(u_r, xs.d);
        Matrix theta_c = theta_step(data, {xs.x, theta_r, u_r, lambda});

        ObjectiveValue cand = evaluate(data, xs.x, theta_c, u_r, lambda);
        bool safeguard = false;
        if (cand.total > l_start) {
            safeguard = true;
            // one damped step, then rollback of (X, Theta)
            const double eta = cfg.damping_eta;
            Matrix x_d = (1.0 - eta) * x + eta * xs.x;
            normalize_columns(x_d);
            Matrix theta_d = (1.0 - eta) * theta + eta * theta_c;
            ObjectiveValue damp = evaluate(data, x_d, theta_d, u_r, lambda);
            if (damp.total <= l_start) {
                x = std::move(x_d);
                theta = std::move(theta_d);
                u = std::move(u_r);
                cand = damp;
            } else {
                cand = evaluate(data, x, theta, u, lambda);  // keep the fresh U only
            }
        } else {
            x = std::move(xs.x);
            theta = std::move(theta_c);
            u = std::move(u_r);
        }
        rss = cand.rss;

        result.trace.push_back({t, cand.total, l_start, lambda, df_u(x, lambda, n),
                                cap_activated, safeguard});

        if (std::abs(l_start - cand.total) / (l_start + 1e-12) < cfg.tol) {
            converged = true;
            break;
        }
    }

    // the loop enforces the cap against the previous iteration's X; re-enforce
    // at the final X so the reported solution always honors the cap
    if (cfg.cap_enabled()) {
        const CapResult cap = enforce_cap(lambda, x, df_max, n);
        if (cap.activated) {
            lambda = cap.lambda;
            cap_ever = true;
            u = u_step(data, x, theta, lambda);
            rss = evaluate(data, x, theta, u, lambda).rss;
        }
    }

    result.params = {std::move(x), std::move(theta), std::move(u), lambda};
    result.converged = converged;
    result.sigma2_working = sigma2_w;
    const ObjectiveValue final_val =
        evaluate(data, result.params.X, result.params.Theta, result.params.U, lambda);
    result.final_objective = final_val.total;
    result.final_rss = final_val.rss;

    ComplexityDiagnostics diag;
    diag.df_u = df_u(result.params.X, lambda, n);
    diag.saturation_ratio = diag.df_u / nq;
    diag.cap_ratio = cfg.cap_enabled() ? cfg.cap_ratio : -1.0;
    diag.lambda_final = lambda;
    diag.cap_ever_activated = cap_ever;
    diag.binding = cfg.cap_enabled() && std::abs(diag.df_u - df_max) <= 1e-6 * nq;
    result.diagnostics = diag;
    return result;
}

}  // namespace

FitResult fit(const DataSet& data, const FitConfig& cfg) {
    validate_fit_config(cfg);
    if (data.Y.cols() != data.A.cols()) throw DimensionMismatch("Y and A column counts differ");

    std::optional<FitResult> best;
    int best_restart = 0;
    for (int r = 0; r < cfg.n_restarts; ++r) {
        FitResult candidate = fit_single(data, cfg, derive_seed(cfg.rng_seed, r));
        if (!best || candidate.final_objective < best->final_objective) {
            best = std::move(candidate);
            best_restart = r;
        }
    }
    best->restarts_tried = cfg.n_restarts;
    best->best_restart = best_restart;
    return *best;
}

namespace {

nlohmann::json matrix_to_json(const Matrix& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

Matrix matrix_from_json(const nlohmann::json& j) {
    const auto rows = j.size();
    if (rows == 0) return Matrix(0, 0);
    const auto cols = j.at(0).size();
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j2 = 0; j2 < cols; ++j2)
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j2)) =
                j.at(i).at(j2).get<double>();
    return m;
}

}  // namespace

std::string fit_result_to_json(const FitResult& result) {
    nlohmann::json j;
    j["x"] = matrix_to_json(result.params.X);
    j["theta"] = matrix_to_json(result.params.Theta);
    j["u"] = matrix_to_json(result.params.U);
    j["lambda"] = result.params.lambda;
    j["converged"] = result.converged;
    j["restarts_tried"] = result.restarts_tried;
    j["best_restart"] = result.best_restart;
    j["sigma2_working"] = result.sigma2_working;
    j["final_objective"] = result.final_objective;
    j["final_rss"] = result.final_rss;
    j["diagnostics"] = {{"df_u", result.diagnostics.df_u},
                        {"saturation_ratio", result.diagnostics.saturation_ratio},
                        {"cap_ratio", result.diagnostics.cap_ratio},
                        {"lambda_final", result.diagnostics.lambda_final},
                        {"cap_ever_activated", result.diagnostics.cap_ever_activated},
                        {"binding", result.diagnostics.binding}};
    nlohmann::json trace = nlohmann::json::array();
    for (const auto& rec : result.trace) {
        trace.push_back({{"iteration", rec.iteration},
                         {"objective", rec.objective},
                         {"objective_start", rec.objective_start},
                         {"lambda", rec.lambda},
                         {"df_u", rec.df_u},
                         {"cap_activated", rec.cap_activated},
                         {"safeguard_triggered", rec.safeguard_triggered}});
    }
    j["trace"] = std::move(trace);
    return j.dump(2);
}

FitResult fit_result_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("fit result: ") + e.what());
    }
    FitResult r;
    try {
        r.params.X = matrix_from_json(j.at("x"));
        r.params.Theta = matrix_from_json(j.at("theta"));
        r.params.U = matrix_from_json(j.at("u"));
        r.params.lambda = j.at("lambda").get<double>();
        r.converged = j.at("converged").get<bool>();
        r.restarts_tried = j.at("restarts_tried").get<int>();
        r.best_restart = j.at("best_restart").get<int>();
        r.sigma2_working = j.at("sigma2_working").get<double>();
        r.final_objective = j.at("final_objective").get<double>();
        r.final_rss = j.at("final_rss").get<double>();
        const auto& d = j.at("diagnostics");
        r.diagnostics.df_u = d.at("df_u").get<double>();
        r.diagnostics.saturation_ratio = d.at("saturation_ratio").get<double>();
        r.diagnostics.cap_ratio = d.at("cap_ratio").get<double>();
        r.diagnostics.lambda_final = d.at("lambda_final").get<double>();
        r.diagnostics.cap_ever_activated = d.at("cap_ever_activated").get<bool>();
        r.diagnostics.binding = d.at("binding").get<bool>();
        for (const auto& rec : j.at("trace")) {
            r.trace.push_back({rec.at("iteration").get<int>(), rec.at("objective").get<double>(),
                               rec.at("objective_start").get<double>(),
                               rec.at("lambda").get<double>(), rec.at("df_u").get<double>(),
                               rec.at("cap_activated").get<bool>(),
                               rec.at("safeguard_triggered").get<bool>()});
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("fit result: ") + e.what());
    }
    return r;
}

}  // namespace nmfre
