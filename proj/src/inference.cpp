#include "nmfre/inference.hpp"

#include <Eigen/Eigenvalues>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "nmfre/stats.hpp"

namespace nmfre {

namespace {

double active_set_threshold(const Matrix& theta, double delta) {
    if (delta >= 0.0) return delta;
    return 1e-8 * std::max(theta.maxCoeff(), 0.0);
}

double df_theta_value(const Matrix& theta, DfThetaMode mode, double delta) {
    if (mode == DfThetaMode::FixedQK) return static_cast<double>(theta.size());
    const double thr = active_set_threshold(theta, delta);
    double count = 0.0;
    for (Eigen::Index j = 0; j < theta.cols(); ++j)
        for (Eigen::Index i = 0; i < theta.rows(); ++i)
            if (theta(i, j) > thr) count += 1.0;
    return count;
}

double condition_of(const Matrix& sym) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(sym, Eigen::EigenvaluesOnly);
    const double lo = es.eigenvalues().minCoeff();
    const double hi = es.eigenvalues().maxCoeff();
    if (hi <= 0.0) return std::numeric_limits<double>::infinity();
    return hi / std::max(lo, std::numeric_limits<double>::min());
}

}  // namespace

double sigma2_hat(const DataSet& data, const FitResult& fit, DfThetaMode mode, double delta) {
    const double rss = (data.Y - fit.params.X * (fit.params.Theta * data.A + fit.params.U))
                           .squaredNorm();
    const double df_theta = df_theta_value(fit.params.Theta, mode, delta);
    const double denom = static_cast<double>(data.p()) * static_cast<double>(data.n()) -
                         fit.diagnostics.df_u - df_theta;
    if (!(denom > 0.0)) {
        throw NonPositiveDF("PN - df_U - df_Theta = " + std::to_string(denom) +
                            "; model too saturated for the df-adjusted scale");
    }
    return rss / denom;
}

Matrix profiled_residuals(const DataSet& data, const Matrix& x_hat, const Matrix& theta,
                          double lambda) {
    if (!(lambda > 0.0)) throw SingularSystem("profiled_residuals requires lambda > 0");
    Matrix gram = x_hat.transpose() * x_hat;
    gram.diagonal().array() += lambda;
    const Eigen::LLT<Matrix> llt(gram);
    const Matrix r0 = data.Y - x_hat * (theta * data.A);
    return r0 - x_hat * llt.solve(x_hat.transpose() * r0);
}

Matrix score_contributions(const DataSet& data, const Matrix& x_hat, const Matrix& theta,
                           double lambda, double sigma2) {
    if (!(sigma2 > 0.0)) throw Error("score_contributions requires sigma2 > 0");
    const Matrix resid = profiled_residuals(data, x_hat, theta, lambda);
    const Matrix g = x_hat.transpose() * resid;  // Q x N
    const Eigen::Index q = x_hat.cols(), k = data.k(), n = data.n();
    Matrix scores(q * k, n);
    for (Eigen::Index kk = 0; kk < k; ++kk) {
        scores.middleRows(kk * q, q) =
            (-1.0 / sigma2) * (g.array().rowwise() * data.A.row(kk).array()).matrix();
    }
    return scores;
}

ReducedInformation::ReducedInformation(Matrix aat, Matrix f, double sigma2)
    : aat_(std::move(aat)), f_(std::move(f)), sigma2_(sigma2) {
    constexpr double k_rel_tol = 1e-13;
    {
        Eigen::SelfAdjointEigenSolver<Matrix> es(aat_, Eigen::EigenvaluesOnly);
        const double lo = es.eigenvalues().minCoeff(), hi = es.eigenvalues().maxCoeff();
        if (!(hi > 0.0) || lo <= k_rel_tol * hi) {
            throw SingularInformation("covariate Gram A A^T is singular");
        }
        condition_ = hi / lo;
    }
    {
        Eigen::SelfAdjointEigenSolver<Matrix> es(f_, Eigen::EigenvaluesOnly);
        const double lo = es.eigenvalues().minCoeff(), hi = es.eigenvalues().maxCoeff();
        if (!(hi > 0.0) || lo <= k_rel_tol * hi) {
            throw SingularInformation("profiled basis factor F = X^T (I - H) X is singular");
        }
        condition_ *= hi / lo;
    }
    aat_llt_.compute(aat_);
    f_llt_.compute(f_);
    if (aat_llt_.info() != Eigen::Success)
        throw SingularInformation("covariate Gram A A^T is singular");
    if (f_llt_.info() != Eigen::Success)
        throw SingularInformation("profiled basis factor F = X^T (I - H) X is singular");
}

Vector ReducedInformation::apply_inverse(const Vector& v) const {
    const Eigen::Index q = f_.rows(), k = aat_.rows();
    if (v.size() != q * k) throw DimensionMismatch("apply_inverse: vector length != QK");
    const Eigen::Map<const Matrix> vm(v.data(), q, k);
    Matrix w = f_llt_.solve(vm);                      // F^-1 V
    Matrix z = aat_llt_.solve(w.transpose()).transpose();  // (A A^T)^-1 applied on the right
    z *= sigma2_;
    return Eigen::Map<Vector>(z.data(), q * k);
}

ReducedInformation reduced_information(const Matrix& x_hat, const Matrix& a, double lambda,
                                       double sigma2) {
    Matrix xtx = x_hat.transpose() * x_hat;
    Matrix gram = xtx;
    gram.diagonal().array() += lambda;
    const Eigen::LLT<Matrix> llt(gram);
    Matrix f = lambda * llt.solve(xtx);
    f = 0.5 * (f + f.transpose()).eval();  // X^T (I - H) X, symmetrized
    return ReducedInformation(a * a.transpose(), std::move(f), sigma2);
}

Matrix sandwich_cov(const Matrix& scores, const ReducedInformation& info) {
    const Eigen::Index qk = scores.rows();
    const double n = static_cast<double>(scores.cols());
    const double correction = n > 1.0 ? n / (n - 1.0) : 1.0;
    const Matrix jhat = correction * (scores * scores.transpose());
    Matrix half(qk, qk);
    for (Eigen::Index j = 0; j < qk; ++j) half.col(j) = info.apply_inverse(jhat.col(j));
    Matrix cov(qk, qk);
    for (Eigen::Index j = 0; j < qk; ++j) cov.col(j) = info.apply_inverse(half.row(j).transpose());
    return 0.5 * (cov + cov.transpose());
}

BootstrapResult one_step_bootstrap(const Matrix& theta_hat, const Matrix& scores,
                                   const ReducedInformation& info, const InferenceConfig& cfg) {
    if (cfg.b < 1) throw Error("bootstrap requires B >= 1");
    const Eigen::Index qk = scores.rows(), n = scores.cols();
    const Eigen::Map<const Vector> theta_vec(theta_hat.data(), qk);

    BootstrapResult out;
    out.replicates.resize(cfg.b, qk);
    Vector xi(n);
    for (int b = 0; b < cfg.b; ++b) {
        Rng rng(derive_seed(cfg.rng_seed, static_cast<std::uint64_t>(b)));
        for (Eigen::Index i = 0; i < n; ++i) {
            switch (cfg.multiplier_dist) {
                case MultiplierDist::ExpCentered: xi(i) = rng.exponential() - 1.0; break;
                case MultiplierDist::Rademacher: xi(i) = rng.uniform() < 0.5 ? -1.0 : 1.0; break;
                case MultiplierDist::Gaussian: xi(i) = rng.normal(); break;
            }
        }
        const Vector s_star = scores * xi;
        out.replicates.row(b) =
            (theta_vec - info.apply_inverse(s_star)).cwiseMax(0.0).transpose();
    }

    out.bse.resize(qk);
    if (cfg.b < 2) {
        out.bse.setConstant(std::numeric_limits<double>::quiet_NaN());
    } else {
        const Eigen::RowVectorXd mean = out.replicates.colwise().mean();
        for (Eigen::Index j = 0; j < qk; ++j) {
            const double ss = (out.replicates.col(j).array() - mean(j)).square().sum();
            out.bse(j) = std::sqrt(ss / (cfg.b - 1.0));
        }
    }
    return out;
}

InferenceReport run_inference(const DataSet& data, const FitResult& fit,
                              const InferenceConfig& cfg) {
    if (!(cfg.ci_level > 0.0 && cfg.ci_level < 1.0)) throw Error("ci_level must lie in (0,1)");
    const Matrix& x_hat = fit.params.X;
    const Matrix& theta_hat = fit.params.Theta;
    const double lambda = fit.params.lambda;
    const Eigen::Index q = theta_hat.rows(), k = theta_hat.cols();

    InferenceReport report;
    report.sigma2 = sigma2_hat(data, fit, cfg.df_theta_mode, cfg.active_set_delta);
    report.df_u = fit.diagnostics.df_u;
    report.df_theta = df_theta_value(theta_hat, cfg.df_theta_mode, cfg.active_set_delta);
    report.df_theta_mode = cfg.df_theta_mode;
    report.b = cfg.b;
    report.ci_level = cfg.ci_level;

    const double sigma2 = report.sigma2 > 0.0 ? report.sigma2 : 1.0;  // zero-residual edge
    const Matrix scores = score_contributions(data, x_hat, theta_hat, lambda, sigma2);
    report.score_sum_max_abs = scores.rowwise().sum().cwiseAbs().maxCoeff();

    const ReducedInformation info = reduced_information(x_hat, data.A, lambda, sigma2);
    report.info_condition = info.condition();
    report.sandwich = sandwich_cov(scores, info);
    report.jhat_condition = condition_of(scores * scores.transpose());

    const BootstrapResult boot = one_step_bootstrap(theta_hat, scores, info, cfg);
    report.replicates = boot.replicates;

    const double alpha = 1.0 - cfg.ci_level;
    const double z_crit = normal_quantile(1.0 - alpha / 2.0);
    report.coefficients.reserve(static_cast<std::size_t>(q * k));
    for (Eigen::Index kk = 0; kk < k; ++kk) {
        for (Eigen::Index qq = 0; qq < q; ++qq) {
            const Eigen::Index idx = kk * q + qq;
            CoefficientInference c;
            c.basis = static_cast<int>(qq);
            c.covariate = static_cast<int>(kk);
            if (static_cast<std::size_t>(kk) < data.row_labels_a.size())
                c.covariate_label = data.row_labels_a[static_cast<std::size_t>(kk)];
            c.estimate = theta_hat(qq, kk);
            c.se = std::sqrt(std::max(report.sandwich(idx, idx), 0.0));
            c.bse = boot.bse(idx);
            c.side = cfg.side_override.size() == static_cast<std::size_t>(q * k)
                         ? cfg.side_override[static_cast<std::size_t>(idx)]
                         : cfg.default_side;
            if (c.se > 0.0) {
                c.z = c.estimate / c.se;
            } else {
                c.z = c.estimate == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
            }
            c.p_value = c.side == TestSide::OneSidedBoundary
                            ? 1.0 - normal_cdf(c.z)
                            : 2.0 * (1.0 - normal_cdf(std::abs(c.z)));
            c.wald_lo = c.estimate - z_crit * c.se;
            c.wald_hi = c.estimate + z_crit * c.se;
            c.wald_lo_clipped = std::max(c.wald_lo, 0.0);
            std::vector<double> col(boot.replicates.col(idx).data(),
                                    boot.replicates.col(idx).data() + boot.replicates.rows());
            c.pct_lo = quantile_type7(col, alpha / 2.0);
            c.pct_hi = quantile_type7(std::move(col), 1.0 - alpha / 2.0);
            c.zero_locked = c.estimate == 0.0;
            report.boundary_caveat |= c.zero_locked;
            report.coefficients.push_back(std::move(c));
        }
    }
    return report;
}

std::string report_to_csv(const InferenceReport& report) {
    std::ostringstream out;
    out << "covariate,basis,estimate,se,bse,z,p\n";
    char buf[192];
    for (const auto& c : report.coefficients) {
        const std::string label =
            c.covariate_label.empty() ? "cov" + std::to_string(c.covariate + 1) : c.covariate_label;
        std::snprintf(buf, sizeof(buf), "%s,Basis%d,%.3f,%.3f,%.3f,%.2f,%.4f\n", label.c_str(),
                      c.basis + 1, c.estimate, c.se, c.bse, c.z, c.p_value);
        out << buf;
    }
    return out.str();
}

std::string report_to_json(const InferenceReport& report, bool include_replicates) {
    nlohmann::json j;
    j["sigma2"] = report.sigma2;
    j["df_u"] = report.df_u;
    j["df_theta"] = report.df_theta;
    j["df_theta_mode"] = report.df_theta_mode == DfThetaMode::FixedQK ? "fixed_qk" : "active_set";
    j["info_condition"] = report.info_condition;
    j["jhat_condition"] = report.jhat_condition;
    j["score_sum_max_abs"] = report.score_sum_max_abs;
    j["boundary_caveat"] = report.boundary_caveat;
    if (report.boundary_caveat) {
        j["boundary_note"] =
            "some coefficients are estimated at exactly zero; one-step replicates are "
            "projected and their limiting distribution can be non-Gaussian there, so "
            "prefer one-sided tests and percentile summaries for those entries";
    }
    j["b"] = report.b;
    j["ci_level"] = report.ci_level;
    nlohmann::json coeffs = nlohmann::json::array();
    for (const auto& c : report.coefficients) {
        nlohmann::json cj;
        cj["covariate"] = c.covariate;
        cj["covariate_label"] = c.covariate_label;
        cj["basis"] = c.basis;
        cj["estimate"] = c.estimate;
        cj["se"] = c.se;
        cj["bse"] = std::isfinite(c.bse) ? nlohmann::json(c.bse) : nlohmann::json(nullptr);
        cj["z"] = std::isfinite(c.z) ? nlohmann::json(c.z) : nlohmann::json(nullptr);
        cj["p"] = c.p_value;
        cj["side"] = c.side == TestSide::OneSidedBoundary ? "one_sided" : "two_sided";
        cj["wald"] = {{"lo", c.wald_lo}, {"hi", c.wald_hi}, {"lo_clipped", c.wald_lo_clipped}};
        cj["percentile"] = {{"lo", c.pct_lo}, {"hi", c.pct_hi}};
        cj["zero_locked"] = c.zero_locked;
        coeffs.push_back(std::move(cj));
    }
    j["coefficients"] = std::move(coeffs);
    if (include_replicates) {
        nlohmann::json reps = nlohmann::json::array();
        for (Eigen::Index i = 0; i < report.replicates.rows(); ++i) {
            nlohmann::json row = nlohmann::json::array();
            for (Eigen::Index jj = 0; jj < report.replicates.cols(); ++jj)
                row.push_back(report.replicates(i, jj));
            reps.push_back(std::move(row));
        }
        j["replicates"] = std::move(reps);
    }
    return j.dump(2);
}

}  // namespace nmfre
