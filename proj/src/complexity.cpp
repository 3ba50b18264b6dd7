#include "nmfre/complexity.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <cstdio>
#include <fstream>

namespace nmfre {

Vector gram_eigenvalues(const Matrix& x) {
    const Matrix gram = x.transpose() * x;
    Eigen::SelfAdjointEigenSolver<Matrix> es(gram, Eigen::EigenvaluesOnly);
    Vector d = es.eigenvalues();
    const double dmax = d.size() > 0 ? d.maxCoeff() : 0.0;
    const double floor = 1e-14 * std::max(dmax, 0.0);
    for (Eigen::Index i = 0; i < d.size(); ++i)
        if (d(i) < floor) d(i) = 0.0;
    return d;
}

double df_u_from_eigenvalues(const Vector& d, double lambda, Eigen::Index n) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < d.size(); ++i)
        if (d(i) > 0.0) s += d(i) / (d(i) + lambda);
    return static_cast<double>(n) * s;
}

double df_u(const Matrix& x, double lambda, Eigen::Index n) {
    return df_u_from_eigenvalues(gram_eigenvalues(x), lambda, n);
}

double lambda_cap(const Matrix& x, double df_max, Eigen::Index n) {
    const double nq = static_cast<double>(n) * static_cast<double>(x.cols());
    if (!(df_max > 0.0)) throw CapInfeasible("df_max must be positive");
    if (df_max >= nq) return 0.0;  // cap vacuous: df_U < NQ for every lambda > 0

    const Vector d = gram_eigenvalues(x);
    double lo = 1e-12, hi = 1e12;
    if (df_u_from_eigenvalues(d, lo, n) <= df_max) return lo;
    if (df_u_from_eigenvalues(d, hi, n) > df_max) return hi;
    const double tol = 1e-8 * nq;
    for (int it = 0; it < 200; ++it) {
        const double mid = std::sqrt(lo * hi);
        const double dm = df_u_from_eigenvalues(d, mid, n);
        if (dm <= df_max)
            hi = mid;
        else
            lo = mid;
        // df tolerance alone can leave lambda poorly resolved where the df
        // curve is flat; keep narrowing the bracket as well
        if (std::abs(dm - df_max) < tol && hi - lo < 1e-9 * hi) break;
    }
    return hi;  // upper endpoint: df_U(hi) <= df_max holds by construction
}

CapResult enforce_cap(double lambda_current, const Matrix& x, double df_max, Eigen::Index n) {
    const double cap = lambda_cap(x, df_max, n);
    if (cap > lambda_current) return {cap, true};
    return {lambda_current, false};
}

CapCalibration calibrate_cap(const Matrix& x_fix, double lambda_min, Eigen::Index n) {
    const Vector d = gram_eigenvalues(x_fix);
    const double nq = static_cast<double>(n) * static_cast<double>(x_fix.cols());
    CapCalibration cal;
    cal.df_max = df_u_from_eigenvalues(d, lambda_min, n);
    constexpr int k_grid = 50;
    cal.lookup.reserve(k_grid);
    for (int i = 0; i < k_grid; ++i) {
        const double t = static_cast<double>(i) / (k_grid - 1);
        const double lam = std::pow(10.0, -6.0 + 12.0 * t);
        cal.lookup.emplace_back(lam, df_u_from_eigenvalues(d, lam, n) / nq);
    }
    return cal;
}

void write_lookup_csv(const std::string& path, const CapCalibration& cal) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << "lambda,r\n";
    char buf[80];
    for (const auto& [lam, r] : cal.lookup) {
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g\n", lam, r);
        out << buf;
    }
}

}  // namespace nmfre
