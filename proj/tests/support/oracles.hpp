#pragma once

// Independent reference implementations used to check the library against
// the definitions directly. These deliberately avoid the library's own code
// paths (dense per-column solves, explicit hat matrices, double loops).

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <vector>

#include "nmfre/data_model.hpp"
#include "nmfre/rng.hpp"

namespace oracle {

using nmfre::Matrix;
using nmfre::Vector;

// Elementwise double-loop evaluation of the penalized criterion.
inline double naive_objective(const Matrix& y, const Matrix& a, const Matrix& x,
                              const Matrix& theta, const Matrix& u, double lambda) {
    const Matrix b = theta * a + u;
    double fit = 0.0;
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
        for (Eigen::Index j = 0; j < y.cols(); ++j) {
            double pred = 0.0;
            for (Eigen::Index q = 0; q < x.cols(); ++q) pred += x(i, q) * b(q, j);
            const double d = y(i, j) - pred;
            fit += d * d;
        }
    }
    double pen = 0.0;
    for (Eigen::Index i = 0; i < u.rows(); ++i)
        for (Eigen::Index j = 0; j < u.cols(); ++j) pen += u(i, j) * u(i, j);
    return fit + lambda * pen;
}

// Per-column dense normal-equation ridge solve, then row centering.
inline Matrix dense_u_solve(const Matrix& y, const Matrix& a, const Matrix& x,
                            const Matrix& theta, double lambda, bool center = true) {
    const Eigen::Index q = x.cols(), n = y.cols();
    Matrix u(q, n);
    const Matrix gram = x.transpose() * x + lambda * Matrix::Identity(q, q);
    const Matrix gram_inv = gram.inverse();
    for (Eigen::Index j = 0; j < n; ++j) {
        const Vector rhs = x.transpose() * (y.col(j) - x * (theta * a.col(j)));
        u.col(j) = gram_inv * rhs;
    }
    if (center)
        for (Eigen::Index i = 0; i < q; ++i) u.row(i).array() -= u.row(i).mean();
    return u;
}

// df_U via the explicit P x P ridge hat matrix N * tr(X (X^T X + lambda I)^-1 X^T).
inline double df_u_hat_trace(const Matrix& x, double lambda, Eigen::Index n) {
    const Eigen::Index q = x.cols();
    const Matrix gram = x.transpose() * x + lambda * Matrix::Identity(q, q);
    const Matrix h = x * gram.inverse() * x.transpose();
    return static_cast<double>(n) * h.trace();
}

// Textbook multiplicative X update with B_U^+ materialized explicitly.
inline Matrix x_update_reference(const Matrix& y, const Matrix& x, const Matrix& b_u,
                                 double eps_den) {
    Matrix b_plus = b_u;
    for (Eigen::Index i = 0; i < b_plus.rows(); ++i)
        for (Eigen::Index j = 0; j < b_plus.cols(); ++j) b_plus(i, j) = std::max(b_plus(i, j), 0.0);
    const Matrix numer = y * b_plus.transpose();
    const Matrix denom = x * (b_plus * b_plus.transpose());
    Matrix out = x;
    for (Eigen::Index i = 0; i < x.rows(); ++i)
        for (Eigen::Index j = 0; j < x.cols(); ++j)
            out(i, j) = std::max(x(i, j) * numer(i, j) / (denom(i, j) + eps_den), 0.0);
    return out;  // pre-normalization
}

// Dense materialization of the Theta update factors.
inline Matrix theta_update_reference(const Matrix& y, const Matrix& a, const Matrix& x,
                                     const Matrix& theta, const Matrix& u, double eps_den) {
    Matrix y_u = y - x * u;
    for (Eigen::Index i = 0; i < y_u.rows(); ++i)
        for (Eigen::Index j = 0; j < y_u.cols(); ++j) y_u(i, j) = std::max(y_u(i, j), 0.0);
    const Matrix numer = x.transpose() * y_u * a.transpose();
    const Matrix denom = (x.transpose() * x * theta) * (a * a.transpose());
    Matrix out = theta;
    for (Eigen::Index i = 0; i < theta.rows(); ++i)
        for (Eigen::Index j = 0; j < theta.cols(); ++j)
            out(i, j) = std::max(theta(i, j) * numer(i, j) / (denom(i, j) + eps_den), 0.0);
    return out;
}

// Euclidean projection of v onto the probability simplex {w >= 0, sum w = 1}.
inline Vector project_simplex(const Vector& v) {
    std::vector<double> s(v.data(), v.data() + v.size());
    std::sort(s.begin(), s.end(), std::greater<double>());
    double cumsum = 0.0, tau = 0.0;
    int rho = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        cumsum += s[i];
        const double t = (cumsum - 1.0) / static_cast<double>(i + 1);
        if (s[i] - t > 0.0) {
            rho = static_cast<int>(i + 1);
            tau = t;
        }
    }
    (void)rho;
    Vector out(v.size());
    for (Eigen::Index i = 0; i < v.size(); ++i) out(i) = std::max(v(i) - tau, 0.0);
    return out;
}

// Block projected-gradient reference minimizer of the penalized criterion
// under X >= 0 with unit column sums, Theta >= 0, U free. Per-block step
// sizes with backtracking; blocks have very different scales, so a shared
// step would stall.
inline double projected_gradient_best(const Matrix& y, const Matrix& a, double lambda,
                                      Eigen::Index q, nmfre::Rng& rng, int starts = 3,
                                      int cycles = 3000) {
    const Eigen::Index p = y.rows(), n = y.cols(), k = a.rows();
    double best = std::numeric_limits<double>::infinity();
    for (int s = 0; s < starts; ++s) {
        Matrix x(p, q), theta(q, k);
        for (Eigen::Index j = 0; j < q; ++j)
            for (Eigen::Index i = 0; i < p; ++i) x(i, j) = rng.uniform(0.5, 1.5);
        for (Eigen::Index j = 0; j < q; ++j) x.col(j) = project_simplex(x.col(j));
        const double scale = 2.0 * static_cast<double>(p) * y.mean() /
                             std::max(static_cast<double>(q * k) * a.mean(), 1e-12);
        for (Eigen::Index j = 0; j < k; ++j)
            for (Eigen::Index i = 0; i < q; ++i) theta(i, j) = rng.uniform(0.0, 1.0) * scale;
        Matrix u = Matrix::Zero(q, n);

        double f = naive_objective(y, a, x, theta, u, lambda);
        double step_x = 1.0, step_t = 1.0, step_u = 1.0;
        auto descend = [&](int block, double& step) {
            const Matrix b = theta * a + u;
            const Matrix r = y - x * b;
            for (int ls = 0; ls < 70; ++ls) {
                Matrix x_c = x, theta_c = theta, u_c = u;
                if (block == 0) {
                    x_c = x - step * (-2.0 * r * b.transpose());
                    for (Eigen::Index j = 0; j < q; ++j) x_c.col(j) = project_simplex(x_c.col(j));
                } else if (block == 1) {
                    theta_c = (theta - step * (-2.0 * x.transpose() * r * a.transpose()))
                                  .cwiseMax(0.0);
                } else {
                    u_c = u - step * (-2.0 * x.transpose() * r + 2.0 * lambda * u);
                }
                const double f_c = naive_objective(y, a, x_c, theta_c, u_c, lambda);
                if (f_c <= f) {
                    x = std::move(x_c);
                    theta = std::move(theta_c);
                    u = std::move(u_c);
                    f = f_c;
                    step *= 1.4;
                    return;
                }
                step *= 0.4;
            }
        };
        for (int it = 0; it < cycles; ++it) {
            const double f_before = f;
            descend(0, step_x);
            descend(1, step_t);
            descend(2, step_u);
            if (f_before - f < 1e-13 * (1.0 + f_before)) break;
        }
        best = std::min(best, f);
    }
    return best;
}

// Dense (QK x QK) reduced information and its inverse action.
inline Matrix dense_information(const Matrix& x_hat, const Matrix& a, double lambda,
                                double sigma2) {
    const Eigen::Index q = x_hat.cols();
    const Matrix xtx = x_hat.transpose() * x_hat;
    const Matrix gram = xtx + lambda * Matrix::Identity(q, q);
    const Matrix h = x_hat * gram.inverse() * x_hat.transpose();
    const Matrix f =
        x_hat.transpose() * (Matrix::Identity(h.rows(), h.rows()) - h) * x_hat;  // X^T (I-H) X
    const Matrix aat = a * a.transpose();
    const Eigen::Index kk = aat.rows();
    Matrix info(q * kk, q * kk);
    for (Eigen::Index i = 0; i < kk; ++i)
        for (Eigen::Index j = 0; j < kk; ++j)
            info.block(i * q, j * q, q, q) = aat(i, j) * f / sigma2;
    return info;
}

// Central-difference gradient of the profiled least-squares objective
// g(Theta) = ||Y - X(Theta A + U(Theta))||^2 + lambda ||U(Theta)||^2 with
// U(Theta) the (uncentered) ridge minimizer.
inline Matrix profiled_objective_grad_fd(const Matrix& y, const Matrix& a, const Matrix& x,
                                         const Matrix& theta, double lambda, double step) {
    auto value = [&](const Matrix& th) {
        const Matrix u = dense_u_solve(y, a, x, th, lambda, false);
        return naive_objective(y, a, x, th, u, lambda);
    };
    Matrix grad(theta.rows(), theta.cols());
    for (Eigen::Index i = 0; i < theta.rows(); ++i) {
        for (Eigen::Index j = 0; j < theta.cols(); ++j) {
            Matrix hi = theta, lo = theta;
            hi(i, j) += step;
            lo(i, j) -= step;
            grad(i, j) = (value(hi) - value(lo)) / (2.0 * step);
        }
    }
    return grad;
}

inline Matrix random_nonneg_matrix(nmfre::Rng& rng, Eigen::Index rows, Eigen::Index cols,
                                   double lo = 0.1, double hi = 1.0) {
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = rng.uniform(lo, hi);
    return m;
}

inline Matrix random_matrix(nmfre::Rng& rng, Eigen::Index rows, Eigen::Index cols) {
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = rng.normal();
    return m;
}

inline Matrix normalized_basis(nmfre::Rng& rng, Eigen::Index p, Eigen::Index q) {
    Matrix x = random_nonneg_matrix(rng, p, q, 0.2, 1.2);
    for (Eigen::Index j = 0; j < q; ++j) x.col(j) /= x.col(j).sum();
    return x;
}

}  // namespace oracle
