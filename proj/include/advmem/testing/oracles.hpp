#pragma once

// Reference computations used only to check the library: finite differences,
// brute-force counting and dense linear algebra.

#include "advmem/core.hpp"
#include "advmem/models.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <cmath>
#include <functional>
#include <optional>
#include <vector>

namespace advmem::testing {

/// ||a - b|| / max(||a||, ||b||), 0 when both vanish.
inline double rel_error(const Vector& a, const Vector& b)
{
    const double scale = std::max(a.norm(), b.norm());
    return scale == 0.0 ? 0.0 : (a - b).norm() / scale;
}

inline double rel_error(double a, double b)
{
    const double scale = std::max(std::abs(a), std::abs(b));
    return scale == 0.0 ? 0.0 : std::abs(a - b) / scale;
}

/// Central differences of a scalar function of the flattened parameters.
inline Vector fd_param_gradient(const std::function<double(const ModelParameters&)>& f, const ModelParameters& params,
                                double h = 1e-6)
{
    const Vector theta = params.flatten();
    Vector g(theta.size());
    ModelParameters p = params;
    for (Eigen::Index k = 0; k < theta.size(); ++k) {
        Vector t = theta;
        t[k] = theta[k] + h;
        p.assign(t);
        const double up = f(p);
        t[k] = theta[k] - h;
        p.assign(t);
        const double down = f(p);
        g[k] = (up - down) / (2.0 * h);
    }
    return g;
}

/// Central differences of a scalar function of a matrix, flattened row-major.
inline Matrix fd_matrix_gradient(const std::function<double(const Matrix&)>& f, const Matrix& x, double h = 1e-6)
{
    Matrix g(x.rows(), x.cols());
    Matrix p = x;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
            p(i, j) = x(i, j) + h;
            const double up = f(p);
            p(i, j) = x(i, j) - h;
            const double down = f(p);
            p(i, j) = x(i, j);
            g(i, j) = (up - down) / (2.0 * h);
        }
    }
    return g;
}

inline Vector flat(const Matrix& m) { return Eigen::Map<const Vector>(m.data(), m.size()); }

/// O(n^2) Kendall tau-b by explicit pair counting.
inline std::optional<double> kendall_tau_brute(const std::vector<double>& a, const std::vector<double>& b)
{
    std::int64_t concordant = 0, discordant = 0, untied_a = 0, untied_b = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        for (std::size_t j = i + 1; j < a.size(); ++j) {
            const double da = a[i] - a[j];
            const double db = b[i] - b[j];
            if (da != 0.0) ++untied_a;
            if (db != 0.0) ++untied_b;
            if (da * db > 0.0) ++concordant;
            if (da * db < 0.0) ++discordant;
        }
    }
    if (untied_a == 0 || untied_b == 0) {
        return std::nullopt;
    }
    return static_cast<double>(concordant - discordant) /
           std::sqrt(static_cast<double>(untied_a) * static_cast<double>(untied_b));
}

inline double dense_spectral_norm(const Matrix& m)
{
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
    return svd.singularValues().size() ? svd.singularValues()[0] : 0.0;
}

/// The unrolled matrix of a weight group's linear operator (out x in).
inline Matrix densify(const ParamGroup& group)
{
    if (!group.conv) {
        return Eigen::Map<const Matrix>(group.values.data(), static_cast<Eigen::Index>(group.shape[0]),
                                        static_cast<Eigen::Index>(group.shape[1]));
    }
    const auto& g = *group.conv;
    const auto n = static_cast<Eigen::Index>(g.in_size());
    const Matrix basis = Matrix::Identity(n, n);
    return conv_apply(group, basis).transpose();  // column j = response to e_j
}

/// Largest-magnitude eigenvalue of a symmetric matrix.
inline double dominant_eigenvalue(const Matrix& sym)
{
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Eigen::MatrixXd(0.5 * (sym + sym.transpose())));
    const auto& ev = es.eigenvalues();
    return std::abs(ev[0]) > std::abs(ev[ev.size() - 1]) ? ev[0] : ev[ev.size() - 1];
}

/// Input Hessian of CE for a piecewise-linear network: J^T (diag p - p p^T) J,
/// with J the logit Jacobian obtained one class at a time.
inline Matrix ce_input_hessian(const ModelParameters& params, const Eigen::RowVectorXd& x)
{
    const Network net(params.arch);
    Tape tape;
    const Matrix xm = x;
    const Matrix z = net.forward(params, xm, &tape);
    const auto C = z.cols();
    Matrix J(C, x.size());
    for (Eigen::Index c = 0; c < C; ++c) {
        Matrix e = Matrix::Zero(1, C);
        e(0, c) = 1.0;
        J.row(c) = net.backward(params, tape, e, nullptr).row(0);
    }
    const Eigen::RowVectorXd p = softmax_rows(z).row(0);
    const Matrix S = Matrix(p.asDiagonal()) - p.transpose() * p;
    return J.transpose() * S * J;
}

}  // namespace advmem::testing
