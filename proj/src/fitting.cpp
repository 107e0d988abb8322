#include "ctr/fitting.hpp"

#include "ctr/ingestion.hpp"

#include <Eigen/Eigenvalues>
#include <unsupported/Eigen/AutoDiff>

#include <cmath>
#include <string>

namespace ctr {

namespace {

using Deriv = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, 10, 1>;
using AD = Eigen::AutoDiffScalar<Deriv>;
/// Forward-over-forward scalar for second derivatives.
using AD2 = Eigen::AutoDiffScalar<Eigen::Matrix<AD, Eigen::Dynamic, 1, 0, 10, 1>>;

enum class FitKind { skull, target, enclosing };

Eigen::Index param_count(PdParameterization p) { return p == PdParameterization::rotation ? 10 : 9; }

template <typename Scalar>
void decode(PdParameterization p, const VectorX<Scalar>& x, Vector3<Scalar>& c, Matrix3<Scalar>& Q, Scalar& logdet) {
    using std::log;
    c = x.template head<3>();
    if (p == PdParameterization::rotation) {
        const Vector4<Scalar> q = x.template segment<4>(3);
        const Vector3<Scalar> m = x.template segment<3>(7);
        Q = shape_from_rotation<Scalar>(q, m);
        logdet = log(m[0]) + log(m[1]) + log(m[2]);
    } else {
        const Eigen::Matrix<Scalar, 6, 1> g = x.template segment<6>(3);
        Q = shape_from_cholesky<Scalar>(g);
        logdet = Scalar(2) * (log(g[0]) + log(g[1]) + log(g[2]));
    }
}

Eigen::VectorXd encode(PdParameterization p, const Eigen::Vector3d& c, const Eigen::Matrix3d& Q) {
    Eigen::VectorXd x(param_count(p));
    x.head<3>() = c;
    if (p == PdParameterization::rotation) {
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(Q);
        Eigen::Matrix3d V = es.eigenvectors();
        if (V.determinant() < 0.0) V.col(2) *= -1.0;
        // Q = V diag(m) V^T = R^T diag(m) R with R = V^T.
        x.segment<4>(3) = UnitQuaternion::from_rotation(V.transpose()).coeffs();
        x.segment<3>(7) = es.eigenvalues();
    } else {
        const Eigen::Matrix3d G = Q.llt().matrixL();
        x.segment<6>(3) << G(0, 0), G(1, 1), G(2, 2), G(1, 0), G(2, 0), G(2, 1);
    }
    return x;
}

Ellipsoid decode_ellipsoid(PdParameterization p, const Eigen::VectorXd& x) {
    Eigen::Vector3d c;
    Eigen::Matrix3d Q;
    double logdet = 0.0;
    decode<double>(p, x, c, Q, logdet);
    return Ellipsoid(c, Q);
}

/// Shared program for the three ellipsoid fits; variables are (c, shape parameters).
class EllipsoidFitProgram : public optim::NonlinearProgram {
public:
    EllipsoidFitProgram(const PointSet& points, FitKind kind, PdParameterization param, double shape_lower)
        : points_(points), kind_(kind), param_(param), shape_lower_(shape_lower) {}

    Eigen::Index num_variables() const override { return param_count(param_); }
    Eigen::Index num_inequalities() const override { return kind_ == FitKind::skull ? 0 : points_.cols(); }

    Eigen::VectorXd lower_bounds() const override {
        Eigen::VectorXd lo = NonlinearProgram::lower_bounds();
        if (param_ == PdParameterization::rotation) {
            lo.segment<3>(7).setConstant(shape_lower_);
        } else {
            lo.segment<3>(3).setConstant(std::sqrt(shape_lower_));
        }
        return lo;
    }

    bool has_residuals() const override { return kind_ == FitKind::skull; }

    void residuals(const Eigen::VectorXd& x, Eigen::VectorXd& r, Eigen::MatrixXd* jac) const override {
        distances(x, r, jac);
        r.array() -= 1.0;
    }

    double objective(const Eigen::VectorXd& x, Eigen::VectorXd* grad) const override {
        if (kind_ == FitKind::skull) return NonlinearProgram::objective(x, grad);
        const double n = static_cast<double>(points_.cols());
        Eigen::VectorXd d;
        Eigen::MatrixXd J;
        distances(x, d, grad ? &J : nullptr);
        const double sign = kind_ == FitKind::target ? 1.0 : -1.0;
        double f = sign * d.sum() / n;
        if (grad) *grad = sign * J.colwise().sum().transpose() / n;
        if (kind_ == FitKind::enclosing) {
            const VectorX<AD> xa = active(x);
            Vector3<AD> c;
            Matrix3<AD> Q;
            AD logdet;
            decode<AD>(param_, xa, c, Q, logdet);
            f -= kEnclosingLogDetWeight * logdet.value();
            if (grad) *grad -= kEnclosingLogDetWeight * logdet.derivatives();
        }
        return f;
    }

    void inequalities(const Eigen::VectorXd& x, Eigen::VectorXd& g, Eigen::MatrixXd* jac) const override {
        if (kind_ == FitKind::skull) {
            NonlinearProgram::inequalities(x, g, jac);
            return;
        }
        distances(x, g, jac);
        if (kind_ == FitKind::target) {
            g = (1.0 - g.array()).matrix();
            if (jac) *jac = -*jac;
        } else {
            g.array() -= 1.0;
        }
    }

    /// Exact curvature of the Q-distances: the inequality rows weighted by z, plus
    /// the distance part of the objective. Only the log-det term is left to the
    /// secant model. Without this the inner iteration crawls at a first-order rate.
    bool add_constraint_curvature(const Eigen::VectorXd& x, const Eigen::VectorXd&, const Eigen::VectorXd& z,
                                  Eigen::MatrixXd& H) const override {
        if (kind_ == FitKind::skull) return false;
        const Eigen::Index m = points_.cols(), n = x.size();
        const double sign = kind_ == FitKind::target ? 1.0 : -1.0;
        // Weight of each distance: objective sign/m; row g = 1 - d (target) or d - 1 (enclosing).
        Eigen::VectorXd w = Eigen::VectorXd::Constant(m, sign / static_cast<double>(m));
        w += (kind_ == FitKind::target ? -1.0 : 1.0) * z;
        // With v = p - c, d = v^T Q v has Hessian blocks 2 Q (c, c), -2 dQ/dt_k v (c, t_k)
        // and v^T d2Q/dt_k dt_l v (t, t); weighted sums only need S = sum w v v^T and sum w v.
        Eigen::Vector3d c;
        Eigen::Matrix3d Q;
        double logdet = 0.0;
        decode<double>(param_, x, c, Q, logdet);
        const PointSet V = points_.colwise() - c;
        const Eigen::Vector3d wv = V * w;
        const Eigen::Matrix3d S = V * w.asDiagonal() * V.transpose();
        VectorX<AD2> xa(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            xa[i].value() = AD(x[i], n, i);
            xa[i].derivatives() = Eigen::Matrix<AD, Eigen::Dynamic, 1, 0, 10, 1>::Unit(n, i);
            for (Eigen::Index j = 0; j < n; ++j) xa[i].derivatives()[j].derivatives() = Deriv::Zero(n);
        }
        Vector3<AD2> ca;
        Matrix3<AD2> Qa;
        AD2 logdet_a;
        decode<AD2>(param_, xa, ca, Qa, logdet_a);
        H.topLeftCorner<3, 3>() += 2.0 * w.sum() * Q;
        for (Eigen::Index k = 3; k < n; ++k) {
            Eigen::Matrix3d dQ;
            for (int r = 0; r < 3; ++r)
                for (int q = 0; q < 3; ++q) dQ(r, q) = Qa(r, q).derivatives()[k].value();
            const Eigen::Vector3d cross = -2.0 * dQ * wv;
            H.block(0, k, 3, 1) += cross;
            H.block(k, 0, 1, 3) += cross.transpose();
        }
        for (int r = 0; r < 3; ++r)
            for (int q = 0; q < 3; ++q) {
                if (S(r, q) == 0.0) continue;
                for (Eigen::Index k = 3; k < n; ++k)
                    H.row(k).tail(n - 3) += S(r, q) * Qa(r, q).derivatives()[k].derivatives().tail(n - 3).transpose();
            }
        return true;
    }

    /// Raw objective value as written in the fitting problems (no normalization).
    double raw_objective(const Eigen::VectorXd& x) const {
        Eigen::VectorXd d;
        distances(x, d, nullptr);
        switch (kind_) {
            case FitKind::skull: return (d.array() - 1.0).square().sum();
            case FitKind::target: return d.sum();
            case FitKind::enclosing: return -d.sum();
        }
        return 0.0;
    }

private:
    VectorX<AD> active(const Eigen::VectorXd& x) const {
        const Eigen::Index n = x.size();
        VectorX<AD> xa(n);
        for (Eigen::Index i = 0; i < n; ++i) xa[i] = AD(x[i], n, i);
        return xa;
    }

    void distances(const Eigen::VectorXd& x, Eigen::VectorXd& d, Eigen::MatrixXd* jac) const {
        const Eigen::Index m = points_.cols();
        d.resize(m);
        if (!jac) {
            Eigen::Vector3d c;
            Eigen::Matrix3d Q;
            double logdet = 0.0;
            decode<double>(param_, x, c, Q, logdet);
            for (Eigen::Index i = 0; i < m; ++i) d[i] = q_dist_sq<double>(points_.col(i), c, Q);
            return;
        }
        const VectorX<AD> xa = active(x);
        Vector3<AD> c;
        Matrix3<AD> Q;
        AD logdet;
        decode<AD>(param_, xa, c, Q, logdet);
        jac->resize(m, x.size());
        for (Eigen::Index i = 0; i < m; ++i) {
            const Vector3<AD> v = points_.col(i).cast<AD>();
            const AD di = q_dist_sq<AD>(v, c, Q);
            d[i] = di.value();
            jac->row(i) = di.derivatives().transpose();
        }
    }

    const PointSet& points_;
    FitKind kind_;
    PdParameterization param_;
    double shape_lower_;
};

Eigen::Vector3d centroid(const PointSet& pts) { return pts.rowwise().mean(); }

Eigen::Matrix3d covariance(const PointSet& pts) {
    const PointSet centered = pts.colwise() - centroid(pts);
    return centered * centered.transpose() / static_cast<double>(pts.cols());
}

/// Smallest to largest singular value ratio of the centred cloud.
double extent_ratio(const PointSet& pts) {
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(covariance(pts), Eigen::EigenvaluesOnly);
    const Eigen::Vector3d ev = es.eigenvalues().cwiseMax(0.0);
    return ev[2] > 0.0 ? std::sqrt(ev[0] / ev[2]) : 0.0;
}

/// Inverse covariance rescaled so that the mean (or max) Q-distance of the points is one.
Eigen::Matrix3d initial_shape(const PointSet& pts, const Eigen::Vector3d& c, bool scale_to_max) {
    const Eigen::Matrix3d Q0 = covariance(pts).inverse();
    double mean = 0.0, max = 0.0;
    for (Eigen::Index i = 0; i < pts.cols(); ++i) {
        const double d = q_dist_sq<double>(pts.col(i), c, Q0);
        mean += d;
        max = std::max(max, d);
    }
    mean /= static_cast<double>(pts.cols());
    return Q0 / (scale_to_max ? max : mean);
}

void require_spanning(const PointSet& pts, const char* what) {
    if (pts.cols() < 4 || extent_ratio(pts) < 1e-9) {
        throw FitError(std::string(what) + ": need at least 4 points spanning three dimensions");
    }
}

bool acceptable(const optim::SolveResult& r) {
    if (r.status == optim::SolveStatus::optimal) return true;
    // A line search that stalls at a stationary point is fine for these small fits.
    return r.status == optim::SolveStatus::stalled && r.stationarity <= 1e-6 && r.infeasibility <= 1e-9;
}

}  // namespace

HyperplaneFit fit_hyperplane(const PointSet& points) {
    if (points.cols() < 3) throw FitError("hyperplane: need at least 3 points");
    const Eigen::MatrixXd V = points.transpose();
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(V);
    qr.setThreshold(1e-10);
    if (qr.rank() < 3) {
        throw FitError("hyperplane: rank-deficient system (collinear points or a plane through the origin)");
    }
    const Eigen::Vector3d h = qr.solve(Eigen::VectorXd::Ones(V.rows()));
    return {h, {HalfSpace(h, 1.0, Side::below), HalfSpace(h, 1.0, Side::above)}};
}

std::vector<HalfSpace> select_hemisphere(const std::array<HalfSpace, 2>& halfspaces, const PointSet& targets) {
    for (const HalfSpace& hs : halfspaces) {
        bool all = true;
        for (Eigen::Index i = 0; i < targets.cols() && all; ++i) all = hs.contains(targets.col(i));
        if (all) return {hs};
    }
    return {halfspaces[0], halfspaces[1]};
}

FitResult fit_skull(const PointSet& points, const HalfSpace& hemi, const FitOptions& options) {
    std::vector<Eigen::Index> keep;
    for (Eigen::Index i = 0; i < points.cols(); ++i)
        if (hemi.contains(points.col(i))) keep.push_back(i);
    return fit_skull(PointSet(points(Eigen::all, keep)), options);
}

FitResult fit_skull(const PointSet& pts, const FitOptions& options) {
    if (pts.cols() < 9) throw FitError("skull: need at least 9 points inside the half-space");
    require_spanning(pts, "skull");
    const Eigen::Vector3d c0 = centroid(pts);
    const Eigen::Matrix3d Q0 = initial_shape(pts, c0, false);
    const PdParameterization param = options.parameterization;
    const double lower = 1e-12 * Q0.trace();
    EllipsoidFitProgram program(pts, FitKind::skull, param, lower);

    const auto result = optim::solve(program, encode(param, c0, Q0), options.solver);
    if (!acceptable(result)) {
        throw FitError("skull: optimizer did not converge (" + optim::to_string(result.status) +
                       "), final objective " + std::to_string(result.objective));
    }
    FitResult fit;
    fit.ellipsoid = decode_ellipsoid(param, result.x);
    fit.objective = program.raw_objective(result.x);
    Eigen::VectorXd r;
    program.residuals(result.x, r, nullptr);
    fit.residual_max = r.cwiseAbs().maxCoeff();
    fit.iterations = std::max(1, result.inner_iterations);
    return fit;
}

FitResult fit_target(const PointSet& points, double delta_mri, const FitOptions& options) {
    if (!(delta_mri > 0.0)) throw FitError("target: delta_mri must be positive");
    require_spanning(points, "target");
    const PointSet boundary = extract_boundary(points, delta_mri);
    if (boundary.cols() == 0) throw FitError("target: empty boundary");

    // eig(Q) > (2/delta)^2, imposed on the diagonal factor of the rotation form.
    // The solve runs in grid units about the boundary centroid, where the bound is
    // 4 and the centre is O(1); Q-distances are unchanged by the change of units.
    const double bound = std::pow(2.0 / delta_mri, 2);
    const double lower = 4.0 * (1.0 + 1e-6);
    const Eigen::Vector3d c0 = centroid(boundary);
    const PointSet unit = (boundary.colwise() - c0) / delta_mri;
    Eigen::Matrix3d Q0 = initial_shape(unit, Eigen::Vector3d::Zero(), false);
    {
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(Q0);
        const Eigen::Vector3d ev = es.eigenvalues().cwiseMax(lower * (1.0 + 1e-3));
        Q0 = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
    }
    const PdParameterization param = PdParameterization::rotation;
    EllipsoidFitProgram program(unit, FitKind::target, param, lower);
    const auto result = optim::solve(program, encode(param, Eigen::Vector3d::Zero(), Q0), options.solver);
    if (result.status == optim::SolveStatus::infeasible) {
        throw FitError("target: infeasible; the cloud is thinner than delta_mri in some direction "
                       "(violated bound eig(Q) > " + std::to_string(bound) + ")");
    }
    if (!acceptable(result)) {
        throw FitError("target: optimizer did not converge (" + optim::to_string(result.status) + ")");
    }

    Eigen::VectorXd x = result.x;
    // Remove round-off so every boundary point is at Q-distance >= 1 exactly.
    Eigen::VectorXd g;
    program.inequalities(x, g, nullptr);
    const double min_d = 1.0 - g.maxCoeff();
    if (min_d < 1.0) x.segment<3>(7) /= min_d;

    const Ellipsoid in_units = decode_ellipsoid(param, x);
    FitResult fit;
    fit.ellipsoid = Ellipsoid(c0 + delta_mri * in_units.center(), in_units.shape() / (delta_mri * delta_mri));
    fit.objective = program.raw_objective(x);
    program.inequalities(x, g, nullptr);
    fit.residual_max = std::max(0.0, g.maxCoeff());
    fit.iterations = std::max(1, result.inner_iterations);
    return fit;
}

FitResult fit_enclosing(const PointSet& points, double min_semi_axis, const FitOptions& options) {
    if (points.cols() == 0) throw FitError("enclosing: empty cluster");
    const Eigen::Vector3d c0 = centroid(points);

    if (points.cols() < 4 || extent_ratio(points) < 1e-9) {
        if (!(min_semi_axis > 0.0)) throw FitError("enclosing: degenerate cluster needs a positive minimum semi-axis");
        const PointSet centered = points.colwise() - c0;
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(covariance(points));
        const Eigen::Matrix3d V = es.eigenvectors();
        // sqrt(3) * max |projection| per axis guarantees containment of every point.
        const Eigen::Vector3d spread = (V.transpose() * centered).cwiseAbs().rowwise().maxCoeff();
        const Eigen::Vector3d semi = (std::sqrt(3.0) * spread).cwiseMax(min_semi_axis);
        const Eigen::Matrix3d Q = V * semi.cwiseAbs2().cwiseInverse().asDiagonal() * V.transpose();
        FitResult fit;
        fit.ellipsoid = Ellipsoid(c0, Q);
        double dmax = 0.0, dsum = 0.0;
        for (Eigen::Index i = 0; i < points.cols(); ++i) {
            const double d = fit.ellipsoid.q_dist_sq(points.col(i));
            dmax = std::max(dmax, d);
            dsum += d;
        }
        fit.objective = -dsum;
        fit.residual_max = std::max(0.0, dmax - 1.0);
        fit.degenerate = true;
        return fit;
    }

    // Solve in centred, unit-RMS coordinates: Q-distances are invariant and the
    // log-det term only shifts by a constant, so the optimum maps back exactly.
    const double scale = std::sqrt(covariance(points).trace());
    const PointSet unit = (points.colwise() - c0) / scale;
    const PdParameterization param = options.parameterization;
    // The supremum of the summed Q-distances is approached by ever larger ellipsoids
    // whose boundary flattens onto the cloud; capping every semi-axis at the cluster
    // radius (the centred ball stays feasible) makes the maximum attained.
    const double radius = unit.colwise().norm().maxCoeff();
    const double cap = 1.0 / (radius * radius);
    Eigen::Matrix3d Q0 = initial_shape(unit, Eigen::Vector3d::Zero(), true);
    // A start that breaks the cap would be clipped into an infeasible one; the ball is safe.
    if (Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(Q0).eigenvalues().minCoeff() < cap) {
        Q0 = cap * Eigen::Matrix3d::Identity();
    }
    EllipsoidFitProgram program(unit, FitKind::enclosing, param, cap);
    const auto result = optim::solve(program, encode(param, Eigen::Vector3d::Zero(), Q0), options.solver);
    if (!acceptable(result) && !(result.status == optim::SolveStatus::stalled && result.infeasibility <= 1e-6)) {
        throw FitError("enclosing: optimizer did not converge (" + optim::to_string(result.status) + ")");
    }

    Eigen::Vector3d c;
    Eigen::Matrix3d Q;
    double logdet = 0.0;
    decode<double>(param, result.x, c, Q, logdet);
    c = c0 + scale * c;
    Q /= scale * scale;
    double dmax = 0.0;
    for (Eigen::Index i = 0; i < points.cols(); ++i) dmax = std::max(dmax, q_dist_sq<double>(points.col(i), c, Q));
    // Shrinking Q by the worst distance restores exact enclosure after round-off.
    if (dmax > 1.0) Q /= dmax;

    FitResult fit;
    fit.ellipsoid = Ellipsoid(c, Q);
    double dsum = 0.0;
    dmax = 0.0;
    for (Eigen::Index i = 0; i < points.cols(); ++i) {
        const double d = fit.ellipsoid.q_dist_sq(points.col(i));
        dsum += d;
        dmax = std::max(dmax, d);
    }
    fit.objective = -dsum;
    fit.residual_max = std::max(0.0, dmax - 1.0);
    fit.iterations = std::max(1, result.inner_iterations);
    return fit;
}

}  // namespace ctr
