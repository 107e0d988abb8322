#pragma once

#include "ctr/geometry.hpp"

#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

namespace ctr {

/// One pre-curved elastic tube. Index 0 of a TubeSet is the outermost tube.
struct Tube {
    double length = 0.0;       ///< L, total length [m]
    double beta = 0.0;         ///< retraction into the actuation unit [m], -L <= beta <= 0
    double alpha = 0.0;        ///< base rotation [rad]
    Eigen::Vector3d u_star = Eigen::Vector3d::Zero();  ///< pre-curvature [1/m]; u_star.z() is carried but unused
    double rho_inner = 0.0;    ///< inner diameter [m]
    double rho_outer = 0.0;    ///< outer diameter [m]
    double youngs = 58e9;      ///< E [Pa]
    double shear = 21.5e9;     ///< G [Pa]

    double extended_length() const { return length + beta; }
    /// Second moment of area of the annulus, pi (rho_o^4 - rho_i^4) / 64.
    double second_moment() const;
    double polar_moment() const { return 2.0 * second_moment(); }
    double bending_stiffness() const { return youngs * second_moment(); }
    double torsional_stiffness() const { return shear * polar_moment(); }
};

/// Validated, ordered tube collection (outermost first).
class TubeSet {
public:
    TubeSet() = default;
    /// Wraps alpha into [0, 2 pi) and checks per-tube and nesting invariants.
    explicit TubeSet(std::vector<Tube> tubes);

    std::size_t size() const { return tubes_.size(); }
    const Tube& operator[](std::size_t i) const { return tubes_[i]; }
    const std::vector<Tube>& tubes() const { return tubes_; }

    /// Extended lengths l_i = L_i + beta_i, non-decreasing.
    std::vector<double> segment_ends() const;

private:
    std::vector<Tube> tubes_;
};

/// Indices (0-based) of the tubes present at arc length s: {i : s <= l_i}.
std::vector<std::size_t> active_set(double s, const TubeSet& tubes);

/// Stiffness data the ODEs need, templated so the planner can differentiate through it.
template <typename Scalar>
struct TubeStiffness {
    Scalar bending;        ///< E I
    Scalar torsional;      ///< G J
    Vector2<Scalar> precurvature;  ///< u*_xy
};

std::vector<TubeStiffness<double>> stiffness_of(const TubeSet& tubes);

template <typename Scalar>
Matrix2<Scalar> planar_rotation(const Scalar& angle) {
    using std::cos;
    using std::sin;
    const Scalar c = cos(angle), s = sin(angle);
    Matrix2<Scalar> m;
    m << c, -s, s, c;
    return m;
}

/// u_ixy = (1/(EI)) sum_j C(psi_j - psi_i) E_j I_j u*_jxy over active tubes j >= first_active.
template <typename Scalar>
Vector2<Scalar> resultant_curvature(std::size_t i, std::span<const TubeStiffness<Scalar>> tubes,
                                    std::size_t first_active, const VectorX<Scalar>& psi) {
    Scalar total(0);
    Vector2<Scalar> sum = Vector2<Scalar>::Zero();
    for (std::size_t j = first_active; j < tubes.size(); ++j) {
        total += tubes[j].bending;
        sum += planar_rotation<Scalar>(psi[j] - psi[i]) * (tubes[j].bending * tubes[j].precurvature);
    }
    return sum / total;
}

/// Right-hand side of the torsion ODEs for the active tubes; inactive entries are zero.
///   dpsi_i = u_iz
///   du_iz  = E_i I_i / ((EI) G_i J_i) sum_j E_j I_j u*_ixy^T B(psi_i - psi_j) u*_jxy
template <typename Scalar>
void torsion_rhs(std::span<const TubeStiffness<Scalar>> tubes, std::size_t first_active, const VectorX<Scalar>& psi,
                 const VectorX<Scalar>& uz, VectorX<Scalar>& dpsi, VectorX<Scalar>& duz) {
    using std::cos;
    using std::sin;
    const auto n = static_cast<Eigen::Index>(tubes.size());
    if (first_active >= tubes.size()) throw std::invalid_argument("torsion_rhs: empty active set");
    dpsi = VectorX<Scalar>::Zero(n);
    duz = VectorX<Scalar>::Zero(n);
    Scalar total(0);
    for (std::size_t j = first_active; j < tubes.size(); ++j) total += tubes[j].bending;
    for (std::size_t i = first_active; i < tubes.size(); ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        dpsi[ii] = uz[ii];
        Scalar acc(0);
        for (std::size_t j = first_active; j < tubes.size(); ++j) {
            const Scalar d = psi[ii] - psi[static_cast<Eigen::Index>(j)];
            const Scalar sd = sin(d), cd = cos(d);
            const Vector2<Scalar>& ui = tubes[i].precurvature;
            const Vector2<Scalar>& uj = tubes[j].precurvature;
            // u_i^T [[sin, -cos], [cos, sin]] u_j
            const Scalar form = ui[0] * (sd * uj[0] - cd * uj[1]) + ui[1] * (cd * uj[0] + sd * uj[1]);
            acc += tubes[j].bending * form;
        }
        duz[ii] = tubes[i].bending / (total * tubes[i].torsional) * acc;
    }
}

/// Full state x = [p (3), R column-major (9), psi (n), u_z (n)].
inline Eigen::Index state_size(std::size_t n_tubes) { return 12 + 2 * static_cast<Eigen::Index>(n_tubes); }

/// Derivative of the full state on a segment whose first present tube is `first_active`.
/// The frame follows the innermost tube: Rdot = R u^, pdot = R e3.
template <typename Scalar>
VectorX<Scalar> state_derivative(const VectorX<Scalar>& x, std::span<const TubeStiffness<Scalar>> tubes,
                                 std::size_t first_active) {
    const auto n = static_cast<Eigen::Index>(tubes.size());
    const VectorX<Scalar> psi = x.segment(12, n);
    const VectorX<Scalar> uz = x.segment(12 + n, n);
    VectorX<Scalar> dpsi, duz;
    torsion_rhs<Scalar>(tubes, first_active, psi, uz, dpsi, duz);

    const Vector2<Scalar> uxy = resultant_curvature<Scalar>(tubes.size() - 1, tubes, first_active, psi);
    const Vector3<Scalar> u(uxy[0], uxy[1], uz[n - 1]);
    const Eigen::Map<const Matrix3<Scalar>> R(x.data() + 3);

    VectorX<Scalar> dx(x.size());
    dx.template head<3>() = R.col(2);
    Eigen::Map<Matrix3<Scalar>>(dx.data() + 3) = R * wedge3<Scalar>(u);
    dx.segment(12, n) = dpsi;
    dx.segment(12 + n, n) = duz;
    return dx;
}

/// One classical fourth-order Runge-Kutta step of length h.
template <typename Scalar>
VectorX<Scalar> rk4_step(const VectorX<Scalar>& x, const Scalar& h, std::span<const TubeStiffness<Scalar>> tubes,
                         std::size_t first_active) {
    const Scalar half = h / Scalar(2);
    const VectorX<Scalar> k1 = state_derivative<Scalar>(x, tubes, first_active);
    const VectorX<Scalar> k2 = state_derivative<Scalar>((x + half * k1).eval(), tubes, first_active);
    const VectorX<Scalar> k3 = state_derivative<Scalar>((x + half * k2).eval(), tubes, first_active);
    const VectorX<Scalar> k4 = state_derivative<Scalar>((x + h * k3).eval(), tubes, first_active);
    return x + (h / Scalar(6)) * (k1 + Scalar(2) * k2 + Scalar(2) * k3 + k4);
}

/// One RK4 step of Rdot = R u^, pdot = R e3 with constant u, followed by polar re-orthonormalization.
Frame integrate_frame(const Frame& frame, const Eigen::Vector3d& u, double ds);

struct PathNode {
    double s = 0.0;
    Eigen::Vector3d p = Eigen::Vector3d::Zero();
    Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
    Eigen::VectorXd psi;
    Eigen::VectorXd uz;
    Eigen::Vector2d uxy = Eigen::Vector2d::Zero();  ///< curvature of the innermost tube
};

/// Discretized backbone of the innermost tube.
struct RobotPath {
    std::vector<PathNode> nodes;
    std::vector<double> segment_ends;
    int newton_iterations = 0;  ///< includes any precurvature-continuation steps
    double bvp_residual = 0.0;

    double length() const { return nodes.empty() ? 0.0 : nodes.back().s; }
    const PathNode& tip() const { return nodes.back(); }
};

struct ShootingOptions {
    int nodes_per_segment = 50;
    int max_newton_iterations = 50;
    double residual_tol = 1e-10;
    bool reorthonormalize = true;
};

/// Raised when the torsion boundary-value problem does not converge.
class ConvergenceError : public std::runtime_error {
public:
    ConvergenceError(const std::string& what, double residual) : std::runtime_error(what), residual_(residual) {}
    double residual() const { return residual_; }

private:
    double residual_;
};

/// Integrates the full model for a given guess of u_z(0); psi(0) = alpha - beta u_z(0).
/// `terminal` receives u_iz(l_i) for each tube.
RobotPath integrate_path(const TubeSet& tubes, const Eigen::VectorXd& uz0, const Eigen::Vector3d& p0,
                         const Eigen::Matrix3d& R0, const ShootingOptions& options, Eigen::VectorXd* terminal);

/// Solves the torsion two-point BVP by damped Newton shooting on u_z(0) and returns the path.
/// If Newton from u_z(0) = 0 stalls, retries by continuation in the precurvature scale.
RobotPath shoot_forward(const TubeSet& tubes, const Eigen::Vector3d& p0, const Eigen::Matrix3d& R0,
                        const ShootingOptions& options = {});

}  // namespace ctr
