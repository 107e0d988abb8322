#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

namespace ctr {

template <typename Scalar>
using Vector2 = Eigen::Matrix<Scalar, 2, 1>;
template <typename Scalar>
using Vector3 = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar>
using Vector4 = Eigen::Matrix<Scalar, 4, 1>;
template <typename Scalar>
using Matrix2 = Eigen::Matrix<Scalar, 2, 2>;
template <typename Scalar>
using Matrix3 = Eigen::Matrix<Scalar, 3, 3>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Points stored column-wise, one voxel centre per column.
using PointSet = Eigen::Matrix3Xd;

/// Raised when inputs violate a documented precondition.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// (x - c)^T Q (x - c). Templated so that any of the arguments may carry derivatives.
template <typename Scalar>
Scalar q_dist_sq(const Vector3<Scalar>& x, const Vector3<Scalar>& c, const Matrix3<Scalar>& Q) {
    const Vector3<Scalar> d = x - c;
    return d.dot(Q * d);
}

/// Ell(c, Q) = {x : (x - c)^T Q (x - c) <= 1} with Q symmetric positive definite.
class Ellipsoid {
public:
    Ellipsoid() : center_(Eigen::Vector3d::Zero()), shape_(Eigen::Matrix3d::Identity()) {}

    /// Symmetrizes Q and rejects it unless it is positive definite.
    Ellipsoid(const Eigen::Vector3d& center, const Eigen::Matrix3d& shape);

    static Ellipsoid ball(const Eigen::Vector3d& center, double radius);

    const Eigen::Vector3d& center() const { return center_; }
    const Eigen::Matrix3d& shape() const { return shape_; }

    double q_dist_sq(const Eigen::Vector3d& x) const { return ctr::q_dist_sq<double>(x, center_, shape_); }
    bool contains(const Eigen::Vector3d& x, double slack = 0.0) const { return q_dist_sq(x) <= 1.0 + slack; }

    /// Semi-axis lengths 1/sqrt(eig(Q)), ascending eigenvalue order.
    Eigen::Vector3d semi_axes() const;
    double volume() const;

    Ellipsoid with_center(const Eigen::Vector3d& c) const { return Ellipsoid(c, shape_, Trusted{}); }

private:
    struct Trusted {};
    Ellipsoid(const Eigen::Vector3d& c, const Eigen::Matrix3d& q, Trusted) : center_(c), shape_(q) {}

    Eigen::Vector3d center_;
    Eigen::Matrix3d shape_;
};

inline double q_dist_sq(const Eigen::Vector3d& x, const Ellipsoid& e) { return e.q_dist_sq(x); }

enum class Side { below, above };

/// {x : h^T x <= offset} (Side::below) or {x : h^T x >= offset} (Side::above).
struct HalfSpace {
    Eigen::Vector3d normal;
    double offset = 1.0;
    Side side = Side::below;

    HalfSpace() : normal(Eigen::Vector3d::UnitZ()) {}
    HalfSpace(const Eigen::Vector3d& h, double off, Side s);

    /// Signed violation: <= 0 inside the half-space.
    template <typename Scalar>
    Scalar violation(const Vector3<Scalar>& x) const {
        const Scalar v = x.dot(normal.cast<Scalar>()) - Scalar(offset);
        return side == Side::below ? v : Scalar(-v);
    }

    bool contains(const Eigen::Vector3d& x, double slack = 0.0) const { return violation<double>(x) <= slack; }
};

/// Unit quaternion (q0, q1, q2, q3), scalar part first.
class UnitQuaternion {
public:
    UnitQuaternion() : q_(1.0, 0.0, 0.0, 0.0) {}
    /// Normalizes on entry; a zero quaternion is rejected.
    explicit UnitQuaternion(const Eigen::Vector4d& q);
    UnitQuaternion(double q0, double q1, double q2, double q3) : UnitQuaternion(Eigen::Vector4d(q0, q1, q2, q3)) {}

    static UnitQuaternion from_rotation(const Eigen::Matrix3d& R);

    const Eigen::Vector4d& coeffs() const { return q_; }
    double operator[](int i) const { return q_[i]; }

private:
    Eigen::Vector4d q_;
};

/// Rotation matrix of a quaternion (q0 scalar). No normalization: callers that
/// optimize raw quaternions normalize them first.
template <typename Scalar>
Matrix3<Scalar> quaternion_matrix(const Vector4<Scalar>& q) {
    const Scalar q0 = q[0], q1 = q[1], q2 = q[2], q3 = q[3];
    const Scalar two(2);
    Matrix3<Scalar> R;
    R(0, 0) = Scalar(1) - two * (q2 * q2 + q3 * q3);
    R(0, 1) = two * (q1 * q2 - q0 * q3);
    R(0, 2) = two * (q1 * q3 + q0 * q2);
    R(1, 0) = two * (q1 * q2 + q0 * q3);
    R(1, 1) = Scalar(1) - two * (q1 * q1 + q3 * q3);
    R(1, 2) = two * (q2 * q3 - q0 * q1);
    R(2, 0) = two * (q1 * q3 - q0 * q2);
    R(2, 1) = two * (q2 * q3 + q0 * q1);
    R(2, 2) = Scalar(1) - two * (q1 * q1 + q2 * q2);
    return R;
}

Eigen::Matrix3d rotation_from_quaternion(const UnitQuaternion& q);

/// Hat map: wedge3(x) * y == x.cross(y).
template <typename Scalar>
Matrix3<Scalar> wedge3(const Vector3<Scalar>& x) {
    Matrix3<Scalar> m;
    m << Scalar(0), -x[2], x[1],
         x[2], Scalar(0), -x[0],
         -x[1], x[0], Scalar(0);
    return m;
}

/// Inverse of wedge3; rejects matrices with ||M + M^T|| >= 1e-10.
Eigen::Vector3d vee3(const Eigen::Matrix3d& m);

/// Twist coordinates xi = (v, omega) -> [[omega^, v], [0, 0]].
Eigen::Matrix4d wedge6(const Eigen::Matrix<double, 6, 1>& xi);
Eigen::Matrix<double, 6, 1> vee6(const Eigen::Matrix4d& twist);

/// Q = R^T diag(m) R with R from the (internally normalized) quaternion.
template <typename Scalar>
Matrix3<Scalar> shape_from_rotation(const Vector4<Scalar>& quat, const Vector3<Scalar>& m) {
    const Vector4<Scalar> qn = quat / quat.norm();
    const Matrix3<Scalar> R = quaternion_matrix<Scalar>(qn);
    return R.transpose() * m.asDiagonal() * R;
}

/// Q = G G^T, G lower triangular from g = (G00, G11, G22, G10, G20, G21).
template <typename Scalar>
Matrix3<Scalar> shape_from_cholesky(const Eigen::Matrix<Scalar, 6, 1>& g) {
    Matrix3<Scalar> G = Matrix3<Scalar>::Zero();
    G(0, 0) = g[0];
    G(1, 1) = g[1];
    G(2, 2) = g[2];
    G(1, 0) = g[3];
    G(2, 0) = g[4];
    G(2, 1) = g[5];
    return G * G.transpose();
}

/// Validated entry points of the two positive-definite parameterizations.
Eigen::Matrix3d pd_from_rotation_params(const UnitQuaternion& quat, const Eigen::Vector3d& m);
Eigen::Matrix3d pd_from_cholesky_params(const Eigen::Matrix<double, 6, 1>& g);

/// A point with an attached orientation (an element of SE(3)).
struct Frame {
    Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
    Eigen::Vector3d p = Eigen::Vector3d::Zero();

    Eigen::Matrix4d matrix() const;
    bool is_valid(double tol = 1e-10) const;
};

/// Nearest rotation in the Frobenius norm (polar factor with det = +1).
Eigen::Matrix3d project_to_rotation(const Eigen::Matrix3d& M);

/// ||R^T R - I||_F
double orthonormality_error(const Eigen::Matrix3d& R);

}  // namespace ctr
