#include "ctr/geometry.hpp"

#include <Eigen/Eigenvalues>

#include <numbers>

namespace ctr {

Ellipsoid::Ellipsoid(const Eigen::Vector3d& center, const Eigen::Matrix3d& shape)
    : center_(center), shape_(0.5 * (shape + shape.transpose())) {
    if (!center_.allFinite() || !shape_.allFinite()) {
        throw ValidationError("ellipsoid: non-finite center or shape matrix");
    }
    Eigen::LLT<Eigen::Matrix3d> llt(shape_);
    if (llt.info() != Eigen::Success) {
        throw ValidationError("ellipsoid: shape matrix is not positive definite");
    }
    // LLT accepts some matrices with eigenvalues at round-off level; reject those too.
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(shape_, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() <= 0.0) {
        throw ValidationError("ellipsoid: shape matrix is not positive definite");
    }
}

Ellipsoid Ellipsoid::ball(const Eigen::Vector3d& center, double radius) {
    if (!(radius > 0.0)) {
        throw ValidationError("ellipsoid: ball radius must be positive");
    }
    return Ellipsoid(center, Eigen::Matrix3d::Identity() / (radius * radius));
}

Eigen::Vector3d Ellipsoid::semi_axes() const {
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(shape_, Eigen::EigenvaluesOnly);
    return es.eigenvalues().cwiseSqrt().cwiseInverse();
}

double Ellipsoid::volume() const {
    return 4.0 * std::numbers::pi / (3.0 * std::sqrt(shape_.determinant()));
}

HalfSpace::HalfSpace(const Eigen::Vector3d& h, double off, Side s) : normal(h), offset(off), side(s) {
    if (!(h.norm() > 0.0) || !h.allFinite()) {
        throw ValidationError("half-space: normal vector must be finite and nonzero");
    }
}

UnitQuaternion::UnitQuaternion(const Eigen::Vector4d& q) {
    const double n = q.norm();
    if (!(n > 0.0) || !std::isfinite(n)) {
        throw ValidationError("quaternion: zero or non-finite quaternion cannot be normalized");
    }
    q_ = q / n;
}

UnitQuaternion UnitQuaternion::from_rotation(const Eigen::Matrix3d& R) {
    const Eigen::Quaterniond e(R);
    return UnitQuaternion(e.w(), e.x(), e.y(), e.z());
}

Eigen::Matrix3d rotation_from_quaternion(const UnitQuaternion& q) {
    return quaternion_matrix<double>(q.coeffs());
}

Eigen::Vector3d vee3(const Eigen::Matrix3d& m) {
    if ((m + m.transpose()).norm() >= 1e-10) {
        throw ValidationError("vee3: matrix is not skew-symmetric");
    }
    return {m(2, 1), m(0, 2), m(1, 0)};
}

Eigen::Matrix4d wedge6(const Eigen::Matrix<double, 6, 1>& xi) {
    Eigen::Matrix4d t = Eigen::Matrix4d::Zero();
    t.topLeftCorner<3, 3>() = wedge3<double>(xi.tail<3>());
    t.topRightCorner<3, 1>() = xi.head<3>();
    return t;
}

Eigen::Matrix<double, 6, 1> vee6(const Eigen::Matrix4d& twist) {
    if (twist.bottomRows<1>().norm() != 0.0) {
        throw ValidationError("vee6: bottom row of a twist must be zero");
    }
    Eigen::Matrix<double, 6, 1> xi;
    xi.head<3>() = twist.topRightCorner<3, 1>();
    xi.tail<3>() = vee3(twist.topLeftCorner<3, 3>());
    return xi;
}

Eigen::Matrix3d pd_from_rotation_params(const UnitQuaternion& quat, const Eigen::Vector3d& m) {
    if (!(m.minCoeff() > 0.0)) {
        throw ValidationError("pd_from_rotation_params: diagonal entries must be positive");
    }
    return shape_from_rotation<double>(quat.coeffs(), m);
}

Eigen::Matrix3d pd_from_cholesky_params(const Eigen::Matrix<double, 6, 1>& g) {
    if (!(g.head<3>().minCoeff() > 0.0)) {
        throw ValidationError("pd_from_cholesky_params: diagonal of G must be positive");
    }
    return shape_from_cholesky<double>(g);
}

Eigen::Matrix4d Frame::matrix() const {
    Eigen::Matrix4d g = Eigen::Matrix4d::Identity();
    g.topLeftCorner<3, 3>() = R;
    g.topRightCorner<3, 1>() = p;
    return g;
}

bool Frame::is_valid(double tol) const {
    return orthonormality_error(R) <= tol && std::abs(R.determinant() - 1.0) <= tol;
}

Eigen::Matrix3d project_to_rotation(const Eigen::Matrix3d& M) {
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(M, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d D = Eigen::Matrix3d::Identity();
    if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) {
        D(2, 2) = -1.0;
    }
    return svd.matrixU() * D * svd.matrixV().transpose();
}

double orthonormality_error(const Eigen::Matrix3d& R) {
    return (R.transpose() * R - Eigen::Matrix3d::Identity()).norm();
}

}  // namespace ctr
