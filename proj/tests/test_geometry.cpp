#include "ctr/geometry.hpp"

#include <gtest/gtest.h>

#include <numbers>
#include <random>

using namespace ctr;

namespace {

Eigen::Vector4d random_quaternion(std::mt19937_64& rng) {
    std::normal_distribution<double> n;
    return Eigen::Vector4d(n(rng), n(rng), n(rng), n(rng)).normalized();
}

}  // namespace

TEST(Geometry, QuaternionMatrixMatchesEigenQuaternion) {
    // Oracle: Eigen's own quaternion-to-matrix conversion (w, x, y, z).
    std::mt19937_64 rng(1);
    for (int t = 0; t < 200; ++t) {
        const Eigen::Vector4d q = random_quaternion(rng);
        const Eigen::Matrix3d expected = Eigen::Quaterniond(q[0], q[1], q[2], q[3]).toRotationMatrix();
        EXPECT_LT((quaternion_matrix<double>(q) - expected).norm(), 1e-12);
    }
}

TEST(Geometry, RotationFromQuaternionIsOrthonormalWithUnitDeterminant) {
    std::mt19937_64 rng(2);
    for (int t = 0; t < 200; ++t) {
        const Eigen::Matrix3d R = rotation_from_quaternion(UnitQuaternion(random_quaternion(rng)));
        EXPECT_LT(orthonormality_error(R), 1e-12);
        EXPECT_NEAR(R.determinant(), 1.0, 1e-12);
    }
}

TEST(Geometry, AxisAngleQuaternion) {
    // Quarter turn about z: e1 -> e2.
    const double h = std::sqrt(0.5);
    const Eigen::Matrix3d R = rotation_from_quaternion(UnitQuaternion(h, 0.0, 0.0, h));
    EXPECT_LT((R * Eigen::Vector3d::UnitX() - Eigen::Vector3d::UnitY()).norm(), 1e-15);
}

TEST(Geometry, UnitQuaternionNormalizesAndRejectsZero) {
    const UnitQuaternion q(2.0, 0.0, 0.0, 0.0);
    EXPECT_DOUBLE_EQ(q.coeffs().norm(), 1.0);
    EXPECT_THROW(UnitQuaternion(0.0, 0.0, 0.0, 0.0), ValidationError);
}

TEST(Geometry, FromRotationRoundTrip) {
    std::mt19937_64 rng(3);
    for (int t = 0; t < 100; ++t) {
        const Eigen::Matrix3d R = rotation_from_quaternion(UnitQuaternion(random_quaternion(rng)));
        EXPECT_LT((rotation_from_quaternion(UnitQuaternion::from_rotation(R)) - R).norm(), 1e-12);
    }
}

TEST(Geometry, WedgeIsCrossProductAndVeeInvertsIt) {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    for (int t = 0; t < 50; ++t) {
        const Eigen::Vector3d x(u(rng), u(rng), u(rng)), y(u(rng), u(rng), u(rng));
        EXPECT_LT((wedge3<double>(x) * y - x.cross(y)).norm(), 1e-13);
        EXPECT_LT((vee3(wedge3<double>(x)) - x).norm(), 1e-15);
    }
    Eigen::Matrix3d not_skew = Eigen::Matrix3d::Identity();
    EXPECT_THROW(vee3(not_skew), ValidationError);
}

TEST(Geometry, TwistRoundTripAndLayout) {
    Eigen::Matrix<double, 6, 1> xi;
    xi << 1, 2, 3, 4, 5, 6;
    const Eigen::Matrix4d T = wedge6(xi);
    EXPECT_EQ((T.block<3, 1>(0, 3)), Eigen::Vector3d(1, 2, 3));
    EXPECT_EQ((T.block<3, 3>(0, 0)), wedge3<double>(Eigen::Vector3d(4, 5, 6)));
    EXPECT_EQ(T.row(3), Eigen::RowVector4d::Zero());
    EXPECT_EQ(vee6(T), xi);
}

TEST(Geometry, EllipsoidValidationAndQDistance) {
    EXPECT_THROW(Ellipsoid(Eigen::Vector3d::Zero(), Eigen::Vector3d(1, -1, 1).asDiagonal().toDenseMatrix()),
                 ValidationError);
    const Ellipsoid e(Eigen::Vector3d(1, 0, 0), Eigen::Vector3d(4, 1, 0.25).asDiagonal().toDenseMatrix());
    // Semi-axes 0.5, 1, 2 along x, y, z.
    EXPECT_DOUBLE_EQ(e.q_dist_sq(Eigen::Vector3d(1.5, 0, 0)), 1.0);
    EXPECT_DOUBLE_EQ(e.q_dist_sq(Eigen::Vector3d(1, 0, 2)), 1.0);
    EXPECT_TRUE(e.contains(Eigen::Vector3d(1, 0.5, 0.5)));
    EXPECT_FALSE(e.contains(Eigen::Vector3d(1, 1.01, 0)));
    EXPECT_NEAR(e.volume(), 4.0 / 3.0 * std::numbers::pi * 0.5 * 1.0 * 2.0, 1e-12);
    const Eigen::Vector3d axes = e.semi_axes();
    // Ascending eigenvalues, so the longest axis comes first.
    EXPECT_NEAR(axes[0], 2.0, 1e-12);
    EXPECT_NEAR(axes[2], 0.5, 1e-12);
}

TEST(Geometry, EllipsoidSymmetrizesShape) {
    Eigen::Matrix3d Q = Eigen::Matrix3d::Identity();
    Q(0, 1) = 0.2;
    const Ellipsoid e(Eigen::Vector3d::Zero(), Q);
    EXPECT_DOUBLE_EQ(e.shape()(0, 1), e.shape()(1, 0));
}

TEST(Geometry, HalfSpaceSides) {
    const HalfSpace below(Eigen::Vector3d(0, 0, 10), 1.0, Side::below);  // z <= 0.1
    const HalfSpace above(Eigen::Vector3d(0, 0, 10), 1.0, Side::above);
    EXPECT_TRUE(below.contains(Eigen::Vector3d(0, 0, 0.05)));
    EXPECT_FALSE(below.contains(Eigen::Vector3d(0, 0, 0.2)));
    EXPECT_TRUE(above.contains(Eigen::Vector3d(0, 0, 0.2)));
    EXPECT_NEAR(below.violation<double>(Eigen::Vector3d(0, 0, 0.2)), 1.0, 1e-15);
}

TEST(Geometry, PositiveDefiniteParameterizations) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.1, 5.0);
    for (int t = 0; t < 50; ++t) {
        const Eigen::Vector3d m(u(rng), u(rng), u(rng));
        const Eigen::Vector4d q = random_quaternion(rng);
        const Eigen::Matrix3d Q = pd_from_rotation_params(UnitQuaternion(q), m);
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(Q);
        Eigen::Vector3d sorted = m;
        std::sort(sorted.data(), sorted.data() + 3);
        EXPECT_LT((es.eigenvalues() - sorted).norm(), 1e-10);

        Eigen::Matrix<double, 6, 1> g;
        g << u(rng), u(rng), u(rng), u(rng) - 2.5, u(rng) - 2.5, u(rng) - 2.5;
        const Eigen::Matrix3d C = pd_from_cholesky_params(g);
        EXPECT_GT(Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(C).eigenvalues().minCoeff(), 0.0);
    }
    Eigen::Matrix<double, 6, 1> singular = Eigen::Matrix<double, 6, 1>::Zero();
    singular[0] = singular[1] = 1.0;
    EXPECT_THROW(pd_from_cholesky_params(singular), ValidationError);
}

TEST(Geometry, ProjectToRotation) {
    std::mt19937_64 rng(6);
    std::normal_distribution<double> n(0.0, 1e-3);
    const Eigen::Matrix3d R = rotation_from_quaternion(UnitQuaternion(random_quaternion(rng)));
    Eigen::Matrix3d noisy = R;
    for (int i = 0; i < 9; ++i) noisy.data()[i] += n(rng);
    const Eigen::Matrix3d P = project_to_rotation(noisy);
    EXPECT_LT(orthonormality_error(P), 1e-12);
    EXPECT_NEAR(P.determinant(), 1.0, 1e-12);
    EXPECT_LT((P - R).norm(), 1e-2);
}

TEST(Geometry, FrameValidity) {
    Frame f;
    EXPECT_TRUE(f.is_valid());
    f.R(0, 0) = 2.0;
    EXPECT_FALSE(f.is_valid());
}
