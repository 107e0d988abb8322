#include "ctr/planner.hpp"
#include "toy_scenario.hpp"

#include <gtest/gtest.h>

#include <numbers>
#include <random>

using namespace ctr;
using ctr::testing::straight_start;
using ctr::testing::toy_problem;

namespace {

TranscriptionOptions nodes(int per_segment) {
    TranscriptionOptions o;
    o.nodes_per_segment = per_segment;
    return o;
}

/// A point away from every kink: bent, twisted tubes with retraction and a tilted base.
Eigen::VectorXd generic_point(const Transcription& nlp) {
    const std::size_t n = nlp.n_tubes();
    Decision d = straight_line_guess(nlp.problem(), Eigen::Vector3d(0.002, 0.01, 0.015), Eigen::Vector3d(0.08, 0.005, -0.004));
    for (std::size_t i = 0; i < n; ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        d.u_star(0, ii) = 6.0 + 3.0 * static_cast<double>(i);
        d.alpha[ii] = 0.7 * static_cast<double>(i);
    }
    Eigen::VectorXd uz0 = Eigen::VectorXd::LinSpaced(static_cast<Eigen::Index>(n), 0.3, -0.2);
    Eigen::VectorXd x = nlp.pack(d, uz0);
    // Leave the defect manifold too, so the defect rows are exercised off it.
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (Eigen::Index k = 9 * static_cast<Eigen::Index>(n) + 7; k < x.size(); ++k) x[k] += 0.05 * u(rng);
    x.segment<4>(7 * static_cast<Eigen::Index>(n) + 3) *= 1.3;  // unnormalized quaternion
    return x;
}

/// Central-difference Jacobian of a vector function.
template <typename F>
Eigen::MatrixXd numeric_jacobian(F&& f, const Eigen::VectorXd& x, Eigen::Index rows) {
    Eigen::MatrixXd J(rows, x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double h = 1e-6 * std::max(1.0, std::abs(x[i]));
        Eigen::VectorXd a = x, b = x;
        a[i] += h;
        b[i] -= h;
        J.col(i) = (f(a) - f(b)) / (2.0 * h);
    }
    return J;
}

}  // namespace

TEST(Transcription, CountsForOneTubeAndFiveNodes) {
    PlanProblem p = toy_problem(1);
    p.obstacles.clear();
    const Transcription nlp(p, nodes(5));
    EXPECT_EQ(nlp.num_nodes(), 5);
    EXPECT_EQ(nlp.num_variables(), 9 + 7 + 4 * 2);
    // 4 intervals x 2 torsion defects, skull entry, terminal torsion.
    EXPECT_EQ(nlp.num_equalities(), 10);
    // 5 nodes x (skull, hemisphere), target, l <= L, wall.
    EXPECT_EQ(nlp.num_inequalities(), 13);
}

TEST(Transcription, EachObstacleAddsOneRowPerNode) {
    PlanProblem p = toy_problem(2);
    p.obstacles.clear();
    const Transcription base(p, nodes(6));
    for (int j = 0; j < 3; ++j) p.obstacles.push_back(Ellipsoid::ball(Eigen::Vector3d(0.05, 0.01 * j, 0.0), 0.005));
    const Transcription more(p, nodes(6));
    EXPECT_EQ(more.num_inequalities() - base.num_inequalities(), 3 * more.num_nodes());
    EXPECT_EQ(more.num_equalities(), base.num_equalities());
    EXPECT_EQ(more.num_variables(), base.num_variables());
}

TEST(Transcription, PackedRolloutHasNoDefects) {
    for (std::size_t n : {1u, 2u, 3u}) {
        const Transcription nlp(toy_problem(n), nodes(7));
        Decision d = straight_line_guess(nlp.problem(), default_entry(nlp.problem()), nlp.problem().target.center());
        for (std::size_t i = 0; i < n; ++i) d.u_star(0, static_cast<Eigen::Index>(i)) = 5.0 * static_cast<double>(i + 1);
        const Eigen::VectorXd x = nlp.pack(d, Eigen::VectorXd::Constant(static_cast<Eigen::Index>(n), 0.1));
        Eigen::VectorXd c;
        nlp.equalities(x, c, nullptr);
        const Eigen::Index defects = (nlp.num_nodes() - 1) * nlp.torsion_dim();
        EXPECT_LE(c.head(defects).cwiseAbs().maxCoeff(), 1e-10) << n << " tubes";
        // The default entry lies on the skull.
        EXPECT_NEAR(c[defects], 0.0, 1e-12);
    }
}

TEST(Transcription, PackUnpackRoundTrip) {
    const Transcription nlp(toy_problem(3), nodes(5));
    Decision d = straight_line_guess(nlp.problem(), default_entry(nlp.problem()), nlp.problem().target.center());
    d.alpha = Eigen::Vector3d(0.5, 1.0, 2.5);
    d.u_star(0, 2) = 12.0;
    const Decision back = nlp.unpack(nlp.pack(d));
    EXPECT_LT((back.length - d.length).norm(), 1e-15);
    EXPECT_LT((back.beta - d.beta).norm(), 1e-15);
    EXPECT_LT((back.rho_inner - d.rho_inner).norm(), 1e-15);
    EXPECT_LT((back.u_star - d.u_star).norm(), 1e-15);
    EXPECT_LT((back.p0 - d.p0).norm(), 1e-15);
    // The outermost tube's angle is the gauge: relative angles survive.
    EXPECT_NEAR(back.alpha[0], 0.0, 1e-15);
    EXPECT_NEAR(back.alpha[1] - back.alpha[0], 0.5, 1e-15);
    EXPECT_NEAR(back.alpha[2] - back.alpha[0], 2.0, 1e-15);
}

TEST(Transcription, DerivativesMatchFiniteDifferences) {
    for (std::size_t n : {1u, 2u, 3u}) {
        PlanProblem p = toy_problem(n);
        p.obstacles.push_back(Ellipsoid(Eigen::Vector3d(0.03, 0.01, 0.0), Eigen::Vector3d(1e4, 4e3, 9e3).asDiagonal().toDenseMatrix()));
        const Transcription nlp(p, nodes(4));
        const Eigen::VectorXd x = generic_point(nlp);

        Eigen::VectorXd grad;
        nlp.objective(x, &grad);
        const auto f = [&](const Eigen::VectorXd& y) { return Eigen::VectorXd::Constant(1, nlp.objective(y, nullptr)); };
        EXPECT_LT((grad.transpose() - numeric_jacobian(f, x, 1)).cwiseAbs().maxCoeff(), 1e-8);

        Eigen::VectorXd c, g;
        Eigen::MatrixXd Jc, Jg;
        nlp.equalities(x, c, &Jc);
        nlp.inequalities(x, g, &Jg);
        const auto eq = [&](const Eigen::VectorXd& y) { Eigen::VectorXd v; nlp.equalities(y, v, nullptr); return v; };
        const auto in = [&](const Eigen::VectorXd& y) { Eigen::VectorXd v; nlp.inequalities(y, v, nullptr); return v; };
        const Eigen::MatrixXd Nc = numeric_jacobian(eq, x, c.size());
        const Eigen::MatrixXd Ng = numeric_jacobian(in, x, g.size());
        EXPECT_LT((Jc - Nc).cwiseAbs().maxCoeff(), 1e-5 * std::max(1.0, Nc.cwiseAbs().maxCoeff())) << n << " tubes";
        EXPECT_LT((Jg - Ng).cwiseAbs().maxCoeff(), 1e-5 * std::max(1.0, Ng.cwiseAbs().maxCoeff())) << n << " tubes";
    }
}

TEST(Transcription, StructuredCurvatureIsSymmetricAndExactForTheEntryRow) {
    const Transcription nlp(toy_problem(1), nodes(4));
    const Eigen::VectorXd x = generic_point(nlp);
    // Weight only the entry row: its curvature is the full 2 Q in p0.
    Eigen::VectorXd y = Eigen::VectorXd::Zero(nlp.num_equalities());
    y[(nlp.num_nodes() - 1) * nlp.torsion_dim()] = 1.0;
    const Eigen::VectorXd z = Eigen::VectorXd::Zero(nlp.num_inequalities());
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(nlp.num_variables(), nlp.num_variables());
    ASSERT_TRUE(nlp.add_constraint_curvature(x, y, z, H));
    EXPECT_LT((H - H.transpose()).norm(), 1e-12);
    const Eigen::Index p0 = 7;
    EXPECT_LT(((H.block<3, 3>(p0, p0)) - 2.0 * nlp.problem().skull.shape()).norm(), 1e-9);
    EXPECT_NEAR(H.norm(), (H.block<3, 3>(p0, p0).norm()), 1e-9);
}

TEST(Transcription, BoundsPinTheGaugeAngle) {
    const Transcription nlp(toy_problem(2), nodes(4));
    const Eigen::VectorXd lo = nlp.lower_bounds(), hi = nlp.upper_bounds();
    EXPECT_EQ(lo[12], 0.0);
    EXPECT_EQ(hi[12], 0.0);
    EXPECT_LT(lo[13], hi[13]);
    // u*_y has bound 0 by default, so it is pinned too.
    EXPECT_EQ(lo[1], 0.0);
    EXPECT_EQ(hi[1], 0.0);
}

TEST(Planner, ShiftTargetsWorkedExample) {
    PlanProblem p = toy_problem(1);
    p.skull = Ellipsoid::ball(Eigen::Vector3d(0.5, 0.0, 0.0), 2.0);
    p.target = Ellipsoid::ball(Eigen::Vector3d(1.0, 0.0, 0.0), 0.01);
    p.obstacles = {Ellipsoid::ball(Eigen::Vector3d(0.5, 0.2, 0.0), 0.05),
                   Ellipsoid::ball(Eigen::Vector3d(0.3, -0.1, 0.0), 0.05)};
    p.fixed_idx = {1};
    const auto c = shift_targets(p, Eigen::Vector3d::Zero(), Eigen::Vector3d(1.0, 0.0, 0.0));
    EXPECT_LT((c[0] - Eigen::Vector3d(0.5, 0.6, 0.0)).norm(), 1e-15);
    EXPECT_EQ(c[1], p.obstacles[1].center());
}

TEST(Planner, ShiftTargetsBeyondTheSegmentEnds) {
    PlanProblem p = toy_problem(1);
    p.obstacles = {Ellipsoid::ball(Eigen::Vector3d(-0.3, 0.0, 0.0), 0.01)};
    const auto c = shift_targets(p, Eigen::Vector3d::Zero(), Eigen::Vector3d(1.0, 0.0, 0.0));
    // Nearest segment point is p_a, so the push is along -x.
    EXPECT_LT((c[0] - Eigen::Vector3d(-0.7, 0.0, 0.0)).norm(), 1e-15);
    // A centre on the segment still moves by the full distance.
    p.obstacles = {Ellipsoid::ball(Eigen::Vector3d(0.4, 0.0, 0.0), 0.01)};
    const auto d = shift_targets(p, Eigen::Vector3d::Zero(), Eigen::Vector3d(1.0, 0.0, 0.0));
    EXPECT_NEAR((d[0] - p.obstacles[0].center()).norm(), kShiftDistance, 1e-15);
    EXPECT_NEAR(d[0].x(), 0.4, 1e-15);
}

TEST(Planner, RelaxInterpolatesOnlyMovableCentres) {
    PlanProblem p = toy_problem(1);
    p.obstacles.push_back(Ellipsoid::ball(Eigen::Vector3d(0.06, 0.03, 0.0), 0.01));
    p.fixed_idx = {1};
    const std::vector<Eigen::Vector3d> c_init = {Eigen::Vector3d(0.042, 0.4, 0.0), Eigen::Vector3d(9, 9, 9)};
    const PlanProblem half = relax(p, 0.25, c_init);
    EXPECT_LT((half.obstacles[0].center() - Eigen::Vector3d(0.042, 0.3, 0.0)).norm(), 1e-15);
    EXPECT_EQ(half.obstacles[0].shape(), p.obstacles[0].shape());
    EXPECT_EQ(half.obstacles[1].center(), p.obstacles[1].center());
    EXPECT_EQ(relax(p, 1.0, c_init).obstacles[0].center(), p.obstacles[0].center());
    EXPECT_THROW(relax(p, 1.5, c_init), ValidationError);
}

TEST(Planner, NearestObstacleToTarget) {
    PlanProblem p = toy_problem(1);
    EXPECT_EQ(nearest_obstacle_to_target(p), std::vector<std::size_t>{0});
    p.obstacles.push_back(Ellipsoid::ball(Eigen::Vector3d(0.08, 0.0, 0.0), 0.001));
    EXPECT_EQ(nearest_obstacle_to_target(p), std::vector<std::size_t>{1});
    p.obstacles.clear();
    EXPECT_TRUE(nearest_obstacle_to_target(p).empty());
}

TEST(Planner, DefaultEntryAndStraightGuess) {
    const PlanProblem p = toy_problem(2);
    const Eigen::Vector3d entry = default_entry(p);
    EXPECT_NEAR(p.skull.q_dist_sq(entry), 1.0, 1e-12);
    EXPECT_LT(entry.norm(), 1e-12);
    const Decision d = straight_line_guess(p, entry, p.target.center());
    const RobotPath path = shoot_forward(d.tube_set(), d.p0, rotation_from_quaternion(d.q0));
    EXPECT_LT((path.tip().p - p.target.center()).norm(), 1e-12);
    EXPECT_TRUE(p.bounds.wall_min <= (d.rho_outer - d.rho_inner).minCoeff());
}

TEST(Planner, ObstacleFreeProblemReachesTheTargetBoundary) {
    PlanProblem p = toy_problem(1);
    p.obstacles.clear();
    const Transcription nlp(p);
    const PlanResult r = direct_solve(p, straight_start(nlp, default_entry(p)), PlannerOptions{});
    ASSERT_EQ(r.status, PlanStatus::optimal);
    // Shortest admissible path: entry at the origin, tip on the near side of the target.
    EXPECT_NEAR(r.objective, 0.09 - 0.008, 1e-6);
}

TEST(Planner, SolvedDecisionResimulatesToTheSameTip) {
    const PlanProblem p = toy_problem(1);
    PlannerOptions opt;
    const PlanResult r = plan(p, {p.hemi}, opt);
    ASSERT_EQ(r.status, PlanStatus::optimal);
    EXPECT_EQ(r.lambda_reached, 1.0);
    EXPECT_LE(path_violation(p, r.path), 1e-6);
    const RobotPath again = shoot_forward(r.decision.tube_set(), r.decision.p0, rotation_from_quaternion(r.decision.q0));
    EXPECT_LT((again.tip().p - r.path.tip().p).norm(), 1e-4);
    EXPECT_LE(p.target.q_dist_sq(r.path.tip().p), 1.0 + 1e-6);
}

TEST(Planner, HomotopyStepSequence) {
    const PlanProblem p = toy_problem(1);
    PlannerOptions opt;
    opt.delta = 0.5;
    const PlanResult r = plan(p, {p.hemi}, opt);
    ASSERT_EQ(r.lambda_log.size(), 3u);
    EXPECT_EQ(r.lambda_log[0].lambda, 0.0);
    EXPECT_EQ(r.lambda_log[1].lambda, 0.5);
    EXPECT_EQ(r.lambda_log[2].lambda, 1.0);
    opt.delta = 0.3;
    const PlanResult s = plan(p, {p.hemi}, opt);
    ASSERT_EQ(s.lambda_log.size(), 5u);
    EXPECT_NEAR(s.lambda_log[3].lambda, 0.9, 1e-15);
    EXPECT_EQ(s.lambda_log[4].lambda, 1.0);
}

TEST(Planner, TightIterationCapStalls) {
    const PlanProblem p = toy_problem(1);
    PlannerOptions opt;
    opt.solver.max_iter = 2;
    const PlanResult r = plan(p, {p.hemi}, opt);
    EXPECT_EQ(r.status, PlanStatus::homotopy_stalled);
    EXPECT_LT(r.lambda_reached, 1.0);
    EXPECT_FALSE(r.lambda_log.empty());
}

TEST(Planner, StepSolverSeesWarmStartsAfterTheFirstStep) {
    const PlanProblem p = toy_problem(1);
    PlannerOptions opt;
    opt.delta = 0.25;
    const Transcription nlp(p);
    const Eigen::VectorXd x0 = straight_start(nlp, default_entry(p));
    PlanProblem seed = p;
    seed.obstacles.clear();
    const PlanResult s = direct_solve(seed, x0, opt);
    ASSERT_EQ(s.status, PlanStatus::optimal);
    const auto c_init = shift_targets(p, s.path.nodes.front().p, s.path.tip().p);
    std::vector<bool> warm_flags;
    std::vector<double> lambdas;
    const StepSolver spy = [&](const Transcription& t, const Eigen::VectorXd& init, const optim::WarmStartOptions& w,
                               double lambda) {
        warm_flags.push_back(w.warm_start_init_point && w.state.has_value());
        lambdas.push_back(lambda);
        return solve_nlp(t, init, opt, w);
    };
    const PlanResult r = homotopy_solve(p, c_init, s.x, opt, spy);
    ASSERT_EQ(lambdas.size(), 5u);
    EXPECT_FALSE(warm_flags[0]);
    for (std::size_t k = 1; k < warm_flags.size(); ++k) EXPECT_TRUE(warm_flags[k]);
    EXPECT_EQ(r.status, PlanStatus::optimal);
}

TEST(Planner, ValidationErrors) {
    PlanProblem p = toy_problem(1);
    p.fixed_idx = {3};
    EXPECT_THROW(p.validate(), ValidationError);
    p = toy_problem(1);
    p.target = Ellipsoid::ball(Eigen::Vector3d(1.0, 0.0, 0.0), 0.01);
    EXPECT_THROW(p.validate(), ValidationError);
    PlannerOptions opt;
    opt.delta = 0.0;
    p = toy_problem(1);
    EXPECT_THROW(homotopy_solve(p, {p.obstacles[0].center()}, Eigen::VectorXd(), opt), ValidationError);
}
