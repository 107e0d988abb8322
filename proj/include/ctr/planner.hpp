#pragma once

#include "ctr/geometry.hpp"
#include "ctr/kinematics.hpp"
#include "ctr/optim.hpp"

#include <functional>
#include <string>
#include <vector>

namespace ctr {

/// Box limits on the tube design variables. Diameters are in metres.
struct TubeBounds {
    double length_min = 0.01;
    double length_max = 0.6;
    double rho_min = 0.5e-3;
    double rho_max = 8e-3;
    double wall_min = 0.2e-3;  ///< rho_o - rho_i >= wall_min
    /// Componentwise |u*| limit; a zero component pins that component to 0.
    Eigen::Vector3d u_star_max = Eigen::Vector3d(20.0, 0.0, 0.0);
};

struct PlanProblem {
    Ellipsoid skull;
    HalfSpace hemi;
    Ellipsoid target;
    std::vector<Ellipsoid> obstacles;
    std::vector<std::size_t> fixed_idx;  ///< obstacles never moved by the homotopy (0-based)
    std::size_t n_tubes = 1;
    TubeBounds bounds;
    double youngs = 58e9;
    double shear = 21.5e9;

    /// Throws ValidationError when an invariant fails.
    void validate() const;
};

/// Planner decision variables. Tube 0 is the outermost tube.
struct Decision {
    Eigen::Matrix3Xd u_star;  ///< one pre-curvature per column
    Eigen::VectorXd length;   ///< L
    Eigen::VectorXd rho_inner;
    Eigen::VectorXd rho_outer;
    Eigen::VectorXd alpha;
    Eigen::VectorXd beta;
    Eigen::Vector3d p0 = Eigen::Vector3d::Zero();
    UnitQuaternion q0;

    std::size_t n_tubes() const { return static_cast<std::size_t>(length.size()); }
    /// l_i = L_i + beta_i
    Eigen::VectorXd extended_lengths() const { return length + beta; }
    /// Tube set with alpha wrapped into [0, 2 pi).
    TubeSet tube_set(double youngs = 58e9, double shear = 21.5e9) const;
};

/// Straight tube set along the line from `entry` towards `aim`, stopping at the aim point.
Decision straight_line_guess(const PlanProblem& problem, const Eigen::Vector3d& entry, const Eigen::Vector3d& aim);

/// Skull boundary point on the ray from the skull centre through the target centre.
Eigen::Vector3d default_entry(const PlanProblem& problem);

struct TranscriptionOptions {
    int nodes_per_segment = 11;
    int rk4_substeps = 1;  ///< RK4 steps between consecutive nodes
};

/// Multiple-shooting transcription of the planning problem.
///
/// Variables (in order): u* (3n), L (n), rho_i (n), rho_o (n), alpha (n), p0 (3),
/// q (4), sigma (n), u_z(0) (n), then the torsion state (psi, u_z) of nodes
/// 1..M-1 with M = n (N - 1) + 1 nodes. Diameters are stored in millimetres.
/// beta_i = l_i - L_i with l_i = sum_{k<=i} sigma_k is derived, R(q) normalizes q,
/// and alpha_0 is pinned to 0 because only relative tube angles enter the
/// mechanics. Node 0 carries psi(0) = alpha - beta u_z(0), so the transmission
/// conditions hold by construction. The frame (p, R) of every node follows from
/// (p0, R(q)) by chaining the RK4 steps of each interval.
///
/// Equalities: (M - 1) 2n torsion defects, 1 skull entry, n terminal torsion.
/// Inequalities: M (2 + K) path rows (skull, hemisphere, each obstacle),
///             1 target, (n - 1) L ordering, n l_i <= L_i, (n - 1) nesting, n wall.
/// Extended-length ordering and l_i >= 0 follow from sigma >= 0 (a variable bound).
class Transcription final : public optim::NonlinearProgram {
public:
    Transcription(PlanProblem problem, TranscriptionOptions options = {});

    Eigen::Index num_variables() const override;
    Eigen::Index num_equalities() const override;
    Eigen::Index num_inequalities() const override;
    Eigen::VectorXd lower_bounds() const override;
    Eigen::VectorXd upper_bounds() const override;
    double objective(const Eigen::VectorXd& x, Eigen::VectorXd* grad) const override;
    void equalities(const Eigen::VectorXd& x, Eigen::VectorXd& c, Eigen::MatrixXd* jac) const override;
    void inequalities(const Eigen::VectorXd& x, Eigen::VectorXd& g, Eigen::MatrixXd* jac) const override;
    /// Exact curvature of the skull-entry row plus the quadric part J_p^T (2 Q) J_p of every path and target row.
    bool add_constraint_curvature(const Eigen::VectorXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& z,
                                  Eigen::MatrixXd& H) const override;

    const PlanProblem& problem() const { return problem_; }
    std::size_t n_tubes() const { return n_; }
    Eigen::Index num_nodes() const { return nodes_; }
    /// Size of the per-node torsion state (psi, u_z).
    Eigen::Index torsion_dim() const { return 2 * ni(); }
    int nodes_per_segment() const { return options_.nodes_per_segment; }

    /// Variable vector for a decision; node torsion states come from integrating
    /// with the transcription's own RK4 steps from the given u_z(0) (zeros if empty).
    Eigen::VectorXd pack(const Decision& d, const Eigen::VectorXd& uz0 = {}) const;
    Decision unpack(const Eigen::VectorXd& x) const;
    /// Full state [p, R (column-major), psi, u_z] of node k.
    Eigen::VectorXd node_state(const Eigen::VectorXd& x, Eigen::Index k) const;
    RobotPath path(const Eigen::VectorXd& x) const;
    /// sum_i sigma_i
    double arc_length(const Eigen::VectorXd& x) const;

private:
    /// Forward pass over the intervals. frames holds [p, R] per node; jac_frames
    /// (optional) the 12 x num_variables Jacobian of each; defects the torsion
    /// defect block of every interval and jac_defects its Jacobian rows.
    struct Sweep {
        std::vector<Eigen::Matrix<double, 12, 1>> frames;
        std::vector<Eigen::MatrixXd> jac_frames;
        Eigen::VectorXd defects;
        Eigen::MatrixXd jac_defects;
    };
    Sweep sweep(const Eigen::VectorXd& x, bool derivatives) const;

    Eigen::Index u_star_at(std::size_t i) const { return 3 * static_cast<Eigen::Index>(i); }
    Eigen::Index length_at() const { return 3 * ni(); }
    Eigen::Index rho_inner_at() const { return 4 * ni(); }
    Eigen::Index rho_outer_at() const { return 5 * ni(); }
    Eigen::Index alpha_at() const { return 6 * ni(); }
    Eigen::Index p0_at() const { return 7 * ni(); }
    Eigen::Index q_at() const { return 7 * ni() + 3; }
    Eigen::Index sigma_at() const { return 7 * ni() + 7; }
    Eigen::Index uz0_at() const { return 8 * ni() + 7; }
    Eigen::Index torsion_at(Eigen::Index k) const { return 9 * ni() + 7 + (k - 1) * torsion_dim(); }
    Eigen::Index ni() const { return static_cast<Eigen::Index>(n_); }
    std::size_t segment_of_interval(Eigen::Index k) const;
    Eigen::VectorXd betas(const Eigen::VectorXd& x) const;

    PlanProblem problem_;
    TranscriptionOptions options_;
    std::size_t n_;
    Eigen::Index nodes_;
};

/// Result of one NLP solve in the homotopy log.
struct LambdaLogEntry {
    double lambda = 0.0;
    optim::SolveStatus status = optim::SolveStatus::stalled;
    int outer_iterations = 0;
    int inner_iterations = 0;
    double objective = 0.0;
    double infeasibility = 0.0;
};

/// optimal: lambda = 1 solved. homotopy_stalled: a solve ran out of iterations or
/// failed after an earlier lambda succeeded. infeasible: the first solve (seed or
/// lambda = 0) ended without a feasible point before its budget ran out.
enum class PlanStatus { optimal, homotopy_stalled, infeasible };
std::string to_string(PlanStatus s);

struct PlanResult {
    Decision decision;
    RobotPath path;
    double objective = 0.0;  ///< l_n
    double lambda_reached = 0.0;
    PlanStatus status = PlanStatus::infeasible;
    std::vector<LambdaLogEntry> lambda_log;
    Eigen::VectorXd x;  ///< final NLP variables
    optim::SolverState solver_state;
    std::string stage;  ///< pipeline stage that produced the status
    int hemisphere = 0;
};

struct PlannerOptions {
    TranscriptionOptions transcription;
    double delta = 0.1;  ///< homotopy step
    optim::SolverOptions solver = default_solver();
    optim::WarmStartOptions warm;  ///< carried state is filled in per step
    int threads = 1;

    static optim::SolverOptions default_solver() {
        optim::SolverOptions s;
        s.feasibility_tol = 1e-6;
        s.stationarity_tol = 1e-6;
        s.max_iter = 3000;
        return s;
    }
};

/// A converged KKT point of the transcribed program.
bool solve_succeeded(const optim::SolveResult& r);

/// Runs the constrained solver on a transcription.
optim::SolveResult solve_nlp(const Transcription& nlp, const Eigen::VectorXd& init, const PlannerOptions& options,
                             const optim::WarmStartOptions& warm = optim::WarmStartOptions::cold());

/// Exiled obstacle centres: every non-fixed centre is pushed 0.4 m radially away
/// from the segment [p_a, p_b]. Fixed obstacles keep their centre.
std::vector<Eigen::Vector3d> shift_targets(const PlanProblem& problem, const Eigen::Vector3d& p_a,
                                           const Eigen::Vector3d& p_b);

/// Displacement used by shift_targets [m].
inline constexpr double kShiftDistance = 0.4;

/// Non-fixed centres become (1 - lambda) c_init + lambda c; everything else is copied.
PlanProblem relax(const PlanProblem& problem, double lambda, const std::vector<Eigen::Vector3d>& c_init);

/// Solves one relaxed problem. `warm` is cold for the first (lambda = 0) solve.
using StepSolver = std::function<optim::SolveResult(const Transcription& nlp, const Eigen::VectorXd& init,
                                                    const optim::WarmStartOptions& warm, double lambda)>;

/// Homotopy continuation from lambda = 0 to 1. The first solve starts cold from
/// x0; every later solve is warm-started from the previous solution and state.
PlanResult homotopy_solve(const PlanProblem& problem, const std::vector<Eigen::Vector3d>& c_init,
                          const Eigen::VectorXd& x0, const PlannerOptions& options, StepSolver step = {});

/// Direct solve of the unrelaxed problem from x0.
PlanResult direct_solve(const PlanProblem& problem, const Eigen::VectorXd& x0, const PlannerOptions& options);

/// Pipeline driver: seed solve with the fixed obstacles only, exile the others,
/// run the homotopy; repeated per admissible hemisphere, best optimal run wins.
PlanResult plan(const PlanProblem& problem, const std::vector<HalfSpace>& hemispheres, const PlannerOptions& options);

/// Index of the obstacle whose centre is nearest the target centre (empty when K = 0).
std::vector<std::size_t> nearest_obstacle_to_target(const PlanProblem& problem);

/// Largest violation of the path constraints over the given nodes: skull, hemisphere and obstacles.
double path_violation(const PlanProblem& problem, const RobotPath& path);

}  // namespace ctr
