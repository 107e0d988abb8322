#pragma once

#include <Eigen/Dense>

#include <limits>
#include <optional>
#include <string>

namespace ctr::optim {

/// A smooth nonlinear program
///
///     min f(x)  s.t.  c(x) = 0,  g(x) <= 0,  lower <= x <= upper.
///
/// Constraint Jacobians are dense (rows = constraints). Implementations that
/// can express f as a sum of squares f = ||r(x)||^2 override residuals(); the
/// solver then uses the Gauss-Newton term 2 J_r^T J_r instead of secant
/// curvature for the objective.
class NonlinearProgram {
public:
    virtual ~NonlinearProgram() = default;

    virtual Eigen::Index num_variables() const = 0;
    virtual Eigen::Index num_equalities() const { return 0; }
    virtual Eigen::Index num_inequalities() const { return 0; }

    virtual Eigen::VectorXd lower_bounds() const;
    virtual Eigen::VectorXd upper_bounds() const;

    virtual bool has_residuals() const { return false; }
    virtual void residuals(const Eigen::VectorXd& x, Eigen::VectorXd& r, Eigen::MatrixXd* jac) const;

    /// Defaults to ||r(x)||^2 when has_residuals().
    virtual double objective(const Eigen::VectorXd& x, Eigen::VectorXd* grad) const;

    virtual void equalities(const Eigen::VectorXd& x, Eigen::VectorXd& c, Eigen::MatrixXd* jac) const;
    virtual void inequalities(const Eigen::VectorXd& x, Eigen::VectorXd& g, Eigen::MatrixXd* jac) const;

    /// Optionally adds the exact Hessian of sum_j y_j c_j + sum_j z_j g_j for the
    /// constraints whose second derivatives are cheap; the solver's secant update
    /// then only models the remainder. Returns false when nothing was added.
    virtual bool add_constraint_curvature(const Eigen::VectorXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& z,
                                          Eigen::MatrixXd& H) const;
};

enum class SolveStatus { optimal, max_iter, infeasible, stalled };

std::string to_string(SolveStatus s);

struct SolverOptions {
    double feasibility_tol = 1e-6;
    double stationarity_tol = 1e-6;
    int max_iter = 3000;          ///< total inner (quasi-Newton) iterations
    int max_outer = 60;
    double penalty_init = 10.0;
    double penalty_max = 1e10;
    double penalty_growth = 10.0;
    double progress_ratio = 0.5;  ///< required infeasibility decrease per outer iteration
    double inner_tol_init = 1e-2;
};

/// Solver state that survives between consecutive solves of nearby problems.
struct SolverState {
    Eigen::VectorXd eq_multipliers;
    Eigen::VectorXd ineq_multipliers;
    double penalty = 0.0;
    Eigen::MatrixXd hessian_approx;  ///< secant approximation of the Lagrangian Hessian
};

/// Warm-start contract. Field names follow the interior-point options they
/// stand in for; in the augmented-Lagrangian setting:
///   mu_init               -> initial penalty weight 1/rho (rho capped by the carried penalty)
///   bound_push/bound_frac -> how far the primal start is moved inside the variable box
///   mult_bound_push       -> floor on carried multipliers of constraints active at the start
///   slack_bound_push/frac -> activity threshold deciding which inequalities count as active
struct WarmStartOptions {
    bool warm_start_init_point = false;
    double mu_init = 1e-8;
    double mult_bound_push = 1e-10;
    double slack_bound_push = 1e-10;
    double bound_push = 1e-8;
    double bound_frac = 1e-8;
    double slack_bound_frac = 1e-10;
    std::optional<SolverState> state;  ///< previous solve's multipliers, penalty and Hessian

    static WarmStartOptions cold() { return {}; }
    static WarmStartOptions warm(SolverState s) {
        WarmStartOptions w;
        w.warm_start_init_point = true;
        w.state = std::move(s);
        return w;
    }
};

struct SolveResult {
    Eigen::VectorXd x;
    SolveStatus status = SolveStatus::stalled;
    double objective = std::numeric_limits<double>::quiet_NaN();
    double infeasibility = std::numeric_limits<double>::infinity();
    double stationarity = std::numeric_limits<double>::infinity();
    int outer_iterations = 0;
    int inner_iterations = 0;
    int function_evaluations = 0;
    SolverState state;
};

/// Augmented-Lagrangian method with explicit inequality slacks s >= 0. Each
/// subproblem is minimized over the variable box and the slacks by a projected
/// Newton iteration whose model Hessian is an SR1 approximation of the
/// Lagrangian Hessian, plus any curvature the program supplies exactly, plus the
/// Gauss-Newton penalty term rho J^T J (and 2 J_r^T J_r for residual objectives).
SolveResult solve(const NonlinearProgram& nlp, const Eigen::VectorXd& x0, const SolverOptions& options = {},
                  const WarmStartOptions& warm = WarmStartOptions::cold());

/// Maximum violation of equalities, inequalities and bounds at x.
double infeasibility(const NonlinearProgram& nlp, const Eigen::VectorXd& x);

}  // namespace ctr::optim
