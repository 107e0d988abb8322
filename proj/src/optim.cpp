#include "ctr/optim.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace ctr::optim {

Eigen::VectorXd NonlinearProgram::lower_bounds() const {
    return Eigen::VectorXd::Constant(num_variables(), -std::numeric_limits<double>::infinity());
}

Eigen::VectorXd NonlinearProgram::upper_bounds() const {
    return Eigen::VectorXd::Constant(num_variables(), std::numeric_limits<double>::infinity());
}

void NonlinearProgram::residuals(const Eigen::VectorXd&, Eigen::VectorXd& r, Eigen::MatrixXd* jac) const {
    r.resize(0);
    if (jac) jac->resize(0, num_variables());
}

double NonlinearProgram::objective(const Eigen::VectorXd& x, Eigen::VectorXd* grad) const {
    Eigen::VectorXd r;
    Eigen::MatrixXd J;
    residuals(x, r, grad ? &J : nullptr);
    if (grad) *grad = 2.0 * J.transpose() * r;
    return r.squaredNorm();
}

void NonlinearProgram::equalities(const Eigen::VectorXd&, Eigen::VectorXd& c, Eigen::MatrixXd* jac) const {
    c.resize(0);
    if (jac) jac->resize(0, num_variables());
}

void NonlinearProgram::inequalities(const Eigen::VectorXd&, Eigen::VectorXd& g, Eigen::MatrixXd* jac) const {
    g.resize(0);
    if (jac) jac->resize(0, num_variables());
}

bool NonlinearProgram::add_constraint_curvature(const Eigen::VectorXd&, const Eigen::VectorXd&, const Eigen::VectorXd&,
                                                Eigen::MatrixXd&) const {
    return false;
}

std::string to_string(SolveStatus s) {
    switch (s) {
        case SolveStatus::optimal: return "optimal";
        case SolveStatus::max_iter: return "max_iter";
        case SolveStatus::infeasible: return "infeasible";
        case SolveStatus::stalled: return "stalled";
    }
    return "unknown";
}

double infeasibility(const NonlinearProgram& nlp, const Eigen::VectorXd& x) {
    Eigen::VectorXd c, g;
    nlp.equalities(x, c, nullptr);
    nlp.inequalities(x, g, nullptr);
    double v = 0.0;
    if (c.size() > 0) v = std::max(v, c.cwiseAbs().maxCoeff());
    if (g.size() > 0) v = std::max(v, g.maxCoeff());
    const Eigen::VectorXd lo = nlp.lower_bounds(), hi = nlp.upper_bounds();
    if (x.size() > 0) {
        v = std::max(v, (lo - x).maxCoeff());
        v = std::max(v, (x - hi).maxCoeff());
    }
    return v;
}

namespace {

constexpr double kMultiplierCap = 1e12;
constexpr double kMeritNoise = 1e-14;
constexpr int kMaxIdleSteps = 20;
/// Inequalities with g >= -kActiveForEstimate take part in the initial multiplier fit.
constexpr double kActiveForEstimate = 1e-6;
/// Multiple of the feasibility tolerance within which warm multipliers are made consistent.
constexpr double kWarmShiftWindow = 10.0;
/// Re-solves allowed per Newton step while pinning slacks that would turn negative.
constexpr int kMaxPinRounds = 8;
/// Largest multiple of an accepted full step tried while the merit keeps decreasing.
constexpr double kMaxStepExtension = 64.0;

struct Point {
    Eigen::VectorXd x;
    Eigen::VectorXd s;  ///< slacks of the inequalities: g(x) + s = 0, s >= 0
    double f = 0.0;
    Eigen::VectorXd c, g;
    // Derivative data (only filled by evaluate_full).
    Eigen::VectorXd grad_f;
    Eigen::MatrixXd Jr, Jc, Jg;
    double merit = 0.0;
    Eigen::VectorXd grad_merit;  ///< with respect to x
    Eigen::VectorXd grad_slack;  ///< with respect to s
};

/// Augmented Lagrangian with explicit inequality slacks:
///   f + y^T c + rho/2 |c|^2 + z^T (g + s) + rho/2 |g + s|^2,  s >= 0.
/// Minimizing over s gives the PHR form; keeping s makes the merit twice
/// differentiable, so constraint activity becomes bound activity on s.
class AugmentedLagrangian {
public:
    AugmentedLagrangian(const NonlinearProgram& nlp, SolveResult& stats)
        : nlp_(nlp), stats_(stats), lo_(nlp.lower_bounds()), hi_(nlp.upper_bounds()) {}

    Eigen::VectorXd y, z;
    double rho = 1.0;

    const Eigen::VectorXd& lower() const { return lo_; }
    const Eigen::VectorXd& upper() const { return hi_; }

    Eigen::VectorXd project(const Eigen::VectorXd& x) const { return x.cwiseMax(lo_).cwiseMin(hi_); }

    void evaluate_values(Point& p) const {
        ++stats_.function_evaluations;
        p.f = nlp_.objective(p.x, nullptr);
        nlp_.equalities(p.x, p.c, nullptr);
        nlp_.inequalities(p.x, p.g, nullptr);
        if (p.s.size() != p.g.size()) p.s = optimal_slacks(p.g);
        p.merit = merit(p);
    }

    void evaluate_full(Point& p) const {
        ++stats_.function_evaluations;
        p.f = nlp_.objective(p.x, &p.grad_f);
        if (nlp_.has_residuals()) {
            Eigen::VectorXd r;
            nlp_.residuals(p.x, r, &p.Jr);
        }
        nlp_.equalities(p.x, p.c, &p.Jc);
        nlp_.inequalities(p.x, p.g, &p.Jg);
        if (p.s.size() != p.g.size()) p.s = optimal_slacks(p.g);
        refresh(p);
    }

    /// Recomputes merit and gradients after the slacks or multipliers changed.
    void refresh(Point& p) const {
        p.merit = merit(p);
        p.grad_slack = ineq_estimate(p);
        p.grad_merit = lagrangian_gradient(p, eq_estimate(p), p.grad_slack);
    }

    /// Slacks minimizing the merit for fixed x.
    Eigen::VectorXd optimal_slacks(const Eigen::VectorXd& g) const { return (-g - z / rho).cwiseMax(0.0); }

    double merit(const Point& p) const {
        double m = p.f;
        if (p.c.size() > 0) m += y.dot(p.c) + 0.5 * rho * p.c.squaredNorm();
        if (p.g.size() > 0) {
            const Eigen::VectorXd h = p.g + p.s;
            m += z.dot(h) + 0.5 * rho * h.squaredNorm();
        }
        return m;
    }

    Eigen::VectorXd eq_estimate(const Point& p) const { return y + rho * p.c; }
    /// Unclipped z + rho (g + s); also the merit gradient with respect to s.
    Eigen::VectorXd ineq_estimate(const Point& p) const { return z + rho * (p.g + p.s); }

    static Eigen::VectorXd lagrangian_gradient(const Point& p, const Eigen::VectorXd& lam, const Eigen::VectorXd& mu) {
        Eigen::VectorXd grad = p.grad_f;
        if (p.c.size() > 0) grad.noalias() += p.Jc.transpose() * lam;
        if (p.g.size() > 0) grad.noalias() += p.Jg.transpose() * mu;
        return grad;
    }

    /// Infinity norm of P(v - grad) - v over v = (x, s).
    double projected_gradient_norm(const Point& p) const {
        double v = 0.0;
        if (p.x.size() > 0) v = (project(p.x - p.grad_merit) - p.x).cwiseAbs().maxCoeff();
        if (p.s.size() > 0) v = std::max(v, ((p.s - p.grad_slack).cwiseMax(0.0) - p.s).cwiseAbs().maxCoeff());
        return v;
    }

    bool has_residuals() const { return nlp_.has_residuals(); }

    /// Exact constraint curvature the program supplies (zero matrix when none).
    bool curvature(const Eigen::VectorXd& x, const Eigen::VectorXd& lam, const Eigen::VectorXd& mu,
                   Eigen::MatrixXd& C) const {
        C.setZero(x.size(), x.size());
        return nlp_.add_constraint_curvature(x, lam, mu, C);
    }

private:
    const NonlinearProgram& nlp_;
    SolveResult& stats_;
    Eigen::VectorXd lo_, hi_;
};

double max_abs(const Eigen::VectorXd& v) { return v.size() > 0 ? v.cwiseAbs().maxCoeff() : 0.0; }

double max_violation(const Point& p) {
    double v = max_abs(p.c);
    if (p.g.size() > 0) v = std::max(v, p.g.maxCoeff());
    return v;
}

enum class InnerOutcome { converged, stalled, budget };

/// Symmetric rank-one update of the Lagrangian Hessian approximation. Unlike
/// BFGS it may go indefinite, which is what the constraint curvature of the
/// shooting defects needs; the Newton solve regularizes when it does. The first
/// update rescales B by the secant curvature estimate y^T y / s^T y.
void sr1_update(Eigen::MatrixXd& B, const Eigen::VectorXd& s, const Eigen::VectorXd& yv, bool& first) {
    const double ss = s.squaredNorm();
    if (ss == 0.0 || !yv.allFinite()) return;
    if (first) {
        const double sy = s.dot(yv);
        if (sy > 0.0) B *= std::clamp(yv.squaredNorm() / sy / B.diagonal().mean(), 1e-6, 1e6);
        first = false;
    }
    const Eigen::VectorXd r = yv - B * s;
    const double rs = r.dot(s);
    // Standard skip rule: the denominator must not be negligible.
    if (std::abs(rs) > 1e-8 * r.norm() * std::sqrt(ss)) B.noalias() += (r * r.transpose()) / rs;
}

/// Projected Newton on the merit over (x, s). The slack block of the Newton
/// system is rho I, so free slacks are eliminated by a Schur complement and the
/// linear algebra stays in the x dimension.
InnerOutcome minimize_subproblem(AugmentedLagrangian& al, Point& p, Eigen::MatrixXd& B, bool& first_update,
                                 double tol, const SolverOptions& opt, SolveResult& stats, double& pg_norm) {
    p.s.resize(0);
    al.evaluate_full(p);
    const Eigen::Index n = p.x.size(), m = p.g.size();
    double damping = 1e-8;
    double best_pg = std::numeric_limits<double>::infinity();
    double last_merit = std::numeric_limits<double>::infinity();
    int idle = 0;  // consecutive accepted steps that changed neither merit nor gradient
    while (true) {
        pg_norm = al.projected_gradient_norm(p);
        if (pg_norm <= tol) return InnerOutcome::converged;
        const bool merit_flat = last_merit - p.merit <= kMeritNoise * (1.0 + std::abs(p.merit));
        idle = (merit_flat && pg_norm >= 0.999 * best_pg) ? idle + 1 : 0;
        if (idle >= kMaxIdleSteps) return InnerOutcome::stalled;
        best_pg = std::min(best_pg, pg_norm);
        last_merit = p.merit;
        if (stats.inner_iterations >= opt.max_iter) return InnerOutcome::budget;
        ++stats.inner_iterations;

        const Eigen::VectorXd& grad = p.grad_merit;
        const Eigen::VectorXd& grad_s = p.grad_slack;
        const double eps_active = std::min(1e-8, pg_norm);
        std::vector<Eigen::Index> free;
        free.reserve(static_cast<std::size_t>(n));
        for (Eigen::Index i = 0; i < n; ++i) {
            const bool at_lower = p.x[i] <= al.lower()[i] + eps_active && grad[i] > 0.0;
            const bool at_upper = p.x[i] >= al.upper()[i] - eps_active && grad[i] < 0.0;
            const bool fixed = al.lower()[i] == al.upper()[i];
            if (!(at_lower || at_upper || fixed)) free.push_back(i);
        }
        std::vector<Eigen::Index> held, loose;  // slacks at their bound / free
        for (Eigen::Index j = 0; j < m; ++j) {
            if (p.s[j] <= eps_active && grad_s[j] > 0.0) held.push_back(j);
            else loose.push_back(j);
        }
        if (free.empty() && loose.empty()) return InnerOutcome::converged;

        // Model Hessian in x: secant Lagrangian curvature + Gauss-Newton penalty terms.
        Eigen::MatrixXd H = B;
        if (p.c.size() > 0) H.noalias() += al.rho * p.Jc.transpose() * p.Jc;
        if (!held.empty()) {
            const Eigen::MatrixXd JH = p.Jg(held, Eigen::all);
            H.noalias() += al.rho * JH.transpose() * JH;
        }
        if (al.has_residuals()) H.noalias() += 2.0 * p.Jr.transpose() * p.Jr;
        Eigen::MatrixXd C;
        const bool structured = al.curvature(p.x, al.eq_estimate(p), grad_s, C);
        if (structured) H += C;

        const Eigen::MatrixXd HF = H(free, free);
        const Eigen::VectorXd gF = grad(free);
        Eigen::VectorXd diagF = HF.diagonal();
        if (m > 0) diagF += al.rho * p.Jg(Eigen::all, free).colwise().squaredNorm().transpose();
        diagF = diagF.cwiseAbs().cwiseMax(1e-10);

        bool accepted = false;
        for (int attempt = 0; attempt < 12 && !accepted; ++attempt) {
            // Slacks the step would drive below zero are pinned at zero (ds_j = -s_j)
            // and the reduced system is solved again: a few rounds of a primal
            // active-set pass, so a released row cannot be overshot.
            std::vector<Eigen::Index> pinned;
            std::vector<Eigen::Index> loose_now = loose;
            Eigen::VectorXd d = Eigen::VectorXd::Zero(n);
            Eigen::VectorXd ds = Eigen::VectorXd::Zero(m);
            bool factored = true;
            for (int round = 0; round < kMaxPinRounds; ++round) {
                // Free slack block rho (1 + damping) I eliminated: what is left of
                // rho J_L^T J_L is rho damping / (1 + damping) J_L^T J_L.
                const double keep = damping / (1.0 + damping);
                const Eigen::MatrixXd JL = p.Jg(loose_now, free);
                const Eigen::MatrixXd JP = p.Jg(pinned, free);
                const Eigen::VectorXd gL = grad_s(loose_now);
                Eigen::MatrixXd M = HF;
                if (JL.rows() > 0) M.noalias() += (al.rho * keep) * JL.transpose() * JL;
                if (JP.rows() > 0) M.noalias() += al.rho * JP.transpose() * JP;
                M.diagonal() += damping * diagF;
                Eigen::VectorXd rhs = -gF;
                if (JL.rows() > 0) rhs.noalias() += JL.transpose() * gL / (1.0 + damping);
                if (JP.rows() > 0) rhs.noalias() += al.rho * JP.transpose() * p.s(pinned);
                Eigen::LLT<Eigen::MatrixXd> llt(M);
                if (llt.info() != Eigen::Success) {
                    factored = false;
                    break;
                }
                const Eigen::VectorXd dF = llt.solve(rhs);
                d.setZero();
                d(free) = dF;
                ds.setZero();
                if (!pinned.empty()) ds(pinned) = -p.s(pinned);
                if (!loose_now.empty()) ds(loose_now) = -(gL + al.rho * (JL * dF)) / (al.rho * (1.0 + damping));
                std::vector<Eigen::Index> still;
                bool grew = false;
                for (Eigen::Index j : loose_now) {
                    if (p.s[j] + ds[j] < 0.0) {
                        pinned.push_back(j);
                        grew = true;
                    } else {
                        still.push_back(j);
                    }
                }
                if (!grew) break;
                loose_now = std::move(still);
            }
            if (!factored || !d.allFinite() || !ds.allFinite()) {
                damping = std::max(damping * 10.0, 1e-6);
                continue;
            }
            double alpha = 1.0;
            for (int ls = 0; ls < 30; ++ls, alpha *= 0.5) {
                Point trial;
                trial.x = al.project(p.x + alpha * d);
                trial.s = (p.s + alpha * ds).cwiseMax(0.0);
                const double slope = grad.dot(trial.x - p.x) + (m > 0 ? grad_s.dot(trial.s - p.s) : 0.0);
                if (!(slope < 0.0)) continue;
                al.evaluate_values(trial);
                // Armijo with a round-off allowance: near a solution the predicted decrease
                // drops below the resolution of the merit value.
                const double noise = kMeritNoise * (1.0 + std::abs(p.merit));
                if (std::isfinite(trial.merit) && trial.merit <= p.merit + 1e-4 * slope + noise) {
                    if (ls == 0) {
                        // Where the model curvature is negative the damped step is too short:
                        // keep doubling it while the merit still falls.
                        for (double a = 2.0; a <= kMaxStepExtension; a *= 2.0) {
                            Point longer;
                            longer.x = al.project(p.x + a * d);
                            longer.s = (p.s + a * ds).cwiseMax(0.0);
                            al.evaluate_values(longer);
                            if (!(std::isfinite(longer.merit) && longer.merit < trial.merit)) break;
                            trial = std::move(longer);
                        }
                    }
                    const Eigen::VectorXd step = trial.x - p.x;
                    al.evaluate_full(trial);
                    const Eigen::VectorXd lam = al.eq_estimate(trial), mu = trial.grad_slack;
                    Eigen::VectorXd yv = AugmentedLagrangian::lagrangian_gradient(trial, lam, mu) -
                                         AugmentedLagrangian::lagrangian_gradient(p, lam, mu);
                    if (al.has_residuals()) yv -= 2.0 * trial.Jr.transpose() * (trial.Jr * step);
                    if (structured) {
                        al.curvature(trial.x, lam, mu, C);
                        yv -= C * step;
                    }
                    sr1_update(B, step, yv, first_update);
                    p = std::move(trial);
                    accepted = true;
                    break;
                }
            }
            if (accepted) {
                damping = std::max(damping * (alpha == 1.0 ? 0.1 : 0.5), 1e-12);
            } else {
                damping = std::max(damping * 10.0, 1e-6);
            }
        }
        if (!accepted) {
            pg_norm = al.projected_gradient_norm(p);
            return pg_norm <= tol ? InnerOutcome::converged : InnerOutcome::stalled;
        }
    }
}

/// First-order multiplier estimates at x: least-squares fit of grad f + Jc^T y + Jg^T z = 0
/// over the equalities and the inequalities that are nearly active (z >= 0 after clipping).
void least_squares_multipliers(const NonlinearProgram& nlp, const Eigen::VectorXd& x, Eigen::VectorXd& y,
                               Eigen::VectorXd& z) {
    Eigen::VectorXd grad, c, g;
    Eigen::MatrixXd Jc, Jg;
    nlp.objective(x, &grad);
    nlp.equalities(x, c, &Jc);
    nlp.inequalities(x, g, &Jg);
    std::vector<Eigen::Index> active;
    for (Eigen::Index j = 0; j < g.size(); ++j)
        if (g[j] >= -kActiveForEstimate) active.push_back(j);
    const Eigen::Index m = c.size() + static_cast<Eigen::Index>(active.size());
    if (m == 0) return;

    // Only the free variables enter the fit; bound multipliers absorb the rest.
    const Eigen::VectorXd lo = nlp.lower_bounds(), hi = nlp.upper_bounds();
    std::vector<Eigen::Index> free;
    for (Eigen::Index i = 0; i < x.size(); ++i)
        if (x[i] > lo[i] && x[i] < hi[i]) free.push_back(i);
    Eigen::MatrixXd A(m, static_cast<Eigen::Index>(free.size()));
    A.topRows(c.size()) = Jc(Eigen::all, free);
    if (!active.empty()) A.bottomRows(static_cast<Eigen::Index>(active.size())) = Jg(active, free);
    const Eigen::VectorXd lam = A.transpose().completeOrthogonalDecomposition().solve(-grad(free));
    if (!lam.allFinite()) return;
    y = lam.head(c.size()).cwiseMax(-kMultiplierCap).cwiseMin(kMultiplierCap);
    for (std::size_t k = 0; k < active.size(); ++k)
        z[active[k]] = std::clamp(lam[c.size() + static_cast<Eigen::Index>(k)], 0.0, kMultiplierCap);
}

}  // namespace

SolveResult solve(const NonlinearProgram& nlp, const Eigen::VectorXd& x0, const SolverOptions& opt,
                  const WarmStartOptions& warm) {
    SolveResult result;
    const Eigen::Index n = nlp.num_variables();
    const Eigen::Index m_eq = nlp.num_equalities(), m_in = nlp.num_inequalities();
    if (x0.size() != n) throw std::invalid_argument("solve: initial point has wrong length");

    AugmentedLagrangian al(nlp, result);
    Point p;
    p.x = al.project(x0);
    al.y = Eigen::VectorXd::Zero(m_eq);
    al.z = Eigen::VectorXd::Zero(m_in);
    al.rho = opt.penalty_init;
    Eigen::MatrixXd B = Eigen::MatrixXd::Identity(n, n);
    bool first_update = true;
    double inner_tol = opt.inner_tol_init;

    if (warm.warm_start_init_point) {
        // Move the start strictly inside the box, as an interior method would.
        for (Eigen::Index i = 0; i < n; ++i) {
            const double lo = al.lower()[i], hi = al.upper()[i];
            if (!(lo < hi)) continue;
            const double width = hi - lo;
            const double push_lo = std::min(warm.bound_push * std::max(1.0, std::abs(lo)), warm.bound_frac * width);
            const double push_hi = std::min(warm.bound_push * std::max(1.0, std::abs(hi)), warm.bound_frac * width);
            if (std::isfinite(lo)) p.x[i] = std::max(p.x[i], lo + push_lo);
            if (std::isfinite(hi)) p.x[i] = std::min(p.x[i], hi - push_hi);
        }
        if (warm.state) {
            const SolverState& s = *warm.state;
            if (s.eq_multipliers.size() == m_eq) al.y = s.eq_multipliers;
            if (s.ineq_multipliers.size() == m_in) al.z = s.ineq_multipliers;
            if (s.hessian_approx.rows() == n && s.hessian_approx.cols() == n) {
                B = s.hessian_approx;
                first_update = false;
            }
            if (s.penalty > 0.0) al.rho = std::min(std::max(s.penalty, opt.penalty_init), 1.0 / warm.mu_init);
            // Shift the carried multipliers so the first estimates y + rho c and
            // max(0, z + rho g) reproduce them exactly at the start point.
            // Rows the start point violates by more than the shift window keep their
            // multipliers so the violation stays visible.
            const double window = kWarmShiftWindow * opt.feasibility_tol;
            Eigen::VectorXd c, g;
            nlp.equalities(p.x, c, nullptr);
            for (Eigen::Index j = 0; j < m_eq; ++j) {
                if (std::abs(c[j]) <= window) al.y[j] -= al.rho * c[j];
            }
            if (m_in > 0) {
                nlp.inequalities(p.x, g, nullptr);
                for (Eigen::Index j = 0; j < m_in; ++j) {
                    const bool carried = al.z[j] > 0.0;
                    if (g[j] >= -std::max(warm.slack_bound_push, warm.slack_bound_frac)) {
                        al.z[j] = std::max(al.z[j], warm.mult_bound_push);
                    }
                    if (carried && std::abs(g[j]) <= window) al.z[j] -= al.rho * g[j];
                }
            }
        }
        inner_tol = warm.state ? opt.inner_tol_init : opt.stationarity_tol;
    }

    if (!(warm.warm_start_init_point && warm.state)) least_squares_multipliers(nlp, p.x, al.y, al.z);

    double progress_ref = std::numeric_limits<double>::infinity();
    for (int outer = 1; outer <= opt.max_outer; ++outer) {
        result.outer_iterations = outer;
        double pg_norm = 0.0;
        const InnerOutcome inner = minimize_subproblem(al, p, B, first_update, inner_tol, opt, result, pg_norm);

        const double feas = max_violation(p);
        double compl_measure = max_abs(p.c);
        for (Eigen::Index j = 0; j < p.g.size(); ++j) {
            compl_measure = std::max(compl_measure, std::abs(std::min(-p.g[j], al.z[j] / al.rho)));
        }

        // First-order multiplier update; afterwards grad_merit is the Lagrangian gradient.
        al.y = (al.y + al.rho * p.c).cwiseMax(-kMultiplierCap).cwiseMin(kMultiplierCap);
        al.z = (al.z + al.rho * (p.g + p.s)).cwiseMax(0.0).cwiseMin(kMultiplierCap);
        double complementarity = 0.0;
        for (Eigen::Index j = 0; j < p.g.size(); ++j) {
            complementarity = std::max(complementarity, std::abs(std::min(-p.g[j], al.z[j])));
        }

        result.x = p.x;
        result.objective = p.f;
        result.infeasibility = feas;
        result.stationarity = pg_norm;

        if (feas <= opt.feasibility_tol && pg_norm <= opt.stationarity_tol &&
            complementarity <= opt.feasibility_tol) {
            result.status = SolveStatus::optimal;
            break;
        }
        if (inner == InnerOutcome::budget || result.inner_iterations >= opt.max_iter) {
            result.status = SolveStatus::max_iter;
            break;
        }
        if (compl_measure > opt.progress_ratio * progress_ref || inner == InnerOutcome::stalled) {
            if (feas > opt.feasibility_tol || inner == InnerOutcome::stalled) al.rho *= opt.penalty_growth;
        }
        progress_ref = std::min(progress_ref, compl_measure);
        if (al.rho > opt.penalty_max) {
            result.status = feas > opt.feasibility_tol ? SolveStatus::infeasible : SolveStatus::stalled;
            break;
        }
        inner_tol = std::max(opt.stationarity_tol, 0.1 * inner_tol);
        if (outer == opt.max_outer) result.status = SolveStatus::max_iter;
    }

    result.state.eq_multipliers = al.y;
    result.state.ineq_multipliers = al.z;
    result.state.penalty = al.rho;
    result.state.hessian_approx = std::move(B);
    return result;
}

}  // namespace ctr::optim
