#include "ctr/planner.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <unsupported/Eigen/AutoDiff>

namespace ctr {

namespace {

using AD = Eigen::AutoDiffScalar<Eigen::VectorXd>;
using Eigen::Index;

constexpr double kMillimetre = 1e-3;

/// Evaluates f on `local` with forward-mode derivatives; jac is rows(f) x size(local).
template <typename F>
void differentiate(const Eigen::VectorXd& local, F&& f, Eigen::VectorXd& value, Eigen::MatrixXd& jac) {
    const Index m = local.size();
    VectorX<AD> a(m);
    for (Index i = 0; i < m; ++i) a[i] = AD(local[i], m, i);
    const VectorX<AD> out = f(a);
    value.resize(out.size());
    jac.setZero(out.size(), m);
    for (Index r = 0; r < out.size(); ++r) {
        value[r] = out[r].value();
        if (out[r].derivatives().size() == m) jac.row(r) = out[r].derivatives().transpose();
    }
}

/// Stiffness from diameters in millimetres; the unit cancels in every ratio the ODEs use.
template <typename T>
std::vector<TubeStiffness<T>> stiffness_mm(const VectorX<T>& u_xy, const VectorX<T>& rho_i, const VectorX<T>& rho_o,
                                           double youngs, double shear) {
    const Index n = rho_i.size();
    std::vector<TubeStiffness<T>> st(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
        const T ro2 = rho_o[i] * rho_o[i], ri2 = rho_i[i] * rho_i[i];
        const T second_moment = T(ro2 * ro2 - ri2 * ri2) * (std::numbers::pi / 64.0);
        auto& s = st[static_cast<std::size_t>(i)];
        s.bending = second_moment * youngs;
        s.torsional = second_moment * (2.0 * shear);
        s.precurvature = Vector2<T>(u_xy[2 * i], u_xy[2 * i + 1]);
    }
    return st;
}

template <typename T>
VectorX<T> propagate(VectorX<T> x, const std::vector<TubeStiffness<T>>& st, const T& sigma, std::size_t segment,
                     int steps) {
    const std::span<const TubeStiffness<T>> span(st);
    const T h = sigma / T(static_cast<double>(steps));
    for (int s = 0; s < steps; ++s) x = rk4_step<T>(x, h, span, segment);
    return x;
}

Eigen::Matrix3d frame_towards(const Eigen::Vector3d& dir) {
    const Eigen::Vector3d z = dir.normalized();
    Eigen::Index k = 0;
    z.cwiseAbs().minCoeff(&k);
    const Eigen::Vector3d x = Eigen::Vector3d::Unit(k).cross(z).normalized();
    Eigen::Matrix3d R;
    R.col(0) = x;
    R.col(1) = z.cross(x);
    R.col(2) = z;
    return R;
}

}  // namespace

void PlanProblem::validate() const {
    if (n_tubes < 1) throw ValidationError("plan problem: at least one tube is required");
    for (std::size_t j : fixed_idx) {
        if (j >= obstacles.size()) throw ValidationError("plan problem: fixed obstacle index out of range");
    }
    if (skull.q_dist_sq(target.center()) > 1.0) throw ValidationError("plan problem: target centre outside the skull");
    const TubeBounds& b = bounds;
    if (!(b.length_min > 0.0 && b.length_max >= b.length_min)) throw ValidationError("plan problem: bad length bounds");
    if (!(b.rho_min > 0.0 && b.rho_max > b.rho_min)) throw ValidationError("plan problem: bad diameter bounds");
    if (!(b.wall_min > 0.0)) throw ValidationError("plan problem: wall_min must be positive");
    if ((b.u_star_max.array() < 0.0).any()) throw ValidationError("plan problem: negative curvature bound");
    if (!(youngs > 0.0 && shear > 0.0)) throw ValidationError("plan problem: moduli must be positive");
}

TubeSet Decision::tube_set(double youngs, double shear) const {
    const std::size_t n = n_tubes();
    std::vector<Tube> tubes(n);
    double prev_ext = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto ii = static_cast<Index>(i);
        Tube& t = tubes[i];
        t.length = length[ii];
        // Solver output meets the constraints only to tolerance; project onto the strict invariants.
        const double ext = std::max(prev_ext, std::clamp(length[ii] + beta[ii], 0.0, length[ii]));
        t.beta = std::clamp(ext - length[ii], -length[ii], 0.0);
        prev_ext = ext;
        t.alpha = alpha[ii];
        t.u_star = u_star.col(ii);
        t.rho_inner = rho_inner[ii];
        t.rho_outer = rho_outer[ii];
        if (i > 0) t.rho_outer = std::min(t.rho_outer, tubes[i - 1].rho_inner);
        t.youngs = youngs;
        t.shear = shear;
    }
    return TubeSet(std::move(tubes));
}

Eigen::Vector3d default_entry(const PlanProblem& problem) {
    const Eigen::Vector3d& c = problem.skull.center();
    const double d = problem.skull.q_dist_sq(problem.target.center());
    Eigen::Vector3d dir = problem.target.center() - c;
    if (d < 1e-12) {
        dir = Eigen::Vector3d::UnitZ();
        return c + dir / std::sqrt(problem.skull.q_dist_sq(c + dir));
    }
    return c + dir / std::sqrt(d);
}

Decision straight_line_guess(const PlanProblem& problem, const Eigen::Vector3d& entry, const Eigen::Vector3d& aim) {
    const auto n = static_cast<Index>(problem.n_tubes);
    const TubeBounds& b = problem.bounds;
    const Eigen::Vector3d dir = aim - entry;
    const double len = dir.norm();
    if (len < 1e-9) throw ValidationError("straight_line_guess: entry and aim coincide");
    if (len > b.length_max) throw ValidationError("straight_line_guess: line longer than length_max");
    const double step = (b.rho_max - b.rho_min) / static_cast<double>(2 * n - 1);
    if (step < b.wall_min) throw ValidationError("straight_line_guess: diameter range too small for the walls");

    Decision d;
    d.u_star = Eigen::Matrix3Xd::Zero(3, n);
    d.length = Eigen::VectorXd::Constant(n, std::max(len, b.length_min));
    d.beta.resize(n);
    d.rho_inner.resize(n);
    d.rho_outer.resize(n);
    for (Index i = 0; i < n; ++i) {
        d.beta[i] = len * static_cast<double>(i + 1) / static_cast<double>(n) - d.length[i];
        d.rho_outer[i] = b.rho_max - 2.0 * static_cast<double>(i) * step;
        d.rho_inner[i] = d.rho_outer[i] - step;
    }
    d.alpha = Eigen::VectorXd::Zero(n);
    d.p0 = entry;
    d.q0 = UnitQuaternion::from_rotation(frame_towards(dir));
    return d;
}

// ---------------------------------------------------------------------------
// Transcription

Transcription::Transcription(PlanProblem problem, TranscriptionOptions options)
    : problem_(std::move(problem)), options_(options), n_(problem_.n_tubes) {
    problem_.validate();
    if (options_.nodes_per_segment < 2) throw ValidationError("transcribe: nodes_per_segment must be >= 2");
    if (options_.rk4_substeps < 1) throw ValidationError("transcribe: rk4_substeps must be >= 1");
    nodes_ = ni() * (options_.nodes_per_segment - 1) + 1;
}

Index Transcription::num_variables() const { return 9 * ni() + 7 + (nodes_ - 1) * torsion_dim(); }

Index Transcription::num_equalities() const { return (nodes_ - 1) * torsion_dim() + 1 + ni(); }

Index Transcription::num_inequalities() const {
    const auto k = static_cast<Index>(problem_.obstacles.size());
    return nodes_ * (2 + k) + 1 + (ni() - 1) + ni() + (ni() - 1) + ni();
}

std::size_t Transcription::segment_of_interval(Index k) const {
    return static_cast<std::size_t>(k / (options_.nodes_per_segment - 1));
}

Eigen::VectorXd Transcription::lower_bounds() const {
    const TubeBounds& b = problem_.bounds;
    const double inf = std::numeric_limits<double>::infinity();
    Eigen::VectorXd lo = Eigen::VectorXd::Constant(num_variables(), -inf);
    for (std::size_t i = 0; i < n_; ++i) lo.segment<3>(u_star_at(i)) = -b.u_star_max;
    lo.segment(length_at(), ni()).setConstant(b.length_min);
    lo.segment(rho_inner_at(), 2 * ni()).setConstant(b.rho_min / kMillimetre);
    lo.segment(alpha_at(), ni()).setConstant(-2.0 * std::numbers::pi);
    lo[alpha_at()] = 0.0;  // gauge: a common rotation of all tubes changes nothing
    lo.segment(sigma_at(), ni()).setZero();
    return lo;
}

Eigen::VectorXd Transcription::upper_bounds() const {
    const TubeBounds& b = problem_.bounds;
    const double inf = std::numeric_limits<double>::infinity();
    Eigen::VectorXd hi = Eigen::VectorXd::Constant(num_variables(), inf);
    for (std::size_t i = 0; i < n_; ++i) hi.segment<3>(u_star_at(i)) = b.u_star_max;
    hi.segment(length_at(), ni()).setConstant(b.length_max);
    hi.segment(rho_inner_at(), 2 * ni()).setConstant(b.rho_max / kMillimetre);
    hi.segment(alpha_at(), ni()).setConstant(4.0 * std::numbers::pi);
    hi[alpha_at()] = 0.0;
    hi.segment(sigma_at(), ni()).setConstant(b.length_max);
    return hi;
}

double Transcription::objective(const Eigen::VectorXd& x, Eigen::VectorXd* grad) const {
    if (grad) {
        grad->setZero(x.size());
        grad->segment(sigma_at(), ni()).setOnes();
    }
    return x.segment(sigma_at(), ni()).sum();
}

double Transcription::arc_length(const Eigen::VectorXd& x) const { return x.segment(sigma_at(), ni()).sum(); }

Eigen::VectorXd Transcription::betas(const Eigen::VectorXd& x) const {
    Eigen::VectorXd beta(ni());
    double ext = 0.0;
    for (Index i = 0; i < ni(); ++i) {
        ext += x[sigma_at() + i];
        beta[i] = ext - x[length_at() + i];
    }
    return beta;
}

Transcription::Sweep Transcription::sweep(const Eigen::VectorXd& x, bool derivatives) const {
    const Index n = ni(), T = torsion_dim(), N = num_variables();
    const int steps = options_.rk4_substeps;
    const double per_node = 1.0 / static_cast<double>(options_.nodes_per_segment - 1);
    const double E = problem_.youngs, G = problem_.shear;
    Sweep out;
    out.frames.resize(static_cast<std::size_t>(nodes_));
    out.defects.resize((nodes_ - 1) * T);
    if (derivatives) {
        out.jac_frames.resize(static_cast<std::size_t>(nodes_));
        out.jac_defects.setZero((nodes_ - 1) * T, N);
    }

    // Node 0: p0 and R(q / |q|); p0 and q are contiguous.
    auto frame0 = [](const auto& v) {
        using S = typename std::decay_t<decltype(v)>::Scalar;
        using std::sqrt;
        VectorX<S> f(12);
        f.template head<3>() = v.template head<3>();
        const S norm = sqrt(v.template segment<4>(3).squaredNorm());
        Vector4<S> q;
        for (Index j = 0; j < 4; ++j) q[j] = v[3 + j] / norm;
        const Matrix3<S> R = quaternion_matrix<S>(q);
        for (Index c = 0; c < 3; ++c)
            for (Index r = 0; r < 3; ++r) f[3 + 3 * c + r] = R(r, c);
        return f;
    };
    const Eigen::VectorXd head = x.segment<7>(p0_at());
    if (derivatives) {
        Eigen::VectorXd value;
        Eigen::MatrixXd J;
        differentiate(head, frame0, value, J);
        out.frames[0] = value;
        out.jac_frames[0].setZero(12, N);
        out.jac_frames[0].middleCols<7>(p0_at()) = J;
    } else {
        out.frames[0] = frame0(head);
    }

    // Variables shared by every interval: u*_xy (2n), rho_i (n), rho_o (n), sigma (n).
    std::vector<Index> param_idx;
    for (Index i = 0; i < n; ++i) {
        param_idx.push_back(u_star_at(static_cast<std::size_t>(i)));
        param_idx.push_back(u_star_at(static_cast<std::size_t>(i)) + 1);
    }
    for (Index i = 0; i < 2 * n; ++i) param_idx.push_back(rho_inner_at() + i);
    for (Index i = 0; i < n; ++i) param_idx.push_back(sigma_at() + i);

    for (Index k = 0; k + 1 < nodes_; ++k) {
        const std::size_t seg = segment_of_interval(k);
        // Local vector: [frame_k (12), torsion source, params]. At node 0 the torsion
        // state is built from alpha, L (through beta) and u_z(0).
        std::vector<Index> idx;
        if (k == 0) {
            for (Index j = 0; j < n; ++j) idx.push_back(alpha_at() + j);
            for (Index j = 0; j < n; ++j) idx.push_back(length_at() + j);
            for (Index j = 0; j < n; ++j) idx.push_back(uz0_at() + j);
        } else {
            for (Index j = 0; j < T; ++j) idx.push_back(torsion_at(k) + j);
        }
        const Index src = static_cast<Index>(idx.size());
        idx.insert(idx.end(), param_idx.begin(), param_idx.end());
        const Index m = static_cast<Index>(idx.size());

        Eigen::VectorXd local(12 + m);
        local.head<12>() = out.frames[static_cast<std::size_t>(k)];
        for (Index j = 0; j < m; ++j) local[12 + j] = x[idx[static_cast<std::size_t>(j)]];

        auto phi = [&](const auto& v) {
            using S = typename std::decay_t<decltype(v)>::Scalar;
            const Index p = 12 + src;
            const auto u_xy = v.segment(p, 2 * n);
            const auto sigma = v.segment(p + 4 * n, n);
            VectorX<S> state(12 + T);
            state.head(12) = v.head(12);
            if (k == 0) {
                S ext(0.0);
                for (Index i = 0; i < n; ++i) {
                    ext = ext + sigma[i];
                    const S beta = ext - v[12 + n + i];
                    state[12 + i] = v[12 + i] - beta * v[12 + 2 * n + i];
                    state[12 + n + i] = v[12 + 2 * n + i];
                }
            } else {
                state.tail(T) = v.segment(12, T);
            }
            const auto st = stiffness_mm<S>(u_xy, v.segment(p + 2 * n, n), v.segment(p + 3 * n, n), E, G);
            const S h = sigma[static_cast<Index>(seg)] * per_node;
            return propagate<S>(state, st, h, seg, steps);
        };

        const auto ku = static_cast<std::size_t>(k);
        const Index row = k * T;
        if (derivatives) {
            Eigen::VectorXd value;
            Eigen::MatrixXd J;
            differentiate(local, phi, value, J);
            out.frames[ku + 1] = value.head<12>();
            out.defects.segment(row, T) = x.segment(torsion_at(k + 1), T) - value.tail(T);
            // The torsion ODE does not see the frame, so the defects need no chaining.
            Eigen::MatrixXd& Jf = out.jac_frames[ku + 1];
            Jf = J.topLeftCorner<12, 12>() * out.jac_frames[ku];
            for (Index j = 0; j < m; ++j) {
                const Index col = idx[static_cast<std::size_t>(j)];
                Jf.col(col) += J.block<12, 1>(0, 12 + j);
                out.jac_defects.block(row, col, T, 1) -= J.block(12, 12 + j, T, 1);
            }
            out.jac_defects.block(row, torsion_at(k + 1), T, T).diagonal().array() += 1.0;
        } else {
            const Eigen::VectorXd value = phi(local);
            out.frames[ku + 1] = value.head<12>();
            out.defects.segment(row, T) = x.segment(torsion_at(k + 1), T) - value.tail(T);
        }
    }
    return out;
}

Eigen::VectorXd Transcription::node_state(const Eigen::VectorXd& x, Index k) const {
    if (k < 0 || k >= nodes_) throw ValidationError("node_state: node index out of range");
    const Index n = ni();
    Eigen::VectorXd s(12 + 2 * n);
    s.head<12>() = sweep(x, false).frames[static_cast<std::size_t>(k)];
    if (k == 0) {
        const Eigen::VectorXd beta = betas(x);
        for (Index i = 0; i < n; ++i) {
            s[12 + i] = x[alpha_at() + i] - beta[i] * x[uz0_at() + i];
            s[12 + n + i] = x[uz0_at() + i];
        }
    } else {
        s.tail(2 * n) = x.segment(torsion_at(k), 2 * n);
    }
    return s;
}

void Transcription::equalities(const Eigen::VectorXd& x, Eigen::VectorXd& c, Eigen::MatrixXd* jac) const {
    const Index n = ni(), T = torsion_dim();
    Sweep sw = sweep(x, jac != nullptr);
    c.setZero(num_equalities());
    if (jac) jac->setZero(num_equalities(), num_variables());

    Index row = (nodes_ - 1) * T;
    c.head(row) = sw.defects;
    if (jac) jac->topRows(row) = sw.jac_defects;

    // Entry point on the skull surface.
    const Eigen::Vector3d p = x.segment<3>(p0_at());
    c[row] = problem_.skull.q_dist_sq(p) - 1.0;
    if (jac) jac->block<1, 3>(row, p0_at()) = (2.0 * problem_.skull.shape() * (p - problem_.skull.center())).transpose();
    ++row;
    // No torsional load at each tube tip: u_iz(l_i) = 0.
    for (Index i = 0; i < n; ++i, ++row) {
        const Index at = torsion_at((i + 1) * (options_.nodes_per_segment - 1)) + n + i;
        c[row] = x[at];
        if (jac) (*jac)(row, at) = 1.0;
    }
}

void Transcription::inequalities(const Eigen::VectorXd& x, Eigen::VectorXd& g, Eigen::MatrixXd* jac) const {
    const Index n = ni();
    const Sweep sw = sweep(x, jac != nullptr);
    g.setZero(num_inequalities());
    if (jac) jac->setZero(num_inequalities(), num_variables());
    const Ellipsoid& skull = problem_.skull;
    const HalfSpace& hemi = problem_.hemi;
    const double hemi_sign = hemi.side == Side::below ? 1.0 : -1.0;

    // Row with value and position gradient dp at node k.
    Index row = 0;
    auto put = [&](Index k, double value, const Eigen::Vector3d& dp) {
        g[row] = value;
        if (jac) jac->row(row) = dp.transpose() * sw.jac_frames[static_cast<std::size_t>(k)].topRows<3>();
        ++row;
    };
    for (Index k = 0; k < nodes_; ++k) {
        const Eigen::Vector3d p = sw.frames[static_cast<std::size_t>(k)].head<3>();
        put(k, skull.q_dist_sq(p) - 1.0, 2.0 * skull.shape() * (p - skull.center()));
        put(k, hemi.violation<double>(p), hemi_sign * hemi.normal);
        for (const Ellipsoid& e : problem_.obstacles) put(k, 1.0 - e.q_dist_sq(p), -2.0 * e.shape() * (p - e.center()));
    }
    {
        const Eigen::Vector3d p = sw.frames.back().head<3>();
        const Ellipsoid& t = problem_.target;
        put(nodes_ - 1, t.q_dist_sq(p) - 1.0, 2.0 * t.shape() * (p - t.center()));
    }
    for (Index i = 0; i + 1 < n; ++i, ++row) {  // L_i <= L_{i+1}
        g[row] = x[length_at() + i] - x[length_at() + i + 1];
        if (jac) {
            (*jac)(row, length_at() + i) = 1.0;
            (*jac)(row, length_at() + i + 1) = -1.0;
        }
    }
    const Eigen::VectorXd beta = betas(x);
    for (Index i = 0; i < n; ++i, ++row) {  // l_i <= L_i, i.e. beta_i <= 0
        g[row] = beta[i];
        if (jac) {
            jac->block(row, sigma_at(), 1, i + 1).setOnes();
            (*jac)(row, length_at() + i) = -1.0;
        }
    }
    for (Index i = 0; i + 1 < n; ++i, ++row) {  // rho_o(i+1) <= rho_i(i)
        g[row] = x[rho_outer_at() + i + 1] - x[rho_inner_at() + i];
        if (jac) {
            (*jac)(row, rho_outer_at() + i + 1) = 1.0;
            (*jac)(row, rho_inner_at() + i) = -1.0;
        }
    }
    const double wall = problem_.bounds.wall_min / kMillimetre;
    for (Index i = 0; i < n; ++i, ++row) {  // rho_o(i) - rho_i(i) >= wall_min
        g[row] = x[rho_inner_at() + i] - x[rho_outer_at() + i] + wall;
        if (jac) {
            (*jac)(row, rho_inner_at() + i) = 1.0;
            (*jac)(row, rho_outer_at() + i) = -1.0;
        }
    }
}

bool Transcription::add_constraint_curvature(const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                                             const Eigen::VectorXd& z, Eigen::MatrixXd& H) const {
    const Index entry_row = (nodes_ - 1) * torsion_dim();
    H.block<3, 3>(p0_at(), p0_at()) += 2.0 * y[entry_row] * problem_.skull.shape();

    // Quadric part only; the curvature of the forward map p(x) is left to the quasi-Newton model.
    const Sweep sw = sweep(x, true);
    Index row = 0;
    auto add = [&](Index k, const Eigen::Matrix3d& W) {
        const auto Jp = sw.jac_frames[static_cast<std::size_t>(k)].topRows<3>();
        H.noalias() += Jp.transpose() * (W * Jp);
    };
    for (Index k = 0; k < nodes_; ++k) {
        Eigen::Matrix3d W = 2.0 * z[row] * problem_.skull.shape();
        row += 2;
        for (const Ellipsoid& e : problem_.obstacles) W -= 2.0 * z[row++] * e.shape();
        add(k, W);
    }
    add(nodes_ - 1, 2.0 * z[row] * problem_.target.shape());
    return true;
}

Eigen::VectorXd Transcription::pack(const Decision& d, const Eigen::VectorXd& uz0) const {
    const Index n = ni(), T = torsion_dim();
    if (d.n_tubes() != n_) throw ValidationError("pack: decision has the wrong number of tubes");
    Eigen::VectorXd x = Eigen::VectorXd::Zero(num_variables());
    for (Index i = 0; i < n; ++i) x.segment<3>(u_star_at(static_cast<std::size_t>(i))) = d.u_star.col(i);
    x.segment(length_at(), n) = d.length;
    x.segment(rho_inner_at(), n) = d.rho_inner / kMillimetre;
    x.segment(rho_outer_at(), n) = d.rho_outer / kMillimetre;
    // Only relative rotations enter the mechanics; the outer tube's angle is the gauge origin.
    x.segment(alpha_at(), n) = d.alpha.array() - d.alpha[0];
    x.segment<3>(p0_at()) = d.p0;
    x.segment<4>(q_at()) = d.q0.coeffs();
    const Eigen::VectorXd ext = d.extended_lengths();
    double prev = 0.0;
    for (Index i = 0; i < n; ++i) {
        if (ext[i] < prev - 1e-12) throw ValidationError("pack: extended lengths must be non-decreasing");
        x[sigma_at() + i] = std::max(0.0, ext[i] - prev);
        prev = std::max(prev, ext[i]);
    }
    if (uz0.size() == n) x.segment(uz0_at(), n) = uz0;

    // Same RK4 steps as the sweep, so the packed point has zero defects.
    Eigen::VectorXd u_xy(2 * n);
    for (Index i = 0; i < n; ++i) u_xy.segment<2>(2 * i) = d.u_star.col(i).head<2>();
    const auto st = stiffness_mm<double>(u_xy, x.segment(rho_inner_at(), n), x.segment(rho_outer_at(), n),
                                         problem_.youngs, problem_.shear);
    const double per_node = 1.0 / static_cast<double>(options_.nodes_per_segment - 1);
    Eigen::VectorXd state = node_state(x, 0);
    for (Index k = 0; k + 1 < nodes_; ++k) {
        const std::size_t seg = segment_of_interval(k);
        state = propagate<double>(state, st, x[sigma_at() + static_cast<Index>(seg)] * per_node, seg,
                                  options_.rk4_substeps);
        x.segment(torsion_at(k + 1), T) = state.tail(T);
    }
    return x;
}

Decision Transcription::unpack(const Eigen::VectorXd& x) const {
    const Index n = ni();
    Decision d;
    d.u_star.resize(3, n);
    for (Index i = 0; i < n; ++i) d.u_star.col(i) = x.segment<3>(u_star_at(static_cast<std::size_t>(i)));
    d.length = x.segment(length_at(), n);
    d.rho_inner = x.segment(rho_inner_at(), n) * kMillimetre;
    d.rho_outer = x.segment(rho_outer_at(), n) * kMillimetre;
    d.alpha = x.segment(alpha_at(), n);
    for (Index i = 0; i < n; ++i) {
        d.alpha[i] = std::fmod(d.alpha[i], 2.0 * std::numbers::pi);
        if (d.alpha[i] < 0.0) d.alpha[i] += 2.0 * std::numbers::pi;
        if (d.alpha[i] >= 2.0 * std::numbers::pi) d.alpha[i] = 0.0;
    }
    d.beta = betas(x);
    d.p0 = x.segment<3>(p0_at());
    d.q0 = UnitQuaternion(Eigen::Vector4d(x.segment<4>(q_at())));
    return d;
}

RobotPath Transcription::path(const Eigen::VectorXd& x) const {
    const Index n = ni();
    const int per_seg = options_.nodes_per_segment - 1;
    Eigen::VectorXd u_xy(2 * n);
    for (Index i = 0; i < n; ++i) u_xy.segment<2>(2 * i) = x.segment<2>(u_star_at(static_cast<std::size_t>(i)));
    const auto st = stiffness_mm<double>(u_xy, x.segment(rho_inner_at(), n), x.segment(rho_outer_at(), n),
                                         problem_.youngs, problem_.shear);
    const std::span<const TubeStiffness<double>> span(st);
    const Sweep sw = sweep(x, false);
    const Eigen::VectorXd first = node_state(x, 0);

    RobotPath path;
    double start = 0.0;
    for (Index i = 0; i < n; ++i) {
        start += x[sigma_at() + i];
        path.segment_ends.push_back(start);
    }
    for (Index k = 0; k < nodes_; ++k) {
        const std::size_t seg = std::min<std::size_t>(segment_of_interval(k), n_ - 1);
        const Index within = k - static_cast<Index>(seg) * per_seg;
        const double seg_start = seg == 0 ? 0.0 : path.segment_ends[seg - 1];
        const auto& f = sw.frames[static_cast<std::size_t>(k)];
        PathNode node;
        node.s = seg_start + x[sigma_at() + static_cast<Index>(seg)] * static_cast<double>(within) / per_seg;
        node.p = f.head<3>();
        node.R = Eigen::Map<const Eigen::Matrix3d>(f.data() + 3);
        const Eigen::VectorXd torsion = k == 0 ? Eigen::VectorXd(first.tail(2 * n)) : x.segment(torsion_at(k), 2 * n);
        node.psi = torsion.head(n);
        node.uz = torsion.tail(n);
        node.uxy = resultant_curvature<double>(n_ - 1, span, seg, node.psi);
        path.nodes.push_back(std::move(node));
    }
    return path;
}

// ---------------------------------------------------------------------------
// Solving and continuation

std::string to_string(PlanStatus s) {
    switch (s) {
        case PlanStatus::optimal: return "optimal";
        case PlanStatus::homotopy_stalled: return "homotopy_stalled";
        case PlanStatus::infeasible: return "infeasible";
    }
    return "unknown";
}

bool solve_succeeded(const optim::SolveResult& r) { return r.status == optim::SolveStatus::optimal; }

optim::SolveResult solve_nlp(const Transcription& nlp, const Eigen::VectorXd& init, const PlannerOptions& options,
                             const optim::WarmStartOptions& warm) {
    if (init.size() != nlp.num_variables()) throw ValidationError("solve_nlp: initial point has the wrong length");
    return optim::solve(nlp, init, options.solver, warm);
}

std::vector<Eigen::Vector3d> shift_targets(const PlanProblem& problem, const Eigen::Vector3d& p_a,
                                           const Eigen::Vector3d& p_b) {
    const Eigen::Vector3d ab = p_b - p_a;
    const double len2 = ab.squaredNorm();
    if (!(len2 > 0.0)) throw ValidationError("shift_targets: p_a and p_b coincide");
    // Fixed direction orthogonal to the segment, used when a centre lies on it.
    Eigen::Index k = 0;
    ab.cwiseAbs().minCoeff(&k);
    const Eigen::Vector3d tie = (Eigen::Vector3d::Unit(k) - Eigen::Vector3d::Unit(k).dot(ab) / len2 * ab).normalized();

    std::vector<Eigen::Vector3d> out;
    out.reserve(problem.obstacles.size());
    for (std::size_t j = 0; j < problem.obstacles.size(); ++j) {
        const Eigen::Vector3d c = problem.obstacles[j].center();
        if (std::find(problem.fixed_idx.begin(), problem.fixed_idx.end(), j) != problem.fixed_idx.end()) {
            out.push_back(c);
            continue;
        }
        const double a = (c - p_a).dot(ab) / len2;
        const Eigen::Vector3d l = a < 0.0 ? p_a : (a > 1.0 ? p_b : Eigen::Vector3d(p_a + a * ab));
        Eigen::Vector3d dir = c - l;
        if (dir.norm() < 1e-9) dir += tie;
        out.push_back(c + kShiftDistance * dir.normalized());
    }
    return out;
}

PlanProblem relax(const PlanProblem& problem, double lambda, const std::vector<Eigen::Vector3d>& c_init) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ValidationError("relax: lambda must lie in [0, 1]");
    if (c_init.size() != problem.obstacles.size()) throw ValidationError("relax: one initial centre per obstacle");
    PlanProblem out = problem;
    for (std::size_t j = 0; j < problem.obstacles.size(); ++j) {
        if (std::find(problem.fixed_idx.begin(), problem.fixed_idx.end(), j) != problem.fixed_idx.end()) continue;
        const Eigen::Vector3d c = (1.0 - lambda) * c_init[j] + lambda * problem.obstacles[j].center();
        out.obstacles[j] = problem.obstacles[j].with_center(c);
    }
    return out;
}

namespace {

LambdaLogEntry log_entry(double lambda, const optim::SolveResult& r) {
    return {lambda, r.status, r.outer_iterations, r.inner_iterations, r.objective, r.infeasibility};
}

/// Outcome of a failed first solve: running out of iterations is a stall, not
/// evidence that the problem has no feasible point.
PlanStatus first_solve_failure(const optim::SolveResult& r) {
    return r.status == optim::SolveStatus::max_iter ? PlanStatus::homotopy_stalled : PlanStatus::infeasible;
}

void fill_solution(PlanResult& res, const Transcription& nlp, const Eigen::VectorXd& x) {
    res.x = x;
    res.decision = nlp.unpack(x);
    res.path = nlp.path(x);
    res.objective = nlp.arc_length(x);
}

}  // namespace

PlanResult homotopy_solve(const PlanProblem& problem, const std::vector<Eigen::Vector3d>& c_init,
                          const Eigen::VectorXd& x0, const PlannerOptions& options, StepSolver step) {
    if (!(options.delta > 0.0 && options.delta <= 1.0)) throw ValidationError("homotopy: delta must lie in (0, 1]");
    problem.validate();
    if (!step) {
        step = [&options](const Transcription& nlp, const Eigen::VectorXd& init, const optim::WarmStartOptions& warm,
                          double) { return solve_nlp(nlp, init, options, warm); };
    }

    PlanResult res;
    res.stage = "homotopy";
    Eigen::VectorXd x = x0;
    std::optional<optim::SolverState> state;
    bool solved_any = false;
    for (int k = 0;; ++k) {
        // lambda_k = min(1, k delta); multiplying avoids drift from repeated addition.
        double lambda = std::min(1.0, k * options.delta);
        if (lambda > 1.0 - 1e-12) lambda = 1.0;
        const Transcription nlp(relax(problem, lambda, c_init), options.transcription);
        optim::WarmStartOptions warm = optim::WarmStartOptions::cold();
        if (state) {
            warm = options.warm;
            warm.warm_start_init_point = true;
            warm.state = state;
        }
        const optim::SolveResult r = step(nlp, x, warm, lambda);
        res.lambda_log.push_back(log_entry(lambda, r));
        if (!solve_succeeded(r)) {
            if (!solved_any) {
                fill_solution(res, nlp, r.x.size() == x.size() ? r.x : x);
                res.status = first_solve_failure(r);
                res.lambda_reached = 0.0;
                return res;
            }
            break;
        }
        solved_any = true;
        x = r.x;
        state = r.state;
        res.lambda_reached = lambda;
        res.solver_state = r.state;
        if (lambda == 1.0) break;
    }
    const Transcription final_nlp(relax(problem, res.lambda_reached, c_init), options.transcription);
    fill_solution(res, final_nlp, x);
    res.status = res.lambda_reached == 1.0 ? PlanStatus::optimal : PlanStatus::homotopy_stalled;
    return res;
}

PlanResult direct_solve(const PlanProblem& problem, const Eigen::VectorXd& x0, const PlannerOptions& options) {
    const Transcription nlp(problem, options.transcription);
    const optim::SolveResult r = solve_nlp(nlp, x0, options);
    PlanResult res;
    res.stage = "direct";
    res.lambda_log.push_back(log_entry(1.0, r));
    fill_solution(res, nlp, r.x);
    res.solver_state = r.state;
    res.status = solve_succeeded(r) ? PlanStatus::optimal : PlanStatus::infeasible;
    res.lambda_reached = solve_succeeded(r) ? 1.0 : 0.0;
    return res;
}

std::vector<std::size_t> nearest_obstacle_to_target(const PlanProblem& problem) {
    if (problem.obstacles.empty()) return {};
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < problem.obstacles.size(); ++j) {
        const double d = (problem.obstacles[j].center() - problem.target.center()).squaredNorm();
        if (d < best_d) {
            best_d = d;
            best = j;
        }
    }
    return {best};
}

double path_violation(const PlanProblem& problem, const RobotPath& path) {
    double worst = -std::numeric_limits<double>::infinity();
    for (const PathNode& node : path.nodes) {
        worst = std::max(worst, problem.skull.q_dist_sq(node.p) - 1.0);
        worst = std::max(worst, problem.hemi.violation<double>(node.p));
        for (const Ellipsoid& e : problem.obstacles) worst = std::max(worst, 1.0 - e.q_dist_sq(node.p));
    }
    return worst;
}

namespace {

PlanResult plan_one(const PlanProblem& problem, const PlannerOptions& options) {
    // (i) Seed problem with the fixed obstacles only.
    PlanProblem seed = problem;
    seed.obstacles.clear();
    seed.fixed_idx.clear();
    for (std::size_t j : problem.fixed_idx) {
        seed.fixed_idx.push_back(seed.obstacles.size());
        seed.obstacles.push_back(problem.obstacles[j]);
    }
    const Transcription seed_nlp(seed, options.transcription);
    const Eigen::VectorXd guess =
        seed_nlp.pack(straight_line_guess(seed, default_entry(seed), seed.target.center()));
    const optim::SolveResult seed_result = solve_nlp(seed_nlp, guess, options);
    if (!solve_succeeded(seed_result)) {
        PlanResult res;
        res.stage = "seed";
        res.lambda_log.push_back(log_entry(0.0, seed_result));
        fill_solution(res, seed_nlp, seed_result.x);
        res.status = first_solve_failure(seed_result);
        return res;
    }

    // (ii) Exile the non-fixed obstacles away from the seed chord.
    const RobotPath seed_path = seed_nlp.path(seed_result.x);
    const auto c_init = shift_targets(problem, seed_path.nodes.front().p, seed_path.tip().p);

    // (iii) Continuation; the variable layout does not depend on the obstacle count.
    return homotopy_solve(problem, c_init, seed_result.x, options);
}

}  // namespace

PlanResult plan(const PlanProblem& problem, const std::vector<HalfSpace>& hemispheres, const PlannerOptions& options) {
    std::vector<PlanProblem> runs;
    if (hemispheres.empty()) {
        runs.push_back(problem);
    } else {
        for (const HalfSpace& h : hemispheres) {
            runs.push_back(problem);
            runs.back().hemi = h;
        }
    }
    std::vector<PlanResult> results(runs.size());
    if (options.threads > 1 && runs.size() > 1) {
        std::vector<std::future<PlanResult>> futures;
        for (const PlanProblem& p : runs) futures.push_back(std::async(std::launch::async, plan_one, p, options));
        for (std::size_t i = 0; i < runs.size(); ++i) results[i] = futures[i].get();
    } else {
        for (std::size_t i = 0; i < runs.size(); ++i) results[i] = plan_one(runs[i], options);
    }
    for (std::size_t i = 0; i < results.size(); ++i) results[i].hemisphere = static_cast<int>(i);

    // Lowest objective among optimal runs; otherwise the run that got furthest.
    std::size_t best = 0;
    for (std::size_t i = 1; i < results.size(); ++i) {
        const PlanResult& a = results[i];
        const PlanResult& b = results[best];
        const bool a_opt = a.status == PlanStatus::optimal, b_opt = b.status == PlanStatus::optimal;
        if (a_opt && (!b_opt || a.objective < b.objective)) best = i;
        else if (!a_opt && !b_opt && a.lambda_reached > b.lambda_reached) best = i;
    }
    return results[best];
}

}  // namespace ctr
