#include "ctr/kinematics.hpp"

#include <algorithm>
#include <string>

namespace ctr {

double Tube::second_moment() const {
    return std::numbers::pi * (std::pow(rho_outer, 4) - std::pow(rho_inner, 4)) / 64.0;
}

TubeSet::TubeSet(std::vector<Tube> tubes) : tubes_(std::move(tubes)) {
    if (tubes_.empty()) throw ValidationError("tube set: at least one tube is required");
    for (std::size_t i = 0; i < tubes_.size(); ++i) {
        Tube& t = tubes_[i];
        const std::string name = "tube " + std::to_string(i + 1);
        if (!(t.length > 0.0)) throw ValidationError(name + ": length must be positive");
        if (!(t.beta <= 0.0 && t.beta >= -t.length)) throw ValidationError(name + ": need -L <= beta <= 0");
        if (!(t.rho_inner > 0.0 && t.rho_outer > t.rho_inner)) {
            throw ValidationError(name + ": need rho_outer > rho_inner > 0");
        }
        if (!(t.youngs > 0.0 && t.shear > 0.0)) throw ValidationError(name + ": moduli must be positive");
        if (!std::isfinite(t.alpha) || !t.u_star.allFinite()) throw ValidationError(name + ": non-finite actuation");
        t.alpha = std::fmod(t.alpha, 2.0 * std::numbers::pi);
        if (t.alpha < 0.0) t.alpha += 2.0 * std::numbers::pi;
        if (t.alpha >= 2.0 * std::numbers::pi) t.alpha = 0.0;
    }
    for (std::size_t i = 0; i + 1 < tubes_.size(); ++i) {
        const std::string pair = "tubes " + std::to_string(i + 1) + " and " + std::to_string(i + 2);
        if (tubes_[i + 1].rho_outer > tubes_[i].rho_inner) {
            throw ValidationError(pair + ": nesting violated (outer diameter of inner tube exceeds inner diameter)");
        }
        if (tubes_[i].extended_length() > tubes_[i + 1].extended_length()) {
            throw ValidationError(pair + ": outer tube extends beyond inner tube");
        }
    }
}

std::vector<double> TubeSet::segment_ends() const {
    std::vector<double> ends;
    ends.reserve(tubes_.size());
    for (const Tube& t : tubes_) ends.push_back(t.extended_length());
    return ends;
}

std::vector<std::size_t> active_set(double s, const TubeSet& tubes) {
    const auto ends = tubes.segment_ends();
    if (s < 0.0 || s > ends.back()) throw ValidationError("active_set: arc length outside [0, l_n]");
    std::vector<std::size_t> active;
    for (std::size_t i = 0; i < ends.size(); ++i)
        if (s <= ends[i]) active.push_back(i);
    return active;
}

std::vector<TubeStiffness<double>> stiffness_of(const TubeSet& tubes) {
    std::vector<TubeStiffness<double>> out;
    out.reserve(tubes.size());
    for (const Tube& t : tubes.tubes()) {
        out.push_back({t.bending_stiffness(), t.torsional_stiffness(), t.u_star.head<2>()});
    }
    return out;
}

Frame integrate_frame(const Frame& frame, const Eigen::Vector3d& u, double ds) {
    const Eigen::Matrix3d U = wedge3<double>(u);
    auto f = [&](const Eigen::Matrix3d& R) { return R * U; };
    const Eigen::Matrix3d R1 = frame.R;
    const Eigen::Matrix3d k1 = f(R1);
    const Eigen::Matrix3d R2 = R1 + 0.5 * ds * k1;
    const Eigen::Matrix3d k2 = f(R2);
    const Eigen::Matrix3d R3 = R1 + 0.5 * ds * k2;
    const Eigen::Matrix3d k3 = f(R3);
    const Eigen::Matrix3d R4 = R1 + ds * k3;
    const Eigen::Matrix3d k4 = f(R4);
    Frame next;
    next.R = project_to_rotation(R1 + ds / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
    next.p = frame.p + ds / 6.0 * (R1.col(2) + 2.0 * R2.col(2) + 2.0 * R3.col(2) + R4.col(2));
    return next;
}

namespace {

PathNode make_node(double s, const Eigen::VectorXd& x, std::span<const TubeStiffness<double>> stiff,
                   std::size_t first_active) {
    const auto n = static_cast<Eigen::Index>(stiff.size());
    PathNode node;
    node.s = s;
    node.p = x.head<3>();
    node.R = Eigen::Map<const Eigen::Matrix3d>(x.data() + 3);
    node.psi = x.segment(12, n);
    node.uz = x.segment(12 + n, n);
    node.uxy = resultant_curvature<double>(stiff.size() - 1, stiff, std::min(first_active, stiff.size() - 1), node.psi);
    return node;
}

}  // namespace

RobotPath integrate_path(const TubeSet& tubes, const Eigen::VectorXd& uz0, const Eigen::Vector3d& p0,
                         const Eigen::Matrix3d& R0, const ShootingOptions& options, Eigen::VectorXd* terminal) {
    if (options.nodes_per_segment < 2) throw ValidationError("integrate_path: need at least 2 nodes per segment");
    const std::size_t n = tubes.size();
    const auto ni = static_cast<Eigen::Index>(n);
    const auto stiff = stiffness_of(tubes);
    const std::span<const TubeStiffness<double>> stiff_span(stiff);
    const auto ends = tubes.segment_ends();

    Eigen::VectorXd x(state_size(n));
    x.head<3>() = p0;
    Eigen::Map<Eigen::Matrix3d>(x.data() + 3) = R0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        x[12 + ii] = tubes[i].alpha - tubes[i].beta * uz0[ii];
        x[12 + ni + ii] = uz0[ii];
    }

    RobotPath path;
    path.segment_ends = ends;
    path.nodes.push_back(make_node(0.0, x, stiff_span, 0));
    if (terminal) terminal->resize(ni);

    double s = 0.0;
    for (std::size_t seg = 0; seg < n; ++seg) {
        const double length = ends[seg] - s;
        if (length > 0.0) {
            const int steps = options.nodes_per_segment - 1;
            const double h = length / steps;
            for (int k = 1; k <= steps; ++k) {
                x = rk4_step<double>(x, h, stiff_span, seg);
                if (options.reorthonormalize) {
                    Eigen::Map<Eigen::Matrix3d> R(x.data() + 3);
                    R = project_to_rotation(R);
                }
                const double sk = (k == steps) ? ends[seg] : s + k * h;
                path.nodes.push_back(make_node(sk, x, stiff_span, seg));
            }
            s = ends[seg];
        }
        if (terminal) (*terminal)[static_cast<Eigen::Index>(seg)] = x[12 + ni + static_cast<Eigen::Index>(seg)];
    }
    return path;
}

namespace {

struct NewtonOutcome {
    bool converged = false;
    Eigen::VectorXd uz0;
    double residual = 0.0;
    int iterations = 0;
};

/// Damped Newton on uz0 -> uz(l_i) from `start`, finite-difference Jacobian.
NewtonOutcome torsion_newton(const TubeSet& tubes, Eigen::VectorXd start, const ShootingOptions& options,
                             int max_iterations) {
    const auto n = static_cast<Eigen::Index>(tubes.size());
    // Shooting residual is driven by the torsion ODEs only; skip frame projection while searching.
    ShootingOptions probe = options;
    probe.reorthonormalize = false;
    const Eigen::Vector3d origin = Eigen::Vector3d::Zero();
    const Eigen::Matrix3d identity = Eigen::Matrix3d::Identity();
    auto residual = [&](const Eigen::VectorXd& uz0) {
        Eigen::VectorXd r;
        integrate_path(tubes, uz0, origin, identity, probe, &r);
        return r;
    };

    NewtonOutcome out;
    out.uz0 = std::move(start);
    Eigen::VectorXd r = residual(out.uz0);
    out.residual = r.cwiseAbs().maxCoeff();
    while (out.residual > options.residual_tol) {
        if (out.iterations >= max_iterations || !std::isfinite(out.residual)) return out;
        ++out.iterations;
        Eigen::MatrixXd J(n, n);
        for (Eigen::Index k = 0; k < n; ++k) {
            Eigen::VectorXd probe_point = out.uz0;
            const double h = 1e-7 * (1.0 + std::abs(out.uz0[k]));
            probe_point[k] += h;
            J.col(k) = (residual(probe_point) - r) / h;
        }
        const Eigen::VectorXd step = J.fullPivLu().solve(-r);
        double t = 1.0;
        bool improved = false;
        for (int ls = 0; ls < 30; ++ls, t *= 0.5) {
            const Eigen::VectorXd cand = out.uz0 + t * step;
            const Eigen::VectorXd rc = residual(cand);
            const double nc = rc.cwiseAbs().maxCoeff();
            if (std::isfinite(nc) && nc < out.residual) {
                out.uz0 = cand;
                r = rc;
                out.residual = nc;
                improved = true;
                break;
            }
        }
        if (!improved) return out;
    }
    out.converged = true;
    return out;
}

TubeSet scaled_precurvature(const TubeSet& tubes, double eps) {
    std::vector<Tube> scaled = tubes.tubes();
    for (Tube& t : scaled) t.u_star *= eps;
    return TubeSet(std::move(scaled));
}

}  // namespace

RobotPath shoot_forward(const TubeSet& tubes, const Eigen::Vector3d& p0, const Eigen::Matrix3d& R0,
                        const ShootingOptions& options) {
    const auto n = static_cast<Eigen::Index>(tubes.size());
    if (tubes.segment_ends().back() <= 0.0) {
        RobotPath path;
        path.segment_ends = tubes.segment_ends();
        PathNode node;
        node.p = p0;
        node.R = R0;
        node.psi = Eigen::VectorXd::Zero(n);
        node.uz = Eigen::VectorXd::Zero(n);
        path.nodes.push_back(node);
        return path;
    }

    NewtonOutcome result = torsion_newton(tubes, Eigen::VectorXd::Zero(n), options, options.max_newton_iterations);
    int iterations = result.iterations;
    if (!result.converged) {
        // Fallback: continuation in the precurvature scale. At scale 0 the tubes are straight and
        // uz = 0 is exact; each accepted scale warm-starts the next.
        Eigen::VectorXd uz0 = Eigen::VectorXd::Zero(n);
        double eps = 0.0, step = 0.25;
        constexpr double min_step = 1.0 / 4096.0;
        while (eps < 1.0) {
            const double next = std::min(1.0, eps + step);
            const NewtonOutcome sub = torsion_newton(next < 1.0 ? scaled_precurvature(tubes, next) : tubes, uz0,
                                                     options, options.max_newton_iterations);
            iterations += sub.iterations;
            if (sub.converged) {
                eps = next;
                uz0 = sub.uz0;
                result = sub;
                step = std::min(0.5, 2.0 * step);
            } else if ((step *= 0.5) < min_step) {
                throw ConvergenceError("shoot_forward: torsion BVP did not converge, residual " +
                                           std::to_string(sub.residual),
                                       sub.residual);
            }
        }
    }

    RobotPath path = integrate_path(tubes, result.uz0, p0, R0, options, nullptr);
    path.newton_iterations = iterations;
    path.bvp_residual = result.residual;
    return path;
}

}  // namespace ctr
