#pragma once

#include "ctr/geometry.hpp"
#include "ctr/optim.hpp"

#include <array>
#include <stdexcept>
#include <vector>

namespace ctr {

/// Raised when an ellipsoid or plane fit cannot produce a valid result.
class FitError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct FitResult {
    Ellipsoid ellipsoid;
    double objective = 0.0;
    double residual_max = 0.0;  ///< largest constraint violation (or |d_i - 1| for the skull fit)
    int iterations = 1;
    bool degenerate = false;    ///< enclosing fit took the inflated-ball path
};

struct HyperplaneFit {
    Eigen::Vector3d h;
    std::array<HalfSpace, 2> halfspaces;  ///< {x^T h <= 1}, {x^T h >= 1}
};

enum class PdParameterization { rotation, cholesky };

struct FitOptions {
    PdParameterization parameterization = PdParameterization::rotation;
    optim::SolverOptions solver = default_solver();

    static optim::SolverOptions default_solver() {
        optim::SolverOptions s;
        s.feasibility_tol = 1e-10;
        s.stationarity_tol = 1e-9;
        s.max_iter = 2000;
        return s;
    }
};

/// Least-squares solution of v_i^T h = 1 and the two half-spaces split at x^T h = 1.
HyperplaneFit fit_hyperplane(const PointSet& points);

/// One half-space if every target point lies in it (boundary counts as inside,
/// first half-space wins ties), otherwise both.
std::vector<HalfSpace> select_hemisphere(const std::array<HalfSpace, 2>& halfspaces, const PointSet& targets);

/// Best-fit ellipsoid, min sum (||v - c||_Q^2 - 1)^2 over the points inside `hemi`.
FitResult fit_skull(const PointSet& points, const HalfSpace& hemi, const FitOptions& options = {});
/// Same objective without the half-space filter.
FitResult fit_skull(const PointSet& points, const FitOptions& options = {});

/// Ellipsoid inside the cloud: min sum over boundary points of ||v - c||_Q^2
/// s.t. eig(Q) > (2/delta)^2 and every boundary point at Q-distance >= 1.
FitResult fit_target(const PointSet& points, double delta_mri, const FitOptions& options = {});

/// Enclosing ellipsoid: min -sum ||v - c||_Q^2 - eps log det Q s.t. every point at Q-distance <= 1.
/// Clusters with fewer than 4 points or without 3-D extent get a ball-like ellipsoid
/// whose semi-axes are at least `min_semi_axis`.
FitResult fit_enclosing(const PointSet& points, double min_semi_axis, const FitOptions& options = {});

/// Weight of the log det Q tie-breaker in fit_enclosing.
inline constexpr double kEnclosingLogDetWeight = 1e-6;

}  // namespace ctr
