#pragma once

#include "ctr/fitting.hpp"
#include "ctr/geometry.hpp"

#include <cstdint>
#include <limits>
#include <vector>

namespace ctr {

struct ClusterSet {
    std::vector<PointSet> clusters;
    PointSet noise = PointSet(3, 0);
    /// Per input point: cluster index, or -1 for noise.
    std::vector<int> labels;
};

/// Density-based clustering. Two points are neighbours when their distance is
/// <= radius (a point is its own neighbour); core points have >= min_pts
/// neighbours. Border points reachable from several clusters join the cluster
/// of the lowest-index core point that reaches them.
ClusterSet dbscan(const PointSet& points, double radius, int min_pts = 1);

/// Lloyd's algorithm with deterministic farthest-point seeding. seed == 0 starts
/// from the input point nearest the centroid; other seeds pick the first centre
/// pseudo-randomly.
ClusterSet kmeans(const PointSet& points, int k, std::uint64_t seed = 0, int max_iterations = 300);

/// Sum of squared distances of points to their cluster centroid.
double kmeans_objective(const ClusterSet& set);

struct CoverageReport {
    std::int64_t grid_points_inside = 0;
    std::int64_t obstacle_points_inside = 0;
    double ratio = 0.0;  ///< grid_points_inside / obstacle_points_inside
};

/// Slack on the Q-distance used for all inside tests of the coverage count.
inline constexpr double kCoverageSlack = 1e-9;

/// Counts grid points inside any ellipsoid and cluster points inside any ellipsoid.
CoverageReport coverage(const std::vector<Ellipsoid>& ellipsoids, const PointSet& cluster_points, const PointSet& grid);

/// Lattice points (origin + spacing * integer) inside the union of the ellipsoids.
std::int64_t count_lattice_points_inside(const std::vector<Ellipsoid>& ellipsoids, const Eigen::Vector3d& origin,
                                         double spacing);

/// Lattice points of the given spacing covering the bounding boxes of the ellipsoids.
PointSet lattice_around(const std::vector<Ellipsoid>& ellipsoids, const Eigen::Vector3d& origin, double spacing);

struct ClusterDiagnostics {
    int cluster_id = 0;
    int k_final = 1;
    double ratio = 0.0;
    std::int64_t n_points = 0;
    bool capped = false;  ///< threshold never met; best-so-far returned
};

struct ObstacleOptions {
    double c_th = 4.0;
    int k0 = 1;
    int min_pts = 1;
    double radius = 0.0;          ///< DBSCAN radius; 0 -> delta_mri (1 + 1e-6)
    int max_k_iterations = 64;
    std::uint64_t seed = 0;
    int threads = 1;
    FitOptions fit;
};

struct ObstacleSet {
    std::vector<Ellipsoid> ellipsoids;
    std::vector<ClusterDiagnostics> diagnostics;
    bool capped = false;
};

/// DBSCAN split, then per cluster k-means with growing k until the grid/obstacle
/// coverage ratio of the enclosing ellipsoids is <= c_th. Grid points are the
/// lattice of spacing delta_mri anchored at `grid_origin`.
ObstacleSet build_obstacles(const PointSet& obstacle_points, double delta_mri, const Eigen::Vector3d& grid_origin,
                            const ObstacleOptions& options = {});

}  // namespace ctr
