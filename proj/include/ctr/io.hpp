#pragma once

#include "ctr/clustering.hpp"
#include "ctr/fitting.hpp"
#include "ctr/geometry.hpp"
#include "ctr/kinematics.hpp"
#include "ctr/planner.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

/// File formats of the toolchain. JSON documents are exchanged as strings so
/// that the JSON library stays an implementation detail. Every number is
/// written in its shortest round-trip form, so equal inputs give equal bytes.
namespace ctr::io {

std::string read_text(const std::filesystem::path& path);
/// Creates parent directories as needed.
void write_text(const std::filesystem::path& path, const std::string& text);

/// Shortest decimal string that parses back to exactly v.
std::string format_number(double v);

// ---------------------------------------------------------------------------
// Fitted geometry

/// Constraint sets built from a labelled cloud. `hemispheres` holds one
/// half-space, or both when the target straddles the plane.
struct Geometry {
    Ellipsoid skull;
    Eigen::Vector3d plane_normal = Eigen::Vector3d::UnitZ();  ///< h with the plane x^T h = 1
    std::vector<HalfSpace> hemispheres;
    Ellipsoid target;
    std::vector<Ellipsoid> obstacles;
    double delta_mri = 0.0;
};

/// {"skull": {"c", "Q"}, "hemisphere": {"h", "sign"}, "target": {"c", "Q"},
///  "obstacles": [{"c", "Q"}, ...], "delta_mri"} with Q row-major (9 numbers).
/// sign is -1 for x^T h <= 1, +1 for x^T h >= 1 and 0 when both are admissible.
std::string geometry_to_json(const Geometry& g);
/// Throws ValidationError on a malformed document.
Geometry geometry_from_json(const std::string& text);

/// Obstacle list alone, in the geometry schema: {"obstacles": [{"c", "Q"}, ...]}.
std::string obstacles_to_json(const std::vector<Ellipsoid>& obstacles);
std::vector<Ellipsoid> obstacles_from_json(const std::string& text);

/// cluster_id,k_final,ratio,n_points
std::string cluster_diagnostics_csv(const std::vector<ClusterDiagnostics>& diagnostics);

// ---------------------------------------------------------------------------
// Tubes and paths

/// Tube parameters for a forward simulation.
struct SimulationInput {
    TubeSet tubes;
    Eigen::Vector3d p0 = Eigen::Vector3d::Zero();
    Eigen::Matrix3d R0 = Eigen::Matrix3d::Identity();
    ShootingOptions shooting;
};

/// {"tubes": [{"length", "beta", "alpha", "u_star": [3], "rho_inner", "rho_outer",
///   "youngs"?, "shear"?}, ...], "p0"?: [3], "q0"?: [4], "nodes_per_segment"?}
/// Lengths and diameters in metres. Throws ValidationError (naming the tube or
/// tube pair) when the TubeSet invariants fail.
SimulationInput simulation_from_json(const std::string& text);

/// s,px,py,pz,psi_1..psi_n,uz_1..uz_n
std::string path_to_csv(const RobotPath& path);
/// {"s": [...], "p": [[x,y,z], ...], "psi": [[...], ...], "uz": [[...], ...], "segment_ends": [...]}
std::string path_to_json(const RobotPath& path);

// ---------------------------------------------------------------------------
// Planning

/// Decision fields, lambda reached, status, objective, solver iteration counts
/// and the discretized path.
std::string plan_result_to_json(const PlanResult& result);
/// lambda,status,outer_iterations,inner_iterations,objective,infeasibility
std::string lambda_log_csv(const std::vector<LambdaLogEntry>& log);

/// Backbone points of a path JSON document or of the "path" member of a PlanResult JSON.
std::vector<Eigen::Vector3d> polyline_from_json(const std::string& text);

/// Wavefront OBJ: one UV-sphere mesh per ellipsoid, mapped by x = c + Q^{-1/2} u,
/// and the polyline (if any) as a line element.
std::string export_obj(const Geometry& g, const std::vector<Eigen::Vector3d>& polyline = {}, int rings = 12,
                       int sectors = 24);

// ---------------------------------------------------------------------------
// Pipeline configuration

struct PipelineConfig {
    std::string input;           ///< labelled cloud
    std::optional<double> unit_scale;
    std::string output_dir = ".";
    double c_th = 4.0;
    double delta = 0.1;
    int n_tubes = 1;
    int nodes_per_segment = 11;
    std::vector<std::size_t> fixed_obstacles;  ///< empty: the obstacle nearest the target
    bool fixed_obstacles_set = false;          ///< true when the key was given (possibly empty)
    TubeBounds bounds;
    optim::SolverOptions solver = PlannerOptions::default_solver();
    std::uint64_t seed = 0;
    int threads = 1;

    /// Throws ValidationError unless c_th >= 1, 0 < delta <= 1 and n_tubes >= 1.
    void validate() const;
};

/// Reads the keys present in a JSON object over the defaults.
PipelineConfig config_from_json(const std::string& text, PipelineConfig base = {});

}  // namespace ctr::io
