#pragma once

#include "ctr/geometry.hpp"

#include <filesystem>
#include <optional>
#include <string>

namespace ctr {

/// Voxel-centre clouds per label, in meters.
struct LabeledPointCloud {
    PointSet skull;
    PointSet target;
    PointSet obstacle;    // one class; split later by build_obstacles
    PointSet hemisphere;
    double delta_mri = 0.0;
    double unit_scale = 1.0;

    /// Throws ValidationError naming the first empty class.
    void require_plannable() const;
};

/// Loads a labelled cloud from JSON or CSV (chosen by extension, falling back
/// to sniffing the first non-blank character). An explicit unit_scale overrides
/// the JSON "unit" field; CSV coordinates default to meters.
LabeledPointCloud load_cloud(const std::filesystem::path& path, std::optional<double> unit_scale = std::nullopt);

/// Parses from an in-memory document; `is_json` selects the format.
LabeledPointCloud parse_cloud(const std::string& text, bool is_json, std::optional<double> unit_scale = std::nullopt);

/// Minimum pairwise Euclidean distance. Exact: agrees with the O(n^2) scan.
double compute_delta_mri(const PointSet& points);

/// Points with at least one of their six axis neighbours (at `spacing`) missing.
PointSet extract_boundary(const PointSet& points, double spacing);

/// Drops points closer than `tol` (per coordinate) to an earlier point. Order of survivors is preserved.
PointSet remove_duplicates(const PointSet& points, double tol = 1e-12);

}  // namespace ctr
