#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>

namespace ctr::detail {

/// Integer cell index of a uniform grid.
struct CellKey {
    std::int64_t i = 0, j = 0, k = 0;

    bool operator==(const CellKey&) const = default;
    CellKey offset(int di, int dj, int dk) const { return {i + di, j + dj, k + dk}; }
};

struct CellKeyHash {
    std::size_t operator()(const CellKey& c) const noexcept {
        std::size_t h = std::hash<std::int64_t>{}(c.i);
        h ^= std::hash<std::int64_t>{}(c.j) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
        h ^= std::hash<std::int64_t>{}(c.k) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
        return h;
    }
};

inline CellKey floor_cell(const Eigen::Vector3d& p, const Eigen::Vector3d& origin, double size) {
    const Eigen::Vector3d q = (p - origin) / size;
    return {static_cast<std::int64_t>(std::floor(q.x())), static_cast<std::int64_t>(std::floor(q.y())),
            static_cast<std::int64_t>(std::floor(q.z()))};
}

inline CellKey round_cell(const Eigen::Vector3d& p, const Eigen::Vector3d& origin, double size) {
    const Eigen::Vector3d q = (p - origin) / size;
    return {std::llround(q.x()), std::llround(q.y()), std::llround(q.z())};
}

inline Eigen::Vector3d cell_point(const CellKey& c, const Eigen::Vector3d& origin, double size) {
    return origin + size * Eigen::Vector3d(double(c.i), double(c.j), double(c.k));
}

}  // namespace ctr::detail
