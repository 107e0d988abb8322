#include "ctr/clustering.hpp"

#include "lattice.hpp"

#include <algorithm>
#include <atomic>
#include <numeric>
#include <random>
#include <stdexcept>
#include <thread>
#include <tuple>
#include <unordered_map>
#include <unordered_set>

namespace ctr {

namespace {

class UnionFind {
public:
    explicit UnionFind(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), std::size_t{0}); }
    std::size_t find(std::size_t a) {
        while (parent_[a] != a) a = parent_[a] = parent_[parent_[a]];
        return a;
    }
    void unite(std::size_t a, std::size_t b) {
        a = find(a);
        b = find(b);
        if (a != b) parent_[std::max(a, b)] = std::min(a, b);
    }

private:
    std::vector<std::size_t> parent_;
};

PointSet gather(const PointSet& points, const std::vector<Eigen::Index>& idx) {
    PointSet out(3, static_cast<Eigen::Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = points.col(idx[k]);
    return out;
}

/// Lexicographic rank of each point; makes tie-breaks independent of input order.
std::vector<std::size_t> lexicographic_rank(const PointSet& points) {
    const auto n = static_cast<std::size_t>(points.cols());
    std::vector<std::size_t> order(n), rank(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const auto pa = points.col(static_cast<Eigen::Index>(a));
        const auto pb = points.col(static_cast<Eigen::Index>(b));
        return std::make_tuple(pa[0], pa[1], pa[2]) < std::make_tuple(pb[0], pb[1], pb[2]);
    });
    for (std::size_t r = 0; r < n; ++r) rank[order[r]] = r;
    return rank;
}

}  // namespace

ClusterSet dbscan(const PointSet& points, double radius, int min_pts) {
    if (!(radius > 0.0)) throw ValidationError("dbscan: radius must be positive");
    if (min_pts < 1) throw ValidationError("dbscan: min_pts must be >= 1");
    const auto n = static_cast<std::size_t>(points.cols());
    ClusterSet out;
    out.labels.assign(n, -1);
    if (n == 0) return out;

    using detail::CellKey;
    const Eigen::Vector3d origin = points.rowwise().minCoeff();
    std::unordered_map<CellKey, std::vector<std::size_t>, detail::CellKeyHash> cells;
    for (std::size_t i = 0; i < n; ++i) {
        cells[detail::floor_cell(points.col(static_cast<Eigen::Index>(i)), origin, radius)].push_back(i);
    }
    std::vector<std::vector<std::size_t>> neighbours(n);
    for (std::size_t i = 0; i < n; ++i) {
        const Eigen::Vector3d p = points.col(static_cast<Eigen::Index>(i));
        const CellKey key = detail::floor_cell(p, origin, radius);
        for (int di = -1; di <= 1; ++di)
            for (int dj = -1; dj <= 1; ++dj)
                for (int dk = -1; dk <= 1; ++dk) {
                    auto it = cells.find(key.offset(di, dj, dk));
                    if (it == cells.end()) continue;
                    for (std::size_t j : it->second) {
                        if ((points.col(static_cast<Eigen::Index>(j)) - p).norm() <= radius) neighbours[i].push_back(j);
                    }
                }
    }

    std::vector<bool> core(n);
    for (std::size_t i = 0; i < n; ++i) core[i] = neighbours[i].size() >= static_cast<std::size_t>(min_pts);

    UnionFind uf(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (!core[i]) continue;
        for (std::size_t j : neighbours[i])
            if (core[j]) uf.unite(i, j);
    }

    const auto rank = lexicographic_rank(points);
    // Cluster ids ordered by the lexicographically smallest core point of each component.
    std::unordered_map<std::size_t, std::size_t> root_min_rank;
    for (std::size_t i = 0; i < n; ++i) {
        if (!core[i]) continue;
        const std::size_t r = uf.find(i);
        auto [it, inserted] = root_min_rank.emplace(r, rank[i]);
        if (!inserted) it->second = std::min(it->second, rank[i]);
    }
    std::vector<std::pair<std::size_t, std::size_t>> roots(root_min_rank.begin(), root_min_rank.end());
    std::sort(roots.begin(), roots.end(), [](const auto& a, const auto& b) { return a.second < b.second; });
    std::unordered_map<std::size_t, int> root_label;
    for (std::size_t c = 0; c < roots.size(); ++c) root_label[roots[c].first] = static_cast<int>(c);

    for (std::size_t i = 0; i < n; ++i) {
        if (core[i]) {
            out.labels[i] = root_label.at(uf.find(i));
            continue;
        }
        std::size_t best_rank = n;
        for (std::size_t j : neighbours[i]) {
            if (core[j] && rank[j] < best_rank) {
                best_rank = rank[j];
                out.labels[i] = root_label.at(uf.find(j));
            }
        }
    }

    std::vector<std::vector<Eigen::Index>> members(roots.size());
    std::vector<Eigen::Index> noise;
    for (std::size_t i = 0; i < n; ++i) {
        if (out.labels[i] < 0) {
            noise.push_back(static_cast<Eigen::Index>(i));
        } else {
            members[static_cast<std::size_t>(out.labels[i])].push_back(static_cast<Eigen::Index>(i));
        }
    }
    for (const auto& m : members) out.clusters.push_back(gather(points, m));
    out.noise = gather(points, noise);
    return out;
}

ClusterSet kmeans(const PointSet& points, int k, std::uint64_t seed, int max_iterations) {
    const Eigen::Index n = points.cols();
    if (k < 1) throw ValidationError("kmeans: k must be >= 1");
    if (k > n) throw ValidationError("kmeans: k exceeds the number of points");

    // Farthest-point seeding.
    std::vector<Eigen::Index> seeds;
    if (seed == 0) {
        const Eigen::Vector3d mean = points.rowwise().mean();
        Eigen::Index first = 0;
        (points.colwise() - mean).colwise().squaredNorm().minCoeff(&first);
        seeds.push_back(first);
    } else {
        std::mt19937_64 rng(seed);
        seeds.push_back(static_cast<Eigen::Index>(std::uniform_int_distribution<std::uint64_t>(
            0, static_cast<std::uint64_t>(n - 1))(rng)));
    }
    Eigen::VectorXd nearest = (points.colwise() - points.col(seeds[0])).colwise().squaredNorm().transpose();
    while (static_cast<int>(seeds.size()) < k) {
        Eigen::Index next = 0;
        nearest.maxCoeff(&next);
        seeds.push_back(next);
        nearest = nearest.cwiseMin((points.colwise() - points.col(next)).colwise().squaredNorm().transpose());
    }
    Eigen::Matrix3Xd centres(3, k);
    for (int c = 0; c < k; ++c) centres.col(c) = points.col(seeds[static_cast<std::size_t>(c)]);

    std::vector<int> assign(static_cast<std::size_t>(n), -1);
    for (int iter = 0; iter < max_iterations; ++iter) {
        bool changed = false;
        for (Eigen::Index i = 0; i < n; ++i) {
            Eigen::Index best = 0;
            (centres.colwise() - points.col(i)).colwise().squaredNorm().minCoeff(&best);
            if (assign[static_cast<std::size_t>(i)] != static_cast<int>(best)) {
                assign[static_cast<std::size_t>(i)] = static_cast<int>(best);
                changed = true;
            }
        }
        // Empty clusters take the point farthest from its own centre.
        std::vector<int> count(static_cast<std::size_t>(k), 0);
        for (int a : assign) ++count[static_cast<std::size_t>(a)];
        for (int c = 0; c < k; ++c) {
            if (count[static_cast<std::size_t>(c)] > 0) continue;
            Eigen::Index far = -1;
            double far_d = -1.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                const int a = assign[static_cast<std::size_t>(i)];
                if (count[static_cast<std::size_t>(a)] <= 1) continue;
                const double d = (points.col(i) - centres.col(a)).squaredNorm();
                if (d > far_d) {
                    far_d = d;
                    far = i;
                }
            }
            --count[static_cast<std::size_t>(assign[static_cast<std::size_t>(far)])];
            assign[static_cast<std::size_t>(far)] = c;
            count[static_cast<std::size_t>(c)] = 1;
            changed = true;
        }
        centres.setZero();
        for (Eigen::Index i = 0; i < n; ++i) centres.col(assign[static_cast<std::size_t>(i)]) += points.col(i);
        for (int c = 0; c < k; ++c) centres.col(c) /= count[static_cast<std::size_t>(c)];
        if (!changed) break;
    }

    ClusterSet out;
    out.labels = assign;
    std::vector<std::vector<Eigen::Index>> members(static_cast<std::size_t>(k));
    for (Eigen::Index i = 0; i < n; ++i) members[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])].push_back(i);
    for (const auto& m : members) out.clusters.push_back(gather(points, m));
    return out;
}

double kmeans_objective(const ClusterSet& set) {
    double total = 0.0;
    for (const PointSet& c : set.clusters) {
        if (c.cols() == 0) continue;
        total += (c.colwise() - c.rowwise().mean()).squaredNorm();
    }
    return total;
}

CoverageReport coverage(const std::vector<Ellipsoid>& ellipsoids, const PointSet& cluster_points, const PointSet& grid) {
    if (cluster_points.cols() == 0) throw ValidationError("coverage: cluster has no points");
    auto inside_any = [&](const Eigen::Vector3d& p) {
        return std::any_of(ellipsoids.begin(), ellipsoids.end(),
                           [&](const Ellipsoid& e) { return e.contains(p, kCoverageSlack); });
    };
    CoverageReport report;
    for (Eigen::Index i = 0; i < grid.cols(); ++i) report.grid_points_inside += inside_any(grid.col(i)) ? 1 : 0;
    for (Eigen::Index i = 0; i < cluster_points.cols(); ++i) {
        report.obstacle_points_inside += inside_any(cluster_points.col(i)) ? 1 : 0;
    }
    if (report.obstacle_points_inside == 0) {
        throw ValidationError("coverage: no obstacle point lies inside the ellipsoids");
    }
    report.ratio = static_cast<double>(report.grid_points_inside) / static_cast<double>(report.obstacle_points_inside);
    return report;
}

namespace {

template <typename Visit>
void for_each_lattice_point_in(const Ellipsoid& e, const Eigen::Vector3d& origin, double spacing, Visit&& visit) {
    const Eigen::Vector3d half = e.shape().inverse().diagonal().cwiseSqrt();
    const Eigen::Vector3d lo = (e.center() - half - origin) / spacing;
    const Eigen::Vector3d hi = (e.center() + half - origin) / spacing;
    for (auto i = static_cast<std::int64_t>(std::floor(lo.x())); i <= static_cast<std::int64_t>(std::ceil(hi.x())); ++i)
        for (auto j = static_cast<std::int64_t>(std::floor(lo.y())); j <= static_cast<std::int64_t>(std::ceil(hi.y())); ++j)
            for (auto k = static_cast<std::int64_t>(std::floor(lo.z())); k <= static_cast<std::int64_t>(std::ceil(hi.z()));
                 ++k) {
                const detail::CellKey key{i, j, k};
                visit(key, detail::cell_point(key, origin, spacing));
            }
}

}  // namespace

std::int64_t count_lattice_points_inside(const std::vector<Ellipsoid>& ellipsoids, const Eigen::Vector3d& origin,
                                         double spacing) {
    std::unordered_set<detail::CellKey, detail::CellKeyHash> inside;
    for (const Ellipsoid& e : ellipsoids) {
        for_each_lattice_point_in(e, origin, spacing, [&](const detail::CellKey& key, const Eigen::Vector3d& p) {
            if (e.contains(p, kCoverageSlack)) inside.insert(key);
        });
    }
    return static_cast<std::int64_t>(inside.size());
}

PointSet lattice_around(const std::vector<Ellipsoid>& ellipsoids, const Eigen::Vector3d& origin, double spacing) {
    std::unordered_set<detail::CellKey, detail::CellKeyHash> seen;
    std::vector<Eigen::Vector3d> pts;
    for (const Ellipsoid& e : ellipsoids) {
        for_each_lattice_point_in(e, origin, spacing, [&](const detail::CellKey& key, const Eigen::Vector3d& p) {
            if (seen.insert(key).second) pts.push_back(p);
        });
    }
    PointSet out(3, static_cast<Eigen::Index>(pts.size()));
    for (std::size_t i = 0; i < pts.size(); ++i) out.col(static_cast<Eigen::Index>(i)) = pts[i];
    return out;
}

namespace {

struct ClusterOutcome {
    std::vector<Ellipsoid> ellipsoids;
    ClusterDiagnostics diag;
};

ClusterOutcome cover_cluster(const PointSet& cluster, int id, double delta_mri, const Eigen::Vector3d& origin,
                             const ObstacleOptions& opt) {
    const auto size = static_cast<int>(cluster.cols());
    ClusterOutcome best;
    best.diag.cluster_id = id;
    best.diag.n_points = cluster.cols();
    best.diag.ratio = std::numeric_limits<double>::infinity();
    int k = std::clamp(opt.k0, 1, size);
    for (int iter = 0; iter < opt.max_k_iterations; ++iter) {
        const ClusterSet sub = kmeans(cluster, k, opt.seed);
        std::vector<Ellipsoid> ells;
        ells.reserve(sub.clusters.size());
        for (const PointSet& s : sub.clusters) ells.push_back(fit_enclosing(s, 0.5 * delta_mri, opt.fit).ellipsoid);

        std::int64_t covered = 0;
        for (Eigen::Index i = 0; i < cluster.cols(); ++i) {
            const Eigen::Vector3d p = cluster.col(i);
            covered += std::any_of(ells.begin(), ells.end(), [&](const Ellipsoid& e) { return e.contains(p, kCoverageSlack); });
        }
        const double ratio = static_cast<double>(count_lattice_points_inside(ells, origin, delta_mri)) /
                             static_cast<double>(std::max<std::int64_t>(covered, 1));
        if (ratio < best.diag.ratio) {
            best.ellipsoids = std::move(ells);
            best.diag.ratio = ratio;
            best.diag.k_final = k;
        }
        if (ratio <= opt.c_th) {
            best.diag.capped = false;
            if (best.diag.k_final != k) {
                // Accept the current clustering even if an earlier k scored lower.
                best.diag.k_final = k;
                best.diag.ratio = ratio;
            }
            return best;
        }
        if (k >= size) break;
        ++k;
    }
    best.diag.capped = true;
    return best;
}

}  // namespace

ObstacleSet build_obstacles(const PointSet& obstacle_points, double delta_mri, const Eigen::Vector3d& grid_origin,
                            const ObstacleOptions& opt) {
    if (!(opt.c_th >= 1.0)) throw ValidationError("build_obstacles: c_th must be >= 1");
    if (!(delta_mri > 0.0)) throw ValidationError("build_obstacles: delta_mri must be positive");
    ObstacleSet result;
    if (obstacle_points.cols() == 0) return result;

    const double radius = opt.radius > 0.0 ? opt.radius : delta_mri * (1.0 + 1e-6);
    ClusterSet split = dbscan(obstacle_points, radius, opt.min_pts);

    // Noise is never discarded: merge it into the nearest cluster.
    if (split.noise.cols() > 0) {
        if (split.clusters.empty()) {
            split.clusters.push_back(split.noise);
        } else {
            std::vector<std::vector<Eigen::Vector3d>> extra(split.clusters.size());
            for (Eigen::Index i = 0; i < split.noise.cols(); ++i) {
                const Eigen::Vector3d p = split.noise.col(i);
                std::size_t best = 0;
                double best_d = std::numeric_limits<double>::infinity();
                for (std::size_t c = 0; c < split.clusters.size(); ++c) {
                    const double d = (split.clusters[c].colwise() - p).colwise().squaredNorm().minCoeff();
                    if (d < best_d) {
                        best_d = d;
                        best = c;
                    }
                }
                extra[best].push_back(p);
            }
            for (std::size_t c = 0; c < split.clusters.size(); ++c) {
                if (extra[c].empty()) continue;
                PointSet merged(3, split.clusters[c].cols() + static_cast<Eigen::Index>(extra[c].size()));
                merged.leftCols(split.clusters[c].cols()) = split.clusters[c];
                for (std::size_t e = 0; e < extra[c].size(); ++e) {
                    merged.col(split.clusters[c].cols() + static_cast<Eigen::Index>(e)) = extra[c][e];
                }
                split.clusters[c] = std::move(merged);
            }
        }
        split.noise.resize(3, 0);
    }

    std::vector<ClusterOutcome> outcomes(split.clusters.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t c = next++; c < split.clusters.size(); c = next++) {
            outcomes[c] = cover_cluster(split.clusters[c], static_cast<int>(c), delta_mri, grid_origin, opt);
        }
    };
    const int threads = std::max(1, std::min<int>(opt.threads, static_cast<int>(split.clusters.size())));
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    }

    for (auto& o : outcomes) {
        result.capped = result.capped || o.diag.capped;
        result.diagnostics.push_back(o.diag);
        for (auto& e : o.ellipsoids) result.ellipsoids.push_back(std::move(e));
    }
    return result;
}

}  // namespace ctr
