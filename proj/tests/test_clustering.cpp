#include "ctr/clustering.hpp"

#include <gtest/gtest.h>

#include <map>
#include <numeric>
#include <random>

using namespace ctr;

namespace {

/// Connected components of the radius graph by union-find over all pairs.
std::vector<int> brute_force_components(const PointSet& p, double radius) {
    const auto n = static_cast<std::size_t>(p.cols());
    std::vector<std::size_t> parent(n);
    std::iota(parent.begin(), parent.end(), std::size_t{0});
    auto find = [&](std::size_t i) {
        while (parent[i] != i) i = parent[i] = parent[parent[i]];
        return i;
    };
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if ((p.col(static_cast<Eigen::Index>(i)) - p.col(static_cast<Eigen::Index>(j))).norm() <= radius)
                parent[find(i)] = find(j);
    std::vector<int> label(n);
    for (std::size_t i = 0; i < n; ++i) label[i] = static_cast<int>(find(i));
    return label;
}

/// Same partition up to relabelling.
bool same_partition(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.size() != b.size()) return false;
    std::map<int, int> ab, ba;
    for (std::size_t i = 0; i < a.size(); ++i) {
        auto [ia, fresh_a] = ab.emplace(a[i], b[i]);
        auto [ib, fresh_b] = ba.emplace(b[i], a[i]);
        if (ia->second != b[i] || ib->second != a[i]) return false;
    }
    return true;
}

PointSet random_cloud(std::mt19937_64& rng, int n) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    PointSet p(3, n);
    for (int i = 0; i < n; ++i) p.col(i) = Eigen::Vector3d(u(rng), u(rng), u(rng));
    return p;
}

PointSet voxels(const std::vector<Eigen::Vector3d>& pts) {
    PointSet p(3, static_cast<Eigen::Index>(pts.size()));
    for (std::size_t i = 0; i < pts.size(); ++i) p.col(static_cast<Eigen::Index>(i)) = pts[i];
    return p;
}

}  // namespace

TEST(Clustering, DbscanEqualsRadiusGraphComponents) {
    std::mt19937_64 rng(21);
    for (int t = 0; t < 20; ++t) {
        const PointSet p = random_cloud(rng, 300);
        const double radius = 0.06 + 0.004 * t;
        const ClusterSet c = dbscan(p, radius, 1);
        EXPECT_EQ(c.noise.cols(), 0);  // min_pts = 1: every point is core
        EXPECT_TRUE(same_partition(c.labels, brute_force_components(p, radius))) << "cloud " << t;
        Eigen::Index total = 0;
        for (const PointSet& s : c.clusters) total += s.cols();
        EXPECT_EQ(total, p.cols());
    }
}

TEST(Clustering, DbscanMarksSparsePointsAsNoise) {
    PointSet p(3, 4);
    p << 0, 0.1, 0.2, 5, 0, 0, 0, 0, 0, 0, 0, 0;
    const ClusterSet c = dbscan(p, 0.15, 2);
    ASSERT_EQ(c.clusters.size(), 1u);
    EXPECT_EQ(c.clusters[0].cols(), 3);
    EXPECT_EQ(c.noise.cols(), 1);
    EXPECT_EQ(c.labels[3], -1);
}

TEST(Clustering, KmeansSeparatesBlobs) {
    std::mt19937_64 rng(22);
    std::normal_distribution<double> g(0.0, 0.01);
    const Eigen::Vector3d centres[3] = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
    PointSet p(3, 90);
    for (int i = 0; i < 90; ++i) p.col(i) = centres[i % 3] + Eigen::Vector3d(g(rng), g(rng), g(rng));
    for (std::uint64_t seed : {0u, 7u}) {
        const ClusterSet c = kmeans(p, 3, seed);
        ASSERT_EQ(c.clusters.size(), 3u);
        for (const PointSet& s : c.clusters) EXPECT_EQ(s.cols(), 30);
        for (int i = 0; i < 90; ++i) EXPECT_EQ(c.labels[i], c.labels[i % 3]);
    }
}

TEST(Clustering, KmeansIsDeterministicAndObjectiveDecreasesWithK) {
    std::mt19937_64 rng(23);
    const PointSet p = random_cloud(rng, 200);
    EXPECT_EQ(kmeans(p, 4, 0).labels, kmeans(p, 4, 0).labels);
    double previous = std::numeric_limits<double>::infinity();
    for (int k = 1; k <= 6; ++k) {
        const double obj = kmeans_objective(kmeans(p, k, 0));
        EXPECT_LE(obj, previous * (1.0 + 1e-12));
        previous = obj;
    }
}

TEST(Clustering, LatticeCountMatchesEnumeration) {
    const std::vector<Ellipsoid> ells = {
        Ellipsoid(Eigen::Vector3d(0.01, 0.0, 0.0), Eigen::Vector3d(1e4, 4e4, 2.5e4).asDiagonal().toDenseMatrix()),
        Ellipsoid::ball(Eigen::Vector3d(0.018, 0.002, 0.0), 0.006)};
    const Eigen::Vector3d origin(0.0005, 0.0, 0.0);
    const double h = 0.001;
    std::int64_t expected = 0;
    for (int i = -40; i <= 60; ++i)
        for (int j = -40; j <= 40; ++j)
            for (int k = -40; k <= 40; ++k) {
                const Eigen::Vector3d x = origin + h * Eigen::Vector3d(i, j, k);
                expected += (ells[0].contains(x, kCoverageSlack) || ells[1].contains(x, kCoverageSlack)) ? 1 : 0;
            }
    EXPECT_EQ(count_lattice_points_inside(ells, origin, h), expected);
    const CoverageReport rep = coverage(ells, lattice_around(ells, origin, h), lattice_around(ells, origin, h));
    EXPECT_EQ(rep.grid_points_inside, expected);
}

TEST(Clustering, DumbbellNeedsMoreThanOneEllipsoid) {
    // Two solid blocks joined by a thin bar: one ellipsoid over-covers badly.
    const double h = 1e-3;
    std::vector<Eigen::Vector3d> pts;
    for (int i = 0; i <= 30; ++i)
        for (int j = -4; j <= 4; ++j)
            for (int k = -4; k <= 4; ++k) {
                const bool block = i <= 8 || i >= 22;
                if (block || (std::abs(j) <= 0 && std::abs(k) <= 0)) pts.push_back(h * Eigen::Vector3d(i, j, k));
            }
    const PointSet cloud = voxels(pts);
    ObstacleOptions opt;
    opt.c_th = 2.0;
    const ObstacleSet set = build_obstacles(cloud, h, Eigen::Vector3d::Zero(), opt);
    ASSERT_EQ(set.diagnostics.size(), 1u);
    EXPECT_GT(set.diagnostics[0].k_final, 1);
    EXPECT_FALSE(set.capped);
    // Recount: grid points inside the union over cloud points inside it.
    const std::int64_t grid = count_lattice_points_inside(set.ellipsoids, Eigen::Vector3d::Zero(), h);
    std::int64_t covered = 0;
    for (Eigen::Index i = 0; i < cloud.cols(); ++i) {
        bool in = false;
        for (const Ellipsoid& e : set.ellipsoids) in = in || e.contains(cloud.col(i), kCoverageSlack);
        covered += in ? 1 : 0;
    }
    EXPECT_EQ(covered, cloud.cols());
    EXPECT_LE(static_cast<double>(grid) / static_cast<double>(covered), opt.c_th);
}

TEST(Clustering, SeparateObstaclesAreSplitByDbscan) {
    std::vector<Eigen::Vector3d> pts;
    const double h = 1e-3;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            for (int k = 0; k < 3; ++k) {
                pts.push_back(h * Eigen::Vector3d(i, j, k));
                pts.push_back(h * Eigen::Vector3d(i + 10, j, k));
            }
    const ObstacleSet set = build_obstacles(voxels(pts), h, Eigen::Vector3d::Zero());
    EXPECT_EQ(set.diagnostics.size(), 2u);
    EXPECT_GE(set.ellipsoids.size(), 2u);
    for (const ClusterDiagnostics& d : set.diagnostics) EXPECT_GE(d.ratio, 1.0);
}

TEST(Clustering, RejectsInvalidThreshold) {
    ObstacleOptions opt;
    opt.c_th = 0.5;
    EXPECT_THROW(build_obstacles(PointSet(3, 0), 1e-3, Eigen::Vector3d::Zero(), opt), ValidationError);
    EXPECT_TRUE(build_obstacles(PointSet(3, 0), 1e-3, Eigen::Vector3d::Zero()).ellipsoids.empty());
}
