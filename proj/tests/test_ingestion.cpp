#include "ctr/ingestion.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

using namespace ctr;

namespace {

double brute_force_min_distance(const PointSet& p) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < p.cols(); ++i)
        for (Eigen::Index j = i + 1; j < p.cols(); ++j) best = std::min(best, (p.col(i) - p.col(j)).norm());
    return best;
}

PointSet cube_grid(int n, double spacing) {
    PointSet p(3, n * n * n);
    Eigen::Index k = 0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            for (int l = 0; l < n; ++l) p.col(k++) = spacing * Eigen::Vector3d(i, j, l);
    return p;
}

}  // namespace

TEST(Ingestion, JsonMillimetresAreScaledToMetres) {
    const std::string doc = R"({"unit": "mm", "points": [
        {"x": 0, "y": 0, "z": 0, "label": "target"},
        {"x": 1, "y": 0, "z": 0, "label": "target"},
        {"x": 5, "y": 5, "z": 5, "label": "skull"},
        {"x": 9, "y": 0, "z": 0, "label": "obstacle"},
        {"x": 1, "y": 2, "z": 3, "label": "hemisphere"}]})";
    const LabeledPointCloud c = parse_cloud(doc, true);
    EXPECT_DOUBLE_EQ(c.unit_scale, 1e-3);
    ASSERT_EQ(c.target.cols(), 2);
    EXPECT_DOUBLE_EQ(c.target(0, 1), 1e-3);
    EXPECT_DOUBLE_EQ(c.delta_mri, 1e-3);
    EXPECT_EQ(c.hemisphere.cols(), 1);
    EXPECT_NO_THROW(c.require_plannable());
}

TEST(Ingestion, ExplicitScaleOverridesUnitField) {
    const std::string doc = R"({"unit": "mm", "points": [{"x": 2, "y": 0, "z": 0, "label": "skull"}]})";
    EXPECT_DOUBLE_EQ(parse_cloud(doc, true, 1.0).skull(0, 0), 2.0);
}

TEST(Ingestion, CsvDefaultsToMetres) {
    const std::string csv = "x,y,z,label\n0,0,0,target\n0.5,0,0,target\n1,1,1,skull\n";
    const LabeledPointCloud c = parse_cloud(csv, false);
    EXPECT_EQ(c.target.cols(), 2);
    EXPECT_DOUBLE_EQ(c.delta_mri, 0.5);
    EXPECT_THROW(c.require_plannable(), ValidationError);  // no obstacle or hemisphere class
}

TEST(Ingestion, RejectsMalformedInput) {
    EXPECT_THROW(parse_cloud("", true), ValidationError);
    EXPECT_THROW(parse_cloud("{\"points\": 3}", true), ValidationError);
    EXPECT_THROW(parse_cloud(R"({"unit": "inch", "points": []})", true), ValidationError);
    EXPECT_THROW(parse_cloud(R"({"points": [{"x": 0, "y": 0, "z": 0, "label": "bone"}]})", true), ValidationError);
    EXPECT_THROW(parse_cloud("a,b,c,d\n0,0,0,skull\n", false), ValidationError);
    EXPECT_THROW(parse_cloud("x,y,z,label\n0,zero,0,skull\n", false), ValidationError);
    EXPECT_THROW(parse_cloud("x,y,z,label\n0,0,skull\n", false), ValidationError);
}

TEST(Ingestion, DuplicatesAreDropped) {
    const std::string csv = "x,y,z,label\n0,0,0,skull\n0,0,0,skull\n1,0,0,skull\n";
    EXPECT_EQ(parse_cloud(csv, false).skull.cols(), 2);
}

TEST(Ingestion, LoadCloudPicksFormatByExtension) {
    const auto dir = std::filesystem::temp_directory_path() / "ctr_ingestion_test";
    std::filesystem::create_directories(dir);
    {
        std::ofstream(dir / "c.csv") << "x,y,z,label\n0,0,0,target\n0.25,0,0,target\n";
        std::ofstream(dir / "c.json") << R"({"unit": "m", "points": [{"x": 0, "y": 0, "z": 0, "label": "skull"}]})";
    }
    EXPECT_DOUBLE_EQ(load_cloud(dir / "c.csv").delta_mri, 0.25);
    EXPECT_EQ(load_cloud(dir / "c.json").skull.cols(), 1);
    EXPECT_THROW(load_cloud(dir / "missing.json"), ValidationError);
}

TEST(Ingestion, DeltaMriAgreesWithBruteForce) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int t = 0; t < 20; ++t) {
        const int n = 2 + t * 15;
        PointSet p(3, n);
        for (Eigen::Index i = 0; i < n; ++i) p.col(i) = Eigen::Vector3d(u(rng), u(rng), u(rng));
        // Exact equality: both report the distance of the same closest pair.
        EXPECT_EQ(compute_delta_mri(p), brute_force_min_distance(p));
    }
    EXPECT_DOUBLE_EQ(compute_delta_mri(cube_grid(4, 0.002)), 0.002);
    EXPECT_THROW(compute_delta_mri(PointSet(3, 1)), ValidationError);
}

TEST(Ingestion, BoundaryOfFilledCube) {
    // n^3 voxels: the interior (n-2)^3 have all six neighbours.
    const PointSet cube = cube_grid(5, 0.001);
    EXPECT_EQ(extract_boundary(cube, 0.001).cols(), 125 - 27);
    PointSet off = cube;
    off(0, 3) += 0.0004;
    EXPECT_THROW(extract_boundary(off, 0.001), ValidationError);
}
