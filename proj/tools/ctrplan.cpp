// ctrplan: ingest -> fit -> cluster -> plan -> export, one artifact per stage.
//
// Exit codes: 0 success, 2 validation, 3 fit failure, 4 planning infeasible,
// 5 homotopy stalled (also used when the forward torsion BVP does not converge).

#include "ctr/clustering.hpp"
#include "ctr/fitting.hpp"
#include "ctr/ingestion.hpp"
#include "ctr/io.hpp"
#include "ctr/kinematics.hpp"
#include "ctr/planner.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using namespace ctr;

namespace {

enum Exit { kOk = 0, kValidation = 2, kFit = 3, kInfeasible = 4, kStalled = 5 };

constexpr const char* kThreadsEnv = "CTRPLAN_THREADS";

/// Command-line overrides; unset options leave the config value alone.
struct Overrides {
    std::string config;
    std::string input;
    std::optional<double> unit_scale;
    std::string output_dir;
    std::optional<double> c_th;
    std::optional<double> delta;
    std::optional<int> n_tubes;
    std::optional<int> nodes_per_segment;
    std::optional<std::vector<std::size_t>> fixed;
    std::optional<int> max_iter;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
};

io::PipelineConfig resolve(const Overrides& o) {
    io::PipelineConfig c;
    if (!o.config.empty()) c = io::config_from_json(io::read_text(o.config));
    // Precedence: config file < environment < command line.
    if (const char* env = std::getenv(kThreadsEnv)) {
        try {
            c.threads = std::stoi(env);
        } catch (const std::exception&) {
            throw ValidationError(std::string(kThreadsEnv) + " must be an integer");
        }
    }
    if (!o.input.empty()) c.input = o.input;
    if (o.unit_scale) c.unit_scale = o.unit_scale;
    if (!o.output_dir.empty()) c.output_dir = o.output_dir;
    if (o.c_th) c.c_th = *o.c_th;
    if (o.delta) c.delta = *o.delta;
    if (o.n_tubes) c.n_tubes = *o.n_tubes;
    if (o.nodes_per_segment) c.nodes_per_segment = *o.nodes_per_segment;
    if (o.fixed) {
        c.fixed_obstacles = *o.fixed;
        c.fixed_obstacles_set = true;
    }
    if (o.max_iter) c.solver.max_iter = *o.max_iter;
    if (o.seed) c.seed = *o.seed;
    if (o.threads) c.threads = *o.threads;
    c.validate();
    return c;
}

void add_common(CLI::App* cmd, Overrides& o) {
    cmd->add_option("-c,--config", o.config, "JSON config file");
    cmd->add_option("-o,--out-dir", o.output_dir, "output directory");
    cmd->add_option("--threads", o.threads, std::string("worker threads (also ") + kThreadsEnv + ")");
}

ObstacleOptions obstacle_options(const io::PipelineConfig& c) {
    ObstacleOptions opt;
    opt.c_th = c.c_th;
    opt.seed = c.seed;
    opt.threads = c.threads;
    return opt;
}

/// Obstacle voxel centres lie on the acquisition lattice, so any of them anchors the coverage grid.
Eigen::Vector3d grid_origin(const PointSet& points) {
    return points.cols() > 0 ? Eigen::Vector3d(points.col(0)) : Eigen::Vector3d::Zero();
}

nlohmann::json fit_entry(const FitResult& r, Eigen::Index n_points) {
    return {{"objective", r.objective},
            {"residual_max", r.residual_max},
            {"iterations", r.iterations},
            {"n_points", n_points}};
}

nlohmann::json cluster_entries(const std::vector<ClusterDiagnostics>& diagnostics) {
    nlohmann::json a = nlohmann::json::array();
    for (const ClusterDiagnostics& d : diagnostics) {
        a.push_back({{"cluster_id", d.cluster_id},
                     {"k_final", d.k_final},
                     {"ratio", d.ratio},
                     {"n_points", d.n_points},
                     {"capped", d.capped}});
    }
    return a;
}

LabeledPointCloud load(const io::PipelineConfig& c) {
    if (c.input.empty()) throw ValidationError("no input cloud (use --input or the \"input\" config key)");
    return load_cloud(c.input, c.unit_scale);
}

int cmd_fit(const io::PipelineConfig& c) {
    const LabeledPointCloud cloud = load(c);
    const HyperplaneFit plane = fit_hyperplane(cloud.hemisphere);
    if (cloud.target.cols() == 0) throw FitError("target: no target points");
    io::Geometry g;
    g.plane_normal = plane.h;
    g.hemispheres = select_hemisphere(plane.halfspaces, cloud.target);
    g.delta_mri = cloud.delta_mri;
    const FitResult skull =
        g.hemispheres.size() == 1 ? fit_skull(cloud.skull, g.hemispheres.front()) : fit_skull(cloud.skull);
    const FitResult target = fit_target(cloud.target, cloud.delta_mri);
    const ObstacleSet obstacles =
        build_obstacles(cloud.obstacle, cloud.delta_mri, grid_origin(cloud.obstacle), obstacle_options(c));
    g.skull = skull.ellipsoid;
    g.target = target.ellipsoid;
    g.obstacles = obstacles.ellipsoids;

    nlohmann::json report = {
        {"delta_mri", cloud.delta_mri},
        {"hyperplane", {{"h", {plane.h.x(), plane.h.y(), plane.h.z()}}, {"n_points", cloud.hemisphere.cols()}}},
        {"hemispheres", g.hemispheres.size()},
        {"skull", fit_entry(skull, cloud.skull.cols())},
        {"target", fit_entry(target, cloud.target.cols())},
        {"obstacles",
         {{"n_points", cloud.obstacle.cols()},
          {"n_ellipsoids", g.obstacles.size()},
          {"capped", obstacles.capped},
          {"clusters", cluster_entries(obstacles.diagnostics)}}}};
    const fs::path out = c.output_dir;
    io::write_text(out / "geometry.json", io::geometry_to_json(g));
    io::write_text(out / "fit_report.json", report.dump(2) + '\n');
    io::write_text(out / "clusters.csv", io::cluster_diagnostics_csv(obstacles.diagnostics));
    std::cout << "wrote " << (out / "geometry.json").string() << " (" << g.obstacles.size() << " obstacles)\n";
    return kOk;
}

int cmd_cluster(const io::PipelineConfig& c) {
    const LabeledPointCloud cloud = load(c);
    if (!(cloud.delta_mri > 0.0)) throw ValidationError("cluster: cloud too small to infer the voxel spacing");
    const ObstacleSet obstacles =
        build_obstacles(cloud.obstacle, cloud.delta_mri, grid_origin(cloud.obstacle), obstacle_options(c));
    const fs::path out = c.output_dir;
    io::write_text(out / "obstacles.json", io::obstacles_to_json(obstacles.ellipsoids));
    io::write_text(out / "clusters.csv", io::cluster_diagnostics_csv(obstacles.diagnostics));
    std::cout << "wrote " << (out / "obstacles.json").string() << " (" << obstacles.ellipsoids.size()
              << " ellipsoids)\n";
    return kOk;
}

int cmd_plan(const io::PipelineConfig& c, const std::string& geometry_file) {
    const io::Geometry g = io::geometry_from_json(io::read_text(geometry_file));
    PlanProblem problem;
    problem.skull = g.skull;
    problem.hemi = g.hemispheres.front();
    problem.target = g.target;
    problem.obstacles = g.obstacles;
    problem.n_tubes = static_cast<std::size_t>(c.n_tubes);
    problem.bounds = c.bounds;
    problem.fixed_idx = c.fixed_obstacles_set ? c.fixed_obstacles : nearest_obstacle_to_target(problem);
    problem.validate();

    PlannerOptions options;
    options.delta = c.delta;
    options.solver = c.solver;
    options.threads = c.threads;
    options.transcription.nodes_per_segment = c.nodes_per_segment;
    const PlanResult result = plan(problem, g.hemispheres, options);

    // Written whatever the outcome, so a failed run can be inspected.
    const fs::path out = c.output_dir;
    io::write_text(out / "plan_result.json", io::plan_result_to_json(result));
    io::write_text(out / "path.csv", io::path_to_csv(result.path));
    io::write_text(out / "lambda_log.csv", io::lambda_log_csv(result.lambda_log));
    std::cout << "status " << to_string(result.status) << ", lambda " << io::format_number(result.lambda_reached)
              << ", objective " << io::format_number(result.objective) << '\n';
    switch (result.status) {
        case PlanStatus::optimal: return kOk;
        case PlanStatus::infeasible:
            std::cerr << "plan: infeasible at stage " << result.stage << '\n';
            return kInfeasible;
        case PlanStatus::homotopy_stalled:
            std::cerr << "plan: homotopy stalled at lambda " << io::format_number(result.lambda_reached) << '\n';
            return kStalled;
    }
    return kStalled;
}

int cmd_simulate(const std::string& tubes_file, const std::string& out_csv, const std::string& out_json) {
    const io::SimulationInput in = io::simulation_from_json(io::read_text(tubes_file));
    const RobotPath path = shoot_forward(in.tubes, in.p0, in.R0, in.shooting);
    io::write_text(out_csv, io::path_to_csv(path));
    if (!out_json.empty()) io::write_text(out_json, io::path_to_json(path));
    const Eigen::Vector3d tip = path.tip().p;
    std::cout << "tip " << io::format_number(tip.x()) << ' ' << io::format_number(tip.y()) << ' '
              << io::format_number(tip.z()) << ", BVP residual " << io::format_number(path.bvp_residual) << '\n';
    return kOk;
}

int cmd_export_obj(const std::string& geometry_file, const std::string& path_file, const std::string& out_obj,
                   int rings, int sectors) {
    const io::Geometry g = io::geometry_from_json(io::read_text(geometry_file));
    std::vector<Eigen::Vector3d> polyline;
    if (!path_file.empty()) polyline = io::polyline_from_json(io::read_text(path_file));
    io::write_text(out_obj, io::export_obj(g, polyline, rings, sectors));
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Concentric-tube robot path planning toolchain"};
    app.require_subcommand(1);

    Overrides o;
    auto* fit = app.add_subcommand("fit", "fit hyperplane, skull, target and obstacle ellipsoids to a labelled cloud");
    add_common(fit, o);
    fit->add_option("-i,--input", o.input, "labelled cloud (.json or .csv)");
    fit->add_option("--unit-scale", o.unit_scale, "metres per input unit (overrides the file)");
    fit->add_option("--c-th", o.c_th, "coverage threshold, >= 1");
    fit->add_option("--seed", o.seed, "k-means seed");

    auto* cluster = app.add_subcommand("cluster", "split the obstacle class and fit enclosing ellipsoids");
    add_common(cluster, o);
    cluster->add_option("-i,--input", o.input, "labelled cloud (.json or .csv)");
    cluster->add_option("--unit-scale", o.unit_scale, "metres per input unit (overrides the file)");
    cluster->add_option("--c-th", o.c_th, "coverage threshold, >= 1");
    cluster->add_option("--seed", o.seed, "k-means seed");

    std::string geometry_file;
    auto* planc = app.add_subcommand("plan", "plan a tube design and path through fitted geometry");
    add_common(planc, o);
    planc->add_option("-g,--geometry", geometry_file, "geometry JSON from `fit`")->required();
    planc->add_option("--delta", o.delta, "homotopy step in (0, 1]");
    planc->add_option("--n-tubes", o.n_tubes, "number of tubes");
    planc->add_option("--nodes-per-segment", o.nodes_per_segment, "shooting nodes per segment");
    planc->add_option("--fixed", o.fixed, "obstacle indices kept in place by the homotopy (0-based)");
    planc->add_option("--max-iter", o.max_iter, "solver iteration cap per solve");

    std::string tubes_file, out_csv = "path.csv", out_json;
    auto* sim = app.add_subcommand("simulate", "forward kinematics of a tube set");
    sim->add_option("-t,--tubes", tubes_file, "tube parameter JSON")->required();
    sim->add_option("-o,--out", out_csv, "path CSV")->capture_default_str();
    sim->add_option("--json", out_json, "also write the path as JSON");

    std::string path_file, out_obj = "scene.obj";
    int rings = 12, sectors = 24;
    auto* obj = app.add_subcommand("export-obj", "Wavefront OBJ of the ellipsoids and an optional path");
    obj->add_option("-g,--geometry", geometry_file, "geometry JSON")->required();
    obj->add_option("-p,--path", path_file, "plan_result.json or path JSON");
    obj->add_option("-o,--out", out_obj, "OBJ file")->capture_default_str();
    obj->add_option("--rings", rings, "latitude bands per ellipsoid")->capture_default_str();
    obj->add_option("--sectors", sectors, "longitude sectors per ellipsoid")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kValidation;
    }

    try {
        if (*fit) return cmd_fit(resolve(o));
        if (*cluster) return cmd_cluster(resolve(o));
        if (*planc) return cmd_plan(resolve(o), geometry_file);
        if (*sim) return cmd_simulate(tubes_file, out_csv, out_json);
        if (*obj) return cmd_export_obj(geometry_file, path_file, out_obj, rings, sectors);
    } catch (const ValidationError& e) {
        std::cerr << "validation error: " << e.what() << '\n';
        return kValidation;
    } catch (const FitError& e) {
        // Messages start with the stage name ("hyperplane: ...", "skull: ...").
        std::cerr << "fit failed at stage " << e.what() << '\n';
        return kFit;
    } catch (const ConvergenceError& e) {
        std::cerr << "simulate: torsion BVP did not converge, residual " << io::format_number(e.residual()) << '\n';
        return kStalled;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kValidation;
    }
    return kValidation;
}
