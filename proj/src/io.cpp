#include "ctr/io.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace ctr::io {

using nlohmann::json;

namespace {

// nlohmann serializes doubles in shortest round-trip form, which is what the
// determinism contract asks for; CSV and OBJ go through format_number.

json vec_json(const Eigen::VectorXd& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

json matrix_json(const Eigen::Matrix3d& m) {
    json a = json::array();
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) a.push_back(m(r, c));
    return a;
}

json ellipsoid_json(const Ellipsoid& e) { return {{"c", vec_json(e.center())}, {"Q", matrix_json(e.shape())}}; }

[[noreturn]] void fail(const std::string& what) { throw ValidationError(what); }

json parse(const std::string& text, const char* what) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        fail(std::string(what) + ": malformed JSON (" + e.what() + ")");
    }
}

double number(const json& j, const std::string& key, const char* where) {
    if (!j.contains(key)) fail(std::string(where) + ": missing \"" + key + "\"");
    if (!j.at(key).is_number()) fail(std::string(where) + ": \"" + key + "\" must be a number");
    return j.at(key).get<double>();
}

Eigen::VectorXd numbers(const json& j, Eigen::Index expected, const std::string& where) {
    if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != expected) {
        fail(where + ": expected an array of " + std::to_string(expected) + " numbers");
    }
    Eigen::VectorXd v(expected);
    for (Eigen::Index i = 0; i < expected; ++i) {
        const json& e = j.at(static_cast<std::size_t>(i));
        if (!e.is_number()) fail(where + ": non-numeric entry");
        v[i] = e.get<double>();
    }
    return v;
}

Eigen::Vector3d vec3(const json& j, const std::string& where) { return numbers(j, 3, where); }

Ellipsoid ellipsoid_from(const json& j, const std::string& where) {
    if (!j.is_object() || !j.contains("c") || !j.contains("Q")) fail(where + ": expected {\"c\", \"Q\"}");
    const Eigen::Vector3d c = vec3(j.at("c"), where + ".c");
    const Eigen::VectorXd q = numbers(j.at("Q"), 9, where + ".Q");
    Eigen::Matrix3d Q;
    for (int r = 0; r < 3; ++r)
        for (int k = 0; k < 3; ++k) Q(r, k) = q[3 * r + k];
    try {
        return Ellipsoid(c, Q);
    } catch (const ValidationError& e) {
        fail(where + ": " + e.what());
    }
}

json obstacles_json(const std::vector<Ellipsoid>& obstacles) {
    json a = json::array();
    for (const Ellipsoid& e : obstacles) a.push_back(ellipsoid_json(e));
    return a;
}

std::vector<Ellipsoid> obstacles_from(const json& j) {
    if (!j.is_array()) fail("geometry: \"obstacles\" must be an array");
    std::vector<Ellipsoid> out;
    for (std::size_t i = 0; i < j.size(); ++i) out.push_back(ellipsoid_from(j[i], "obstacles[" + std::to_string(i) + "]"));
    return out;
}

json path_json(const RobotPath& path) {
    json s = json::array(), p = json::array(), psi = json::array(), uz = json::array();
    for (const PathNode& n : path.nodes) {
        s.push_back(n.s);
        p.push_back(vec_json(n.p));
        psi.push_back(vec_json(n.psi));
        uz.push_back(vec_json(n.uz));
    }
    json ends = json::array();
    for (double e : path.segment_ends) ends.push_back(e);
    return {{"s", s}, {"p", p}, {"psi", psi}, {"uz", uz}, {"segment_ends", ends}};
}

void append_row(std::string& out, std::initializer_list<double> head, const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    bool first = true;
    auto put = [&](double v) {
        if (!first) out += ',';
        out += format_number(v);
        first = false;
    };
    for (double v : head) put(v);
    for (Eigen::Index i = 0; i < a.size(); ++i) put(a[i]);
    for (Eigen::Index i = 0; i < b.size(); ++i) put(b[i]);
    out += '\n';
}

std::string obj_vertex(const Eigen::Vector3d& v) {
    return "v " + format_number(v.x()) + ' ' + format_number(v.y()) + ' ' + format_number(v.z()) + '\n';
}

}  // namespace

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::string format_number(double v) {
    if (std::isnan(v)) return "nan";
    char buf[64];
    const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return ec == std::errc{} ? std::string(buf, end) : std::string("nan");
}

// ---------------------------------------------------------------------------

std::string geometry_to_json(const Geometry& g) {
    int sign = 0;
    if (g.hemispheres.size() == 1) sign = g.hemispheres.front().side == Side::below ? -1 : 1;
    json j;
    j["skull"] = ellipsoid_json(g.skull);
    j["hemisphere"] = {{"h", vec_json(g.plane_normal)}, {"sign", sign}};
    j["target"] = ellipsoid_json(g.target);
    j["obstacles"] = obstacles_json(g.obstacles);
    j["delta_mri"] = g.delta_mri;
    return j.dump(2) + '\n';
}

Geometry geometry_from_json(const std::string& text) {
    const json j = parse(text, "geometry");
    if (!j.is_object()) fail("geometry: expected an object");
    for (const char* key : {"skull", "hemisphere", "target"}) {
        if (!j.contains(key)) fail(std::string("geometry: missing \"") + key + "\"");
    }
    Geometry g;
    g.skull = ellipsoid_from(j["skull"], "skull");
    g.target = ellipsoid_from(j["target"], "target");
    const json& hemi = j["hemisphere"];
    if (!hemi.is_object() || !hemi.contains("h")) fail("hemisphere: expected {\"h\", \"sign\"}");
    g.plane_normal = vec3(hemi["h"], "hemisphere.h");
    if (hemi.contains("sign") && !hemi["sign"].is_number_integer()) fail("hemisphere.sign must be an integer");
    const int sign = hemi.contains("sign") ? hemi["sign"].get<int>() : 0;
    if (sign < -1 || sign > 1) fail("hemisphere.sign must be -1, 0 or 1");
    try {
        if (sign <= 0) g.hemispheres.emplace_back(g.plane_normal, 1.0, Side::below);
        if (sign >= 0) g.hemispheres.emplace_back(g.plane_normal, 1.0, Side::above);
    } catch (const ValidationError& e) {
        fail(std::string("hemisphere: ") + e.what());
    }
    if (j.contains("obstacles")) g.obstacles = obstacles_from(j["obstacles"]);
    if (j.contains("delta_mri")) g.delta_mri = number(j, "delta_mri", "geometry");
    return g;
}

std::string obstacles_to_json(const std::vector<Ellipsoid>& obstacles) {
    return json{{"obstacles", obstacles_json(obstacles)}}.dump(2) + '\n';
}

std::vector<Ellipsoid> obstacles_from_json(const std::string& text) {
    const json j = parse(text, "obstacles");
    if (!j.is_object() || !j.contains("obstacles")) fail("obstacles: missing \"obstacles\"");
    return obstacles_from(j["obstacles"]);
}

std::string cluster_diagnostics_csv(const std::vector<ClusterDiagnostics>& diagnostics) {
    std::string out = "cluster_id,k_final,ratio,n_points\n";
    for (const ClusterDiagnostics& d : diagnostics) {
        out += std::to_string(d.cluster_id) + ',' + std::to_string(d.k_final) + ',' + format_number(d.ratio) + ',' +
               std::to_string(d.n_points) + '\n';
    }
    return out;
}

// ---------------------------------------------------------------------------

SimulationInput simulation_from_json(const std::string& text) {
    const json j = parse(text, "tubes");
    if (!j.is_object() || !j.contains("tubes") || !j["tubes"].is_array()) fail("tubes: missing \"tubes\" array");
    std::vector<Tube> tubes;
    for (std::size_t i = 0; i < j["tubes"].size(); ++i) {
        const json& t = j["tubes"][i];
        const std::string where = "tube " + std::to_string(i + 1);
        if (!t.is_object()) fail(where + ": expected an object");
        Tube tube;
        tube.length = number(t, "length", where.c_str());
        tube.beta = t.contains("beta") ? number(t, "beta", where.c_str()) : 0.0;
        tube.alpha = t.contains("alpha") ? number(t, "alpha", where.c_str()) : 0.0;
        if (t.contains("u_star")) tube.u_star = vec3(t["u_star"], where + ".u_star");
        tube.rho_inner = number(t, "rho_inner", where.c_str());
        tube.rho_outer = number(t, "rho_outer", where.c_str());
        if (t.contains("youngs")) tube.youngs = number(t, "youngs", where.c_str());
        if (t.contains("shear")) tube.shear = number(t, "shear", where.c_str());
        tubes.push_back(tube);
    }
    SimulationInput in;
    in.tubes = TubeSet(std::move(tubes));
    if (j.contains("p0")) in.p0 = vec3(j["p0"], "p0");
    if (j.contains("q0")) in.R0 = rotation_from_quaternion(UnitQuaternion(Eigen::Vector4d(numbers(j["q0"], 4, "q0"))));
    if (j.contains("nodes_per_segment")) {
        in.shooting.nodes_per_segment = j["nodes_per_segment"].get<int>();
        if (in.shooting.nodes_per_segment < 2) fail("nodes_per_segment must be >= 2");
    }
    return in;
}

std::string path_to_csv(const RobotPath& path) {
    const std::size_t n = path.nodes.empty() ? 0 : static_cast<std::size_t>(path.nodes.front().psi.size());
    std::string out = "s,px,py,pz";
    for (std::size_t i = 1; i <= n; ++i) out += ",psi_" + std::to_string(i);
    for (std::size_t i = 1; i <= n; ++i) out += ",uz_" + std::to_string(i);
    out += '\n';
    for (const PathNode& node : path.nodes) append_row(out, {node.s, node.p.x(), node.p.y(), node.p.z()}, node.psi, node.uz);
    return out;
}

std::string path_to_json(const RobotPath& path) { return path_json(path).dump(2) + '\n'; }

std::vector<Eigen::Vector3d> polyline_from_json(const std::string& text) {
    const json j = parse(text, "path");
    const json& path = j.contains("path") ? j["path"] : j;
    if (!path.is_object() || !path.contains("p") || !path["p"].is_array()) fail("path: missing \"p\" array");
    std::vector<Eigen::Vector3d> pts;
    for (std::size_t i = 0; i < path["p"].size(); ++i) pts.push_back(vec3(path["p"][i], "path.p"));
    return pts;
}

// ---------------------------------------------------------------------------

std::string plan_result_to_json(const PlanResult& r) {
    const Decision& d = r.decision;
    json u = json::array();
    for (Eigen::Index i = 0; i < d.u_star.cols(); ++i) u.push_back(vec_json(d.u_star.col(i)));
    json decision = {{"u_star", u},
                     {"length", vec_json(d.length)},
                     {"beta", vec_json(d.beta)},
                     {"extended_length", vec_json(d.extended_lengths())},
                     {"alpha", vec_json(d.alpha)},
                     {"rho_inner", vec_json(d.rho_inner)},
                     {"rho_outer", vec_json(d.rho_outer)},
                     {"p0", vec_json(d.p0)},
                     {"q0", vec_json(d.q0.coeffs())}};
    int outer = 0, inner = 0;
    json log = json::array();
    for (const LambdaLogEntry& e : r.lambda_log) {
        outer += e.outer_iterations;
        inner += e.inner_iterations;
        log.push_back({{"lambda", e.lambda},
                       {"status", optim::to_string(e.status)},
                       {"outer_iterations", e.outer_iterations},
                       {"inner_iterations", e.inner_iterations},
                       {"objective", e.objective},
                       {"infeasibility", e.infeasibility}});
    }
    json j = {{"status", to_string(r.status)},
              {"stage", r.stage},
              {"lambda_reached", r.lambda_reached},
              {"objective", r.objective},
              {"hemisphere", r.hemisphere},
              {"outer_iterations", outer},
              {"inner_iterations", inner},
              {"decision", decision},
              {"lambda_log", log},
              {"path", path_json(r.path)}};
    return j.dump(2) + '\n';
}

std::string lambda_log_csv(const std::vector<LambdaLogEntry>& log) {
    std::string out = "lambda,status,outer_iterations,inner_iterations,objective,infeasibility\n";
    for (const LambdaLogEntry& e : log) {
        out += format_number(e.lambda) + ',' + optim::to_string(e.status) + ',' + std::to_string(e.outer_iterations) +
               ',' + std::to_string(e.inner_iterations) + ',' + format_number(e.objective) + ',' +
               format_number(e.infeasibility) + '\n';
    }
    return out;
}

std::string export_obj(const Geometry& g, const std::vector<Eigen::Vector3d>& polyline, int rings, int sectors) {
    if (rings < 2 || sectors < 3) throw ValidationError("export_obj: need rings >= 2 and sectors >= 3");
    std::string out;
    std::size_t base = 1;  // OBJ indices are 1-based and global
    auto mesh = [&](const std::string& name, const Ellipsoid& e) {
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(e.shape());
        const Eigen::Matrix3d inv_sqrt =
            es.eigenvectors() * es.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
        out += "o " + name + '\n';
        // Poles once each, then (rings - 1) latitude circles.
        out += obj_vertex(e.center() + inv_sqrt * Eigen::Vector3d::UnitZ());
        for (int r = 1; r < rings; ++r) {
            const double theta = std::numbers::pi * r / rings;
            for (int s = 0; s < sectors; ++s) {
                const double phi = 2.0 * std::numbers::pi * s / sectors;
                const Eigen::Vector3d u(std::sin(theta) * std::cos(phi), std::sin(theta) * std::sin(phi), std::cos(theta));
                out += obj_vertex(e.center() + inv_sqrt * u);
            }
        }
        out += obj_vertex(e.center() - inv_sqrt * Eigen::Vector3d::UnitZ());
        const std::size_t north = base, south = base + 1 + static_cast<std::size_t>((rings - 1) * sectors);
        auto ring = [&](int r, int s) { return base + 1 + static_cast<std::size_t>((r - 1) * sectors + (s % sectors)); };
        for (int s = 0; s < sectors; ++s) {
            out += "f " + std::to_string(north) + ' ' + std::to_string(ring(1, s)) + ' ' + std::to_string(ring(1, s + 1)) + '\n';
        }
        for (int r = 1; r + 1 < rings; ++r) {
            for (int s = 0; s < sectors; ++s) {
                out += "f " + std::to_string(ring(r, s)) + ' ' + std::to_string(ring(r + 1, s)) + ' ' +
                       std::to_string(ring(r + 1, s + 1)) + ' ' + std::to_string(ring(r, s + 1)) + '\n';
            }
        }
        for (int s = 0; s < sectors; ++s) {
            out += "f " + std::to_string(ring(rings - 1, s)) + ' ' + std::to_string(south) + ' ' +
                   std::to_string(ring(rings - 1, s + 1)) + '\n';
        }
        base = south + 1;
    };
    mesh("skull", g.skull);
    mesh("target", g.target);
    for (std::size_t j = 0; j < g.obstacles.size(); ++j) mesh("obstacle_" + std::to_string(j), g.obstacles[j]);
    if (polyline.size() >= 2) {
        out += "o path\n";
        for (const Eigen::Vector3d& p : polyline) out += obj_vertex(p);
        out += 'l';
        for (std::size_t i = 0; i < polyline.size(); ++i) out += ' ' + std::to_string(base + i);
        out += '\n';
    }
    return out;
}

// ---------------------------------------------------------------------------

void PipelineConfig::validate() const {
    if (!(c_th >= 1.0)) throw ValidationError("config: c_th must be >= 1");
    if (!(delta > 0.0 && delta <= 1.0)) throw ValidationError("config: delta must lie in (0, 1]");
    if (n_tubes < 1) throw ValidationError("config: n_tubes must be >= 1");
    if (nodes_per_segment < 2) throw ValidationError("config: nodes_per_segment must be >= 2");
    if (unit_scale && !(*unit_scale > 0.0)) throw ValidationError("config: unit_scale must be positive");
    if (threads < 1) throw ValidationError("config: threads must be >= 1");
    if (!(bounds.length_min > 0.0 && bounds.length_min <= bounds.length_max)) {
        throw ValidationError("config: need 0 < length_min <= length_max");
    }
    if (!(bounds.rho_min > 0.0 && bounds.rho_min < bounds.rho_max)) {
        throw ValidationError("config: need 0 < rho_min < rho_max");
    }
    if (!(bounds.wall_min >= 0.0) || !(bounds.u_star_max.minCoeff() >= 0.0)) {
        throw ValidationError("config: wall_min and u_star_max must be non-negative");
    }
    if (!(solver.feasibility_tol > 0.0 && solver.stationarity_tol > 0.0) || solver.max_iter < 0) {
        throw ValidationError("config: solver tolerances must be positive and max_iter non-negative");
    }
}

PipelineConfig config_from_json(const std::string& text, PipelineConfig c) {
    const json j = parse(text, "config");
    if (!j.is_object()) fail("config: expected an object");
    static const char* const known[] = {"input",  "unit_scale",      "output_dir", "c_th",    "delta",
                                        "n_tubes", "nodes_per_segment", "fixed_obstacles", "bounds", "solver",
                                        "seed",   "threads"};
    for (const auto& [key, value] : j.items()) {
        if (std::find(std::begin(known), std::end(known), key) == std::end(known)) fail("config: unknown key \"" + key + "\"");
    }
    try {
        if (j.contains("input")) c.input = j["input"].get<std::string>();
        if (j.contains("unit_scale")) c.unit_scale = j["unit_scale"].get<double>();
        if (j.contains("output_dir")) c.output_dir = j["output_dir"].get<std::string>();
        if (j.contains("c_th")) c.c_th = j["c_th"].get<double>();
        if (j.contains("delta")) c.delta = j["delta"].get<double>();
        if (j.contains("n_tubes")) c.n_tubes = j["n_tubes"].get<int>();
        if (j.contains("nodes_per_segment")) c.nodes_per_segment = j["nodes_per_segment"].get<int>();
        if (j.contains("fixed_obstacles")) {
            c.fixed_obstacles = j["fixed_obstacles"].get<std::vector<std::size_t>>();
            c.fixed_obstacles_set = true;
        }
        if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
        if (j.contains("threads")) c.threads = j["threads"].get<int>();
        if (j.contains("bounds")) {
            const json& b = j["bounds"];
            if (b.contains("length_min")) c.bounds.length_min = b["length_min"].get<double>();
            if (b.contains("length_max")) c.bounds.length_max = b["length_max"].get<double>();
            if (b.contains("rho_min")) c.bounds.rho_min = b["rho_min"].get<double>();
            if (b.contains("rho_max")) c.bounds.rho_max = b["rho_max"].get<double>();
            if (b.contains("wall_min")) c.bounds.wall_min = b["wall_min"].get<double>();
            if (b.contains("u_star_max")) c.bounds.u_star_max = vec3(b["u_star_max"], "bounds.u_star_max");
        }
        if (j.contains("solver")) {
            const json& s = j["solver"];
            if (s.contains("feasibility_tol")) c.solver.feasibility_tol = s["feasibility_tol"].get<double>();
            if (s.contains("stationarity_tol")) c.solver.stationarity_tol = s["stationarity_tol"].get<double>();
            if (s.contains("max_iter")) c.solver.max_iter = s["max_iter"].get<int>();
            if (s.contains("max_outer")) c.solver.max_outer = s["max_outer"].get<int>();
        }
    } catch (const json::exception& e) {
        fail(std::string("config: wrong value type (") + e.what() + ")");
    }
    return c;
}

}  // namespace ctr::io
