#include "ctr/ingestion.hpp"

#include "lattice.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace ctr {

namespace {

enum class Label { skull, target, obstacle, hemisphere };

std::optional<Label> parse_label(std::string_view s) {
    if (s == "skull") return Label::skull;
    if (s == "target") return Label::target;
    if (s == "obstacle") return Label::obstacle;
    if (s == "hemisphere") return Label::hemisphere;
    return std::nullopt;
}

PointSet to_points(const std::vector<Eigen::Vector3d>& v) {
    PointSet m(3, static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) m.col(static_cast<Eigen::Index>(i)) = v[i];
    return m;
}

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n\"");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n\"");
    return std::string(s.substr(b, e - b + 1));
}

double parse_number(const std::string& field, std::size_t line) {
    try {
        std::size_t used = 0;
        const double v = std::stod(field, &used);
        if (used != field.size() || !std::isfinite(v)) throw std::invalid_argument(field);
        return v;
    } catch (const std::exception&) {
        throw ValidationError("line " + std::to_string(line) + ": invalid coordinate '" + field + "'");
    }
}

struct Buckets {
    std::vector<Eigen::Vector3d> skull, target, obstacle, hemisphere;

    void add(Label l, const Eigen::Vector3d& p) {
        switch (l) {
            case Label::skull: skull.push_back(p); break;
            case Label::target: target.push_back(p); break;
            case Label::obstacle: obstacle.push_back(p); break;
            case Label::hemisphere: hemisphere.push_back(p); break;
        }
    }
    std::size_t size() const { return skull.size() + target.size() + obstacle.size() + hemisphere.size(); }
};

LabeledPointCloud finish(const Buckets& b, double scale) {
    if (b.size() == 0) throw ValidationError("cloud: file contains no points");
    if (!(scale > 0.0)) throw ValidationError("cloud: unit scale must be positive");
    LabeledPointCloud cloud;
    cloud.unit_scale = scale;
    cloud.skull = remove_duplicates(scale * to_points(b.skull));
    cloud.target = remove_duplicates(scale * to_points(b.target));
    cloud.obstacle = remove_duplicates(scale * to_points(b.obstacle));
    cloud.hemisphere = remove_duplicates(scale * to_points(b.hemisphere));
    for (const PointSet* s : {&cloud.target, &cloud.obstacle, &cloud.skull}) {
        if (s->cols() >= 2) {
            cloud.delta_mri = compute_delta_mri(*s);
            break;
        }
    }
    return cloud;
}

LabeledPointCloud parse_json(const std::string& text, std::optional<double> unit_scale) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError(std::string("cloud: malformed JSON: ") + e.what());
    }
    double scale = 1.0;
    if (doc.contains("unit")) {
        const auto unit = doc.at("unit").get<std::string>();
        if (unit == "mm") {
            scale = 1e-3;
        } else if (unit != "m") {
            throw ValidationError("cloud: unknown unit '" + unit + "' (expected \"mm\" or \"m\")");
        }
    }
    if (unit_scale) scale = *unit_scale;
    if (!doc.contains("points") || !doc.at("points").is_array()) {
        throw ValidationError("cloud: JSON document needs a \"points\" array");
    }
    Buckets b;
    std::size_t index = 0;
    for (const auto& pt : doc.at("points")) {
        const auto label_text = pt.value("label", std::string{});
        const auto label = parse_label(label_text);
        if (!label) {
            throw ValidationError("point " + std::to_string(index) + ": unknown label '" + label_text + "'");
        }
        try {
            b.add(*label, {pt.at("x").get<double>(), pt.at("y").get<double>(), pt.at("z").get<double>()});
        } catch (const nlohmann::json::exception&) {
            throw ValidationError("point " + std::to_string(index) + ": needs numeric x, y, z");
        }
        ++index;
    }
    return finish(b, scale);
}

LabeledPointCloud parse_csv(const std::string& text, std::optional<double> unit_scale) {
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    bool header_seen = false;
    Buckets b;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        std::vector<std::string> fields;
        std::stringstream ls(line);
        for (std::string f; std::getline(ls, f, ',');) fields.push_back(trim(f));
        if (!header_seen) {
            header_seen = true;
            if (fields.size() == 4 && fields[0] == "x" && fields[1] == "y" && fields[2] == "z" && fields[3] == "label") {
                continue;
            }
            throw ValidationError("line " + std::to_string(line_no) + ": expected header 'x,y,z,label'");
        }
        if (fields.size() != 4) {
            throw ValidationError("line " + std::to_string(line_no) + ": expected 4 fields");
        }
        const auto label = parse_label(fields[3]);
        if (!label) {
            throw ValidationError("line " + std::to_string(line_no) + ": unknown label '" + fields[3] + "'");
        }
        b.add(*label, {parse_number(fields[0], line_no), parse_number(fields[1], line_no),
                       parse_number(fields[2], line_no)});
    }
    return finish(b, unit_scale.value_or(1.0));
}

}  // namespace

void LabeledPointCloud::require_plannable() const {
    const std::pair<const char*, const PointSet*> classes[] = {
        {"skull", &skull}, {"target", &target}, {"obstacle", &obstacle}, {"hemisphere", &hemisphere}};
    for (const auto& [name, set] : classes) {
        if (set->cols() == 0) throw ValidationError(std::string("cloud: class '") + name + "' is empty");
    }
    if (!(delta_mri > 0.0)) throw ValidationError("cloud: delta_mri must be positive");
}

LabeledPointCloud parse_cloud(const std::string& text, bool is_json, std::optional<double> unit_scale) {
    if (trim(text).empty()) throw ValidationError("cloud: input is empty");
    return is_json ? parse_json(text, unit_scale) : parse_csv(text, unit_scale);
}

LabeledPointCloud load_cloud(const std::filesystem::path& path, std::optional<double> unit_scale) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cloud: cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string text = ss.str();
    bool is_json = false;
    const auto ext = path.extension().string();
    if (ext == ".json") {
        is_json = true;
    } else if (ext != ".csv") {
        const auto first = text.find_first_not_of(" \t\r\n");
        is_json = first != std::string::npos && (text[first] == '{' || text[first] == '[');
    }
    return parse_cloud(text, is_json, unit_scale);
}

PointSet remove_duplicates(const PointSet& points, double tol) {
    using detail::CellKey;
    std::unordered_map<CellKey, std::vector<Eigen::Index>, detail::CellKeyHash> cells;
    std::vector<Eigen::Index> keep;
    keep.reserve(static_cast<std::size_t>(points.cols()));
    const Eigen::Vector3d origin = Eigen::Vector3d::Zero();
    for (Eigen::Index i = 0; i < points.cols(); ++i) {
        const Eigen::Vector3d p = points.col(i);
        const CellKey key = detail::floor_cell(p, origin, tol);
        bool duplicate = false;
        for (int di = -1; di <= 1 && !duplicate; ++di)
            for (int dj = -1; dj <= 1 && !duplicate; ++dj)
                for (int dk = -1; dk <= 1 && !duplicate; ++dk) {
                    auto it = cells.find(key.offset(di, dj, dk));
                    if (it == cells.end()) continue;
                    for (Eigen::Index j : it->second) {
                        if ((points.col(j) - p).cwiseAbs().maxCoeff() <= tol) {
                            duplicate = true;
                            break;
                        }
                    }
                }
        if (!duplicate) {
            cells[key].push_back(i);
            keep.push_back(i);
        }
    }
    PointSet out(3, static_cast<Eigen::Index>(keep.size()));
    for (std::size_t k = 0; k < keep.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = points.col(keep[k]);
    return out;
}

double compute_delta_mri(const PointSet& points) {
    const Eigen::Index n = points.cols();
    if (n < 2) throw ValidationError("compute_delta_mri: need at least two points");

    // Consecutive points in lexicographic order give a true pair distance, hence an upper bound.
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
        const auto pa = points.col(a), pb = points.col(b);
        return std::make_tuple(pa[0], pa[1], pa[2]) < std::make_tuple(pb[0], pb[1], pb[2]);
    });
    double bound = std::numeric_limits<double>::infinity();
    for (std::size_t k = 1; k < order.size(); ++k) {
        bound = std::min(bound, (points.col(order[k]) - points.col(order[k - 1])).norm());
    }
    if (bound == 0.0) return 0.0;

    // The closest pair lies in the same or adjacent cells of size `bound`.
    using detail::CellKey;
    const Eigen::Vector3d origin = points.rowwise().minCoeff();
    std::unordered_map<CellKey, std::vector<Eigen::Index>, detail::CellKeyHash> cells;
    for (Eigen::Index i = 0; i < n; ++i) cells[detail::floor_cell(points.col(i), origin, bound)].push_back(i);
    double best = bound;
    for (const auto& [key, members] : cells) {
        for (int di = -1; di <= 1; ++di)
            for (int dj = -1; dj <= 1; ++dj)
                for (int dk = -1; dk <= 1; ++dk) {
                    auto it = cells.find(key.offset(di, dj, dk));
                    if (it == cells.end()) continue;
                    for (Eigen::Index a : members)
                        for (Eigen::Index b : it->second) {
                            if (a < b) best = std::min(best, (points.col(a) - points.col(b)).norm());
                        }
                }
    }
    return best;
}

PointSet extract_boundary(const PointSet& points, double spacing) {
    if (!(spacing > 0.0)) throw ValidationError("extract_boundary: spacing must be positive");
    if (points.cols() == 0) return points;
    using detail::CellKey;
    const Eigen::Vector3d origin = points.rowwise().minCoeff();
    std::vector<CellKey> keys;
    keys.reserve(static_cast<std::size_t>(points.cols()));
    std::unordered_set<CellKey, detail::CellKeyHash> occupied;
    for (Eigen::Index i = 0; i < points.cols(); ++i) {
        const CellKey key = detail::round_cell(points.col(i), origin, spacing);
        const double off = (points.col(i) - detail::cell_point(key, origin, spacing)).cwiseAbs().maxCoeff();
        if (off > 0.1 * spacing) {
            throw ValidationError("extract_boundary: point " + std::to_string(i) + " is off the grid of spacing " +
                                  std::to_string(spacing));
        }
        keys.push_back(key);
        occupied.insert(key);
    }
    static constexpr int kNeighbours[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
    std::vector<Eigen::Index> boundary;
    for (Eigen::Index i = 0; i < points.cols(); ++i) {
        const CellKey& key = keys[static_cast<std::size_t>(i)];
        for (const auto& d : kNeighbours) {
            if (!occupied.contains(key.offset(d[0], d[1], d[2]))) {
                boundary.push_back(i);
                break;
            }
        }
    }
    PointSet out(3, static_cast<Eigen::Index>(boundary.size()));
    for (std::size_t k = 0; k < boundary.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = points.col(boundary[k]);
    return out;
}

}  // namespace ctr
