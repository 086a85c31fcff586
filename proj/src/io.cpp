#include "koopnav/io.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "koopnav/errors.hpp"

namespace koopnav::io {

namespace {

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// JSON has no infinities: non-finite doubles travel as strings.
json num(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return v;
}

double get_num(const json& j) {
    if (j.is_number()) return j.get<double>();
    if (j.is_string()) {
        const auto s = j.get<std::string>();
        if (s == "inf") return std::numeric_limits<double>::infinity();
        if (s == "-inf") return -std::numeric_limits<double>::infinity();
        if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    }
    throw ConfigError("expected a number, got " + j.dump());
}

json vec_json(const Eigen::VectorXd& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(num(v(i)));
    return a;
}

Eigen::VectorXd vec_from(const json& j) {
    if (!j.is_array()) throw ConfigError("expected an array");
    Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = get_num(j[i]);
    return v;
}

json mat_json(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) rows.push_back(vec_json(m.row(r).transpose()));
    return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", rows}};
}

Eigen::MatrixXd mat_from(const json& j) {
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    const auto& data = j.at("data");
    if (static_cast<Eigen::Index>(data.size()) != rows) throw ConfigError("matrix row count mismatch");
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const Eigen::VectorXd row = vec_from(data[static_cast<std::size_t>(r)]);
        if (row.size() != cols) throw ConfigError("matrix column count mismatch");
        m.row(r) = row.transpose();
    }
    return m;
}

json vec2_json(const Vec2& v) { return json::array({v.x(), v.y()}); }

Vec2 vec2_from(const json& j) {
    if (!j.is_array() || j.size() != 2) throw ConfigError("expected [x, y], got " + j.dump());
    return {get_num(j[0]), get_num(j[1])};
}

template <class T>
T value_or(const json& j, const char* key, T fallback) {
    return j.contains(key) ? j.at(key).get<T>() : fallback;
}

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, sep)) out.push_back(cell);
    if (!line.empty() && line.back() == sep) out.emplace_back();
    return out;
}

double parse_double(const std::string& s, std::size_t line) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw IoError("line " + std::to_string(line) + ": not a number: '" + s + "'");
    }
}

long parse_long(const std::string& s, std::size_t line) {
    try {
        std::size_t used = 0;
        const long v = std::stol(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw IoError("line " + std::to_string(line) + ": not an integer: '" + s + "'");
    }
}

/// Data rows of a CSV file (comments and the header skipped), each checked for width.
std::vector<std::pair<std::size_t, std::vector<std::string>>> csv_rows(const std::string& text,
                                                                       std::size_t width) {
    std::vector<std::pair<std::size_t, std::vector<std::string>>> rows;
    std::istringstream in(text);
    std::string line;
    std::size_t number = 0;
    bool header = true;
    while (std::getline(in, line)) {
        ++number;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line.front() == '#') continue;
        if (header) {
            header = false;
            continue;
        }
        auto cells = split(line, ',');
        if (cells.size() != width) {
            throw IoError("line " + std::to_string(number) + ": expected " + std::to_string(width) +
                          " columns, got " + std::to_string(cells.size()));
        }
        rows.emplace_back(number, std::move(cells));
    }
    return rows;
}

std::string join(const std::vector<std::string>& cells) {
    std::string out;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) out += ',';
        out += cells[i];
    }
    return out;
}

std::string sanitize(const std::string& label) {
    std::string out;
    for (char c : label) {
        if (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '.') {
            out += c;
        } else if (c == '%') {
            out += "pct";
        } else {
            out += '_';
        }
    }
    return out;
}

std::string alpha_text(const std::optional<double>& alpha) { return alpha ? fmt(*alpha) : "none"; }

json motion_json(const ObstacleMotion& motion) {
    return std::visit(
        [](const auto& m) -> json {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, StaticMotion>) {
                return {{"type", "static"}, {"center", vec2_json(m.center)}};
            } else if constexpr (std::is_same_v<T, LinearMotion>) {
                return {{"type", "linear"}, {"start", vec2_json(m.start)}, {"velocity", vec2_json(m.velocity)}};
            } else {
                return {{"type", "sinusoidal"},
                        {"center", vec2_json(m.center)},
                        {"amplitude", vec2_json(m.amplitude)},
                        {"period", m.period},
                        {"phase", m.phase}};
            }
        },
        motion);
}

ObstacleMotion motion_from(const json& j) {
    const auto type = value_or<std::string>(j, "type", "static");
    if (type == "static") return StaticMotion{vec2_from(j.at("center"))};
    if (type == "linear") return LinearMotion{vec2_from(j.at("start")), vec2_from(j.at("velocity"))};
    if (type == "sinusoidal") {
        SinusoidalMotion m{vec2_from(j.at("center")), vec2_from(j.at("amplitude")),
                           get_num(j.at("period")), value_or<double>(j, "phase", 0.0)};
        if (!(m.period > 0.0)) throw ConfigError("sinusoidal period must be positive");
        return m;
    }
    throw ConfigError("unknown obstacle motion '" + type + "'");
}

// "id:x:y:r" entries separated by ';'.
std::string obstacles_cell(const std::vector<ObstacleSnapshot>& obstacles) {
    std::string out;
    for (const auto& o : obstacles) {
        if (!out.empty()) out += ';';
        out += std::to_string(o.id) + ":" + fmt(o.center.x()) + ":" + fmt(o.center.y()) + ":" + fmt(o.radius);
    }
    return out;
}

std::vector<ObstacleSnapshot> parse_obstacles_cell(const std::string& cell, std::size_t line) {
    std::vector<ObstacleSnapshot> out;
    if (cell.empty()) return out;
    for (const auto& entry : split(cell, ';')) {
        const auto f = split(entry, ':');
        if (f.size() != 4) throw IoError("line " + std::to_string(line) + ": malformed obstacle entry '" + entry + "'");
        out.push_back({static_cast<int>(parse_long(f[0], line)), Vec2(parse_double(f[1], line), parse_double(f[2], line)),
                       parse_double(f[3], line)});
    }
    return out;
}

}  // namespace

const std::vector<std::string>& trajectory_columns() {
    static const std::vector<std::string> cols{
        "k",          "x",          "y",          "theta",          "v",           "omega",
        "ref_x",      "ref_y",      "ref_theta",  "pred_x",         "pred_y",      "pred_theta",
        "clearance",  "next_clearance", "slack_shared", "slack_max", "status",     "iterations",
        "fallback",   "rg_pass_through", "target_index", "hs_obstacle", "hs_a",    "hs_b",
        "hs_c",       "obstacles"};
    return cols;
}

std::string fnv1a_hex(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// ---- model -------------------------------------------------------------

json model_to_json(const KoopmanModel& model) {
    json n = json::array();
    for (const auto& m : model.N) n.push_back(mat_json(m));
    return {{"format_version", kModelFormatVersion},
            {"dictionary", model.dictionary.name()},
            {"lifted_dim", model.lifted_dim()},
            {"input_dim", model.input_dim()},
            {"A", mat_json(model.A)},
            {"B", mat_json(model.B)},
            {"N", n},
            {"diagnostics",
             {{"residual_norm", num(model.diagnostics.residual_norm)},
              {"condition_number", num(model.diagnostics.condition_number)},
              {"samples", model.diagnostics.samples},
              {"ridge", model.diagnostics.ridge}}}};
}

KoopmanModel model_from_json(const json& doc) {
    try {
        const int version = doc.at("format_version").get<int>();
        if (version != kModelFormatVersion) {
            throw ConfigError("unsupported model format version " + std::to_string(version));
        }
        KoopmanModel m{Dictionary::from_name(doc.at("dictionary").get<std::string>()),
                       mat_from(doc.at("A")), mat_from(doc.at("B")), {}, {}};
        for (const auto& n : doc.at("N")) m.N.push_back(mat_from(n));
        const int p = m.dictionary.dim();
        if (m.A.rows() != p || m.A.cols() != p || m.B.rows() != p) {
            throw ConfigError("model matrices do not match dictionary '" + m.dictionary.name() + "'");
        }
        for (const auto& n : m.N) {
            if (n.rows() != p || n.cols() != p) throw ConfigError("bilinear matrix has wrong shape");
        }
        if (!m.N.empty() && static_cast<int>(m.N.size()) != m.input_dim()) {
            throw ConfigError("bilinear term count does not match input dimension");
        }
        if (doc.contains("diagnostics")) {
            const auto& d = doc.at("diagnostics");
            m.diagnostics.residual_norm = get_num(d.at("residual_norm"));
            m.diagnostics.condition_number = get_num(d.at("condition_number"));
            m.diagnostics.samples = d.at("samples").get<int>();
            m.diagnostics.ridge = get_num(d.at("ridge"));
        }
        return m;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed model document: ") + e.what());
    }
}

// ---- calibration -------------------------------------------------------

json calibration_to_json(const CalibrationResult& r) {
    json doc{{"alpha", r.alpha},
             {"quantile", r.quantile.is_infinite() ? json("inf") : json(r.quantile.value())},
             {"lipschitz", r.lipschitz},
             {"epsilon", r.epsilon},
             {"delta", r.delta ? json(*r.delta) : json(nullptr)},
             {"n", r.n},
             {"sorted_scores", r.sorted_scores},
             {"step_margins", r.step_margins}};
    return doc;
}

CalibrationResult calibration_from_json(const json& doc) {
    try {
        CalibrationResult r;
        r.alpha = get_num(doc.at("alpha"));
        const double q = get_num(doc.at("quantile"));
        r.quantile = std::isinf(q) ? Quantile::infinite() : Quantile::finite(q);
        r.lipschitz = get_num(doc.at("lipschitz"));
        r.epsilon = get_num(doc.at("epsilon"));
        if (!doc.at("delta").is_null()) r.delta = get_num(doc.at("delta"));
        r.n = doc.at("n").get<std::size_t>();
        r.sorted_scores = doc.at("sorted_scores").get<std::vector<double>>();
        r.step_margins = value_or<std::vector<double>>(doc, "step_margins", {});
        return r;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed calibration document: ") + e.what());
    }
}

// ---- scenario ----------------------------------------------------------

json scenario_to_json(const Scenario& s) {
    json obstacles = json::array();
    for (const auto& o : s.obstacles) {
        obstacles.push_back({{"id", o.id}, {"radius", o.radius}, {"motion", motion_json(o.motion)}});
    }
    json targets = json::array();
    for (const auto& t : s.targets) targets.push_back(vec2_json(t));
    return {{"name", s.name},
            {"obstacles", obstacles},
            {"targets", targets},
            {"goal_tolerance", s.goal_tolerance},
            {"start", json::array({s.start.x, s.start.y, s.start.theta})},
            {"alpha", s.alpha ? json(*s.alpha) : json(nullptr)},
            {"dt", s.dt},
            {"horizon", s.horizon},
            {"max_steps", s.max_steps},
            {"seed", s.seed},
            {"disturbance", {{"v", s.disturbance.v_amplitude}, {"omega", s.disturbance.omega_amplitude}}},
            {"predict_obstacles", s.predict_obstacles}};
}

Scenario scenario_from_json(const json& doc) {
    try {
        Scenario s;
        s.name = value_or<std::string>(doc, "name", s.name);
        if (doc.contains("obstacles")) {
            int next_id = 0;
            for (const auto& o : doc.at("obstacles")) {
                ObstacleSpec spec;
                spec.id = value_or<int>(o, "id", next_id);
                next_id = spec.id + 1;
                spec.radius = get_num(o.at("radius"));
                spec.motion = motion_from(o.at("motion"));
                s.obstacles.push_back(spec);
            }
        }
        for (const auto& t : doc.at("targets")) s.targets.push_back(vec2_from(t));
        s.goal_tolerance = value_or<double>(doc, "goal_tolerance", s.goal_tolerance);
        if (doc.contains("start")) {
            const auto& st = doc.at("start");
            if (!st.is_array() || st.size() != 3) throw ConfigError("start must be [x, y, theta]");
            s.start = State{get_num(st[0]), get_num(st[1]), get_num(st[2])};
        }
        if (doc.contains("alpha")) {
            if (doc.at("alpha").is_null()) {
                s.alpha.reset();
            } else {
                s.alpha = get_num(doc.at("alpha"));
            }
        }
        s.dt = value_or<double>(doc, "dt", s.dt);
        s.horizon = value_or<int>(doc, "horizon", s.horizon);
        s.max_steps = value_or<int>(doc, "max_steps", s.max_steps);
        s.seed = value_or<std::uint64_t>(doc, "seed", s.seed);
        if (doc.contains("disturbance")) {
            const auto& d = doc.at("disturbance");
            s.disturbance.v_amplitude = value_or<double>(d, "v", 0.0);
            s.disturbance.omega_amplitude = value_or<double>(d, "omega", 0.0);
        }
        s.predict_obstacles = value_or<bool>(doc, "predict_obstacles", s.predict_obstacles);
        s.validate();
        return s;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed scenario: ") + e.what());
    }
}

// ---- QP ----------------------------------------------------------------

json qp_to_json(const QpProblem& p) {
    return {{"P", mat_json(p.P)},       {"q", vec_json(p.q)},       {"A_eq", mat_json(p.A_eq)},
            {"b_eq", vec_json(p.b_eq)}, {"A_in", mat_json(p.A_in)}, {"l_in", vec_json(p.l_in)},
            {"u_in", vec_json(p.u_in)}, {"lb", vec_json(p.lb)},     {"ub", vec_json(p.ub)}};
}

QpProblem qp_from_json(const json& doc) {
    try {
        QpProblem p;
        p.P = mat_from(doc.at("P"));
        p.q = vec_from(doc.at("q"));
        p.A_eq = mat_from(doc.at("A_eq"));
        p.b_eq = vec_from(doc.at("b_eq"));
        p.A_in = mat_from(doc.at("A_in"));
        p.l_in = vec_from(doc.at("l_in"));
        p.u_in = vec_from(doc.at("u_in"));
        p.lb = vec_from(doc.at("lb"));
        p.ub = vec_from(doc.at("ub"));
        return p;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed QP document: ") + e.what());
    }
}

// ---- reports -----------------------------------------------------------

json aggregates_to_json(const RunAggregates& a) {
    return {{"completed", a.completed},
            {"steps", a.steps},
            {"time_to_completion", a.time_to_completion},
            {"collision_steps", a.collision_steps},
            {"min_clearance", num(a.min_clearance)},
            {"mean_solve_ms", a.mean_solve_ms},
            {"median_solve_ms", a.median_solve_ms},
            {"p95_solve_ms", a.p95_solve_ms},
            {"slack_activations", a.slack_activations},
            {"fallbacks", a.fallbacks},
            {"path_length", a.path_length},
            {"heading_change", a.heading_change}};
}

namespace {

std::string trajectory_file_name(const RunSummary& r) {
    return "trajectory_" + sanitize(r.log.scenario) + "_" + sanitize(r.arm) + "_" + std::to_string(r.seed) +
           ".csv";
}

}  // namespace

json report_to_json(const ExperimentReport& report) {
    json runs = json::array();
    std::vector<std::string> arm_order;
    std::map<std::string, std::vector<const RunSummary*>> by_arm;
    for (const auto& r : report.runs) {
        runs.push_back({{"arm", r.arm},
                        {"seed", r.seed},
                        {"scenario", r.log.scenario},
                        {"alpha", r.log.alpha ? json(*r.log.alpha) : json(nullptr)},
                        {"delta", r.log.delta},
                        {"config_hash", r.log.config_hash},
                        {"trajectory", trajectory_file_name(r)},
                        {"aggregates", aggregates_to_json(r.aggregates)}});
        if (!by_arm.count(r.arm)) arm_order.push_back(r.arm);
        by_arm[r.arm].push_back(&r);
    }
    json arms = json::array();
    for (const auto& label : arm_order) {
        const auto& rs = by_arm[label];
        int completed = 0, collided = 0;
        double ttc = 0.0, min_clear = std::numeric_limits<double>::infinity(), slack = 0.0;
        std::vector<double> medians;
        for (const auto* r : rs) {
            completed += r->aggregates.completed ? 1 : 0;
            collided += r->aggregates.collision_steps > 0 ? 1 : 0;
            ttc += r->aggregates.time_to_completion;
            min_clear = std::min(min_clear, r->aggregates.min_clearance);
            slack += r->aggregates.slack_activations;
        }
        const double n = static_cast<double>(rs.size());
        arms.push_back({{"arm", label},
                        {"runs", rs.size()},
                        {"completion_rate", completed / n},
                        {"collision_runs", collided},
                        {"mean_time_to_completion", ttc / n},
                        {"min_clearance", num(min_clear)},
                        {"mean_slack_activations", slack / n}});
    }
    return {{"experiment", report.name},
            {"config_hash", report.config_hash},
            {"max_steps", report.max_steps},
            {"trajectory_schema", kTrajectorySchema},
            {"arms", arms},
            {"runs", runs}};
}

// ---- files -------------------------------------------------------------

void write_text(const fs::path& path, const std::string& content) {
    if (path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
        if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << content;
    if (!out) throw IoError("failed writing " + path.string());
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_json(const fs::path& path, const json& doc) { write_text(path, doc.dump(2) + "\n"); }

json read_json(const fs::path& path) {
    try {
        return json::parse(read_text(path));
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

void write_transitions_csv(const fs::path& path, const std::vector<Transition>& transitions,
                           const std::string& comment) {
    std::string out = comment.empty() ? std::string() : "# " + comment + "\n";
    out += "x,y,theta,v,omega,x_next,y_next,theta_next\n";
    for (const auto& t : transitions) {
        out += join({fmt(t.state.x), fmt(t.state.y), fmt(t.state.theta), fmt(t.control.v), fmt(t.control.omega),
                     fmt(t.next_state.x), fmt(t.next_state.y), fmt(t.next_state.theta)});
        out += '\n';
    }
    write_text(path, out);
}

std::vector<Transition> read_transitions_csv(const fs::path& path) {
    std::vector<Transition> out;
    for (const auto& [line, c] : csv_rows(read_text(path), 8)) {
        double v[8];
        for (int i = 0; i < 8; ++i) v[i] = parse_double(c[static_cast<std::size_t>(i)], line);
        out.push_back({State{v[0], v[1], v[2]}, Control{v[3], v[4]}, State{v[5], v[6], v[7]}});
    }
    return out;
}

void write_calibration_csv(const fs::path& path, const std::vector<CalibrationPair>& pairs) {
    std::string out = "pair_id,scenario,step,x,y,theta,pred_x,pred_y,pred_theta,score\n";
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto& p = pairs[i];
        out += join({std::to_string(i), std::to_string(p.provenance.scenario), std::to_string(p.provenance.step),
                     fmt(p.truth.x), fmt(p.truth.y), fmt(p.truth.theta), fmt(p.predicted.x), fmt(p.predicted.y),
                     fmt(p.predicted.theta), fmt(nonconformity_score(p))});
        out += '\n';
    }
    write_text(path, out);
}

std::vector<CalibrationPair> read_calibration_csv(const fs::path& path) {
    std::vector<CalibrationPair> out;
    for (const auto& [line, c] : csv_rows(read_text(path), 10)) {
        CalibrationPair p;
        p.provenance.scenario = static_cast<int>(parse_long(c[1], line));
        p.provenance.step = static_cast<int>(parse_long(c[2], line));
        p.truth = State{parse_double(c[3], line), parse_double(c[4], line), parse_double(c[5], line)};
        p.predicted = State{parse_double(c[6], line), parse_double(c[7], line), parse_double(c[8], line)};
        out.push_back(p);
    }
    return out;
}

// ---- trajectories ------------------------------------------------------

std::string trajectory_csv(const TrajectoryLog& log) {
    std::string out = std::string("# schema=") + kTrajectorySchema + " scenario=" + sanitize(log.scenario) +
                      " arm=" + sanitize(log.arm) + " alpha=" + alpha_text(log.alpha) + " delta=" + fmt(log.delta) +
                      " seed=" + std::to_string(log.seed) + " config_hash=" + log.config_hash +
                      " completed=" + (log.completed ? "1" : "0") + " final=" + fmt(log.final_state.x) + ";" +
                      fmt(log.final_state.y) + ";" + fmt(log.final_state.theta) + "\n";
    out += join(trajectory_columns()) + "\n";
    for (const auto& r : log.records) {
        out += join({std::to_string(r.k), fmt(r.state.x), fmt(r.state.y), fmt(r.state.theta), fmt(r.control.v),
                     fmt(r.control.omega), fmt(r.reference.x), fmt(r.reference.y), fmt(r.reference.theta),
                     fmt(r.predicted_next.x), fmt(r.predicted_next.y), fmt(r.predicted_next.theta),
                     fmt(r.clearance), fmt(r.next_clearance), fmt(r.slack_shared), fmt(r.slack_max), r.status,
                     std::to_string(r.iterations), r.fallback ? "1" : "0", r.rg_pass_through ? "1" : "0",
                     std::to_string(r.target_index), std::to_string(r.hs_obstacle), fmt(r.hs_a), fmt(r.hs_b),
                     fmt(r.hs_c), obstacles_cell(r.obstacles)});
        out += '\n';
    }
    return out;
}

TrajectoryLog parse_trajectory_csv(const std::string& text) {
    TrajectoryLog log;
    const auto eol = text.find('\n');
    const std::string first = text.substr(0, eol);
    if (first.rfind("# ", 0) != 0) throw IoError("trajectory CSV lacks its metadata line");
    std::map<std::string, std::string> meta;
    for (const auto& token : split(first.substr(2), ' ')) {
        const auto eq = token.find('=');
        if (eq != std::string::npos) meta[token.substr(0, eq)] = token.substr(eq + 1);
    }
    if (meta["schema"] != kTrajectorySchema) {
        throw IoError("unsupported trajectory schema '" + meta["schema"] + "'");
    }
    log.scenario = meta["scenario"];
    log.arm = meta["arm"];
    if (meta["alpha"] != "none") log.alpha = parse_double(meta["alpha"], 1);
    log.delta = parse_double(meta["delta"], 1);
    log.seed = static_cast<std::uint64_t>(parse_long(meta["seed"], 1));
    log.config_hash = meta["config_hash"];
    log.completed = meta["completed"] == "1";
    const auto fin = split(meta["final"], ';');
    if (fin.size() != 3) throw IoError("malformed final state in metadata");
    log.final_state = State{parse_double(fin[0], 1), parse_double(fin[1], 1), parse_double(fin[2], 1)};

    const auto width = trajectory_columns().size();
    for (const auto& [line, c] : csv_rows(text, width)) {
        TrajectoryRecord r;
        auto d = [&, line = line](std::size_t i) { return parse_double(c[i], line); };
        r.k = parse_long(c[0], line);
        r.state = State{d(1), d(2), d(3)};
        r.control = Control{d(4), d(5)};
        r.reference = State{d(6), d(7), d(8)};
        r.predicted_next = State{d(9), d(10), d(11)};
        r.clearance = d(12);
        r.next_clearance = d(13);
        r.slack_shared = d(14);
        r.slack_max = d(15);
        r.status = c[16];
        r.iterations = static_cast<int>(parse_long(c[17], line));
        r.fallback = c[18] == "1";
        r.rg_pass_through = c[19] == "1";
        r.target_index = static_cast<int>(parse_long(c[20], line));
        r.hs_obstacle = static_cast<int>(parse_long(c[21], line));
        r.hs_a = d(22);
        r.hs_b = d(23);
        r.hs_c = d(24);
        r.obstacles = parse_obstacles_cell(c[25], line);
        log.records.push_back(r);
    }
    return log;
}

namespace {

fs::path timing_path(const fs::path& csv_path) {
    fs::path p = csv_path;
    p.replace_filename(csv_path.stem().string() + "_timing.csv");
    return p;
}

}  // namespace

void write_trajectory(const fs::path& csv_path, const TrajectoryLog& log) {
    write_text(csv_path, trajectory_csv(log));
    std::string timing = "k,solve_time_ms\n";
    for (const auto& r : log.records) timing += std::to_string(r.k) + "," + fmt(r.solve_time_ms) + "\n";
    write_text(timing_path(csv_path), timing);
}

TrajectoryLog read_trajectory(const fs::path& csv_path) {
    TrajectoryLog log = parse_trajectory_csv(read_text(csv_path));
    const fs::path tp = timing_path(csv_path);
    if (fs::exists(tp)) {
        const auto rows = csv_rows(read_text(tp), 2);
        if (rows.size() != log.records.size()) throw IoError("timing sidecar length mismatch: " + tp.string());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            log.records[i].solve_time_ms = parse_double(rows[i].second[1], rows[i].first);
        }
    }
    return log;
}

void emit_report(const ExperimentReport& report, const fs::path& directory) {
    for (const auto& r : report.runs) write_trajectory(directory / trajectory_file_name(r), r.log);
    write_json(directory / "report.json", report_to_json(report));
}

Scenario load_scenario(const fs::path& path) { return scenario_from_json(read_json(path)); }

void save_model(const fs::path& path, const KoopmanModel& model) { write_json(path, model_to_json(model)); }

KoopmanModel load_model(const fs::path& path) { return model_from_json(read_json(path)); }

}  // namespace koopnav::io
