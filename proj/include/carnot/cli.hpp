#pragma once

// Experiment configurations (JSON, version 1), the classify / portrait /
// casimir / spectrum commands, and their report and CSV outputs.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "json.hpp"

#include "carnot/casimir.hpp"
#include "carnot/coadjoint.hpp"
#include "carnot/convex.hpp"
#include "carnot/errors.hpp"
#include "carnot/flow.hpp"
#include "carnot/parallel.hpp"

namespace carnot::cli {

using json = nlohmann::json;

enum ExitCode : int { exit_ok = 0, exit_usage = 1, exit_integration = 2, exit_config = 3 };

struct Outputs {
    std::string report_json;
    std::string trajectory_csv;
    std::string portrait_csv;
};

struct GridSpec {
    int count = 9;           // count x count initial conditions
    double radius = 1.0;     // half-width in leaf coordinates
    int samples = 200;       // samples per periodic trajectory
    int d0_resolution = 101;
    double d0_radius = 2.0;
};

struct SpectrumSpec {
    double tol = 1e-9;
    int max_multiplier = 64;
    double rate = 1.0;
    double t_min = 1.0;
    int torus_bins = 32;
    double torus_dt = 0.1;
};

struct ExperimentConfig {
    int k = 0;
    json body_spec;
    std::optional<ConvexBody> body;
    json initial_spec;
    CovectorPoint initial;
    std::optional<double> horizon;
    bool normalize = true;
    FlowTolerances tolerances;
    int samples = 1001;
    Outputs outputs;
    GridSpec grid;
    SpectrumSpec spectrum;
    std::uint64_t seed = 0;
};

// ---------------------------------------------------------------------------
// Parsing

namespace detail {

inline void allow_keys(const json& obj, const std::string& where, std::initializer_list<const char*> keys)
{
    if (!obj.is_object())
        throw ConfigError(where + ": expected an object");
    for (const auto& [key, value] : obj.items()) {
        bool known = false;
        for (const char* k : keys)
            known = known || key == k;
        if (!known)
            throw ConfigError(where + ": unknown key \"" + key + "\"");
    }
}

inline const json& require(const json& obj, const char* key, const std::string& where)
{
    if (!obj.contains(key))
        throw ConfigError(where + ": missing \"" + key + "\"");
    return obj.at(key);
}

inline double number(const json& v, const std::string& where)
{
    if (!v.is_number())
        throw ConfigError(where + ": expected a number");
    const double x = v.get<double>();
    if (!std::isfinite(x))
        throw ConfigError(where + ": must be finite");
    return x;
}

inline double positive(const json& v, const std::string& where)
{
    const double x = number(v, where);
    if (!(x > 0.0))
        throw ConfigError(where + ": must be positive");
    return x;
}

inline int integer(const json& v, const std::string& where, int lo, int hi)
{
    if (!v.is_number_integer())
        throw ConfigError(where + ": expected an integer");
    const auto x = v.get<long long>();
    if (x < lo || x > hi)
        throw ConfigError(where + ": must lie in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    return static_cast<int>(x);
}

// Numbers, or strings holding exact rationals such as "3/4".
inline double scalar(const json& v, const std::string& where)
{
    if (v.is_string()) {
        try {
            return parse_rational(v.get<std::string>()).convert_to<double>();
        }
        catch (const InputError& e) {
            throw ConfigError(where + ": " + e.what());
        }
    }
    return number(v, where);
}

inline Rational exact_scalar(const json& v, const std::string& where)
{
    if (v.is_string()) {
        try {
            return parse_rational(v.get<std::string>());
        }
        catch (const InputError& e) {
            throw ConfigError(where + ": " + e.what());
        }
    }
    if (v.is_number_integer())
        return Rational(v.get<long long>());
    return exact_rational(number(v, where));
}

inline Eigen::VectorXd vector(const json& v, Eigen::Index n, const std::string& where)
{
    if (!v.is_array() || static_cast<Eigen::Index>(v.size()) != n)
        throw ConfigError(where + ": expected an array of " + std::to_string(n) + " numbers");
    Eigen::VectorXd out(n);
    for (Eigen::Index i = 0; i < n; ++i)
        out[i] = scalar(v[static_cast<std::size_t>(i)], where + "[" + std::to_string(i) + "]");
    return out;
}

inline std::vector<Rational> exact_vector(const json& v, std::size_t n, const std::string& where)
{
    if (!v.is_array() || v.size() != n)
        throw ConfigError(where + ": expected an array of " + std::to_string(n) + " values");
    std::vector<Rational> out;
    for (std::size_t i = 0; i < n; ++i)
        out.push_back(exact_scalar(v[i], where + "[" + std::to_string(i) + "]"));
    return out;
}

inline Eigen::MatrixXd matrix(const json& v, Eigen::Index rows, Eigen::Index cols, const std::string& where)
{
    if (!v.is_array() || static_cast<Eigen::Index>(v.size()) != rows)
        throw ConfigError(where + ": expected " + std::to_string(rows) + " rows");
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        m.row(r) = vector(v[static_cast<std::size_t>(r)], cols, where + "[" + std::to_string(r) + "]");
    return m;
}

inline ConvexBody parse_body(const json& spec, int k, std::uint64_t seed)
{
    const std::string where = "body";
    if (!spec.is_object())
        throw ConfigError("body: expected an object");
    const json& type = require(spec, "type", where);
    if (!type.is_string())
        throw ConfigError("body.type: expected a string");
    const std::string t = type.get<std::string>();
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(k);
    if (t == "unit_ball") {
        allow_keys(spec, where, {"type"});
        return ConvexBody::unit_ball(k);
    }
    if (t == "ellipsoid") {
        allow_keys(spec, where, {"type", "shape", "center"});
        const Eigen::MatrixXd a = matrix(require(spec, "shape", where), k, k, "body.shape");
        const Eigen::VectorXd c = spec.contains("center") ? vector(spec["center"], k, "body.center") : zero;
        return ConvexBody::ellipsoid(a, c, seed);
    }
    if (t == "lq_ball") {
        allow_keys(spec, where, {"type", "q", "scale", "center"});
        const double q = number(require(spec, "q", where), "body.q");
        const Eigen::VectorXd s =
            spec.contains("scale") ? vector(spec["scale"], k, "body.scale") : Eigen::VectorXd::Ones(k).eval();
        const Eigen::VectorXd c = spec.contains("center") ? vector(spec["center"], k, "body.center") : zero;
        return ConvexBody::lq_ball(q, s, c, seed);
    }
    if (t == "ball_intersection") {
        allow_keys(spec, where, {"type", "balls"});
        const json& balls = require(spec, "balls", where);
        if (!balls.is_array() || balls.empty())
            throw ConfigError("body.balls: expected a non-empty array");
        std::vector<Ball> out;
        for (std::size_t i = 0; i < balls.size(); ++i) {
            const std::string w = "body.balls[" + std::to_string(i) + "]";
            allow_keys(balls[i], w, {"center", "radius"});
            out.push_back({vector(require(balls[i], "center", w), k, w + ".center"),
                           number(require(balls[i], "radius", w), w + ".radius")});
        }
        return ConvexBody::ball_intersection(out, seed);
    }
    if (t == "polytope") {
        allow_keys(spec, where, {"type", "vertices"});
        const json& v = require(spec, "vertices", where);
        if (!v.is_array())
            throw ConfigError("body.vertices: expected an array");
        ConvexBody::polytope(matrix(v, static_cast<Eigen::Index>(v.size()), k, "body.vertices"));
    }
    throw ConfigError("body.type: unknown body type \"" + t + "\"");
}

inline CovectorPoint parse_initial(const json& spec, int k, double rank_tol)
{
    const AlgebraShape s(k);
    if (!spec.is_object())
        throw ConfigError("initial: expected an object");
    if (spec.contains("leaf")) {
        allow_keys(spec, "initial", {"leaf"});
        const json& l = spec["leaf"];
        allow_keys(l, "initial.leaf", {"h2", "base", "coords"});
        const CovectorPoint base{vector(require(l, "base", "initial.leaf"), k, "initial.leaf.base"),
                                 vector(require(l, "h2", "initial.leaf"), s.dim_second(), "initial.leaf.h2")};
        const Leaf lf = leaf(base, rank_tol);
        if (!l.contains("coords"))
            return base;
        return lf.point(vector(l["coords"], lf.dim(), "initial.leaf.coords"));
    }
    allow_keys(spec, "initial", {"h", "h2"});
    return {vector(require(spec, "h", "initial"), k, "initial.h"),
            vector(require(spec, "h2", "initial"), s.dim_second(), "initial.h2")};
}

}  // namespace detail

/// Validates a version-1 configuration. Throws ConfigError (or BodyError /
/// SizeError from the body and shape constructors) on any violation.
inline ExperimentConfig parse_config(const json& doc)
{
    using namespace detail;
    allow_keys(doc, "config", {"version", "k", "body", "initial", "horizon", "normalize", "tolerances", "samples",
                               "outputs", "grid", "spectrum", "seed"});
    if (integer(require(doc, "version", "config"), "version", 1, 1) != 1)
        throw ConfigError("version: only version 1 is supported");
    ExperimentConfig cfg;
    cfg.k = integer(require(doc, "k", "config"), "k", 1, kMaxGenerators);
    const AlgebraShape shape(cfg.k);
    if (doc.contains("seed")) {
        if (!doc["seed"].is_number_unsigned())
            throw ConfigError("seed: expected a non-negative integer");
        cfg.seed = doc["seed"].get<std::uint64_t>();
    }

    if (doc.contains("tolerances")) {
        const json& t = doc["tolerances"];
        allow_keys(t, "tolerances", {"step_tol", "fixed_point", "period", "closure", "rank", "max_period_time",
                                     "recurrence_horizon"});
        auto set = [&](const char* key, double& field) {
            if (t.contains(key))
                field = positive(t[key], std::string("tolerances.") + key);
        };
        set("step_tol", cfg.tolerances.step_tol);
        set("fixed_point", cfg.tolerances.fixed_point);
        set("period", cfg.tolerances.period);
        set("closure", cfg.tolerances.closure);
        set("rank", cfg.tolerances.rank);
        set("max_period_time", cfg.tolerances.max_period_time);
        set("recurrence_horizon", cfg.tolerances.recurrence_horizon);
        if (cfg.tolerances.rank >= 1.0)
            throw ConfigError("tolerances.rank: must be below 1");
    }

    cfg.body_spec = require(doc, "body", "config");
    cfg.body = parse_body(cfg.body_spec, cfg.k, cfg.seed);
    cfg.initial_spec = require(doc, "initial", "config");
    cfg.initial = parse_initial(cfg.initial_spec, cfg.k, cfg.tolerances.rank);

    if (doc.contains("horizon"))
        cfg.horizon = positive(doc["horizon"], "horizon");
    if (doc.contains("normalize")) {
        if (!doc["normalize"].is_boolean())
            throw ConfigError("normalize: expected true or false");
        cfg.normalize = doc["normalize"].get<bool>();
    }
    if (doc.contains("samples"))
        cfg.samples = integer(doc["samples"], "samples", 2, 10'000'000);

    if (doc.contains("outputs")) {
        const json& o = doc["outputs"];
        allow_keys(o, "outputs", {"report_json", "trajectory_csv", "portrait_csv"});
        auto set = [&](const char* key, std::string& field) {
            if (!o.contains(key))
                return;
            if (!o[key].is_string() || o[key].get<std::string>().empty())
                throw ConfigError(std::string("outputs.") + key + ": expected a non-empty file name");
            field = o[key].get<std::string>();
        };
        set("report_json", cfg.outputs.report_json);
        set("trajectory_csv", cfg.outputs.trajectory_csv);
        set("portrait_csv", cfg.outputs.portrait_csv);
    }

    if (doc.contains("grid")) {
        const json& g = doc["grid"];
        allow_keys(g, "grid", {"count", "radius", "samples", "d0_resolution", "d0_radius"});
        if (g.contains("count"))
            cfg.grid.count = integer(g["count"], "grid.count", 1, 1000);
        if (g.contains("radius"))
            cfg.grid.radius = positive(g["radius"], "grid.radius");
        if (g.contains("samples"))
            cfg.grid.samples = integer(g["samples"], "grid.samples", 2, 1'000'000);
        if (g.contains("d0_resolution"))
            cfg.grid.d0_resolution = integer(g["d0_resolution"], "grid.d0_resolution", 2, 10'000);
        if (g.contains("d0_radius"))
            cfg.grid.d0_radius = positive(g["d0_radius"], "grid.d0_radius");
    }

    if (doc.contains("spectrum")) {
        const json& s = doc["spectrum"];
        allow_keys(s, "spectrum", {"tol", "max_multiplier", "rate", "t_min", "torus_bins", "torus_dt"});
        if (s.contains("tol"))
            cfg.spectrum.tol = positive(s["tol"], "spectrum.tol");
        if (s.contains("max_multiplier"))
            cfg.spectrum.max_multiplier = integer(s["max_multiplier"], "spectrum.max_multiplier", 1, 1'000'000);
        if (s.contains("rate"))
            cfg.spectrum.rate = positive(s["rate"], "spectrum.rate");
        if (s.contains("t_min"))
            cfg.spectrum.t_min = number(s["t_min"], "spectrum.t_min");
        if (s.contains("torus_bins"))
            cfg.spectrum.torus_bins = integer(s["torus_bins"], "spectrum.torus_bins", 1, 4096);
        if (s.contains("torus_dt"))
            cfg.spectrum.torus_dt = positive(s["torus_dt"], "spectrum.torus_dt");
    }
    return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw ConfigError("cannot open config file " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    }
    catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    return parse_config(doc);
}

// ---------------------------------------------------------------------------
// Output formatting

/// %.17g: enough digits to recover every double exactly.
inline std::string format_number(double x)
{
    if (!std::isfinite(x))
        return "null";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

namespace detail {

inline bool is_flat_array(const json& j)
{
    if (!j.is_array())
        return false;
    for (const auto& e : j)
        if (e.is_structured())
            return false;
    return true;
}

inline void dump(std::string& out, const json& j, int depth)
{
    const std::string pad(static_cast<std::size_t>(2 * depth), ' ');
    const std::string inner(static_cast<std::size_t>(2 * depth + 2), ' ');
    switch (j.type()) {
    case json::value_t::number_float:
        out += format_number(j.get<double>());
        return;
    case json::value_t::array:
        if (j.empty()) {
            out += "[]";
            return;
        }
        if (is_flat_array(j)) {
            out += '[';
            for (std::size_t i = 0; i < j.size(); ++i) {
                if (i)
                    out += ", ";
                dump(out, j[i], depth + 1);
            }
            out += ']';
            return;
        }
        out += "[\n";
        for (std::size_t i = 0; i < j.size(); ++i) {
            out += inner;
            dump(out, j[i], depth + 1);
            out += i + 1 < j.size() ? ",\n" : "\n";
        }
        out += pad + "]";
        return;
    case json::value_t::object: {
        if (j.empty()) {
            out += "{}";
            return;
        }
        out += "{\n";
        std::size_t i = 0;
        for (const auto& [key, value] : j.items()) {
            out += inner + json(key).dump() + ": ";
            dump(out, value, depth + 1);
            out += ++i < j.size() ? ",\n" : "\n";
        }
        out += pad + "}";
        return;
    }
    default:
        out += j.dump();
    }
}

}  // namespace detail

/// Pretty JSON with floating-point values at 17 significant digits. Keys are
/// sorted, so equal documents print identically.
inline std::string to_json_text(const json& j)
{
    std::string out;
    detail::dump(out, j, 0);
    out += '\n';
    return out;
}

inline json to_json(const Eigen::VectorXd& v)
{
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i)
        a.push_back(v[i]);
    return a;
}

inline json to_json(const Eigen::Vector2d& v) { return json::array({v[0], v[1]}); }

inline json to_json(const std::vector<Rational>& v)
{
    json a = json::array();
    for (const auto& x : v)
        a.push_back(to_string(x));
    return a;
}

template <class T>
json optional_json(const std::optional<T>& v)
{
    return v ? json(*v) : json(nullptr);
}

class CsvWriter {
public:
    explicit CsvWriter(const std::vector<std::string>& header)
    {
        for (std::size_t i = 0; i < header.size(); ++i)
            text_ += (i ? "," : "") + header[i];
        text_ += '\n';
    }

    void row(const std::vector<double>& values, std::optional<long> id = std::nullopt)
    {
        bool first = true;
        if (id) {
            text_ += std::to_string(*id);
            first = false;
        }
        for (double v : values) {
            if (!first)
                text_ += ',';
            text_ += format_number(v);
            first = false;
        }
        text_ += '\n';
    }

    const std::string& text() const { return text_; }

private:
    std::string text_;
};

/// Writes through a temporary file in the same directory and renames it into
/// place, so readers never see a partial file.
inline void atomic_write(const std::filesystem::path& path, const std::string& content)
{
    namespace fs = std::filesystem;
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp." + std::to_string(::getpid());
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw Error("cannot write " + tmp.string());
        out << content;
        out.flush();
        if (!out)
            throw Error("write failed for " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp);
        throw Error("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
    }
}

// ---------------------------------------------------------------------------
// Commands

struct CommandResult {
    json report;
    std::vector<std::pair<std::string, std::string>> files;  // name relative to the output dir, content
};

struct CommandOptions {
    bool exact = false;
    bool polynomial = false;
};

namespace detail {

inline json tolerances_json(const FlowTolerances& t)
{
    return {{"step_tol", t.step_tol},
            {"fixed_point", t.fixed_point},
            {"period", t.period},
            {"closure", t.closure},
            {"rank", t.rank},
            {"max_period_time", t.max_period_time},
            {"recurrence_horizon", t.recurrence_horizon}};
}

inline json point_json(const CovectorPoint& p) { return {{"h", to_json(p.h)}, {"h2", to_json(p.h2)}}; }

inline json header(const char* command, const ExperimentConfig& cfg)
{
    return {{"version", 1}, {"command", command}, {"k", cfg.k}, {"body", cfg.body_spec}, {"seed", cfg.seed}};
}

inline std::vector<std::string> control_columns(int k)
{
    std::vector<std::string> cols;
    for (int i = 1; i <= k; ++i)
        cols.push_back("u_" + std::to_string(i));
    return cols;
}

inline void add_report(CommandResult& r, const ExperimentConfig& cfg, const char* command)
{
    const std::string name = cfg.outputs.report_json.empty() ? std::string(command) + ".json" : cfg.outputs.report_json;
    r.files.emplace_back(name, to_json_text(r.report));
}

inline json drift_json(const Drift& d)
{
    return {{"hamiltonian", d.hamiltonian},
            {"second_layer", d.second_layer},
            {"casimir", optional_json(d.casimir)},
            {"linear", d.linear}};
}

}  // namespace detail

/// Classification of the orbit through the configured point, with invariant
/// drifts over the horizon (default: one period, else 10).
inline CommandResult cmd_classify(const ExperimentConfig& cfg)
{
    const ConvexBody& body = *cfg.body;
    const CovectorPoint p0 = cfg.normalize ? unit_level_normalize(body, cfg.initial) : cfg.initial;
    const Classification c = classify(p0, body, cfg.tolerances);
    const double horizon = cfg.horizon ? *cfg.horizon : (c.period ? *c.period : 10.0);

    IntegrateOptions io;
    io.step_tol = cfg.tolerances.step_tol;
    io.samples = cfg.samples;
    io.rank_tol = cfg.tolerances.rank;
    const Trajectory tr = integrate(p0, body, horizon, io);

    CommandResult r;
    r.report = detail::header("classify", cfg);
    r.report["initial"] = detail::point_json(p0);
    r.report["hamiltonian"] = body.support(p0.h);
    r.report["orbit_dim"] = c.orbit_dim;
    r.report["kind"] = to_string(c.kind);
    r.report["period"] = optional_json(c.period);
    r.report["fixed_point_residual"] = c.fixed_point_residual;
    r.report["closure_residual"] = optional_json(c.closure_residual);
    r.report["half_period_distance"] = optional_json(c.half_period_distance);
    r.report["min_return_distance"] = optional_json(c.min_return_distance);
    r.report["conditioning_warning"] = c.conditioning_warning;
    r.report["horizon"] = horizon;
    r.report["drift"] = detail::drift_json(tr.drift);
    r.report["casimir_c"] = p0.k() % 2 == 1 && p0.k() <= kMaxCasimirGenerators ? json(casimir_c(p0)) : json(nullptr);
    r.report["tolerances"] = detail::tolerances_json(cfg.tolerances);

    if (!cfg.outputs.trajectory_csv.empty()) {
        std::vector<std::string> cols{"t"};
        for (int i = 1; i <= cfg.k; ++i)
            cols.push_back("h_" + std::to_string(i));
        for (const auto& u : detail::control_columns(cfg.k))
            cols.push_back(u);
        CsvWriter csv(cols);
        for (std::size_t i = 0; i < tr.times.size(); ++i) {
            std::vector<double> row{tr.times[i]};
            for (Eigen::Index j = 0; j < cfg.k; ++j)
                row.push_back(tr.points[i].h[j]);
            for (Eigen::Index j = 0; j < cfg.k; ++j)
                row.push_back(tr.controls[i][j]);
            csv.row(row);
        }
        r.files.emplace_back(cfg.outputs.trajectory_csv, csv.text());
        r.report["trajectory_csv"] = cfg.outputs.trajectory_csv;
    }
    detail::add_report(r, cfg, "classify");
    return r;
}

/// Phase portrait on the 2-dim leaf through the configured point: a grid of
/// initial conditions in leaf coordinates, each classified and (if periodic)
/// sampled over one period, plus the D0 scan.
inline CommandResult cmd_portrait(const ExperimentConfig& cfg)
{
    const ConvexBody& body = *cfg.body;
    const Leaf l = leaf(cfg.initial, cfg.tolerances.rank);
    if (l.dim() != 2)
        throw ConfigError("portrait: the leaf through the initial point has dimension " + std::to_string(l.dim()) +
                          ", need 2");
    const GridSpec& g = cfg.grid;
    const int n = g.count;
    const double h_floor = 1e-6;

    struct Item {
        Eigen::Vector2d y0;
        std::string kind;
        std::optional<double> period, closure, half;
        double residual = 0.0;
        std::vector<double> times;
        std::vector<Eigen::Vector2d> coords;
        std::vector<Eigen::VectorXd> controls;
    };
    std::vector<Item> items(static_cast<std::size_t>(n) * n);
    parallel_for(items.size(), [&](std::size_t idx) {
        Item& it = items[idx];
        const int i = static_cast<int>(idx) / n, j = static_cast<int>(idx) % n;
        const double step = n > 1 ? 2.0 * g.radius / (n - 1) : 0.0;
        it.y0 = n > 1 ? Eigen::Vector2d(-g.radius + i * step, -g.radius + j * step) : Eigen::Vector2d::Zero();
        const CovectorPoint q = l.point(it.y0);
        if (body.support(q.h) < h_floor) {
            it.kind = "abnormal";
            return;
        }
        const Classification c = classify(q, body, cfg.tolerances);
        it.kind = to_string(c.kind);
        it.residual = c.fixed_point_residual;
        it.period = c.period;
        it.closure = c.closure_residual;
        it.half = c.half_period_distance;
        if (c.period) {
            IntegrateOptions io;
            io.step_tol = cfg.tolerances.step_tol;
            io.samples = g.samples;
            io.rank_tol = cfg.tolerances.rank;
            const Trajectory tr = integrate(q, body, *c.period, io);
            it.times = tr.times;
            for (std::size_t s = 0; s < tr.points.size(); ++s) {
                it.coords.push_back(l.coordinates(tr.points[s]));
                it.controls.push_back(tr.controls[s]);
            }
        }
        else {
            it.times = {0.0};
            it.coords = {it.y0};
            it.controls = {body.grad_support(q.h)};
        }
    });

    D0Options dopt;
    dopt.resolution = g.d0_resolution;
    dopt.radius = g.d0_radius;
    dopt.tol = cfg.tolerances.fixed_point * 10.0;
    dopt.h_floor = h_floor;
    const D0Estimate d0 = d0_estimate(l, body, dopt);

    std::vector<std::string> cols{"traj_id", "t", "y1", "y2"};
    for (const auto& u : detail::control_columns(cfg.k))
        cols.push_back(u);
    CsvWriter csv(cols);
    json trajs = json::array();
    for (std::size_t idx = 0; idx < items.size(); ++idx) {
        const Item& it = items[idx];
        trajs.push_back({{"id", idx},
                         {"y0", to_json(it.y0)},
                         {"kind", it.kind},
                         {"period", optional_json(it.period)},
                         {"closure_residual", optional_json(it.closure)},
                         {"half_period_distance", optional_json(it.half)},
                         {"fixed_point_residual", it.residual}});
        for (std::size_t s = 0; s < it.times.size(); ++s) {
            std::vector<double> row{it.times[s], it.coords[s][0], it.coords[s][1]};
            for (Eigen::Index c = 0; c < cfg.k; ++c)
                row.push_back(it.controls[s][c]);
            csv.row(row, static_cast<long>(idx));
        }
    }

    json hull = json::array();
    for (const auto& p : d0.hull)
        hull.push_back(to_json(p));
    json dirs = json::array();
    for (Eigen::Index c = 0; c < l.directions.cols(); ++c)
        dirs.push_back(to_json(Eigen::VectorXd(l.directions.col(c))));

    CommandResult r;
    r.report = detail::header("portrait", cfg);
    r.report["leaf"] = {{"dim", l.dim()}, {"base", detail::point_json(l.base)}, {"directions", dirs}};
    r.report["grid"] = {{"count", g.count}, {"radius", g.radius}, {"samples", g.samples}};
    r.report["trajectories"] = trajs;
    r.report["d0"] = {{"dimension", d0.dimension},
                      {"marked_count", d0.marked.size()},
                      {"hull", hull},
                      {"diameter", d0.diameter},
                      {"width", d0.width},
                      {"spacing", d0.spacing},
                      {"thickness_threshold", d0.thickness_threshold},
                      {"dimension_rule", "diameter <= threshold: 0; width <= threshold: 1; otherwise 2"},
                      {"argmin", to_json(d0.argmin)},
                      {"h_min", d0.h_min},
                      {"argmin_abnormal", d0.argmin_abnormal},
                      {"sufficient", d0.sufficient},
                      {"resolution", dopt.resolution},
                      {"radius", dopt.radius},
                      {"tol", dopt.tol}};
    r.report["tolerances"] = detail::tolerances_json(cfg.tolerances);
    const std::string csv_name = cfg.outputs.portrait_csv.empty() ? "portrait.csv" : cfg.outputs.portrait_csv;
    r.files.emplace_back(csv_name, csv.text());
    r.report["portrait_csv"] = csv_name;
    detail::add_report(r, cfg, "portrait");
    return r;
}

/// Trivial Casimirs, a_vec, C and the kernel-identity residual. Exact mode
/// reads the configured values as rationals and demands a zero residual.
inline CommandResult cmd_casimir(const ExperimentConfig& cfg, const CommandOptions& opt = {})
{
    const AlgebraShape s(cfg.k);
    const bool odd = cfg.k % 2 == 1;
    if (opt.polynomial)
        carnot::detail::check_polynomial_shape(cfg.k);
    const bool with_c = odd && cfg.k <= kMaxCasimirGenerators;

    CommandResult r;
    r.report = detail::header("casimir", cfg);
    r.report["exact"] = opt.exact;
    if (!odd)
        r.report["note"] = "even k: only the k(k-1)/2 functions h_ij are independent Casimirs";
    else if (!with_c)
        r.report["note"] = "polynomial Casimir skipped above k = " + std::to_string(kMaxCasimirGenerators);

    if (opt.exact) {
        if (!cfg.initial_spec.contains("h"))
            throw ConfigError("casimir --exact needs an explicit initial point {h, h2}");
        ExactCovector p{detail::exact_vector(cfg.initial_spec["h"], static_cast<std::size_t>(cfg.k), "initial.h"),
                        detail::exact_vector(cfg.initial_spec["h2"], static_cast<std::size_t>(s.dim_second()),
                                             "initial.h2")};
        ExactCasimirReport rep;
        if (with_c) {
            rep = casimir_report(p);
        }
        else {
            rep.trivial = p.h2;
        }
        r.report["h2"] = to_json(rep.trivial);
        r.report["a_vec"] = rep.a_vec ? to_json(*rep.a_vec) : json(nullptr);
        r.report["c"] = rep.c_value ? json(to_string(*rep.c_value)) : json(nullptr);
        r.report["residual"] = rep.residual ? to_json(*rep.residual) : json(nullptr);
        if (rep.residual) {
            bool zero = true;
            for (const auto& v : *rep.residual)
                zero = zero && v == 0;
            r.report["residual_zero"] = zero;
            if (!zero)
                throw DetectionError("casimir: exact residual is not zero");
        }
    }
    else {
        const CovectorPoint& p = cfg.initial;
        r.report["h2"] = to_json(trivial_casimirs(p));
        if (with_c) {
            const Eigen::VectorXd a = a_vector(p);
            const Eigen::VectorXd res = verify_casimir_identity(p);
            r.report["a_vec"] = to_json(a);
            r.report["c"] = a.dot(p.h);
            r.report["residual"] = to_json(res);
            r.report["residual_norm"] = res.norm();
            const double scale = a.norm() * m_matrix(p).matrix().norm();
            r.report["residual_relative"] = scale > 0.0 ? res.norm() / scale : 0.0;
        }
        else {
            r.report["a_vec"] = nullptr;
            r.report["c"] = nullptr;
            r.report["residual"] = nullptr;
        }
    }
    detail::add_report(r, cfg, "casimir");
    return r;
}

/// Eigenfrequencies of M, commensurability, and for the centered unit ball the
/// recurrence summary of the closed-form flow over [t_min, horizon].
inline CommandResult cmd_spectrum(const ExperimentConfig& cfg)
{
    const SpectrumSpec& sp = cfg.spectrum;
    const SkewMatrix m = m_matrix(cfg.initial);
    const SpectrumReport rep = spectrum(m, sp.tol, sp.max_multiplier);

    CommandResult r;
    r.report = detail::header("spectrum", cfg);
    r.report["frequencies"] = rep.frequencies;
    r.report["zero_multiplicity"] = rep.zero_multiplicity;
    r.report["max_orbit_dim"] = 2 * static_cast<int>(rep.frequencies.size());
    r.report["commensurable"] = rep.commensurable;
    r.report["multipliers"] = rep.multipliers;
    r.report["common_period"] = optional_json(rep.common_period);
    r.report["max_multiplier"] = rep.max_multiplier;
    r.report["tol"] = rep.tol;
    r.report["rate"] = sp.rate;

    const ConvexBody& body = *cfg.body;
    if (body.is_unit_ball() && !rep.frequencies.empty()) {
        const CovectorPoint p0 = unit_level_normalize(body, cfg.initial);
        const double horizon = cfg.horizon ? *cfg.horizon : 100.0;
        if (sp.t_min < 0.0 || sp.t_min >= horizon)
            throw ConfigError("spectrum.t_min: must lie in [0, horizon)");
        const RecurrenceSummary rs = sr_min_return_distance(p0, sp.t_min, horizon, sp.rate);
        json rec = {{"t_min", rs.t_min},
                    {"t_max", rs.t_max},
                    {"min_distance", rs.min_distance},
                    {"argmin_time", rs.argmin_time}};
        if (rep.frequencies.size() >= 2) {
            const auto counts = torus_occupancy(p0, horizon, sp.rate, sp.torus_bins, sp.torus_dt);
            long empty = 0, lo = std::numeric_limits<long>::max(), hi = 0;
            for (long c : counts) {
                empty += c == 0;
                lo = std::min(lo, c);
                hi = std::max(hi, c);
            }
            rec["torus"] = {{"bins", sp.torus_bins}, {"dt", sp.torus_dt}, {"empty_bins", empty},
                            {"min_count", lo}, {"max_count", hi}};
        }
        r.report["recurrence"] = rec;
    }
    else {
        r.report["recurrence"] = nullptr;
    }
    detail::add_report(r, cfg, "spectrum");
    return r;
}

// ---------------------------------------------------------------------------
// Driver

/// Maps library errors onto exit codes: integration and detection failures
/// give 2, configuration and validation problems give 3.
inline int run(const std::string& command, const std::filesystem::path& config_path, const CommandOptions& opt,
               const std::filesystem::path& out_dir, std::ostream& out = std::cout, std::ostream& err = std::cerr)
{
    try {
        const ExperimentConfig cfg = load_config(config_path);
        CommandResult r;
        if (command == "classify")
            r = cmd_classify(cfg);
        else if (command == "portrait")
            r = cmd_portrait(cfg);
        else if (command == "casimir")
            r = cmd_casimir(cfg, opt);
        else if (command == "spectrum")
            r = cmd_spectrum(cfg);
        else {
            err << "carnot: unknown command " << command << "\n";
            return exit_usage;
        }
        for (const auto& [name, content] : r.files)
            atomic_write(out_dir / name, content);
        for (const auto& [name, content] : r.files)
            out << (out_dir / name).string() << "\n";
        return exit_ok;
    }
    catch (const IntegrationError& e) {
        err << "carnot: integration failure at t = " << format_number(e.last_time()) << ": " << e.what() << "\n";
        return exit_integration;
    }
    catch (const DetectionError& e) {
        err << "carnot: " << e.what() << "\n";
        return exit_integration;
    }
    catch (const ConfigError& e) {
        err << "carnot: invalid config: " << e.what() << "\n";
        return exit_config;
    }
    catch (const BodyError& e) {
        err << "carnot: invalid body: " << e.what() << "\n";
        return exit_config;
    }
    catch (const UnsupportedError& e) {
        err << "carnot: " << e.what() << "\n";
        return exit_config;
    }
    catch (const SizeError& e) {
        err << "carnot: " << e.what() << "\n";
        return exit_config;
    }
    catch (const InputError& e) {
        err << "carnot: invalid input: " << e.what() << "\n";
        return exit_config;
    }
    catch (const DomainError& e) {
        err << "carnot: invalid initial point: " << e.what() << "\n";
        return exit_config;
    }
    catch (const std::exception& e) {
        err << "carnot: " << e.what() << "\n";
        return exit_usage;
    }
}

}  // namespace carnot::cli
