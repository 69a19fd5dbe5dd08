#pragma once

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "pam/errors.hpp"
#include "pam/io.hpp"
#include "pam/lattice.hpp"

namespace pam {

inline const std::vector<std::string>& experiment_ids() {
    static const std::vector<std::string> ids = {"mass-concentration", "aging-Z",  "aging-solution", "limit-laws",
                                                 "theta-tail",         "chi-scan", "solver-xval"};
    return ids;
}

struct ExperimentConfig {
    std::string experiment = "mass-concentration";
    int dim = 1;
    double rho = 1.0;
    double kappa = 0.2;
    double beta = 0.3;
    double A = 10.0;
    double delta = 0.5;
    std::vector<double> t = {50.0};
    std::uint64_t replicas = 100;
    std::uint64_t samples = 100000;
    std::uint64_t seed = 1;
    std::string window_policy = "exclude";
    std::string output_dir = "output";
    std::uint64_t workers = 1;
    std::vector<double> s = {0.5, 1.0, 2.0, 5.0, 10.0};
    std::vector<double> theta = {1.0, 2.0};
    std::vector<std::int64_t> R = {0, 1, 2, 3, 4, 5, 6};
    std::int64_t radius_max = 30;
    std::int64_t window_margin = 8;
    double epsilon = 0.5;
    std::uint64_t grid = 200;
    std::uint64_t paths = 100000;
    std::int64_t max_sites = 21;

    bool operator==(const ExperimentConfig&) const = default;
};

namespace detail {

using ConfigValue = std::variant<std::string*, int*, double*, std::uint64_t*, std::int64_t*, std::vector<double>*,
                                 std::vector<std::int64_t>*>;

struct ConfigKey {
    const char* name;
    const char* units;
    const char* doc;
    std::function<ConfigValue(ExperimentConfig&)> bind;
};

inline const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = {
        {"experiment", "-", "mass-concentration | aging-Z | aging-solution | limit-laws | theta-tail | chi-scan | solver-xval",
         [](ExperimentConfig& c) { return ConfigValue(&c.experiment); }},
        {"dim", "-", "lattice dimension d in {1, 2, 3}", [](ExperimentConfig& c) { return ConfigValue(&c.dim); }},
        {"rho", "-", "tail parameter of P(xi > r) = exp(-e^{r/rho}), > 0", [](ExperimentConfig& c) { return ConfigValue(&c.rho); }},
        {"kappa", "-", "capital radius exponent, 0 < kappa < 1/d", [](ExperimentConfig& c) { return ConfigValue(&c.kappa); }},
        {"beta", "-", "island radius exponent, kappa < beta < 1/d", [](ExperimentConfig& c) { return ConfigValue(&c.beta); }},
        {"A", "-", "island exceedance depth, > 0", [](ExperimentConfig& c) { return ConfigValue(&c.A); }},
        {"delta", "-", "island relevance margin, > 0", [](ExperimentConfig& c) { return ConfigValue(&c.delta); }},
        {"t", "time", "observation times, increasing", [](ExperimentConfig& c) { return ConfigValue(&c.t); }},
        {"replicas", "count", "field replicas or solver instances", [](ExperimentConfig& c) { return ConfigValue(&c.replicas); }},
        {"samples", "count", "point-process samples", [](ExperimentConfig& c) { return ConfigValue(&c.samples); }},
        {"seed", "-", "master seed", [](ExperimentConfig& c) { return ConfigValue(&c.seed); }},
        {"window_policy", "-", "exclude | error: capitals whose comparison ball leaves the field window",
         [](ExperimentConfig& c) { return ConfigValue(&c.window_policy); }},
        {"output_dir", "path", "directory for CSV outputs and the run manifest",
         [](ExperimentConfig& c) { return ConfigValue(&c.output_dir); }},
        {"workers", "count", "worker threads, >= 1", [](ExperimentConfig& c) { return ConfigValue(&c.workers); }},
        {"s", "time/t", "aging horizons s > 0, increasing", [](ExperimentConfig& c) { return ConfigValue(&c.s); }},
        {"theta", "-", "limit-law parameters theta > 0", [](ExperimentConfig& c) { return ConfigValue(&c.theta); }},
        {"R", "sites", "chi box radii, increasing", [](ExperimentConfig& c) { return ConfigValue(&c.R); }},
        {"radius_max", "sites", "largest l1 radius of the concentration profile", [](ExperimentConfig& c) { return ConfigValue(&c.radius_max); }},
        {"window_margin", "sites", "field window radius beyond the macro box", [](ExperimentConfig& c) { return ConfigValue(&c.window_margin); }},
        {"epsilon", "-", "total-variation jump threshold, 0 < epsilon < 1", [](ExperimentConfig& c) { return ConfigValue(&c.epsilon); }},
        {"grid", "count", "time-grid points for profile tracking", [](ExperimentConfig& c) { return ConfigValue(&c.grid); }},
        {"paths", "count", "Feynman-Kac paths per instance", [](ExperimentConfig& c) { return ConfigValue(&c.paths); }},
        {"max_sites", "sites", "largest solver cross-validation instance", [](ExperimentConfig& c) { return ConfigValue(&c.max_sites); }},
    };
    return keys;
}

inline const ConfigKey* find_key(const std::string& name) {
    for (const auto& k : config_keys())
        if (name == k.name) return &k;
    return nullptr;
}

inline std::string trim(const std::string& s, std::size_t* lead = nullptr) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) {
        if (lead) *lead = s.size();
        return "";
    }
    const auto e = s.find_last_not_of(" \t\r");
    if (lead) *lead = b;
    return s.substr(b, e - b + 1);
}

/// Position of a parse failure inside a value, relative to its first character.
struct ValueError {
    std::size_t offset;
    std::string message;
};

template <class T>
std::optional<ValueError> parse_scalar(const std::string& text, std::size_t offset, T& out) {
    if (text.empty()) return ValueError{offset, "empty value"};
    if constexpr (std::is_same_v<T, double>) {
        const char* b = text.c_str();
        char* e = nullptr;
        errno = 0;
        const double v = std::strtod(b, &e);
        if (e == b || *e != '\0') return ValueError{offset + static_cast<std::size_t>(e - b), "expected a real number"};
        if (errno == ERANGE && std::isinf(v)) return ValueError{offset, "real number out of range"};
        out = v;
    } else {
        T v{};
        const auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
        if (ec == std::errc::result_out_of_range) return ValueError{offset, "integer out of range"};
        if (ec != std::errc() || p != text.data() + text.size())
            return ValueError{offset + static_cast<std::size_t>(p - text.data()),
                              std::is_signed_v<T> ? "expected an integer" : "expected a non-negative integer"};
        out = v;
    }
    return std::nullopt;
}

template <class T>
std::optional<ValueError> parse_list(const std::string& text, std::size_t offset, std::vector<T>& out) {
    std::string body = text;
    std::size_t base = offset;
    if (!body.empty() && body.front() == '[') {
        if (body.back() != ']') return ValueError{offset + body.size(), "missing ']'"};
        body = body.substr(1, body.size() - 2);
        base += 1;
    }
    out.clear();
    if (trim(body).empty()) return std::nullopt;
    std::size_t pos = 0;
    for (;;) {
        const auto comma = body.find(',', pos);
        const std::string item = body.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
        std::size_t lead = 0;
        const std::string v = trim(item, &lead);
        T x{};
        if (auto err = parse_scalar(v, base + pos + lead, x)) return err;
        out.push_back(x);
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return std::nullopt;
}

inline std::optional<ValueError> assign_text(ConfigValue target, const std::string& text, std::size_t offset) {
    return std::visit(
        [&](auto* p) -> std::optional<ValueError> {
            using T = std::remove_pointer_t<decltype(p)>;
            if constexpr (std::is_same_v<T, std::string>) {
                std::string v = text;
                if (v.size() >= 2 && v.front() == '"' && v.back() == '"') v = v.substr(1, v.size() - 2);
                *p = v;
                return std::nullopt;
            } else if constexpr (std::is_same_v<T, std::vector<double>> || std::is_same_v<T, std::vector<std::int64_t>>) {
                return parse_list(text, offset, *p);
            } else if constexpr (std::is_same_v<T, int>) {
                std::int64_t v = 0;
                if (auto e = parse_scalar(text, offset, v)) return e;
                if (v < -1000000 || v > 1000000) return ValueError{offset, "integer out of range"};
                *p = static_cast<int>(v);
                return std::nullopt;
            } else {
                return parse_scalar(text, offset, *p);
            }
        },
        target);
}

inline std::string value_text(ConfigValue v) {
    return std::visit(
        [](auto* p) -> std::string {
            using T = std::remove_pointer_t<decltype(p)>;
            if constexpr (std::is_same_v<T, std::string>) {
                return *p;
            } else if constexpr (std::is_same_v<T, double>) {
                return format_double_short(*p);
            } else if constexpr (std::is_same_v<T, std::vector<double>> || std::is_same_v<T, std::vector<std::int64_t>>) {
                std::string s;
                for (std::size_t i = 0; i < p->size(); ++i) {
                    if (i) s += ", ";
                    if constexpr (std::is_same_v<T, std::vector<double>>) s += format_double_short((*p)[i]);
                    else s += std::to_string((*p)[i]);
                }
                return s;
            } else {
                return std::to_string(*p);
            }
        },
        v);
}

inline nlohmann::json value_json(ConfigValue v) {
    return std::visit([](auto* p) { return nlohmann::json(*p); }, v);
}

[[noreturn]] inline void format_error(const std::string& source, std::size_t line, std::size_t col, const std::string& msg) {
    fail(ErrorKind::Format, source + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " + msg);
}

inline std::pair<std::size_t, std::size_t> line_col(const std::string& text, std::size_t byte) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i < std::min(byte, text.size()); ++i) {
        if (text[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return {line, col};
}

inline ExperimentConfig parse_key_value(const std::string& text, const std::string& source) {
    ExperimentConfig cfg;
    std::vector<std::string> seen;
    std::istringstream in(text);
    std::string raw;
    std::size_t line = 0;
    while (std::getline(in, raw)) {
        ++line;
        std::string content = raw;
        if (const auto h = content.find('#'); h != std::string::npos) content = content.substr(0, h);
        if (trim(content).empty()) continue;
        const auto eq = content.find('=');
        std::size_t lead = 0;
        if (eq == std::string::npos) {
            trim(content, &lead);
            format_error(source, line, lead + 1, "expected 'key = value'");
        }
        const std::string key = trim(content.substr(0, eq), &lead);
        if (key.empty()) format_error(source, line, eq + 1, "missing key before '='");
        const ConfigKey* k = find_key(key);
        if (!k) format_error(source, line, lead + 1, "unknown key '" + key + "'");
        if (std::find(seen.begin(), seen.end(), key) != seen.end())
            format_error(source, line, lead + 1, "duplicate key '" + key + "'");
        seen.push_back(key);
        std::size_t vlead = 0;
        const std::string value = trim(content.substr(eq + 1), &vlead);
        const std::size_t vcol = eq + 1 + vlead;
        if (auto err = assign_text(k->bind(cfg), value, vcol))
            format_error(source, line, err->offset + 1, key + ": " + err->message);
    }
    return cfg;
}

inline ExperimentConfig parse_json_config(const std::string& text, const std::string& source) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        const auto [l, c] = line_col(text, e.byte == 0 ? 0 : e.byte - 1);
        format_error(source, l, c, "invalid JSON");
    }
    if (!j.is_object()) format_error(source, 1, 1, "JSON config must be an object");
    ExperimentConfig cfg;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const auto pos = text.find("\"" + it.key() + "\"");
        const auto [l, c] = line_col(text, pos == std::string::npos ? 0 : pos);
        const ConfigKey* k = find_key(it.key());
        if (!k) format_error(source, l, c, "unknown key '" + it.key() + "'");
        // Values go through the same typed parser as the key-value format.
        std::string txt;
        const auto& v = it.value();
        if (v.is_string()) {
            txt = v.get<std::string>();
        } else if (v.is_array()) {
            for (std::size_t i = 0; i < v.size(); ++i) {
                if (i) txt += ",";
                if (!v[i].is_number()) format_error(source, l, c, it.key() + ": list entries must be numbers");
                txt += v[i].is_number_float() ? format_double(v[i].get<double>()) : v[i].dump();
            }
        } else if (v.is_number_float()) {
            txt = format_double(v.get<double>());
        } else if (v.is_number()) {
            txt = v.dump();
        } else {
            format_error(source, l, c, it.key() + ": unsupported value type");
        }
        const ConfigValue target = k->bind(cfg);
        const bool wants_string = std::holds_alternative<std::string*>(target);
        if (wants_string != v.is_string()) format_error(source, l, c, it.key() + ": wrong value type");
        if (auto err = assign_text(target, txt, 0)) format_error(source, l, c, it.key() + ": " + err->message);
    }
    return cfg;
}

} // namespace detail

/// Parses key-value text (`key = value`, `#` comments, comma-separated lists) or a JSON object.
inline ExperimentConfig parse_config(const std::string& text, const std::string& source = "<config>") {
    std::size_t lead = 0;
    const std::string t = detail::trim(text, &lead);
    if (!t.empty() && t.front() == '{') return detail::parse_json_config(text, source);
    return detail::parse_key_value(text, source);
}

/// Every key in schema order, one per line.
inline std::string serialize_config(const ExperimentConfig& cfg) {
    ExperimentConfig c = cfg;
    std::string out;
    for (const auto& k : detail::config_keys()) out += std::string(k.name) + " = " + detail::value_text(k.bind(c)) + "\n";
    return out;
}

inline nlohmann::json config_to_json(const ExperimentConfig& cfg) {
    ExperimentConfig c = cfg;
    nlohmann::json j = nlohmann::json::object();
    for (const auto& k : detail::config_keys()) j[k.name] = detail::value_json(k.bind(c));
    return j;
}

/// Documentation of the typed schema: key, units, meaning, default.
inline std::string config_schema() {
    ExperimentConfig c;
    std::string out;
    for (const auto& k : detail::config_keys())
        out += std::string("# ") + k.name + " [" + k.units + "]: " + k.doc + " (default " + detail::value_text(k.bind(c)) + ")\n";
    return out;
}

inline bool is_field_experiment(const std::string& id) {
    return id == "mass-concentration" || id == "aging-Z" || id == "aging-solution";
}

/// Radius of the field window for a field experiment.
inline long field_window_radius(const ExperimentConfig& c) {
    double tmax = c.t.empty() ? 0.0 : c.t.back();
    if (c.experiment != "mass-concentration" && !c.s.empty()) tmax *= 1 + c.s.back();
    const double L = std::floor(tmax * std::log(std::log(std::max(tmax, std::numbers::e))));
    return static_cast<long>(L) + static_cast<long>(c.window_margin);
}

/// Every violated constraint, phrased with the constraint itself.
inline std::vector<std::string> config_errors(const ExperimentConfig& c) {
    std::vector<std::string> e;
    auto num = [](double x) { return format_double_short(x); };
    const auto& ids = experiment_ids();
    if (std::find(ids.begin(), ids.end(), c.experiment) == ids.end())
        e.push_back("experiment = " + c.experiment + ": must be one of mass-concentration, aging-Z, aging-solution, "
                    "limit-laws, theta-tail, chi-scan, solver-xval");
    const bool dim_ok = c.dim >= 1 && c.dim <= 3;
    if (!dim_ok) e.push_back("dim = " + std::to_string(c.dim) + ": requires d in {1, 2, 3}");
    if (!(c.rho > 0 && std::isfinite(c.rho))) e.push_back("rho = " + num(c.rho) + ": requires rho > 0");
    if (dim_ok) {
        const double inv = 1.0 / c.dim;
        if (!(c.kappa > 0 && c.kappa < inv))
            e.push_back("kappa = " + num(c.kappa) + ": requires 0 < kappa < 1/d = " + num(inv) + " (d = " + std::to_string(c.dim) + ")");
        if (!(c.beta > c.kappa && c.beta < inv))
            e.push_back("beta = " + num(c.beta) + ": requires kappa < beta < 1/d = " + num(inv));
    }
    if (!(c.A > 0 && std::isfinite(c.A))) e.push_back("A = " + num(c.A) + ": requires A > 0");
    if (!(c.delta > 0 && std::isfinite(c.delta))) e.push_back("delta = " + num(c.delta) + ": requires delta > 0");
    if (c.t.empty()) e.push_back("t: requires at least one time");
    for (std::size_t i = 0; i < c.t.size(); ++i) {
        if (!(c.t[i] > 0 && std::isfinite(c.t[i]))) e.push_back("t = " + num(c.t[i]) + ": requires t > 0");
        if (i && !(c.t[i] > c.t[i - 1])) e.push_back("t: times must be strictly increasing");
        if (is_field_experiment(c.experiment) && !(c.t[i] > std::exp(std::numbers::e)))
            e.push_back("t = " + num(c.t[i]) + ": requires t > e^e for " + c.experiment);
    }
    if (c.replicas < 1) e.push_back("replicas = 0: requires replicas >= 1");
    if (c.samples < 1) e.push_back("samples = 0: requires samples >= 1");
    if (c.window_policy != "exclude" && c.window_policy != "error")
        e.push_back("window_policy = " + c.window_policy + ": must be exclude or error");
    if (c.output_dir.empty()) e.push_back("output_dir: must not be empty");
    if (c.workers < 1 || c.workers > 1024) e.push_back("workers = " + std::to_string(c.workers) + ": requires 1 <= workers <= 1024");
    const bool needs_s = c.experiment == "aging-Z" || c.experiment == "aging-solution" || c.experiment == "theta-tail";
    if (needs_s && c.s.empty()) e.push_back("s: requires at least one horizon");
    for (std::size_t i = 0; i < c.s.size(); ++i) {
        if (!(c.s[i] > 0 && std::isfinite(c.s[i]))) e.push_back("s = " + num(c.s[i]) + ": requires s > 0");
        if (c.s[i] > 9999) e.push_back("s = " + num(c.s[i]) + ": requires s <= 9999 (point-process censoring cap)");
        if (i && !(c.s[i] > c.s[i - 1])) e.push_back("s: horizons must be strictly increasing");
    }
    if (c.experiment == "limit-laws" && c.theta.empty()) e.push_back("theta: requires at least one value");
    for (double th : c.theta)
        if (!(th > 0 && std::isfinite(th))) e.push_back("theta = " + num(th) + ": requires theta > 0");
    if (c.experiment == "chi-scan" && c.R.empty()) e.push_back("R: requires at least one radius");
    for (std::size_t i = 0; i < c.R.size(); ++i) {
        if (c.R[i] < 0 || c.R[i] > 1000) e.push_back("R = " + std::to_string(c.R[i]) + ": requires 0 <= R <= 1000");
        if (i && !(c.R[i] > c.R[i - 1])) e.push_back("R: radii must be strictly increasing");
    }
    if (c.radius_max < 0) e.push_back("radius_max = " + std::to_string(c.radius_max) + ": requires radius_max >= 0");
    if (c.window_margin < 0) e.push_back("window_margin = " + std::to_string(c.window_margin) + ": requires window_margin >= 0");
    if (!(c.epsilon > 0 && c.epsilon < 1)) e.push_back("epsilon = " + num(c.epsilon) + ": requires 0 < epsilon < 1");
    if (c.grid < 2) e.push_back("grid = " + std::to_string(c.grid) + ": requires grid >= 2");
    if (c.paths < 1) e.push_back("paths = 0: requires paths >= 1");
    if (c.max_sites < 1 || c.max_sites > 2000) e.push_back("max_sites = " + std::to_string(c.max_sites) + ": requires 1 <= max_sites <= 2000");
    if (e.empty() && is_field_experiment(c.experiment)) {
        const double side = 2.0 * static_cast<double>(field_window_radius(c)) + 1;
        const double sites = std::pow(side, c.dim);
        if (sites > 1e7)
            e.push_back("field window of " + num(sites) + " sites exceeds the cap of 1e7 sites; reduce t, s or window_margin");
    }
    return e;
}

struct ConfigValidation {
    ExperimentConfig config;
    std::vector<std::string> errors;
    bool ok() const { return errors.empty(); }
};

/// Parses and validates; format problems throw, range problems are listed.
inline ConfigValidation validate_config_text(const std::string& text, const std::string& source = "<config>") {
    ConfigValidation v;
    v.config = parse_config(text, source);
    v.errors = config_errors(v.config);
    return v;
}

inline ConfigValidation validate_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorKind::InvalidParameter, "cannot read config file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return validate_config_text(ss.str(), path.string());
}

} // namespace pam
