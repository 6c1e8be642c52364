#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <toml.hpp>

#include "ksl/cli.hpp"

namespace ksl {

namespace {

std::string error_text(const std::string& field, int line, const std::string& what) {
    std::ostringstream os;
    os << "config error: " << field;
    if (line > 0) os << " (line " << line << ")";
    os << ": " << what;
    return os.str();
}

int line_of(const toml::node& n) { return static_cast<int>(n.source().begin.line); }

class Reader {
public:
    Reader(const toml::table& root, std::map<std::string, int>& lines) : root_(root), lines_(lines) {}

    // Returns the section table (or nullptr) after rejecting keys outside `allowed`.
    const toml::table* section(const std::string& name, const std::set<std::string>& allowed) {
        const toml::node* n = root_.get(name);
        if (!n) return nullptr;
        const toml::table* t = n->as_table();
        if (!t) throw ConfigError(name, line_of(*n), "expected a table");
        lines_[name] = line_of(*n);
        for (auto&& [k, v] : *t) {
            const std::string key(k.str());
            if (!allowed.count(key)) throw ConfigError(name + "." + key, line_of(v), "unknown key");
            lines_[name + "." + key] = line_of(v);
        }
        return t;
    }

    template <class T>
    void number(const toml::table* t, const std::string& sec, const std::string& key, T& out) {
        const toml::node* n = t ? t->get(key) : nullptr;
        if (!n) return;
        if constexpr (std::is_floating_point_v<T>) {
            auto v = n->value<double>();
            if (!v) throw ConfigError(sec + "." + key, line_of(*n), "expected a number");
            out = *v;
        } else {
            auto v = n->value<std::int64_t>();
            if (!v || !n->is_integer()) throw ConfigError(sec + "." + key, line_of(*n), "expected an integer");
            if constexpr (std::is_unsigned_v<T>) {
                if (*v < 0) throw ConfigError(sec + "." + key, line_of(*n), "expected a non-negative integer");
            }
            out = static_cast<T>(*v);
        }
    }

    void boolean(const toml::table* t, const std::string& sec, const std::string& key, bool& out) {
        const toml::node* n = t ? t->get(key) : nullptr;
        if (!n) return;
        auto v = n->value<bool>();
        if (!v || !n->is_boolean()) throw ConfigError(sec + "." + key, line_of(*n), "expected a boolean");
        out = *v;
    }

    void string(const toml::table* t, const std::string& sec, const std::string& key, std::string& out) {
        const toml::node* n = t ? t->get(key) : nullptr;
        if (!n) return;
        auto v = n->value<std::string>();
        if (!v || !n->is_string()) throw ConfigError(sec + "." + key, line_of(*n), "expected a string");
        out = *v;
    }

    const toml::array* array(const toml::table* t, const std::string& sec, const std::string& key) {
        const toml::node* n = t ? t->get(key) : nullptr;
        if (!n) return nullptr;
        const toml::array* a = n->as_array();
        if (!a) throw ConfigError(sec + "." + key, line_of(*n), "expected an array");
        return a;
    }

    void numbers(const toml::table* t, const std::string& sec, const std::string& key, std::vector<double>& out) {
        const toml::array* a = array(t, sec, key);
        if (!a) return;
        out.clear();
        for (const auto& e : *a) {
            auto v = e.value<double>();
            if (!v) throw ConfigError(sec + "." + key, line_of(e), "expected an array of numbers");
            out.push_back(*v);
        }
    }

    void integers(const toml::table* t, const std::string& sec, const std::string& key, std::vector<int>& out) {
        const toml::array* a = array(t, sec, key);
        if (!a) return;
        out.clear();
        for (const auto& e : *a) {
            auto v = e.value<std::int64_t>();
            if (!v || !e.is_integer()) throw ConfigError(sec + "." + key, line_of(e), "expected an array of integers");
            out.push_back(static_cast<int>(*v));
        }
    }

    void strings(const toml::table* t, const std::string& sec, const std::string& key, std::vector<std::string>& out) {
        const toml::array* a = array(t, sec, key);
        if (!a) return;
        out.clear();
        for (const auto& e : *a) {
            auto v = e.value<std::string>();
            if (!v || !e.is_string()) throw ConfigError(sec + "." + key, line_of(e), "expected an array of strings");
            out.push_back(*v);
        }
    }

    void pairs(const toml::table* t, const std::string& sec, const std::string& key,
               std::vector<std::pair<double, double>>& out) {
        const toml::array* a = array(t, sec, key);
        if (!a) return;
        out.clear();
        for (const auto& e : *a) {
            const toml::array* p = e.as_array();
            if (!p || p->size() != 2 || !(*p)[0].value<double>() || !(*p)[1].value<double>())
                throw ConfigError(sec + "." + key, line_of(e), "expected an array of [number, number] pairs");
            out.emplace_back(*(*p)[0].value<double>(), *(*p)[1].value<double>());
        }
    }

private:
    const toml::table& root_;
    std::map<std::string, int>& lines_;
};

const std::set<std::string> kCommands{"assemble", "transport", "spectrum", "dispersion", "fluid", "converge", "report"};

void require(bool ok, const std::string& field, const std::string& what) {
    if (!ok) throw ConfigError(field, 0, what);
}

bool positive_all(const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x) && x > 0.0; });
}

bool strictly_decreasing(const std::vector<double>& v) {
    for (std::size_t i = 1; i < v.size(); ++i)
        if (!(v[i] < v[i - 1])) return false;
    return true;
}

}  // namespace

ConfigError::ConfigError(const std::string& f, int l, const std::string& what)
    : std::runtime_error(error_text(f, l, what)), field(f), line(l) {}

ExperimentConfig RunConfig::experiment() const {
    ExperimentConfig e;
    e.eps_list = eps_list;
    e.s_max = s_max;
    e.s_min = s_min;
    e.s_nodes = s_nodes;
    e.t_grid.clear();
    for (int k = 0; k < t_points; ++k)
        e.t_grid.push_back(t_min * std::pow(t_max / t_min, static_cast<double>(k) / (t_points - 1)));
    e.seed = seed;
    e.r0 = r0;
    e.r1 = r1;
    e.jobs = jobs;
    return e;
}

std::vector<std::pair<double, double>> RunConfig::resolved_spectrum_samples() const {
    if (!spectrum_samples.empty()) return spectrum_samples;
    // low, mid and high regimes at the default thresholds
    return {{0.5, 0.02}, {1.0, 0.05}, {2.0, 0.02}, {1.0, 0.01}, {3.0, 0.02},
            {2.0, 0.5},  {5.0, 0.5},  {20.0, 0.2}, {150.0, 0.1}, {300.0, 0.05}};
}

void RunConfig::validate() const {
    require(basis.radial_order >= 3 && basis.radial_order <= 64, "basis.radial_order", "must be in [3, 64]");
    require(basis.angular_max >= 2 && basis.angular_max <= 32, "basis.angular_max", "must be in [2, 32]");
    require(basis.quad_points >= 0, "basis.quad_points", "must be >= 0");
    {
        std::vector<int> s = basis.sectors;
        std::sort(s.begin(), s.end());
        require(s == std::vector<int>{0, 1}, "basis.sectors", "must be [0, 1]");
    }
    require(std::isfinite(r0) && std::isfinite(r1) && r0 > 0.0 && r0 < r1, "thresholds", "need 0 < r0 < r1");
    require(eps_list.size() >= 4, "grids.eps", "need at least 4 values");
    require(positive_all(eps_list) && strictly_decreasing(eps_list) && eps_list.front() < 1.0, "grids.eps",
            "need strictly decreasing values in (0, 1)");
    require(s_max > 0.0 && std::isfinite(s_max), "grids.s_max", "must be positive");
    require(s_min > 0.0 && s_min < s_max, "grids.s_min", "need 0 < s_min < s_max");
    require(s_nodes >= 2 && s_nodes <= 64, "grids.s_nodes", "must be in [2, 64]");
    require(t_min > 0.0 && t_min < t_max && std::isfinite(t_max), "grids.t_min", "need 0 < t_min < t_max");
    require(t_points >= 4, "grids.t_points", "must be >= 4");
    for (const auto& e : experiments) require(kCommands.count(e) > 0, "run.experiments", "unknown experiment '" + e + "'");
    require(!cache_dir.empty(), "run.cache_dir", "must not be empty");
    require(!out_dir.empty(), "run.out_dir", "must not be empty");
    require(jobs >= 1 && jobs <= 256, "run.jobs", "must be in [1, 256]");
    for (const auto& [s, e] : spectrum_samples)
        require(s > 0.0 && e > 0.0 && std::isfinite(s) && std::isfinite(e), "spectrum.samples", "need positive (s, eps)");
    require(contraction_states >= 1, "spectrum.contraction_states", "must be >= 1");
    require(kappas.size() >= 4 && positive_all(kappas), "dispersion.kappas", "need at least 4 positive values");
    require(z_s > 0.0, "dispersion.z_s", "must be positive");
    require(z_eps.size() >= 4 && positive_all(z_eps), "dispersion.z_eps", "need at least 4 positive values");
    require(crossing_eps.size() >= 2 && positive_all(crossing_eps) && strictly_decreasing(crossing_eps),
            "dispersion.crossing_eps", "need at least 2 strictly decreasing positive values");
    require(highfreq_eps > 0.0, "dispersion.highfreq_eps", "must be positive");
    require(highfreq_kappa.size() >= 2 && positive_all(highfreq_kappa), "dispersion.highfreq_kappa",
            "need at least 2 positive values");
    require(fluid_t_min > 0.0 && fluid_t_min < fluid_t_max, "fluid.t_min", "need 0 < t_min < t_max");
    require(fluid_points >= 4, "fluid.points", "must be >= 4");
    require(!data_kinds.empty(), "converge.data_kinds", "must not be empty");
    for (const auto& k : data_kinds)
        require(k == "generic" || k == "well_prepared", "converge.data_kinds", "unknown data kind '" + k + "'");
    require(layer_eps > 0.0 && layer_eps < 1.0, "converge.layer_eps", "must be in (0, 1)");
    for (const auto& [s, e] : gap_samples) require(s > 0.0 && e > 0.0, "converge.gap_samples", "need positive (s, eps)");
    require(theta_grid.size() >= 4 && positive_all(theta_grid), "converge.theta_grid", "need at least 4 positive values");
    require(mc_samples >= 0, "converge.mc_samples", "must be >= 0");
    experiment().validate();
}

RunConfig parse_config(const std::string& text, const std::string& source) {
    toml::table root;
    try {
        root = toml::parse(text, source);
    } catch (const toml::parse_error& e) {
        throw ConfigError("<syntax>", static_cast<int>(e.source().begin.line), std::string(e.description()));
    }
    std::map<std::string, int> lines;
    RunConfig c;
    c.source = source;
    Reader r(root, lines);
    const std::set<std::string> sections{"basis", "thresholds", "grids", "run", "spectrum", "dispersion", "fluid", "converge", "report"};
    for (auto&& [k, v] : root)
        if (!sections.count(std::string(k.str()))) throw ConfigError(std::string(k.str()), line_of(v), "unknown section");

    if (auto* t = r.section("basis", {"radial_order", "angular_max", "sectors", "quad_points", "truncation_check"})) {
        r.number(t, "basis", "radial_order", c.basis.radial_order);
        r.number(t, "basis", "angular_max", c.basis.angular_max);
        r.integers(t, "basis", "sectors", c.basis.sectors);
        r.number(t, "basis", "quad_points", c.basis.quad_points);
        r.boolean(t, "basis", "truncation_check", c.truncation_check);
    }
    if (auto* t = r.section("thresholds", {"r0", "r1"})) {
        r.number(t, "thresholds", "r0", c.r0);
        r.number(t, "thresholds", "r1", c.r1);
    }
    if (auto* t = r.section("grids", {"eps", "s_max", "s_min", "s_nodes", "t_min", "t_max", "t_points"})) {
        r.numbers(t, "grids", "eps", c.eps_list);
        r.number(t, "grids", "s_max", c.s_max);
        r.number(t, "grids", "s_min", c.s_min);
        r.number(t, "grids", "s_nodes", c.s_nodes);
        r.number(t, "grids", "t_min", c.t_min);
        r.number(t, "grids", "t_max", c.t_max);
        r.number(t, "grids", "t_points", c.t_points);
    }
    if (auto* t = r.section("run", {"experiments", "cache_dir", "out_dir", "jobs", "seed"})) {
        r.strings(t, "run", "experiments", c.experiments);
        r.string(t, "run", "cache_dir", c.cache_dir);
        r.string(t, "run", "out_dir", c.out_dir);
        r.number(t, "run", "jobs", c.jobs);
        r.number(t, "run", "seed", c.seed);
    }
    if (auto* t = r.section("spectrum", {"samples", "contraction_states"})) {
        r.pairs(t, "spectrum", "samples", c.spectrum_samples);
        r.number(t, "spectrum", "contraction_states", c.contraction_states);
    }
    if (auto* t = r.section("dispersion", {"kappas", "z_s", "z_eps", "crossing_eps", "highfreq_eps", "highfreq_kappa"})) {
        r.numbers(t, "dispersion", "kappas", c.kappas);
        r.number(t, "dispersion", "z_s", c.z_s);
        r.numbers(t, "dispersion", "z_eps", c.z_eps);
        r.numbers(t, "dispersion", "crossing_eps", c.crossing_eps);
        r.number(t, "dispersion", "highfreq_eps", c.highfreq_eps);
        r.numbers(t, "dispersion", "highfreq_kappa", c.highfreq_kappa);
    }
    if (auto* t = r.section("fluid", {"t_min", "t_max", "points"})) {
        r.number(t, "fluid", "t_min", c.fluid_t_min);
        r.number(t, "fluid", "t_max", c.fluid_t_max);
        r.number(t, "fluid", "points", c.fluid_points);
    }
    if (auto* t = r.section("converge", {"data_kinds", "second_order", "layer_eps", "gap_samples", "theta_grid", "mc_samples"})) {
        r.strings(t, "converge", "data_kinds", c.data_kinds);
        r.boolean(t, "converge", "second_order", c.second_order);
        r.number(t, "converge", "layer_eps", c.layer_eps);
        r.pairs(t, "converge", "gap_samples", c.gap_samples);
        r.numbers(t, "converge", "theta_grid", c.theta_grid);
        r.number(t, "converge", "mc_samples", c.mc_samples);
    }
    if (auto* t = r.section("report", {"compare_dir"})) r.string(t, "report", "compare_dir", c.compare_dir);

    try {
        c.validate();
    } catch (const ConfigError& e) {
        auto it = lines.find(e.field);
        if (it == lines.end()) it = lines.find(e.field.substr(0, e.field.find('.')));
        const std::string msg = std::string(e.what()).substr(std::string(error_text(e.field, 0, "")).size());
        throw ConfigError(e.field, it == lines.end() ? 0 : it->second, msg);
    } catch (const std::invalid_argument& e) {
        throw ConfigError("grids", lines.count("grids") ? lines["grids"] : 0, e.what());
    }
    return c;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("<file>", 0, "cannot read " + path.string());
    std::ostringstream os;
    os << in.rdbuf();
    return parse_config(os.str(), path.string());
}

}  // namespace ksl
