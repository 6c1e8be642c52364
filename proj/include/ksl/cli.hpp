#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ksl/collision_ops.hpp"
#include "ksl/convergence_lab.hpp"
#include "ksl/fluid_limits.hpp"
#include "ksl/velocity_basis.hpp"

namespace ksl {

struct ConfigError : std::runtime_error {
    ConfigError(const std::string& field, int line, const std::string& what);
    std::string field;
    int line = 0;
};

struct RunConfig {
    BasisSpec basis;
    bool truncation_check = true;  // repeat at (2 N_r, l_max + 2)
    double r0 = 0.1, r1 = 10.0;
    std::vector<double> eps_list{0.2, 0.1, 0.05, 0.025, 0.0125};
    double s_max = 8.0, s_min = 1e-3;
    int s_nodes = 6;
    double t_min = 1e-3, t_max = 1e2;
    int t_points = 16;
    std::vector<std::string> experiments{"assemble", "transport", "spectrum", "dispersion", "fluid", "converge", "report"};
    std::string cache_dir = "cache", out_dir = "out";
    int jobs = 1;
    std::uint64_t seed = 1;

    // spectrum
    std::vector<std::pair<double, double>> spectrum_samples;  // (s, eps); empty selects the default set
    int contraction_states = 100;
    // dispersion
    std::vector<double> kappas{0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07, 0.08};
    double z_s = 1.0;
    std::vector<double> z_eps{0.1, 0.05, 0.025, 0.0125};
    std::vector<double> crossing_eps{0.02, 0.01, 0.005};
    double highfreq_eps = 0.1;
    std::vector<double> highfreq_kappa{20.0, 28.2842712474619, 40.0, 56.5685424949238, 80.0};
    // fluid
    double fluid_t_min = 1e2, fluid_t_max = 1e4;  // asymptotic fit window; [1, 1e3] is reported alongside
    int fluid_points = 10;
    // converge
    std::vector<std::string> data_kinds{"well_prepared", "generic"};
    bool second_order = true;
    double layer_eps = 0.0125;
    std::vector<std::pair<double, double>> gap_samples{{1.0, 0.05}, {2.0, 0.02}, {0.5, 0.02}};
    std::vector<double> theta_grid{10.0, 20.0, 40.0, 80.0, 160.0, 320.0, 640.0, 1000.0};
    long mc_samples = 10000000;
    // report
    std::string compare_dir;  // second run directory for the determinism check

    std::string source;  // path or "<defaults>"
    ExperimentConfig experiment() const;
    std::vector<std::pair<double, double>> resolved_spectrum_samples() const;
    void validate() const;
};

RunConfig parse_config(const std::string& text, const std::string& source = "<string>");
RunConfig load_config(const std::filesystem::path& path);

// Binary cache: magic "KSLB", u32 version, spec fields, named row-major little-endian f64 arrays.
struct CacheEntry {
    std::filesystem::path file, manifest;
    std::string key, sha256;
    bool loaded = false;   // false: assembled and written
    bool rebuilt = false;  // an existing entry failed verification
    std::string warning;
};

std::string cache_key(const BasisSpec& spec, const CollisionOptions& opt);
void write_cache(const std::filesystem::path& file, const Basis& b, const CollisionMatrices& c);
// Throws std::runtime_error on malformed content.
CollisionMatrices read_cache(const std::filesystem::path& file, const Basis& b);
// Load a verified cache entry or assemble and write one.
CollisionMatrices cached_collision(const std::filesystem::path& dir, const Basis& b, const CollisionOptions& opt,
                                   CacheEntry* entry = nullptr);

// Lazily built shared state of one run.
class RunContext {
public:
    explicit RunContext(RunConfig cfg);
    const RunConfig& config() const { return cfg_; }
    const Basis& basis();
    const CollisionMatrices& collision();
    const Basis& fine_basis();
    const CollisionMatrices& fine_collision();
    const TransportCoefficients& transport();
    const std::vector<CacheEntry>& cache_entries() const { return entries_; }

private:
    RunConfig cfg_;
    std::unique_ptr<Basis> b_, bf_;
    std::unique_ptr<CollisionMatrices> c_, cf_;
    std::unique_ptr<TransportCoefficients> tc_;
    std::vector<CacheEntry> entries_;
};

// Per-command flags; unset values fall back to the config.
struct CommandArgs {
    std::optional<double> s, eps;              // spectrum: single point
    std::string kind = "vmb";                  // spectrum: vmb | boltzmann
    std::string branch;                        // dispersion: branch label
    std::string s_grid;                        // dispersion: a:b:n
    std::vector<double> eps_list;              // dispersion
    std::string experiment;                    // fluid: decay | nsmf (empty: both)
    std::string profile = "lorentz2";          // fluid: radial profile name
};

struct CommandOutput {
    nlohmann::json result;
    std::map<std::string, std::string> files;  // name -> content (CSV / JSON)
    std::map<std::string, double> seconds;     // per-job wall time, never written
    bool ok = true;
};

CommandOutput cmd_assemble(RunContext& ctx, const CommandArgs& args = {});
CommandOutput cmd_transport(RunContext& ctx, const CommandArgs& args = {});
CommandOutput cmd_spectrum(RunContext& ctx, const CommandArgs& args = {});
CommandOutput cmd_dispersion(RunContext& ctx, const CommandArgs& args = {});
CommandOutput cmd_fluid(RunContext& ctx, const CommandArgs& args = {});
CommandOutput cmd_converge(RunContext& ctx, const CommandArgs& args = {});
// Summary over the result files in out_dir.
CommandOutput cmd_report(const RunConfig& cfg);

struct CriterionResult {
    int id = 0;
    std::string name, status;  // "pass", "fail", "not-run"
    std::string detail;
};
// Evaluate all acceptance criteria from per-command results (keys: command names, plus "determinism").
std::vector<CriterionResult> evaluate_criteria(const nlohmann::json& results);

nlohmann::json report_json(const ConvergenceReport& r);
std::string tables_to_csv(const ConvergenceReport& r);
std::string format_double(double v);

// Orchestrator: runs the named commands, owns all writes under out_dir; returns the process exit status.
int run_commands(const RunConfig& cfg, const std::vector<std::string>& commands, const CommandArgs& args = {});
// Radial profiles for the fluid decay experiment: lorentz2, lorentz3, gauss.
std::function<double(double)> fluid_profile(const std::string& name);
int cli_main(int argc, char** argv);

}  // namespace ksl
