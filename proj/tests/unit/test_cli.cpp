#include <doctest.h>

#include <fstream>
#include <iterator>

#include "fixture.hpp"
#include "ksl/cli.hpp"

using namespace ksl;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("ksl_unit_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

BasisSpec small_spec() {
    BasisSpec s;
    s.radial_order = 4;
    s.angular_max = 4;
    return s;
}

}  // namespace

TEST_CASE("config parsing") {
    const RunConfig c = parse_config(R"(
[basis]
radial_order = 8
angular_max = 4

[grids]
eps = [0.2, 0.1, 0.05, 0.025]

[run]
seed = 42
experiments = ["assemble", "transport"]
)");
    CHECK(c.basis.radial_order == 8);
    CHECK(c.eps_list.size() == 4);
    CHECK(c.seed == 42);
    CHECK(c.experiments.size() == 2);
    const RunConfig d = parse_config("");
    CHECK(d.basis.radial_order == 12);
    CHECK(d.basis.angular_max == 6);
}

TEST_CASE("config errors carry field and line") {
    try {
        parse_config("[basis]\nradial_order = 8\nangluar_max = 4\n");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(e.field == "basis.angluar_max");
        CHECK(e.line == 3);
    }
    try {
        parse_config("[run]\n\njobs = 0\n");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(e.field == "run.jobs");
        CHECK(e.line == 3);
    }
    try {
        parse_config("[grids]\neps = \"small\"\n");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(e.field == "grids.eps");
        CHECK(e.line == 2);
    }
    try {
        parse_config("[basis\nradial_order = 3\n");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(e.field == "<syntax>");
        CHECK(e.line == 1);
    }
    CHECK_THROWS_AS(parse_config("[nonsense]\nx = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[grids]\neps = [0.1, -0.2]\n"), ConfigError);
}

TEST_CASE("cache round trip is byte stable") {
    const fs::path dir = scratch_dir("cache_rt");
    const Basis b = build_basis(small_spec());
    const CollisionMatrices c = assemble_collision(b);
    write_cache(dir / "a.bin", b, c);
    const CollisionMatrices r = read_cache(dir / "a.bin", b);
    write_cache(dir / "b.bin", b, r);
    CHECK(slurp(dir / "a.bin") == slurp(dir / "b.bin"));
    CHECK(r.mu_estimate == c.mu_estimate);
    CHECK(r.null_residual == c.null_residual);
    for (std::size_t k = 0; k < c.L.size(); ++k) CHECK((r.L[k] - c.L[k]).cwiseAbs().maxCoeff() == 0.0);
    CHECK(r.gamma.T == c.gamma.T);

    BasisSpec other = small_spec();
    other.radial_order = 5;
    CHECK_THROWS(read_cache(dir / "a.bin", build_basis(other)));
    CHECK(cache_key(small_spec(), {}) != cache_key(other, {}));
    CollisionOptions no_gamma;
    no_gamma.with_gamma = false;
    CHECK(cache_key(small_spec(), {}) != cache_key(small_spec(), no_gamma));
}

TEST_CASE("corrupted cache is rebuilt with a warning") {
    const fs::path dir = scratch_dir("cache_bad");
    const Basis b = build_basis(small_spec());
    CacheEntry first, second, third;
    const CollisionMatrices c = cached_collision(dir, b, {}, &first);
    CHECK_FALSE(first.loaded);
    CHECK(fs::exists(first.file));
    CHECK(fs::exists(first.manifest));
    cached_collision(dir, b, {}, &second);
    CHECK(second.loaded);
    CHECK(second.warning.empty());
    {
        std::fstream f(first.file, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(200);
        f.put('\x7f');
    }
    const CollisionMatrices r = cached_collision(dir, b, {}, &third);
    CHECK_FALSE(third.loaded);
    CHECK(third.rebuilt);
    CHECK_FALSE(third.warning.empty());
    CHECK(r.mu_estimate == c.mu_estimate);
    CHECK(third.sha256 == first.sha256);
}

TEST_CASE("format_double") {
    CHECK(format_double(0.1) == "0.1");
    CHECK(format_double(-0.0) == "0");
    CHECK(format_double(1.0 / 3.0) == "0.333333333333");
    CHECK(format_double(std::nan("")) == "nan");
    CHECK(format_double(2.5e-17) == "2.5e-17");
}

TEST_CASE("minimal run writes cache, results and manifest") {
    const fs::path dir = scratch_dir("run_min");
    RunConfig cfg;
    cfg.basis = small_spec();
    cfg.truncation_check = false;
    cfg.cache_dir = (dir / "cache").string();
    cfg.out_dir = (dir / "out").string();
    CHECK(run_commands(cfg, {"assemble", "transport"}) == 0);
    CHECK(fs::exists(dir / "out" / "manifest.json"));
    CHECK(fs::exists(dir / "out" / "assemble.json"));
    int bins = 0;
    for (const auto& e : fs::directory_iterator(dir / "cache")) bins += e.path().extension() == ".bin";
    CHECK(bins == 1);
    const auto t = nlohmann::json::parse(slurp(dir / "out" / "transport.json"));
    for (const char* k : {"kappa0", "kappa1", "eta"}) CHECK(t[k].get<double>() > 0.0);
    CHECK(t["a"].size() == 5);
    const auto m = nlohmann::json::parse(slurp(dir / "out" / "manifest.json"));
    CHECK(m["outputs"].size() == 3);
    CHECK(m.contains("environment"));

    // identical rerun, identical bytes
    const std::string first = slurp(dir / "out" / "transport.json");
    cfg.out_dir = (dir / "out2").string();
    CHECK(run_commands(cfg, {"assemble", "transport"}) == 0);
    CHECK(slurp(dir / "out2" / "transport.json") == first);
    CHECK(slurp(dir / "out2" / "manifest.json") == slurp(dir / "out" / "manifest.json"));

    // partial report: every criterion exactly once, missing ones not-run, exit 0
    CHECK(run_commands(cfg, {"report"}) == 0);
    const auto s = nlohmann::json::parse(slurp(dir / "out2" / "summary.json"));
    REQUIRE(s["criteria"].size() == 12);
    for (int i = 0; i < 12; ++i) CHECK(s["criteria"][i]["id"].get<int>() == i + 1);
    CHECK(s["criteria"][4]["status"] == "not-run");
    CHECK(s["criteria"][1]["status"] == "pass");
}

TEST_CASE("unknown command fails") {
    const fs::path dir = scratch_dir("run_bad");
    RunConfig cfg;
    cfg.basis = small_spec();
    cfg.cache_dir = (dir / "cache").string();
    cfg.out_dir = (dir / "out").string();
    CHECK(run_commands(cfg, {"frobnicate"}) != 0);
}

TEST_CASE("spectrum point mode writes the documented columns") {
    const fs::path dir = scratch_dir("spec_pt");
    RunConfig cfg;
    cfg.basis = small_spec();
    cfg.truncation_check = false;
    cfg.cache_dir = (dir / "cache").string();
    cfg.out_dir = (dir / "out").string();
    CommandArgs a;
    a.s = 1.0;
    a.eps = 0.05;
    CHECK(run_commands(cfg, {"spectrum"}, a) == 0);
    const std::string csv = slurp(dir / "out" / "spectrum_vmb.csv");
    CHECK(csv.rfind("s,eps,re,im,branch_label,residual\n", 0) == 0);
    CHECK(csv.find("S1") != std::string::npos);
    CHECK(csv.find('\r') == std::string::npos);
}

TEST_CASE("fluid profiles") {
    CHECK(fluid_profile("lorentz2")(1.0) == doctest::Approx(0.25));
    CHECK(fluid_profile("gauss")(0.0) == doctest::Approx(1.0));
    CHECK_THROWS(fluid_profile("box"));
}
