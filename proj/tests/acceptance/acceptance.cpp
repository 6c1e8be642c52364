#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ksl/cli.hpp"

namespace {

using nlohmann::json;

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt_seconds(double s) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.1f s", s);
    return buf;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance checks at the default configuration"};
    std::string config_path, reduced_path, work_dir = "acceptance_work";
    std::vector<int> expect_fail;
    app.add_option("--config", config_path, "run configuration (default: built-in defaults)")->check(CLI::ExistingFile);
    app.add_option("--reduced", reduced_path, "configuration for the determinism runs")->check(CLI::ExistingFile);
    app.add_option("--work", work_dir, "scratch directory for caches and outputs");
    app.add_option("--expect-fail", expect_fail, "criteria known to fail; they do not change the exit status");
    CLI11_PARSE(app, argc, argv);

    const std::filesystem::path work(work_dir);
    std::filesystem::remove_all(work);
    std::filesystem::create_directories(work);

    ksl::RunConfig cfg = config_path.empty() ? ksl::RunConfig{} : ksl::load_config(config_path);
    cfg.truncation_check = true;
    cfg.cache_dir = (work / "cache").string();
    cfg.out_dir = (work / "out").string();

    json R;
    std::map<std::string, double> runtime;
    ksl::RunContext ctx(cfg);
    const std::vector<std::pair<std::string, std::function<ksl::CommandOutput()>>> commands{
        {"assemble", [&] { return ksl::cmd_assemble(ctx); }},
        {"transport", [&] { return ksl::cmd_transport(ctx); }},
        {"spectrum", [&] { return ksl::cmd_spectrum(ctx); }},
        {"dispersion", [&] { return ksl::cmd_dispersion(ctx); }},
        {"fluid", [&] { return ksl::cmd_fluid(ctx); }},
        {"converge", [&] { return ksl::cmd_converge(ctx); }},
    };
    double sweep = 0.0;
    for (const auto& [name, run] : commands) {
        const auto t0 = std::chrono::steady_clock::now();
        try {
            ksl::CommandOutput out = run();
            R[name] = out.result;
            for (const auto& [job, s] : out.seconds)
                if (job.rfind("first_order/", 0) == 0) sweep += s;
        } catch (const std::exception& e) {
            std::cerr << name << ": error: " << e.what() << "\n";
        }
        runtime[name] = seconds_since(t0);
        std::cerr << name << ": " << fmt_seconds(runtime[name]) << "\n";
    }

    if (!reduced_path.empty()) {
        ksl::RunConfig rc = ksl::load_config(reduced_path);
        rc.cache_dir = (work / "cache_reduced").string();
        std::vector<std::string> cmds;
        for (const auto& c : rc.experiments)
            if (c != "report") cmds.push_back(c);
        rc.out_dir = (work / "det_a").string();
        rc.jobs = 1;
        const int sa = ksl::run_commands(rc, cmds);
        rc.out_dir = (work / "det_b").string();
        rc.jobs = 2;
        const int sb = ksl::run_commands(rc, cmds);
        rc.compare_dir = (work / "det_a").string();
        const ksl::CommandOutput rep = ksl::cmd_report(rc);
        for (const auto& c : rep.result["criteria"])
            if (c["id"].get<int>() == 12) {
                R["determinism"] = {{"identical", c["status"] == "pass" && sa == 0 && sb == 0},
                                    {"detail", c["detail"]}};
            }
    }

    const std::map<int, std::pair<std::string, double>> budgets{
        {1, {"assemble", 120.0}}, {8, {"fluid", 600.0}}, {9, {"", 1800.0}}};
    const std::set<int> expected(expect_fail.begin(), expect_fail.end());
    int unexpected = 0;
    for (ksl::CriterionResult c : ksl::evaluate_criteria(R)) {
        if (c.id == 12 && R.contains("determinism")) c.detail = R["determinism"]["detail"].get<std::string>();
        bool ok = c.status == "pass";
        if (auto it = budgets.find(c.id); it != budgets.end()) {
            const double t = it->second.first.empty() ? sweep : runtime[it->second.first];
            const bool in_time = t <= it->second.second;
            c.detail += "; runtime " + fmt_seconds(t) + " (<= " + fmt_seconds(it->second.second) + ")";
            ok = ok && in_time;
        }
        const bool known = expected.count(c.id) > 0;
        std::cout << (ok ? "PASS" : "FAIL") << " criterion " << c.id << " " << c.name << ": " << c.detail
                  << (!ok && known ? " [expected failure]" : "") << (ok && known ? " [expected failure passed]" : "")
                  << std::endl;
        if (!ok && !known) ++unexpected;
    }
    return unexpected == 0 ? 0 : 1;
}
