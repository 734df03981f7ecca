// zdmix: run verification suites from a config file and turn their reports into plot data.
//
//   zdmix run <config>            exit 0 all criteria pass, 1 a criterion failed,
//                                 2 config error, 3 runtime error
//   zdmix plotdata <report-dir>   curve,n,measured,predicted,stderr on stdout
//   zdmix print-config-schema

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "zdmix/montecarlo.hpp"
#include "zdmix/suites.hpp"

namespace fs = std::filesystem;
using namespace zdmix;

namespace {

enum Exit { kOk = 0, kCriterion = 1, kConfig = 2, kRuntime = 3 };

std::string timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
    return buf;
}

/// New directory <out>/<hash>-<timestamp>; never reuses an existing one.
fs::path fresh_run_dir(const fs::path& out, const std::string& hash) {
    fs::create_directories(out);
    const std::string base = hash + "-" + timestamp();
    for (int k = 0;; ++k) {
        fs::path p = out / (k ? base + "-" + std::to_string(k) : base);
        if (fs::create_directory(p)) return p;
    }
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::binary);
    f << text;
    if (!f) throw std::runtime_error("cannot write " + p.string());
}

int cmd_run(const std::string& config_path) {
    Config cfg;
    SuiteOptions opts;
    std::string kind;
    try {
        cfg = Config::load(config_path);
        if (!cfg.has("experiment")) throw ConfigError(config_path + ": missing key 'experiment'");
        kind = cfg.get("experiment");
        if (std::find(kExperimentKinds.begin(), kExperimentKinds.end(), kind) == kExperimentKinds.end())
            throw ConfigError(config_path + ": unknown experiment '" + kind + "'");
        opts = options_from_config(cfg);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfig;
    }

    const std::string hash = hex64(cfg.hash());
    fs::path dir;
    SuiteResult result;
    const auto t0 = std::chrono::steady_clock::now();
    try {
        dir = fresh_run_dir(cfg.get_or("output", "runs"), hash);
        write_file(dir / "config.txt", cfg.canonical());
        result = run_suite(kind, opts);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfig;
    } catch (const std::exception& e) {
        std::cerr << "runtime error: " << e.what() << "\n";
        if (!dir.empty()) write_file(dir / "error.txt", std::string(e.what()) + "\n");
        return kRuntime;
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    try {
        write_file(dir / "report.csv", report_csv(result));
        const std::string summary = summary_text(result);
        write_file(dir / "summary.txt", summary);
        std::ostringstream meta;
        meta << "config " << fs::absolute(config_path).string() << "\n"
             << "config_hash " << hash << "\n"
             << "experiment " << kind << "\n"
             << "seed " << opts.seed << "\n"
             << "workers " << resolve_workers(opts.workers) << "\n"
             << "batches " << opts.batches << "\n"
             << build_info() << "wall_seconds " << secs << "\n";
        for (const std::string& n : result.notes) meta << "flag " << n << "\n";
        write_file(dir / "meta.txt", meta.str());
        std::cout << summary << "run directory " << dir.string() << "\n";
    } catch (const std::exception& e) {
        std::cerr << "runtime error: " << e.what() << "\n";
        return kRuntime;
    }
    return result.passed() ? kOk : kCriterion;
}

int cmd_plotdata(const std::string& report_dir) {
    fs::path p = report_dir;
    if (fs::is_directory(p)) p /= "report.csv";
    std::ifstream f(p);
    if (!f) {
        std::cerr << "error: no report at " << p.string() << "\n";
        return kRuntime;
    }
    std::stringstream ss;
    ss << f.rdbuf();
    try {
        std::cout << plotdata_csv(ss.str());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kRuntime;
    }
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Mixing-rate expansions for Z^d-extensions: verification runner"};
    app.require_subcommand(1);

    std::string config_path;
    auto* run = app.add_subcommand("run", "run the experiment named in a config file");
    run->add_option("config", config_path, "config file")->required();

    std::string report_dir;
    auto* plot = app.add_subcommand("plotdata", "long-format plot data from a run directory");
    plot->add_option("report-dir", report_dir, "run directory or report.csv")->required();

    auto* schema = app.add_subcommand("print-config-schema", "list the config keys");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfig;
    }
    if (*run) return cmd_run(config_path);
    if (*plot) return cmd_plotdata(report_dir);
    if (*schema) {
        std::cout << config_schema();
        return kOk;
    }
    return kConfig;
}
