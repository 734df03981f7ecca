#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "zdmix/billiard.hpp"
#include "zdmix/config.hpp"
#include "zdmix/markov.hpp"

namespace zdmix {

/// One pass/fail line; id is the acceptance criterion it belongs to.
struct Criterion {
    int id = 0;
    std::string name;
    bool pass = false;
    std::string measured;
};

/// Report row: statistic, n, value, stderr, batches, seed. A row named "<curve>@predicted"
/// carries the prediction for the curve of the same name.
struct ReportRow {
    std::string statistic;
    double n = 0;
    double value = 0;
    double stderr_ = 0;
    int batches = 0;
    std::uint64_t seed = 0;
};

struct SuiteResult {
    std::string kind;
    std::vector<Criterion> criteria;
    std::vector<ReportRow> rows;
    std::vector<std::string> notes;  ///< metadata flags, e.g. single_obstacle_cell=yes

    bool passed() const;
};

struct SuiteOptions {
    std::uint64_t seed = 1;
    int workers = 0;
    int batches = 64;
    long long steps = 0;    ///< collisions per batch orbit (0: suite default)
    long long samples = 0;  ///< invariance / symmetry sample count (0: suite default)
    std::vector<int> ladder;
    std::optional<MarkovModel> model;  ///< toy suites (each has its own default)
    std::optional<BilliardTable> table;
};

extern const std::vector<std::string> kExperimentKinds;

SuiteResult verify_tensor(const SuiteOptions& o);
SuiteResult verify_llt(const SuiteOptions& o);
SuiteResult verify_toy(const SuiteOptions& o);
SuiteResult verify_coefficients(const SuiteOptions& o);
SuiteResult verify_mixing(const SuiteOptions& o);
SuiteResult verify_infinite(const SuiteOptions& o);

/// Dispatch by kind; throws ConfigError for an unknown kind.
SuiteResult run_suite(const std::string& kind, const SuiteOptions& o);

/// Options from a run config (keys listed by config_schema()).
SuiteOptions options_from_config(const Config& cfg);
std::string config_schema();

/// Library version, compiler and Eigen version, one `key value` per line.
std::string build_info();

std::string report_csv(const SuiteResult& r);
std::string summary_text(const SuiteResult& r);

/// Long-format plot data `curve,n,measured,predicted,stderr` from report.csv text.
std::string plotdata_csv(const std::string& report_csv_text);

}  // namespace zdmix
