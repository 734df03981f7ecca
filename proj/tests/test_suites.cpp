#include "doctest.h"

#include <sstream>

#include "zdmix/suites.hpp"

using namespace zdmix;

TEST_CASE("options from a run config") {
    Config cfg = Config::parse(
        "experiment = verify-mixing\nseed = 9\nbatches = 40\nbudget.steps = 5000\nladder = 10, 20\n"
        "table.obstacle.center = 0, 0\ntable.obstacle.radius = 0.4\n"
        "table.obstacle.center = 0.5, 0.5\ntable.obstacle.radius = 0.2\n");
    SuiteOptions o = options_from_config(cfg);
    CHECK(o.seed == 9);
    CHECK(o.batches == 40);
    CHECK(o.steps == 5000);
    CHECK(o.samples == 0);
    CHECK(o.ladder == std::vector<int>{10, 20});
    REQUIRE(o.table);
    CHECK(o.table->obstacles() == 2);
    CHECK_FALSE(o.model);

    SuiteOptions m = options_from_config(Config::parse("model = skew-2d\n"));
    REQUIRE(m.model);
    CHECK(m.model->name() == "skew-2d");
    SuiteOptions inline_model = options_from_config(
        Config::parse("model.dim = 1\nmodel.states = 1\nmodel.branch = 0 0 0.25 1\nmodel.branch = 0 0 0.25 -1\nmodel.branch = 0 0 0.5 0\n"));
    REQUIRE(inline_model.model);
    CHECK(inline_model.model->size() == 1);

    for (const char* bad : {"ladder = 3, 3\n", "ladder = 0, 4\n", "batches = 8\n", "budget.steps = 0\n", "seed = -1\n",
                            "model = nothing\n", "table.obstacle.center = 0, 0\ntable.obstacle.radius = 0.6\n",
                            "model.dim = 1\nmodel.states = 1\nmodel.branch = 0 0 0.7 1\n", "model.file = /no/such/file\n"})
        CHECK_THROWS_AS(options_from_config(Config::parse(bad)), ConfigError);
    CHECK_THROWS_AS(run_suite("verify-nothing", {}), ConfigError);
}

TEST_CASE("report and plot data formats") {
    SuiteResult r;
    r.kind = "demo";
    r.rows = {{"curve", 10, 0.5, 0.01, 64, 3}, {"curve@predicted", 10, 0.49, 0, 0, 3}, {"curve", 20, 0.25, 0.02, 64, 3},
              {"other", 5, 1.0 / 3, 0, 0, 3}};
    const std::string csv = report_csv(r);
    std::istringstream in(csv);
    std::string header, first;
    std::getline(in, header);
    std::getline(in, first);
    CHECK(header == "statistic,n,value,stderr,batches,seed");
    CHECK(first == "curve,10,0.5,0.01,64,3");
    CHECK(csv.find("0.33333333333333331") != std::string::npos);  // round-trip precision

    const std::string plot = plotdata_csv(csv);
    CHECK(plot ==
          "curve,n,measured,predicted,stderr\n"
          "curve,10,0.5,0.48999999999999999,0.01\n"
          "curve,20,0.25,,0.02\n"
          "other,5,0.33333333333333331,,0\n");
    CHECK_THROWS(plotdata_csv("not,a,report\n"));
    CHECK_THROWS(plotdata_csv("statistic,n,value,stderr,batches,seed\nshort,row\n"));

    CHECK_FALSE(r.passed());  // no criteria is not a pass
    r.criteria = {{1, "a", true, "x"}, {1, "b", false, "y"}};
    CHECK_FALSE(r.passed());
    r.criteria[1].pass = true;
    CHECK(r.passed());
    CHECK(summary_text(r).find("PASS [1] a: x") != std::string::npos);
}

TEST_CASE("exact suites pass") {
    for (const char* kind : {"verify-tensor", "verify-coefficients"}) {
        SuiteResult r = run_suite(kind, {});
        INFO(summary_text(r));
        CHECK(r.passed());
        CHECK(r.criteria.size() >= 4);
    }
}

TEST_CASE("mixing suite is reproducible and flags the horizon") {
    SuiteOptions o;
    o.batches = 32;
    o.steps = 20000;
    o.samples = 20000;
    o.workers = 2;
    const std::string a = report_csv(verify_mixing(o)), b = report_csv(verify_mixing(o));
    CHECK(a == b);
    o.table = infinite_horizon_table();
    CHECK_THROWS_AS(verify_mixing(o), ConfigError);
    o.table = finite_horizon_table();
    CHECK_THROWS_AS(verify_infinite(o), ConfigError);
}
