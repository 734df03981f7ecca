// Acceptance run: one PASS/FAIL line per criterion, sub-checks indented below it.
// Usage: acceptance [criterion ids...]   (default: all)

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "zdmix/suites.hpp"

using namespace zdmix;

namespace {

struct Outcome {
    bool pass = true;
    std::vector<std::string> lines;
};

void absorb(Outcome& out, const SuiteResult& r, int id) {
    bool any = false;
    for (const Criterion& c : r.criteria) {
        if (c.id != id) continue;
        any = true;
        out.pass = out.pass && c.pass;
        out.lines.push_back(std::string(c.pass ? "ok   " : "FAIL ") + c.name + ": " + c.measured);
    }
    if (!any) {
        out.pass = false;
        out.lines.push_back("FAIL suite " + r.kind + " produced no checks");
    }
    for (const std::string& n : r.notes) out.lines.push_back("note " + n);
}

Outcome from_suite(const std::string& kind, int id, const SuiteOptions& o = {}) {
    Outcome out;
    try {
        absorb(out, run_suite(kind, o), id);
    } catch (const std::exception& e) {
        out.pass = false;
        out.lines.push_back(std::string("FAIL ") + kind + " aborted: " + e.what());
    }
    return out;
}

/// Maximum relative difference between the value columns of two reports with the same rows.
double report_distance(const std::string& a, const std::string& b) {
    std::istringstream ia(a), ib(b);
    std::string la, lb;
    double worst = 0;
    while (true) {
        const bool ga = static_cast<bool>(std::getline(ia, la)), gb = static_cast<bool>(std::getline(ib, lb));
        if (ga != gb) return INFINITY;
        if (!ga) break;
        if (la == lb) continue;
        std::vector<std::string> fa, fb;
        std::string cell;
        for (std::stringstream s(la); std::getline(s, cell, ',');) fa.push_back(cell);
        for (std::stringstream s(lb); std::getline(s, cell, ',');) fb.push_back(cell);
        if (fa.size() != fb.size() || fa.size() != 6 || fa[0] != fb[0] || fa[1] != fb[1]) return INFINITY;
        for (int k : {2, 3}) {
            const double x = std::stod(fa[static_cast<std::size_t>(k)]), y = std::stod(fb[static_cast<std::size_t>(k)]);
            worst = std::max(worst, std::abs(x - y) / std::max({std::abs(x), std::abs(y), 1e-300}));
        }
    }
    return worst;
}

Outcome determinism() {
    Outcome out;
    try {
        SuiteOptions o;
        o.seed = 20240611;
        o.batches = 32;
        o.steps = 100000;
        o.samples = 100000;
        o.workers = 2;
        const std::string first = report_csv(verify_mixing(o));
        const std::string second = report_csv(verify_mixing(o));
        const bool same = first == second;
        out.pass = same;
        out.lines.push_back(std::string(same ? "ok   " : "FAIL ") + "same seed, same report bytes: " +
                            std::to_string(first.size()) + " bytes, " + (same ? "identical" : "different"));

        o.workers = 1;
        const std::string w1 = report_csv(verify_mixing(o));
        o.workers = 3;
        const std::string w3 = report_csv(verify_mixing(o));
        const double d = report_distance(w1, w3);
        out.pass = out.pass && d < 1e-12;
        char buf[128];
        std::snprintf(buf, sizeof buf, "workers 1 vs 3: max relative difference %.3g (tol 1e-12)", d);
        out.lines.push_back(std::string(d < 1e-12 ? "ok   " : "FAIL ") + buf);

        o.seed += 1;
        const bool differs = report_csv(verify_mixing(o)) != w3;
        out.pass = out.pass && differs;
        out.lines.push_back(std::string(differs ? "ok   " : "FAIL ") + "a different seed gives a different report");
    } catch (const std::exception& e) {
        out.pass = false;
        out.lines.push_back(std::string("FAIL determinism run aborted: ") + e.what());
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    std::set<int> wanted;
    for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));

    struct Item {
        int id;
        const char* title;
        std::function<Outcome()> run;
    };
    // mixing and infinite-horizon suites each carry more than one criterion; run them once
    std::map<std::string, SuiteResult> cache;
    std::map<std::string, std::string> failures;
    auto cached = [&](const std::string& kind, int id) {
        Outcome out;
        if (!cache.count(kind) && !failures.count(kind)) {
            try {
                cache[kind] = run_suite(kind, SuiteOptions{});
            } catch (const std::exception& e) {
                failures[kind] = e.what();
            }
        }
        if (failures.count(kind)) {
            out.pass = false;
            out.lines.push_back("FAIL " + kind + " aborted: " + failures[kind]);
        } else {
            absorb(out, cache[kind], id);
        }
        return out;
    };
    const std::vector<Item> items = {
        {1, "tensor identities and Gaussian derivatives", [] { return from_suite("verify-tensor", 1); }},
        {2, "toy exact local limit rate", [] { return from_suite("verify-llt", 2); }},
        {3, "toy expansion orders 2 and 3, A-triangle, W5 constants", [] { return from_suite("verify-toy", 3); }},
        {4, "coboundary algebra", [] { return from_suite("verify-coefficients", 4); }},
        {5, "billiard invariance and symmetry", [&] { return cached("verify-mixing", 5); }},
        {6, "billiard finite-horizon mixing", [&] { return cached("verify-mixing", 6); }},
        {7, "billiard infinite horizon", [] { return from_suite("verify-infinite", 7); }},
        {8, "determinism", [] { return determinism(); }},
    };

    int failed = 0;
    for (const Item& it : items) {
        if (!wanted.empty() && !wanted.count(it.id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o = it.run();
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("%s criterion %d: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", it.id, it.title, secs);
        for (const std::string& l : o.lines) std::printf("    %s\n", l.c_str());
        std::fflush(stdout);
        failed += o.pass ? 0 : 1;
    }
    std::printf("%s: %d criteria failed\n", failed ? "FAILED" : "ALL PASS", failed);
    return failed ? 1 : 0;
}
