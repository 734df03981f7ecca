#include "doctest.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <random>

#include "zdmix/billiard.hpp"

using namespace zdmix;

namespace {

const double kPi = 3.14159265358979323846;

const Corridor* find_corridor(const HorizonInfo& h, int a, int b) {
    for (const Corridor& c : h.corridors)
        if ((c.w[0] == a && c.w[1] == b) || (c.w[0] == -a && c.w[1] == -b)) return &c;
    return nullptr;
}

double angle_gap(double a, double b) {
    double d = std::fmod(std::abs(a - b), 2 * kPi);
    return std::min(d, 2 * kPi - d);
}

}  // namespace

TEST_CASE("table validation") {
    CHECK_NOTHROW(finite_horizon_table());
    CHECK_NOTHROW(infinite_horizon_table());
    CHECK_THROWS_AS(BilliardTable::make({{{0, 0}, 0.4}, {{0.5, 0.5}, 0.35}}), TableError);
    CHECK_THROWS_AS(BilliardTable::make({{{0, 0}, 0.5}}), TableError);
    CHECK_THROWS_AS(BilliardTable::make({{{0.1, 0.1}, 0.2}, {{0.9, 0.9}, 0.1}}), TableError);  // overlap across the cell edge
    CHECK_THROWS_AS(BilliardTable::make({}), TableError);

    Config cfg = Config::parse("obstacle.center = 0, 0\nobstacle.radius = 0.4\nobstacle.center = 0.5, 0.5\n"
                               "obstacle.radius = 0.2\nflight_cap = 500\n");
    BilliardTable t = BilliardTable::from_config(cfg);
    CHECK(t.obstacles() == 2);
    CHECK(t.flight_cap() == 500);
    CHECK(t.perimeter_total() == doctest::Approx(2 * kPi * 0.6).epsilon(1e-14));
    CHECK(t.hash() != infinite_horizon_table().hash());
    CHECK_THROWS_AS(BilliardTable::from_config(Config::parse("obstacle.center = 0, 0\n")), ConfigError);
}

TEST_CASE("corridors of the single-disk table") {
    HorizonInfo h = classify_horizon(infinite_horizon_table());
    CHECK_FALSE(h.finite);
    REQUIRE(h.corridors.size() == 4);
    const double diag = 1 / std::sqrt(2.0) - 0.6;
    for (auto [a, b, width] : {std::tuple{1, 0, 0.4}, {0, 1, 0.4}, {1, 1, diag}, {1, -1, diag}}) {
        const Corridor* c = find_corridor(h, a, b);
        REQUIRE(c != nullptr);
        CHECK(std::abs(c->width - width) < 1e-12);
        for (const CorridorLine& line : c->lines) CHECK(line.tangent_ids == std::vector<int>{0});
    }
    CHECK(std::abs(diag - 0.10711) < 1e-5);

    HorizonInfo thin = classify_horizon(BilliardTable::make({{{0, 0}, 0.49}}));
    REQUIRE(thin.corridors.size() == 2);
    for (const Corridor& c : thin.corridors) CHECK(std::abs(c.width - 0.02) < 1e-12);

    CHECK(classify_horizon(finite_horizon_table()).finite);
}

TEST_CASE("corridors of a two-disk infinite table") {
    // heights 0 and 0.25 split the (1,0) period into gaps 0.05 and 0.55, each line touching one obstacle
    BilliardTable t = BilliardTable::make({{{0, 0}, 0.1}, {{0.5, 0.25}, 0.1}});
    HorizonInfo h = classify_horizon(t);
    std::vector<double> widths;
    for (const Corridor& c : h.corridors)
        if (c.w[0] == 1 && c.w[1] == 0) {
            widths.push_back(c.width);
            CHECK(c.lines[0].tangent_ids.size() == 1);
            CHECK(c.lines[1].tangent_ids.size() == 1);
        }
    std::sort(widths.begin(), widths.end());
    REQUIRE(widths.size() == 2);
    CHECK(std::abs(widths[0] - 0.05) < 1e-12);
    CHECK(std::abs(widths[1] - 0.55) < 1e-12);
}

TEST_CASE("sigma infinity") {
    Tensor s = sigma_infinity(infinite_horizon_table());
    const double P = 2 * kPi * 0.3;
    const double diag = 1 / std::sqrt(2.0) - 0.6;
    // axis corridors: 4 * 0.16 / (2 P); diagonals: 4 * diag^2 / (2 sqrt2 P) each, two of them
    const double expect = 4 * 0.16 / (2 * P) + 2 * 4 * diag * diag / (2 * std::sqrt(2.0) * P);
    CHECK(std::abs(s[0] - expect) < 1e-12);
    CHECK(std::abs(s[3] - expect) < 1e-12);
    CHECK(std::abs(s[1]) < 1e-15);
    CHECK(s[1] == s[2]);
    CHECK_THROWS_AS(sigma_infinity(finite_horizon_table()), TableError);

    // smaller disk: wider corridors, larger matrix in Loewner order
    Tensor t = sigma_infinity(BilliardTable::make({{{0, 0}, 0.25}}));
    Tensor diff = t - s;
    CHECK(diff[0] > 0);
    CHECK(diff[0] * diff[3] - diff[1] * diff[2] > 0);
}

TEST_CASE("head-on collision") {
    BilliardTable t = infinite_horizon_table();
    PhaseState s;
    s.theta = 0;
    s.phi = 0;
    Collision c = next_collision(t, s);
    CHECK(c.kappa == Step{1, 0});
    CHECK(std::abs(c.flight_length - 0.4) < 1e-12);
    CHECK(angle_gap(c.state.theta, kPi) < 1e-12);
    CHECK(std::abs(c.state.phi) < 1e-12);
    CHECK(c.state.cell == Step{1, 0});

    // glancing shot at the diagonal neighbour
    PhaseState g;
    g.theta = kPi / 4;
    g.phi = 0;
    Collision d = next_collision(t, g);
    CHECK(d.kappa == Step{1, 1});
    CHECK(std::abs(d.flight_length - (std::sqrt(2.0) - 0.6)) < 1e-12);
}

TEST_CASE("unbounded flight is reported") {
    BilliardTable t = BilliardTable::make({{{0, 0}, 0.3}}, 1000);
    PhaseState s;
    s.theta = kPi / 2;  // top of the disk, gliding along the (1,0) corridor edge
    s.phi = -kPi / 2 + 1e-9;
    CHECK_THROWS_AS(next_collision(t, s), FlightError);
}

TEST_CASE("invariant sampling") {
    std::mt19937_64 rng(7);
    BilliardTable t = finite_horizon_table();
    const int N = 200000;
    double sum = 0, sum2 = 0;
    int first = 0;
    for (int i = 0; i < N; ++i) {
        PhaseState s = sample_invariant(t, rng);
        CHECK_UNARY(std::abs(s.phi) < kPi / 2);
        double c = std::cos(s.phi);
        sum += c;
        sum2 += c * c;
        first += s.obstacle == 0;
    }
    const double mean = sum / N, sd = std::sqrt((sum2 / N - mean * mean) / N);
    CHECK(std::abs(mean - kPi / 4) < 3 * sd);
    const double p = 0.4 / 0.6;
    CHECK(std::abs(double(first) / N - p) < 3 * std::sqrt(p * (1 - p) / N));
}

TEST_CASE("phase and fast forms agree") {
    std::mt19937_64 rng(3);
    BilliardTable t = finite_horizon_table();
    for (int i = 0; i < 100; ++i) {
        PhaseState s = sample_invariant(t, rng);
        PhaseState r = to_phase(to_fast(s), s.cell);
        CHECK(angle_gap(r.theta, s.theta) < 1e-13);
        CHECK(std::abs(r.phi - s.phi) < 1e-13);
        FastState f = to_fast(s);
        CHECK(dot(f.n, f.v) >= 0);
    }
}

TEST_CASE("time reversal") {
    std::mt19937_64 rng(11);
    for (const BilliardTable& t : {finite_horizon_table(), infinite_horizon_table()}) {
        double worst = 0;
        for (int i = 0; i < 20000; ++i) {
            PhaseState x = sample_invariant(t, rng);
            FastState f = to_fast(x);
            FastState back = time_reverse(time_reverse(f));
            CHECK_UNARY(std::abs(back.v.x - f.v.x) + std::abs(back.v.y - f.v.y) < 1e-14);

            Step k1 = advance(t, f);
            FastState y = time_reverse(f);
            Step k2 = advance(t, y);
            y = time_reverse(y);
            REQUIRE(y.obstacle == x.obstacle);
            CHECK_UNARY(k1[0] == -k2[0]);
            CHECK_UNARY(k1[1] == -k2[1]);
            FastState x0 = to_fast(x);
            worst = std::max({worst, std::hypot(y.n.x - x0.n.x, y.n.y - x0.n.y), std::hypot(y.v.x - x0.v.x, y.v.y - x0.v.y)});
        }
        CHECK(worst < 1e-9);
    }
    PhaseState s;
    s.phi = 0.3;
    CHECK(time_reverse(time_reverse(s)).phi == s.phi);
    CHECK(time_reverse(s).phi == -0.3);
}

TEST_CASE("orbit cocycle and bounded finite-horizon steps") {
    std::mt19937_64 rng(5);
    BilliardTable t = finite_horizon_table();
    int maxk = 0;
    for (int i = 0; i < 200; ++i) {
        PhaseState x = sample_invariant(t, rng);
        OrbitRecord zero = orbit(t, x, 0);
        CHECK(zero.displacement == Step{0, 0});
        // short composition: the angle round trip perturbs the state at rounding level only
        OrbitRecord n1 = orbit(t, x, 4);
        OrbitRecord m1 = orbit(t, n1.final_state, 3);
        OrbitRecord nm = orbit(t, x, 7);
        CHECK(nm.displacement[0] == n1.displacement[0] + m1.displacement[0]);
        CHECK(nm.displacement[1] == n1.displacement[1] + m1.displacement[1]);
        OrbitRecord a = orbit(t, x, 30, true);
        Step sum{0, 0};
        for (const Step& k : a.kappas) {
            sum = {sum[0] + k[0], sum[1] + k[1]};
            maxk = std::max({maxk, std::abs(k[0]), std::abs(k[1])});
        }
        CHECK(sum == a.displacement);
        CHECK(a.cells.back()[0] - a.cells.front()[0] == a.displacement[0]);
        CHECK(a.cells.back()[1] - a.cells.front()[1] == a.displacement[1]);
    }
    CHECK(maxk <= 3);
}

TEST_CASE("infinite horizon flights grow with the sample") {
    std::mt19937_64 rng(9);
    BilliardTable t = infinite_horizon_table();
    double small = 0, large = 0;
    for (int i = 0; i < 100000; ++i) {
        FastState f = to_fast(sample_invariant(t, rng));
        double len = 0;
        advance(t, f, &len);
        (i < 1000 ? small : large) = std::max(i < 1000 ? small : large, len);
    }
    CHECK(large > small);
    CHECK(large > 10);
}

TEST_CASE("trace cache round trip") {
    std::mt19937_64 rng(1);
    BilliardTable t = finite_horizon_table();
    std::vector<std::vector<Step>> traces;
    std::vector<OrbitRecord> recs;
    for (int i = 0; i < 5; ++i) {
        recs.push_back(orbit(t, sample_invariant(t, rng), 40, true));
        traces.push_back(recs.back().kappas);
    }
    auto dir = std::filesystem::temp_directory_path();
    std::string path = (dir / "zdmix_trace_test.bin").string();
    write_trace_cache(path, t.hash(), 1, traces);
    TraceCache c = read_trace_cache(path);
    CHECK(c.config_hash == t.hash());
    CHECK(c.seed == 1);
    CHECK(c.traces == traces);
    std::string csv = (dir / "zdmix_trace_test.csv").string();
    write_trace_csv(csv, recs);
    CHECK(std::filesystem::file_size(csv) > 100);
    std::filesystem::remove(path);
    std::filesystem::remove(csv);
    CHECK_THROWS(read_trace_cache(csv));
}

TEST_CASE("collision throughput") {
    std::mt19937_64 rng(2);
    BilliardTable t = finite_horizon_table();
    FastState f = to_fast(sample_invariant(t, rng));
    const int N = 2000000;
    long long sx = 0;
    auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < N; ++i) sx += advance(t, f)[0];
    double ns = std::chrono::duration<double, std::nano>(std::chrono::steady_clock::now() - t0).count() / N;
    MESSAGE("finite table: " << ns << " ns per collision (drift " << sx << ")");
    CHECK(ns < 2000);
}
