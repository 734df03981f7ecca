#include "doctest.h"

#include <cmath>
#include <random>

#include "zdmix/oracles.hpp"
#include "zdmix/montecarlo.hpp"

using namespace zdmix;

namespace {

McSettings small(std::uint64_t seed = 3, int batches = 32, int workers = 1) {
    McSettings s;
    s.seed = seed;
    s.batches = batches;
    s.workers = workers;
    return s;
}

}  // namespace

TEST_CASE("counter-based streams") {
    StreamRng a(1, 0), b(1, 0), c(1, 1), d(2, 0);
    std::uint64_t x = a();
    CHECK(x == b());
    CHECK(x != c());
    CHECK(x != d());
    // uniformity of the top bits over a short run
    StreamRng r(9, 4);
    double sum = 0;
    const int N = 100000;
    for (int i = 0; i < N; ++i) sum += unit_double(r());
    CHECK(std::abs(sum / N - 0.5) < 4 * std::sqrt(1.0 / 12 / N));
}

TEST_CASE("batch statistics") {
    ScalarStat s = batch_stat({1, 2, 3, 4});
    CHECK(s.mean == 2.5);
    CHECK(std::abs(s.stderr_ - std::sqrt(5.0 / 3 / 4)) < 1e-15);
    CHECK(s.batches == 4);
    CHECK(resolve_workers(3) == 3);
    CHECK(resolve_workers(0) >= 1);
}

TEST_CASE("window engine on a Markov chain matches the exact joint law") {
    MarkovModel m = model_two_state_2d();
    Eigen::VectorXd u(2);
    u << 1.0, -0.5;
    BaseObservable U = BaseObservable::state_vector(u, "u");
    WindowRequest req;
    req.lags = {0, 3, 8};
    req.box = 3;
    req.pairs = {{BaseObservable::one(), BaseObservable::one()}, {U, BaseObservable::one()}};
    req.corr_lags = 20;
    WindowResult r = window_statistics(m, req, small(), 40000);

    CellObservable f = CellObservable::single(U, {{{0, 0}, 1.0}, {{1, 0}, 0.5}}, "f");
    CellObservable g = CellObservable::cell_indicator({0, 0});
    for (int li = 0; li < 3; ++li) {
        const int n = req.lags[static_cast<std::size_t>(li)];
        if (n > 0) {  // at n = 0 the offset -e1 is unreachable
            ScalarStat c = estimate_Cn(r, f, g, li);
            double exact = oracle::exact_Cn(m, f, g, n);
            CHECK(std::abs(c.mean - exact) < 4 * c.stderr_ + 1e-12);
        }
        ScalarStat p = estimate_Cn(r, g, g, li);
        CHECK(std::abs(p.mean - oracle::exact_Cn(m, g, g, n)) < 4 * p.stderr_ + 1e-12);
    }
    CHECK(r.hist(0, 0, {0, 0}).mean == 1.0);

    MarkovProvider exact(m);
    Sigma2Estimate s2 = sigma2(exact, 20);
    Sigma2Mc mc = sigma2_mc(r, 20);
    for (std::size_t k = 0; k < 4; ++k) CHECK(std::abs(mc.value[k] - s2.value[k]) < 4 * mc.stderr_[k] + 1e-12);

    CHECK_THROWS(estimate_Cn(r, CellObservable::cell_indicator({9, 0}), g, 0));
    CHECK_THROWS(estimate_Cn(r, CellObservable::single(BaseObservable::cos_phi(), {{{0, 0}, 1.0}}), g, 0));
}

TEST_CASE("Monte Carlo provider against the exact provider") {
    MarkovModel m = model_two_state_1d();
    MonteCarloProvider mc(simulate_traces(m, small(5), 40000));
    MarkovProvider exact(m);
    Eigen::VectorXd u(2);
    u << 2.0, 0.0;
    BaseObservable U = BaseObservable::state_vector(u, "u");
    for (const std::vector<int>& times : {std::vector<int>{0}, {0, 2}, {-1, 1}, {0, 0}}) {
        Tensor a = mc.moment(U, times), se = mc.moment_stderr(U, times), b = exact.moment(U, times);
        for (std::size_t k = 0; k < a.size(); ++k) CHECK(std::abs(a[k] - b[k]) < 4 * se[k] + 1e-12);
    }
    CHECK(mc.mean(U.centered_version()) == 0.0);
    CHECK(std::abs(mc.mean(U) - exact.mean(U)) < 0.02);
    Tensor d = mc.displacement_moment(BaseObservable::one(), BaseObservable::one(), 10, 2);
    CHECK(std::abs(d[0] - exact.displacement_moment(BaseObservable::one(), BaseObservable::one(), 10, 2)[0]) <
          0.05 * exact.displacement_moment(BaseObservable::one(), BaseObservable::one(), 10, 2)[0]);

    // repeated queries come from the cache, bit for bit
    const std::size_t before = mc.cache_size();
    Tensor again = mc.moment(U, {0, 2});
    CHECK(mc.cache_size() == before);
    CHECK(again.data() == mc.moment(U, {0, 2}).data());

    Sigma2Estimate se = sigma2(mc, 10), sx = sigma2(exact, 10);
    CHECK(std::abs(se.value[0] - sx.value[0]) < 4 * se.stderr_[0]);
}

TEST_CASE("billiard window statistics") {
    BilliardTable t = finite_horizon_table();
    WindowRequest req;
    req.lags = {0, 1, 5};
    req.box = 3;
    req.corr_lags = 6;
    req.pairs = {{BaseObservable::one(), BaseObservable::one()},
                 {BaseObservable::cos_phi().centered_version(), BaseObservable::one()}};
    WindowResult r = window_statistics(t, req, small(11, 32, 1), 20000);
    CellObservable c0 = CellObservable::cell_indicator({0, 0});
    CHECK(estimate_Cn(r, c0, c0, 0).mean == 1.0);
    CHECK(estimate_Cn(r, c0, c0, 2).mean == r.hist(0, 2, {0, 0}).mean);
    for (int li = 1; li < 3; ++li) {
        double total = 0;
        for (const auto& [l, s] : llt_histogram(r, li)) total += s.mean;
        CHECK(total <= 1.0 + 1e-12);
        CHECK(total > 0.9);
        ScalarStat a = r.hist(0, li, {1, 1}), b = r.hist(0, li, {-1, -1});
        CHECK(std::abs(a.mean - b.mean) < 4 * std::hypot(a.stderr_, b.stderr_));
    }
    // lag 0 of E[kappa (x) kappa] is positive semidefinite; lag m and -m agree up to transpose
    const auto& b0 = r.batch[0];
    (void)b0;
    ScalarStat xx = r.stat([&](const std::vector<double>& b) { return b[r.corr_index(0, 0, 0)]; });
    ScalarStat yy = r.stat([&](const std::vector<double>& b) { return b[r.corr_index(0, 1, 1)]; });
    ScalarStat xy = r.stat([&](const std::vector<double>& b) { return b[r.corr_index(0, 0, 1)]; });
    CHECK(xx.mean > 0);
    CHECK(xx.mean * yy.mean - xy.mean * xy.mean >= 0);
    ScalarStat c01 = r.stat([&](const std::vector<double>& b) { return b[r.corr_index(1, 0, 1)] - b[r.corr_index(1, 1, 0)]; });
    CHECK(std::abs(c01.mean) < 4 * c01.stderr_);

    // the worker count does not change a single bit
    WindowResult r3 = window_statistics(t, req, small(11, 32, 3), 20000);
    CHECK(r3.batch == r.batch);
    WindowResult other = window_statistics(t, req, small(12, 32, 1), 20000);
    CHECK(other.batch != r.batch);
}

TEST_CASE("robust covariance recovers a Gaussian scale") {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> z;
    std::vector<std::array<long long, 2>> d;
    for (int i = 0; i < 200000; ++i) {
        const double a = 100 * z(rng), b = 60 * z(rng);
        d.push_back({std::llround(a + 0.5 * b), std::llround(b)});
    }
    Tensor c = robust_covariance(d);
    // covariance of (a + b/2, b): [[100^2 + 30^2, 1800], [1800, 3600]]
    CHECK(std::abs(c[0] / (10000.0 + 900.0) - 1) < 0.02);
    CHECK(std::abs(c[3] / 3600.0 - 1) < 0.02);
    CHECK(std::abs(c[1] / 1800.0 - 1) < 0.05);
}

TEST_CASE("flight tail on the infinite-horizon table") {
    WindowRequest req;
    req.flights = true;
    req.lags = {};
    WindowResult r = window_statistics(infinite_horizon_table(), req, small(2, 16, 1), 200000);
    CHECK(r.cap_hits == 0);
    TailFit f = flight_tail_slope(r, 16, 1024);
    CHECK(std::abs(f.slope + 3) < 0.3);
    CHECK_THROWS(flight_tail_slope(window_statistics(finite_horizon_table(), req, small(2, 4, 1), 10000), 16, 1024));
}
