#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <exception>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "zdmix/billiard.hpp"
#include "zdmix/coefficients.hpp"
#include "zdmix/markov.hpp"
#include "zdmix/observables.hpp"

namespace zdmix {

/// Counter-based stream: draw k of stream (seed, stream) is splitmix64(key + k * golden).
class StreamRng {
public:
    using result_type = std::uint64_t;
    StreamRng(std::uint64_t seed, std::uint64_t stream);
    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return ~result_type(0); }
    result_type operator()();

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

/// requested > 0 wins, then the WORKERS environment variable, then the hardware count.
int resolve_workers(int requested);

struct McSettings {
    std::uint64_t seed = 1;
    int batches = 64;
    int workers = 0;
};

/// body(b) for every batch on a small pool; results land in batch order whatever the worker count.
template <class R>
std::vector<R> run_batches(int batches, int workers, const std::function<R(int)>& body) {
    std::vector<R> out(static_cast<std::size_t>(batches));
    const int w = std::max(1, std::min(resolve_workers(workers), batches));
    std::atomic<int> next{0};
    std::exception_ptr err;
    std::mutex err_mu;
    auto work = [&] {
        for (int b = next++; b < batches; b = next++) {
            try {
                out[static_cast<std::size_t>(b)] = body(b);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mu);
                if (!err) err = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (int i = 1; i < w; ++i) pool.emplace_back(work);
    work();
    for (auto& t : pool) t.join();
    if (err) std::rethrow_exception(err);
    return out;
}

struct ScalarStat {
    double mean = 0;
    double stderr_ = 0;
    int batches = 0;
};

/// Mean and standard error over batch values, summed pairwise in batch order.
ScalarStat batch_stat(const std::vector<double>& per_batch);
double pairwise_sum(const double* x, std::size_t n);

/// Exact stationary mean of a base observable on the billiard (cos phi: pi/4, obstacle i: r_i / sum r).
double exact_mean(const BilliardTable& table, const BaseObservable& u);
double exact_mean(const MarkovModel& model, const BaseObservable& u);

/** \brief What the sliding-window engine accumulates along each batch orbit.
 *
 * Windows start at every step of a stationary orbit; for each lag n the window
 * displacement D = S_n o T^k is binned on |l|_inf <= box with weight f0(x_k) g0(x_{k+n})
 * for every requested pair. Pair weights use exact stationary means for centered bases.
 */
struct WindowRequest {
    std::vector<int> lags;
    int box = 2;
    std::vector<std::pair<BaseObservable, BaseObservable>> pairs{{BaseObservable::one(), BaseObservable::one()}};
    int corr_lags = 0;       ///< E[kappa (x) kappa o T^m] for 0 <= m <= corr_lags
    int sample_stride = 0;   ///< keep D for every stride-th window (0: none)
    bool flights = false;    ///< log-binned free-flight lengths
};

struct WindowResult {
    WindowRequest req;
    int batches = 0;
    long long steps_per_batch = 0;
    long long cap_hits = 0;
    long long total_steps = 0;
    double max_flight = 0;
    /// batch x statistic matrix of per-batch means; see the index helpers.
    std::vector<std::vector<double>> batch;
    /// window displacements kept for each lag, batch by batch.
    std::vector<std::vector<std::vector<std::array<long long, 2>>>> samples;  // [lag][batch][i]
    /// flight histogram: counts per bin, bin k covers [2^{(k - offset)/8}, 2^{(k + 1 - offset)/8}).
    std::vector<long long> flight_counts;
    static constexpr int kFlightBinsPerOctave = 8;
    static constexpr int kFlightOffset = 8 * 10;

    int side() const { return 2 * req.box + 1; }
    std::size_t hist_index(int pair, int lag, const Step& l) const;
    std::size_t first_index(int lag, int c) const;
    std::size_t second_index(int lag, int c) const;  ///< c: 0 xx, 1 xy, 2 yy
    std::size_t corr_index(int m, int i, int j) const;
    std::size_t size() const;

    /// CI for any linear functional of the per-batch statistics.
    ScalarStat stat(const std::function<double(const std::vector<double>&)>& linear) const;
    ScalarStat hist(int pair, int lag, const Step& l) const;
};

WindowResult window_statistics(const BilliardTable& table, const WindowRequest& req, const McSettings& s,
                               long long steps_per_batch);
/// Same engine on a Markov chain (state index plays the obstacle role); used as an oracle check.
WindowResult window_statistics(const MarkovModel& model, const WindowRequest& req, const McSettings& s,
                               long long steps_per_batch);

/// Sigma^2 truncated at |m| <= M from the lag correlations, per batch.
std::vector<double> sigma2_batch(const WindowResult& r, const std::vector<double>& b, int M);
struct Sigma2Mc {
    Tensor value, stderr_;
    int M = 0;
};
Sigma2Mc sigma2_mc(const WindowResult& r, int M);

/** \brief C_n(f, g) from the binned window statistics through H(s) = sum_l h_l q_{l+s}.
 *
 * Each (f term, g term) must match one requested pair; H must fit inside the box.
 */
ScalarStat estimate_Cn(const WindowResult& r, const CellObservable& f, const CellObservable& g, int lag_index);

/// Empirical P(S_n = l) on the box (pair 0 must be (1, 1)).
std::map<std::pair<int, int>, ScalarStat> llt_histogram(const WindowResult& r, int lag_index);

/// Gaussian scale of the window displacements from interquartile ranges along x, y and both diagonals.
Tensor robust_covariance(const std::vector<std::array<long long, 2>>& d);
struct CovEstimate {
    Tensor raw, raw_stderr;        ///< empirical E[S_n (x) S_n]
    Tensor robust, robust_stderr;  ///< interquartile Gaussian scale, batch means
};
CovEstimate covariance_at(const WindowResult& r, int lag_index);

struct TailFit {
    double slope = 0;
    double r2 = 0;
    double lo = 0, hi = 0;
    int bins = 0;
};
/// Log-log least squares of the flight-length density over [lo, hi].
TailFit flight_tail_slope(const WindowResult& r, double lo, double hi);

/** \brief Stored stationary orbits, one per batch: steps, base-state labels and cos phi. */
struct Trace {
    std::vector<Step> kappa;
    std::vector<int> state;
    std::vector<float> cosphi;
};

struct TraceSet {
    std::string id;
    int dim = 2;
    bool even = false;
    std::vector<Trace> traces;
};

TraceSet simulate_traces(const BilliardTable& table, const McSettings& s, int length);
TraceSet simulate_traces(const MarkovModel& model, const McSettings& s, int length);

/** \brief CorrelationProvider over stored orbits; answers are batch means, cached per query. */
class MonteCarloProvider : public CorrelationProvider {
public:
    explicit MonteCarloProvider(TraceSet traces);

    int dim() const override { return set_.dim; }
    std::string id() const override { return "montecarlo:" + set_.id; }
    double mean(const BaseObservable& u) const override;
    Tensor moment(const BaseObservable& u, const std::vector<int>& times) const override;
    Tensor moment_stderr(const BaseObservable& u, const std::vector<int>& times) const override;
    Tensor displacement_moment(const BaseObservable& u, const BaseObservable& v, int n, int p) const override;
    Tensor sum_stderr(const BaseObservable& u, const std::vector<std::vector<int>>& time_sets) const override;
    bool assume_even() const override { return set_.even; }

    const TraceSet& traces() const { return set_; }
    std::size_t cache_size() const;

private:
    double value(const BaseObservable& u, const Trace& t, std::size_t k) const;
    double raw_mean(const BaseObservable& u) const;
    struct MomentEntry {
        Tensor value, err;
        std::vector<std::vector<double>> per_trace;  ///< [component][trace]
    };
    const MomentEntry& cached_moment(const BaseObservable& u, const std::vector<int>& times) const;

    TraceSet set_;
    mutable std::mutex mu_;
    mutable std::map<std::string, MomentEntry> moments_;
    mutable std::map<std::string, Tensor> displacement_;
    mutable std::map<std::string, double> means_;
};

}  // namespace zdmix
