#include "zdmix/montecarlo.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <sstream>

namespace zdmix {

namespace {

const double kPi = 3.14159265358979323846;

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

using i128 = __int128;

/// Base observable evaluated from (state label, cos phi); kappa components are not available here.
struct PairEval {
    BaseObservable::Kind kind;
    int index;
    double shift;
    Eigen::VectorXd values;

    double operator()(int state, double cosphi) const {
        double x = 0;
        switch (kind) {
            case BaseObservable::Kind::One: x = 1; break;
            case BaseObservable::Kind::StateVector: x = values(state); break;
            case BaseObservable::Kind::CosPhi: x = cosphi; break;
            case BaseObservable::Kind::Obstacle: x = state == index ? 1.0 : 0.0; break;
            case BaseObservable::Kind::KappaComponent: break;
        }
        return x - shift;
    }
};

template <class MeanFn>
PairEval make_eval(const BaseObservable& u, MeanFn mean) {
    if (u.kind == BaseObservable::Kind::KappaComponent)
        throw std::invalid_argument("window statistics cannot weight by kappa components (" + u.key() + ")");
    PairEval e{u.kind, u.index, 0.0, u.values};
    if (u.centered) e.shift = mean(u);
    return e;
}

class BilliardStepper {
public:
    explicit BilliardStepper(const BilliardTable& t) : table_(t) {}
    void reset(StreamRng& rng) { s_ = to_fast(sample_invariant(table_, rng)); }
    int state() const { return s_.obstacle; }
    double cosphi() const { return dot(s_.n, s_.v); }
    bool step(StreamRng&, Step& kappa, double& flight) {
        try {
            kappa = advance(table_, s_, &flight);
        } catch (const FlightError&) {
            return false;
        }
        return true;
    }

private:
    const BilliardTable& table_;
    FastState s_;
};

class MarkovStepper {
public:
    explicit MarkovStepper(const MarkovModel& m) : model_(m) {
        for (const auto& out : m.branches()) {
            std::vector<double> c;
            double acc = 0;
            for (const Branch& b : out) c.push_back(acc += b.prob);
            cum_.push_back(std::move(c));
        }
    }
    void reset(StreamRng& rng) {
        double u = unit_double(rng()), acc = 0;
        state_ = model_.size() - 1;
        for (int a = 0; a < model_.size(); ++a) {
            acc += model_.stationary()(a);
            if (u < acc) {
                state_ = a;
                break;
            }
        }
    }
    int state() const { return state_; }
    double cosphi() const { return 0.0; }
    bool step(StreamRng& rng, Step& kappa, double& flight) {
        const auto& c = cum_[static_cast<std::size_t>(state_)];
        const double u = unit_double(rng()) * c.back();
        std::size_t k = static_cast<std::size_t>(std::upper_bound(c.begin(), c.end(), u) - c.begin());
        k = std::min(k, c.size() - 1);
        const Branch& b = model_.branches()[static_cast<std::size_t>(state_)][k];
        kappa = b.step;
        flight = 1.0;
        state_ = b.to;
        return true;
    }

private:
    const MarkovModel& model_;
    std::vector<std::vector<double>> cum_;
    int state_ = 0;
};

struct BatchOut {
    std::vector<double> stats;
    std::vector<std::vector<std::array<long long, 2>>> samples;
    std::vector<long long> flights;
    long long cap_hits = 0;
    long long steps = 0;
    double max_flight = 0;
};

constexpr int kFlightBins = WindowResult::kFlightBinsPerOctave * 32;

int flight_bin(double len) {
    if (!(len > 0)) return 0;
    int k = static_cast<int>(std::floor(WindowResult::kFlightBinsPerOctave * std::log2(len))) + WindowResult::kFlightOffset;
    return std::clamp(k, 0, kFlightBins - 1);
}

template <class Stepper>
BatchOut run_one_batch(Stepper st, const WindowResult& layout, const std::vector<PairEval>& f,
                       const std::vector<PairEval>& g, std::uint64_t seed, int b, long long steps) {
    const WindowRequest& req = layout.req;
    const int L = static_cast<int>(req.lags.size());
    const int P = static_cast<int>(req.pairs.size());
    const int Mc = req.corr_lags;
    const int side = layout.side();
    const int maxlag = L ? *std::max_element(req.lags.begin(), req.lags.end()) : 0;
    const std::size_t R = static_cast<std::size_t>(std::max(maxlag, Mc) + 1);

    BatchOut out;
    std::vector<double> acc(layout.size(), 0.0);
    std::vector<i128> first(static_cast<std::size_t>(2 * L), 0), second(static_cast<std::size_t>(3 * L), 0);
    std::vector<long long> wcount(static_cast<std::size_t>(L), 0), ccount(static_cast<std::size_t>(Mc + 1), 0);
    std::vector<long long> corr(static_cast<std::size_t>(4 * (Mc + 1)), 0);
    out.samples.resize(static_cast<std::size_t>(L));
    if (req.flights) out.flights.assign(kFlightBins, 0);

    std::vector<long long> px(R), py(R);
    std::vector<int> state(R);
    std::vector<double> cphi(R);
    std::vector<Step> kap(R);

    StreamRng rng(seed, static_cast<std::uint64_t>(b));
    st.reset(rng);
    long long x = 0, y = 0;
    long long filled = 0;  // positions recorded since the last restart
    long long kfilled = 0;
    const long long total = steps + maxlag;
    for (long long t = 0; t <= total; ++t) {
        const std::size_t slot = static_cast<std::size_t>(t % static_cast<long long>(R));
        px[slot] = x;
        py[slot] = y;
        state[slot] = st.state();
        cphi[slot] = st.cosphi();
        ++filled;
        for (int li = 0; li < L; ++li) {
            const int n = req.lags[static_cast<std::size_t>(li)];
            if (filled <= n) continue;
            const std::size_t s0 = static_cast<std::size_t>((t - n) % static_cast<long long>(R));
            const long long dx = x - px[s0], dy = y - py[s0];
            const std::size_t l = static_cast<std::size_t>(li);
            ++wcount[l];
            first[2 * l] += dx;
            first[2 * l + 1] += dy;
            second[3 * l] += i128(dx) * dx;
            second[3 * l + 1] += i128(dx) * dy;
            second[3 * l + 2] += i128(dy) * dy;
            if (req.sample_stride > 0 && wcount[l] % req.sample_stride == 0) out.samples[l].push_back({dx, dy});
            if (std::llabs(dx) <= req.box && std::llabs(dy) <= req.box) {
                const std::size_t cell = static_cast<std::size_t>((dx + req.box) * side + (dy + req.box));
                for (int p = 0; p < P; ++p) {
                    const std::size_t pp = static_cast<std::size_t>(p);
                    const double w = f[pp](state[s0], cphi[s0]) * g[pp](state[slot], cphi[slot]);
                    acc[(pp * static_cast<std::size_t>(L) + l) * static_cast<std::size_t>(side * side) + cell] += w;
                }
            }
        }
        if (t == total) break;
        Step k;
        double len = 0;
        if (!st.step(rng, k, len)) {
            // capped flight: restart from a fresh stationary point, windows in progress are dropped
            ++out.cap_hits;
            st.reset(rng);
            filled = 0;
            kfilled = 0;
            continue;
        }
        ++out.steps;
        if (req.flights) ++out.flights[static_cast<std::size_t>(flight_bin(len))];
        out.max_flight = std::max(out.max_flight, len);
        kap[slot] = k;
        ++kfilled;
        for (int m = 0; m <= Mc && m < kfilled; ++m) {
            const Step& a = kap[static_cast<std::size_t>((t - m) % static_cast<long long>(R))];
            const std::size_t base = static_cast<std::size_t>(4 * m);
            corr[base] += static_cast<long long>(a[0]) * k[0];
            corr[base + 1] += static_cast<long long>(a[0]) * k[1];
            corr[base + 2] += static_cast<long long>(a[1]) * k[0];
            corr[base + 3] += static_cast<long long>(a[1]) * k[1];
            ++ccount[static_cast<std::size_t>(m)];
        }
        x += k[0];
        y += k[1];
    }
    for (int li = 0; li < L; ++li) {
        const std::size_t l = static_cast<std::size_t>(li);
        const double c = wcount[l] ? double(wcount[l]) : 1.0;
        for (int p = 0; p < P; ++p)
            for (int cell = 0; cell < side * side; ++cell)
                acc[(static_cast<std::size_t>(p) * static_cast<std::size_t>(L) + l) * static_cast<std::size_t>(side * side) +
                    static_cast<std::size_t>(cell)] /= c;
        for (int comp = 0; comp < 2; ++comp)
            acc[layout.first_index(li, comp)] = static_cast<double>(static_cast<long double>(first[2 * l + comp]) / c);
        for (int comp = 0; comp < 3; ++comp)
            acc[layout.second_index(li, comp)] = static_cast<double>(static_cast<long double>(second[3 * l + comp]) / c);
    }
    for (int m = 0; m <= Mc; ++m) {
        const double c = ccount[static_cast<std::size_t>(m)] ? double(ccount[static_cast<std::size_t>(m)]) : 1.0;
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j)
                acc[layout.corr_index(m, i, j)] = double(corr[static_cast<std::size_t>(4 * m + 2 * i + j)]) / c;
    }
    out.stats = std::move(acc);
    return out;
}

template <class Stepper, class MeanFn>
WindowResult run_windows(const Stepper& proto, MeanFn mean, const WindowRequest& req, const McSettings& s,
                         long long steps) {
    if (s.batches < 2) throw std::invalid_argument("need at least two batches for a standard error");
    if (steps < 1) throw std::invalid_argument("steps per batch must be positive");
    if (req.box < 0 || req.corr_lags < 0) throw std::invalid_argument("negative box or correlation lag");
    for (int n : req.lags)
        if (n < 0) throw std::invalid_argument("negative window lag");
    WindowResult r;
    r.req = req;
    r.batches = s.batches;
    r.steps_per_batch = steps;
    std::vector<PairEval> f, g;
    for (const auto& [a, b] : req.pairs) {
        f.push_back(make_eval(a, mean));
        g.push_back(make_eval(b, mean));
    }
    std::function<BatchOut(int)> body = [&](int b) { return run_one_batch(proto, r, f, g, s.seed, b, steps); };
    std::vector<BatchOut> outs = run_batches<BatchOut>(s.batches, s.workers, body);
    r.samples.assign(req.lags.size(), {});
    if (req.flights) r.flight_counts.assign(kFlightBins, 0);
    for (BatchOut& o : outs) {
        r.batch.push_back(std::move(o.stats));
        for (std::size_t l = 0; l < req.lags.size(); ++l) r.samples[l].push_back(std::move(o.samples[l]));
        for (std::size_t k = 0; k < o.flights.size(); ++k) r.flight_counts[k] += o.flights[k];
        r.cap_hits += o.cap_hits;
        r.total_steps += o.steps;
        r.max_flight = std::max(r.max_flight, o.max_flight);
    }
    return r;
}

double quantile(std::vector<double>& v, double q) {
    if (v.empty()) return 0.0;
    const double pos = q * double(v.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(lo), v.end());
    const double a = v[lo];
    if (lo + 1 >= v.size()) return a;
    const double b = *std::min_element(v.begin() + static_cast<std::ptrdiff_t>(lo) + 1, v.end());
    return a + (pos - double(lo)) * (b - a);
}

}  // namespace

StreamRng::StreamRng(std::uint64_t seed, std::uint64_t stream) : key_(splitmix64(seed ^ splitmix64(stream + 0x632be59bd9b4e019ULL))) {}

StreamRng::result_type StreamRng::operator()() { return splitmix64(key_ + 0x9e3779b97f4a7c15ULL * counter_++); }

int resolve_workers(int requested) {
    if (requested > 0) return requested;
    if (const char* env = std::getenv("WORKERS")) {
        char* end = nullptr;
        long v = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && v > 0) return static_cast<int>(v);
    }
    unsigned hc = std::thread::hardware_concurrency();
    return hc ? static_cast<int>(hc) : 1;
}

double pairwise_sum(const double* x, std::size_t n) {
    if (n == 0) return 0.0;
    if (n == 1) return x[0];
    const std::size_t h = n / 2;
    return pairwise_sum(x, h) + pairwise_sum(x + h, n - h);
}

ScalarStat batch_stat(const std::vector<double>& v) {
    ScalarStat s;
    s.batches = static_cast<int>(v.size());
    if (v.empty()) return s;
    s.mean = pairwise_sum(v.data(), v.size()) / double(v.size());
    if (v.size() > 1) {
        std::vector<double> dev(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) dev[i] = (v[i] - s.mean) * (v[i] - s.mean);
        s.stderr_ = std::sqrt(pairwise_sum(dev.data(), dev.size()) / double(v.size() - 1) / double(v.size()));
    }
    return s;
}

double exact_mean(const BilliardTable& table, const BaseObservable& u) {
    switch (u.kind) {
        case BaseObservable::Kind::One: return 1.0;
        case BaseObservable::Kind::CosPhi: return kPi / 4;
        case BaseObservable::Kind::Obstacle: {
            if (u.index < 0 || u.index >= table.obstacles()) throw std::out_of_range("no obstacle " + std::to_string(u.index));
            double total = 0;
            for (const Disk& d : table.disks()) total += d.radius;
            return table.disks()[static_cast<std::size_t>(u.index)].radius / total;
        }
        case BaseObservable::Kind::KappaComponent: return 0.0;
        case BaseObservable::Kind::StateVector: break;
    }
    throw std::invalid_argument("observable " + u.key() + " is not defined on the billiard");
}

double exact_mean(const MarkovModel& model, const BaseObservable& u) {
    switch (u.kind) {
        case BaseObservable::Kind::One: return 1.0;
        case BaseObservable::Kind::StateVector: return model.stationary().dot(u.values);
        case BaseObservable::Kind::KappaComponent: return model.stationary().dot(model.mean_step(u.index));
        default: break;
    }
    throw std::invalid_argument("observable " + u.key() + " is not defined on a Markov model");
}

std::size_t WindowResult::hist_index(int pair, int lag, const Step& l) const {
    const std::size_t s = static_cast<std::size_t>(side());
    return ((static_cast<std::size_t>(pair) * req.lags.size() + static_cast<std::size_t>(lag)) * s +
            static_cast<std::size_t>(l[0] + req.box)) * s + static_cast<std::size_t>(l[1] + req.box);
}

std::size_t WindowResult::first_index(int lag, int c) const {
    const std::size_t s = static_cast<std::size_t>(side());
    return req.pairs.size() * req.lags.size() * s * s + static_cast<std::size_t>(2 * lag + c);
}

std::size_t WindowResult::second_index(int lag, int c) const { return first_index(0, 0) + 2 * req.lags.size() + static_cast<std::size_t>(3 * lag + c); }

std::size_t WindowResult::corr_index(int m, int i, int j) const { return second_index(0, 0) + 3 * req.lags.size() + static_cast<std::size_t>(4 * m + 2 * i + j); }

std::size_t WindowResult::size() const { return corr_index(req.corr_lags + 1, 0, 0); }

ScalarStat WindowResult::stat(const std::function<double(const std::vector<double>&)>& linear) const {
    std::vector<double> v;
    v.reserve(batch.size());
    for (const auto& b : batch) v.push_back(linear(b));
    return batch_stat(v);
}

ScalarStat WindowResult::hist(int pair, int lag, const Step& l) const {
    if (std::abs(l[0]) > req.box || std::abs(l[1]) > req.box) throw std::out_of_range("cell outside the histogram box");
    const std::size_t i = hist_index(pair, lag, l);
    return stat([i](const std::vector<double>& b) { return b[i]; });
}

WindowResult window_statistics(const BilliardTable& table, const WindowRequest& req, const McSettings& s,
                               long long steps_per_batch) {
    return run_windows(BilliardStepper(table), [&](const BaseObservable& u) { return exact_mean(table, u); }, req, s,
                       steps_per_batch);
}

WindowResult window_statistics(const MarkovModel& model, const WindowRequest& req, const McSettings& s,
                               long long steps_per_batch) {
    if (model.dim() != 2 && model.dim() != 1) throw std::invalid_argument("window statistics need d = 1 or 2");
    return run_windows(MarkovStepper(model), [&](const BaseObservable& u) { return exact_mean(model, u); }, req, s,
                       steps_per_batch);
}

std::vector<double> sigma2_batch(const WindowResult& r, const std::vector<double>& b, int M) {
    if (M > r.req.corr_lags) throw std::out_of_range("truncation lag beyond the recorded correlations");
    std::vector<double> s(4, 0.0);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
            double v = b[r.corr_index(0, i, j)];
            for (int m = 1; m <= M; ++m) v += b[r.corr_index(m, i, j)] + b[r.corr_index(m, j, i)];
            s[static_cast<std::size_t>(2 * i + j)] = v;
        }
    // symmetrize the lag-0 part as well
    s[1] = s[2] = 0.5 * (s[1] + s[2]);
    return s;
}

Sigma2Mc sigma2_mc(const WindowResult& r, int M) {
    Sigma2Mc out;
    out.M = M;
    out.value = Tensor(2, 2);
    out.stderr_ = Tensor(2, 2);
    for (std::size_t c = 0; c < 4; ++c) {
        ScalarStat st = r.stat([&](const std::vector<double>& b) { return sigma2_batch(r, b, M)[c]; });
        out.value[c] = st.mean;
        out.stderr_[c] = st.stderr_;
    }
    return out;
}

ScalarStat estimate_Cn(const WindowResult& r, const CellObservable& f, const CellObservable& g, int lag_index) {
    if (lag_index < 0 || lag_index >= static_cast<int>(r.req.lags.size())) throw std::out_of_range("lag index");
    std::vector<std::pair<std::size_t, double>> terms;
    for (const CellTerm& ft : f.terms)
        for (const CellTerm& gt : g.terms) {
            int pair = -1;
            for (std::size_t p = 0; p < r.req.pairs.size(); ++p)
                if (r.req.pairs[p].first.key() == ft.base.key() && r.req.pairs[p].second.key() == gt.base.key())
                    pair = static_cast<int>(p);
            if (pair < 0)
                throw std::invalid_argument("no window pair (" + ft.base.key() + ", " + gt.base.key() + ") was recorded");
            // H(s) = sum_l h_l q_{l+s}
            std::map<std::pair<int, int>, double> H;
            for (const auto& [l, w] : ft.weights)
                for (const auto& [lp, wp] : gt.weights) H[{lp[0] - l[0], lp[1] - l[1]}] += w * wp;
            for (const auto& [s, w] : H) {
                if (std::abs(s.first) > r.req.box || std::abs(s.second) > r.req.box)
                    throw std::out_of_range("cell offset outside the histogram box");
                terms.push_back({r.hist_index(pair, lag_index, {s.first, s.second}), w});
            }
        }
    return r.stat([&](const std::vector<double>& b) {
        double v = 0;
        for (const auto& [i, w] : terms) v += w * b[i];
        return v;
    });
}

std::map<std::pair<int, int>, ScalarStat> llt_histogram(const WindowResult& r, int lag_index) {
    if (r.req.pairs.empty() || r.req.pairs[0].first.kind != BaseObservable::Kind::One ||
        r.req.pairs[0].second.kind != BaseObservable::Kind::One || r.req.pairs[0].first.centered ||
        r.req.pairs[0].second.centered)
        throw std::invalid_argument("llt_histogram needs pair 0 to be (1, 1)");
    std::map<std::pair<int, int>, ScalarStat> out;
    for (int a = -r.req.box; a <= r.req.box; ++a)
        for (int b = -r.req.box; b <= r.req.box; ++b) out[{a, b}] = r.hist(0, lag_index, {a, b});
    return out;
}

Tensor robust_covariance(const std::vector<std::array<long long, 2>>& d) {
    // interquartile range of a Gaussian is 2 * 0.6744897501960817 sigma
    const double iqr_sigma = 1.3489795003921634;
    auto var_along = [&](double ex, double ey) {
        std::vector<double> p;
        p.reserve(d.size());
        for (const auto& v : d) p.push_back(ex * double(v[0]) + ey * double(v[1]));
        const double q1 = quantile(p, 0.25), q3 = quantile(p, 0.75);
        const double s = (q3 - q1) / iqr_sigma;
        return s * s;
    };
    const double h = 1 / std::sqrt(2.0);
    const double vx = var_along(1, 0), vy = var_along(0, 1), vd = var_along(h, h), va = var_along(h, -h);
    return Tensor::matrix(vx, 0.5 * (vd - va), 0.5 * (vd - va), vy);
}

CovEstimate covariance_at(const WindowResult& r, int lag_index) {
    CovEstimate c;
    c.raw = c.raw_stderr = c.robust = c.robust_stderr = Tensor(2, 2);
    const int comp_of[4] = {0, 1, 1, 2};
    for (int k = 0; k < 4; ++k) {
        const std::size_t i = r.second_index(lag_index, comp_of[k]);
        ScalarStat st = r.stat([i](const std::vector<double>& b) { return b[i]; });
        c.raw[static_cast<std::size_t>(k)] = st.mean;
        c.raw_stderr[static_cast<std::size_t>(k)] = st.stderr_;
    }
    const auto& per = r.samples[static_cast<std::size_t>(lag_index)];
    std::vector<Tensor> each;
    for (const auto& s : per) {
        if (s.size() < 16) throw std::invalid_argument("too few sampled windows per batch for quartiles");
        each.push_back(robust_covariance(s));
    }
    for (std::size_t k = 0; k < 4; ++k) {
        std::vector<double> v;
        for (const Tensor& t : each) v.push_back(t[k]);
        ScalarStat st = batch_stat(v);
        c.robust[k] = st.mean;
        c.robust_stderr[k] = st.stderr_;
    }
    return c;
}

TailFit flight_tail_slope(const WindowResult& r, double lo, double hi) {
    if (r.flight_counts.empty()) throw std::invalid_argument("flight lengths were not recorded");
    long long total = 0;
    for (long long c : r.flight_counts) total += c;
    std::vector<double> xs, ys;
    for (std::size_t k = 0; k < r.flight_counts.size(); ++k) {
        const double a = std::exp2((double(k) - WindowResult::kFlightOffset) / WindowResult::kFlightBinsPerOctave);
        const double b = std::exp2((double(k) + 1 - WindowResult::kFlightOffset) / WindowResult::kFlightBinsPerOctave);
        if (a < lo || b > hi || r.flight_counts[k] == 0) continue;
        xs.push_back(std::log(std::sqrt(a * b)));
        ys.push_back(std::log(double(r.flight_counts[k]) / double(total) / (b - a)));
    }
    TailFit fit;
    fit.lo = lo;
    fit.hi = hi;
    fit.bins = static_cast<int>(xs.size());
    if (xs.size() < 3) throw std::runtime_error("too few populated flight bins for a tail fit");
    const double n = double(xs.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i] / n;
        my += ys[i] / n;
    }
    double sxx = 0, sxy = 0, syy = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxx += (xs[i] - mx) * (xs[i] - mx);
        sxy += (xs[i] - mx) * (ys[i] - my);
        syy += (ys[i] - my) * (ys[i] - my);
    }
    fit.slope = sxy / sxx;
    fit.r2 = syy > 0 ? sxy * sxy / (sxx * syy) : 1.0;
    return fit;
}

namespace {

template <class Stepper>
Trace record_trace(Stepper st, std::uint64_t seed, int b, int length) {
    StreamRng rng(seed, static_cast<std::uint64_t>(b));
    st.reset(rng);
    Trace t;
    t.kappa.reserve(static_cast<std::size_t>(length));
    t.state.reserve(static_cast<std::size_t>(length));
    t.cosphi.reserve(static_cast<std::size_t>(length));
    for (int k = 0; k < length; ++k) {
        t.state.push_back(st.state());
        t.cosphi.push_back(static_cast<float>(st.cosphi()));
        Step kap;
        double len;
        if (!st.step(rng, kap, len)) throw FlightError("flight cap reached while recording a trace");
        t.kappa.push_back(kap);
    }
    return t;
}

std::string hex(std::uint64_t h) {
    std::ostringstream os;
    os << std::hex << h;
    return os.str();
}

}  // namespace

TraceSet simulate_traces(const BilliardTable& table, const McSettings& s, int length) {
    if (length < 1) throw std::invalid_argument("trace length must be positive");
    TraceSet set;
    set.id = "billiard:" + hex(table.hash()) + ":seed" + std::to_string(s.seed);
    set.dim = 2;
    set.even = true;  // time reversal maps kappa to -kappa
    std::function<Trace(int)> body = [&](int b) { return record_trace(BilliardStepper(table), s.seed, b, length); };
    set.traces = run_batches<Trace>(s.batches, s.workers, body);
    return set;
}

TraceSet simulate_traces(const MarkovModel& model, const McSettings& s, int length) {
    if (length < 1) throw std::invalid_argument("trace length must be positive");
    TraceSet set;
    set.id = "markov:" + model.name() + ":seed" + std::to_string(s.seed);
    set.dim = model.dim();
    set.even = model.even();
    std::function<Trace(int)> body = [&](int b) { return record_trace(MarkovStepper(model), s.seed, b, length); };
    set.traces = run_batches<Trace>(s.batches, s.workers, body);
    return set;
}

MonteCarloProvider::MonteCarloProvider(TraceSet traces) : set_(std::move(traces)) {
    if (set_.traces.size() < 2) throw std::invalid_argument("provider needs at least two traces");
}

double MonteCarloProvider::value(const BaseObservable& u, const Trace& t, std::size_t k) const {
    double x = 0;
    switch (u.kind) {
        case BaseObservable::Kind::One: x = 1; break;
        case BaseObservable::Kind::StateVector: x = u.values(t.state[k]); break;
        case BaseObservable::Kind::CosPhi: x = t.cosphi[k]; break;
        case BaseObservable::Kind::Obstacle: x = t.state[k] == u.index ? 1.0 : 0.0; break;
        case BaseObservable::Kind::KappaComponent: x = t.kappa[k][static_cast<std::size_t>(u.index)]; break;
    }
    return x;
}

double MonteCarloProvider::raw_mean(const BaseObservable& u) const {
    BaseObservable plain = u;
    plain.centered = false;
    const std::string key = plain.key();
    {
        std::lock_guard<std::mutex> lock(mu_);
        auto it = means_.find(key);
        if (it != means_.end()) return it->second;
    }
    std::vector<double> per;
    for (const Trace& t : set_.traces) {
        std::vector<double> v(t.kappa.size());
        for (std::size_t k = 0; k < v.size(); ++k) v[k] = value(plain, t, k);
        per.push_back(pairwise_sum(v.data(), v.size()) / double(v.size()));
    }
    const double m = batch_stat(per).mean;
    std::lock_guard<std::mutex> lock(mu_);
    means_[key] = m;
    return m;
}

double MonteCarloProvider::mean(const BaseObservable& u) const { return u.centered ? 0.0 : raw_mean(u); }

const MonteCarloProvider::MomentEntry& MonteCarloProvider::cached_moment(const BaseObservable& u,
                                                                        const std::vector<int>& times) const {
    std::ostringstream key;
    key << u.key();
    for (int t : times) key << "," << t;
    {
        std::lock_guard<std::mutex> lock(mu_);
        auto it = moments_.find(key.str());
        if (it != moments_.end()) return it->second;
    }
    const int d = set_.dim, p = static_cast<int>(times.size());
    if (p > 4) throw std::invalid_argument("moments above order 4 are not supported");
    const double shift = u.centered ? raw_mean(u) : 0.0;
    int lo = 0, hi = 0;
    for (int t : times) {
        lo = std::min(lo, t);
        hi = std::max(hi, t);
    }
    Tensor proto(p, d);
    std::vector<std::vector<double>> per(proto.size());
    for (const Trace& tr : set_.traces) {
        const long long len = static_cast<long long>(tr.kappa.size());
        const long long k0 = -lo, k1 = len - 1 - hi;
        if (k1 < k0) throw std::invalid_argument("trace shorter than the requested lag window");
        std::vector<double> acc(proto.size(), 0.0);
        for (long long k = k0; k <= k1; ++k) {
            const double w = value(u, tr, static_cast<std::size_t>(k)) - shift;
            if (w == 0) continue;
            for (std::size_t idx = 0; idx < proto.size(); ++idx) {
                std::size_t rest = idx;
                double prod = w;
                for (int j = p - 1; j >= 0; --j) {
                    const int c = static_cast<int>(rest % static_cast<std::size_t>(d));
                    rest /= static_cast<std::size_t>(d);
                    prod *= tr.kappa[static_cast<std::size_t>(k + times[static_cast<std::size_t>(j)])][static_cast<std::size_t>(c)];
                }
                acc[idx] += prod;
            }
        }
        for (std::size_t idx = 0; idx < proto.size(); ++idx) per[idx].push_back(acc[idx] / double(k1 - k0 + 1));
    }
    Tensor value(p, d), err(p, d);
    for (std::size_t idx = 0; idx < proto.size(); ++idx) {
        ScalarStat st = batch_stat(per[idx]);
        value[idx] = st.mean;
        err[idx] = st.stderr_;
    }
    std::lock_guard<std::mutex> lock(mu_);
    return moments_.emplace(key.str(), MomentEntry{value, err, std::move(per)}).first->second;
}

Tensor MonteCarloProvider::moment(const BaseObservable& u, const std::vector<int>& times) const {
    return cached_moment(u, times).value;
}

Tensor MonteCarloProvider::moment_stderr(const BaseObservable& u, const std::vector<int>& times) const {
    return cached_moment(u, times).err;
}

Tensor MonteCarloProvider::sum_stderr(const BaseObservable& u, const std::vector<std::vector<int>>& time_sets) const {
    if (time_sets.empty()) return {};
    const MomentEntry& first = cached_moment(u, time_sets.front());
    std::vector<std::vector<double>> total = first.per_trace;
    for (std::size_t s = 1; s < time_sets.size(); ++s) {
        const MomentEntry& e = cached_moment(u, time_sets[s]);
        if (e.per_trace.size() != total.size()) throw std::invalid_argument("sum_stderr needs moments of one rank");
        for (std::size_t c = 0; c < total.size(); ++c)
            for (std::size_t t = 0; t < total[c].size(); ++t) total[c][t] += e.per_trace[c][t];
    }
    Tensor err = first.err;
    for (std::size_t c = 0; c < total.size(); ++c) err[c] = batch_stat(total[c]).stderr_;
    // symmetric sums (Sigma^2) report the stderr of the symmetrized entry
    if (err.rank() == 2 && err.dim() == 2) {
        std::vector<double> off(total[1].size());
        for (std::size_t t = 0; t < off.size(); ++t) off[t] = 0.5 * (total[1][t] + total[2][t]);
        err[1] = err[2] = batch_stat(off).stderr_;
    }
    return err;
}

Tensor MonteCarloProvider::displacement_moment(const BaseObservable& u, const BaseObservable& v, int n, int p) const {
    if (n < 0 || p < 0 || p > 4) throw std::invalid_argument("displacement moment needs n >= 0 and p <= 4");
    const std::string key = u.key() + "|" + v.key() + "|" + std::to_string(n) + "|" + std::to_string(p);
    {
        std::lock_guard<std::mutex> lock(mu_);
        auto it = displacement_.find(key);
        if (it != displacement_.end()) return it->second;
    }
    const int d = set_.dim;
    const double su = u.centered ? raw_mean(u) : 0.0, sv = v.centered ? raw_mean(v) : 0.0;
    Tensor out(p, d);
    std::vector<std::vector<double>> per(out.size());
    for (const Trace& tr : set_.traces) {
        const long long len = static_cast<long long>(tr.kappa.size());
        if (len <= n) throw std::invalid_argument("trace shorter than the displacement window");
        std::vector<std::array<long long, 2>> prefix(static_cast<std::size_t>(len + 1), {0, 0});
        for (long long k = 0; k < len; ++k)
            for (int c = 0; c < 2; ++c)
                prefix[static_cast<std::size_t>(k + 1)][static_cast<std::size_t>(c)] =
                    prefix[static_cast<std::size_t>(k)][static_cast<std::size_t>(c)] + tr.kappa[static_cast<std::size_t>(k)][static_cast<std::size_t>(c)];
        std::vector<double> acc(out.size(), 0.0);
        const long long windows = len - n;
        for (long long k = 0; k < windows; ++k) {
            const double w = (value(u, tr, static_cast<std::size_t>(k)) - su) * (value(v, tr, static_cast<std::size_t>(k + n)) - sv);
            if (w == 0) continue;
            double S[2];
            for (int c = 0; c < 2; ++c)
                S[c] = double(prefix[static_cast<std::size_t>(k + n)][static_cast<std::size_t>(c)] - prefix[static_cast<std::size_t>(k)][static_cast<std::size_t>(c)]);
            for (std::size_t idx = 0; idx < out.size(); ++idx) {
                std::size_t rest = idx;
                double prod = w;
                for (int j = 0; j < p; ++j) {
                    prod *= S[rest % static_cast<std::size_t>(d)];
                    rest /= static_cast<std::size_t>(d);
                }
                acc[idx] += prod;
            }
        }
        for (std::size_t idx = 0; idx < out.size(); ++idx) per[idx].push_back(acc[idx] / double(windows));
    }
    for (std::size_t idx = 0; idx < out.size(); ++idx) out[idx] = batch_stat(per[idx]).mean;
    std::lock_guard<std::mutex> lock(mu_);
    return displacement_.emplace(key, out).first->second;
}

std::size_t MonteCarloProvider::cache_size() const {
    std::lock_guard<std::mutex> lock(mu_);
    return moments_.size() + displacement_.size();
}

}  // namespace zdmix
