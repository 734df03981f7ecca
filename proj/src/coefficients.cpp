#include "zdmix/coefficients.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "zdmix/spectral.hpp"

namespace zdmix {

namespace {

const cplx I1(0.0, 1.0);

Tensor scaled(Tensor t, double s) {
    t *= s;
    return t;
}

CTensor cscaled(CTensor t, cplx s) {
    t *= s;
    return t;
}

Tensor sym(const Tensor& t) { return symmetrize(t); }
CTensor sym(const CTensor& t) { return symmetrize(t); }

Tensor tp(const Tensor& a, const Tensor& b) { return tensor_product(a, b); }
CTensor tp(const CTensor& a, const CTensor& b) { return tensor_product(a, b); }

double factorial(int k) {
    double f = 1.0;
    for (int i = 2; i <= k; ++i) f *= i;
    return f;
}

cplx ipow(int k) {
    static const cplx vals[4] = {cplx(1, 0), cplx(0, 1), cplx(-1, 0), cplx(0, -1)};
    return vals[((k % 4) + 4) % 4];
}

Tensor lattice_vector(const Step& l, int d) {
    Tensor v(1, d);
    for (int c = 0; c < d; ++c) v[c] = l[c];
    return v;
}

/// sum_l h_l l^{(r)}
Tensor weight_tensor(const LatticeWeights& h, int r, int d) {
    Tensor out(r, d);
    for (const auto& [l, w] : h) out += scaled(tensor_power(lattice_vector(l, d), r), w);
    return out;
}

/// sum_{l,l'} h_l q_l' (l' - l)^{(r)}
Tensor pair_weight_tensor(const LatticeWeights& h, const LatticeWeights& q, int r, int d) {
    Tensor out(r, d);
    for (const auto& [l, w] : h)
        for (const auto& [lp, wp] : q) {
            Step diff{lp[0] - l[0], lp[1] - l[1]};
            out += scaled(tensor_power(lattice_vector(diff, d), r), w * wp);
        }
    return out;
}

/// Entry of a symmetric derivative tensor holding a zeros then b ones.
std::size_t monomial_offset(int a, int b, int d) {
    if (d == 1) return 0;
    std::size_t off = 0;
    for (int k = 0; k < a + b; ++k) off = 2 * off + (k >= a ? 1 : 0);
    return off;
}

}  // namespace

Tensor CorrelationProvider::moment_stderr(const BaseObservable&, const std::vector<int>& times) const {
    return Tensor(static_cast<int>(times.size()), dim());
}

CTensor CorrelationProvider::lambda_derivative(int k) const {
    throw std::runtime_error("missing series: provider " + id() + " has no lambda derivative of order " +
                             std::to_string(k));
}

MarkovProvider::MarkovProvider(MarkovModel model) : model_(std::move(model)) {
    const int S = model_.size();
    Eigen::MatrixXd D = model_.transition() - Eigen::VectorXd::Ones(S) * model_.stationary().transpose();
    if (S > 1) {
        Eigen::EigenSolver<Eigen::MatrixXd> es(D, false);
        decay_ = es.eigenvalues().cwiseAbs().maxCoeff();
    }
    lambda_ = lambda_derivatives(model_, 8);
    powers_.push_back(Eigen::MatrixXd::Identity(S, S));
}

Eigen::VectorXd MarkovProvider::values(const BaseObservable& u) const {
    Eigen::VectorXd x;
    switch (u.kind) {
        case BaseObservable::Kind::One:
            x = Eigen::VectorXd::Ones(model_.size());
            break;
        case BaseObservable::Kind::StateVector:
            if (u.values.size() != model_.size())
                throw std::invalid_argument("observable " + u.name + " has the wrong number of states");
            x = u.values;
            break;
        default:
            throw std::invalid_argument("observable " + u.name + " is not defined on a Markov model");
    }
    if (u.centered) x.array() -= model_.stationary().dot(x);
    return x;
}

double MarkovProvider::mean(const BaseObservable& u) const {
    if (u.centered) return 0.0;
    return model_.stationary().dot(values(u));
}

const Eigen::MatrixXd& MarkovProvider::power(int k) const {
    std::lock_guard<std::mutex> lock(mu_);
    while (static_cast<int>(powers_.size()) <= k) powers_.push_back(powers_.back() * model_.transition());
    return powers_[static_cast<std::size_t>(k)];
}

Tensor MarkovProvider::moment(const BaseObservable& u, const std::vector<int>& times) const {
    const int p = static_cast<int>(times.size());
    if (p > 4) throw std::invalid_argument("moment order above 4");
    const int d = model_.dim();
    const int S = model_.size();
    const Eigen::VectorXd uv = values(u);
    std::vector<int> pts(times.begin(), times.end());
    pts.push_back(0);
    std::sort(pts.begin(), pts.end());
    pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
    Tensor out(p, d);
    int combos = 1;
    for (int k = 0; k < p; ++k) combos *= d;
    std::vector<int> comps(static_cast<std::size_t>(p));
    for (int combo = 0; combo < combos; ++combo) {
        int rest = combo;
        for (int k = p - 1; k >= 0; --k) {
            comps[static_cast<std::size_t>(k)] = rest % d;
            rest /= d;
        }
        Eigen::RowVectorXd row = model_.stationary().transpose();
        int cur = pts.front();
        for (int tau : pts) {
            if (tau > cur) {
                row = row * power(tau - cur);
                cur = tau;
            }
            if (tau == 0) row = row.cwiseProduct(uv.transpose());
            std::vector<int> here;
            for (int k = 0; k < p; ++k)
                if (times[static_cast<std::size_t>(k)] == tau) here.push_back(comps[static_cast<std::size_t>(k)]);
            if (!here.empty()) {
                Eigen::MatrixXd M = Eigen::MatrixXd::Zero(S, S);
                for (int a = 0; a < S; ++a)
                    for (const Branch& b : model_.branches()[a]) {
                        double w = b.prob;
                        for (int c : here) w *= b.step[c];
                        M(a, b.to) += w;
                    }
                row = row * M;
                cur = tau + 1;
            }
        }
        out[static_cast<std::size_t>(combo)] = row.sum();
    }
    return out;
}

Tensor MarkovProvider::displacement_moment(const BaseObservable& u, const BaseObservable& v, int n, int p) const {
    CTensor d = twisted_expectation_series(model_, values(u), values(v), n, p).derivative(p);
    d *= std::conj(ipow(p));
    return real_part(d);
}

CTensor MarkovProvider::lambda_derivative(int k) const {
    if (k < 0 || k > 8) throw std::invalid_argument("lambda derivative order outside 0..8");
    return lambda_[static_cast<std::size_t>(k)];
}

DecayFit fit_decay(const CorrelationProvider& p, int M) {
    if (M < 16) throw std::invalid_argument("decay fit needs at least 16 lags");
    const BaseObservable one = BaseObservable::one();
    std::vector<double> c(static_cast<std::size_t>(M) + 1);
    double floor = 0;
    for (int m = 0; m <= M; ++m) {
        c[static_cast<std::size_t>(m)] = p.moment(one, {0, m}).max_abs();
        if (m > 0) floor = std::max(floor, 3.0 * p.moment_stderr(one, {0, m}).max_abs());
    }
    if (p.exact()) floor = std::max(floor, 1e-13 * c[0]);
    std::vector<double> xs, ys;
    for (int m = 1; m <= M; ++m) {
        double v = c[static_cast<std::size_t>(m)];
        if (!(v > floor)) break;
        xs.push_back(m);
        ys.push_back(std::log(v));
    }
    DecayFit fit;
    fit.lags_used = static_cast<int>(xs.size());
    if (xs.size() < 2) {
        fit.theta0 = 0.0;
        fit.C0 = c[0];
        return fit;
    }
    const double n = static_cast<double>(xs.size());
    double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
    double sxx = 0, sxy = 0, syy = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxx += (xs[i] - mx) * (xs[i] - mx);
        sxy += (xs[i] - mx) * (ys[i] - my);
        syy += (ys[i] - my) * (ys[i] - my);
    }
    double slope = sxy / sxx;
    fit.theta0 = std::exp(slope);
    fit.C0 = std::exp(my - slope * mx);
    fit.r2 = syy > 0 ? (sxy * sxy) / (sxx * syy) : 1.0;
    if (fit.theta0 >= 1.0) throw std::runtime_error("correlations do not decay (fitted rate >= 1)");
    return fit;
}

Truncation choose_truncation(const CorrelationProvider& p, double tol, int M_min, int M_max) {
    Truncation t;
    t.fit = fit_decay(p, 24);
    double theta = std::max(t.fit.theta0, p.decay_hint());
    double scale = p.moment(BaseObservable::one(), {0, 0}).max_abs();
    if (theta <= 0) {
        t.M = M_min;
        t.tail_bound = 0.0;
        return t;
    }
    theta += 0.05 * (1.0 - theta);  // margin for polynomial prefactors
    double C0 = std::max(t.fit.C0, scale);
    for (int M = M_min; M <= M_max; ++M) {
        double tail = C0 * std::pow(theta, M + 1) / (1.0 - theta);
        if (tail < tol * scale) {
            t.M = M;
            t.tail_bound = tail;
            return t;
        }
    }
    throw std::runtime_error("tail tolerance violated: no truncation lag up to " + std::to_string(M_max));
}

Sigma2Estimate sigma2(const CorrelationProvider& p, int M) {
    const BaseObservable one = BaseObservable::one();
    Sigma2Estimate s;
    s.M = M;
    s.value = Tensor(2, p.dim());
    Tensor var(2, p.dim());
    for (int k = -M; k <= M; ++k) {
        s.value += p.moment(one, {0, k});
        Tensor se = p.moment_stderr(one, {0, k});
        for (std::size_t i = 0; i < se.size(); ++i) var[i] += se[i] * se[i];
    }
    s.value = sym(s.value);
    std::vector<std::vector<int>> lags;
    for (int k = -M; k <= M; ++k) lags.push_back({0, k});
    Tensor joint = p.sum_stderr(one, lags);
    if (joint.rank() == 2) {
        s.stderr_ = joint;
        return s;
    }
    s.stderr_ = var;
    for (std::size_t i = 0; i < var.size(); ++i) s.stderr_[i] = std::sqrt(var[i]);
    return s;
}

Tensor b0_series(const CorrelationProvider& p, int M) {
    const BaseObservable one = BaseObservable::one();
    Tensor out(2, p.dim());
    for (int m = 1; m <= M; ++m) {
        out += scaled(p.moment(one, {0, m}), m);
        out += scaled(p.moment(one, {0, -m}), m);
    }
    return sym(out);
}

BPlus b_plus(const CorrelationProvider& p, const BaseObservable& u, int M, bool third_order) {
    const int d = p.dim();
    const BaseObservable one = BaseObservable::one();
    const BaseObservable ut = u.centered ? u : u.centered_version();
    BPlus b;
    b.E = p.mean(u);
    b.third_order = third_order;
    b.B1 = Tensor(1, d);
    b.B0 = Tensor(1, d);
    b.B2 = Tensor(2, d);
    b.B02 = Tensor(2, d);
    b.B3 = Tensor(3, d);
    std::vector<Tensor> single;
    for (int j = 0; j <= M; ++j) {
        b.B1 += p.moment(u, {j});
        single.push_back(p.moment(ut, {j}));
        b.B0 += scaled(single.back(), j);
    }
    for (int j = 0; j <= M; ++j)
        for (int m = j; m <= M; ++m) {
            Tensor x = p.moment(ut, {j, m});
            double w = j == m ? 1.0 : 2.0;
            b.B2 += scaled(x, w);
            b.B02 += scaled(x, w * m);
        }
    b.B2 = sym(b.B2);
    b.B02 = sym(b.B02);
    if (third_order) {
        std::vector<Tensor> pair;  // E[kappa o T^{c} (x) kappa o T^{b}] depends on c - b only
        for (int delta = 0; delta <= M; ++delta) pair.push_back(p.moment(one, {delta, 0}));
        for (int a = 0; a <= M; ++a)
            for (int bb = a; bb <= M; ++bb)
                for (int c = bb; c <= M; ++c) {
                    double mult = (a == bb && bb == c) ? 1.0 : (a == bb || bb == c) ? 3.0 : 6.0;
                    Tensor x = p.moment(ut, {a, c, bb});
                    x -= tp(single[static_cast<std::size_t>(a)], pair[static_cast<std::size_t>(c - bb)]);
                    b.B3 += scaled(x, mult);
                }
        b.B3 = sym(b.B3);
    }
    return b;
}

BMinus b_minus(const CorrelationProvider& p, const BaseObservable& v, int M, bool third_order) {
    const int d = p.dim();
    const BaseObservable one = BaseObservable::one();
    const BaseObservable vt = v.centered ? v : v.centered_version();
    BMinus b;
    b.E = p.mean(v);
    b.third_order = third_order;
    b.B1 = Tensor(1, d);
    b.B0 = Tensor(1, d);
    b.B2 = Tensor(2, d);
    b.B02 = Tensor(2, d);
    b.B3 = Tensor(3, d);
    std::vector<Tensor> single(1, Tensor(1, d));
    for (int k = 1; k <= M; ++k) {
        b.B1 += p.moment(v, {-k});
        single.push_back(p.moment(vt, {-k}));
        b.B0 += scaled(single.back(), k);
    }
    for (int j = 1; j <= M; ++j)
        for (int m = j; m <= M; ++m) {
            Tensor x = p.moment(vt, {-j, -m});
            double w = j == m ? 1.0 : 2.0;
            b.B2 += scaled(x, w);
            b.B02 += scaled(x, w * m);
        }
    b.B2 = sym(b.B2);
    b.B02 = sym(b.B02);
    if (third_order) {
        std::vector<Tensor> pair;  // E[kappa o T^{-c} (x) kappa o T^{-b}] depends on c - b only
        for (int delta = 0; delta <= M; ++delta) pair.push_back(p.moment(one, {0, delta}));
        // magnitudes a <= b <= c: times -a (max), -b (med), -c (min)
        for (int a = 1; a <= M; ++a)
            for (int bb = a; bb <= M; ++bb)
                for (int c = bb; c <= M; ++c) {
                    double mult = (a == bb && bb == c) ? 1.0 : (a == bb || bb == c) ? 3.0 : 6.0;
                    Tensor x = p.moment(vt, {-a, -c, -bb});
                    x -= tp(single[static_cast<std::size_t>(a)], pair[static_cast<std::size_t>(c - bb)]);
                    b.B3 += scaled(x, mult);
                }
        b.B3 = sym(b.B3);
    }
    return b;
}

namespace {

BSeries combine(const BPlus& bp, const BMinus& bm, const Tensor& B0, const Tensor& Gamma0, int M) {
    BSeries b;
    b.M = M;
    b.Eu = bp.E;
    b.Ev = bm.E;
    b.B0 = B0;
    b.B1p = bp.B1;
    b.B1m = bm.B1;
    b.B2p = bp.B2;
    b.B2m = bm.B2;
    b.B0p = bp.B0;
    b.B0m = bm.B0;
    b.B02p = bp.B02;
    b.B02m = bm.B02;
    b.B3p = bp.B3;
    b.B3m = bm.B3;
    b.Gamma0 = Gamma0;
    b.third_order = bp.third_order && bm.third_order;
    return b;
}

}  // namespace

BSeries b_series(const CorrelationProvider& p, const BaseObservable& u, const BaseObservable& v, int M,
                 bool third_order) {
    return combine(b_plus(p, u, M, third_order), b_minus(p, v, M, third_order), b0_series(p, M),
                   sym(p.moment(BaseObservable::one(), {0, 0})), M);
}

Lambda4Result lambda4(const CorrelationProvider& p, const Tensor& sigma2, const Tensor& B0,
                      const std::vector<int>& ladder) {
    if (ladder.size() < 2) throw std::invalid_argument("lambda4 needs at least two ladder points");
    const BaseObservable one = BaseObservable::one();
    const Tensor ss = sym(tp(sigma2, sigma2));
    auto G = [&](int n) {
        Tensor s4 = sym(p.displacement_moment(one, one, n, 4));
        s4 -= scaled(ss, 3.0 * double(n) * double(n));
        return s4;
    };
    std::vector<Tensor> g;
    for (int n : ladder) g.push_back(G(n));
    std::vector<Tensor> X, Y;
    for (std::size_t k = 0; k + 1 < ladder.size(); ++k) {
        Tensor x = g[k + 1] - g[k];
        x *= 1.0 / double(ladder[k + 1] - ladder[k]);
        Tensor y = g[k + 1] - scaled(x, ladder[k + 1]);
        X.push_back(x);
        Y.push_back(y);
    }
    Lambda4Result r;
    r.convergence = X.size() >= 2 ? (X.back() - X[X.size() - 2]).max_abs() : 0.0;
    r.lambda4 = sym(X.back() + scaled(ss, 3.0) + scaled(sym(tp(sigma2, B0)), 6.0));
    r.Lambda4 = r.lambda4 - scaled(ss, 3.0);
    r.A4_11 = Y.back();
    // E[S_n^(3)] is affine in n as well; A_3(1,1) = -i times its intercept
    const int n1 = ladder[ladder.size() - 2], n2 = ladder.back();
    Tensor e1 = sym(p.displacement_moment(one, one, n1, 3)), e2 = sym(p.displacement_moment(one, one, n2, 3));
    Tensor slope = scaled(e2 - e1, 1.0 / double(n2 - n1));
    r.A3_11 = scaled(e2 - scaled(slope, n2), -1.0);
    return r;
}

namespace {

double binom(int n, int k) { return factorial(n) / (factorial(k) * factorial(n - k)); }

/// m-th derivative of a product of two series given by their derivatives.
std::vector<CTensor> leibniz(const std::vector<CTensor>& x, const std::vector<CTensor>& y) {
    const std::size_t n = std::min(x.size(), y.size());
    std::vector<CTensor> out;
    for (std::size_t m = 0; m < n; ++m) {
        CTensor acc(static_cast<int>(m), x[0].dim());
        for (std::size_t k = 0; k <= m; ++k)
            acc += cscaled(tp(x[k], y[m - k]), binom(static_cast<int>(m), static_cast<int>(k)));
        out.push_back(sym(acc));
    }
    return out;
}

std::vector<CTensor> reciprocal(const std::vector<CTensor>& x) {
    std::vector<CTensor> r{CTensor::scalar(1.0 / x[0].value(), x[0].dim())};
    for (std::size_t m = 1; m < x.size(); ++m) {
        CTensor acc(static_cast<int>(m), x[0].dim());
        for (std::size_t k = 1; k <= m; ++k)
            acc += cscaled(tp(x[k], r[m - k]), binom(static_cast<int>(m), static_cast<int>(k)));
        r.push_back(cscaled(sym(acc), -1.0 / x[0].value()));
    }
    return r;
}

}  // namespace

std::vector<CTensor> one_sided_plus(const BSeries& b, const Tensor& S2) {
    const int d = S2.dim();
    std::vector<CTensor> A{CTensor::scalar(0.0, d), cscaled(to_complex(b.B1p), I1), to_complex(scaled(b.B2p, -1.0))};
    if (!b.third_order) return A;
    // the last term corrects for ties in the ordered triple sum behind B_3^+
    Tensor a3 = scaled(b.B3p, -1.0) + scaled(sym(tp(S2, b.B0p)), 3.0) + scaled(sym(tp(b.B0, b.B1p)), 3.0) +
                scaled(sym(tp(scaled(S2, 3.0) + b.Gamma0, b.B1p)), 0.5);
    A.push_back(cscaled(to_complex(sym(a3)), I1));
    Tensor a4 = scaled(sym(tp(b.B0, b.B2p)), -6.0) - scaled(sym(tp(S2, b.B02p)), 6.0);
    A.push_back(to_complex(sym(a4)));
    return A;
}

std::vector<CTensor> one_sided_minus(const BSeries& b, const Tensor& S2) {
    const int d = S2.dim();
    std::vector<CTensor> A{CTensor::scalar(0.0, d), cscaled(to_complex(b.B1m), I1), to_complex(scaled(b.B2m, -1.0))};
    if (!b.third_order) return A;
    Tensor a3 = scaled(b.B3m, -1.0) + scaled(sym(tp(S2, b.B0m)), 3.0) + scaled(sym(tp(b.B0, b.B1m)), 3.0) -
                scaled(sym(tp(scaled(S2, 3.0) - b.Gamma0, b.B1m)), 0.5);
    A.push_back(cscaled(to_complex(sym(a3)), I1));
    Tensor a4 = scaled(sym(tp(b.B0, b.B2m)), -6.0) - scaled(sym(tp(S2, b.B02m)), 6.0);
    A.push_back(to_complex(sym(a4)));
    return A;
}

std::vector<CTensor> assemble_A(const BSeries& b, const Tensor& S2, const Tensor& A3_11, const Tensor& A4_11) {
    const int d = S2.dim();
    std::vector<CTensor> plus = one_sided_plus(b, S2);
    std::vector<CTensor> minus = one_sided_minus(b, S2);
    std::vector<CTensor> a11{CTensor::scalar(1.0, d), CTensor(1, d), to_complex(b.B0)};
    if (b.third_order) {
        a11.push_back(cscaled(to_complex(A3_11), I1));
        a11.push_back(to_complex(A4_11));
    }
    std::vector<CTensor> cross = leibniz(plus, leibniz(minus, reciprocal(a11)));
    std::vector<CTensor> A;
    for (std::size_t m = 0; m < a11.size(); ++m) {
        CTensor x = cscaled(a11[m], b.Eu * b.Ev) + cscaled(minus[m], b.Eu) + cscaled(plus[m], b.Ev) + cross[m];
        A.push_back(sym(x));
    }
    return A;
}

FrakB frak_b(const CorrelationProvider& p, const CellObservable& f, const CellObservable& g, int M,
             const Tensor& B0) {
    const int d = p.dim();
    const BaseObservable one = BaseObservable::one();
    FrakB fb;
    fb.B0 = B0;
    fb.B1p = Tensor(1, d);
    fb.B1m = Tensor(1, d);
    fb.B2p = Tensor(2, d);
    fb.B2m = Tensor(2, d);
    fb.B2p_tilde = Tensor(2, d);
    fb.B2m_tilde = Tensor(2, d);
    const Tensor ESS = sym(p.displacement_moment(one, one, M, 2));
    for (const CellTerm& t : f.terms) {
        const double E = p.mean(t.base);
        const double H0 = weight_sum(t.weights);
        const Tensor H1 = weight_tensor(t.weights, 1, d), H2 = weight_tensor(t.weights, 2, d);
        const BaseObservable ct = t.base.centered ? t.base : t.base.centered_version();
        Tensor b1(1, d), b2(2, d), ES(1, d);
        for (int m = 0; m <= M; ++m) b1 += p.moment(t.base, {m});
        for (int m = 0; m < M; ++m) ES += p.moment(t.base, {m});
        for (int j = 0; j <= M; ++j)
            for (int m = j; m <= M; ++m) b2 += scaled(p.moment(ct, {j, m}), j == m ? 1.0 : 2.0);
        b2 = sym(b2);
        fb.int_f += H0 * E;
        fb.B1p += scaled(H1, E) + scaled(b1, H0);
        fb.B2p += scaled(b2, H0) + scaled(H2, E) + scaled(sym(tp(H1, b1)), 2.0) - scaled(B0, H0 * E);
        Tensor ES2 = sym(p.displacement_moment(t.base, one, M, 2));
        fb.B2p_tilde += scaled(H2, E) + scaled(sym(tp(H1, ES)), 2.0) + scaled(ES2 - scaled(ESS, E), H0);
    }
    for (const CellTerm& t : g.terms) {
        const double E = p.mean(t.base);
        const double Q0 = weight_sum(t.weights);
        const Tensor Q1 = weight_tensor(t.weights, 1, d), Q2 = weight_tensor(t.weights, 2, d);
        const BaseObservable ct = t.base.centered ? t.base : t.base.centered_version();
        Tensor b1(1, d), b2(2, d);
        for (int m = 1; m <= M; ++m) b1 += p.moment(t.base, {-m});
        for (int j = 1; j <= M; ++j)
            for (int m = j; m <= M; ++m) b2 += scaled(p.moment(ct, {-j, -m}), j == m ? 1.0 : 2.0);
        b2 = sym(b2);
        fb.int_g += Q0 * E;
        fb.B1m += scaled(b1, -Q0) + scaled(Q1, E);
        fb.B2m += scaled(b2, Q0) + scaled(Q2, E) - scaled(sym(tp(Q1, b1)), 2.0) - scaled(B0, Q0 * E);
        // b1 with M terms is the first-moment part of I_{-M}
        Tensor ES2 = sym(p.displacement_moment(one, t.base, M, 2));
        fb.B2m_tilde += scaled(Q2, E) - scaled(sym(tp(Q1, b1)), 2.0) + scaled(ES2 - scaled(ESS, E), Q0);
    }
    fb.A2_tilde = scaled(fb.B2m, -fb.int_f) - scaled(fb.B2p, fb.int_g) - scaled(B0, fb.int_f * fb.int_g) +
                  scaled(sym(tp(fb.B1p, fb.B1m)), 2.0);
    return fb;
}

double Expansion::predict(double n) const {
    const double half_d = 0.5 * gauss.sigma2.dim();
    double s = 0;
    for (std::size_t L = 0; L < c.size(); ++L) s += c[L] * std::pow(n, -half_d - double(L));
    return s;
}

ExpansionBuilder::ExpansionBuilder(const CorrelationProvider& p, double tol) : p_(p), tol_(tol) {
    trunc_ = choose_truncation(p_, tol_);
    sigma2_ = zdmix::sigma2(p_, trunc_.M).value;
    B0_ = b0_series(p_, trunc_.M);
    Gamma0_ = sym(p_.moment(BaseObservable::one(), {0, 0}));
    l4_ = zdmix::lambda4(p_, sigma2_, B0_);
    gauss_ = GaussianModel::from_covariance(sigma2_);
    build_lambda_over_a();
}

void ExpansionBuilder::build_lambda_over_a() {
    const int d = p_.dim();
    const int D = 8;
    std::vector<CTensor> lam(D + 1);
    lam[0] = CTensor::scalar(1.0, d);
    lam[1] = CTensor(1, d);
    lam[2] = to_complex(scaled(sigma2_, -1.0));
    // third derivative: provider value, else the slope of E[S_n^(3)] (lambda''' = -i slope)
    if (p_.lambda_order() >= 3) {
        lam[3] = p_.lambda_derivative(3);
    } else if (p_.assume_even()) {
        lam[3] = CTensor(3, d);
    } else {
        const BaseObservable one = BaseObservable::one();
        Tensor s = p_.displacement_moment(one, one, 128, 3) - p_.displacement_moment(one, one, 64, 3);
        s *= 1.0 / 64;
        lam[3] = cscaled(to_complex(sym(s)), -I1);
    }
    lam[4] = to_complex(l4_.lambda4);
    lambda_known_ = std::max(4, p_.lambda_order());
    for (int k = 5; k <= D; ++k) lam[k] = k <= p_.lambda_order() ? p_.lambda_derivative(k) : CTensor(k, d);

    bool even = p_.assume_even() || lam[3].max_abs() <= 1e-10 * std::max(1.0, sigma2_.max_abs());
    P_ = even ? 4 : 3;

    PowerSeries ls(d, D);
    for (std::size_t i = 0; i < ls.size(); ++i) {
        auto [a, b] = ls.exponents(i);
        ls[i] = lam[static_cast<std::size_t>(a + b)][monomial_offset(a, b, d)] / (factorial(a) * factorial(b));
    }
    PowerSeries q(d, D);  // Sigma^2 t^2 / 2
    if (d == 1) {
        q(2) = 0.5 * sigma2_[0];
    } else {
        q(2, 0) = 0.5 * sigma2_[0];
        q(1, 1) = sigma2_[1];
        q(0, 2) = 0.5 * sigma2_[3];
    }
    PowerSeries h = ls * series_exp(q);
    h[0] -= 1.0;
    for (std::size_t i = 0; i < h.size(); ++i) {
        auto [a, b] = h.exponents(i);
        if (a + b < P_ || (even && (a + b) % 2 == 1)) h[i] = 0.0;
    }
    lambda_over_a_ = binomial_power_polynomials(h, P_, D);
}

bool ExpansionBuilder::lambda_term_known(int j, int p) const {
    return j - P_ * (std::max(p, 1) - 1) <= lambda_known_;
}

const NPolynomial& ExpansionBuilder::lambda_over_a(int j) {
    if (j < 0 || j > 8) throw std::invalid_argument("lambda/a derivative order outside 0..8");
    return lambda_over_a_[static_cast<std::size_t>(j)];
}

const BPlus& ExpansionBuilder::plus(const BaseObservable& u, bool third_order) {
    std::string key = u.key();
    auto it = plus_cache_.find(key);
    if (it != plus_cache_.end() && (it->second.third_order || !third_order)) return it->second;
    plus_cache_[key] = b_plus(p_, u, trunc_.M, third_order);
    return plus_cache_[key];
}

const BMinus& ExpansionBuilder::minus(const BaseObservable& v, bool third_order) {
    std::string key = v.key();
    auto it = minus_cache_.find(key);
    if (it != minus_cache_.end() && (it->second.third_order || !third_order)) return it->second;
    minus_cache_[key] = b_minus(p_, v, trunc_.M, third_order);
    return minus_cache_[key];
}

const BSeries& ExpansionBuilder::series(const BaseObservable& u, const BaseObservable& v, bool third_order) {
    std::string key = u.key() + "|" + v.key() + (third_order ? "|3" : "|2");
    auto it = series_cache_.find(key);
    if (it != series_cache_.end()) return it->second;
    series_cache_[key] = combine(plus(u, third_order), minus(v, third_order), B0_, Gamma0_, trunc_.M);
    return series_cache_[key];
}

std::vector<CTensor> ExpansionBuilder::A(const BaseObservable& u, const BaseObservable& v, int m_max) {
    if (m_max > 4) throw std::invalid_argument("A_m available for m <= 4");
    // the one-sided A_4 series omit third-cumulant terms that vanish only when lambda is even
    if (m_max == 4 && P_ != 4) throw std::runtime_error("missing series: A_4 needs an even lambda");
    bool third = m_max >= 3;
    std::string key = u.key() + "|" + v.key() + (third ? "|3" : "|2");
    auto it = A_cache_.find(key);
    if (it == A_cache_.end()) it = A_cache_.emplace(key, assemble_A(series(u, v, third), sigma2_, l4_.A3_11, l4_.A4_11)).first;
    return std::vector<CTensor>(it->second.begin(), it->second.begin() + std::min<std::size_t>(m_max + 1, it->second.size()));
}

Expansion ExpansionBuilder::expansion(const CellObservable& f, const CellObservable& g, int K) {
    if (K < 1 || (P_ == 4 && K > 3) || (P_ == 3 && K > 2))
        throw std::invalid_argument("unsupported expansion order K=" + std::to_string(K) + " for P=" +
                                    std::to_string(P_));
    const int d = p_.dim();
    Expansion ex;
    ex.K = K;
    ex.P = P_;
    ex.gauss = gauss_;
    ex.M = trunc_.M;
    ex.tail_bound = trunc_.tail_bound;
    ex.provider = p_.id();
    const int rmax = 2 * K - 2;
    const int mmax = 2 * K - 2;
    Tensor zero(1, d);
    std::vector<CTensor> phi;
    for (int k = 0; k <= 8; ++k) phi.push_back(to_complex(gaussian_derivatives(gauss_, zero, k)));
    std::vector<cplx> c(static_cast<std::size_t>(K), 0.0);
    for (const CellTerm& ft : f.terms)
        for (const CellTerm& gt : g.terms) {
            std::vector<CTensor> D;
            for (int r = 0; r <= rmax; ++r) D.push_back(to_complex(pair_weight_tensor(ft.weights, gt.weights, r, d)));
            bool any = false;
            for (const auto& x : D) any = any || x.max_abs() > 0;
            if (!any) continue;
            std::vector<CTensor> A = this->A(ft.base, gt.base, mmax);
            for (int L = 0; L < K; ++L)
                for (int j = 0; j <= 8; ++j) {
                    const NPolynomial& poly = lambda_over_a(j);
                    for (int pp = 0; pp < static_cast<int>(poly.coeff.size()); ++pp) {
                        const CTensor& lam = poly.coeff[static_cast<std::size_t>(pp)];
                        if (lam.max_abs() == 0) continue;
                        for (int m = 0; m <= mmax; ++m) {
                            int r = 2 * (L + pp) - m - j;
                            if (r < 0 || r > rmax) continue;
                            if (A[static_cast<std::size_t>(m)].max_abs() == 0 ||
                                D[static_cast<std::size_t>(r)].max_abs() == 0)
                                continue;
                            if (!lambda_term_known(j, pp))
                                throw std::runtime_error("missing series: expansion needs lambda derivatives beyond order " +
                                                         std::to_string(lambda_known_));
                            CTensor prod = tp(tp(D[static_cast<std::size_t>(r)], A[static_cast<std::size_t>(m)]), lam);
                            cplx term = contract_raw(phi[static_cast<std::size_t>(m + j + r)], prod).value();
                            c[static_cast<std::size_t>(L)] +=
                                ipow(m + j) / (factorial(m) * factorial(j) * factorial(r)) * term;
                        }
                    }
                }
        }
    for (const cplx& x : c) {
        ex.c.push_back(x.real());
        ex.c_imag.push_back(x.imag());
    }
    return ex;
}

Expansion ExpansionBuilder::expansion_frak(const CellObservable& f, const CellObservable& g) {
    if (P_ != 4) throw std::invalid_argument("theorem-level form needs an even model");
    FrakB fb = frak_b(p_, f, g, trunc_.M, B0_);
    const double phi0 = gaussian_density(gauss_, Tensor(1, p_.dim()));
    const Tensor& Si = gauss_.inv_sigma2;
    Expansion ex;
    ex.K = 2;
    ex.P = P_;
    ex.gauss = gauss_;
    ex.M = trunc_.M;
    ex.tail_bound = trunc_.tail_bound;
    ex.provider = p_.id();
    const double ifg = fb.int_f * fb.int_g;
    ex.c.push_back(phi0 * ifg);
    // Phi^{(4)}(0) = 3 Sym(Sigma^-2 (x) Sigma^-2) Phi(0), hence 3/4! in front of Lambda_4
    double c1 = 0.5 * contract(Si, sym(fb.A2_tilde)).value() +
                3.0 / 24.0 * ifg * contract(sym(tp(Si, Si)), l4_.Lambda4).value();
    ex.c.push_back(phi0 * c1);
    ex.c_imag = {0.0, 0.0};
    return ex;
}

double ExpansionBuilder::product_form_c2(const CellObservable& f, const CellObservable& g) {
    if (f.terms.size() != 1 || g.terms.size() != 1)
        throw std::invalid_argument("product form needs single-term observables");
    const CellTerm& ft = f.terms[0];
    const CellTerm& gt = g.terms[0];
    if (std::abs(p_.mean(ft.base)) > 1e-12 || std::abs(p_.mean(gt.base)) > 1e-12 ||
        std::abs(weight_sum(ft.weights)) > 1e-12 || std::abs(weight_sum(gt.weights)) > 1e-12)
        throw std::invalid_argument("product form needs zero means and zero weight sums");
    const int d = p_.dim();
    const BPlus& bp = plus(ft.base, false);
    const BMinus& bm = minus(gt.base, false);
    auto vec = [&](const Tensor& t) {
        Eigen::VectorXd v(d);
        for (int c = 0; c < d; ++c) v(c) = t[static_cast<std::size_t>(c)];
        return v;
    };
    Eigen::MatrixXd Si(d, d);
    for (int a = 0; a < d; ++a)
        for (int b = 0; b < d; ++b) Si(a, b) = gauss_.inv_sigma2[static_cast<std::size_t>(a * d + b)];
    Eigen::VectorXd H1 = vec(weight_tensor(ft.weights, 1, d)), Q1 = vec(weight_tensor(gt.weights, 1, d));
    Eigen::VectorXd Bp = vec(bp.B1), Bm = vec(bm.B1);
    auto ip = [&](const Eigen::VectorXd& x, const Eigen::VectorXd& y) { return x.dot(Si * y); };
    // the three pairings of H1, B1+, Q1, B1-
    double pairings = ip(H1, Bp) * ip(Q1, Bm) + ip(H1, Q1) * ip(Bp, Bm) + ip(H1, Bm) * ip(Bp, Q1);
    const double phi0 = gaussian_density(gauss_, Tensor(1, d));
    return -phi0 * pairings;
}

double ExpansionBuilder::llt_predict(const BaseObservable& u, const BaseObservable& v, int n, const Step& l, int K) {
    if (K < 1 || K > 3) throw std::invalid_argument("llt_predict supports K = 1..3");
    const int d = p_.dim();
    const int mmax = std::min(4, 2 * K - 2);
    std::vector<CTensor> A = this->A(u, v, mmax);
    Tensor x(1, d);
    for (int c = 0; c < d; ++c) x[static_cast<std::size_t>(c)] = l[static_cast<std::size_t>(c)] / std::sqrt(double(n));
    std::vector<CTensor> phi;
    for (const Tensor& t : gaussian_derivative_list(gauss_, x, 8)) phi.push_back(to_complex(t));
    cplx total = 0;
    for (int j = 0; j <= 8; ++j) {
        const NPolynomial& poly = lambda_over_a(j);
        for (int pp = 0; pp < static_cast<int>(poly.coeff.size()); ++pp) {
            const CTensor& lam = poly.coeff[static_cast<std::size_t>(pp)];
            if (lam.max_abs() == 0) continue;
            for (int m = 0; m <= mmax && m + j <= 8; ++m) {
                if (m + j - 2 * pp > 2 * (K - 1)) continue;
                if (A[static_cast<std::size_t>(m)].max_abs() == 0) continue;
                if (!lambda_term_known(j, pp))
                    throw std::runtime_error("missing series: prediction needs lambda derivatives beyond order " +
                                             std::to_string(lambda_known_));
                cplx term = contract_raw(phi[static_cast<std::size_t>(m + j)], tp(A[static_cast<std::size_t>(m)], lam)).value();
                double power = -0.5 * d - 0.5 * (m + j) + pp;
                total += ipow(m + j) / (factorial(m) * factorial(j)) * std::pow(double(n), power) * term;
            }
        }
    }
    return total.real();
}

}  // namespace zdmix
