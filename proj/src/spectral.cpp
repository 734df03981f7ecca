#include "zdmix/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace zdmix {

namespace {

using MatSeries = std::vector<Eigen::MatrixXcd>;

std::string format_t(const std::vector<cplx>& t) {
    std::ostringstream os;
    os << "t=(";
    for (std::size_t i = 0; i < t.size(); ++i) os << (i ? "," : "") << t[i].real();
    os << ")";
    return os.str();
}

/// Coefficient matrices of Q_t: one complex matrix per stored monomial.
MatSeries operator_series(const MarkovModel& model, int degree) {
    const int n = model.size();
    PowerSeries shape(model.dim(), degree);
    MatSeries q(shape.size(), Eigen::MatrixXcd::Zero(n, n));
    for (int a = 0; a < n; ++a)
        for (const Branch& b : model.branches()[a]) {
            PowerSeries c = character_series(model.dim(), degree, b.step);
            for (std::size_t i = 0; i < c.size(); ++i) q[i](a, b.to) += b.prob * c[i];
        }
    return q;
}

MatSeries mat_series_mul(const MatSeries& A, const MatSeries& B, const PowerSeries& shape) {
    MatSeries C(A.size(), Eigen::MatrixXcd::Zero(A[0].rows(), B[0].cols()));
    const int D = shape.degree();
    for (std::size_t i = 0; i < A.size(); ++i) {
        auto [a1, a2] = shape.exponents(i);
        for (std::size_t j = 0; j < B.size(); ++j) {
            auto [b1, b2] = shape.exponents(j);
            if (a1 + a2 + b1 + b2 > D) break;
            C[shape.index(a1 + b1, a2 + b2)].noalias() += A[i] * B[j];
        }
    }
    return C;
}

double factorial(int k) {
    double f = 1.0;
    for (int i = 2; i <= k; ++i) f *= i;
    return f;
}

cplx ipow_i(int k) {
    static const cplx vals[4] = {cplx(1, 0), cplx(0, 1), cplx(-1, 0), cplx(0, -1)};
    return vals[k % 4];
}

}  // namespace

Eigen::MatrixXcd perturbed_operator(const MarkovModel& model, const std::vector<cplx>& t) {
    if (static_cast<int>(t.size()) != model.dim()) throw std::invalid_argument("parameter dimension mismatch");
    const int n = model.size();
    Eigen::MatrixXcd Q = Eigen::MatrixXcd::Zero(n, n);
    const cplx I(0, 1);
    for (int a = 0; a < n; ++a)
        for (const Branch& b : model.branches()[a]) {
            cplx phase = 0;
            for (int c = 0; c < model.dim(); ++c) phase += t[c] * double(b.step[c]);
            Q(a, b.to) += b.prob * std::exp(I * phase);
        }
    return Q;
}

LeadingTriple leading_triple(const MarkovModel& model, const std::vector<cplx>& t) {
    const Eigen::MatrixXcd Q = perturbed_operator(model, t);
    const int n = model.size();
    auto power = [&](const Eigen::MatrixXcd& M, Eigen::VectorXcd x, cplx& lam) {
        lam = 0;
        for (int it = 0; it < 200000; ++it) {
            Eigen::VectorXcd y = M * x;
            cplx lnew = x.dot(y) / x.dot(x);
            double nrm = y.norm();
            if (nrm == 0) break;
            // align phase so the iteration converges in direction
            y /= nrm;
            Eigen::Index k;
            y.cwiseAbs().maxCoeff(&k);
            y *= std::abs(y(k)) / y(k);
            double diff = (y - x).norm();
            x = y;
            if (it > 2 && diff < 1e-15 && std::abs(lnew - lam) < 1e-15 * std::max(1.0, std::abs(lnew))) {
                lam = lnew;
                return std::make_pair(x, true);
            }
            lam = lnew;
        }
        return std::make_pair(x, false);
    };
    cplx lr, ll;
    auto [r, okr] = power(Q, Eigen::VectorXcd::Ones(n), lr);
    Eigen::VectorXcd pi0 = model.stationary().cast<cplx>();
    auto [l, okl] = power(Q.transpose(), pi0, ll);
    if (!okr || !okl) throw std::runtime_error("gap loss: power iteration did not converge at " + format_t(t));
    // Residual check of the eigen-equations.
    LeadingTriple out;
    out.lambda = lr;
    double res = std::max((Q * r - lr * r).norm(), (Q.transpose() * l - lr * l).norm());
    if (res > 1e-9 * std::max(1.0, std::abs(lr)))
        throw std::runtime_error("gap loss: leading eigenpair not resolved at " + format_t(t));
    // Normalise: pi.r = 1 where possible, then l.r = 1.
    cplx s = pi0.transpose() * r;
    if (std::abs(s) > 1e-12) r /= s;
    cplx lr_dot = l.transpose() * r;
    if (std::abs(lr_dot) < 1e-14) throw std::runtime_error("gap loss: degenerate eigenvectors at " + format_t(t));
    l /= lr_dot;
    out.right = r;
    out.left = l;
    out.projector = r * l.transpose();
    out.remainder = Q - lr * out.projector;
    // Gelfand estimate of the remainder's spectral radius from R^64.
    Eigen::MatrixXcd P = out.remainder;
    double logscale = 0;
    for (int j = 0; j < 6; ++j) {
        double nrm = P.norm();
        if (nrm == 0) break;
        P /= nrm;
        logscale = 2 * (logscale + std::log(nrm));
        P = P * P;
    }
    double nrm = P.norm();
    out.remainder_radius = nrm == 0 ? 0.0 : std::exp((logscale + std::log(nrm)) / 64.0);
    if (out.remainder_radius >= std::abs(lr) * (1 - 1e-9))
        throw std::runtime_error("gap loss: remainder spectral radius reaches |lambda| at " + format_t(t));
    return out;
}

PerturbationSeries perturbation_series(const MarkovModel& model, int degree) {
    const int n = model.size();
    const int d = model.dim();
    PowerSeries shape(d, degree);
    MatSeries Q = operator_series(model, degree);
    const Eigen::MatrixXcd Z = model.fundamental().cast<cplx>();
    const Eigen::MatrixXcd Zt = Z.transpose();
    const Eigen::VectorXcd pi = model.stationary().cast<cplx>();
    std::vector<Eigen::VectorXcd> R(shape.size()), L(shape.size());
    std::vector<cplx> lam(shape.size(), 0);
    R[0] = Eigen::VectorXcd::Ones(n);
    L[0] = pi;
    lam[0] = 1;
    for (std::size_t ai = 1; ai < shape.size(); ++ai) {
        auto [a1, a2] = shape.exponents(ai);
        // all beta <= alpha, beta != 0
        std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (beta, alpha-beta)
        for (int b1 = 0; b1 <= a1; ++b1)
            for (int b2 = 0; b2 <= a2; ++b2) {
                if (b1 == 0 && b2 == 0) continue;
                pairs.emplace_back(shape.index(b1, b2), shape.index(a1 - b1, a2 - b2));
            }
        cplx l = 0;
        for (auto [bi, ri] : pairs) l += pi.dot(Q[bi] * R[ri]);  // dot conjugates the first argument
        // pi is real, so conj is harmless
        lam[ai] = l;
        Eigen::VectorXcd y = Eigen::VectorXcd::Zero(n), yl = Eigen::VectorXcd::Zero(n);
        for (auto [bi, ri] : pairs) {
            y += lam[bi] * R[ri] - Q[bi] * R[ri];
            yl += lam[bi] * L[ri] - Q[bi].transpose() * L[ri];
        }
        R[ai] = -Z * y;
        L[ai] = -Zt * yl;
    }
    PerturbationSeries out;
    out.lambda = PowerSeries(d, degree);
    for (std::size_t i = 0; i < shape.size(); ++i) out.lambda[i] = lam[i];
    out.right.assign(n, PowerSeries(d, degree));
    out.left.assign(n, PowerSeries(d, degree));
    for (int s = 0; s < n; ++s)
        for (std::size_t i = 0; i < shape.size(); ++i) {
            out.right[s][i] = R[i](s);
            out.left[s][i] = L[i](s);
        }
    return out;
}

std::vector<CTensor> lambda_derivatives(const MarkovModel& model, int k_max) {
    if (k_max < 0 || k_max > CTensor::kMaxRank) throw std::invalid_argument("lambda derivative order outside 0..8");
    PerturbationSeries ps = perturbation_series(model, k_max);
    std::vector<CTensor> out;
    for (int k = 0; k <= k_max; ++k) out.push_back(ps.lambda.derivative(k));
    return out;
}

Tensor model_sigma2(const MarkovModel& model) {
    CTensor l2 = perturbation_series(model, 2).lambda.derivative(2);
    Tensor s = real_part(l2);
    s *= -1.0;
    if (imag_part(l2).max_abs() > 1e-12) throw std::runtime_error("second derivative of lambda is not real");
    return symmetrize(s);
}

bool lambda_is_even(const MarkovModel& model) {
    PowerSeries lam = perturbation_series(model, 7).lambda;
    double scale = 0, odd = 0;
    for (std::size_t i = 0; i < lam.size(); ++i) {
        auto [a, b] = lam.exponents(i);
        double m = std::abs(lam[i]);
        scale = std::max(scale, m);
        if ((a + b) % 2 == 1) odd = std::max(odd, m);
    }
    return odd <= 1e-12 * std::max(scale, 1.0);
}

int contact_order(const MarkovModel& model) { return model.even() ? 4 : 3; }

std::vector<NPolynomial> lambda_over_a_derivatives(const MarkovModel& model, int j_max) {
    if (j_max < 0 || j_max > CTensor::kMaxRank) throw std::invalid_argument("derivative order outside 0..8");
    const int d = model.dim();
    const int D = std::max(j_max, 2);
    PowerSeries lam = perturbation_series(model, D).lambda;
    Tensor s2 = model_sigma2(model);
    // -log a_t = Sigma^2 * t^2 / 2
    PowerSeries minus_log_a(d, D);
    if (d == 1) {
        minus_log_a(2) = 0.5 * s2[0];
    } else {
        minus_log_a(2, 0) = 0.5 * s2[0];
        minus_log_a(1, 1) = s2[1];
        minus_log_a(0, 2) = 0.5 * s2[3];
    }
    PowerSeries h = lam * series_exp(minus_log_a);
    h[0] -= 1.0;
    const int P = contact_order(model);
    double scale = std::max(1.0, std::abs(lam(2 < D ? 2 : 0, 0)));
    for (std::size_t i = 0; i < h.size(); ++i) {
        auto [a, b] = h.exponents(i);
        int deg = a + b;
        bool forced_zero = deg < P || (model.even() && deg % 2 == 1);
        if (forced_zero) {
            if (std::abs(h[i]) > 1e-10 * scale)
                throw std::runtime_error("lambda/a has a nonzero coefficient of degree " + std::to_string(deg) +
                                         " below the contact order");
            h[i] = 0;
        }
    }
    return binomial_power_polynomials(h, P, j_max);
}

std::vector<NPolynomial> binomial_power_polynomials(const PowerSeries& h, int P, int j_max) {
    const int d = h.dim();
    const int D = h.degree();
    if (j_max > D) throw std::invalid_argument("series degree below requested derivative order");
    // (1+h)^n = sum_m C(n,m) h^m; C(n,m) as a polynomial in n.
    const int mmax = D / P;
    std::vector<PowerSeries> hp{PowerSeries::constant(d, D, 1.0)};
    for (int m = 1; m <= mmax; ++m) hp.push_back(hp.back() * h);
    std::vector<std::vector<double>> binom(mmax + 1);  // binom[m][p] = coefficient of n^p
    binom[0] = {1.0};
    for (int m = 1; m <= mmax; ++m) {
        std::vector<double> poly{1.0};
        for (int i = 0; i < m; ++i) {
            std::vector<double> next(poly.size() + 1, 0.0);
            for (std::size_t p = 0; p < poly.size(); ++p) {
                next[p + 1] += poly[p];
                next[p] -= i * poly[p];
            }
            poly = next;
        }
        for (double& c : poly) c /= factorial(m);
        binom[m] = poly;
    }
    std::vector<NPolynomial> out;
    for (int j = 0; j <= j_max; ++j) {
        NPolynomial poly;
        poly.coeff.assign(mmax + 1, CTensor(j, d));
        for (int m = 0; m <= mmax; ++m) {
            CTensor dj = hp[m].derivative(j);
            for (std::size_t p = 0; p < binom[m].size(); ++p) {
                CTensor t = dj;
                t *= cplx(binom[m][p]);
                poly.coeff[p] += t;
            }
        }
        int deg = poly.degree(0.0);
        poly.coeff.resize(deg + 1, CTensor(j, d));
        out.push_back(std::move(poly));
    }
    return out;
}

double DisplacementGrid::at(int l0, int l1) const {
    if (l0 < lo[0] || l0 > hi[0] || l1 < lo[1] || l1 > hi[1]) return 0.0;
    const int w = hi[1] - lo[1] + 1;
    return values[static_cast<std::size_t>((l0 - lo[0]) * w + (l1 - lo[1]))];
}

double DisplacementGrid::total() const {
    double s = 0;
    for (double x : values) s += x;
    return s;
}

std::vector<DisplacementGrid> exact_cell_distributions(const MarkovModel& model, const Eigen::VectorXd& u,
                                                       const Eigen::VectorXd& v, const std::vector<int>& ns,
                                                       double trim_tol) {
    const int S = model.size();
    if (u.size() != S || v.size() != S) throw std::invalid_argument("observable size differs from state count");
    if (!std::is_sorted(ns.begin(), ns.end())) throw std::invalid_argument("requested n values must be sorted");
    const auto smin = model.step_min();
    const auto smax = model.step_max();
    int lo[2] = {0, 0}, hi[2] = {0, 0};
    std::vector<std::vector<double>> F(S, std::vector<double>(1, 0.0)), G(S);
    for (int a = 0; a < S; ++a) F[a][0] = model.stationary()(a) * u(a);
    std::vector<DisplacementGrid> out;
    auto snapshot = [&](int n) {
        DisplacementGrid g;
        g.n = n;
        g.dim = model.dim();
        g.lo[0] = lo[0];
        g.lo[1] = lo[1];
        g.hi[0] = hi[0];
        g.hi[1] = hi[1];
        g.values.assign(F[0].size(), 0.0);
        for (int b = 0; b < S; ++b)
            for (std::size_t i = 0; i < F[b].size(); ++i) g.values[i] += F[b][i] * v(b);
        out.push_back(std::move(g));
    };
    std::size_t next = 0;
    while (next < ns.size() && ns[next] == 0) snapshot(ns[next++]);
    const int nmax = ns.empty() ? 0 : ns.back();
    std::vector<double> rowmax, colmax;
    for (int k = 1; k <= nmax; ++k) {
        int nlo[2] = {lo[0] + smin[0], lo[1] + smin[1]};
        int nhi[2] = {hi[0] + smax[0], hi[1] + smax[1]};
        const int w = hi[1] - lo[1] + 1, h = hi[0] - lo[0] + 1;
        const int nw = nhi[1] - nlo[1] + 1, nh = nhi[0] - nlo[0] + 1;
        for (int b = 0; b < S; ++b) G[b].assign(static_cast<std::size_t>(nw) * nh, 0.0);
        for (int a = 0; a < S; ++a) {
            const double* src = F[a].data();
            for (const Branch& br : model.branches()[a]) {
                double* dst = G[br.to].data();
                const double p = br.prob;
                const int r0 = br.step[0] - smin[0];
                const int c0 = br.step[1] - smin[1];
                for (int i = 0; i < h; ++i) {
                    const double* s = src + static_cast<std::size_t>(i) * w;
                    double* dd = dst + static_cast<std::size_t>(i + r0) * nw + c0;
                    for (int j = 0; j < w; ++j) dd[j] += p * s[j];
                }
            }
        }
        // Trim negligible border rows/columns.
        int tlo0 = 0, thi0 = nh - 1, tlo1 = 0, thi1 = nw - 1;
        if (trim_tol > 0) {
            rowmax.assign(nh, 0.0);
            colmax.assign(nw, 0.0);
            for (int b = 0; b < S; ++b)
                for (int i = 0; i < nh; ++i)
                    for (int j = 0; j < nw; ++j) {
                        double x = std::abs(G[b][static_cast<std::size_t>(i) * nw + j]);
                        rowmax[i] = std::max(rowmax[i], x);
                        colmax[j] = std::max(colmax[j], x);
                    }
            double gmax = *std::max_element(rowmax.begin(), rowmax.end());
            double thr = trim_tol * gmax;
            while (tlo0 < thi0 && rowmax[tlo0] < thr) ++tlo0;
            while (thi0 > tlo0 && rowmax[thi0] < thr) --thi0;
            while (tlo1 < thi1 && colmax[tlo1] < thr) ++tlo1;
            while (thi1 > tlo1 && colmax[thi1] < thr) --thi1;
        }
        const int tw = thi1 - tlo1 + 1, th = thi0 - tlo0 + 1;
        for (int b = 0; b < S; ++b) {
            if (tw == nw && th == nh) {
                std::swap(F[b], G[b]);
            } else {
                F[b].assign(static_cast<std::size_t>(tw) * th, 0.0);
                for (int i = 0; i < th; ++i)
                    std::copy_n(G[b].data() + static_cast<std::size_t>(i + tlo0) * nw + tlo1, tw,
                                F[b].data() + static_cast<std::size_t>(i) * tw);
            }
        }
        lo[0] = nlo[0] + tlo0;
        hi[0] = nlo[0] + thi0;
        lo[1] = nlo[1] + tlo1;
        hi[1] = nlo[1] + thi1;
        while (next < ns.size() && ns[next] == k) snapshot(ns[next++]);
    }
    return out;
}

double exact_cell_joint(const MarkovModel& model, const Eigen::VectorXd& u, const Eigen::VectorXd& v, int n,
                        const Step& ell) {
    if (n < 0 || n > 4096) throw std::invalid_argument("exact_cell_joint: n outside 0..4096");
    const long reach = static_cast<long>(n) * std::max(1, model.max_step());
    if (std::abs(ell[0]) > reach || std::abs(ell[1]) > reach || (model.dim() == 1 && ell[1] != 0))
        throw std::out_of_range("exact_cell_joint: displacement outside the reachable window");
    double tol = n <= 256 ? 0.0 : 1e-30;
    auto grids = exact_cell_distributions(model, u, v, {n}, tol);
    return grids[0].at(ell[0], ell[1]);
}

PowerSeries twisted_expectation_series(const MarkovModel& model, const Eigen::VectorXd& u, const Eigen::VectorXd& v,
                                       int n, int degree) {
    const int S = model.size();
    PowerSeries shape(model.dim(), degree);
    MatSeries Q = operator_series(model, degree);
    // Q^n by binary powering.
    MatSeries acc(shape.size(), Eigen::MatrixXcd::Zero(S, S));
    acc[0] = Eigen::MatrixXcd::Identity(S, S);
    MatSeries base = Q;
    int e = n;
    while (e > 0) {
        if (e & 1) acc = mat_series_mul(acc, base, shape);
        e >>= 1;
        if (e) base = mat_series_mul(base, base, shape);
    }
    Eigen::VectorXcd row = (model.stationary().array() * u.array()).matrix().cast<cplx>();
    Eigen::VectorXcd col = v.cast<cplx>();
    PowerSeries out(model.dim(), degree);
    for (std::size_t i = 0; i < shape.size(); ++i) out[i] = (row.transpose() * acc[i] * col)(0, 0);
    return out;
}

PowerSeries ratio_series(const MarkovModel& model, const Eigen::VectorXd& u, const Eigen::VectorXd& v, int n,
                         int degree) {
    PowerSeries num = twisted_expectation_series(model, u, v, n, degree);
    PowerSeries lam = perturbation_series(model, degree).lambda;
    PowerSeries inv = series_exp(cplx(-double(n)) * series_log(lam));
    return num * inv;
}

CTensor exact_Am(const MarkovModel& model, const Eigen::VectorXd& u, const Eigen::VectorXd& v, int m, int n) {
    if (m < 0 || m > 8) throw std::invalid_argument("exact_Am: order outside 0..8");
    return ratio_series(model, u, v, n, m).derivative(m);
}

CTensor exact_Am_limit(const MarkovModel& model, const Eigen::VectorXd& u, const Eigen::VectorXd& v, int m) {
    if (m < 0 || m > 8) throw std::invalid_argument("exact_Am_limit: order outside 0..8");
    PerturbationSeries ps = perturbation_series(model, m);
    const int S = model.size();
    PowerSeries num(model.dim(), m), lv(model.dim(), m), lr(model.dim(), m);
    for (int s = 0; s < S; ++s) {
        double w = model.stationary()(s) * u(s);
        num += cplx(w) * ps.right[s];
        lv += cplx(v(s)) * ps.left[s];
        lr += ps.left[s] * ps.right[s];
    }
    return (num * lv * series_inverse(lr)).derivative(m);
}

Tensor exact_moment(const MarkovModel& model, int n, int p) {
    Eigen::VectorXd one = Eigen::VectorXd::Ones(model.size());
    CTensor d = twisted_expectation_series(model, one, one, n, p).derivative(p);
    d *= std::conj(ipow_i(p));
    return real_part(d);
}

}  // namespace zdmix
