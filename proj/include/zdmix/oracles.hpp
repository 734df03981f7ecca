#pragma once

// Independent reference computations shared by the unit tests and the acceptance binary.

#include <cmath>
#include <functional>
#include <vector>

#include "zdmix/coefficients.hpp"
#include "zdmix/spectral.hpp"

namespace oracle {

using namespace zdmix;

inline Eigen::VectorXd state_values(const MarkovModel& m, const BaseObservable& b) {
    Eigen::VectorXd x = b.kind == BaseObservable::Kind::One ? Eigen::VectorXd::Ones(m.size()) : b.values;
    if (b.centered) x.array() -= m.stationary().dot(x);
    return x;
}

/// C_n(f,g) = sum h_l q_l' E[f0 1{S_n = l' - l} g0(X_n)] from the DP joint law.
inline double exact_Cn(const MarkovModel& m, const CellObservable& f, const CellObservable& g, int n) {
    double s = 0;
    for (const auto& ft : f.terms)
        for (const auto& gt : g.terms) {
            Eigen::VectorXd u = state_values(m, ft.base), v = state_values(m, gt.base);
            for (const auto& [l, w] : ft.weights)
                for (const auto& [lp, wp] : gt.weights)
                    s += w * wp * exact_cell_joint(m, u, v, n, Step{lp[0] - l[0], lp[1] - l[1]});
        }
    return s;
}

/// E[u . kappa(t_1) (x) ... (x) kappa(t_p)] by enumerating every branch path over the window.
inline Tensor brute_moment(const MarkovModel& m, const Eigen::VectorXd& u, const std::vector<int>& times) {
    const int d = m.dim();
    const int p = static_cast<int>(times.size());
    int lo = 0, hi = 0;
    for (int t : times) {
        lo = std::min(lo, t);
        hi = std::max(hi, t);
    }
    Tensor out(p, d);
    std::vector<Step> steps(static_cast<std::size_t>(hi - lo + 1));
    std::function<void(int, int, double)> walk = [&](int time, int state, double w) {
        if (time == 0) w *= u(state);
        if (time > hi) {
            for (std::size_t idx = 0; idx < out.size(); ++idx) {
                std::size_t rest = idx;
                double prod = w;
                for (int k = p - 1; k >= 0; --k) {
                    int c = static_cast<int>(rest % static_cast<std::size_t>(d));
                    rest /= static_cast<std::size_t>(d);
                    prod *= steps[static_cast<std::size_t>(times[static_cast<std::size_t>(k)] - lo)][c];
                }
                out[idx] += prod;
            }
            return;
        }
        for (const Branch& b : m.branches()[state]) {
            steps[static_cast<std::size_t>(time - lo)] = b.step;
            walk(time + 1, b.to, w * b.prob);
        }
    };
    for (int a = 0; a < m.size(); ++a) walk(lo, a, m.stationary()(a));
    return out;
}

/** A_m(u,v) by Cauchy integrals of t -> E[u e^{it.S_n} v(X_n)] / lambda_t^n over a polydisc of radius rho. */
inline CTensor contour_Am(const MarkovModel& m, const Eigen::VectorXd& u, const Eigen::VectorXd& v, int order,
                          int n = 64, double rho = 0.2, int N = 32) {
    const int d = m.dim();
    const Eigen::RowVectorXcd left = m.stationary().cwiseProduct(u).cast<cplx>().transpose();
    const Eigen::VectorXcd right = v.cast<cplx>();
    auto ratio = [&](const std::vector<cplx>& t) {
        Eigen::MatrixXcd Q = perturbed_operator(m, t);
        cplx lam = leading_triple(m, t).lambda;
        Eigen::RowVectorXcd row = left;
        for (int k = 0; k < n; ++k) row = (row * Q) / lam;
        return cplx(row * right);
    };
    const double pi = std::acos(-1.0);
    std::vector<cplx> z(static_cast<std::size_t>(N));
    for (int j = 0; j < N; ++j) z[static_cast<std::size_t>(j)] = rho * std::exp(cplx(0, 2 * pi * j / N));
    // grid of ratio values, then one coefficient per multi-index
    const int N2 = d == 2 ? N : 1;
    std::vector<cplx> grid(static_cast<std::size_t>(N * N2));
    for (int j = 0; j < N; ++j)
        for (int k = 0; k < N2; ++k)
            grid[static_cast<std::size_t>(j * N2 + k)] =
                d == 2 ? ratio({z[static_cast<std::size_t>(j)], z[static_cast<std::size_t>(k)]})
                       : ratio({z[static_cast<std::size_t>(j)]});
    auto coefficient = [&](int a, int b) {
        cplx s = 0;
        for (int j = 0; j < N; ++j)
            for (int k = 0; k < N2; ++k)
                s += grid[static_cast<std::size_t>(j * N2 + k)] * std::exp(cplx(0, -2 * pi * (double(a) * j + double(b) * k) / N));
        return s / double(N * N2) / std::pow(rho, a + b);
    };
    CTensor out(order, d);
    for (std::size_t idx = 0; idx < out.size(); ++idx) {
        int ones = 0;
        std::size_t rest = idx;
        for (int k = 0; k < order; ++k) {
            ones += static_cast<int>(rest % static_cast<std::size_t>(d));
            rest /= static_cast<std::size_t>(d);
        }
        const int zeros = order - ones;
        double fact = std::tgamma(zeros + 1.0) * std::tgamma(ones + 1.0);
        out[idx] = fact * coefficient(zeros, ones);
    }
    return out;
}

/// Prediction with K terms of an expansion at n.
inline double partial_sum(const Expansion& e, int K, double n) {
    const double half_d = 0.5 * e.gauss.sigma2.dim();
    double s = 0;
    for (int L = 0; L < K; ++L) s += e.c[static_cast<std::size_t>(L)] * std::pow(n, -half_d - L);
    return s;
}

}  // namespace oracle
