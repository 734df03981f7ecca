#pragma once

#include <Eigen/Dense>
#include <vector>

#include "zdmix/markov.hpp"
#include "zdmix/series.hpp"
#include "zdmix/tensor.hpp"

namespace zdmix {

/// Q_t(a,b) = sum over branches a->b of prob * exp(i t.step); t may be complex.
/// E[exp(i t.S_n)] = pi Q_t^n 1.
Eigen::MatrixXcd perturbed_operator(const MarkovModel& model, const std::vector<cplx>& t);

struct LeadingTriple {
    cplx lambda;
    Eigen::VectorXcd right;  ///< Q r = lambda r
    Eigen::VectorXcd left;   ///< l^T Q = lambda l^T, normalised so l.r = 1
    Eigen::MatrixXcd projector;
    Eigen::MatrixXcd remainder;
    double remainder_radius = 0;  ///< spectral radius of the remainder
};

/// Power iteration on Q_t and its transpose, then deflation. Throws when the
/// leading eigenvalue is not separated from the rest of the spectrum.
LeadingTriple leading_triple(const MarkovModel& model, const std::vector<cplx>& t);

/// Taylor coefficients at t = 0 of lambda_t and of the right/left eigenvectors
/// (normalised by pi.r = 1 and 1.l = 1), via Rayleigh-Schroedinger recursion.
struct PerturbationSeries {
    PowerSeries lambda;
    std::vector<PowerSeries> right;
    std::vector<PowerSeries> left;
};

PerturbationSeries perturbation_series(const MarkovModel& model, int degree);

/// lambda_0^{(k)} for k = 0..k_max (k_max <= 8).
std::vector<CTensor> lambda_derivatives(const MarkovModel& model, int k_max);

/// Sigma^2 = -lambda_0''.
Tensor model_sigma2(const MarkovModel& model);

bool lambda_is_even(const MarkovModel& model);

/// Contact order P of lambda and a_t = exp(-Sigma^2 * t^2 / 2): 4 for even models, else 3.
int contact_order(const MarkovModel& model);

/// (lambda^n / a^n)_0^{(j)} for j = 0..j_max, each as a polynomial in n.
std::vector<NPolynomial> lambda_over_a_derivatives(const MarkovModel& model, int j_max);

/// Derivatives at 0 of (1+h)^n for j = 0..j_max as polynomials in n, where h has
/// valuation >= P (coefficients below P must already be zero).
std::vector<NPolynomial> binomial_power_polynomials(const PowerSeries& h, int P, int j_max);

/// Values of E[u 1{S_n = l} v(X_n)] on a box of displacements.
struct DisplacementGrid {
    int n = 0;
    int dim = 2;
    int lo[2] = {0, 0};
    int hi[2] = {0, 0};
    std::vector<double> values;

    double at(int l0, int l1 = 0) const;
    double total() const;
};

/// Dynamic programming over (state, displacement). The working box is trimmed at
/// rows/columns whose mass falls below trim_tol times the current maximum
/// (0 keeps the full reachable window).
std::vector<DisplacementGrid> exact_cell_distributions(const MarkovModel& model, const Eigen::VectorXd& u,
                                                       const Eigen::VectorXd& v, const std::vector<int>& ns,
                                                       double trim_tol = 1e-30);

double exact_cell_joint(const MarkovModel& model, const Eigen::VectorXd& u, const Eigen::VectorXd& v, int n,
                        const Step& ell);

/// Taylor series in t of E[u exp(i t.S_n) v(X_n)].
PowerSeries twisted_expectation_series(const MarkovModel& model, const Eigen::VectorXd& u, const Eigen::VectorXd& v,
                                       int n, int degree);

/// Taylor series of E[u exp(i t.S_n) v(X_n)] / lambda_t^n.
PowerSeries ratio_series(const MarkovModel& model, const Eigen::VectorXd& u, const Eigen::VectorXd& v, int n,
                         int degree);

/// A_{m,n}(u,v): m-th derivative at 0 of the ratio above.
CTensor exact_Am(const MarkovModel& model, const Eigen::VectorXd& u, const Eigen::VectorXd& v, int m, int n);

/// n -> infinity limit: m-th derivative of (pi u).r_t (l_t.v) / (l_t.r_t).
CTensor exact_Am_limit(const MarkovModel& model, const Eigen::VectorXd& u, const Eigen::VectorXd& v, int m);

/// E[S_n^{(p)}].
Tensor exact_moment(const MarkovModel& model, int n, int p);

}  // namespace zdmix
