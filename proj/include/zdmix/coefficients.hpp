#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "zdmix/markov.hpp"
#include "zdmix/observables.hpp"
#include "zdmix/series.hpp"
#include "zdmix/tensor.hpp"

namespace zdmix {

/** \brief Source of the base correlations every coefficient is built from.
 *
 * Times are relative to the base point x: kappa o T^t with t < 0 means a step
 * taken before x. Tensor index k belongs to times[k].
 */
class CorrelationProvider {
public:
    virtual ~CorrelationProvider() = default;

    virtual int dim() const = 0;
    virtual std::string id() const = 0;

    virtual double mean(const BaseObservable& u) const = 0;
    /// E[u . kappa o T^{t_1} (x) ... (x) kappa o T^{t_p}], p <= 4.
    virtual Tensor moment(const BaseObservable& u, const std::vector<int>& times) const = 0;
    /// E[u . S_n^{(p)} . v o T^n], p <= 4.
    virtual Tensor displacement_moment(const BaseObservable& u, const BaseObservable& v, int n, int p) const = 0;

    /// Standard error of moment(); zero for exact providers.
    virtual Tensor moment_stderr(const BaseObservable& u, const std::vector<int>& times) const;
    /// Standard error of a sum of moments, when the provider can form it batch by batch
    /// (empty tensor: unknown, callers combine moment_stderr in quadrature).
    virtual Tensor sum_stderr(const BaseObservable&, const std::vector<std::vector<int>>&) const { return {}; }
    /// Known bound on the correlation decay rate (0 if unknown).
    virtual double decay_hint() const { return 0.0; }
    /// Largest k for which lambda_derivative(k) is available (0: none).
    virtual int lambda_order() const { return 0; }
    /// lambda_0^{(k)} when the provider knows it directly.
    virtual CTensor lambda_derivative(int k) const;
    /// Set when lambda is known to be even (time-reversal symmetry), so P = 4.
    virtual bool assume_even() const { return false; }
    /// True when the provider's answers carry no sampling error.
    virtual bool exact() const { return false; }
};

/** \brief Exact provider for a finite-state model: path expectations by matrix products. */
class MarkovProvider : public CorrelationProvider {
public:
    explicit MarkovProvider(MarkovModel model);

    int dim() const override { return model_.dim(); }
    std::string id() const override { return "markov:" + model_.name(); }
    double mean(const BaseObservable& u) const override;
    Tensor moment(const BaseObservable& u, const std::vector<int>& times) const override;
    Tensor displacement_moment(const BaseObservable& u, const BaseObservable& v, int n, int p) const override;
    double decay_hint() const override { return decay_; }
    int lambda_order() const override { return 8; }
    CTensor lambda_derivative(int k) const override;
    bool assume_even() const override { return model_.even(); }
    bool exact() const override { return true; }

    const MarkovModel& model() const { return model_; }
    /// State values of an observable (centered if requested).
    Eigen::VectorXd values(const BaseObservable& u) const;

private:
    const Eigen::MatrixXd& power(int k) const;

    MarkovModel model_;
    double decay_ = 0.0;
    std::vector<CTensor> lambda_;
    mutable std::vector<Eigen::MatrixXd> powers_;
    mutable std::mutex mu_;
};

struct DecayFit {
    double C0 = 0.0;
    double theta0 = 0.0;  ///< 0 is the sentinel for "no decay visible above the noise floor"
    double r2 = 1.0;
    int lags_used = 0;
};

/// Log-linear fit of |E[kappa (x) kappa o T^m]| over 1 <= m <= M above the noise floor.
DecayFit fit_decay(const CorrelationProvider& p, int M);

struct Truncation {
    int M = 0;
    double tail_bound = 0.0;
    DecayFit fit;
};

/// Smallest M with C0 theta^M / (1 - theta) < tol (theta = max(fit, decay hint)).
Truncation choose_truncation(const CorrelationProvider& p, double tol, int M_min = 4, int M_max = 400);

struct Sigma2Estimate {
    Tensor value;
    Tensor stderr_;
    double tail_bound = 0.0;
    int M = 0;
};

/// sum_{|k| <= M} E[kappa (x) kappa o T^k], symmetrized.
Sigma2Estimate sigma2(const CorrelationProvider& p, int M);

/// Series that involve u at time 0 and steps at times >= 0.
struct BPlus {
    double E = 0;
    Tensor B1, B2, B0, B02, B3;
    bool third_order = false;
};

/// Series that involve v at time 0 and steps at times <= -1.
struct BMinus {
    double E = 0;
    Tensor B1, B2, B0, B02, B3;
    bool third_order = false;
};

BPlus b_plus(const CorrelationProvider& p, const BaseObservable& u, int M, bool third_order);
BMinus b_minus(const CorrelationProvider& p, const BaseObservable& v, int M, bool third_order);

struct BSeries {
    int M = 0;
    double Eu = 0, Ev = 0;
    Tensor B0;
    Tensor B1p, B1m;    // B_1^+(u), B_1^-(v)
    Tensor B2p, B2m;    // B_2^+(u), B_2^-(v)
    Tensor B0p, B0m;    // B_0^+(u), B_0^-(v)
    Tensor B02p, B02m;  // B_{0,2}^+(u), B_{0,2}^-(v)
    Tensor B3p, B3m;    // B_3^+(u), B_3^-(v)
    Tensor Gamma0;      // E[kappa (x) kappa]
    bool third_order = false;
};

/// All series truncated at lag M; third-order sums only when requested.
BSeries b_series(const CorrelationProvider& p, const BaseObservable& u, const BaseObservable& v, int M,
                 bool third_order = true);

/// B_0 = sum_m |m| E[kappa (x) kappa o T^m].
Tensor b0_series(const CorrelationProvider& p, int M);

struct Lambda4Result {
    Tensor lambda4;   ///< lambda_0^{(4)}
    Tensor Lambda4;   ///< lambda_0^{(4)} - 3 Sym(Sigma^2 (x) Sigma^2)
    Tensor A3_11;     ///< A_3(1,1) (imaginary part; zero for even models)
    Tensor A4_11;     ///< A_4(1,1)
    double convergence = 0.0;  ///< gap between the last two extrapolants
};

/// From E[S_n^{(4)}] on a geometric ladder with Richardson extrapolation in 1/n.
Lambda4Result lambda4(const CorrelationProvider& p, const Tensor& sigma2, const Tensor& B0,
                      const std::vector<int>& ladder = {64, 128, 256, 512});

/** \brief A_0 .. A_4 (ranks 0..4) assembled from the series.
 *
 * Built from the one-sided parts A(u~,1), A(1,v~) and A(1,1) through the exact
 * factorization A(u,v) A(1,1) = A(u,1) A(1,v). A_3, A_4 need third_order series.
 */
std::vector<CTensor> assemble_A(const BSeries& b, const Tensor& sigma2, const Tensor& A3_11, const Tensor& A4_11);

/// One-sided parts: A_m(u~,1) and A_m(1,v~) for m = 0..4 (entries 3, 4 only with third_order).
std::vector<CTensor> one_sided_plus(const BSeries& b, const Tensor& sigma2);
std::vector<CTensor> one_sided_minus(const BSeries& b, const Tensor& sigma2);

/// Theorem-level quantities for cell observables f, g.
struct FrakB {
    double int_f = 0, int_g = 0;
    Tensor B0;
    Tensor B1p, B1m, B2p, B2m;
    Tensor B2p_tilde, B2m_tilde;  ///< limit forms built with E[S_m^{(2)}] instead of m Sigma^2
    Tensor A2_tilde;
};

FrakB frak_b(const CorrelationProvider& p, const CellObservable& f, const CellObservable& g, int M,
             const Tensor& B0);

/** \brief Expansion of C_n(f,g) = sum_L c_L / n^{d/2 + L}. */
struct Expansion {
    int K = 0;
    int P = 4;
    GaussianModel gauss;
    std::vector<double> c;         ///< c_0 .. c_{K-1}
    std::vector<double> c_imag;    ///< imaginary parts (should vanish)
    int M = 0;
    double tail_bound = 0.0;
    std::string provider;

    double predict(double n) const;
};

/** \brief Builds expansions and LLT predictions from one provider, caching series per observable pair. */
class ExpansionBuilder {
public:
    ExpansionBuilder(const CorrelationProvider& p, double tol = 1e-14);

    const Tensor& sigma2() const { return sigma2_; }
    const Tensor& B0() const { return B0_; }
    const Lambda4Result& lambda4_result() const { return l4_; }
    int M() const { return trunc_.M; }
    int P() const { return P_; }
    const Truncation& truncation() const { return trunc_; }
    const GaussianModel& gauss() const { return gauss_; }

    /// A_0..A_4 for base observables (B-series route).
    std::vector<CTensor> A(const BaseObservable& u, const BaseObservable& v, int m_max = 4);
    const BSeries& series(const BaseObservable& u, const BaseObservable& v, bool third_order);

    /// (lambda^n / a^n)_0^{(j)} as a polynomial in n.
    const NPolynomial& lambda_over_a(int j);

    /// c_0 .. c_{K-1} through the general route.
    Expansion expansion(const CellObservable& f, const CellObservable& g, int K);

    /// Two-term form through the theorem-level quantities (K = 2).
    Expansion expansion_frak(const CellObservable& f, const CellObservable& g);

    /// n^{-3} coefficient for zero-mean product observables (each with one term).
    double product_form_c2(const CellObservable& f, const CellObservable& g);

    /// Prediction of E[u 1{S_n = l} v o T^n] keeping terms down to n^{-d/2-(K-1)}.
    double llt_predict(const BaseObservable& u, const BaseObservable& v, int n, const Step& l, int K);

private:
    void build_lambda_over_a();
    bool lambda_term_known(int j, int p) const;

    const CorrelationProvider& p_;
    double tol_;
    Truncation trunc_;
    Tensor sigma2_, B0_, Gamma0_;
    Lambda4Result l4_;
    GaussianModel gauss_;
    int P_ = 4;
    int lambda_known_ = 4;
    std::vector<NPolynomial> lambda_over_a_;
    const BPlus& plus(const BaseObservable& u, bool third_order);
    const BMinus& minus(const BaseObservable& v, bool third_order);

    std::map<std::string, BPlus> plus_cache_;
    std::map<std::string, BMinus> minus_cache_;
    std::map<std::string, BSeries> series_cache_;
    std::map<std::string, std::vector<CTensor>> A_cache_;
};

}  // namespace zdmix
