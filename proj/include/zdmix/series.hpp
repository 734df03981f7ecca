#pragma once

#include <array>
#include <utility>
#include <vector>

#include "zdmix/tensor.hpp"

namespace zdmix {

/** \brief Truncated power series in t (d = 1 or 2 variables) with complex coefficients.
 *
 * Coefficients are stored by total degree; within degree s the entries are
 * t1^(s-b) t2^b for b = 0..s.
 */
class PowerSeries {
public:
    PowerSeries() : PowerSeries(2, 0) {}
    PowerSeries(int dim, int degree);

    static PowerSeries constant(int dim, int degree, cplx c);

    int dim() const { return dim_; }
    int degree() const { return degree_; }
    std::size_t size() const { return coef_.size(); }

    /// Offset of the monomial t1^a t2^b (b = 0 when dim = 1).
    std::size_t index(int a, int b) const;
    cplx& operator()(int a, int b = 0) { return coef_[index(a, b)]; }
    cplx operator()(int a, int b = 0) const { return coef_[index(a, b)]; }
    cplx& operator[](std::size_t i) { return coef_[i]; }
    cplx operator[](std::size_t i) const { return coef_[i]; }

    /// Exponents of the i-th stored monomial.
    std::pair<int, int> exponents(std::size_t i) const { return exps_[i]; }

    PowerSeries& operator+=(const PowerSeries& o);
    PowerSeries& operator-=(const PowerSeries& o);
    PowerSeries& operator*=(cplx s);

    /// Order-k derivative tensor at t = 0: entry (i_1..i_k) = alpha! * coef_alpha.
    CTensor derivative(int k) const;

    /// Evaluate at a (possibly complex) point.
    cplx eval(const std::vector<cplx>& t) const;

    /// Lowest total degree holding a coefficient above tol.
    int valuation(double tol) const;

    /// Zero all coefficients of total degree < k.
    void drop_below(int k);

private:
    int dim_;
    int degree_;
    std::vector<cplx> coef_;
    std::vector<std::pair<int, int>> exps_;
};

PowerSeries operator+(PowerSeries a, const PowerSeries& b);
PowerSeries operator-(PowerSeries a, const PowerSeries& b);
PowerSeries operator*(const PowerSeries& a, const PowerSeries& b);
PowerSeries operator*(cplx s, PowerSeries a);

/// exp(s) for a series with s(0) = 0.
PowerSeries series_exp(const PowerSeries& s);
/// log(f) for a series with f(0) = 1.
PowerSeries series_log(const PowerSeries& f);
/// 1/f for f(0) != 0.
PowerSeries series_inverse(const PowerSeries& f);

/// Series of exp(i t.k) for an integer step k.
PowerSeries character_series(int dim, int degree, const std::array<int, 2>& step);

/// Polynomial in n with tensor coefficients: sum_p coeff[p] n^p.
struct NPolynomial {
    std::vector<CTensor> coeff;

    CTensor at(double n) const;
    int degree(double tol) const;
};

}  // namespace zdmix
