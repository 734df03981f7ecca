#include "zdmix/series.hpp"

#include <cmath>
#include <stdexcept>

namespace zdmix {

namespace {

double factorial(int k) {
    double f = 1.0;
    for (int i = 2; i <= k; ++i) f *= i;
    return f;
}

cplx cpow(cplx z, int k) {
    cplx r = 1.0;
    for (int i = 0; i < k; ++i) r *= z;
    return r;
}

}  // namespace

PowerSeries::PowerSeries(int dim, int degree) : dim_(dim), degree_(degree) {
    if (dim != 1 && dim != 2) throw std::invalid_argument("series dimension must be 1 or 2");
    if (degree < 0) throw std::invalid_argument("negative series degree");
    for (int s = 0; s <= degree; ++s) {
        if (dim == 1) {
            exps_.emplace_back(s, 0);
        } else {
            for (int b = 0; b <= s; ++b) exps_.emplace_back(s - b, b);
        }
    }
    coef_.assign(exps_.size(), cplx(0));
}

PowerSeries PowerSeries::constant(int dim, int degree, cplx c) {
    PowerSeries p(dim, degree);
    p.coef_[0] = c;
    return p;
}

std::size_t PowerSeries::index(int a, int b) const {
    int s = a + b;
    if (a < 0 || b < 0 || s > degree_ || (dim_ == 1 && b != 0))
        throw std::out_of_range("monomial outside the truncated series");
    if (dim_ == 1) return static_cast<std::size_t>(a);
    return static_cast<std::size_t>(s * (s + 1) / 2 + b);
}

PowerSeries& PowerSeries::operator+=(const PowerSeries& o) {
    if (o.dim_ != dim_ || o.degree_ != degree_) throw std::invalid_argument("series shape mismatch");
    for (std::size_t i = 0; i < coef_.size(); ++i) coef_[i] += o.coef_[i];
    return *this;
}

PowerSeries& PowerSeries::operator-=(const PowerSeries& o) {
    if (o.dim_ != dim_ || o.degree_ != degree_) throw std::invalid_argument("series shape mismatch");
    for (std::size_t i = 0; i < coef_.size(); ++i) coef_[i] -= o.coef_[i];
    return *this;
}

PowerSeries& PowerSeries::operator*=(cplx s) {
    for (cplx& c : coef_) c *= s;
    return *this;
}

PowerSeries operator+(PowerSeries a, const PowerSeries& b) { return a += b; }
PowerSeries operator-(PowerSeries a, const PowerSeries& b) { return a -= b; }
PowerSeries operator*(cplx s, PowerSeries a) { return a *= s; }

PowerSeries operator*(const PowerSeries& a, const PowerSeries& b) {
    if (a.dim() != b.dim() || a.degree() != b.degree()) throw std::invalid_argument("series shape mismatch");
    PowerSeries c(a.dim(), a.degree());
    const int D = a.degree();
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] == cplx(0)) continue;
        auto [a1, a2] = a.exponents(i);
        for (std::size_t j = 0; j < b.size(); ++j) {
            auto [b1, b2] = b.exponents(j);
            if (a1 + a2 + b1 + b2 > D) break;
            c(a1 + b1, a2 + b2) += a[i] * b[j];
        }
    }
    return c;
}

PowerSeries series_exp(const PowerSeries& s) {
    if (std::abs(s[0]) > 1e-14) throw std::invalid_argument("series_exp needs zero constant term");
    PowerSeries result = PowerSeries::constant(s.dim(), s.degree(), 1.0);
    PowerSeries term = result;
    for (int k = 1; k <= s.degree(); ++k) {
        term = term * s;
        term *= cplx(1.0 / k);
        result += term;
    }
    return result;
}

PowerSeries series_log(const PowerSeries& f) {
    if (std::abs(f[0] - cplx(1)) > 1e-12) throw std::invalid_argument("series_log needs constant term 1");
    PowerSeries h = f;
    h[0] = 0;
    PowerSeries result(f.dim(), f.degree());
    PowerSeries power = PowerSeries::constant(f.dim(), f.degree(), 1.0);
    for (int k = 1; k <= f.degree(); ++k) {
        power = power * h;
        PowerSeries t = power;
        t *= cplx((k % 2 == 1 ? 1.0 : -1.0) / k);
        result += t;
    }
    return result;
}

PowerSeries series_inverse(const PowerSeries& f) {
    cplx c = f[0];
    if (std::abs(c) < 1e-300) throw std::invalid_argument("series_inverse of a series vanishing at 0");
    PowerSeries h = f;
    h *= 1.0 / c;
    h[0] = 0;
    // 1/(1+h) = sum (-h)^k
    PowerSeries result = PowerSeries::constant(f.dim(), f.degree(), 1.0);
    PowerSeries power = result;
    for (int k = 1; k <= f.degree(); ++k) {
        power = power * h;
        PowerSeries t = power;
        if (k % 2 == 1) t *= -1.0;
        result += t;
    }
    result *= 1.0 / c;
    return result;
}

PowerSeries character_series(int dim, int degree, const std::array<int, 2>& step) {
    PowerSeries p(dim, degree);
    const cplx i0(0, step[0]);
    const cplx i1(0, step[1]);
    for (std::size_t idx = 0; idx < p.size(); ++idx) {
        auto [a, b] = p.exponents(idx);
        p[idx] = cpow(i0, a) / factorial(a) * cpow(i1, b) / factorial(b);
    }
    return p;
}

CTensor PowerSeries::derivative(int k) const {
    if (k > degree_) throw std::out_of_range("derivative order exceeds series degree");
    CTensor t(k, dim_);
    for (std::size_t f = 0; f < t.size(); ++f) {
        int b = dim_ == 2 ? count_ones(f, k) : 0;
        int a = k - b;
        t[f] = coef_[index(a, b)] * factorial(a) * factorial(b);
    }
    return t;
}

cplx PowerSeries::eval(const std::vector<cplx>& t) const {
    cplx s = 0;
    for (std::size_t i = 0; i < coef_.size(); ++i) {
        auto [a, b] = exps_[i];
        cplx m = cpow(t[0], a);
        if (dim_ == 2) m *= cpow(t[1], b);
        s += coef_[i] * m;
    }
    return s;
}

int PowerSeries::valuation(double tol) const {
    for (std::size_t i = 0; i < coef_.size(); ++i)
        if (std::abs(coef_[i]) > tol) return exps_[i].first + exps_[i].second;
    return degree_ + 1;
}

void PowerSeries::drop_below(int k) {
    for (std::size_t i = 0; i < coef_.size(); ++i)
        if (exps_[i].first + exps_[i].second < k) coef_[i] = 0;
}

CTensor NPolynomial::at(double n) const {
    CTensor r = coeff.at(0);
    double np = 1.0;
    for (std::size_t p = 1; p < coeff.size(); ++p) {
        np *= n;
        CTensor t = coeff[p];
        t *= cplx(np);
        r += t;
    }
    return r;
}

int NPolynomial::degree(double tol) const {
    for (int p = static_cast<int>(coeff.size()) - 1; p > 0; --p)
        if (coeff[static_cast<std::size_t>(p)].max_abs() > tol) return p;
    return 0;
}

}  // namespace zdmix
