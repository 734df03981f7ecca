#include "zdmix/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace zdmix {

namespace {

std::size_t ipow(int base, int e) {
    std::size_t r = 1;
    for (int i = 0; i < e; ++i) r *= static_cast<std::size_t>(base);
    return r;
}

template <class S>
double absval(const S& s) { return std::abs(s); }

}  // namespace

template <class S>
BasicTensor<S>::BasicTensor(int rank, int dim) : dim_(dim), rank_(rank) {
    if (rank < 0 || rank > kMaxRank)
        throw std::invalid_argument("tensor rank " + std::to_string(rank) + " outside 0..8");
    if (dim != 1 && dim != 2) throw std::invalid_argument("tensor dimension must be 1 or 2");
    data_.assign(ipow(dim, rank), S(0));
}

template <class S>
BasicTensor<S> BasicTensor<S>::scalar(S s, int dim) {
    BasicTensor t(0, dim);
    t.data_[0] = s;
    return t;
}

template <class S>
BasicTensor<S> BasicTensor<S>::vector(std::initializer_list<S> v) {
    BasicTensor t(1, static_cast<int>(v.size()));
    std::copy(v.begin(), v.end(), t.data_.begin());
    return t;
}

template <class S>
BasicTensor<S> BasicTensor<S>::matrix(S a00, S a01, S a10, S a11) {
    BasicTensor t(2, 2);
    t.data_ = {a00, a01, a10, a11};
    return t;
}

template <class S>
BasicTensor<S> BasicTensor<S>::identity(int dim) {
    BasicTensor t(2, dim);
    for (int i = 0; i < dim; ++i) t.data_[static_cast<std::size_t>(i * dim + i)] = S(1);
    return t;
}

template <class S>
std::size_t BasicTensor<S>::flat(std::initializer_list<int> idx) const {
    if (static_cast<int>(idx.size()) != rank_) throw std::invalid_argument("index arity does not match rank");
    std::size_t f = 0;
    for (int i : idx) {
        if (i < 0 || i >= dim_) throw std::out_of_range("tensor index out of range");
        f = f * static_cast<std::size_t>(dim_) + static_cast<std::size_t>(i);
    }
    return f;
}

template <class S>
S& BasicTensor<S>::at(std::initializer_list<int> idx) { return data_[flat(idx)]; }

template <class S>
const S& BasicTensor<S>::at(std::initializer_list<int> idx) const { return data_[flat(idx)]; }

template <class S>
S BasicTensor<S>::value() const {
    if (rank_ != 0) throw std::logic_error("value() on a tensor of positive rank");
    return data_[0];
}

template <class S>
bool BasicTensor<S>::is_symmetric(double tol) const {
    if (rank_ < 2 || dim_ == 1) return true;
    // d = 2: symmetric iff the entry depends only on how many indices equal 1.
    std::array<S, kMaxRank + 1> ref{};
    std::array<bool, kMaxRank + 1> seen{};
    double scale = std::max(1.0, max_abs());
    for (std::size_t f = 0; f < data_.size(); ++f) {
        int c = count_ones(f, rank_);
        if (!seen[c]) {
            seen[c] = true;
            ref[c] = data_[f];
        } else if (absval(data_[f] - ref[c]) > tol * scale) {
            return false;
        }
    }
    return true;
}

template <class S>
double BasicTensor<S>::max_abs() const {
    double m = 0.0;
    for (const S& v : data_) m = std::max(m, absval(v));
    return m;
}

template <class S>
BasicTensor<S>& BasicTensor<S>::operator+=(const BasicTensor& o) {
    if (o.rank_ != rank_ || o.dim_ != dim_) throw std::invalid_argument("tensor shape mismatch in +");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
}

template <class S>
BasicTensor<S>& BasicTensor<S>::operator-=(const BasicTensor& o) {
    if (o.rank_ != rank_ || o.dim_ != dim_) throw std::invalid_argument("tensor shape mismatch in -");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
}

template <class S>
BasicTensor<S>& BasicTensor<S>::operator*=(S s) {
    for (S& v : data_) v *= s;
    return *this;
}

int count_ones(std::size_t flat, int rank) {
    (void)rank;
    return __builtin_popcountll(static_cast<unsigned long long>(flat));
}

template <class S>
BasicTensor<S> tensor_product(const BasicTensor<S>& a, const BasicTensor<S>& b) {
    if (a.dim() != b.dim()) throw std::invalid_argument("tensor dimension mismatch in product");
    if (a.rank() + b.rank() > BasicTensor<S>::kMaxRank)
        throw std::invalid_argument("tensor product rank " + std::to_string(a.rank() + b.rank()) + " exceeds 8");
    BasicTensor<S> c(a.rank() + b.rank(), a.dim());
    const std::size_t nb = b.size();
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < nb; ++j) c[i * nb + j] = a[i] * b[j];
    return c;
}

template <class S>
BasicTensor<S> contract_raw(const BasicTensor<S>& a, const BasicTensor<S>& b) {
    if (a.dim() != b.dim()) throw std::invalid_argument("tensor dimension mismatch in contraction");
    if (b.rank() > a.rank())
        throw std::invalid_argument("contraction of rank " + std::to_string(a.rank()) + " against rank " +
                                    std::to_string(b.rank()));
    BasicTensor<S> c(a.rank() - b.rank(), a.dim());
    const std::size_t nb = b.size();
    for (std::size_t i = 0; i < c.size(); ++i) {
        S acc(0);
        for (std::size_t j = 0; j < nb; ++j) acc += a[i * nb + j] * b[j];
        c[i] = acc;
    }
    return c;
}

template <class S>
BasicTensor<S> contract(const BasicTensor<S>& a, const BasicTensor<S>& b) {
    if (!a.is_symmetric(1e-9) || !b.is_symmetric(1e-9))
        throw std::invalid_argument("contraction needs symmetric operands");
    return contract_raw(a, b);
}

template <class S>
BasicTensor<S> symmetrize(const BasicTensor<S>& a) {
    if (a.rank() < 2 || a.dim() == 1) return a;
    const int m = a.rank();
    std::array<S, BasicTensor<S>::kMaxRank + 1> sum{};
    std::array<int, BasicTensor<S>::kMaxRank + 1> cnt{};
    for (std::size_t f = 0; f < a.size(); ++f) {
        int c = count_ones(f, m);
        sum[c] += a[f];
        ++cnt[c];
    }
    BasicTensor<S> out(m, 2);
    for (std::size_t f = 0; f < a.size(); ++f) {
        int c = count_ones(f, m);
        out[f] = sum[c] / static_cast<double>(cnt[c]);
    }
    return out;
}

template <class S>
BasicTensor<S> tensor_power(const BasicTensor<S>& x, int k) {
    if (x.rank() != 1) throw std::invalid_argument("tensor_power needs a vector");
    BasicTensor<S> r = BasicTensor<S>::scalar(S(1), x.dim());
    for (int i = 0; i < k; ++i) r = tensor_product(r, x);
    return r;
}

template <class S>
S taylor_eval(const std::vector<BasicTensor<S>>& coeffs, const BasicTensor<S>& x) {
    if (x.rank() != 1) throw std::invalid_argument("taylor_eval needs a vector argument");
    S total(0);
    BasicTensor<S> xp = BasicTensor<S>::scalar(S(1), x.dim());
    for (std::size_t k = 0; k < coeffs.size(); ++k) {
        if (coeffs[k].rank() != static_cast<int>(k))
            throw std::invalid_argument("taylor_eval: coefficient " + std::to_string(k) + " has rank " +
                                        std::to_string(coeffs[k].rank()));
        total += contract_raw(coeffs[k], xp).value();
        if (k + 1 < coeffs.size()) xp = tensor_product(xp, x);
    }
    return total;
}

CTensor to_complex(const Tensor& t) {
    CTensor c(t.rank(), t.dim());
    for (std::size_t i = 0; i < t.size(); ++i) c[i] = t[i];
    return c;
}

Tensor real_part(const CTensor& t) {
    Tensor r(t.rank(), t.dim());
    for (std::size_t i = 0; i < t.size(); ++i) r[i] = t[i].real();
    return r;
}

Tensor imag_part(const CTensor& t) {
    Tensor r(t.rank(), t.dim());
    for (std::size_t i = 0; i < t.size(); ++i) r[i] = t[i].imag();
    return r;
}

GaussianModel GaussianModel::from_covariance(const Tensor& s2) {
    if (s2.rank() != 2) throw std::invalid_argument("covariance must have rank 2");
    GaussianModel g;
    g.sigma2 = s2;
    if (s2.dim() == 1) {
        if (!(s2[0] > 0)) throw std::invalid_argument("covariance not positive definite");
        g.det_sigma2 = s2[0];
        g.inv_sigma2 = Tensor(2, 1);
        g.inv_sigma2[0] = 1.0 / s2[0];
        return g;
    }
    if (std::abs(s2[1] - s2[2]) > 1e-12 * std::max(1.0, s2.max_abs()))
        throw std::invalid_argument("covariance not symmetric");
    double det = s2[0] * s2[3] - s2[1] * s2[2];
    if (!(s2[0] > 0) || !(det > 0)) throw std::invalid_argument("covariance not positive definite");
    g.det_sigma2 = det;
    g.inv_sigma2 = Tensor::matrix(s2[3] / det, -s2[1] / det, -s2[2] / det, s2[0] / det);
    return g;
}

double gaussian_density(const GaussianModel& g, const Tensor& x) {
    const int d = g.sigma2.dim();
    double q = contract_raw(contract_raw(g.inv_sigma2, x), x).value();
    double norm = std::pow(2.0 * std::numbers::pi, 0.5 * d) * std::sqrt(g.det_sigma2);
    return std::exp(-0.5 * q) / norm;
}

std::vector<Tensor> gaussian_derivative_list(const GaussianModel& g, const Tensor& x, int m) {
    if (m < 0 || m > Tensor::kMaxRank) throw std::invalid_argument("Gaussian derivative rank outside 0..8");
    const int d = g.sigma2.dim();
    Tensor y = contract_raw(g.inv_sigma2, x);
    Tensor minus_y = y;
    minus_y *= -1.0;
    // H[k]: polynomial prefactor with Phi^{(k)} = Phi * H[k].
    std::vector<Tensor> h;
    h.push_back(Tensor::scalar(1.0, d));
    if (m >= 1) h.push_back(minus_y);
    for (int k = 1; k < m; ++k) {
        Tensor next = tensor_product(minus_y, h[k]);
        Tensor corr = tensor_product(g.inv_sigma2, h[k - 1]);
        corr *= -static_cast<double>(k);
        next += corr;
        h.push_back(symmetrize(next));
    }
    double phi = gaussian_density(g, x);
    for (Tensor& t : h) t *= phi;
    return h;
}

Tensor gaussian_derivatives(const GaussianModel& g, const Tensor& x, int m) {
    return gaussian_derivative_list(g, x, m).back();
}

template class BasicTensor<double>;
template class BasicTensor<cplx>;
template Tensor tensor_product(const Tensor&, const Tensor&);
template CTensor tensor_product(const CTensor&, const CTensor&);
template Tensor contract(const Tensor&, const Tensor&);
template CTensor contract(const CTensor&, const CTensor&);
template Tensor contract_raw(const Tensor&, const Tensor&);
template CTensor contract_raw(const CTensor&, const CTensor&);
template Tensor symmetrize(const Tensor&);
template CTensor symmetrize(const CTensor&);
template Tensor tensor_power(const Tensor&, int);
template CTensor tensor_power(const CTensor&, int);
template double taylor_eval(const std::vector<Tensor>&, const Tensor&);
template cplx taylor_eval(const std::vector<CTensor>&, const CTensor&);

}  // namespace zdmix
