#pragma once

#include <array>
#include <complex>
#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace zdmix {

using cplx = std::complex<double>;

/** \brief Dense multilinear form on R^d (d = 1 or 2), rank <= 8.
 *
 * Entry (i_1,...,i_m), each i_k in {0,..,d-1}, lives at flat offset
 * sum_k i_k d^(m-k): the first index is the most significant digit.
 */
template <class Scalar>
class BasicTensor {
public:
    static constexpr int kMaxRank = 8;

    BasicTensor() : dim_(2), rank_(0), data_(1, Scalar(0)) {}
    BasicTensor(int rank, int dim = 2);

    static BasicTensor scalar(Scalar s, int dim = 2);
    static BasicTensor vector(std::initializer_list<Scalar> v);
    static BasicTensor matrix(Scalar a00, Scalar a01, Scalar a10, Scalar a11);
    static BasicTensor identity(int dim = 2);

    int rank() const { return rank_; }
    int dim() const { return dim_; }
    std::size_t size() const { return data_.size(); }

    Scalar& operator[](std::size_t flat) { return data_[flat]; }
    const Scalar& operator[](std::size_t flat) const { return data_[flat]; }
    Scalar& at(std::initializer_list<int> idx);
    const Scalar& at(std::initializer_list<int> idx) const;
    const std::vector<Scalar>& data() const { return data_; }
    std::vector<Scalar>& data() { return data_; }

    /// Value of a rank-0 tensor.
    Scalar value() const;

    bool is_symmetric(double tol = 1e-12) const;
    double max_abs() const;

    BasicTensor& operator+=(const BasicTensor& o);
    BasicTensor& operator-=(const BasicTensor& o);
    BasicTensor& operator*=(Scalar s);

private:
    std::size_t flat(std::initializer_list<int> idx) const;

    int dim_;
    int rank_;
    std::vector<Scalar> data_;
};

using Tensor = BasicTensor<double>;
using CTensor = BasicTensor<cplx>;

template <class S>
BasicTensor<S> operator+(BasicTensor<S> a, const BasicTensor<S>& b) { return a += b; }
template <class S>
BasicTensor<S> operator-(BasicTensor<S> a, const BasicTensor<S>& b) { return a -= b; }
template <class S>
BasicTensor<S> operator*(S s, BasicTensor<S> a) { return a *= s; }
template <class S>
BasicTensor<S> operator*(BasicTensor<S> a, S s) { return a *= s; }

/// C(i_1..i_{m+k}) = A(i_1..i_m) B(i_{m+1}..i_{m+k}).
template <class S>
BasicTensor<S> tensor_product(const BasicTensor<S>& a, const BasicTensor<S>& b);

/// A * B: sums the last k indices of A against B. Both operands must be symmetric.
template <class S>
BasicTensor<S> contract(const BasicTensor<S>& a, const BasicTensor<S>& b);

/// Same index summation as contract() without the symmetry precondition.
template <class S>
BasicTensor<S> contract_raw(const BasicTensor<S>& a, const BasicTensor<S>& b);

/// Average over all permutations of the indices.
template <class S>
BasicTensor<S> symmetrize(const BasicTensor<S>& a);

/// x^{(k)}: k-fold tensor power of a vector.
template <class S>
BasicTensor<S> tensor_power(const BasicTensor<S>& x, int k);

/// sum_k coeffs[k] * x^{(k)}, coeffs[k] of rank k.
template <class S>
S taylor_eval(const std::vector<BasicTensor<S>>& coeffs, const BasicTensor<S>& x);

CTensor to_complex(const Tensor& t);
Tensor real_part(const CTensor& t);
Tensor imag_part(const CTensor& t);

/// Number of indices equal to 1 in the flat offset (d = 2 only).
int count_ones(std::size_t flat, int rank);

/** \brief Centered Gaussian law on R^d with covariance Sigma^2. */
struct GaussianModel {
    Tensor sigma2;
    Tensor inv_sigma2;
    double det_sigma2 = 1.0;

    static GaussianModel from_covariance(const Tensor& sigma2);
};

double gaussian_density(const GaussianModel& g, const Tensor& x);

/// m-th differential of the density at x (m <= 8), via the Hermite-type
/// recursion H_{m+1} = -y (x) H_m - m Sym(Sigma^{-2} (x) H_{m-1}), y = Sigma^{-2} x.
Tensor gaussian_derivatives(const GaussianModel& g, const Tensor& x, int m);

/// All differentials of ranks 0..m at x.
std::vector<Tensor> gaussian_derivative_list(const GaussianModel& g, const Tensor& x, int m);

}  // namespace zdmix
