#include "doctest.h"

#include <cmath>
#include <random>

#include "zdmix/tensor.hpp"

using namespace zdmix;

namespace {

Tensor random_symmetric(std::mt19937_64& rng, int rank) {
    std::normal_distribution<double> N;
    Tensor t(rank);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = N(rng);
    return symmetrize(t);
}

Tensor vec2(double a, double b) { return Tensor::vector({a, b}); }

}  // namespace

TEST_CASE("tensor product of a scalar and a vector scales") {
    Tensor c = tensor_product(Tensor::scalar(2.0), vec2(1, 0));
    CHECK(c.rank() == 1);
    CHECK(c[0] == 2.0);
    CHECK(c[1] == 0.0);
}

TEST_CASE("tensor product of basis vectors") {
    Tensor c = tensor_product(vec2(1, 0), vec2(0, 1));
    CHECK(c.at({0, 1}) == 1.0);
    CHECK(c.at({1, 0}) == 0.0);
    CHECK(c.at({0, 0}) == 0.0);
    CHECK(c.at({1, 1}) == 0.0);
}

TEST_CASE("tensor product matches an index loop") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> N;
    Tensor a(2), b(2);
    for (int i = 0; i < 4; ++i) {
        a[i] = N(rng);
        b[i] = N(rng);
    }
    Tensor c = tensor_product(a, b);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
            for (int k = 0; k < 2; ++k)
                for (int l = 0; l < 2; ++l) CHECK(c.at({i, j, k, l}) == a.at({i, j}) * b.at({k, l}));
}

TEST_CASE("rank overflow is rejected") {
    CHECK_THROWS(tensor_product(Tensor(5), Tensor(4)));
    CHECK_THROWS(Tensor(9));
}

TEST_CASE("contraction basics") {
    Tensor s2 = Tensor::matrix(0.7, 0.2, 0.2, 0.4);
    auto g = GaussianModel::from_covariance(s2);
    CHECK(contract(s2, g.inv_sigma2).value() == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(contract(Tensor::scalar(3.0), Tensor::scalar(4.0)).value() == 12.0);
    CHECK(contract(vec2(1, 2), vec2(3, -1)).value() == 1.0);
    CHECK_THROWS(contract(vec2(1, 2), Tensor(2)));
    Tensor asym = tensor_product(vec2(1, 0), vec2(0, 1));
    CHECK_THROWS(contract(asym, vec2(1, 1)));
}

TEST_CASE("A*(B(x)C) = (A*B)*C on random symmetric triples") {
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<int> R(0, 3);
    double worst = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        int kb = R(rng), kc = R(rng);
        int extra = R(rng) % 3;
        int ma = kb + kc + extra;
        Tensor a = random_symmetric(rng, ma);
        Tensor b = random_symmetric(rng, kb);
        Tensor c = random_symmetric(rng, kc);
        Tensor lhs = contract_raw(a, tensor_product(b, c));
        Tensor rhs = contract(symmetrize(contract(a, b)), c);
        Tensor diff = lhs - rhs;
        worst = std::max(worst, diff.max_abs() / std::max(1.0, lhs.max_abs()));
    }
    CHECK(worst < 1e-12);
}

TEST_CASE("symmetrize") {
    std::mt19937_64 rng(5);
    Tensor a(3);
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = double(i) * 0.3 - 1;
    Tensor s = symmetrize(a);
    CHECK((symmetrize(s) - s).max_abs() < 1e-15);
    Tensor b = random_symmetric(rng, 4);
    CHECK((symmetrize(b) - b).max_abs() < 1e-15);
    Tensor c = symmetrize(tensor_product(vec2(1, 0), vec2(0, 1)));
    CHECK(c.at({0, 1}) == 0.5);
    CHECK(c.at({1, 0}) == 0.5);
}

TEST_CASE("gaussian density") {
    auto id = GaussianModel::from_covariance(Tensor::identity());
    CHECK(gaussian_density(id, vec2(0, 0)) == doctest::Approx(1.0 / (2 * M_PI)).epsilon(1e-14));
    auto w5 = GaussianModel::from_covariance(Tensor::matrix(0.4, 0, 0, 0.4));
    CHECK(gaussian_density(w5, vec2(0, 0)) == doctest::Approx(5.0 / (4 * M_PI)).epsilon(1e-14));
    // midpoint quadrature over [-8,8]^2 for a correlated covariance
    auto g = GaussianModel::from_covariance(Tensor::matrix(0.7, 0.2, 0.2, 0.4));
    double h = 0.02, total = 0;
    for (double x = -8 + h / 2; x < 8; x += h)
        for (double y = -8 + h / 2; y < 8; y += h) total += gaussian_density(g, vec2(x, y)) * h * h;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("gaussian derivatives") {
    auto g = GaussianModel::from_covariance(Tensor::matrix(0.7, 0.2, 0.2, 0.4));
    Tensor zero = vec2(0, 0);
    for (int m = 1; m <= 7; m += 2) CHECK(gaussian_derivatives(g, zero, m).max_abs() == 0.0);

    auto id = GaussianModel::from_covariance(Tensor::identity());
    Tensor d2 = gaussian_derivatives(id, zero, 2);
    Tensor expect = Tensor::identity();
    expect *= -gaussian_density(id, zero);
    CHECK((d2 - expect).max_abs() < 1e-15);

    // Phi^{(2k)}(0) = (-1)^k (2k-1)!! Sym((Sigma^-2)^{(k)}) Phi(0)
    Tensor sinv = g.inv_sigma2;
    Tensor pw = Tensor::scalar(1.0);
    double dfact = 1;
    for (int k = 1; k <= 4; ++k) {
        pw = tensor_product(pw, sinv);
        if (k > 1) dfact *= 2 * k - 1;
        Tensor want = symmetrize(pw);
        want *= (k % 2 ? -1.0 : 1.0) * dfact * gaussian_density(g, zero);
        Tensor got = gaussian_derivatives(g, zero, 2 * k);
        CHECK((got - want).max_abs() < 1e-12 * want.max_abs());
    }
}

TEST_CASE("gaussian derivatives against finite differences") {
    auto g = GaussianModel::from_covariance(Tensor::matrix(0.7, 0.2, 0.2, 0.4));
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> U(-1, 1);
    const double h = 1e-3;
    for (int trial = 0; trial < 5; ++trial) {
        Tensor x = vec2(U(rng), U(rng));
        for (int m = 1; m <= 6; ++m) {
            Tensor exact = gaussian_derivatives(g, x, m);
            // Richardson-extrapolated central difference of the (m-1)-th derivative
            Tensor fd(m);
            for (int c = 0; c < 2; ++c) {
                auto diff = [&](double step) {
                    Tensor xp = x, xm = x;
                    xp[c] += step;
                    xm[c] -= step;
                    Tensor d = gaussian_derivatives(g, xp, m - 1) - gaussian_derivatives(g, xm, m - 1);
                    d *= 1.0 / (2 * step);
                    return d;
                };
                Tensor d1 = diff(h), d2 = diff(h / 2);
                Tensor rich = d2;
                rich *= 4.0 / 3;
                d1 *= 1.0 / 3;
                rich -= d1;
                // the new index is the last one
                for (std::size_t i = 0; i < rich.size(); ++i) fd[2 * i + c] = rich[i];
            }
            CHECK((fd - exact).max_abs() <= 1e-6 * exact.max_abs());
        }
    }
}

TEST_CASE("taylor evaluation") {
    std::vector<Tensor> c0{Tensor::scalar(2.5)};
    CHECK(taylor_eval(c0, vec2(3, 4)) == 2.5);
    std::vector<Tensor> c1{Tensor::scalar(1.0), vec2(2, -1)};
    CHECK(taylor_eval(c1, vec2(3, 4)) == doctest::Approx(1 + 6 - 4));
    // p(x) = 1 + x - 2x^2 + 0.5x^3 + 3x^4 in one variable via a 1-d tensor list
    std::vector<Tensor> c4;
    double coef[5] = {1, 1, -2, 0.5, 3};
    double fact = 1;
    for (int k = 0; k <= 4; ++k) {
        if (k) fact *= k;
        Tensor t(k, 1);
        t[0] = coef[k];
        c4.push_back(t);
    }
    Tensor x(1, 1);
    x[0] = 0.7;
    double p = 1 + 0.7 - 2 * 0.49 + 0.5 * 0.343 + 3 * 0.2401;
    CHECK(taylor_eval(c4, x) == doctest::Approx(p).epsilon(1e-14));
    std::vector<Tensor> bad{Tensor::scalar(1.0), Tensor(2)};
    CHECK_THROWS(taylor_eval(bad, vec2(1, 1)));
}
