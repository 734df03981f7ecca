#include "doctest.h"

#include <cmath>

#include "zdmix/spectral.hpp"

using namespace zdmix;

namespace {

Eigen::VectorXd ones(const MarkovModel& m) { return Eigen::VectorXd::Ones(m.size()); }

}  // namespace

TEST_CASE("perturbed operator of W5") {
    MarkovModel w5 = model_w5();
    auto Q0 = perturbed_operator(w5, {0.0, 0.0});
    CHECK(std::abs(Q0(0, 0) - 1.0) < 1e-15);
    for (double t1 : {0.3, -1.1})
        for (double t2 : {0.0, 0.7}) {
            cplx lam = perturbed_operator(w5, {t1, t2})(0, 0);
            CHECK(std::abs(lam - (1 + 2 * std::cos(t1) + 2 * std::cos(t2)) / 5) < 1e-15);
        }
}

TEST_CASE("characteristic function by matrix power equals DP enumeration") {
    MarkovModel m = model_two_state_2d();
    const int n = 6;
    std::vector<cplx> t{0.4, -0.9};
    Eigen::MatrixXcd Q = perturbed_operator(m, t);
    Eigen::MatrixXcd Qn = Eigen::MatrixXcd::Identity(m.size(), m.size());
    for (int k = 0; k < n; ++k) Qn = Qn * Q;
    cplx byPower = (m.stationary().cast<cplx>().transpose() * Qn * Eigen::VectorXcd::Ones(m.size()))(0, 0);
    auto g = exact_cell_distributions(m, ones(m), ones(m), {n}, 0.0)[0];
    cplx byDP = 0;
    for (int a = g.lo[0]; a <= g.hi[0]; ++a)
        for (int b = g.lo[1]; b <= g.hi[1]; ++b)
            byDP += g.at(a, b) * std::exp(cplx(0, 1) * (t[0].real() * a + t[1].real() * b));
    CHECK(std::abs(byPower - byDP) < 1e-14);
}

TEST_CASE("leading triple") {
    MarkovModel m = model_two_state_2d();
    auto lt0 = leading_triple(m, {0.0, 0.0});
    CHECK(std::abs(lt0.lambda - 1.0) < 1e-13);
    Eigen::MatrixXcd pi1 = Eigen::VectorXcd::Ones(m.size()) * m.stationary().cast<cplx>().transpose();
    CHECK((lt0.projector - pi1).norm() < 1e-12);

    auto lt = leading_triple(m, {0.1, 0.0});
    const auto& P = lt.projector;
    const auto& R = lt.remainder;
    CHECK((P * P - P).norm() < 1e-10);
    CHECK((P * R).norm() < 1e-10);
    CHECK((R * P).norm() < 1e-10);
    CHECK((lt.lambda * P + R - perturbed_operator(m, {0.1, 0.0})).norm() < 1e-12);
    CHECK(lt.remainder_radius < std::abs(lt.lambda));

    auto w = leading_triple(model_w5(), {0.5, 0.2});
    CHECK(std::abs(w.projector(0, 0) - 1.0) < 1e-14);

    // at t = pi/2 the eigenvalues of the 1-d chain are 1/4 +- i sqrt(3)/4, of equal modulus
    MarkovModel per = model_two_state_1d();
    CHECK_THROWS_WITH_AS(leading_triple(per, {cplx(M_PI / 2)}), doctest::Contains("t=(1.5708"), std::runtime_error);
}

TEST_CASE("lambda derivatives of W5") {
    auto d = lambda_derivatives(model_w5(), 4);
    CHECK(d[1].max_abs() < 1e-15);
    CHECK(std::abs(d[2].at({0, 0}) + 0.4) < 1e-14);
    CHECK(std::abs(d[2].at({1, 1}) + 0.4) < 1e-14);
    CHECK(std::abs(d[2].at({0, 1})) < 1e-14);
    CHECK(std::abs(d[4].at({0, 0, 0, 0}) - 0.4) < 1e-13);
    CHECK(std::abs(d[4].at({0, 0, 1, 1})) < 1e-13);
    Tensor s2 = model_sigma2(model_w5());
    CHECK(std::abs(s2.at({0, 0}) - 0.4) < 1e-14);
}

TEST_CASE("lambda derivatives match finite differences of the eigenvalue") {
    for (const char* name : {"two-state-2d", "skew-2d"}) {
        MarkovModel m = builtin_model(name);
        auto d = lambda_derivatives(m, 4);
        CHECK(d[1].max_abs() < 1e-13);
        // second and fourth directional derivatives along a fixed direction
        const double e[2] = {0.6, -0.8};
        auto lam = [&](double s) { return leading_triple(m, {cplx(s * e[0]), cplx(s * e[1])}).lambda; };
        const double h = 0.02;
        cplx f0 = lam(0), fp = lam(h), fm = lam(-h), fp2 = lam(2 * h), fm2 = lam(-2 * h);
        cplx second = (-fp2 + 16.0 * fp - 30.0 * f0 + 16.0 * fm - fm2) / (12 * h * h);
        Tensor ev = Tensor::vector({e[0], e[1]});
        cplx want2 = contract_raw(d[2], to_complex(tensor_power(ev, 2))).value();
        CHECK(std::abs(second - want2) < 1e-6);
        cplx fourth = (fp2 - 4.0 * fp + 6.0 * f0 - 4.0 * fm + fm2) / std::pow(h, 4);
        cplx want4 = contract_raw(d[4], to_complex(tensor_power(ev, 4))).value();
        CHECK(std::abs(fourth - want4) < 1e-3 * std::max(1.0, std::abs(want4)));
    }
}

TEST_CASE("evenness and contact order") {
    CHECK(model_w5().even());
    CHECK(model_two_state_1d().even());
    CHECK(model_two_state_2d().even());
    CHECK_FALSE(model_skew_2d().even());
    CHECK(contact_order(model_w5()) == 4);
    CHECK(contact_order(model_skew_2d()) == 3);
}

TEST_CASE("lambda over a polynomials") {
    MarkovModel w5 = model_w5();
    auto p = lambda_over_a_derivatives(w5, 8);
    CHECK(p[0].coeff.size() == 1);
    CHECK(std::abs(p[0].coeff[0].value() - 1.0) < 1e-15);
    for (int j : {1, 2, 3}) CHECK(p[j].at(100.0).max_abs() < 1e-13);
    CHECK(p[4].degree(1e-12) == 1);
    CHECK(std::abs(p[4].coeff[1].at({0, 0, 0, 0}) + 2.0 / 25) < 1e-13);
    CHECK(std::abs(p[4].coeff[0].max_abs()) < 1e-13);
    for (int j = 0; j <= 8; ++j) CHECK(p[j].degree(1e-12) <= j / 4);
    auto q = lambda_over_a_derivatives(model_skew_2d(), 8);
    for (int j = 0; j <= 8; ++j) CHECK(q[j].degree(1e-12) <= j / 3);
    CHECK(q[6].degree(1e-12) == 2);
}

TEST_CASE("exact cell joint") {
    MarkovModel w5 = model_w5();
    CHECK(exact_cell_joint(w5, ones(w5), ones(w5), 1, {1, 0}) == doctest::Approx(0.2).epsilon(1e-15));
    CHECK(exact_cell_joint(w5, ones(w5), ones(w5), 2, {0, 0}) == doctest::Approx(0.2).epsilon(1e-15));
    CHECK_THROWS(exact_cell_joint(w5, ones(w5), ones(w5), 2, {3, 0}));
    MarkovModel m = model_two_state_2d();
    auto grids = exact_cell_distributions(m, ones(m), ones(m), {0, 1, 7, 40});
    for (const auto& g : grids) CHECK(g.total() == doctest::Approx(1.0).epsilon(1e-13));
}

TEST_CASE("exact moments agree with the displacement law") {
    MarkovModel m = model_skew_2d();
    const int n = 12;
    auto g = exact_cell_distributions(m, ones(m), ones(m), {n}, 0.0)[0];
    Tensor m2(2), m4(4);
    for (int a = g.lo[0]; a <= g.hi[0]; ++a)
        for (int b = g.lo[1]; b <= g.hi[1]; ++b) {
            Tensor l = Tensor::vector({double(a), double(b)});
            Tensor l2 = tensor_power(l, 2), l4 = tensor_power(l, 4);
            l2 *= g.at(a, b);
            l4 *= g.at(a, b);
            m2 += l2;
            m4 += l4;
        }
    CHECK((exact_moment(m, n, 2) - m2).max_abs() < 1e-10);
    CHECK((exact_moment(m, n, 4) - m4).max_abs() < 1e-10 * m4.max_abs());
    // E[S_n^2] = -(lambda^n)''_0 up to a bounded term: check the growth rate
    Tensor s2 = model_sigma2(m);
    Tensor d = exact_moment(m, 2000, 2) - exact_moment(m, 1000, 2);
    d *= 1.0 / 1000;
    CHECK((d - s2).max_abs() < 1e-10);
}

TEST_CASE("A_{m,n} basics") {
    MarkovModel m = model_two_state_2d();
    Eigen::VectorXd u(2), v(2);
    u << 1.0, 0.0;
    v << 0.3, 1.7;
    double Eu = m.stationary().dot(u), Ev = m.stationary().dot(v);
    CHECK(std::abs(exact_Am_limit(m, u, v, 0).value() - Eu * Ev) < 1e-14);
    CHECK(exact_Am(m, ones(m), ones(m), 1, 50).max_abs() < 1e-13);
    // A_{2,n} converges geometrically to its limit
    CTensor lim = exact_Am_limit(m, u, v, 2);
    double prev = 1;
    for (int n : {4, 8, 16, 32}) {
        double err = (exact_Am(m, u, v, 2, n) - lim).max_abs();
        CHECK(err < prev);
        prev = err;
    }
    CHECK(prev < 1e-8);
}
