#include "doctest.h"

#include <cmath>

#include "zdmix/oracles.hpp"
#include "zdmix/coefficients.hpp"
#include "zdmix/spectral.hpp"

using namespace zdmix;

namespace {

Eigen::VectorXd ramp(const MarkovModel& m, double a, double b, double c) {
    Eigen::VectorXd x(m.size());
    for (int i = 0; i < m.size(); ++i) x(i) = a + b * i + c * i * i;
    return x;
}

BaseObservable sv(const Eigen::VectorXd& x, const char* name) { return BaseObservable::state_vector(x, name); }

/// Forwards everything except the lambda derivatives, so the builder must use its own routes.
class Blind : public CorrelationProvider {
public:
    explicit Blind(const CorrelationProvider& p) : p_(p) {}
    int dim() const override { return p_.dim(); }
    std::string id() const override { return "blind"; }
    double mean(const BaseObservable& u) const override { return p_.mean(u); }
    Tensor moment(const BaseObservable& u, const std::vector<int>& t) const override { return p_.moment(u, t); }
    Tensor displacement_moment(const BaseObservable& u, const BaseObservable& v, int n, int p) const override {
        return p_.displacement_moment(u, v, n, p);
    }
    double decay_hint() const override { return p_.decay_hint(); }
    bool exact() const override { return true; }

private:
    const CorrelationProvider& p_;
};

}  // namespace

TEST_CASE("provider moments equal path enumeration") {
    for (const MarkovModel& m : {model_two_state_2d(), model_skew_2d()}) {
        MarkovProvider p(m);
        Eigen::VectorXd u = ramp(m, 1.0, -2.0, 0.5);
        auto U = sv(u, "u");
        for (const std::vector<int>& times :
             {std::vector<int>{0}, {2}, {-1}, {0, 1}, {-2, 1}, {1, -2}, {0, 0}, {-1, 0, 2}, {2, 2, -1}, {0, 1, -1, 1}}) {
            Tensor a = p.moment(U, times);
            Tensor b = oracle::brute_moment(m, u, times);
            CHECK((a - b).max_abs() < 1e-14);
        }
        CHECK(p.mean(U.centered_version()) == 0.0);
        Tensor c = p.moment(U.centered_version(), {1});
        Tensor e = oracle::brute_moment(m, u.array() - m.stationary().dot(u), {1});
        CHECK((c - e).max_abs() < 1e-14);
    }
}

TEST_CASE("truncation and Green-Kubo sum") {
    MarkovProvider w5(model_w5());
    Truncation t = choose_truncation(w5, 1e-14);
    CHECK(t.M == 4);
    CHECK(t.fit.theta0 == 0.0);
    Tensor s = sigma2(w5, t.M).value;
    CHECK(std::abs(s[0] - 0.4) < 1e-15);
    CHECK(std::abs(s[1]) < 1e-15);

    MarkovModel m = model_two_state_1d();
    MarkovProvider p(m);
    DecayFit fit = fit_decay(p, 24);
    CHECK(fit.theta0 == doctest::Approx(0.5).epsilon(1e-9));
    Truncation tr = choose_truncation(p, 1e-14);
    CHECK(tr.tail_bound < 1e-14);
    Tensor s1 = sigma2(p, tr.M).value;
    CHECK(std::abs(s1[0] - model_sigma2(m)[0]) < 1e-13);
    CHECK_THROWS_WITH_AS(choose_truncation(p, 1e-300), doctest::Contains("tail tolerance violated"), std::runtime_error);
}

TEST_CASE("W5 fourth-order constants") {
    MarkovProvider w5(model_w5());
    ExpansionBuilder eb(w5);
    const Lambda4Result& r = eb.lambda4_result();
    CHECK(std::abs(r.lambda4[0] - 0.4) < 1e-10);
    CHECK(std::abs(r.Lambda4[0] + 2.0 / 25) < 1e-10);
    CHECK(std::abs(r.lambda4[3]) < 1e-10);  // (1,1,2,2)
    CHECK(eb.B0().max_abs() == 0.0);
    CHECK(eb.P() == 4);
}

TEST_CASE("lambda4 ladder equals the spectral derivative") {
    for (const MarkovModel& m : {model_two_state_1d(), model_two_state_2d(), model_skew_2d()}) {
        MarkovProvider p(m);
        ExpansionBuilder eb(p);
        CHECK((to_complex(eb.lambda4_result().lambda4) - p.lambda_derivative(4)).max_abs() < 1e-8);
    }
}

TEST_CASE("A-triangle: series, spectral limit and contour integrals agree") {
    for (const MarkovModel& m : {model_two_state_1d(), model_two_state_2d(), model_skew_2d()}) {
        MarkovProvider p(m);
        ExpansionBuilder eb(p);
        Eigen::VectorXd u = ramp(m, 1.0, 2.0, 0.3), v = ramp(m, 2.0, -1.5, 0.7);
        const int top = eb.P() == 4 ? 4 : 3;
        std::vector<CTensor> A = eb.A(sv(u, "u"), sv(v, "v"), top);
        for (int k = 0; k <= top; ++k) {
            CTensor spectral = symmetrize(exact_Am_limit(m, u, v, k));
            CTensor contour = oracle::contour_Am(m, u, v, k);
            INFO(m.name(), " m=", k);
            CHECK((A[static_cast<std::size_t>(k)] - spectral).max_abs() < 1e-7);
            CHECK((contour - spectral).max_abs() < 1e-7);
        }
    }
}

TEST_CASE("A_4 for a non-even model is refused") {
    MarkovProvider p(model_skew_2d());
    ExpansionBuilder eb(p);
    auto one = BaseObservable::one();
    CHECK_THROWS_WITH_AS(eb.A(one, one, 4), doctest::Contains("missing series"), std::runtime_error);
}

TEST_CASE("lambda/a polynomials") {
    MarkovProvider w5(model_w5());
    ExpansionBuilder eb(w5);
    // h = lambda e^{Sigma t^2/2} - 1 starts at order 4; n h^(4) carries Lambda_4
    const NPolynomial& j4 = eb.lambda_over_a(4);
    REQUIRE(j4.coeff.size() >= 2);
    CHECK(std::abs(j4.coeff[1][0].real() + 2.0 / 25) < 1e-10);
    CHECK(j4.coeff[0].max_abs() == 0.0);
    CHECK(eb.lambda_over_a(0).coeff[0].value() == cplx(1.0));
}

TEST_CASE("general expansion predicts the exact correlations") {
    MarkovModel m = model_two_state_2d();
    MarkovProvider p(m);
    ExpansionBuilder eb(p);
    Eigen::VectorXd u = ramp(m, 1.0, 2.0, 0.3), v = ramp(m, 2.0, -1.5, 0.7);
    auto f = CellObservable::single(sv(u, "u"), {{{0, 0}, 1.0}, {{1, 0}, 0.5}});
    auto g = CellObservable::single(sv(v, "v"), {{{0, 1}, 1.0}, {{0, 0}, -0.3}});
    Expansion ex = eb.expansion(f, g, 3);
    for (double im : ex.c_imag) CHECK(std::abs(im) < 1e-12);
    CHECK(ex.c[0] == doctest::Approx(gaussian_density(eb.gauss(), Tensor(1, 2)) * 1.5 * p.mean(sv(u, "u")) * 0.7 *
                                     p.mean(sv(v, "v"))));
    double prev2 = 1e300, prev3 = 1e300;
    for (int n : {64, 128, 256}) {
        double C = oracle::exact_Cn(m, f, g, n);
        double r2 = std::abs(C - oracle::partial_sum(ex, 2, n)) * n * n;
        double r3 = std::abs(C - oracle::partial_sum(ex, 3, n)) * n * n * n;
        CHECK(r2 < prev2);
        CHECK(r3 < 1.1 * std::abs(ex.c[2]) + 10.0);
        // the K = 2 residual is c_2 / n^3 up to O(n^-4)
        CHECK(std::abs(r2 * n - std::abs(ex.c[2])) < 200.0 / n);
        prev2 = r2;
        prev3 = r3;
    }
    (void)prev3;
}

TEST_CASE("general route equals the theorem-level two-term form") {
    for (const MarkovModel& m : {model_two_state_1d(), model_two_state_2d(), model_w5()}) {
        MarkovProvider p(m);
        ExpansionBuilder eb(p);
        const int d = m.dim();
        Eigen::VectorXd u = ramp(m, 1.0, 2.0, 0.3), v = ramp(m, 2.0, -1.5, 0.7);
        Step far = d == 2 ? Step{1, 2} : Step{3, 0};
        auto f = CellObservable::single(sv(u, "u"), {{{0, 0}, 1.0}, {{1, 0}, 0.5}});
        f += CellObservable::single(sv(v, "v"), {{far, -0.25}});
        auto g = CellObservable::single(sv(v, "v"), {{{0, d == 2 ? 1 : 0}, 1.0}, {{0, 0}, -0.3}});
        Expansion gen = eb.expansion(f, g, 2);
        Expansion frak = eb.expansion_frak(f, g);
        CHECK(std::abs(gen.c[0] - frak.c[0]) < 1e-12);
        CHECK(std::abs(gen.c[1] - frak.c[1]) < 1e-10);

        FrakB fb = frak_b(p, f, g, eb.M(), eb.B0());
        CHECK((fb.B2p - (fb.B2p_tilde - fb.B0 * fb.int_f)).max_abs() < 1e-10);
        CHECK((fb.B2m - (fb.B2m_tilde - fb.B0 * fb.int_g)).max_abs() < 1e-10);
    }
}

TEST_CASE("product observables: three-pairing form equals the general n^-3 coefficient") {
    for (const MarkovModel& m : {model_two_state_1d(), model_two_state_2d()}) {
        MarkovProvider p(m);
        ExpansionBuilder eb(p);
        Eigen::VectorXd u = ramp(m, 1.0, 2.0, 0.3), v = ramp(m, 2.0, -1.5, 0.7);
        auto uc = sv(u, "u").centered_version(), vc = sv(v, "v").centered_version();
        auto f = CellObservable::single(uc, {{{0, 0}, 1.0}, {{1, 0}, -1.0}});
        auto g = CellObservable::single(vc, {{{1, 0}, 1.0}, {{0, 0}, -1.0}});
        Expansion ex = eb.expansion(f, g, 3);
        CHECK(ex.c[0] == 0.0);
        CHECK(ex.c[1] == 0.0);
        double c2 = eb.product_form_c2(f, g);
        CHECK(std::abs(c2) > 1e-3);
        CHECK(std::abs(ex.c[2] - c2) < 1e-10);
    }
}

TEST_CASE("coboundaries lose one order, double coboundaries two") {
    for (const MarkovModel& base : {model_w5(), model_two_state_2d()}) {
        LiftedModel L = LiftedModel::of(base);
        MarkovProvider p(L.model);
        ExpansionBuilder eb(p);
        Eigen::VectorXd u = ramp(base, 1.0, 2.0, 0.3), v = ramp(base, 2.0, -1.5, 0.7);
        auto f = CellObservable::single(sv(u, "u"), {{{0, 0}, 1.0}, {{1, 0}, 0.5}});
        auto g = CellObservable::single(sv(v, "v"), {{{0, 1}, 1.0}, {{0, 0}, -0.3}});
        CellObservable fl = L.lift(f), gl = L.lift(g);
        CellObservable df = fl - L.compose_with_map(f), dg = gl - L.compose_with_map(g);
        Expansion e0 = eb.expansion(fl, gl, 3);
        Expansion e1 = eb.expansion(df, gl, 3);
        Expansion e2 = eb.expansion(df, dg, 3);
        const double scale = std::abs(e0.c[0]);
        CHECK(std::abs(e1.c[0]) < 1e-13 * scale);
        CHECK(std::abs(e1.c[1] + e0.c[0]) < 1e-12 * scale);
        CHECK(std::abs(e1.c[2] - (-e0.c[0] - 2 * e0.c[1])) < 1e-10 * scale);
        CHECK(std::abs(e2.c[0]) < 1e-13 * scale);
        CHECK(std::abs(e2.c[1]) < 1e-12 * scale);
        CHECK(std::abs(e2.c[2] + 2 * e0.c[0]) < 1e-10 * scale);
        // the lifted chain reproduces the base coefficients
        MarkovProvider pb(base);
        ExpansionBuilder ebb(pb);
        Expansion eb0 = ebb.expansion(f, g, 3);
        for (int k = 0; k < 3; ++k) CHECK(std::abs(eb0.c[k] - e0.c[k]) < 1e-8 * std::max(1.0, std::abs(eb0.c[k])));
    }
}

TEST_CASE("builder without lambda derivatives: ladder route and missing-series errors") {
    MarkovModel m = model_two_state_2d();
    MarkovProvider p(m);
    Blind blind(p);
    ExpansionBuilder full(p), ladder(blind);
    CHECK(ladder.P() == 4);
    Eigen::VectorXd u = ramp(m, 1.0, 2.0, 0.3), v = ramp(m, 2.0, -1.5, 0.7);
    auto f = CellObservable::single(sv(u, "u"), {{{0, 0}, 1.0}});
    auto g = CellObservable::single(sv(v, "v"), {{{1, 0}, 1.0}});
    Expansion a = full.expansion(f, g, 2), b = ladder.expansion(f, g, 2);
    CHECK(std::abs(a.c[0] - b.c[0]) < 1e-12);
    CHECK(std::abs(a.c[1] - b.c[1]) < 1e-9);
    CHECK_THROWS_WITH_AS(ladder.expansion(f, g, 3), doctest::Contains("missing series"), std::runtime_error);
    CHECK_THROWS_WITH_AS(full.expansion(f, g, 4), doctest::Contains("unsupported"), std::invalid_argument);

    MarkovProvider skew(model_skew_2d());
    ExpansionBuilder sb(skew);
    CHECK(sb.P() == 3);
    Blind bs(skew);
    ExpansionBuilder sbl(bs);
    CHECK(sbl.P() == 3);
    CHECK_THROWS_WITH_AS(sb.expansion(f, g, 3), doctest::Contains("unsupported"), std::invalid_argument);
}

TEST_CASE("local limit predictions improve with each order") {
    MarkovModel m = model_two_state_2d();
    MarkovProvider p(m);
    ExpansionBuilder eb(p);
    Eigen::VectorXd u = ramp(m, 1.0, 2.0, 0.3), v = ramp(m, 2.0, -1.5, 0.7);
    const int n = 200;
    for (Step l : {Step{0, 0}, Step{3, -2}, Step{10, 4}}) {
        double exact = exact_cell_joint(m, u, v, n, l);
        double e1 = std::abs(exact - eb.llt_predict(sv(u, "u"), sv(v, "v"), n, l, 1));
        double e2 = std::abs(exact - eb.llt_predict(sv(u, "u"), sv(v, "v"), n, l, 2));
        double e3 = std::abs(exact - eb.llt_predict(sv(u, "u"), sv(v, "v"), n, l, 3));
        INFO("l=(", l[0], ",", l[1], ")");
        CHECK(e2 < e1);
        CHECK(e3 < e2);
        CHECK(e3 < 1e-7);
    }
}
