#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gfs/rng.hpp"
#include "gfs/tape.hpp"
#include "gfs/targets.hpp"

using namespace gfs;

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

// Independent 9-term mixture sum for the MoG oracle values.
double mog_log_mu_oracle(double x, double y, double grid) {
    double acc = 0.0;
    for (double mx : {-grid, 0.0, grid}) {
        for (double my : {-grid, 0.0, grid}) {
            const double q = (x - mx) * (x - mx) + (y - my) * (y - my);
            acc += (1.0 / 9.0) * std::exp(-q / 0.6) / (2.0 * M_PI * 0.3);
        }
    }
    return std::log(acc);
}

double fd_partial(const TargetDensity& t, std::vector<double> x, std::size_t i, double h) {
    x[i] += h;
    const double fp = t.log_mu(x);
    x[i] -= 2 * h;
    const double fm = t.log_mu(x);
    return (fp - fm) / (2 * h);
}

void check_score_vs_fd(const TargetDensity& t, std::uint64_t seed, double spread) {
    const CounterRng rng(seed);
    std::vector<double> x(t.dim), s(t.dim);
    for (int pt = 0; pt < 100; ++pt) {
        for (std::size_t i = 0; i < t.dim; ++i) {
            x[i] = spread * (2.0 * rng.uniform(CounterRng::derive(pt, i)) - 1.0);
        }
        t.score(x, s);
        for (std::size_t i = 0; i < t.dim; ++i) {
            const double fd = fd_partial(t, x, i, 1e-5);
            INFO("target " << t.name << " point " << pt << " coord " << i);
            CHECK(std::abs(s[i] - fd) / std::max(1.0, std::abs(fd)) <= 1e-6);
        }
    }
}

// Fixed-step composite Simpson over [-5,5] of the single-well integrand.
double manywell_z1_fixed(std::size_t intervals) {
    const auto f = [](double u) { return std::exp(-u * u * u * u + 6 * u * u + 0.5 * u); };
    const double a = -5.0, b = 5.0;
    const double h = (b - a) / static_cast<double>(intervals);
    double acc = f(a) + f(b);
    for (std::size_t i = 1; i < intervals; ++i) {
        acc += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
    }
    return acc * h / 3.0;
}

}  // namespace

TEST_CASE("mog values") {
    const TargetDensity t = make_mog();
    CHECK(t.dim == 2);
    CHECK(t.true_log_z == 0.0);

    const double at_origin = mog_log_mu_oracle(0, 0, 5.0);
    CHECK(t.log_mu(std::vector<double>{0.0, 0.0}) == doctest::Approx(at_origin).epsilon(1e-12));
    CHECK(at_origin == doctest::Approx(-2.8310).epsilon(2e-4));

    std::vector<double> s(2);
    t.score(std::vector<double>{0.0, 0.0}, s);
    CHECK(std::abs(s[0]) <= 1e-12);
    CHECK(std::abs(s[1]) <= 1e-12);

    const double at_mode = t.log_mu(std::vector<double>{5.0, 5.0});
    CHECK(at_mode == doctest::Approx(std::log(0.530516477 / 9.0)).epsilon(1e-6));
}

TEST_CASE("mog symmetry under coordinate permutation and sign flips") {
    const TargetDensity t = make_mog();
    const CounterRng rng(11);
    for (int i = 0; i < 200; ++i) {
        const double x = 12.0 * (rng.uniform(2 * i) - 0.5);
        const double y = 12.0 * (rng.uniform(2 * i + 1) - 0.5);
        const double base = t.log_mu(std::vector<double>{x, y});
        CHECK(std::abs(t.log_mu(std::vector<double>{y, x}) - base) <= 1e-12);
        CHECK(std::abs(t.log_mu(std::vector<double>{-x, y}) - base) <= 1e-12);
        CHECK(std::abs(t.log_mu(std::vector<double>{x, -y}) - base) <= 1e-12);
    }
}

TEST_CASE("mog_plus uses the wide grid") {
    const TargetDensity t = make_mog(true);
    CHECK(t.name == "mog_plus");
    CHECK(t.log_mu(std::vector<double>{10.0, 10.0}) ==
          doctest::Approx(mog_log_mu_oracle(10, 10, 10.0)).epsilon(1e-12));
    CHECK(t.true_log_z == 0.0);
}

TEST_CASE("funnel values") {
    const TargetDensity t = make_funnel();
    CHECK(t.dim == 10);
    CHECK(t.true_log_z == 0.0);

    std::vector<double> x(10, 0.0);
    const double expected = -0.5 * std::log(18.0 * M_PI) - 4.5 * kLog2Pi;
    CHECK(t.log_mu(x) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(expected == doctest::Approx(-10.288).epsilon(1e-4));

    std::vector<double> s(10);
    t.score(x, s);
    CHECK(s[0] == doctest::Approx(-4.5).epsilon(1e-12));
    for (std::size_t i = 1; i < 10; ++i) CHECK(s[i] == 0.0);
}

TEST_CASE("funnel guard keeps extreme states finite") {
    const TargetDensity t = make_funnel();
    std::vector<double> x(10, 1000.0);
    x[0] = -500.0;
    CHECK(std::isfinite(t.log_mu(x)));
    std::vector<double> s(10);
    t.score(x, s);
    for (double v : s) CHECK(std::isfinite(v));
}

TEST_CASE("manywell values") {
    const TargetDensity t = make_manywell();
    CHECK(t.dim == 32);
    CHECK(t.log_z_provenance == "quadrature");

    std::vector<double> x(32, 0.0);
    CHECK(t.log_mu(x) == 0.0);

    std::vector<double> s(32);
    t.score(x, s);
    for (std::size_t p = 0; p < 16; ++p) {
        CHECK(s[2 * p] == doctest::Approx(0.5).epsilon(1e-12));
        CHECK(s[2 * p + 1] == 0.0);
    }
}

TEST_CASE("manywell log Z agrees with step-halved fixed quadrature") {
    const TargetDensity t = make_manywell();
    const double z1_a = manywell_z1_fixed(1 << 14);
    const double z1_b = manywell_z1_fixed(1 << 15);
    const double logz_a = 16.0 * (std::log(z1_a) + 0.5 * kLog2Pi);
    const double logz_b = 16.0 * (std::log(z1_b) + 0.5 * kLog2Pi);
    CHECK(std::abs(logz_a - logz_b) < 1e-8);
    CHECK(t.true_log_z == doctest::Approx(logz_b).epsilon(1e-10));
}

TEST_CASE("analytic scores match finite differences on 100 random points") {
    check_score_vs_fd(make_mog(), 21, 6.0);
    check_score_vs_fd(make_funnel(), 22, 2.5);
    check_score_vs_fd(make_manywell(), 23, 2.0);
    check_score_vs_fd(make_gaussian(4, 1.7, 0.9), 24, 2.0);
}

TEST_CASE("evaluate returns both quantities or skips the score") {
    const TargetDensity t = make_mog();
    auto [lm, s] = evaluate(t, std::vector<double>{1.0, -1.0});
    CHECK(std::isfinite(lm));
    CHECK(s.size() == 2);
    auto [lm2, s2] = evaluate(t, std::vector<double>{1.0, -1.0}, false);
    CHECK(lm2 == lm);
    CHECK(s2.empty());
    CHECK_THROWS_AS(evaluate(t, std::vector<double>{1.0}), std::invalid_argument);
}

TEST_CASE("registry resolves the four benchmark names") {
    CHECK(make_target("mog").name == "mog");
    CHECK(make_target("mog_plus").name == "mog_plus");
    CHECK(make_target("funnel").dim == 10);
    CHECK(make_target("manywell").dim == 32);
    CHECK_THROWS_WITH_AS(make_target("cox"), doctest::Contains("unknown target"),
                         std::invalid_argument);
}

TEST_CASE("taped log-density and score agree with the plain evaluators") {
    const CounterRng rng(31);
    for (const TargetDensity& t :
         {make_mog(), make_mog(true), make_funnel(), make_manywell(), make_gaussian(3, 0.8, 1.2)}) {
        const std::size_t b = 5;
        Tensor x = Tensor::zeros({t.dim, b});
        for (std::size_t i = 0; i < x.data.size(); ++i) {
            x.data[i] = 4.0 * (rng.uniform(CounterRng::derive(t.dim, i)) - 0.5);
        }
        Tape tape;
        NodeRef xn = tape.constant(x);
        const Tensor lm = tape.value(t.taped_log_mu(tape, xn));
        const Tensor sc = tape.value(t.taped_score(tape, xn));
        const Tensor lm_plain = log_mu_batch(t, x);
        const Tensor sc_plain = score_batch(t, x);
        for (std::size_t j = 0; j < b; ++j) {
            CHECK(lm.data[j] == doctest::Approx(lm_plain.data[j]).epsilon(1e-12));
        }
        for (std::size_t i = 0; i < sc.data.size(); ++i) {
            CHECK(sc.data[i] == doctest::Approx(sc_plain.data[i]).epsilon(1e-11));
        }
    }
}

TEST_CASE("gaussian test target") {
    const TargetDensity t = make_gaussian(3, 2.0, 1.5);
    CHECK(t.true_log_z == 1.5);
    std::vector<double> x{1.0, -2.0, 0.5};
    const double expected =
        1.5 - 1.5 * (kLog2Pi + std::log(2.0)) - 0.5 * (1.0 + 4.0 + 0.25) / 2.0;
    CHECK(t.log_mu(x) == doctest::Approx(expected).epsilon(1e-12));
    std::vector<double> s(3);
    t.score(x, s);
    CHECK(s[0] == doctest::Approx(-0.5).epsilon(1e-12));
    CHECK(s[1] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("adaptive simpson integrates smooth functions") {
    const double v = adaptive_simpson([](double u) { return u * u; }, 0.0, 1.0, 1e-12);
    CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-10));
    const double g = adaptive_simpson([](double u) { return std::exp(-u * u / 2.0); }, -8.0, 8.0,
                                      1e-12);
    CHECK(g == doctest::Approx(std::sqrt(2.0 * M_PI)).epsilon(1e-10));
}
