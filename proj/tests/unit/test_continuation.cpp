#include "doctest.h"
#include "fixtures.hpp"

#include <boost/math/quadrature/tanh_sinh.hpp>

#include <cmath>
#include <numbers>

using namespace nhic;

namespace {

// Period of the pendulum orbit on H = E by quadrature of dt = dx / |y|.
double pendulum_period(double E) {
    const double pi = std::numbers::pi;
    boost::math::quadrature::tanh_sinh<double> q;
    auto speed = [&](double x) { return std::sqrt(2 * (E + 2 * std::sin(pi * x) * std::sin(pi * x))); };
    if (E > 0) return q.integrate([&](double x) { return 1.0 / speed(x); }, 0.0, 1.0);
    const double x0 = std::asin(std::sqrt(-E / 2)) / pi;
    // E + 2 sin^2(pi x) = 2 sin(pi (x - x0)) sin(pi (x + x0)); xc carries x - x0 near the turning point
    auto f = [&](double x, double xc) {
        const double dx = xc <= 0 ? -xc : x - x0;
        return 1.0 / std::sqrt(4 * std::sin(pi * dx) * std::sin(pi * (x + x0)));
    };
    return 4 * q.integrate(f, x0, 0.5);
}

}  // namespace

TEST_CASE("energy grid is geometric") {
    auto g = energy_grid(1e-3, 1e-6, 0.1);
    REQUIRE(g.size() == 4);
    CHECK(g[0] == doctest::Approx(1e-3));
    CHECK(g[3] == doctest::Approx(1e-6));
}

TEST_CASE("pendulum periods match quadrature") {
    const auto& p = fx::pendulum();
    for (double E : {1e-3, 1e-6}) {
        auto o = solve_periodic(p.model, p.chart, p.lib, {{0}, 1, "(1)+"}, E, p.copt);
        CHECK(o.T == doctest::Approx(pendulum_period(E)).epsilon(1e-9));
        CHECK(o.shift[0] == 1);
        CHECK(o.energy_error < 1e-12);
        auto n = solve_periodic(p.model, p.chart, p.lib, {{0, 1}, -1, "pair(1)"}, -E, p.copt);
        CHECK(n.T == doctest::Approx(pendulum_period(-E)).epsilon(1e-9));
        CHECK(n.shift[0] == 0);
    }
}

TEST_CASE("continued families keep their invariants") {
    for (int sign : {1, -1}) {
        const auto& f = fx::pendulum_family(sign);
        CHECK(f.orbits.size() == 7);
        for (const auto& o : f.orbits) {
            CHECK(o.residual < 1e-10);
            CHECK(o.closure < 1e-8);
            CHECK(symplectic_defect(o.monodromy) < 1e-7);
            CHECK((o.E > 0) == (sign > 0));
        }
    }
}

TEST_CASE("negative energy pendulum orbits are s-symmetric") {
    const auto& o = fx::pendulum_family(-1).orbits.front();
    auto s = s_symmetry(fx::pendulum().model, o);
    CHECK(s.defect < 1e-7);
    CHECK(s.y_zero_crossings == 2);
}

TEST_CASE("itinerary and cyclic comparison") {
    const auto& p = fx::pendulum();
    const auto& o = fx::pendulum_family(-1).orbits.back();
    auto it = itinerary(p.model, p.chart, o);
    CHECK(cyclic_equal(it, {p.lib[0].klass, p.lib[1].klass}));
    CHECK(cyclic_equal(it, {p.lib[1].klass, p.lib[0].klass}));
    CHECK_FALSE(cyclic_equal(it, {p.lib[0].klass, p.lib[0].klass}));
}

TEST_CASE("orbit state round trip restores the orbit") {
    const auto& p = fx::pendulum();
    const auto& o = fx::pendulum_family(1).orbits[3];
    PeriodicOrbit back = orbit_state_from_json(orbit_state_to_json(o));
    back.spec = o.spec;
    ContinuationOptions opt = p.copt;
    opt.polish = false;
    PeriodicOrbit r = refine_periodic(p.model, p.chart, p.lib, back, opt);
    CHECK(r.T == o.T);
    CHECK(r.E == o.E);
    for (std::size_t j = 0; j < o.nodes.size(); ++j) CHECK((r.nodes[j] - o.nodes[j]).norm() == 0.0);
}

TEST_CASE("coupled pendula: Floquet multipliers pair and the monodromy factorizes") {
    const auto& c = fx::coupled();
    auto o = solve_periodic(c.model, c.chart, c.lib, {{0}, 1, "(1,0)+"}, 1e-6, c.copt);
    CHECK(o.floquet.pairing_defect < 1e-5);
    CHECK(std::abs(o.floquet.sigma1_analog - 1) < 0.1);
    auto lj = leg_jacobians(c.model, c.chart, o);
    CHECK(lj.factorization_error < 1e-6);
    CHECK(lj.max_symplectic_defect < 1e-6);
    // sigma2 is close to (|E| scale)^(-lambda2/lambda1) up to a bounded factor
    CHECK(o.floquet.log_abs[0] > 0);
}

TEST_CASE("wrong energy range is rejected") {
    const auto& p = fx::pendulum();
    CHECK_THROWS_AS(solve_periodic(p.model, p.chart, p.lib, {{0}, 1, "(1)+"}, 0.0, p.copt), Error);
}
