#include "doctest.h"
#include "nhic/flow.hpp"
#include "nhic/model.hpp"
#include "nhic/poly.hpp"

#include <cmath>
#include <numbers>

using namespace nhic;

TEST_CASE("polynomial product and composition") {
    Poly x = Poly::variable(2, 4, 0), y = Poly::variable(2, 4, 1);
    Poly p = (x + y) * (x - y);
    double pt[2] = {0.3, -0.7};
    CHECK(p.eval(pt) == doctest::Approx(0.09 - 0.49));
    Poly q = p.compose({x * y, x});
    CHECK(q.eval(pt) == doctest::Approx(std::pow(0.3 * -0.7, 2) - 0.09));
    Poly d = p.derivative(0);
    CHECK(d.eval(pt) == doctest::Approx(0.6));
    Poly big = x * x * x;
    CHECK((big * big).max_abs() == 0.0);
}

TEST_CASE("pendulum normalization and saddle") {
    auto m = HamiltonianModel::pendulum();
    Vec z = Vec::Zero(2);
    CHECK(std::abs(m.H(z)) < 1e-14);
    auto s = analyze_saddle(m);
    CHECK(s.lambda[0] == doctest::Approx(2 * std::numbers::pi).epsilon(1e-12));
}

TEST_CASE("coupled pendula exponents") {
    auto m = HamiltonianModel::coupled_pendula(0.1);
    auto s = analyze_saddle(m);
    CHECK(s.lambda[0] == doctest::Approx(6.56013308).epsilon(1e-8));
    CHECK(s.lambda[1] == doctest::Approx(9.12664179).epsilon(1e-8));
}

TEST_CASE("DOP853 harmonic oscillator with dense output") {
    Dop853 s(2, [](double, const double* y, double* f) { f[0] = y[1]; f[1] = -y[0]; }, Tolerances{});
    double y0[2] = {1.0, 0.0};
    s.start(0.0, y0, 10.0);
    double worst = 0.0;
    while (s.step()) {
        double mid = 0.5 * (s.t() + s.t_old()), out[2];
        s.dense(mid, out);
        worst = std::max(worst, std::abs(out[0] - std::cos(mid)));
    }
    CHECK(std::abs(s.y()[0] - std::cos(10.0)) < 1e-11);
    CHECK(worst < 1e-10);
}

TEST_CASE("pendulum event and energy conservation") {
    auto m = HamiltonianModel::pendulum();
    Vec z0(2);
    z0 << 0.0, 0.5;
    auto seg = integrate(m, z0, 0.0, 5.0);
    CHECK(seg.max_energy_error(m) < 1e-11);
    auto ev = plane_event(0, 0.1, Direction::Increasing, "x=0.1");
    auto r = integrate_to_event(m, z0, ev, 5.0, {}, true);
    CHECK(std::abs(r.hit->z[0] - 0.1) < 1e-11);
    CHECK(symplectic_defect(r.hit->Psi) < 1e-10);
    auto back = integrate(m, seg.states.back(), 5.0, 0.0);
    CHECK((back.states.back() - z0).norm() < 1e-9);
    CHECK((seg.at(2.5) - integrate(m, z0, 0.0, 2.5).states.back()).norm() < 1e-10);
}

TEST_CASE("propagate gamma derivative matches finite difference") {
    auto m = HamiltonianModel::coupled_pendula(0.1);
    Vec z0(4);
    z0 << 0.1, -0.05, 0.2, 0.1;
    auto p = propagate(m, z0, 0.3, 0.0, true);
    auto pp = propagate(m, z0, 0.3, 1e-6, false);
    auto pm = propagate(m, z0, 0.3, -1e-6, false);
    CHECK(((pp.z - pm.z) / 2e-6 - p.dgamma).norm() < 1e-6);
}
