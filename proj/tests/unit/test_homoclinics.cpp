#include "doctest.h"
#include "fixtures.hpp"

#include <cmath>
#include <numbers>

using namespace nhic;

TEST_CASE("pendulum homoclinics lie on the separatrix |y| = 2 sin(pi x)") {
    const auto& p = fx::pendulum();
    REQUIRE(p.lib.size() == 2);
    for (const auto& h : p.lib) {
        double worst = 0.0;
        for (const Vec& z : h.outer.states) {
            const double x = z[0] - std::floor(z[0]);
            worst = std::max(worst, std::abs(std::abs(z[1]) - 2 * std::sin(std::numbers::pi * x)));
        }
        CHECK(worst < 1e-8);
        CHECK(h.max_energy < 1e-8);
    }
    CHECK(p.lib[0].klass[0] == 1);
    CHECK(p.lib[1].klass[0] == -1);
}

TEST_CASE("symmetry partner of a homoclinic reverses class and signs") {
    const auto& c = fx::coupled();
    REQUIRE(c.lib.size() == 4);
    CHECK(c.lib[0].label == "(1,0)+");
    CHECK(c.lib[1].label == "(0,1)+");
    CHECK(c.lib[2].label == "(-1,0)-");
    CHECK(c.lib[3].label == "(0,-1)-");
    CHECK(c.lib[2].klass == -c.lib[0].klass);
    CHECK(c.lib[2].symmetry_defect < 1e-8);
    // z(t) -> s z(tau - t) maps the (1,0) orbit onto the reflected partner shifted by its class
    const auto& a = c.lib[0];
    const auto& b = c.lib[2];
    REQUIRE(std::abs(a.tau - b.tau) < 1e-8);
    for (double s : {0.1, 0.5, 0.9}) {
        Vec za = a.outer.at(s * a.tau), zb = b.outer.at((1 - s) * b.tau);
        Vec refl = za;
        refl.tail(2) *= -1;
        refl.head(2) -= a.klass.cast<double>();
        CHECK((refl - zb).norm() < 1e-7);
    }
}

TEST_CASE("homoclinics certify H2") {
    const auto& c = fx::coupled();
    for (auto h : c.lib) {
        auto cert = check_H2(c.model, c.chart, h);
        CHECK(cert.passed);
        CHECK(cert.margin > 1e-6);
    }
}

TEST_CASE("uncoupled (1,0) homoclinic stays in the (x1, y1) plane") {
    auto m = HamiltonianModel::coupled_pendula(0.0);
    auto ch = build_chart(m, analyze_saddle(m), {});
    auto opt = default_homoclinic_options(ch);
    opt.r = ch.r_prime / 8;
    Vec dir = Vec::Zero(2);
    dir[0] = 1.0;
    HomoclinicOrbit h = build_homoclinic(m, ch, dir, opt);
    CHECK(h.label == "(1,0)+");
    double off = 0.0;
    for (const Vec& z : h.outer.states) off = std::max({off, std::abs(z[1]), std::abs(z[3])});
    CHECK(off < 1e-12);
}

TEST_CASE("covering analysis") {
    SUBCASE("single class closes on the base torus") {
        IVec c(1);
        c << 1;
        auto chain = analyze_H3({c}, {{}}, 4, 3);
        CHECK(chain.h[0] == 1);
        CHECK(chain.ell == 0);
        CHECK(chain.hole_count() == 1);
    }
    SUBCASE("(1,0),(0,1) chain of the coupled pendula") {
        const auto& s = fx::coupled();
        auto chain = analyze_H3({s.lib[0].klass, s.lib[1].klass}, {x_samples(s.lib[0]), x_samples(s.lib[1])}, 4, 3);
        CHECK(chain.h == (IVec(2) << 2, 2).finished());
        CHECK(chain.ell == 1);
        CHECK(chain.hole_count() == 4);
        CHECK(chain.separation > 1e-4);
    }
}

TEST_CASE("transversality margin of orthogonal tangent planes") {
    // R^4 with flow along e1, dH = e4: W^u spans {e1, e2}, W^s spans {e1, e3}
    Mat tu = Mat::Zero(4, 2), ts = Mat::Zero(4, 2);
    tu(0, 0) = tu(1, 1) = 1;
    ts(0, 0) = ts(2, 1) = 1;
    Vec f = Vec::Unit(4, 0), g = Vec::Unit(4, 3);
    CHECK(transversality_margin(tu, ts, f, g) == doctest::Approx(1.0));
    Mat same = tu;
    CHECK(transversality_margin(tu, same, f, g) < 1e-12);
}
