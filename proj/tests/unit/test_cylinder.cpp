#include "doctest.h"
#include "fixtures.hpp"

#include <cmath>

using namespace nhic;

TEST_CASE("line fit recovers an exact line") {
    std::vector<double> x, y, e;
    for (int k = 0; k <= 10; ++k) {
        e.push_back(std::pow(10.0, -k));
        x.push_back(std::log(e.back()));
        y.push_back(1.5 * x.back() - 2.0);
    }
    auto f = fit_line("t", "loglog", x, y, e);
    CHECK(f.slope == doctest::Approx(1.5).epsilon(1e-12));
    CHECK(f.intercept == doctest::Approx(-2.0).epsilon(1e-12));
    CHECK(f.residual_band < 1e-10);
    CHECK(f.points == 11);
    std::vector<double> few(e.begin(), e.begin() + 3), fx_(x.begin(), x.begin() + 3), fy(y.begin(), y.begin() + 3);
    CHECK_THROWS_AS(fit_line("t", "loglog", fx_, fy, few), Error);
}

TEST_CASE("polyline Hausdorff distance") {
    Vec a0(2), a1(2), b0(2), b1(2);
    a0 << 0, 0;
    a1 << 1, 0;
    b0 << 0, 0.5;
    b1 << 2, 0.5;
    // every point of a is 0.5 from b; the far end of b is sqrt(1 + 0.25) from a
    CHECK(hausdorff({{a0, a1}}, {{b0, b1}}) == doctest::Approx(std::sqrt(1.25)));
    CHECK(hausdorff({{a0, a1}}, {{a0, a1}}) == 0.0);
}

TEST_CASE("structural hole counts") {
    CHECK(structural_hole_count({(IVec(1) << 1).finished()}, (IVec(1) << 1).finished(), 1) == 1);
    const IVec e1 = (IVec(2) << 1, 0).finished(), e2 = (IVec(2) << 0, 1).finished();
    CHECK(structural_hole_count({e1, e2}, (IVec(2) << 2, 2).finished(), 2) == 4);
}

TEST_CASE("pendulum transit time grows like ln(1/E) / lambda") {
    const auto& p = fx::pendulum();
    std::vector<double> es;
    for (int k = 4; k <= 12; ++k) es.push_back(std::pow(10.0, -k));
    auto fit = transit_time_fit(inner_transit_sweep(p.model, p.chart, p.copt.r, es));
    CHECK(fit.slope * p.spectrum.lambda[0] == doctest::Approx(1.0).epsilon(0.02));
    CHECK(fit.residual_band < 1.0);
}

TEST_CASE("pendulum families converge to the separatrix linearly in E") {
    const auto& p = fx::pendulum();
    for (int sign : {1, -1}) {
        auto rep = hausdorff_convergence(p.model, fx::pendulum_family(sign), p.lib);
        CHECK(rep.fit.slope >= 0.8);
        CHECK(rep.fit.slope <= 1.05);
        CHECK(rep.adjacent_decreasing);
    }
}

TEST_CASE("pendulum atlas: one hole, invariant mesh, exact-zero vertex") {
    const auto& p = fx::pendulum();
    auto chain = analyze_H3({p.lib[0].klass}, {x_samples(p.lib[0])}, 2, 1);
    auto atlas = assemble(p.model, {fx::pendulum_family(1)}, {fx::pendulum_family(-1)}, p.lib, chain, 24);
    CHECK(atlas.hole_count == 1);
    CHECK(atlas.mesh.vertices.size() > 0);
    auto mi = mesh_invariance(p.model, atlas.mesh);
    CHECK(mi.passed);
    auto vx = vertex_differentiability_test(p.model, p.chart, {&fx::pendulum_family(1), &fx::pendulum_family(-1)});
    CHECK(vx.exact_zero);
    CHECK(vx.passed);
    CHECK_THROWS_AS(assemble(p.model, {}, {fx::pendulum_family(-1)}, p.lib, chain, 24), Error);
}

TEST_CASE("s maps a positive pendulum orbit onto a periodic orbit with reversed itinerary") {
    const auto& o = fx::pendulum_family(1).orbits[2];
    auto rep = s_partner(fx::pendulum().model, o);
    CHECK(rep.passed);
    CHECK(rep.closure < 1e-8);
}

TEST_CASE("normal hyperbolicity on a linear-like sample resolves the gap") {
    const auto& c = fx::coupled();
    auto o = solve_periodic(c.model, c.chart, c.lib, {{0}, 1, "(1,0)+"}, 1e-10, c.copt);
    auto nh = normal_hyperbolicity_test(c.model, c.chart, c.lib[0], o);
    CHECK(nh.resolved);
    CHECK(nh.tangent_bounded);
    const double gap = c.spectrum.lambda[1] - c.spectrum.lambda[0];
    CHECK(nh.gap_homoclinic == doctest::Approx(gap).epsilon(0.05));
}
