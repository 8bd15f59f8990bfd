#include "doctest.h"
#include "fixtures.hpp"
#include "nhic/sectionmaps.hpp"

#include <cmath>

using namespace nhic;

namespace {

MapOptions map_options(const fx::Setup& s) {
    MapOptions mo;
    mo.r = s.copt.r;
    return mo;
}

}  // namespace

TEST_CASE("section points carry the prescribed energy") {
    const auto& c = fx::coupled();
    Vec hat(2);
    hat << 1e-4, -2e-4;
    for (double E : {1e-6, -1e-6}) {
        Vec w = point_on_section(c.chart, c.model, SectionSide::UMinus, c.copt.r, hat, E);
        CHECK(std::abs(c.model.H(c.chart.from_local(w)) - E) < 1e-14);
        CHECK(std::abs(w[0] + c.copt.r) < 1e-15);
        CHECK((hat_coordinates(w) - hat).norm() < 1e-15);
    }
}

TEST_CASE("outer map sends the homoclinic exit crossing to its entry crossing") {
    const auto& c = fx::coupled();
    const auto& h = c.lib[0];
    auto res = outer_map(c.chart, c.model, h.exit_point, h, map_options(c));
    CHECK((res.image - h.entry_point).norm() < 1e-8);
    CHECK(res.lattice == h.klass);
    CHECK(std::abs(res.time - h.tau) < 1e-8);
}

TEST_CASE("inner map Jacobian against central differences") {
    const auto& c = fx::coupled();
    const double E = 1e-6, r = c.copt.r, d = 1e-8;
    Vec hat = Vec::Zero(2);
    auto map = [&](const Vec& hh) {
        Vec w = point_on_section(c.chart, c.model, SectionSide::VPlus, r, hh, E);
        return inner_map(c.chart, c.model, c.chart.from_local(w), SectionSide::VPlus, 1, map_options(c));
    };
    auto base = map(hat);
    CHECK(base.target == SectionSide::UPlus);
    Mat D(2, 2);
    for (int k = 0; k < 2; ++k) {
        Vec hp = hat, hm = hat;
        hp[k] += d;
        hm[k] -= d;
        D.col(k) = (hat_coordinates(map(hp).image_local) - hat_coordinates(map(hm).image_local)) / (2 * d);
    }
    CHECK((D - base.projected).norm() / base.projected.norm() < 1e-4);
    CHECK(base.symplectic_defect < 1e-6);
    // the inner map expands u-hat and contracts v-hat
    CHECK(std::abs(base.projected(0, 0)) > 1.0);
    CHECK(std::abs(base.projected(1, 1)) < 1.0);
}

TEST_CASE("inner transit exits on the side fixed by the energy sign") {
    const auto& c = fx::coupled();
    Vec w = point_on_section(c.chart, c.model, SectionSide::VPlus, c.copt.r, Vec::Zero(2), -1e-6);
    auto res = inner_map(c.chart, c.model, c.chart.from_local(w), SectionSide::VPlus, -1, map_options(c));
    CHECK(res.target == SectionSide::UMinus);
    // linear transit: u1 v1 = E / lambda1 gives t = ln(r^2 lambda1 / |E|) / lambda1
    const double l1 = c.spectrum.lambda[0], r = c.copt.r;
    CHECK(res.time == doctest::Approx(std::log(r * r * l1 / 1e-6) / l1).epsilon(1e-2));
}

TEST_CASE("inner map satisfies the expansion and contraction bounds") {
    const auto& c = fx::coupled();
    Vec w = point_on_section(c.chart, c.model, SectionSide::VPlus, c.copt.r, Vec::Zero(2), 1e-8);
    auto res = inner_map(c.chart, c.model, c.chart.from_local(w), SectionSide::VPlus, 1, map_options(c));
    auto rep = verify_expansion_contraction(res, c.spectrum.lambda, c.copt.r);
    CHECK(rep.expansion_ok);
    CHECK(rep.contraction_ok);
}
