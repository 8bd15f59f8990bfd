#include "doctest.h"
#include "fixtures.hpp"

#include <cmath>

using namespace nhic;

TEST_CASE("chart round trip and straightened invariant manifolds") {
    const auto& c = fx::coupled();
    Vec w(4);
    w << 0.01, -0.005, 0.007, 0.002;
    CHECK((c.chart.to_local(c.chart.from_local(w)) - w).norm() < 1e-13);
    Mat J = c.chart.to_local_jacobian(c.chart.from_local(w));
    CHECK((J * c.chart.from_local_jacobian(w) - Mat::Identity(4, 4)).norm() < 1e-10);
    CHECK(c.chart.residual_bound < 1e-6);
    // the local field keeps {v = 0} and {u = 0} invariant up to the residual
    Vec wu(4), ws(4);
    wu << 0.8 * c.chart.r_prime, 0.3 * c.chart.r_prime, 0, 0;
    ws << 0, 0, 0.8 * c.chart.r_prime, -0.3 * c.chart.r_prime;
    Vec fu = c.chart.local_field(c.model, wu), fs = c.chart.local_field(c.model, ws);
    CHECK(fu.tail(2).norm() < 1e-6 * fu.norm());
    CHECK(fs.head(2).norm() < 1e-6 * fs.norm());
    // linear part of the field is diag(lambda, -lambda)
    Vec w0(4);
    w0 << 1e-7, 0, 0, 0;
    CHECK(c.chart.local_field(c.model, w0)[0] / 1e-7 == doctest::Approx(c.spectrum.lambda[0]).epsilon(1e-5));
}

TEST_CASE("local Hamiltonian is lambda u v to second order") {
    const auto& c = fx::coupled();
    Vec w(4);
    w << 1e-4, 2e-4, -3e-4, 1e-4;
    const double H = hamiltonian_in_local(c.chart, c.model, w);
    const double q = c.spectrum.lambda[0] * w[0] * w[2] + c.spectrum.lambda[1] * w[1] * w[3];
    CHECK(std::abs(H - q) < 1e-10);
}

TEST_CASE("lattice shifts and section helpers") {
    Vec z(4);
    z << 1.2, -0.9, 0.1, 0.2;
    IVec c(2);
    c << 1, -1;
    CHECK((shift_from(shift_to(z, c), c) - z).norm() == 0.0);
    CHECK(nearest_lattice(z, 2) == c);
    CHECK(to_string(SectionSide::UPlus) != to_string(SectionSide::VMinus));
    Vec w(4);
    w << 0.25, 0, 0, 0;
    CHECK(section_value(SectionSide::UPlus, w, 0.25) == 0.0);
}

TEST_CASE("cone family is invariant along a linear hyperbolic flow") {
    const auto& c = fx::coupled();
    // diagonal local fundamental matrices exp(diag(lambda, -lambda) t)
    std::vector<double> times;
    std::vector<Mat> psi;
    for (int k = 0; k <= 20; ++k) {
        const double t = 0.02 * k;
        times.push_back(t);
        Vec d(4);
        d << std::exp(c.spectrum.lambda[0] * t), std::exp(c.spectrum.lambda[1] * t), std::exp(-c.spectrum.lambda[0] * t),
            std::exp(-c.spectrum.lambda[1] * t);
        psi.push_back(d.asDiagonal());
    }
    auto rep = cone_check(c.chart, times, psi, {0.5, 0}, ConeFamily::KMinus, 200, 1);
    CHECK(rep.invariant);
    CHECK(rep.min_margin > 0);
    CHECK(rep.vectors == 200);
}

TEST_CASE("straightening residual shrinks with radius") {
    const auto& c = fx::coupled();
    const double big = c.chart.straightening_residual(c.model, c.chart.r_prime);
    const double small = c.chart.straightening_residual(c.model, c.chart.r_prime / 4);
    CHECK(small < big);
}
