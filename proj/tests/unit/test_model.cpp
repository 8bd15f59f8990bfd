#include "doctest.h"
#include "nhic/model.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <numbers>

using namespace nhic;

namespace {

Mode mode(std::initializer_list<int> m, double a, double b = 0.0) {
    Mode md;
    md.m = IVec(static_cast<int>(m.size()));
    int i = 0;
    for (int v : m) md.m[i++] = v;
    md.a = a;
    md.b = b;
    return md;
}

}  // namespace

TEST_CASE("potential derivatives agree with central differences") {
    TorusPotential V(2, {mode({1, 0}, -1.0, 0.3), mode({1, -2}, 0.2, -0.1)}, 0.5);
    Vec x(2);
    x << 0.13, -0.41;
    const double h = 1e-5;
    Vec g = V.gradient(x);
    Mat H = V.hessian(x);
    for (int i = 0; i < 2; ++i) {
        Vec e = Vec::Zero(2);
        e[i] = h;
        CHECK((V.value(x + e) - V.value(x - e)) / (2 * h) == doctest::Approx(g[i]).epsilon(1e-8));
        Vec dg = (V.gradient(x + e) - V.gradient(x - e)) / (2 * h);
        CHECK((dg - H.col(i)).norm() < 1e-6);
    }
}

TEST_CASE("normalization moves the minimum to the origin with value zero") {
    // minimum of 1 - cos(2 pi (x - 0.25)) sits at x = 0.25
    TorusPotential V(1, {mode({1}, -1.0 * std::cos(std::numbers::pi / 2), -1.0 * std::sin(std::numbers::pi / 2))}, 0.0);
    HamiltonianModel m(Mat::Identity(1, 1), V);
    CHECK(std::abs(m.normalization().x0[0] - 0.25) < 1e-10);
    Vec z = Vec::Zero(2);
    CHECK(std::abs(m.H(z)) < 1e-14);
    CHECK(m.gradH(z).norm() < 1e-10);
    CHECK(m.normalization().unique_on_grid);
}

TEST_CASE("Hamiltonian field is J grad H") {
    auto m = HamiltonianModel::coupled_pendula(0.1);
    Vec z(4);
    z << 0.2, -0.1, 0.3, 0.05;
    CHECK((m.field(z) - symplectic_j(2) * m.gradH(z)).norm() < 1e-13);
    Mat DX = m.field_jacobian(z);
    const double h = 1e-6;
    for (int i = 0; i < 4; ++i) {
        Vec e = Vec::Zero(4);
        e[i] = h;
        CHECK(((m.field(z + e) - m.field(z - e)) / (2 * h) - DX.col(i)).norm() < 1e-6);
    }
}

TEST_CASE("saddle exponents match the eigenvalues of A times the potential Hessian") {
    auto m = HamiltonianModel::coupled_pendula(0.1);
    const double c = 4 * std::numbers::pi * std::numbers::pi;
    Eigen::Matrix2d D2V;
    D2V << c * 1.1, -c * 0.1, -c * 0.1, c * 2.1;
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(D2V);
    auto s = analyze_saddle(m);
    CHECK(s.lambda[0] == doctest::Approx(std::sqrt(es.eigenvalues()[0])).epsilon(1e-12));
    CHECK(s.lambda[1] == doctest::Approx(std::sqrt(es.eigenvalues()[1])).epsilon(1e-12));
    CHECK(s.hessian_pd);
    CHECK(s.max_residual < 1e-10);
    // X_H(Xi^+) = lambda Xi^+
    for (int i = 0; i < 2; ++i) {
        Vec xi = s.xi_plus.col(i);
        CHECK((m.field_jacobian(Vec::Zero(4)) * xi - s.lambda[i] * xi).norm() < 1e-10);
    }
}

TEST_CASE("uncoupled pendula exponents are 2 pi sqrt(a)") {
    HamiltonianModel m(Mat::Identity(2, 2), TorusPotential(2, {mode({1, 0}, -1.0), mode({0, 1}, -2.0)}, 3.0));
    auto s = analyze_saddle(m);
    CHECK(s.lambda[0] == doctest::Approx(2 * std::numbers::pi).epsilon(1e-12));
    CHECK(s.lambda[1] == doctest::Approx(2 * std::numbers::pi * std::sqrt(2.0)).epsilon(1e-12));
}

TEST_CASE("resonant exponents are rejected") {
    // lambda2 = 2 lambda1
    HamiltonianModel m(Mat::Identity(2, 2), TorusPotential(2, {mode({1, 0}, -1.0), mode({0, 1}, -4.0)}, 5.0));
    CHECK_THROWS_WITH_AS(analyze_saddle(m), doctest::Contains("ResonanceDetected"), Error);
}

TEST_CASE("H1 certificate and kappa_min") {
    auto m = HamiltonianModel::coupled_pendula(0.1);
    auto s = analyze_saddle(m);
    auto c = check_H1(m, s, 2);
    // (kappa - 1) lambda1 > lambda_n first holds at kappa = 3 since lambda2 / lambda1 is about 1.39
    CHECK(c.kappa_min == 3);
    CHECK_FALSE(c.passed);
    CHECK(check_H1(m, s, 3).passed);
    auto p = HamiltonianModel::pendulum();
    auto cp = check_H1(p, analyze_saddle(p), 2);
    CHECK(cp.kappa_min == 3);
    CHECK(check_H1(p, analyze_saddle(p), cp.kappa_min).passed);
}
