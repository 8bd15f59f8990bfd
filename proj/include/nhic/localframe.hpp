#pragma once

#include "nhic/common.hpp"
#include "nhic/flow.hpp"
#include "nhic/model.hpp"
#include "nhic/poly.hpp"

#include <string>
#include <vector>

namespace nhic {

// Local symplectic chart (u, v) at the saddle. Local vectors are stored as
// w = (u_1..u_n, v_1..v_n); the unstable manifold is {v = 0} and the stable
// manifold is {u = 0} up to the reported residual.
//
// Built in three layers: the linear chart z = L (u, v), in which
// H = sum lambda_i u_i v_i + rho(u - v); a shear straightening the stable
// graph u = U(v) via its generating function F_u; and a second shear
// straightening the image of the unstable graph via F'_v.
class LocalChart {
public:
    int n = 0;
    int degree = 0;
    Vec lambda;
    Mat L;      // (u, v)_lin -> z
    Mat L_inv;  // z -> (u, v)_lin
    PolyVec unstable_graph;  // v = G(u), linear coordinates
    PolyVec stable_graph;    // u = U(v) = -G(-v)
    Poly F_u, F_v;
    PolyVec grad_F_u, grad_F_v;
    std::vector<PolyVec> hess_F_u, hess_F_v;
    Poly rho;  // nonlinear part of H in linear coordinates, as a function of u - v
    double r_prime = 0.0;
    double residual_bound = 0.0;
    double linear_gate = 0.0;  // |(u,v)_lin| bound accepted before the nonlinear map
    std::vector<std::pair<double, double>> residual_profile;  // (radius, residual)

    bool is_linear() const { return degree < 2; }

    Vec to_linear(const Vec& z) const { return L_inv * z; }
    Vec to_local(const Vec& z) const;
    Vec from_local(const Vec& w) const;
    Mat to_local_jacobian(const Vec& z) const;
    Mat from_local_jacobian(const Vec& w) const;

    // Lattice-shifted variants: z is expressed relative to the translate (c, 0).
    Vec to_local_at(const Vec& z, const IVec& c) const;
    Vec from_local_at(const Vec& w, const IVec& c) const;

    // NaN-free membership test: linear norm within the gate and local norm <= radius.
    bool in_chart(const Vec& z_rel, double radius) const;

    Vec local_field(const HamiltonianModel& model, const Vec& w) const;

    // max over sampled axis points at the given radius of the off-axis field component
    double straightening_residual(const HamiltonianModel& model, double radius, int samples = 64) const;
    // invariance residual of the graph v = G(u) in linear coordinates
    double graph_residual(double radius, bool unstable = true, int samples = 64) const;
};

Vec shift_to(const Vec& z, const IVec& c);    // z - (c, 0)
Vec shift_from(const Vec& z, const IVec& c);  // z + (c, 0)

struct ChartOptions {
    int degree = 5;
    double r_prime = 0.0;        // 0 selects the largest dyadic radius meeting residual_target
    double residual_target = 1e-6;
    double max_radius = 0.5;
    bool allow_large_radius = false;  // otherwise RadiusTooLarge is raised when r_prime fails the target
};

LocalChart build_chart(const HamiltonianModel& model, const SaddleSpectrum& spectrum,
                       const ChartOptions& opt = {});

double hamiltonian_in_local(const LocalChart& chart, const HamiltonianModel& model, const Vec& w);

// Sections in local coordinates.
enum class SectionSide { UPlus, UMinus, VPlus, VMinus, Diagonal, AntiDiagonal };

std::string to_string(SectionSide s);
double section_value(SectionSide side, const Vec& w, double r);  // zero on the section
Vec section_gradient_local(SectionSide side, int n);

// Event g(z) = section value in the chart at lattice c; NaN outside the gate radius.
EventSpec section_event(const LocalChart& chart, SectionSide side, double r, const IVec& c,
                        Direction dir, double gate_radius, const std::string& name = "");
// Same section at whichever lattice translate is nearest to x; the hit's lattice is round(x).
EventSpec lattice_section_event(const LocalChart& chart, SectionSide side, double r, Direction dir,
                                double gate_radius, const std::string& name = "");
IVec nearest_lattice(const Vec& z, int n);
// Ball exit/entry |w| = R in local coordinates at lattice c.
EventSpec ball_event(const LocalChart& chart, double R, const IVec& c, Direction dir,
                     const std::string& name = "");
EventSpec lattice_ball_event(const LocalChart& chart, double R, Direction dir, const std::string& name = "");

enum class ConeFamily { KMinus, KMinusK, KPlus };

struct ConeParams {
    double alpha = 0.5;
    int k = 0;
};

struct ConeReport {
    int vectors = 0;
    int samples = 0;
    double min_margin = 0.0;  // min over t > 0 of (alpha |major| / |minor|) - 1
    bool invariant = false;
    double violation_time = 0.0;
    Vec violation_vector;
    double alpha_lower = 0.0;  // admissible range from r and the constant c
    double alpha_upper = 0.0;
};

// Local-coordinate fundamental matrices along a base run: Psi_loc(t) = D T(z(t)) Psi(t) D T(z0)^{-1}.
std::vector<Mat> local_fundamentals(const LocalChart& chart, const VariationalSegment& run);

ConeReport cone_check(const LocalChart& chart, const std::vector<double>& times,
                      const std::vector<Mat>& local_psi, const ConeParams& cone, ConeFamily family,
                      int n_vectors, unsigned seed = 7);

// Admissible alpha range for radius r given the nonlinearity constant c.
std::pair<double, double> cone_alpha_range(const Vec& lambda, int k, double c, double r);

std::string chart_to_json(const LocalChart& chart);

}  // namespace nhic
