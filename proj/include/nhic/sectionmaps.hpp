#pragma once

#include "nhic/common.hpp"
#include "nhic/flow.hpp"
#include "nhic/homoclinics.hpp"
#include "nhic/localframe.hpp"
#include "nhic/model.hpp"

#include <string>
#include <vector>

namespace nhic {

struct SectionSpec {
    SectionSide side = SectionSide::UPlus;
    double r = 0.0;
    IVec lattice;
    double delta = 0.0;  // half-width of the (u-hat, v-hat) window
};

struct SectionMapResult {
    Vec image;        // phase point relative to the start lattice
    Vec image_local;  // local coordinates at the target lattice
    IVec lattice;     // target lattice relative to the start lattice
    SectionSide target = SectionSide::UPlus;
    double time = 0.0;
    double energy = 0.0;
    Mat jacobian;        // phase-space fundamental matrix over the transit
    Mat local_jacobian;  // section-corrected, local coordinates
    Mat projected;       // (2n-2) x (2n-2) on (u-hat, v-hat)
    double symplectic_defect = 0.0;
    OrbitSegment segment;
};

struct MapOptions {
    double r = 0.0;
    double tube_radius = 0.0;  // 0 disables tube following
    double t_max = 40.0;
    bool jacobian = true;
    bool keep_segment = false;
    Tolerances tol;
};

// Local point on a section with prescribed hat coordinates and energy; the paired coordinate
// (v1 on u-sections, u1 on v-sections) is solved for.
Vec point_on_section(const LocalChart& chart, const HamiltonianModel& model, SectionSide side, double r,
                     const Vec& hat, double E);
Vec hat_coordinates(const Vec& w);  // (u_2..u_n, v_2..v_n)

// Start: z relative to its lattice point on Sigma^-_{exit_sign r}; target Sigma^+ at the
// homoclinic's class. Throws LeftTube / EventNotReached.
SectionMapResult outer_map(const LocalChart& chart, const HamiltonianModel& model, const Vec& z,
                           const HomoclinicOrbit& homoclinic, const MapOptions& opt);

// Start: z relative to its lattice point on Sigma^+ (entry_side VPlus or VMinus). The exit side
// follows the energy sign. expected_sign = 0 skips the sign check.
SectionMapResult inner_map(const LocalChart& chart, const HamiltonianModel& model, const Vec& z,
                           SectionSide entry_side, int expected_sign, const MapOptions& opt);

// d Phi xi + nu X with nu chosen so the image is tangent to the exit section.
Mat section_differential(const Mat& local_jacobian, const Vec& exit_field_local, SectionSide exit_side);

// Restricts a corrected local Jacobian to (u-hat, v-hat), lifting entry vectors into
// T(section) cap ker dH.
Mat project_jacobian(const Mat& corrected, const Vec& grad_h_local_in, SectionSide entry_side);

// Full map pipeline for a base run: z_in and z_out relative to their own lattice points.
void fill_map_jacobians(const LocalChart& chart, const HamiltonianModel& model, const Vec& z_in,
                        SectionSide entry_side, const Vec& z_out, SectionSide exit_side, const Mat& Psi,
                        SectionMapResult& res);

struct ExpansionReport {
    int samples = 0;
    double c_fit = 0.0;        // smallest c making the expansion bound hold
    double c_prime_fit = 0.0;  // smallest c' making the contraction bound hold
    double min_expansion_log_rate = 0.0;
    bool expansion_ok = false;
    bool contraction_ok = false;
    int violations = 0;
};

// Samples xi in the cone |xi_vhat| <= |xi_uhat|. c, c' <= 0 are fitted and reported.
ExpansionReport verify_expansion_contraction(const SectionMapResult& inner, const Vec& lambda, double r,
                                             double c = 0.0, double c_prime = 0.0, int samples = 200,
                                             unsigned seed = 11);

std::string map_to_json(const SectionMapResult& res);

}  // namespace nhic
