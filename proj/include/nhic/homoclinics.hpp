#pragma once

#include "nhic/common.hpp"
#include "nhic/flow.hpp"
#include "nhic/localframe.hpp"
#include "nhic/model.hpp"

#include <string>
#include <vector>

namespace nhic {

// Zero-energy orbit homoclinic to the saddle, in lifted coordinates. Time 0 is the
// exit crossing of Sigma^-_{exit_sign r} = {u1 = exit_sign r} at lattice 0; time tau is
// the entry crossing of Sigma^+_{entry_sign r} = {v1 = entry_sign r} at lattice klass.
struct HomoclinicOrbit {
    IVec klass;
    int exit_sign = 1;
    int entry_sign = 1;
    double r = 0.0;
    Vec seed_direction;  // unit vector in local u at which W^u_loc was seeded
    double seed_radius = 0.0;

    OrbitSegment outer;  // [0, tau], dense output available
    double tau = 0.0;
    Vec exit_point, entry_point;  // phase points (entry in lifted coordinates)
    Vec exit_local, entry_local;  // chart coordinates (entry relative to klass)

    // Full sampled orbit: straightened-chart tails plus the outer segment.
    std::vector<double> times;
    std::vector<Vec> states;

    double mismatch = 0.0;        // |u| at the entry crossing
    double max_energy = 0.0;      // max |H| along samples
    double approach_angle_out = 0.0;  // angle of x-velocity to Xi_{1,x} at the tails
    double approach_angle_in = 0.0;
    double transversality_margin = 0.0;
    double symmetry_defect = 0.0;  // set by pair_by_symmetry: distance to the reflected partner
    std::string label;
};

struct HomoclinicOptions {
    double r = 0.0;          // section radius
    double eps0 = 0.0;       // seed radius on W^u_loc
    double match_radius = 0.0;  // ball in which the scan mismatch is measured
    double t_max = 20.0;
    double box = 3.0;        // |x|_inf bound of the lifted search domain
    double tail_radius = 1e-13;
    int scan_points = 1440;
    double scan_time = 6.0;       // horizon for closest-approach scanning
    double approach_threshold = 0.5;
    std::vector<IVec> target_classes;  // empty: all nonzero classes with |c|_inf <= 1
    Tolerances tol;
};

HomoclinicOptions default_homoclinic_options(const LocalChart& chart);

// Builds the homoclinic starting at a point of W^u_loc given by a local seed direction.
HomoclinicOrbit build_homoclinic(const HamiltonianModel& model, const LocalChart& chart,
                                 const Vec& seed_direction, const HomoclinicOptions& opt);

// Seeds are angles on the unstable circle for n = 2, branch signs (+1/-1) for n = 1,
// or flattened unit directions for n >= 3 (Newton on the (n-1)-dimensional mismatch).
// For n = 2 the seeds form a scan grid; sign changes of the mismatch within a class are refined.
std::vector<HomoclinicOrbit> find_homoclinics(const HamiltonianModel& model, const LocalChart& chart,
                                              const std::vector<double>& seeds,
                                              const HomoclinicOptions& opt);

// Scan record for n = 2 diagnostics.
struct ScanPoint {
    double theta = 0.0;
    bool valid = false;
    IVec klass;
    int entry_sign = 0;
    double mismatch = 0.0;
    double time = 0.0;
};
ScanPoint scan_mismatch(const HamiltonianModel& model, const LocalChart& chart, double theta,
                        const HomoclinicOptions& opt);

// Closest linear-chart distance of the forward orbit from the seed at angle theta to each target
// lattice point within the scan horizon.
std::vector<double> closest_approach(const HamiltonianModel& model, const LocalChart& chart,
                                     double theta, const std::vector<IVec>& targets,
                                     const HomoclinicOptions& opt);

HomoclinicOrbit pair_by_symmetry(const HamiltonianModel& model, const LocalChart& chart,
                                 const HomoclinicOrbit& orbit, const HomoclinicOptions& opt);

// Margin of (T W^s + T W^u) inside T H^{-1}(0) modulo the flow direction: smallest singular
// value of the orthonormalized reduced bases.
double transversality_margin(const Mat& tangent_u, const Mat& tangent_s, const Vec& field,
                             const Vec& grad_h);

struct H2Certificate {
    double margin = 0.0;
    double angle_out = 0.0;
    double angle_in = 0.0;
    bool transversal = false;
    bool approach_ok = false;
    bool passed = false;
    std::vector<std::string> failures;
};

// Throws TangencyDetected / WrongApproachDirection when throw_on_failure is set.
H2Certificate check_H2(const HamiltonianModel& model, const LocalChart& chart, HomoclinicOrbit& orbit,
                       bool throw_on_failure = false, const Tolerances& tol = {});

struct HomoclinicChain {
    std::vector<int> order;
    std::vector<IVec> classes;
    IVec h;
    int ell = 0;
    double separation = 0.0;
    int hole_count() const { return (ell + 1) * static_cast<int>(classes.size()); }
};

// curves_x[i] holds x-samples of orbit i relative to its start lattice point (may be empty,
// in which case only the closure and vertex conditions are checked).
HomoclinicChain analyze_H3(const std::vector<IVec>& classes,
                           const std::vector<std::vector<Vec>>& curves_x, int h_max, int ell_max,
                           double sep_tol = 1e-4, double vertex_exclusion = 0.05);

std::vector<Vec> x_samples(const HomoclinicOrbit& orbit);

}  // namespace nhic
