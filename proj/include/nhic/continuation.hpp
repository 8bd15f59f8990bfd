#pragma once

#include "nhic/common.hpp"
#include "nhic/flow.hpp"
#include "nhic/homoclinics.hpp"
#include "nhic/localframe.hpp"
#include "nhic/model.hpp"
#include "nhic/sectionmaps.hpp"

#include <string>
#include <vector>

namespace nhic {

// Homoclinics visited in cyclic order. For E < 0 the order is {z+_i, z-_i}.
struct ShadowingSpec {
    std::vector<int> order;
    int energy_sign = 1;
    std::string name;
};

enum class LegKind { Outer, Inner };

struct Leg {
    LegKind kind = LegKind::Outer;
    int homoclinic = -1;  // library index of the outer leg's reference (the preceding one for inner legs)
    SectionSide start_side = SectionSide::UPlus;
    IVec start_lattice;  // lifted
    int first_node = 0;
    int subsegments = 1;
};

struct FloquetReport {
    std::vector<double> log_abs;  // log |sigma|, descending
    std::vector<int> signs;
    std::vector<double> sigma;               // nontrivial multipliers, descending (size 2n-2)
    std::vector<std::pair<int, int>> pairs;  // indices into sigma paired as (s, 1/s)
    double pairing_defect = 0.0;             // max |s_i s_j - 1|
    double sigma1_analog = 1.0;              // energy-direction multiplier of the section return map
    double eta_ratio = 0.0;                  // |eta_vhat| / |eta_uhat| of the dominant eigenvector
    Vec eta_local;                           // dominant eigenvector, local coordinates at the anchor
    double product_consistency = 0.0;        // |prod of per-pass dominant multipliers / composite - 1|
    int sweeps = 0;
};

struct PeriodicOrbit {
    double E = 0.0;
    double T = 0.0;
    double gamma = 0.0;
    ShadowingSpec spec;
    std::vector<Leg> legs;
    std::vector<Vec> nodes;          // relative to node_lattice
    std::vector<IVec> node_lattice;  // lifted
    std::vector<double> leg_time;
    IVec shift;  // lattice translation after one period

    std::vector<Vec> anchors_local;  // leg-start local coordinates
    std::vector<Mat> segment_psi;
    std::vector<Vec> tangent;          // d(nodes)/dE along the family
    std::vector<double> leg_time_dE;
    Mat monodromy;  // at the first Sigma^- anchor
    FloquetReport floquet;

    int iterations = 0;
    double residual = 0.0;
    double closure = 0.0;
    double energy_error = 0.0;
    double shadow_distance = 0.0;
    std::vector<IVec> itinerary;  // lattice increments between successive ball entries

    Vec start_point() const;  // node 0 lifted
    int n() const { return static_cast<int>(nodes.front().size()) / 2; }
};

struct ContinuationOptions {
    double r = 0.0;
    double subsegment_time = 0.5;
    double newton_tol = 1e-10;
    int max_iterations = 40;
    double e_max = 1e-2;
    double tube_radius = 0.25;
    bool check_itinerary = true;
    bool floquet = true;
    bool polish = true;  // one extra Newton step after reaching newton_tol
    Tolerances tol;
};

// Legs for the spec; validates exit/entry-sign compatibility.
std::vector<Leg> build_legs(const std::vector<HomoclinicOrbit>& library, const ShadowingSpec& spec);

// Initial guess from the homoclinic skeleton with linear-chart transit times.
PeriodicOrbit homoclinic_guess(const HamiltonianModel& model, const LocalChart& chart,
                               const std::vector<HomoclinicOrbit>& library, const ShadowingSpec& spec,
                               double E, const ContinuationOptions& opt);

// Newton multiple shooting from a guess. Throws NewtonDiverged, WrongShadowingOrder, EnergyOutOfRange.
PeriodicOrbit refine_periodic(const HamiltonianModel& model, const LocalChart& chart,
                              const std::vector<HomoclinicOrbit>& library, PeriodicOrbit guess,
                              const ContinuationOptions& opt);

PeriodicOrbit solve_periodic(const HamiltonianModel& model, const LocalChart& chart,
                             const std::vector<HomoclinicOrbit>& library, const ShadowingSpec& spec, double E,
                             const ContinuationOptions& opt);

// Re-meshes an orbit for a new energy: anchors are extrapolated linearly in E from the last two
// orbits (or kept), inner legs are rebuilt along the straightened axes.
PeriodicOrbit predict(const HamiltonianModel& model, const LocalChart& chart,
                      const std::vector<HomoclinicOrbit>& library, const PeriodicOrbit& last,
                      const PeriodicOrbit* before, double E, const ContinuationOptions& opt);

struct CylinderFamily {
    ShadowingSpec spec;
    std::vector<PeriodicOrbit> orbits;  // sorted by E ascending
    std::vector<std::string> log;
};

// Geometric grid E0 * ratio^k down to E_min (sign taken from the spec).
std::vector<double> energy_grid(double E0, double E_min, double ratio);

CylinderFamily continue_family(const HamiltonianModel& model, const LocalChart& chart,
                               const std::vector<HomoclinicOrbit>& library, const ShadowingSpec& spec,
                               const std::vector<double>& energies, const ContinuationOptions& opt);

// Periodic QR on the subsegment factors; eigenvectors and ratios at the first anchor.
FloquetReport floquet_analysis(const HamiltonianModel& model, const LocalChart& chart,
                               const PeriodicOrbit& orbit);

// Projected per-leg Jacobians (section to section) and the projected monodromy.
struct LegJacobians {
    std::vector<Mat> projected;
    Mat composite;  // ordered product
    Mat monodromy_projected;
    double factorization_error = 0.0;  // relative
    double max_symplectic_defect = 0.0;
};
LegJacobians leg_jacobians(const HamiltonianModel& model, const LocalChart& chart, const PeriodicOrbit& orbit);

// Dense lifted samples over one period.
OrbitSegment sample_orbit(const HamiltonianModel& model, const PeriodicOrbit& orbit,
                          const Tolerances& tol = {});

// Lattice increments between successive closest approaches to the lattice over one period (cyclic).
std::vector<IVec> itinerary(const HamiltonianModel& model, const LocalChart& chart, const PeriodicOrbit& orbit,
                            const Tolerances& tol = {});

// max_t |z(t* - t) - s z(t* + t)| about the first y = 0 point, and the number of y = 0 passages.
struct SymmetryReport {
    double defect = 0.0;
    int y_zero_crossings = 0;
    double t_star = 0.0;
};
SymmetryReport s_symmetry(const HamiltonianModel& model, const PeriodicOrbit& orbit, const Tolerances& tol = {});

struct UniquenessReport {
    int probes = 0;
    int converged = 0;
    int coincident = 0;
    int distinct = 0;
    double max_distinct_skeleton_distance = 0.0;
    bool unique = true;
};
UniquenessReport uniqueness_probe(const HamiltonianModel& model, const LocalChart& chart,
                                  const std::vector<HomoclinicOrbit>& library, const PeriodicOrbit& orbit,
                                  int n_probes, double delta, const ContinuationOptions& opt,
                                  unsigned seed = 5);

struct GraphOracleResult {
    Vec anchor_hat;  // (u-hat, v-hat) of the fixed point on the first Sigma^- section
    int iterations = 0;
    double final_change = 0.0;
    double window = 0.0;
    double center = 0.0;
    std::vector<double> grid, graph;
};
// n = 2, E > 0 only.
GraphOracleResult graph_transform_oracle(const HamiltonianModel& model, const LocalChart& chart,
                                         const std::vector<HomoclinicOrbit>& library, const ShadowingSpec& spec,
                                         double E, int resolution, const ContinuationOptions& opt);

// Same on an arbitrary periodic sample (dense output, or the stored states when there is none);
// shift is the lattice translation over the sample.
std::vector<IVec> lattice_itinerary(const OrbitSegment& samples, const IVec& shift, int n);

// Equality up to cyclic rotation.
bool cyclic_equal(const std::vector<IVec>& a, const std::vector<IVec>& b);

std::string orbit_to_json(const PeriodicOrbit& orbit);

// Shooting unknowns and leg layout only; refine_periodic restores the derived data.
std::string orbit_state_to_json(const PeriodicOrbit& orbit);
PeriodicOrbit orbit_state_from_json(const std::string& text);

}  // namespace nhic
