#pragma once

#include "nhic/common.hpp"
#include "nhic/continuation.hpp"
#include "nhic/homoclinics.hpp"
#include "nhic/localframe.hpp"
#include "nhic/model.hpp"

#include <array>
#include <string>
#include <vector>

namespace nhic {

struct ScalingFit {
    std::string name;
    std::string transform;  // "loglog" or "semilog"
    double slope = 0.0;
    double intercept = 0.0;
    double slope_stderr = 0.0;
    double residual_sup = 0.0;
    double residual_band = 0.0;  // max - min of residuals
    double e_min = 0.0, e_max = 0.0;
    int points = 0;
};

// Least squares y = slope x + intercept. Throws InsufficientRange below min_decades of |E|.
ScalingFit fit_line(const std::string& name, const std::string& transform, const std::vector<double>& x,
                    const std::vector<double>& y, const std::vector<double>& energies, double min_decades = 4.0);

struct MeshVertex {
    double E = 0.0;
    double phase = 0.0;  // t / T from the first Sigma^- anchor
    int strip = 0;
    Vec z;
};

struct Mesh {
    std::vector<MeshVertex> vertices;
    std::vector<std::array<int, 3>> faces;
    int phases = 0;
    std::vector<std::string> strip_names;
    double resolution = 0.0;  // longest edge
};

struct CylinderAtlas {
    std::vector<CylinderFamily> positive;
    std::vector<CylinderFamily> negative;
    std::vector<HomoclinicOrbit> skeleton;
    HomoclinicChain chain;
    int hole_count = 0;  // counted from the lifted lattice visits
    Mesh mesh;           // in R^n x R^n
    Mesh lifted;         // x reduced modulo h, all (ell+1) lap copies
};

// Distinct saddle copies in R^n / hZ^n visited by ell+1 laps of the chain.
int structural_hole_count(const std::vector<IVec>& classes, const IVec& h, int laps);

// Throws EmptyFamily when a side is missing and InconsistentCovering when the structural hole
// count differs from (ell+1) k.
CylinderAtlas assemble(const HamiltonianModel& model, const std::vector<CylinderFamily>& positive,
                       const std::vector<CylinderFamily>& negative, const std::vector<HomoclinicOrbit>& skeleton,
                       const HomoclinicChain& chain, int phases = 64);

std::string mesh_to_json(const Mesh& mesh);

// Flows every vertex by eps and measures the distance back to its strip.
struct MeshInvarianceReport {
    double max_distance = 0.0;
    double resolution = 0.0;
    bool passed = false;
};
MeshInvarianceReport mesh_invariance(const HamiltonianModel& model, const Mesh& mesh, double eps = 1e-3);

// s applied to an E > 0 orbit: re-integrated closure and itinerary of the reflected orbit.
struct PartnerReport {
    double closure = 0.0;
    std::vector<IVec> itinerary;
    std::vector<IVec> expected;  // reversed, negated increments
    bool passed = false;
};
PartnerReport s_partner(const HamiltonianModel& model, const PeriodicOrbit& orbit, const Tolerances& tol = {});

// Symmetric sup-inf distance between polylines, each point measured against segments.
double hausdorff(const std::vector<std::vector<Vec>>& a, const std::vector<std::vector<Vec>>& b);

struct HausdorffRecord {
    double E = 0.0;
    double d_phase = 0.0;
    double d_x = 0.0;
};
struct HausdorffReport {
    std::vector<HausdorffRecord> records;
    ScalingFit fit;    // log d_H vs log |E|, full phase points
    ScalingFit fit_x;  // x-projections
    bool adjacent_decreasing = false;
};
// Outer legs of each orbit against the lifted outer segments of their reference homoclinics.
HausdorffReport hausdorff_convergence(const HamiltonianModel& model, const CylinderFamily& family,
                                      const std::vector<HomoclinicOrbit>& library, int samples_per_leg = 100);

struct TransitRecord {
    double E = 0.0;
    double time = 0.0;  // full inner transit Sigma^+ -> Sigma^-
};
// Inner map from the section point with vanishing hat coordinates.
std::vector<TransitRecord> inner_transit_sweep(const HamiltonianModel& model, const LocalChart& chart, double r,
                                               const std::vector<double>& energies,
                                               SectionSide entry = SectionSide::VPlus);
ScalingFit transit_time_fit(const std::vector<TransitRecord>& records);

struct FloquetFits {
    std::vector<ScalingFit> fits;  // per i >= 2, slope per inner passage
    std::vector<double> expected;  // lambda_i / lambda_1
    std::vector<double> mu_inf, mu_sup;
    double sigma1_max_deviation = 0.0;
    double max_pairing_defect = 0.0;
    int passages = 1;
    std::vector<std::pair<double, double>> eta;  // (|E|, ratio), ascending |E|
    bool eta_monotone_last_decades = false;
    double eta_at_smallest = 0.0;
};
FloquetFits floquet_scaling_fit(const CylinderFamily& family, const Vec& lambda, double eta_decades = 4.0);

struct C1JoinReport {
    double e_join = 0.0;
    Vec d_plus, d_minus;              // Richardson d/dE of the first Sigma^- anchor, local coordinates
    Vec tangent_plus, tangent_minus;  // same from the bordered shooting system at |E| = e_join
    double u_hat_rel_diff = 0.0;
    double v_hat_plus = 0.0, v_hat_minus = 0.0;
    Vec u_hat_predicted;  // -A11^{-1} A13 pi_1 dE z
    double lemma_rel_error = 0.0;
    double dH_plus = 0.0, dH_minus = 0.0;
    double pi1_scaled = 0.0;  // lambda_1 r pi_1 dE z
    bool passed = false;
};
// Orbits at +-{4,2,1} e_join for the two specs; both must start on the same Sigma^- section.
C1JoinReport c1_join_test(const HamiltonianModel& model, const LocalChart& chart,
                          const std::vector<HomoclinicOrbit>& library, const ShadowingSpec& positive,
                          const ShadowingSpec& negative, const ContinuationOptions& opt, double e_join = 1e-10,
                          double tol_join = 1e-3);

struct VertexReport {
    ScalingFit fit;  // upper envelope of log|(u-hat, v-hat)| vs log|(u1, v1)|
    double threshold = 0.0;
    std::vector<double> leaf_exponents;
    std::vector<double> leaf_tilts;  // |(u-hat, v-hat)| / |(u1, v1)| at the smallest common radius
    double leaf_radius = 0.0;
    double leaf_spread = 0.0;
    bool leaves_tangent = false;  // every leaf exponent above 1
    bool exact_zero = false;
    bool passed = false;
};
VertexReport vertex_differentiability_test(const HamiltonianModel& model, const LocalChart& chart,
                                           const std::vector<const CylinderFamily*>& families, double e_cap = 1e-6);

struct RateFit {
    std::string where;
    std::string vector;
    double rate = 0.0;
    double stderr_ = 0.0;
};
struct NormalHyperbolicityReport {
    std::vector<RateFit> tangent, normal;
    double gap_homoclinic = 0.0, sigma_homoclinic = 0.0;
    double gap_periodic = 0.0, sigma_periodic = 0.0;
    double continuity_rel = 0.0;
    bool tangent_bounded = false;
    bool resolved = false;
};
// Windows: the approach to the saddle along the homoclinic's stable tail and the first half of the
// orbit's first inner leg, of equal length.
NormalHyperbolicityReport normal_hyperbolicity_test(const HamiltonianModel& model, const LocalChart& chart,
                                                    const HomoclinicOrbit& homoclinic, const PeriodicOrbit& orbit,
                                                    double cr = 0.5, unsigned seed = 3);

std::string fit_to_json(const ScalingFit& fit);

}  // namespace nhic
