#pragma once

#include "nhic/common.hpp"
#include "nhic/continuation.hpp"
#include "nhic/cylinder.hpp"
#include "nhic/homoclinics.hpp"
#include "nhic/localframe.hpp"
#include "nhic/model.hpp"

#include <string>
#include <vector>

namespace nhic {

struct FamilyConfig {
    std::string name;
    std::vector<std::string> order;  // homoclinic labels such as "(1,0)+"
    int energy_sign = 1;
};

struct VerifyConfig {
    double transit_e_max = 1e-4;
    double transit_e_min = 1e-12;
    int transit_points = 17;
    std::vector<std::string> floquet_families;  // empty: every family
    std::string eta_family;
    double eta_energy = 1e-10;
    std::string join_positive, join_negative;
    double join_energy = 1e-10;
    std::string oracle_family;
    std::vector<double> oracle_energies{1e-4, 3e-5, 1e-5};
    int oracle_resolution = 41;
    std::string probe_family;
    double probe_energy = 1e-6;
    int probes = 20;
    double probe_delta = 1e-3;
    std::string nh_homoclinic, nh_family;
    double nh_energy = 1e-10;
    double cone_alpha = 0.5;
    int cone_vectors = 1000;
    int mesh_phases = 48;
};

struct RunConfig {
    std::string source;  // path of the config file
    std::string system_path;
    int nonresonance_order = 8;
    int kappa = 0;  // 0 selects kappa_min
    ChartOptions chart;
    double r_factor = 0.25;  // r = r_factor r'
    std::vector<double> seeds;
    int scan_points = 1440;
    std::vector<IVec> targets;
    std::vector<std::string> chain;
    int h_max = 4, ell_max = 3;
    std::vector<FamilyConfig> families;
    double E0 = 1e-3, E_min = 1e-12, ratio = 0.31622776601683794;
    Tolerances tol;
    double newton_tol = 1e-10;
    std::string output = "out";
    int jobs = 1;
    unsigned seed = 7;
    VerifyConfig verify;
};

// Throws ConfigInvalid on unreadable files, schema errors or violated invariants.
RunConfig load_config(const std::string& path);
RunConfig parse_config(const std::string& text, const std::string& base_dir = ".");
void validate(const RunConfig& cfg);

// System file: {"n", "A" (row-major rows), "modes": [{"m", "a", "b"}], "constant", "nonresonance_order"}.
HamiltonianModel load_system(const std::string& path);
HamiltonianModel parse_system(const std::string& text);

enum class Stage { Analyze = 0, Homoclinics = 1, Continue = 2, Verify = 3, Export = 4 };
Stage stage_from_name(const std::string& name);
std::string stage_name(Stage s);

struct CheckResult {
    std::string name;
    double value = 0.0;
    std::string relation;  // e.g. "< 1e-06"
    bool passed = false;
    bool skipped = false;
    std::string detail;
};

class Pipeline {
public:
    // out_override beats the NHIC_OUT environment variable, which beats the config; jobs <= 0 keeps the config value.
    explicit Pipeline(RunConfig cfg, const std::string& out_override = "", int jobs = 0);

    void analyze();
    void homoclinics();
    void continuation();
    void verify();
    void export_artifacts();

    void load_analyze();
    void load_homoclinics();
    void load_continuation();

    // Runs stages from..to, loading the earlier ones from disk. Returns 0 iff every enabled check passed.
    int run(Stage to, Stage from = Stage::Analyze);

    int library_index(const std::string& label) const;
    const CylinderFamily& family(const std::string& name) const;
    ShadowingSpec spec_of(const FamilyConfig& f) const;
    bool all_passed() const;

    RunConfig cfg;
    std::string out;
    int jobs = 1;

    HamiltonianModel model;
    SaddleSpectrum spectrum;
    H1Certificate h1;
    LocalChart chart;
    HomoclinicOptions hopt;
    ContinuationOptions copt;

    std::vector<HomoclinicOrbit> library;
    std::vector<std::string> origin;  // "search" or "symmetry"
    std::vector<H2Certificate> h2;
    HomoclinicChain chain;

    std::vector<CylinderFamily> families;  // same order as cfg.families
    std::vector<CheckResult> checks;
    std::string verify_json;  // full report written by verify()

private:
    std::string path(const std::string& file) const;
    void require(const std::string& file) const;
    void setup_options();
    // positive families following the chain, all negative families
    void split_for_atlas(std::vector<CylinderFamily>& pos, std::vector<CylinderFamily>& neg) const;
};

std::string checks_table(const std::vector<CheckResult>& checks);

}  // namespace nhic
