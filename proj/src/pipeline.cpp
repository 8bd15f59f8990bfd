#include "nhic/pipeline.hpp"

#include "nhic/sectionmaps.hpp"

#include "json.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <sstream>
#include <thread>

namespace nhic {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_file(const std::string& p) {
    std::ifstream f(p);
    if (!f) throw Error("ConfigInvalid", "cannot read " + p);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void write_file(const std::string& p, const std::string& text) {
    std::ofstream f(p);
    if (!f) throw Error("IOError", "cannot write " + p);
    f << text;
    if (text.empty() || text.back() != '\n') f << '\n';
}

json vec_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }
json ivec_json(const IVec& v) { return std::vector<int>(v.data(), v.data() + v.size()); }

Vec to_vec(const json& a) {
    std::vector<double> v = a.get<std::vector<double>>();
    return Eigen::Map<Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

IVec to_ivec(const json& a) {
    std::vector<int> v = a.get<std::vector<int>>();
    return Eigen::Map<IVec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

json mat_json(const Mat& M) {
    json a = json::array();
    for (int i = 0; i < M.rows(); ++i) {
        json row = json::array();
        for (int j = 0; j < M.cols(); ++j) row.push_back(M(i, j));
        a.push_back(row);
    }
    return a;
}

std::string g17(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

std::string partner_label(const std::string& label) {
    // "(a,b)+" -> "(-a,-b)-"
    const auto close = label.find(')');
    if (label.empty() || label[0] != '(' || close == std::string::npos || close + 2 != label.size())
        throw Error("ConfigInvalid", "malformed homoclinic label " + label);
    std::string body = label.substr(1, close - 1), out = "(";
    std::stringstream ss(body);
    std::string tok;
    bool first = true;
    while (std::getline(ss, tok, ',')) {
        const int v = -std::stoi(tok);
        out += (first ? "" : ",") + std::to_string(v);
        first = false;
    }
    out += ")";
    out += label.back() == '+' ? "-" : "+";
    return out;
}

// Runs f(0..count-1) on up to jobs threads; rethrows the first failure by index.
void parallel_for(int count, int jobs, const std::function<void(int)>& f) {
    std::vector<std::exception_ptr> errors(count);
    std::atomic<int> next{0};
    auto worker = [&] {
        for (int i = next++; i < count; i = next++) {
            try {
                f(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const int t = std::max(1, std::min(jobs, count));
    std::vector<std::thread> pool;
    for (int k = 1; k < t; ++k) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

CheckResult check(const std::string& name, double value, const std::string& relation, bool passed,
                  const std::string& detail = "") {
    return {name, value, relation, passed, false, detail};
}

CheckResult skipped(const std::string& name, const std::string& why) { return {name, 0.0, "", true, true, why}; }

json fit_json(const ScalingFit& f) { return json::parse(fit_to_json(f)); }

// Projected Jacobian of a section map against central differences in the hat coordinates.
double fd_projected_error(const HamiltonianModel& model, const LocalChart& chart, const Vec& w_start,
                          SectionSide side, double E, double r, double delta,
                          const std::function<SectionMapResult(const Vec&)>& map) {
    SectionMapResult base = map(chart.from_local(w_start));
    const Vec hat0 = hat_coordinates(w_start);
    const int m = static_cast<int>(hat0.size());
    Mat D(m, m);
    for (int k = 0; k < m; ++k) {
        Vec hp = hat0, hm = hat0;
        hp[k] += delta;
        hm[k] -= delta;
        Vec ip = hat_coordinates(map(chart.from_local(point_on_section(chart, model, side, r, hp, E))).image_local);
        Vec im = hat_coordinates(map(chart.from_local(point_on_section(chart, model, side, r, hm, E))).image_local);
        D.col(k) = (ip - im) / (2 * delta);
    }
    return (D - base.projected).norm() / base.projected.norm();
}

const PeriodicOrbit& closest_orbit(const CylinderFamily& fam, double E) {
    if (fam.orbits.empty()) throw Error("EmptyFamily", "family " + fam.spec.name + " has no orbits");
    const PeriodicOrbit* best = &fam.orbits.front();
    for (const auto& o : fam.orbits)
        if (std::abs(std::log(std::abs(o.E) / std::abs(E))) < std::abs(std::log(std::abs(best->E) / std::abs(E))))
            best = &o;
    return *best;
}

}  // namespace

// ---------------------------------------------------------------- configuration

HamiltonianModel parse_system(const std::string& text) {
    try {
        json j = json::parse(text);
        const int n = j.at("n").get<int>();
        if (n < 1) throw Error("ConfigInvalid", "system dimension must be positive");
        Mat A(n, n);
        const auto& rows = j.at("A");
        if (static_cast<int>(rows.size()) != n) throw Error("ConfigInvalid", "A must have n rows");
        for (int i = 0; i < n; ++i) {
            if (static_cast<int>(rows[i].size()) != n) throw Error("ConfigInvalid", "A must be n x n");
            for (int k = 0; k < n; ++k) A(i, k) = rows[i][k].get<double>();
        }
        std::vector<Mode> modes;
        for (const auto& m : j.at("modes")) {
            Mode md;
            md.m = to_ivec(m.at("m"));
            if (md.m.size() != n) throw Error("ConfigInvalid", "mode vector of wrong dimension");
            md.a = m.value("a", 0.0);
            md.b = m.value("b", 0.0);
            modes.push_back(md);
        }
        if (modes.empty()) throw Error("ConfigInvalid", "potential needs at least one mode");
        return HamiltonianModel(A, TorusPotential(n, modes, j.value("constant", 0.0)));
    } catch (const json::exception& e) {
        throw Error("ConfigInvalid", std::string("system file: ") + e.what());
    }
}

HamiltonianModel load_system(const std::string& p) { return parse_system(read_file(p)); }

RunConfig parse_config(const std::string& text, const std::string& base_dir) {
    RunConfig c;
    try {
        json j = json::parse(text, nullptr, true, true);
        const std::string sys = j.at("system").get<std::string>();
        c.system_path = fs::path(sys).is_absolute() ? sys : (fs::path(base_dir) / sys).lexically_normal().string();
        c.nonresonance_order = j.value("nonresonance_order", c.nonresonance_order);
        c.kappa = j.value("kappa", c.kappa);
        if (j.contains("chart")) {
            const auto& ch = j["chart"];
            c.chart.degree = ch.value("degree", c.chart.degree);
            c.chart.r_prime = ch.value("r_prime", c.chart.r_prime);
            c.chart.residual_target = ch.value("residual_target", c.chart.residual_target);
            c.chart.max_radius = ch.value("max_radius", c.chart.max_radius);
        }
        c.r_factor = j.value("r_factor", c.r_factor);
        if (j.contains("homoclinics")) {
            const auto& h = j["homoclinics"];
            if (h.contains("seeds")) c.seeds = h["seeds"].get<std::vector<double>>();
            c.scan_points = h.value("scan_points", c.scan_points);
            if (h.contains("targets"))
                for (const auto& t : h["targets"]) c.targets.push_back(to_ivec(t));
        }
        if (j.contains("chain")) {
            const auto& ch = j["chain"];
            c.chain = ch.at("order").get<std::vector<std::string>>();
            c.h_max = ch.value("h_max", c.h_max);
            c.ell_max = ch.value("ell_max", c.ell_max);
        }
        for (const auto& f : j.at("families")) {
            FamilyConfig fc;
            fc.name = f.at("name").get<std::string>();
            fc.order = f.at("order").get<std::vector<std::string>>();
            fc.energy_sign = f.at("energy_sign").get<int>();
            c.families.push_back(fc);
        }
        if (j.contains("energy")) {
            const auto& e = j["energy"];
            c.E0 = e.value("E0", c.E0);
            c.E_min = e.value("E_min", c.E_min);
            c.ratio = e.value("ratio", c.ratio);
        }
        if (j.contains("tolerances")) {
            const auto& t = j["tolerances"];
            c.tol.rtol = t.value("rtol", c.tol.rtol);
            c.tol.atol = t.value("atol", c.tol.atol);
            c.newton_tol = t.value("newton", c.newton_tol);
        }
        c.output = j.value("output", c.output);
        if (!fs::path(c.output).is_absolute()) c.output = (fs::path(base_dir) / c.output).lexically_normal().string();
        c.jobs = j.value("jobs", c.jobs);
        c.seed = j.value("seed", c.seed);
        if (j.contains("verify")) {
            const auto& v = j["verify"];
            VerifyConfig& q = c.verify;
            q.transit_e_max = v.value("transit_E_max", q.transit_e_max);
            q.transit_e_min = v.value("transit_E_min", q.transit_e_min);
            q.transit_points = v.value("transit_points", q.transit_points);
            if (v.contains("floquet_families")) q.floquet_families = v["floquet_families"].get<std::vector<std::string>>();
            q.eta_family = v.value("eta_family", q.eta_family);
            q.eta_energy = v.value("eta_energy", q.eta_energy);
            q.join_positive = v.value("join_positive", q.join_positive);
            q.join_negative = v.value("join_negative", q.join_negative);
            q.join_energy = v.value("join_energy", q.join_energy);
            q.oracle_family = v.value("oracle_family", q.oracle_family);
            if (v.contains("oracle_energies")) q.oracle_energies = v["oracle_energies"].get<std::vector<double>>();
            q.oracle_resolution = v.value("oracle_resolution", q.oracle_resolution);
            q.probe_family = v.value("probe_family", q.probe_family);
            q.probe_energy = v.value("probe_energy", q.probe_energy);
            q.probes = v.value("probes", q.probes);
            q.probe_delta = v.value("probe_delta", q.probe_delta);
            q.nh_homoclinic = v.value("nh_homoclinic", q.nh_homoclinic);
            q.nh_family = v.value("nh_family", q.nh_family);
            q.nh_energy = v.value("nh_energy", q.nh_energy);
            q.cone_alpha = v.value("cone_alpha", q.cone_alpha);
            q.cone_vectors = v.value("cone_vectors", q.cone_vectors);
            q.mesh_phases = v.value("mesh_phases", q.mesh_phases);
        }
    } catch (const json::exception& e) {
        throw Error("ConfigInvalid", std::string("config: ") + e.what());
    }
    validate(c);
    return c;
}

RunConfig load_config(const std::string& p) {
    RunConfig c = parse_config(read_file(p), fs::path(p).parent_path().string().empty()
                                                 ? std::string(".")
                                                 : fs::path(p).parent_path().string());
    c.source = p;
    return c;
}

void validate(const RunConfig& c) {
    auto fail = [](const std::string& m) { throw Error("ConfigInvalid", m); };
    if (!(c.E0 > c.E_min) || !(c.E_min > 0)) fail("energy grid needs E0 > E_min > 0");
    if (!(c.ratio > 0 && c.ratio < 1)) fail("energy ratio must lie in (0,1)");
    if (!(c.tol.rtol > 0) || !(c.tol.atol > 0) || !(c.newton_tol > 0)) fail("tolerances must be positive");
    if (!(c.r_factor > 0 && c.r_factor < 1)) fail("r_factor must lie in (0,1)");
    if (c.chart.degree < 1) fail("chart degree must be positive");
    if (c.jobs < 1) fail("jobs must be at least 1");
    if (c.families.empty()) fail("no families configured");
    if (c.chain.empty()) fail("no chain configured");
    for (const auto& f : c.families) {
        if (f.order.empty()) fail("family " + f.name + " has an empty order");
        if (f.energy_sign != 1 && f.energy_sign != -1) fail("family " + f.name + " energy_sign must be +1 or -1");
    }
    if (!(c.verify.transit_e_max > c.verify.transit_e_min) || !(c.verify.transit_e_min > 0))
        fail("transit sweep needs E_max > E_min > 0");
    if (c.verify.transit_points < 3) fail("transit sweep needs at least 3 points");
}

Stage stage_from_name(const std::string& name) {
    for (Stage s : {Stage::Analyze, Stage::Homoclinics, Stage::Continue, Stage::Verify, Stage::Export})
        if (stage_name(s) == name) return s;
    throw Error("ConfigInvalid", "unknown stage " + name);
}

std::string stage_name(Stage s) {
    switch (s) {
        case Stage::Analyze: return "analyze";
        case Stage::Homoclinics: return "homoclinics";
        case Stage::Continue: return "continue";
        case Stage::Verify: return "verify";
        case Stage::Export: return "export";
    }
    return "?";
}

// ---------------------------------------------------------------- pipeline

Pipeline::Pipeline(RunConfig c, const std::string& out_override, int j) : cfg(std::move(c)) {
    validate(cfg);
    const char* env = std::getenv("NHIC_OUT");
    out = !out_override.empty() ? out_override : (env && *env ? std::string(env) : cfg.output);
    jobs = j > 0 ? j : cfg.jobs;
}

std::string Pipeline::path(const std::string& file) const { return (fs::path(out) / file).string(); }

void Pipeline::require(const std::string& file) const {
    if (!fs::exists(path(file))) throw Error("StageMissing", "missing artifact " + path(file));
}

void Pipeline::setup_options() {
    hopt = default_homoclinic_options(chart);
    hopt.r = cfg.r_factor * chart.r_prime;
    hopt.scan_points = cfg.scan_points;
    hopt.target_classes = cfg.targets;
    hopt.tol = cfg.tol;
    copt = ContinuationOptions{};
    copt.r = hopt.r;
    copt.tol = cfg.tol;
    copt.newton_tol = cfg.newton_tol;
}

void Pipeline::analyze() {
    fs::create_directories(out);
    model = load_system(cfg.system_path);
    spectrum = analyze_saddle(model, cfg.nonresonance_order);
    {
        H1Certificate probe = check_H1(model, spectrum, 2);
        h1 = check_H1(model, spectrum, cfg.kappa > 0 ? cfg.kappa : probe.kappa_min);
    }
    chart = build_chart(model, spectrum, cfg.chart);
    setup_options();
    json j;
    j["n"] = model.n();
    j["lambda"] = vec_json(spectrum.lambda);
    j["xi_plus"] = mat_json(spectrum.xi_plus);
    j["xi_minus"] = mat_json(spectrum.xi_minus);
    j["eigen_residual"] = spectrum.max_residual;
    j["distinctness_margin"] = spectrum.distinctness_margin;
    j["closest_resonance"] = spectrum.closest_resonance;
    j["nonresonance_order"] = spectrum.nonresonance_order;
    j["H1"] = {{"kappa", h1.kappa},          {"kappa_min", h1.kappa_min},   {"hessian_pd", h1.hessian_pd},
               {"eigen_distinct", h1.eigen_distinct}, {"nonresonant", h1.nonresonant}, {"passed", h1.passed},
               {"failures", h1.failures}};
    const auto& nr = model.normalization();
    j["normalization"] = {{"x0", vec_json(nr.x0)}, {"v_min", nr.v_min}, {"grid_gap", nr.grid_gap},
                          {"unique_on_grid", nr.unique_on_grid}, {"grid_points_per_axis", nr.grid_points_per_axis}};
    j["chart"] = json::parse(chart_to_json(chart));
    j["r"] = hopt.r;
    write_file(path("analyze.json"), j.dump(2));
}

void Pipeline::load_analyze() {
    require("analyze.json");
    model = load_system(cfg.system_path);
    spectrum = analyze_saddle(model, cfg.nonresonance_order);
    H1Certificate probe = check_H1(model, spectrum, 2);
    h1 = check_H1(model, spectrum, cfg.kappa > 0 ? cfg.kappa : probe.kappa_min);
    chart = build_chart(model, spectrum, cfg.chart);
    setup_options();
}

int Pipeline::library_index(const std::string& label) const {
    for (std::size_t i = 0; i < library.size(); ++i)
        if (library[i].label == label) return static_cast<int>(i);
    throw Error("ConfigInvalid", "homoclinic " + label + " not in the library");
}

namespace {

std::vector<std::string> needed_labels(const RunConfig& cfg) {
    std::vector<std::string> out;
    auto add = [&](const std::string& s) {
        if (std::find(out.begin(), out.end(), s) == out.end()) out.push_back(s);
    };
    for (const auto& s : cfg.chain) add(s);
    for (const auto& f : cfg.families)
        for (const auto& s : f.order) add(s);
    if (!cfg.verify.nh_homoclinic.empty()) add(cfg.verify.nh_homoclinic);
    return out;
}

json homoclinic_json(const HomoclinicOrbit& h, const std::string& origin, const H2Certificate& c) {
    return {{"label", h.label},
            {"class", ivec_json(h.klass)},
            {"exit_sign", h.exit_sign},
            {"entry_sign", h.entry_sign},
            {"origin", origin},
            {"seed_direction", vec_json(h.seed_direction)},
            {"tau", h.tau},
            {"mismatch", h.mismatch},
            {"max_energy", h.max_energy},
            {"exit_local", vec_json(h.exit_local)},
            {"entry_local", vec_json(h.entry_local)},
            {"symmetry_defect", h.symmetry_defect},
            {"H2",
             {{"margin", c.margin},
              {"angle_out", c.angle_out},
              {"angle_in", c.angle_in},
              {"transversal", c.transversal},
              {"approach_ok", c.approach_ok},
              {"passed", c.passed},
              {"failures", c.failures}}}};
}

}  // namespace

void Pipeline::homoclinics() {
    std::vector<double> seeds = cfg.seeds;
    if (seeds.empty()) {
        if (model.n() == 1) {
            seeds = {1.0, -1.0};
        } else {
            for (int k = 0; k < hopt.scan_points; ++k) seeds.push_back(2 * std::numbers::pi * k / hopt.scan_points);
        }
    }
    std::vector<HomoclinicOrbit> found = find_homoclinics(model, chart, seeds, hopt);
    library.clear();
    origin.clear();
    for (const std::string& label : needed_labels(cfg)) {
        auto it = std::find_if(found.begin(), found.end(), [&](const auto& h) { return h.label == label; });
        if (it != found.end()) {
            library.push_back(*it);
            origin.push_back("search");
            continue;
        }
        const std::string partner = partner_label(label);
        auto jt = std::find_if(found.begin(), found.end(), [&](const auto& h) { return h.label == partner; });
        if (jt == found.end()) throw Error("NoHomoclinic", "no homoclinic " + label + " or partner " + partner);
        HomoclinicOrbit p = pair_by_symmetry(model, chart, *jt, hopt);
        if (p.label != label) throw Error("NoHomoclinic", "symmetry partner of " + partner + " is " + p.label);
        library.push_back(std::move(p));
        origin.push_back("symmetry");
    }
    h2.clear();
    for (auto& h : library) h2.push_back(check_H2(model, chart, h, false, cfg.tol));
    std::vector<IVec> classes;
    std::vector<std::vector<Vec>> xs;
    for (const auto& s : cfg.chain) {
        classes.push_back(library[library_index(s)].klass);
        xs.push_back(x_samples(library[library_index(s)]));
    }
    chain = analyze_H3(classes, xs, cfg.h_max, cfg.ell_max);
    for (const auto& s : cfg.chain) chain.order.push_back(library_index(s));

    json j;
    j["r"] = hopt.r;
    json lib = json::array();
    for (std::size_t i = 0; i < library.size(); ++i) lib.push_back(homoclinic_json(library[i], origin[i], h2[i]));
    j["library"] = lib;
    json cl = json::array();
    for (const auto& c : chain.classes) cl.push_back(ivec_json(c));
    j["chain"] = {{"order", cfg.chain},  {"classes", cl},         {"h", ivec_json(chain.h)},
                  {"ell", chain.ell},    {"separation", chain.separation}, {"hole_count", chain.hole_count()}};
    write_file(path("homoclinics.json"), j.dump(2));
}

void Pipeline::load_homoclinics() {
    require("homoclinics.json");
    json j;
    try {
        j = json::parse(read_file(path("homoclinics.json")));
        library.clear();
        origin.clear();
        for (const auto& e : j.at("library")) {
            HomoclinicOrbit h = build_homoclinic(model, chart, to_vec(e.at("seed_direction")), hopt);
            if (h.label != e.at("label").get<std::string>())
                throw Error("StageMissing", "homoclinic " + e.at("label").get<std::string>() + " did not rebuild");
            h.symmetry_defect = e.value("symmetry_defect", 0.0);
            library.push_back(std::move(h));
            origin.push_back(e.value("origin", "search"));
        }
    } catch (const json::exception& e) {
        throw Error("StageMissing", std::string("homoclinics.json unreadable: ") + e.what());
    }
    h2.clear();
    for (auto& h : library) h2.push_back(check_H2(model, chart, h, false, cfg.tol));
    std::vector<IVec> classes;
    std::vector<std::vector<Vec>> xs;
    for (const auto& s : cfg.chain) {
        classes.push_back(library[library_index(s)].klass);
        xs.push_back(x_samples(library[library_index(s)]));
    }
    chain = analyze_H3(classes, xs, cfg.h_max, cfg.ell_max);
    for (const auto& s : cfg.chain) chain.order.push_back(library_index(s));
}

ShadowingSpec Pipeline::spec_of(const FamilyConfig& f) const {
    ShadowingSpec s;
    s.name = f.name;
    s.energy_sign = f.energy_sign;
    for (const auto& l : f.order) s.order.push_back(library_index(l));
    return s;
}

const CylinderFamily& Pipeline::family(const std::string& name) const {
    for (const auto& f : families)
        if (f.spec.name == name) return f;
    throw Error("ConfigInvalid", "no family named " + name);
}

void Pipeline::continuation() {
    const std::vector<double> grid = energy_grid(cfg.E0, cfg.E_min, cfg.ratio);
    families.assign(cfg.families.size(), {});
    parallel_for(static_cast<int>(cfg.families.size()), jobs, [&](int i) {
        families[i] = continue_family(model, chart, library, spec_of(cfg.families[i]), grid, copt);
    });
    json j;
    j["grid"] = grid;
    json fams = json::array();
    for (std::size_t i = 0; i < families.size(); ++i) {
        json orbits = json::array();
        for (const auto& o : families[i].orbits)
            orbits.push_back({{"state", json::parse(orbit_state_to_json(o))}, {"summary", json::parse(orbit_to_json(o))}});
        fams.push_back({{"name", cfg.families[i].name},
                        {"order", cfg.families[i].order},
                        {"energy_sign", cfg.families[i].energy_sign},
                        {"log", families[i].log},
                        {"orbits", orbits}});
    }
    j["families"] = fams;
    write_file(path("families.json"), j.dump());
}

void Pipeline::load_continuation() {
    require("families.json");
    std::vector<std::vector<std::string>> states(cfg.families.size());
    std::vector<std::vector<std::string>> logs(cfg.families.size());
    try {
        json j = json::parse(read_file(path("families.json")));
        const auto& fams = j.at("families");
        if (fams.size() != cfg.families.size()) throw Error("StageMissing", "families.json does not match the config");
        for (std::size_t i = 0; i < fams.size(); ++i) {
            if (fams[i].at("name").get<std::string>() != cfg.families[i].name)
                throw Error("StageMissing", "families.json does not match the config");
            logs[i] = fams[i].at("log").get<std::vector<std::string>>();
            for (const auto& o : fams[i].at("orbits")) states[i].push_back(o.at("state").dump());
        }
    } catch (const json::exception& e) {
        throw Error("StageMissing", std::string("families.json unreadable: ") + e.what());
    }
    families.assign(cfg.families.size(), {});
    ContinuationOptions reload = copt;
    reload.polish = false;
    parallel_for(static_cast<int>(cfg.families.size()), jobs, [&](int i) {
        CylinderFamily f;
        f.spec = spec_of(cfg.families[i]);
        f.log = logs[i];
        for (const auto& s : states[i]) {
            PeriodicOrbit o = orbit_state_from_json(s);
            o.spec = f.spec;
            f.orbits.push_back(refine_periodic(model, chart, library, o, reload));
        }
        families[i] = std::move(f);
    });
}

void Pipeline::split_for_atlas(std::vector<CylinderFamily>& pos, std::vector<CylinderFamily>& neg) const {
    for (std::size_t i = 0; i < families.size(); ++i) {
        if (families[i].spec.energy_sign < 0)
            neg.push_back(families[i]);
        else if (cfg.families[i].order == cfg.chain)
            pos.push_back(families[i]);
    }
    if (pos.empty()) throw Error("ConfigInvalid", "no positive family follows the configured chain");
}

bool Pipeline::all_passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
}

void Pipeline::verify() {
    checks.clear();
    const int n = model.n();
    const double l1 = spectrum.lambda[0];
    const VerifyConfig& V = cfg.verify;
    json det;
    auto fmt = [](double x) {
        char b[32];
        std::snprintf(b, sizeof b, "%.3g", x);
        return std::string(b);
    };

    checks.push_back(check("H1 certificate", h1.kappa_min, "passed", h1.passed));
    for (std::size_t i = 0; i < library.size(); ++i)
        checks.push_back(check("H2 " + library[i].label, h2[i].margin, "margin >= 1e-6, angles < 1e-3", h2[i].passed));

    // structure
    std::vector<CylinderFamily> pos, neg;
    split_for_atlas(pos, neg);
    CylinderAtlas atlas = assemble(model, pos, neg, library, chain, V.mesh_phases);
    checks.push_back(check("hole count", atlas.hole_count, "== (ell+1)k = " + std::to_string(chain.hole_count()),
                           atlas.hole_count == chain.hole_count()));
    det["atlas"] = {{"hole_count", atlas.hole_count}, {"h", ivec_json(chain.h)}, {"ell", chain.ell},
                    {"k", chain.classes.size()}, {"mesh_vertices", atlas.mesh.vertices.size()}};
    MeshInvarianceReport mi = mesh_invariance(model, atlas.mesh);
    checks.push_back(check("mesh invariance", mi.max_distance, "< resolution " + fmt(mi.resolution), mi.passed));

    // transit-time law
    {
        std::vector<double> es;
        const int P = V.transit_points;
        for (int k = 0; k < P; ++k) {
            const double e = V.transit_e_max * std::pow(V.transit_e_min / V.transit_e_max, double(k) / (P - 1));
            es.push_back(e);
            es.push_back(-e);
        }
        ScalingFit f = transit_time_fit(inner_transit_sweep(model, chart, copt.r, es));
        const double rel = std::abs(f.slope * l1 - 1.0);
        checks.push_back(check("transit slope vs 1/lambda1", rel, "< 0.02", rel < 0.02));
        checks.push_back(check("transit residual band", f.residual_band, "< 1.0", f.residual_band < 1.0));
        det["transit"] = fit_json(f);
    }

    // per-family checks
    det["families"] = json::object();
    for (const auto& fam : families) {
        const std::string& nm = fam.spec.name;
        json fd;
        std::vector<IVec> expected;
        for (int idx : fam.spec.order) expected.push_back(library[idx].klass);
        int good = 0;
        double closure = 0.0, drift = 0.0;
        for (const auto& o : fam.orbits) {
            if (cyclic_equal(itinerary(model, chart, o, cfg.tol), expected)) ++good;
            closure = std::max(closure, o.closure);
        }
        checks.push_back(check("itinerary " + nm, good, "== " + std::to_string(fam.orbits.size()) + " orbits",
                               good == static_cast<int>(fam.orbits.size()) && good > 0));
        checks.push_back(check("closure " + nm, closure, "< 1e-8", closure < 1e-8));
        for (const PeriodicOrbit* o : {&fam.orbits.front(), &fam.orbits.back()}) {
            OrbitSegment seg = sample_orbit(model, *o, cfg.tol);
            drift = std::max(drift, seg.max_energy_error(model) / o->T);
        }
        checks.push_back(check("energy drift " + nm, drift, "< 1e-9 per unit time", drift < 1e-9));
        HausdorffReport hd = hausdorff_convergence(model, fam, library);
        checks.push_back(check("hausdorff slope " + nm, hd.fit.slope, "in [0.8, 1.05]",
                               hd.fit.slope >= 0.8 && hd.fit.slope <= 1.05));
        checks.push_back(check("hausdorff adjacent decrease " + nm, hd.adjacent_decreasing ? 1 : 0, "== 1",
                               hd.adjacent_decreasing));
        fd["hausdorff"] = fit_json(hd.fit);
        fd["hausdorff_x"] = fit_json(hd.fit_x);
        if (n >= 2) {
            FloquetFits ff = floquet_scaling_fit(fam, spectrum.lambda);
            json fl = json::array();
            for (std::size_t i = 0; i < ff.fits.size(); ++i)
                fl.push_back({{"fit", fit_json(ff.fits[i])}, {"expected", ff.expected[i]}, {"mu_inf", ff.mu_inf[i]},
                              {"mu_sup", ff.mu_sup[i]}});
            fd["floquet"] = {{"fits", fl},
                             {"passages", ff.passages},
                             {"sigma1_max_deviation", ff.sigma1_max_deviation},
                             {"max_pairing_defect", ff.max_pairing_defect},
                             {"eta_monotone", ff.eta_monotone_last_decades},
                             {"eta_at_smallest", ff.eta_at_smallest}};
            const bool gated = V.floquet_families.empty() ||
                               std::find(V.floquet_families.begin(), V.floquet_families.end(), nm) !=
                                   V.floquet_families.end();
            if (gated) {
                for (std::size_t i = 0; i < ff.fits.size(); ++i) {
                    const double rel = std::abs(ff.fits[i].slope / ff.expected[i] - 1.0);
                    checks.push_back(check("floquet slope " + std::to_string(i + 2) + " " + nm, rel, "< 0.05", rel < 0.05));
                }
                checks.push_back(check("floquet pairing " + nm, ff.max_pairing_defect, "< 1e-5",
                                       ff.max_pairing_defect < 1e-5));
                checks.push_back(check("sigma1 analog " + nm, ff.sigma1_max_deviation, "< 0.1",
                                       ff.sigma1_max_deviation < 0.1));
            }
            if (nm == V.eta_family) {
                const PeriodicOrbit& o = closest_orbit(fam, V.eta_energy);
                checks.push_back(check("eta monotone " + nm, ff.eta_monotone_last_decades ? 1 : 0, "== 1",
                                       ff.eta_monotone_last_decades));
                checks.push_back(check("eta ratio at E=" + fmt(o.E), o.floquet.eta_ratio, "< 1e-3",
                                       o.floquet.eta_ratio < 1e-3));
            }
        }
        if (fam.spec.energy_sign < 0) {
            double defect = 0.0;
            bool two = true;
            for (const auto& o : fam.orbits) {
                SymmetryReport s = s_symmetry(model, o, cfg.tol);
                defect = std::max(defect, s.defect);
                two = two && s.y_zero_crossings == 2;
            }
            checks.push_back(check("s-symmetry " + nm, defect, "< 1e-7", defect < 1e-7));
            checks.push_back(check("y=0 crossings " + nm, two ? 2 : 0, "== 2 per period", two));
        } else {
            bool ok = true;
            double clos = 0.0;
            for (const PeriodicOrbit* o : {&fam.orbits.front(), &fam.orbits[fam.orbits.size() / 2], &fam.orbits.back()}) {
                PartnerReport p = s_partner(model, *o, cfg.tol);
                ok = ok && p.passed;
                clos = std::max(clos, p.closure);
            }
            checks.push_back(check("s-partner " + nm, clos, "closure < 1e-8, reversed itinerary", ok));
        }
        det["families"][nm] = fd;
    }

    // invariants on one orbit of the first family
    {
        const CylinderFamily& fam = families.front();
        const PeriodicOrbit& o = closest_orbit(fam, V.probe_energy);
        LegJacobians lj = leg_jacobians(model, chart, o);
        double fund = symplectic_defect(o.monodromy);
        for (const Mat& P : o.segment_psi) fund = std::max(fund, symplectic_defect(P));
        checks.push_back(check("fundamental matrix symplecticity", fund, "< 1e-7", fund < 1e-7));
        if (n >= 2) {
            checks.push_back(check("monodromy = product of leg Jacobians", lj.factorization_error, "< 1e-6",
                                   lj.factorization_error < 1e-6));
            checks.push_back(check("projected map symplecticity", lj.max_symplectic_defect, "< 1e-6",
                                   lj.max_symplectic_defect < 1e-6));
        } else {
            checks.push_back(skipped("monodromy = product of leg Jacobians", "no hat directions for n = 1"));
        }
        // cone invariance along the first inner leg
        std::size_t inner = 0;
        while (inner < o.legs.size() && o.legs[inner].kind != LegKind::Inner) ++inner;
        const Leg& leg = o.legs[inner];
        Vec z0 = shift_to(shift_from(o.nodes[leg.first_node], o.node_lattice[leg.first_node]), leg.start_lattice);
        VariationalSegment run = integrate_variational(model, z0, 0.0, o.leg_time[inner], cfg.tol);
        std::vector<Mat> loc = local_fundamentals(chart, run);
        ConeReport cr = cone_check(chart, run.base.times, loc, {V.cone_alpha, 0}, ConeFamily::KMinus, V.cone_vectors,
                                   cfg.seed);
        checks.push_back(check("cone invariance", cr.min_margin, "> 0 on " + std::to_string(cr.vectors) + " vectors",
                               cr.invariant));
        det["invariants"] = {{"orbit_E", o.E},
                             {"fundamental_symplectic_defect", fund},
                             {"factorization_error", lj.factorization_error},
                             {"projected_symplectic_defect", lj.max_symplectic_defect},
                             {"cone_margin", cr.min_margin}};
        if (!V.probe_family.empty()) {
            const PeriodicOrbit& po = closest_orbit(family(V.probe_family), V.probe_energy);
            UniquenessReport u = uniqueness_probe(model, chart, library, po, V.probes, V.probe_delta, copt, cfg.seed);
            checks.push_back(check("uniqueness " + V.probe_family, u.distinct, "== 0 distinct of " +
                                   std::to_string(u.converged) + " converged", u.unique && u.converged > 0));
            det["uniqueness"] = {{"probes", u.probes}, {"converged", u.converged}, {"coincident", u.coincident},
                                 {"distinct", u.distinct}};
        }
    }

    // section-map Jacobians against finite differences
    if (n >= 2) {
        const HomoclinicOrbit& h = library[families.front().spec.order.front()];
        const double E = 1e-6, r = copt.r;
        MapOptions mo;
        mo.r = r;
        mo.tol = cfg.tol;
        const SectionSide exit_side = h.exit_sign > 0 ? SectionSide::UPlus : SectionSide::UMinus;
        Vec w_out = point_on_section(chart, model, exit_side, r, hat_coordinates(h.exit_local), E);
        double e_outer = fd_projected_error(model, chart, w_out, exit_side, E, r, 1e-9,
                                            [&](const Vec& z) { return outer_map(chart, model, z, h, mo); });
        const SectionSide entry_side = h.entry_sign > 0 ? SectionSide::VPlus : SectionSide::VMinus;
        const double Ei = 1e-4;
        Vec w_in = point_on_section(chart, model, entry_side, r, hat_coordinates(h.entry_local), Ei);
        double e_inner = fd_projected_error(model, chart, w_in, entry_side, Ei, r, 1e-8, [&](const Vec& z) {
            return inner_map(chart, model, z, entry_side, 1, mo);
        });
        checks.push_back(check("outer map Jacobian vs finite differences", e_outer, "< 1e-4", e_outer < 1e-4));
        checks.push_back(check("inner map Jacobian vs finite differences", e_inner, "< 1e-4", e_inner < 1e-4));
    }

    // graph-transform oracle
    if (n == 2 && !V.oracle_family.empty()) {
        const CylinderFamily& fam = family(V.oracle_family);
        json orc = json::array();
        double worst = 0.0;
        for (double E : V.oracle_energies) {
            PeriodicOrbit o = solve_periodic(model, chart, library, fam.spec, E, copt);
            GraphOracleResult g = graph_transform_oracle(model, chart, library, fam.spec, E, V.oracle_resolution, copt);
            const double d = (hat_coordinates(o.anchors_local[0]) - g.anchor_hat).norm();
            worst = std::max(worst, d);
            orc.push_back({{"E", E}, {"difference", d}, {"iterations", g.iterations}, {"final_change", g.final_change}});
        }
        checks.push_back(check("graph transform oracle vs Newton", worst, "< 1e-6 at " +
                               std::to_string(V.oracle_energies.size()) + " energies", worst < 1e-6));
        det["oracle"] = orc;
    } else {
        checks.push_back(skipped("graph transform oracle vs Newton", n == 2 ? "no oracle family" : "n != 2"));
    }

    // C1 join, vertex, normal hyperbolicity
    if (n >= 2 && !V.join_positive.empty() && !V.join_negative.empty()) {
        C1JoinReport c = c1_join_test(model, chart, library, family(V.join_positive).spec,
                                      family(V.join_negative).spec, copt, V.join_energy);
        const double vh = std::max(c.v_hat_plus, c.v_hat_minus);
        const double dh = std::max(std::abs(c.dH_plus - 1), std::abs(c.dH_minus - 1));
        checks.push_back(check("C1 join u-hat agreement", c.u_hat_rel_diff, "< 1e-3", c.u_hat_rel_diff < 1e-3));
        checks.push_back(check("C1 join v-hat derivatives", vh, "< 1e-3", vh < 1e-3));
        checks.push_back(check("C1 join <dH, dz/dE>", dh, "|. - 1| < 1e-4", dh < 1e-4));
        checks.push_back(check("C1 join lemma prediction", c.lemma_rel_error, "< 1e-3", c.lemma_rel_error < 1e-3));
        det["c1_join"] = {{"e_join", c.e_join},
                          {"d_plus", vec_json(c.d_plus)},
                          {"d_minus", vec_json(c.d_minus)},
                          {"u_hat_rel_diff", c.u_hat_rel_diff},
                          {"v_hat_plus", c.v_hat_plus},
                          {"v_hat_minus", c.v_hat_minus},
                          {"u_hat_predicted", vec_json(c.u_hat_predicted)},
                          {"lemma_rel_error", c.lemma_rel_error},
                          {"pi1_scaled", c.pi1_scaled},
                          {"note", "join defects below tolerance cannot distinguish C1 from C0 with a tiny kink"}};
    } else {
        checks.push_back(skipped("C1 join", n == 1 ? "no hat directions for n = 1" : "no join families"));
    }
    {
        std::vector<const CylinderFamily*> fp;
        for (const auto& f : families) fp.push_back(&f);
        VertexReport vx = vertex_differentiability_test(model, chart, fp);
        if (vx.exact_zero) {
            checks.push_back(check("vertex differentiability", 0, "exact zero", true));
        } else {
            checks.push_back(check("vertex envelope exponent", vx.fit.slope, ">= " + fmt(vx.threshold), vx.passed));
        }
        det["vertex"] = {{"fit", fit_json(vx.fit)},     {"threshold", vx.threshold},
                         {"leaf_exponents", vx.leaf_exponents}, {"leaf_tilts", vx.leaf_tilts},
                         {"leaf_radius", vx.leaf_radius}, {"leaf_spread", vx.leaf_spread},
                         {"leaves_tangent", vx.leaves_tangent}, {"exact_zero", vx.exact_zero}};
    }
    if (n >= 2 && !V.nh_homoclinic.empty() && !V.nh_family.empty()) {
        const PeriodicOrbit& o = closest_orbit(family(V.nh_family), V.nh_energy);
        NormalHyperbolicityReport nh =
            normal_hyperbolicity_test(model, chart, library[library_index(V.nh_homoclinic)], o, 0.5, cfg.seed);
        checks.push_back(check("normal hyperbolicity gap (homoclinic)", nh.gap_homoclinic / nh.sigma_homoclinic,
                               ">= 3 sigma", nh.gap_homoclinic > 3 * nh.sigma_homoclinic && nh.gap_homoclinic > 0));
        checks.push_back(check("normal hyperbolicity gap (periodic)", nh.gap_periodic / nh.sigma_periodic,
                               ">= 3 sigma", nh.gap_periodic > 3 * nh.sigma_periodic && nh.gap_periodic > 0));
        checks.push_back(check("tangent/normal rate bounds", nh.tangent_bounded ? 1 : 0, "== 1", nh.tangent_bounded));
        checks.push_back(check("rate continuity homoclinic/periodic", nh.continuity_rel, "< 0.1", nh.continuity_rel < 0.1));
        json rates = json::array();
        for (const auto& r : nh.tangent) rates.push_back({{"kind", "tangent"}, {"where", r.where}, {"vector", r.vector}, {"rate", r.rate}, {"stderr", r.stderr_}});
        for (const auto& r : nh.normal) rates.push_back({{"kind", "normal"}, {"where", r.where}, {"vector", r.vector}, {"rate", r.rate}, {"stderr", r.stderr_}});
        det["normal_hyperbolicity"] = {{"rates", rates},
                                       {"gap_homoclinic", nh.gap_homoclinic},
                                       {"sigma_homoclinic", nh.sigma_homoclinic},
                                       {"gap_periodic", nh.gap_periodic},
                                       {"sigma_periodic", nh.sigma_periodic},
                                       {"orbit_E", o.E}};
    } else {
        checks.push_back(skipped("normal hyperbolicity", n == 1 ? "no normal directions for n = 1" : "not configured"));
    }

    json cj = json::array();
    for (const auto& c : checks)
        cj.push_back({{"name", c.name}, {"value", c.value}, {"relation", c.relation}, {"passed", c.passed},
                      {"skipped", c.skipped}, {"detail", c.detail}});
    json j;
    j["checks"] = cj;
    j["all_passed"] = all_passed();
    j["details"] = det;
    verify_json = j.dump(2);
    write_file(path("verify.json"), verify_json);
    write_file(path("verify.txt"), checks_table(checks));
}

void Pipeline::export_artifacts() {
    fs::create_directories(out);
    std::vector<CylinderFamily> pos, neg;
    split_for_atlas(pos, neg);
    CylinderAtlas atlas = assemble(model, pos, neg, library, chain, cfg.verify.mesh_phases);
    write_file(path("mesh.json"), mesh_to_json(atlas.mesh));
    write_file(path("mesh_lifted.json"), mesh_to_json(atlas.lifted));
    {
        std::ofstream f(path("mesh_vertices.csv"));
        if (!f) throw Error("IOError", "cannot write mesh_vertices.csv");
        const int n = model.n();
        f << "strip,E,phase";
        for (int i = 0; i < n; ++i) f << ",x" << i + 1;
        for (int i = 0; i < n; ++i) f << ",y" << i + 1;
        f << "\n";
        for (const auto& v : atlas.mesh.vertices) {
            f << atlas.mesh.strip_names[v.strip] << "," << g17(v.E) << "," << g17(v.phase);
            for (int i = 0; i < 2 * n; ++i) f << "," << g17(v.z[i]);
            f << "\n";
        }
    }
    for (const auto& fam : families) {
        std::string safe;
        for (char c : fam.spec.name) safe += std::isalnum(static_cast<unsigned char>(c)) || c == '-' ? c : '_';
        std::ofstream f(path("family_" + safe + ".csv"));
        if (!f) throw Error("IOError", "cannot write family CSV");
        const int m = 2 * model.n() - 2;
        f << "E,T,gamma,residual,closure,energy_error,sigma1_analog,pairing_defect,eta_ratio";
        for (int i = 0; i < m; ++i) f << ",log_abs_sigma" << i + 1;
        f << "\n";
        for (const auto& o : fam.orbits) {
            f << g17(o.E) << "," << g17(o.T) << "," << g17(o.gamma) << "," << g17(o.residual) << "," << g17(o.closure)
              << "," << g17(o.energy_error) << "," << g17(o.floquet.sigma1_analog) << ","
              << g17(o.floquet.pairing_defect) << "," << g17(o.floquet.eta_ratio);
            for (int i = 0; i < m; ++i)
                f << "," << (i < static_cast<int>(o.floquet.log_abs.size()) ? g17(o.floquet.log_abs[i]) : "");
            f << "\n";
        }
    }
    for (const auto& h : library) {
        std::string safe;
        for (char c : h.label) safe += std::isalnum(static_cast<unsigned char>(c)) || c == '-' ? c : '_';
        write_segment_csv(h.outer, model, path("homoclinic_" + safe + ".csv"));
    }
}

int Pipeline::run(Stage to, Stage from) {
    if (static_cast<int>(from) > static_cast<int>(to))
        throw Error("ConfigInvalid", "--stage-from " + stage_name(from) + " comes after " + stage_name(to));
    fs::create_directories(out);
    auto active = [&](Stage s) { return static_cast<int>(s) >= static_cast<int>(from); };
    if (active(Stage::Analyze)) analyze(); else load_analyze();
    if (to == Stage::Analyze) return 0;
    if (active(Stage::Homoclinics)) homoclinics(); else load_homoclinics();
    if (to == Stage::Homoclinics) return 0;
    if (active(Stage::Continue)) continuation(); else load_continuation();
    if (to == Stage::Continue) return 0;
    if (active(Stage::Verify)) verify();
    if (to == Stage::Export || from == Stage::Export) export_artifacts();
    return all_passed() ? 0 : 1;
}

std::string checks_table(const std::vector<CheckResult>& checks) {
    std::size_t w = 5;
    for (const auto& c : checks) w = std::max(w, c.name.size());
    std::ostringstream os;
    char buf[64];
    os << std::string(w - 5, ' ') << "check  status       value  requirement\n";
    int failed = 0;
    for (const auto& c : checks) {
        std::snprintf(buf, sizeof buf, "%11.4g", c.value);
        const char* st = c.skipped ? "SKIP" : (c.passed ? "PASS" : "FAIL");
        if (!c.passed) ++failed;
        os << std::string(w - c.name.size(), ' ') << c.name << "  " << st << "  " << (c.skipped ? std::string(11, ' ') : buf)
           << "  " << (c.skipped ? c.detail : c.relation) << "\n";
    }
    os << checks.size() << " checks, " << failed << " failed\n";
    return os.str();
}

}  // namespace nhic
