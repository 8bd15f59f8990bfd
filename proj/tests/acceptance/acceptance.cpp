// Acceptance suite: one PASS/FAIL line per criterion on the bundled systems.
#include "nhic/pipeline.hpp"
#include "nhic/sectionmaps.hpp"

#include <Eigen/Eigenvalues>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <sstream>
#include <string>

using namespace nhic;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Line {
    bool pass = true;
    std::ostringstream text;
    void need(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            text << " [fails: " << what << "]";
        }
    }
};

int failures = 0;

void report(const std::string& id, const std::string& title, Line& l) {
    std::printf("%s criterion %s %s:%s\n", l.pass ? "PASS" : "FAIL", id.c_str(), title.c_str(), l.text.str().c_str());
    std::fflush(stdout);
    if (!l.pass) ++failures;
}

std::string g(double x) {
    char b[32];
    std::snprintf(b, sizeof b, "%.3g", x);
    return b;
}

// Saddle exponents from a finite-difference Hessian of V at the minimum and the kinetic matrix A.
Vec oracle_lambda(const HamiltonianModel& m) {
    const int n = m.n();
    const double h = 1e-4;
    Mat H(n, n);
    auto V = [&](const Vec& x) { return m.potential().value(x); };
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            Vec ei = Vec::Unit(n, i) * h, ej = Vec::Unit(n, j) * h;
            H(i, j) = (V(ei + ej) - V(ei - ej) - V(ej - ei) + V(-ei - ej)) / (4 * h * h);
        }
    // lambda^2 are the eigenvalues of A D2V at the minimum
    Eigen::EigenSolver<Mat> es(m.A() * H);
    Vec ev = es.eigenvalues().real();
    std::sort(ev.data(), ev.data() + n);
    return ev.cwiseSqrt();
}

const PeriodicOrbit& nearest(const CylinderFamily& f, double E) {
    const PeriodicOrbit* best = &f.orbits.front();
    for (const auto& o : f.orbits)
        if (std::abs(std::log(std::abs(o.E / E))) < std::abs(std::log(std::abs(best->E / E)))) best = &o;
    return *best;
}

// Projected Jacobian of a section map by central differences in the hat coordinates.
Mat fd_projected(const Pipeline& p, SectionSide side, double E, const Vec& hat0, double d,
                 const std::function<SectionMapResult(const Vec&)>& map) {
    const int m = static_cast<int>(hat0.size());
    Mat D(m, m);
    for (int k = 0; k < m; ++k) {
        Vec hp = hat0, hm = hat0;
        hp[k] += d;
        hm[k] -= d;
        auto img = [&](const Vec& h) {
            return hat_coordinates(map(p.chart.from_local(point_on_section(p.chart, p.model, side, p.copt.r, h, E))).image_local);
        };
        D.col(k) = (img(hp) - img(hm)) / (2 * d);
    }
    return D;
}

}  // namespace

int main() {
    const auto t_all = Clock::now();
    const fs::path src = NHIC_SOURCE_DIR;
    const fs::path out = fs::temp_directory_path() / "nhic_acceptance";
    fs::remove_all(out);

    // ---------------------------------------------------------------- runs
    Pipeline pend(load_config((src / "configs" / "pendulum.cfg").string()), (out / "pendulum").string());
    pend.run(Stage::Continue);

    Pipeline cp(load_config((src / "configs" / "coupled_pendula.cfg").string()), (out / "coupled").string());
    const auto t_stage = Clock::now();
    cp.analyze();
    cp.homoclinics();
    const double t_homoclinics = since(t_stage);
    const auto t_cont = Clock::now();
    cp.continuation();
    const double t_continuation = since(t_cont);

    const Vec lam = oracle_lambda(cp.model);
    const double l1 = lam[0], ratio = lam[1] / lam[0];
    std::printf("oracle exponents: lambda = (%.10g, %.10g), lambda2/lambda1 = %.8g\n", lam[0], lam[1], ratio);
    std::printf("stage times: homoclinics %.1f s, continuation %.1f s\n", t_homoclinics, t_continuation);

    // ---------------------------------------------------------------- 1 transit-time law
    {
        const auto t0 = Clock::now();
        Line l;
        std::vector<double> es;
        for (int k = 0; k <= 16; ++k) {
            const double e = 1e-4 * std::pow(10.0, -0.5 * k);
            es.push_back(e);
            es.push_back(-e);
        }
        ScalingFit f = transit_time_fit(inner_transit_sweep(cp.model, cp.chart, cp.copt.r, es));
        const double rel = std::abs(f.slope * l1 - 1);
        const double t = since(t0);
        l.text << " slope " << g(f.slope) << " vs 1/lambda1 " << g(1 / l1) << " (rel " << g(rel) << "), band "
               << g(f.residual_band) << ", E in [" << g(f.e_min) << ", " << g(f.e_max) << "], " << g(t) << " s";
        l.need(rel < 0.02, "slope within 2%");
        l.need(f.residual_band < 1.0, "band < 1");
        l.need(f.e_min <= 1e-12 * 1.0001 && f.e_max >= 1e-4 * 0.9999, "range [1e-12, 1e-4]");
        l.need(t < 60, "runtime < 1 min");
        report("1", "transit-time law", l);
    }

    // ---------------------------------------------------------------- 2 Floquet scaling
    {
        Line l;
        for (const std::string name : {"(1,0)+", "pair(1,0)"}) {
            FloquetFits ff = floquet_scaling_fit(cp.family(name), cp.spectrum.lambda);
            const ScalingFit& f = ff.fits[0];
            const double rel = std::abs(f.slope / ratio - 1);
            const double decades = std::log10(f.e_max / f.e_min);
            l.text << " " << name << ": slope " << g(f.slope) << " vs " << g(ratio) << " (rel " << g(rel) << "), "
                   << g(decades) << " decades, pairing " << g(ff.max_pairing_defect) << ", |sigma1-1| "
                   << g(ff.sigma1_max_deviation) << ";";
            l.need(rel < 0.05, name + " slope within 5%");
            l.need(decades >= 5, name + " >= 5 decades");
            l.need(ff.max_pairing_defect < 1e-5, name + " pairing");
            l.need(ff.sigma1_max_deviation < 0.1, name + " sigma1");
        }
        l.text << " continuation " << g(t_continuation) << " s";
        l.need(t_continuation < 300, "runtime < 5 min");
        report("2", "Floquet scaling", l);
    }

    // ---------------------------------------------------------------- 3 eigenvector alignment
    {
        Line l;
        const CylinderFamily& f = cp.family("(1,0)+");
        FloquetFits ff = floquet_scaling_fit(f, cp.spectrum.lambda);
        const PeriodicOrbit& o = nearest(f, 1e-10);
        l.text << " monotone over last 4 decades " << ff.eta_monotone_last_decades << ", ratio at E=" << g(o.E) << " "
               << g(o.floquet.eta_ratio);
        l.need(ff.eta_monotone_last_decades, "monotone decrease");
        l.need(std::abs(o.E - 1e-10) < 1e-15 && o.floquet.eta_ratio < 1e-3, "ratio < 1e-3 at E = 1e-10");
        report("3", "eigenvector alignment", l);
    }

    // ---------------------------------------------------------------- 4 Hausdorff convergence
    {
        Line l;
        auto one = [&](const Pipeline& p, const CylinderFamily& f) {
            HausdorffReport h = hausdorff_convergence(p.model, f, p.library);
            l.text << " " << f.spec.name << " " << g(h.fit.slope) << ";";
            l.need(h.fit.slope >= 0.8 && h.fit.slope <= 1.05, f.spec.name + " slope in [0.8, 1.05]");
        };
        for (const auto& f : cp.families) one(cp, f);
        for (const auto& f : pend.families) one(pend, f);
        report("4", "Hausdorff convergence", l);
    }

    // ---------------------------------------------------------------- 5 C1 join
    {
        Line l;
        C1JoinReport c = c1_join_test(cp.model, cp.chart, cp.library, cp.family("(1,0)+").spec,
                                      cp.family("pair(1,0)").spec, cp.copt, 1e-10);
        const double vh = std::max(c.v_hat_plus, c.v_hat_minus);
        const double dh = std::max(std::abs(c.dH_plus - 1), std::abs(c.dH_minus - 1));
        l.text << " u-hat rel diff " << g(c.u_hat_rel_diff) << ", v-hat " << g(vh) << ", |<dH,dz/dE>-1| " << g(dh)
               << " at |E| = " << g(c.e_join);
        l.need(c.u_hat_rel_diff < 1e-3, "u-hat agreement");
        l.need(vh < 1e-3, "v-hat derivatives");
        l.need(dh < 1e-4, "energy identity");
        report("5", "C1 join", l);
    }

    // ---------------------------------------------------------------- 6 structure
    {
        Line l;
        // paper Remark: classes (1,0),(0,1) close on T^2 mod 2 with ell = 1
        const IVec h_paper = (IVec(2) << 2, 2).finished();
        const int ell_paper = 1;
        l.text << " pendulum holes " << pend.chain.hole_count() << "; coupled h=(" << cp.chain.h.transpose()
               << ") ell=" << cp.chain.ell << " holes " << cp.chain.hole_count();
        l.need(pend.chain.hole_count() == 1, "k=1 one hole");
        l.need(cp.chain.h == h_paper && cp.chain.ell == ell_paper, "h=(2,2), ell=1");
        l.need(cp.chain.hole_count() == (ell_paper + 1) * 2, "4 holes");
        for (const Pipeline* p : {&pend, &cp}) {
            std::vector<CylinderFamily> pos, neg;
            for (std::size_t i = 0; i < p->families.size(); ++i) {
                if (p->families[i].spec.energy_sign < 0) neg.push_back(p->families[i]);
                else if (p->cfg.families[i].order == p->cfg.chain) pos.push_back(p->families[i]);
            }
            CylinderAtlas a = assemble(p->model, pos, neg, p->library, p->chain, 24);
            l.need(a.hole_count == p->chain.hole_count(), "assembled atlas hole count");
            int bad_itin = 0, bad_sym = 0;
            double sym = 0;
            for (const auto& f : p->families) {
                std::vector<IVec> want;
                for (int idx : f.spec.order) want.push_back(p->library[idx].klass);
                for (const auto& o : f.orbits) {
                    if (!cyclic_equal(itinerary(p->model, p->chart, o), want)) ++bad_itin;
                    if (f.spec.energy_sign < 0) {
                        SymmetryReport s = s_symmetry(p->model, o);
                        sym = std::max(sym, s.defect);
                        if (s.defect >= 1e-7 || s.y_zero_crossings != 2) ++bad_sym;
                    }
                }
            }
            l.text << "; n=" << p->model.n() << " itinerary mismatches " << bad_itin << ", s-symmetry max " << g(sym);
            l.need(bad_itin == 0, "itinerary");
            l.need(bad_sym == 0, "s-symmetry and two y=0 crossings");
        }
        report("6", "structure", l);
    }

    // ---------------------------------------------------------------- 7 oracle equivalence
    {
        Line l;
        const CylinderFamily& f = cp.family("(1,0)+");
        double worst = 0;
        for (double E : {1e-4, 3e-5, 1e-5}) {
            PeriodicOrbit o = solve_periodic(cp.model, cp.chart, cp.library, f.spec, E, cp.copt);
            GraphOracleResult gr = graph_transform_oracle(cp.model, cp.chart, cp.library, f.spec, E, 41, cp.copt);
            worst = std::max(worst, (hat_coordinates(o.anchors_local[0]) - gr.anchor_hat).norm());
        }
        l.text << " graph transform vs Newton " << g(worst) << ";";
        l.need(worst < 1e-6, "graph transform within 1e-6");

        const HomoclinicOrbit& h = cp.library[cp.library_index("(1,0)+")];
        MapOptions mo;
        mo.r = cp.copt.r;
        const double Eo = 1e-6, Ei = 1e-4;
        const Vec hat_out = hat_coordinates(h.exit_local), hat_in = hat_coordinates(h.entry_local);
        auto outer = [&](const Vec& z) { return outer_map(cp.chart, cp.model, z, h, mo); };
        auto inner = [&](const Vec& z) { return inner_map(cp.chart, cp.model, z, SectionSide::VPlus, 1, mo); };
        SectionMapResult bo = outer(cp.chart.from_local(point_on_section(cp.chart, cp.model, SectionSide::UPlus, cp.copt.r, hat_out, Eo)));
        SectionMapResult bi = inner(cp.chart.from_local(point_on_section(cp.chart, cp.model, SectionSide::VPlus, cp.copt.r, hat_in, Ei)));
        const double eo = (fd_projected(cp, SectionSide::UPlus, Eo, hat_out, 1e-9, outer) - bo.projected).norm() / bo.projected.norm();
        const double ei = (fd_projected(cp, SectionSide::VPlus, Ei, hat_in, 1e-8, inner) - bi.projected).norm() / bi.projected.norm();
        l.text << " FD Jacobians outer " << g(eo) << " inner " << g(ei) << ";";
        l.need(eo < 1e-4 && ei < 1e-4, "section-map Jacobians within 1e-4");

        double fact = 0;
        for (const auto& fam : cp.families)
            for (const PeriodicOrbit* o : {&fam.orbits.front(), &fam.orbits.back()})
                fact = std::max(fact, leg_jacobians(cp.model, cp.chart, *o).factorization_error);
        // monodromy against finite differences of the period map; the step must stay below 1 / |M|
        const PeriodicOrbit& o = nearest(f, 1e-3);
        Vec z0 = o.start_point();
        Mat M(4, 4);
        for (int k = 0; k < 4; ++k) {
            Vec d = Vec::Unit(4, k) * 1e-10;
            M.col(k) = (integrate(cp.model, z0 + d, 0, o.T).states.back() - integrate(cp.model, z0 - d, 0, o.T).states.back()) / 2e-10;
        }
        const double mono = (M - o.monodromy).norm() / o.monodromy.norm();
        l.text << " leg-product factorization " << g(fact) << ", monodromy vs FD " << g(mono);
        l.need(fact < 1e-6, "monodromy = product of leg Jacobians");
        l.need(mono < 1e-4, "monodromy vs finite differences");
        report("7", "oracle equivalence", l);
    }

    // ---------------------------------------------------------------- 8 invariant suites
    {
        Line l;
        double drift = 0, fund = 0, proj = 0;
        for (const auto& fam : cp.families)
            for (const PeriodicOrbit* o : {&fam.orbits.front(), &fam.orbits.back()}) {
                OrbitSegment s = integrate(cp.model, o->start_point(), 0, o->T);
                double e = 0;
                for (const Vec& z : s.states) e = std::max(e, std::abs(cp.model.H(z) - o->E));
                drift = std::max(drift, e / o->T);
                fund = std::max(fund, symplectic_defect(o->monodromy));
                for (const Mat& P : o->segment_psi) fund = std::max(fund, symplectic_defect(P));
                for (const Mat& P : leg_jacobians(cp.model, cp.chart, *o).projected) {
                    const int m = static_cast<int>(P.rows()) / 2;
                    proj = std::max(proj, (P.transpose() * symplectic_j(m) * P - symplectic_j(m)).norm() /
                                              std::max(1.0, P.squaredNorm()));
                }
            }
        const PeriodicOrbit& o = nearest(cp.family("(1,0)+"), 1e-6);
        std::size_t inner = 0;
        while (o.legs[inner].kind != LegKind::Inner) ++inner;
        const Leg& leg = o.legs[inner];
        Vec z0 = shift_to(shift_from(o.nodes[leg.first_node], o.node_lattice[leg.first_node]), leg.start_lattice);
        VariationalSegment run = integrate_variational(cp.model, z0, 0.0, o.leg_time[inner]);
        ConeReport cr = cone_check(cp.chart, run.base.times, local_fundamentals(cp.chart, run), {0.5, 0},
                                   ConeFamily::KMinus, 1000, 7);
        l.text << " energy drift " << g(drift) << "/time, fundamental symplecticity " << g(fund) << ", projected "
               << g(proj) << ", cone margin " << g(cr.min_margin) << " on " << cr.vectors << " vectors";
        l.need(drift < 1e-9, "energy drift");
        l.need(fund < 1e-7, "fundamental symplecticity");
        l.need(proj < 1e-6, "projected symplecticity");
        l.need(cr.invariant && cr.min_margin > 0 && cr.vectors == 1000, "cone invariance");
        report("8", "invariant suites", l);
    }

    // ---------------------------------------------------------------- 9 normal hyperbolicity
    {
        Line l;
        const PeriodicOrbit& o = nearest(cp.family("(1,0)+"), 1e-10);
        NormalHyperbolicityReport nh =
            normal_hyperbolicity_test(cp.model, cp.chart, cp.library[cp.library_index("(1,0)+")], o);
        const double gap = lam[1] - lam[0];
        l.text << " gap homoclinic " << g(nh.gap_homoclinic) << " +- " << g(nh.sigma_homoclinic) << ", periodic "
               << g(nh.gap_periodic) << " +- " << g(nh.sigma_periodic) << ", oracle lambda2-lambda1 " << g(gap);
        l.need(nh.gap_homoclinic > 3 * nh.sigma_homoclinic && nh.gap_periodic > 3 * nh.sigma_periodic, "3 sigma");
        l.need(std::abs(nh.gap_homoclinic / gap - 1) < 0.1 && std::abs(nh.gap_periodic / gap - 1) < 0.1,
               "gap matches lambda2 - lambda1");
        l.need(nh.tangent_bounded, "tangent and normal rate bounds");
        report("9", "normal hyperbolicity", l);
    }

    // ---------------------------------------------------------------- runtime
    {
        Line l;
        const auto t0 = Clock::now();
        Pipeline full(load_config((src / "configs" / "coupled_pendula.cfg").string()), (out / "full").string());
        const int rc = full.run(Stage::Export);
        const double t = since(t0);
        l.text << " full n=2 pipeline " << g(t) << " s, exit " << rc << ", " << full.checks.size() << " checks";
        l.need(t < 900, "< 15 min");
        l.need(rc == 0, "all pipeline checks pass");
        report("runtime", "full verification", l);
    }

    std::printf("total %.1f s, %d failed\n", since(t_all), failures);
    return failures == 0 ? 0 : 1;
}
