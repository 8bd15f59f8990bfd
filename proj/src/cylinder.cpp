#include "nhic/cylinder.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <set>

namespace nhic {

namespace {

double point_segment(const Vec& p, const Vec& a, const Vec& b) {
    Vec e = b - a;
    const double ee = e.squaredNorm();
    double s = ee > 0 ? std::clamp((p - a).dot(e) / ee, 0.0, 1.0) : 0.0;
    return (p - a - s * e).norm();
}

double point_triangle(const Vec& p, const Vec& a, const Vec& b, const Vec& c) {
    Vec e1 = b - a, e2 = c - a, d = p - a;
    Eigen::Matrix2d G;
    G << e1.dot(e1), e1.dot(e2), e1.dot(e2), e2.dot(e2);
    Eigen::Vector2d rhs(e1.dot(d), e2.dot(d));
    if (std::abs(G.determinant()) > 1e-300) {
        Eigen::Vector2d st = G.ldlt().solve(rhs);
        if (st[0] >= 0 && st[1] >= 0 && st[0] + st[1] <= 1) return (d - st[0] * e1 - st[1] * e2).norm();
    }
    return std::min({point_segment(p, a, b), point_segment(p, b, c), point_segment(p, a, c)});
}

double directed(const std::vector<std::vector<Vec>>& a, const std::vector<std::vector<Vec>>& b) {
    double worst = 0.0;
    for (const auto& ca : a)
        for (const Vec& p : ca) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& cb : b) {
                if (cb.size() == 1) best = std::min(best, (p - cb[0]).norm());
                for (std::size_t k = 0; k + 1 < cb.size(); ++k) best = std::min(best, point_segment(p, cb[k], cb[k + 1]));
            }
            worst = std::max(worst, best);
        }
    return worst;
}

Vec reflect(const Vec& z) {
    Vec s = z;
    const int n = static_cast<int>(z.size()) / 2;
    s.tail(n) *= -1.0;
    return s;
}

// Piece of a trajectory given by dense output, lifted by a lattice shift.
struct DensePiece {
    OrbitSegment seg;
    IVec shift;
    double t0 = 0.0, t1 = 0.0;
    Vec at(double t, int dims) const { return shift_from(seg.at(t), shift).head(dims); }
};

// Sup over sampled points of the distance to the curve, each refined by golden-section search on the dense output.
double directed_dense(const std::vector<Vec>& pts, const std::vector<DensePiece>& curve, int dims, int coarse) {
    struct Coarse {
        const DensePiece* piece;
        std::vector<double> t;
        std::vector<Vec> z;
    };
    std::vector<Coarse> cs;
    for (const auto& pc : curve) {
        Coarse c{&pc, {}, {}};
        for (int k = 0; k <= coarse; ++k) {
            c.t.push_back(pc.t0 + (pc.t1 - pc.t0) * k / coarse);
            c.z.push_back(pc.at(c.t.back(), dims));
        }
        cs.push_back(std::move(c));
    }
    const double g = (std::sqrt(5.0) - 1) / 2;
    double worst = 0.0;
    for (const Vec& p0 : pts) {
        const Vec p = p0.head(dims);
        double best = std::numeric_limits<double>::infinity();
        for (const auto& c : cs) {
            std::size_t kb = 0;
            double db = std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < c.z.size(); ++k) {
                const double d = (p - c.z[k]).norm();
                if (d < db) db = d, kb = k;
            }
            double a = c.t[kb > 0 ? kb - 1 : 0], b = c.t[std::min(kb + 1, c.t.size() - 1)];
            auto f = [&](double t) { return (p - c.piece->at(t, dims)).norm(); };
            double x1 = b - g * (b - a), x2 = a + g * (b - a), f1 = f(x1), f2 = f(x2);
            for (int it = 0; it < 80 && b - a > 1e-15 * (1 + std::abs(a)); ++it) {
                if (f1 < f2) {
                    b = x2, x2 = x1, f2 = f1, x1 = b - g * (b - a), f1 = f(x1);
                } else {
                    a = x1, x1 = x2, f1 = f2, x2 = a + g * (b - a), f2 = f(x2);
                }
            }
            best = std::min({best, db, f1, f2});
        }
        worst = std::max(worst, best);
    }
    return worst;
}

double hausdorff_dense(const std::vector<DensePiece>& a, const std::vector<DensePiece>& b, int dims, int samples) {
    auto points = [&](const std::vector<DensePiece>& c) {
        std::vector<Vec> out;
        for (const auto& pc : c)
            for (int k = 0; k <= samples; ++k) out.push_back(pc.at(pc.t0 + (pc.t1 - pc.t0) * k / samples, dims));
        return out;
    };
    return std::max(directed_dense(points(a), b, dims, samples), directed_dense(points(b), a, dims, samples));
}

// Lifted samples of one leg of a converged orbit.
std::vector<Vec> leg_samples(const HamiltonianModel& model, const PeriodicOrbit& o, std::size_t l, int samples,
                             const Tolerances& tol) {
    const Leg& leg = o.legs[l];
    const double h = o.leg_time[l] / leg.subsegments;
    const int per = std::max(2, samples / leg.subsegments);
    std::vector<Vec> out;
    for (int q = 0; q < leg.subsegments; ++q) {
        const int j = leg.first_node + q;
        OrbitSegment seg = integrate(model, o.nodes[j], 0.0, h, tol);
        const int last = q + 1 == leg.subsegments ? per : per - 1;
        for (int k = 0; k <= last; ++k) {
            Vec z = seg.at(h * k / per);
            out.push_back(shift_from(z, o.node_lattice[j]));
        }
    }
    return out;
}

nlohmann::json vec_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

}  // namespace

ScalingFit fit_line(const std::string& name, const std::string& transform, const std::vector<double>& x,
                    const std::vector<double>& y, const std::vector<double>& energies, double min_decades) {
    ScalingFit f;
    f.name = name;
    f.transform = transform;
    f.points = static_cast<int>(x.size());
    if (x.size() < 3 || x.size() != y.size()) throw Error("InsufficientRange", name + ": fewer than 3 points");
    if (!energies.empty()) {
        auto [lo, hi] = std::minmax_element(energies.begin(), energies.end(),
                                            [](double a, double b) { return std::abs(a) < std::abs(b); });
        f.e_min = std::abs(*lo);
        f.e_max = std::abs(*hi);
        if (std::log10(f.e_max / f.e_min) < min_decades - 1e-9)
            throw Error("InsufficientRange", name + ": E range below the required decades");
    }
    const int m = f.points;
    Mat A(m, 2);
    Vec b(m);
    for (int i = 0; i < m; ++i) {
        A(i, 0) = x[i];
        A(i, 1) = 1.0;
        b[i] = y[i];
    }
    Vec c = A.colPivHouseholderQr().solve(b);
    f.slope = c[0];
    f.intercept = c[1];
    Vec res = b - A * c;
    f.residual_sup = res.lpNorm<Eigen::Infinity>();
    f.residual_band = res.maxCoeff() - res.minCoeff();
    const double mx = A.col(0).mean();
    const double sxx = (A.col(0).array() - mx).square().sum();
    if (m > 2 && sxx > 0) f.slope_stderr = std::sqrt(res.squaredNorm() / (m - 2) / sxx);
    return f;
}

int structural_hole_count(const std::vector<IVec>& classes, const IVec& h, int laps) {
    if (classes.empty()) return 0;
    const int n = static_cast<int>(classes.front().size());
    std::set<std::vector<int>> seen;
    IVec p = IVec::Zero(n);
    for (int lap = 0; lap < laps; ++lap)
        for (const IVec& c : classes) {
            p += c;
            std::vector<int> key(n);
            for (int i = 0; i < n; ++i) {
                const int hi = std::max(1, h[i]);
                key[i] = ((p[i] % hi) + hi) % hi;
            }
            seen.insert(key);
        }
    return static_cast<int>(seen.size());
}

CylinderAtlas assemble(const HamiltonianModel& model, const std::vector<CylinderFamily>& positive,
                       const std::vector<CylinderFamily>& negative, const std::vector<HomoclinicOrbit>& skeleton,
                       const HomoclinicChain& chain, int phases) {
    auto nonempty = [](const std::vector<CylinderFamily>& f) {
        return std::any_of(f.begin(), f.end(), [](const CylinderFamily& c) { return !c.orbits.empty(); });
    };
    if (!nonempty(positive) || !nonempty(negative))
        throw Error("EmptyFamily", "the atlas needs a family on each energy side");
    CylinderAtlas atlas;
    atlas.positive = positive;
    atlas.negative = negative;
    atlas.skeleton = skeleton;
    atlas.chain = chain;
    atlas.hole_count = structural_hole_count(chain.classes, chain.h, chain.ell + 1);
    if (atlas.hole_count != chain.hole_count())
        throw Error("InconsistentCovering", "lifted lattice visits differ from (ell+1) k");

    Mesh& mesh = atlas.mesh;
    mesh.phases = phases;
    auto add_strip = [&](Mesh& m, const std::string& name, const std::vector<std::vector<Vec>>& rows,
                         const std::vector<double>& energies, bool closed) {
        const int strip = static_cast<int>(m.strip_names.size());
        m.strip_names.push_back(name);
        const int base = static_cast<int>(m.vertices.size());
        for (std::size_t i = 0; i < rows.size(); ++i)
            for (int j = 0; j < phases; ++j) m.vertices.push_back({energies[i], double(j) / phases, strip, rows[i][j]});
        for (std::size_t i = 0; i + 1 < rows.size(); ++i)
            for (int j = 0; j < phases; ++j) {
                if (j + 1 == phases && !closed) continue;
                const int jn = (j + 1) % phases;
                const int a = base + static_cast<int>(i) * phases + j, b = base + static_cast<int>(i + 1) * phases + j;
                const int c = base + static_cast<int>(i + 1) * phases + jn, d = base + static_cast<int>(i) * phases + jn;
                m.faces.push_back({a, b, c});
                m.faces.push_back({a, c, d});
            }
    };
    struct Strip {
        std::string name;
        std::vector<std::vector<Vec>> rows;
        std::vector<double> energies;
        IVec shift;
    };
    std::vector<Strip> strips;
    auto collect = [&](const CylinderFamily& fam, const std::string& name, bool partner) {
        if (fam.orbits.empty()) return;
        Strip s;
        s.name = name;
        s.shift = partner ? IVec(-fam.orbits.front().shift) : fam.orbits.front().shift;
        for (const PeriodicOrbit& o : fam.orbits) {
            OrbitSegment seg = sample_orbit(model, o);
            const double T = seg.times.back();
            std::vector<Vec> row;
            for (int j = 0; j < phases; ++j) {
                if (!partner) {
                    row.push_back(seg.at(T * j / phases));
                } else {
                    // s z(-t): z(T - t) lies one period ahead, so shift back
                    Vec z = j == 0 ? seg.at(0.0) : shift_to(seg.at(T - T * j / phases), o.shift);
                    row.push_back(reflect(z));
                }
            }
            s.rows.push_back(row);
            s.energies.push_back(o.E);
        }
        strips.push_back(std::move(s));
    };
    for (const CylinderFamily& f : positive) {
        collect(f, f.spec.name.empty() ? "positive" : f.spec.name, false);
        collect(f, (f.spec.name.empty() ? "positive" : f.spec.name) + "/s", true);
    }
    for (const CylinderFamily& f : negative) collect(f, f.spec.name.empty() ? "negative" : f.spec.name, false);
    for (const Strip& s : strips) add_strip(mesh, s.name, s.rows, s.energies, s.shift.isZero());

    atlas.lifted.phases = phases;
    for (const Strip& s : strips)
        for (int q = 0; q <= chain.ell; ++q) {
            std::vector<std::vector<Vec>> rows = s.rows;
            for (auto& row : rows)
                for (Vec& z : row) z = shift_from(z, IVec(q * s.shift));
            add_strip(atlas.lifted, s.name + "#" + std::to_string(q), rows, s.energies, s.shift.isZero());
        }
    for (Mesh* m : {&atlas.mesh, &atlas.lifted}) {
        double worst = 0.0;
        for (const auto& f : m->faces)
            for (int e = 0; e < 3; ++e)
                worst = std::max(worst, (m->vertices[f[e]].z - m->vertices[f[(e + 1) % 3]].z).norm());
        m->resolution = worst;
    }
    return atlas;
}

std::string mesh_to_json(const Mesh& mesh) {
    nlohmann::json j;
    j["phases"] = mesh.phases;
    j["resolution"] = mesh.resolution;
    j["strips"] = mesh.strip_names;
    nlohmann::json v = nlohmann::json::array();
    for (const MeshVertex& x : mesh.vertices) v.push_back({{"E", x.E}, {"phase", x.phase}, {"strip", x.strip}, {"z", vec_json(x.z)}});
    j["vertices"] = v;
    nlohmann::json f = nlohmann::json::array();
    for (const auto& t : mesh.faces) f.push_back({t[0], t[1], t[2]});
    j["faces"] = f;
    return j.dump();
}

MeshInvarianceReport mesh_invariance(const HamiltonianModel& model, const Mesh& mesh, double eps) {
    MeshInvarianceReport rep;
    rep.resolution = mesh.resolution;
    std::vector<std::vector<int>> incident(mesh.vertices.size());
    for (std::size_t f = 0; f < mesh.faces.size(); ++f)
        for (int v : mesh.faces[f]) incident[v].push_back(static_cast<int>(f));
    for (std::size_t v = 0; v < mesh.vertices.size(); ++v) {
        if (incident[v].empty()) continue;
        OrbitSegment seg = integrate(model, mesh.vertices[v].z, 0.0, eps);
        const Vec& p = seg.states.back();
        std::set<int> cand;
        for (int f : incident[v])
            for (int w : mesh.faces[f])
                for (int g : incident[w]) cand.insert(g);
        double best = std::numeric_limits<double>::infinity();
        for (int f : cand) {
            const auto& t = mesh.faces[f];
            best = std::min(best, point_triangle(p, mesh.vertices[t[0]].z, mesh.vertices[t[1]].z, mesh.vertices[t[2]].z));
        }
        rep.max_distance = std::max(rep.max_distance, best);
    }
    rep.passed = rep.max_distance < rep.resolution;
    return rep;
}

PartnerReport s_partner(const HamiltonianModel& model, const PeriodicOrbit& o, const Tolerances& tol) {
    PartnerReport rep;
    const int N = static_cast<int>(o.nodes.size());
    const int n = model.n();
    // reversed multiple shooting: s z_{j+1} flows to s z_j
    for (std::size_t l = 0; l < o.legs.size(); ++l) {
        const Leg& leg = o.legs[l];
        const double h = o.leg_time[l] / leg.subsegments;
        for (int q = 0; q < leg.subsegments; ++q) {
            const int j = leg.first_node + q;
            const int jn = (j + 1) % N;
            Vec a = shift_from(o.nodes[j], o.node_lattice[j]);
            Vec b = shift_from(o.nodes[jn], jn == 0 ? IVec(o.node_lattice[jn] + o.shift) : o.node_lattice[jn]);
            Propagation pr = propagate(model, reflect(b), h, 0.0, false, tol);
            rep.closure = std::max(rep.closure, (pr.z - reflect(a)).norm());
        }
    }
    OrbitSegment seg = sample_orbit(model, o, tol);
    const double T = seg.times.back();
    OrbitSegment rev;
    rev.n = n;
    const int m = std::max(4000, static_cast<int>(400 * T));
    // dense samples of s z(-t) on [0, T], interpolated linearly by the itinerary scan
    std::vector<double> ts;
    std::vector<Vec> zs;
    for (int k = 0; k <= m; ++k) {
        const double t = T * k / m;
        Vec z = k == 0 ? seg.at(0.0) : shift_to(seg.at(T - t), o.shift);
        ts.push_back(t);
        zs.push_back(reflect(z));
    }
    rev.times = ts;
    rev.states = zs;
    rev.dense_dim = 0;
    rep.itinerary = lattice_itinerary(rev, IVec(-o.shift), n);
    for (auto it = o.itinerary.rbegin(); it != o.itinerary.rend(); ++it) rep.expected.push_back(-*it);
    rep.passed = rep.closure < 1e-8 && cyclic_equal(rep.itinerary, rep.expected);
    return rep;
}

namespace {

std::vector<DensePiece> leg_pieces(const HamiltonianModel& model, const PeriodicOrbit& o, std::size_t l) {
    const Leg& leg = o.legs[l];
    const double h = o.leg_time[l] / leg.subsegments;
    std::vector<DensePiece> out;
    for (int q = 0; q < leg.subsegments; ++q) {
        const int j = leg.first_node + q;
        out.push_back({integrate(model, o.nodes[j], 0.0, h, {}), o.node_lattice[j], 0.0, h});
    }
    return out;
}

std::vector<DensePiece> outer_pieces(const HamiltonianModel& model, const PeriodicOrbit& o,
                                     const std::vector<HomoclinicOrbit>* lib) {
    std::vector<DensePiece> out;
    for (std::size_t l = 0; l < o.legs.size(); ++l) {
        const Leg& leg = o.legs[l];
        if (leg.kind != LegKind::Outer) continue;
        if (lib) {
            const HomoclinicOrbit& h = (*lib)[leg.homoclinic];
            out.push_back({h.outer, leg.start_lattice, 0.0, h.tau});
        } else {
            for (auto& pc : leg_pieces(model, o, l)) out.push_back(std::move(pc));
        }
    }
    return out;
}

}  // namespace

double hausdorff(const std::vector<std::vector<Vec>>& a, const std::vector<std::vector<Vec>>& b) {
    return std::max(directed(a, b), directed(b, a));
}

HausdorffReport hausdorff_convergence(const HamiltonianModel& model, const CylinderFamily& family,
                                      const std::vector<HomoclinicOrbit>& lib, int samples_per_leg) {
    HausdorffReport rep;
    const int n = model.n();
    for (const PeriodicOrbit& o : family.orbits) {
        std::vector<DensePiece> orbit = outer_pieces(model, o, nullptr), skeleton = outer_pieces(model, o, &lib);
        rep.records.push_back({o.E, hausdorff_dense(orbit, skeleton, 2 * n, samples_per_leg),
                               hausdorff_dense(orbit, skeleton, n, samples_per_leg)});
    }
    std::sort(rep.records.begin(), rep.records.end(),
              [](const auto& a, const auto& b) { return std::abs(a.E) < std::abs(b.E); });
    std::vector<double> x, y, yx, es;
    for (const auto& r : rep.records) {
        x.push_back(std::log(std::abs(r.E)));
        y.push_back(std::log(r.d_phase));
        yx.push_back(std::log(r.d_x));
        es.push_back(r.E);
    }
    rep.fit = fit_line("hausdorff", "loglog", x, y, es);
    rep.fit_x = fit_line("hausdorff_x", "loglog", x, yx, es);
    // adjacent orbits over the last decade toward E = 0
    const double cap = std::abs(rep.records.front().E) * 10.0;
    rep.adjacent_decreasing = true;
    double prev = 0.0;
    std::vector<const PeriodicOrbit*> near;
    for (const PeriodicOrbit& o : family.orbits)
        if (std::abs(o.E) <= cap) near.push_back(&o);
    std::sort(near.begin(), near.end(), [](auto a, auto b) { return std::abs(a->E) > std::abs(b->E); });
    for (std::size_t i = 0; i + 1 < near.size(); ++i) {
        const double d = hausdorff_dense(outer_pieces(model, *near[i], nullptr), outer_pieces(model, *near[i + 1], nullptr),
                                         2 * n, samples_per_leg);
        if (i > 0 && d > prev) rep.adjacent_decreasing = false;
        prev = d;
    }
    return rep;
}

std::vector<TransitRecord> inner_transit_sweep(const HamiltonianModel& model, const LocalChart& chart, double r,
                                               const std::vector<double>& energies, SectionSide entry) {
    std::vector<TransitRecord> out;
    MapOptions mo;
    mo.r = r;
    mo.jacobian = false;
    const int n = chart.n;
    for (double E : energies) {
        Vec w = point_on_section(chart, model, entry, r, Vec::Zero(2 * n - 2), E);
        SectionMapResult res = inner_map(chart, model, chart.from_local(w), entry, E > 0 ? 1 : -1, mo);
        out.push_back({E, res.time});
    }
    return out;
}

ScalingFit transit_time_fit(const std::vector<TransitRecord>& records) {
    std::vector<double> x, y, es;
    for (const auto& r : records) {
        x.push_back(std::log(1.0 / std::abs(r.E)));
        y.push_back(r.time);
        es.push_back(r.E);
    }
    return fit_line("transit_time", "semilog", x, y, es);
}

FloquetFits floquet_scaling_fit(const CylinderFamily& family, const Vec& lambda, double eta_decades) {
    FloquetFits out;
    if (family.orbits.empty()) throw Error("InsufficientRange", "empty family");
    const int n = static_cast<int>(lambda.size());
    int inner = 0;
    for (const Leg& l : family.orbits.front().legs) inner += l.kind == LegKind::Inner;
    out.passages = std::max(1, inner);
    std::vector<std::vector<double>> ys(n - 1);
    std::vector<double> x, es;
    out.mu_inf.assign(n - 1, std::numeric_limits<double>::infinity());
    out.mu_sup.assign(n - 1, 0.0);
    for (const PeriodicOrbit& o : family.orbits) {
        const FloquetReport& f = o.floquet;
        if (static_cast<int>(f.log_abs.size()) != 2 * n - 2) throw Error("DefectiveSpectrum", "missing Floquet data");
        x.push_back(std::log(1.0 / std::abs(o.E)));
        es.push_back(o.E);
        for (int i = 2; i <= n; ++i) {
            // expanding multipliers sorted ascending correspond to lambda_2 .. lambda_n
            const double ls = f.log_abs[n - i] / out.passages;
            ys[i - 2].push_back(ls);
            const double mu = std::exp(ls - lambda[i - 1] / lambda[0] * std::log(1.0 / std::abs(o.E)));
            out.mu_inf[i - 2] = std::min(out.mu_inf[i - 2], mu);
            out.mu_sup[i - 2] = std::max(out.mu_sup[i - 2], mu);
        }
        out.sigma1_max_deviation = std::max(out.sigma1_max_deviation, std::abs(f.sigma1_analog - 1.0));
        out.max_pairing_defect = std::max(out.max_pairing_defect, f.pairing_defect);
        out.eta.push_back({std::abs(o.E), f.eta_ratio});
    }
    for (int i = 2; i <= n; ++i) {
        out.fits.push_back(fit_line("log_sigma_" + std::to_string(i), "loglog", x, ys[i - 2], es, 5.0));
        out.expected.push_back(lambda[i - 1] / lambda[0]);
    }
    std::sort(out.eta.begin(), out.eta.end());
    if (!out.eta.empty()) {
        out.eta_at_smallest = out.eta.front().second;
        const double cap = out.eta.front().first * std::pow(10.0, eta_decades) * (1 + 1e-9);
        out.eta_monotone_last_decades = true;
        for (std::size_t k = 0; k + 1 < out.eta.size() && out.eta[k + 1].first <= cap; ++k)
            if (!(out.eta[k + 1].second > out.eta[k].second)) out.eta_monotone_last_decades = false;
    }
    return out;
}

C1JoinReport c1_join_test(const HamiltonianModel& model, const LocalChart& chart, const std::vector<HomoclinicOrbit>& lib,
                          const ShadowingSpec& pos, const ShadowingSpec& neg, const ContinuationOptions& opt,
                          double e_join, double tol_join) {
    if (pos.order.empty() || neg.order.empty() || pos.order.front() != neg.order.front())
        throw Error("ConfigInvalid", "both families must start from the same homoclinic");
    C1JoinReport rep;
    rep.e_join = e_join;
    const int n = chart.n;
    ContinuationOptions co = opt;
    co.floquet = false;
    auto side = [&](const ShadowingSpec& spec, double sgn, Vec& deriv, Vec& tangent_local) {
        std::vector<Vec> w;
        std::vector<PeriodicOrbit> orbits;
        for (double m : {1.0, 2.0, 4.0}) {
            try {
                orbits.push_back(solve_periodic(model, chart, lib, spec, sgn * m * e_join, co));
            } catch (const Error& e) {
                throw Error("FamiliesTooShort", std::string("no orbit near E = 0: ") + e.what());
            }
            w.push_back(orbits.back().anchors_local.front());
        }
        const double h = sgn * e_join;
        Vec d1 = (w[1] - w[0]) / h, d2 = (w[2] - w[1]) / (2 * h);
        deriv = 2.0 * d1 - d2;
        const PeriodicOrbit& o = orbits.front();
        tangent_local = chart.to_local_jacobian(o.nodes.front()) * o.tangent.front();
        Vec g = chart.from_local_jacobian(w[0]).transpose() * model.gradH(o.nodes.front());
        return g.dot(deriv);
    };
    rep.dH_plus = side(pos, 1.0, rep.d_plus, rep.tangent_plus);
    rep.dH_minus = side(neg, -1.0, rep.d_minus, rep.tangent_minus);
    Vec up = rep.d_plus.segment(1, n - 1), um = rep.d_minus.segment(1, n - 1);
    rep.u_hat_rel_diff = n > 1 ? (up - um).norm() / std::max(up.norm(), um.norm()) : 0.0;
    rep.v_hat_plus = n > 1 ? rep.d_plus.segment(n + 1, n - 1).norm() : 0.0;
    rep.v_hat_minus = n > 1 ? rep.d_minus.segment(n + 1, n - 1).norm() : 0.0;
    const HomoclinicOrbit& h = lib[pos.order.front()];
    rep.pi1_scaled = chart.lambda[0] * opt.r * 0.5 * (rep.d_plus[n] + rep.d_minus[n]);
    if (n > 1) {
        MapOptions mo;
        mo.r = opt.r;
        mo.tol = opt.tol;
        SectionMapResult res = outer_map(chart, model, h.exit_point, h, mo);
        const Mat& D = res.local_jacobian;
        Mat A11 = D.block(1, 1, n - 1, n - 1);
        Vec A13 = D.block(1, n, n - 1, 1);
        rep.u_hat_predicted = -A11.partialPivLu().solve(A13) * (0.5 * (rep.d_plus[n] + rep.d_minus[n]));
        rep.lemma_rel_error = (rep.u_hat_predicted - 0.5 * (up + um)).norm() / std::max(1e-300, rep.u_hat_predicted.norm());
    }
    rep.passed = rep.u_hat_rel_diff < tol_join && rep.v_hat_plus < 1e-3 && rep.v_hat_minus < 1e-3 &&
                 std::abs(rep.dH_plus - 1.0) < 1e-4 && std::abs(rep.dH_minus - 1.0) < 1e-4;
    return rep;
}

VertexReport vertex_differentiability_test(const HamiltonianModel& model, const LocalChart& chart,
                                           const std::vector<const CylinderFamily*>& families, double e_cap) {
    VertexReport rep;
    const int n = chart.n;
    const double nu = chart.lambda.size() > 1 ? chart.lambda[1] / chart.lambda[0] - 1.0 : 1.0;
    rep.threshold = 1.0 + nu / 2.0;
    if (n == 1) {
        rep.exact_zero = true;
        rep.leaves_tangent = true;
        rep.passed = true;
        return rep;
    }
    // per leaf: (log a, b) samples
    std::map<std::pair<int, int>, std::vector<std::pair<double, double>>> leaves;
    for (std::size_t f = 0; f < families.size(); ++f)
        for (const PeriodicOrbit& o : families[f]->orbits) {
            if (std::abs(o.E) > e_cap) continue;
            int inner_index = 0;
            for (std::size_t l = 0; l < o.legs.size(); ++l) {
                if (o.legs[l].kind != LegKind::Inner) continue;
                for (const Vec& z : leg_samples(model, o, l, 600, {})) {
                    Vec w = chart.to_local(shift_to(z, o.legs[l].start_lattice));
                    const double a = std::hypot(w[0], w[n]);
                    if (a >= chart.r_prime || a <= 0) continue;
                    Vec hat(2 * n - 2);
                    hat << w.segment(1, n - 1), w.segment(n + 1, n - 1);
                    leaves[{static_cast<int>(f), inner_index}].push_back({a, hat.norm()});
                }
                ++inner_index;
            }
        }
    std::vector<std::pair<double, double>> all;
    for (auto& [k, v] : leaves) all.insert(all.end(), v.begin(), v.end());
    if (all.size() < 20) throw Error("TooFewPoints", "fewer than 20 points inside the chart ball");
    if (std::all_of(all.begin(), all.end(), [](auto& p) { return p.second == 0.0; })) {
        rep.exact_zero = true;
        rep.leaves_tangent = true;
        rep.passed = true;
        return rep;
    }
    const int bins = 24;
    auto envelope = [&](const std::vector<std::pair<double, double>>& pts, double lo, double hi) {
        std::vector<double> mx(bins, 0.0);
        for (auto& [a, b] : pts) {
            int k = static_cast<int>((std::log(a) - lo) / (hi - lo) * bins);
            if (k < 0 || k >= bins) continue;
            mx[k] = std::max(mx[k], b);
        }
        std::vector<double> x, y;
        for (int k = 0; k < bins; ++k)
            if (mx[k] > 0) {
                x.push_back(lo + (k + 0.5) * (hi - lo) / bins);
                y.push_back(std::log(mx[k]));
            }
        return std::make_pair(x, y);
    };
    double amin = std::numeric_limits<double>::infinity();
    for (auto& p : all) amin = std::min(amin, p.first);
    const double lo = std::log(amin), hi = std::log(chart.r_prime);
    auto [x, y] = envelope(all, lo, hi);
    rep.fit = fit_line("vertex", "loglog", x, y, {}, 0.0);
    // leaf tilts at the smallest radius reached by every leaf
    double common = 0.0;
    for (auto& [k, v] : leaves) {
        double m = std::numeric_limits<double>::infinity();
        for (auto& p : v) m = std::min(m, p.first);
        common = std::max(common, m);
    }
    rep.leaf_radius = common * 2.0;
    double tmin = std::numeric_limits<double>::infinity(), tmax = 0.0;
    for (auto& [k, v] : leaves) {
        auto [lx, ly] = envelope(v, lo, hi);
        double e = 0.0;
        if (lx.size() >= 3) e = fit_line("leaf", "loglog", lx, ly, {}, 0.0).slope;
        rep.leaf_exponents.push_back(e);
        double tilt = 0.0;
        for (auto& [a, b] : v)
            if (a <= rep.leaf_radius) tilt = std::max(tilt, b / a);
        rep.leaf_tilts.push_back(tilt);
        tmin = std::min(tmin, tilt);
        tmax = std::max(tmax, tilt);
    }
    rep.leaf_spread = tmax - tmin;
    rep.leaves_tangent = std::all_of(rep.leaf_exponents.begin(), rep.leaf_exponents.end(), [](double e) { return e > 1.0; });
    rep.passed = rep.fit.slope >= rep.threshold && rep.leaves_tangent;
    return rep;
}

NormalHyperbolicityReport normal_hyperbolicity_test(const HamiltonianModel& model, const LocalChart& chart,
                                                    const HomoclinicOrbit& homoclinic, const PeriodicOrbit& orbit,
                                                    double cr, unsigned seed) {
    NormalHyperbolicityReport rep;
    const int d = 2 * model.n();
    std::size_t inner = 0;
    while (inner < orbit.legs.size() && orbit.legs[inner].kind != LegKind::Inner) ++inner;
    if (inner == orbit.legs.size()) throw Error("ConfigInvalid", "orbit has no inner leg");
    const double W = 0.45 * orbit.leg_time[inner];
    std::mt19937 gen(seed);
    std::normal_distribution<double> nd;
    Vec generic(d);
    for (int i = 0; i < d; ++i) generic[i] = nd(gen);
    generic.normalize();

    auto rate = [&](const VariationalSegment& run, const Vec& v, bool inverse) {
        std::vector<double> x, y;
        const Mat J = symplectic_j(model.n());
        for (int k = 10; k <= 60; ++k) {
            const double t = W * k / 60;
            Mat P = run.at(t);
            Vec img = inverse ? Vec(-J * P.transpose() * J * v) : Vec(P * v);
            x.push_back(t);
            y.push_back(std::log(img.norm()));
        }
        ScalingFit f = fit_line("rate", "semilog", x, y, {}, 0.0);
        return std::make_pair(f.slope, f.slope_stderr);
    };
    auto analyze = [&](const std::string& where, const Vec& z0, const std::vector<std::pair<std::string, Vec>>& tangents,
                       double& gap, double& sigma) {
        VariationalSegment run = integrate_variational(model, z0, 0.0, W);
        double tmax = 0.0, tse = 0.0;
        for (const auto& [name, v] : tangents) {
            auto [r, se] = rate(run, v, false);
            rep.tangent.push_back({where, name, r, se});
            if (std::abs(r) >= tmax) {
                tmax = std::abs(r);
                tse = se;
            }
        }
        auto [rf, sf] = rate(run, generic, false);
        auto [rb, sb] = rate(run, generic, true);
        rep.normal.push_back({where, "expanding", rf, sf});
        rep.normal.push_back({where, "contracting", rb, sb});
        const double nmin = std::min(std::abs(rf), std::abs(rb));
        const double nse = std::abs(rf) < std::abs(rb) ? sf : sb;
        gap = nmin - tmax;
        sigma = std::hypot(nse, tse);
        return std::make_pair(nmin, tmax);
    };
    Vec zh = shift_to(homoclinic.entry_point, homoclinic.klass);
    auto [nh, th] = analyze("homoclinic", zh, {{"X_H", model.field(zh)}}, rep.gap_homoclinic, rep.sigma_homoclinic);
    const int j = orbit.legs[inner].first_node;
    Vec zp = orbit.nodes[j];
    std::vector<std::pair<std::string, Vec>> tp = {{"X_H", model.field(zp)}};
    if (static_cast<int>(orbit.tangent.size()) > j) tp.push_back({"family", orbit.tangent[j]});
    auto [np, tpm] = analyze("periodic", zp, tp, rep.gap_periodic, rep.sigma_periodic);
    const double l1 = chart.lambda[0], l2 = chart.lambda.size() > 1 ? chart.lambda[1] : chart.lambda[0];
    rep.tangent_bounded = th < l1 + cr && tpm < l1 + cr && nh >= l2 - cr && np >= l2 - cr;
    rep.continuity_rel = std::abs(nh - np) / std::max(nh, np);
    rep.resolved = rep.gap_homoclinic > 3 * rep.sigma_homoclinic && rep.gap_periodic > 3 * rep.sigma_periodic &&
                   rep.gap_homoclinic > 0 && rep.gap_periodic > 0;
    return rep;
}

std::string fit_to_json(const ScalingFit& f) {
    nlohmann::json j{{"name", f.name},           {"transform", f.transform},   {"slope", f.slope},
                     {"intercept", f.intercept}, {"slope_stderr", f.slope_stderr}, {"residual_sup", f.residual_sup},
                     {"residual_band", f.residual_band}, {"e_min", f.e_min},   {"e_max", f.e_max},
                     {"points", f.points}};
    return j.dump();
}

}  // namespace nhic
