#include "nhic/continuation.hpp"

#include "json.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <boost/math/tools/toms748_solve.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <random>

namespace nhic {

namespace {

SectionSide exit_side(int sign) { return sign > 0 ? SectionSide::UPlus : SectionSide::UMinus; }
SectionSide entry_side(int sign) { return sign > 0 ? SectionSide::VPlus : SectionSide::VMinus; }

Vec lift(const Vec& z, const IVec& p) { return shift_from(z, p); }

// States of the reduced flow on a straightened axis after each of the given durations.
std::vector<Vec> axis_states(const HamiltonianModel& model, const LocalChart& chart, const Vec& start,
                             bool unstable, const std::vector<double>& durations) {
    const int n = chart.n;
    auto rhs = [&](double, const double* y, double* f) {
        Vec w = Vec::Zero(2 * n);
        if (unstable) w.head(n) = Eigen::Map<const Vec>(y, n);
        else w.tail(n) = Eigen::Map<const Vec>(y, n);
        Vec lf = chart.local_field(model, w);
        for (int i = 0; i < n; ++i) f[i] = unstable ? -lf[i] : lf[n + i];
    };
    Tolerances tol;
    tol.atol = 1e-300;
    tol.rtol = 1e-13;
    std::vector<Vec> out(durations.size(), start);
    const double T = durations.empty() ? 0.0 : *std::max_element(durations.begin(), durations.end());
    if (T <= 0.0) return out;
    Dop853 s(n, rhs, tol);
    s.start(0.0, start.data(), T);
    std::vector<std::size_t> order(durations.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return durations[a] < durations[b]; });
    std::size_t k = 0;
    while (k < order.size() && durations[order[k]] <= 0.0) ++k;
    Vec y(n);
    while (k < order.size() && s.step()) {
        while (k < order.size() && durations[order[k]] <= s.t()) {
            s.dense(durations[order[k]], y.data());
            out[order[k]] = y;
            ++k;
        }
    }
    return out;
}

// Lifted nodes of an inner leg: the stable part flows forward from v_in, the unstable part
// flows backward from u_out, meeting after t_z.
std::vector<Vec> inner_profile(const HamiltonianModel& model, const LocalChart& chart, const Vec& v_in,
                               const Vec& u_out, double t_z, int m, const IVec& p) {
    const int n = chart.n;
    std::vector<double> fwd(m), bwd(m);
    for (int k = 0; k < m; ++k) {
        fwd[k] = t_z * k / m;
        bwd[k] = t_z - fwd[k];
    }
    auto vs = axis_states(model, chart, v_in, false, fwd);
    auto us = axis_states(model, chart, u_out, true, bwd);
    std::vector<Vec> out;
    for (int k = 0; k < m; ++k) {
        Vec w(2 * n);
        w << us[k], vs[k];
        out.push_back(lift(chart.from_local(w), p));
    }
    return out;
}

double linear_transit(const LocalChart& chart, double r, double E) {
    return std::log(chart.lambda[0] * r * r / std::abs(E)) / chart.lambda[0];
}

// Transit time of the linearized inner flow joining v_in to u_out at energy E:
// sum_i lambda_i u_i v_i exp(-lambda_i t) = E, last root on a fine grid.
double inner_transit(const LocalChart& chart, const Vec& u_out, const Vec& v_in, double E, double fallback) {
    auto f = [&](double t) {
        double s = 0.0;
        for (int i = 0; i < chart.n; ++i) s += chart.lambda[i] * u_out[i] * v_in[i] * std::exp(-chart.lambda[i] * t);
        return s - E;
    };
    const double t_hi = 4.0 * fallback + 10.0;
    const int m = 4000;
    double found = -1.0;
    double prev = f(0.0);
    for (int k = 1; k <= m; ++k) {
        const double t = t_hi * k / m;
        const double cur = f(t);
        if ((prev > 0) != (cur > 0)) {
            double a = t_hi * (k - 1) / m, b = t;
            double fa = prev, fb = cur;
            boost::uintmax_t it = 100;
            auto rt = boost::math::tools::toms748_solve(
                f, a, b, fa, fb, [](double x, double y) { return std::abs(x - y) < 1e-14; }, it);
            found = 0.5 * (rt.first + rt.second);
        }
        prev = cur;
    }
    return found > 0.0 ? found : fallback;
}

int subsegments_for(double t, double dt) { return std::max(1, static_cast<int>(std::ceil(t / dt - 1e-9))); }

struct LegGuess {
    std::vector<Vec> lifted;
    double time = 0.0;
};

PeriodicOrbit assemble(const ShadowingSpec& spec, std::vector<Leg> legs, const std::vector<LegGuess>& guesses,
                       double E, const IVec& shift) {
    PeriodicOrbit o;
    o.E = E;
    o.spec = spec;
    o.shift = shift;
    for (std::size_t l = 0; l < legs.size(); ++l) {
        legs[l].first_node = static_cast<int>(o.nodes.size());
        legs[l].subsegments = static_cast<int>(guesses[l].lifted.size());
        o.leg_time.push_back(guesses[l].time);
        for (const Vec& z : guesses[l].lifted) {
            IVec p = nearest_lattice(z, static_cast<int>(z.size()) / 2);
            o.node_lattice.push_back(p);
            o.nodes.push_back(shift_to(z, p));
        }
    }
    o.legs = std::move(legs);
    o.T = std::accumulate(o.leg_time.begin(), o.leg_time.end(), 0.0);
    return o;
}

std::vector<IVec> expected_increments(const std::vector<HomoclinicOrbit>& lib, const ShadowingSpec& spec) {
    std::vector<IVec> out;
    for (int i : spec.order) out.push_back(lib[i].klass);
    return out;
}

std::string fmt_g(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", x);
    return buf;
}

nlohmann::json vec_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }
nlohmann::json ivec_json(const IVec& v) { return std::vector<int>(v.data(), v.data() + v.size()); }

}  // namespace

bool cyclic_equal(const std::vector<IVec>& a, const std::vector<IVec>& b) {
    if (a.size() != b.size()) return false;
    if (a.empty()) return true;
    for (std::size_t s = 0; s < a.size(); ++s) {
        bool ok = true;
        for (std::size_t i = 0; i < a.size() && ok; ++i) ok = a[(i + s) % a.size()] == b[i];
        if (ok) return true;
    }
    return false;
}

Vec PeriodicOrbit::start_point() const { return shift_from(nodes.front(), node_lattice.front()); }

std::vector<Leg> build_legs(const std::vector<HomoclinicOrbit>& lib, const ShadowingSpec& spec) {
    if (spec.order.empty()) throw Error("ConfigInvalid", "empty shadowing order");
    if (spec.energy_sign == 0) throw Error("ConfigInvalid", "energy sign must be +1 or -1");
    const int n = static_cast<int>(lib.at(spec.order.front()).klass.size());
    std::vector<Leg> legs;
    IVec p = IVec::Zero(n);
    const std::size_t k = spec.order.size();
    for (std::size_t j = 0; j < k; ++j) {
        const HomoclinicOrbit& h = lib.at(spec.order[j]);
        const HomoclinicOrbit& next = lib.at(spec.order[(j + 1) % k]);
        Leg outer;
        outer.kind = LegKind::Outer;
        outer.homoclinic = spec.order[j];
        outer.start_side = exit_side(h.exit_sign);
        outer.start_lattice = p;
        legs.push_back(outer);
        p += h.klass;
        Leg inner;
        inner.kind = LegKind::Inner;
        inner.homoclinic = spec.order[j];
        inner.start_side = entry_side(h.entry_sign);
        inner.start_lattice = p;
        legs.push_back(inner);
        const int inner_exit = spec.energy_sign > 0 ? h.entry_sign : -h.entry_sign;
        if (inner_exit != next.exit_sign)
            throw Error("ConfigInvalid", "chain " + h.label + " -> " + next.label +
                                             " is incompatible with the energy sign");
    }
    return legs;
}

PeriodicOrbit homoclinic_guess(const HamiltonianModel& model, const LocalChart& chart,
                               const std::vector<HomoclinicOrbit>& lib, const ShadowingSpec& spec, double E,
                               const ContinuationOptions& opt) {
    if (E == 0.0 || std::abs(E) > opt.e_max || (E > 0) != (spec.energy_sign > 0))
        throw Error("EnergyOutOfRange", "energy incompatible with the shadowing spec");
    const int n = chart.n;
    const double r = opt.r;
    std::vector<Leg> legs = build_legs(lib, spec);
    const double t_z = linear_transit(chart, r, E);
    if (t_z <= 0.0) throw Error("EnergyOutOfRange", "energy too large for the section radius");
    std::vector<LegGuess> g;
    IVec p = IVec::Zero(n);
    const std::size_t k = spec.order.size();
    for (std::size_t j = 0; j < k; ++j) {
        const HomoclinicOrbit& h = lib[spec.order[j]];
        const HomoclinicOrbit& next = lib[spec.order[(j + 1) % k]];
        LegGuess outer;
        outer.time = h.tau;
        const int m = subsegments_for(h.tau, opt.subsegment_time);
        for (int s = 0; s < m; ++s) outer.lifted.push_back(lift(h.outer.at(h.tau * s / m), p));
        g.push_back(outer);
        p += h.klass;
        LegGuess inner;
        const Vec v_in = h.entry_local.tail(n), u_out = next.exit_local.head(n);
        inner.time = inner_transit(chart, u_out, v_in, E, t_z);
        const int mi = subsegments_for(inner.time, opt.subsegment_time);
        inner.lifted = inner_profile(model, chart, v_in, u_out, inner.time, mi, p);
        g.push_back(inner);
    }
    return assemble(spec, legs, g, E, p);
}

namespace {

struct System {
    Vec F;
    Mat J;
    std::vector<Mat> psi;
};

Vec pack(const PeriodicOrbit& o) {
    const int d = static_cast<int>(o.nodes.front().size());
    const int N = static_cast<int>(o.nodes.size());
    const int L = static_cast<int>(o.legs.size());
    Vec x(N * d + L + 1);
    for (int j = 0; j < N; ++j) x.segment(j * d, d) = o.nodes[j];
    for (int l = 0; l < L; ++l) x[N * d + l] = o.leg_time[l];
    x[N * d + L] = o.gamma;
    return x;
}

void unpack(const Vec& x, PeriodicOrbit& o) {
    const int d = static_cast<int>(o.nodes.front().size());
    const int N = static_cast<int>(o.nodes.size());
    const int L = static_cast<int>(o.legs.size());
    for (int j = 0; j < N; ++j) o.nodes[j] = x.segment(j * d, d);
    for (int l = 0; l < L; ++l) o.leg_time[l] = x[N * d + l];
    o.gamma = x[N * d + L];
    o.T = std::accumulate(o.leg_time.begin(), o.leg_time.end(), 0.0);
}

System evaluate_system(const HamiltonianModel& model, const LocalChart& chart, const PeriodicOrbit& o,
                       double r, bool jacobian, const Tolerances& tol) {
    const int d = static_cast<int>(o.nodes.front().size());
    const int n = d / 2;
    const int N = static_cast<int>(o.nodes.size());
    const int L = static_cast<int>(o.legs.size());
    const int M = N * d + L + 1;
    System s;
    s.F = Vec::Zero(M);
    if (jacobian) s.J = Mat::Zero(M, M);
    int row = 0;
    for (int l = 0; l < L; ++l) {
        const Leg& leg = o.legs[l];
        const int m = leg.subsegments;
        const double h = o.leg_time[l] / m;
        if (!(h > 0.0)) throw Error("NewtonDiverged", "nonpositive leg time");
        for (int q = 0; q < m; ++q) {
            const int j = leg.first_node + q;
            const int jn = (j + 1) % N;
            IVec pn = o.node_lattice[jn];
            if (jn == 0) pn += o.shift;
            IVec dp = pn - o.node_lattice[j];
            Propagation pr = propagate(model, o.nodes[j], h, o.gamma, jacobian, tol);
            Vec target = o.nodes[jn];
            target.head(n) += dp.cast<double>();
            s.F.segment(row, d) = pr.z - target;
            if (jacobian) {
                s.J.block(row, j * d, d, d) += pr.Psi;
                s.J.block(row, jn * d, d, d) -= Mat::Identity(d, d);
                s.J.block(row, N * d + l, d, 1) = pr.field_end / m;
                s.J.block(row, N * d + L, d, 1) = pr.dgamma;
                s.psi.push_back(pr.Psi);
            }
            row += d;
        }
    }
    for (int l = 0; l < L; ++l) {
        const Leg& leg = o.legs[l];
        const Vec& z = o.nodes[leg.first_node];
        Vec w = chart.to_local(z);
        s.F[row] = section_value(leg.start_side, w, r);
        if (jacobian)
            s.J.block(row, leg.first_node * d, 1, d) =
                (chart.to_local_jacobian(z).transpose() * section_gradient_local(leg.start_side, n)).transpose();
        ++row;
    }
    s.F[row] = model.H(o.nodes[0]) - o.E;
    if (jacobian) s.J.block(row, 0, 1, d) = model.gradH(o.nodes[0]).transpose();
    return s;
}

double shadow_distance(const std::vector<HomoclinicOrbit>& lib, const PeriodicOrbit& o) {
    double worst = 0.0;
    for (const Leg& leg : o.legs) {
        if (leg.kind != LegKind::Outer) continue;
        const HomoclinicOrbit& h = lib[leg.homoclinic];
        for (int q = 0; q < leg.subsegments; ++q) {
            const int j = leg.first_node + q;
            Vec z = shift_to(shift_from(o.nodes[j], o.node_lattice[j]), leg.start_lattice);
            double best = std::numeric_limits<double>::infinity();
            for (const Vec& s : h.states) best = std::min(best, (s - z).norm());
            worst = std::max(worst, best);
        }
    }
    return worst;
}

}  // namespace

PeriodicOrbit refine_periodic(const HamiltonianModel& model, const LocalChart& chart,
                              const std::vector<HomoclinicOrbit>& lib, PeriodicOrbit o,
                              const ContinuationOptions& opt) {
    if (o.E == 0.0 || std::abs(o.E) > opt.e_max) throw Error("EnergyOutOfRange", "energy outside (0, E_max]");
    Vec x = pack(o);
    System sys = evaluate_system(model, chart, o, opt.r, true, opt.tol);
    double res = sys.F.lpNorm<Eigen::Infinity>();
    int it = 0;
    bool polished = false;
    for (; it < opt.max_iterations; ++it) {
        if (res < opt.newton_tol) {
            if (polished || !opt.polish) break;
            polished = true;
        }
        Vec dx = sys.J.partialPivLu().solve(-sys.F);
        if (!dx.allFinite()) throw Error("NewtonDiverged", "singular shooting Jacobian");
        double lam = 1.0;
        bool accepted = false;
        PeriodicOrbit trial = o;
        for (int ls = 0; ls < 12; ++ls, lam *= 0.5) {
            try {
                unpack(x + lam * dx, trial);
                System t = evaluate_system(model, chart, trial, opt.r, false, opt.tol);
                double rt = t.F.lpNorm<Eigen::Infinity>();
                if (std::isfinite(rt) && (rt < res || (polished && rt <= 4 * opt.newton_tol))) {
                    accepted = true;
                    break;
                }
            } catch (const Error&) {
            }
        }
        if (!accepted) {
            if (polished) break;
            throw Error("NewtonDiverged", "line search failed at residual " + fmt_g(res));
        }
        x += lam * dx;
        o = trial;
        sys = evaluate_system(model, chart, o, opt.r, true, opt.tol);
        res = sys.F.lpNorm<Eigen::Infinity>();
    }
    if (!(res < opt.newton_tol))
        throw Error("NewtonDiverged", "no convergence, residual " + fmt_g(res));
    o.iterations = it;
    o.residual = res;
    o.segment_psi = sys.psi;
    {
        Vec rhs = Vec::Zero(sys.F.size());
        rhs[rhs.size() - 1] = 1.0;
        Vec dx = sys.J.partialPivLu().solve(rhs);
        const int dd = static_cast<int>(o.nodes.front().size());
        const int N = static_cast<int>(o.nodes.size());
        o.tangent.clear();
        for (int j = 0; j < N; ++j) o.tangent.push_back(dx.segment(j * dd, dd));
        o.leg_time_dE.assign(dx.data() + N * dd, dx.data() + N * dd + o.legs.size());
    }
    const int d = static_cast<int>(o.nodes.front().size());
    o.closure = sys.F.segment((static_cast<int>(o.nodes.size()) - 1) * d, d).norm();
    o.monodromy = Mat::Identity(d, d);
    for (const Mat& P : o.segment_psi) o.monodromy = P * o.monodromy;
    o.anchors_local.clear();
    for (const Leg& leg : o.legs) o.anchors_local.push_back(chart.to_local(o.nodes[leg.first_node]));
    o.energy_error = 0.0;
    for (const Vec& z : o.nodes) o.energy_error = std::max(o.energy_error, std::abs(model.H(z) - o.E));
    o.shadow_distance = shadow_distance(lib, o);
    if (o.shadow_distance > opt.tube_radius)
        throw Error("WrongShadowingOrder", "outer leg left the homoclinic tube");
    if (opt.check_itinerary) {
        o.itinerary = itinerary(model, chart, o, opt.tol);
        if (!cyclic_equal(o.itinerary, expected_increments(lib, o.spec)))
            throw Error("WrongShadowingOrder", "section itinerary differs from the prescribed order");
    }
    if (opt.floquet) o.floquet = floquet_analysis(model, chart, o);
    return o;
}

PeriodicOrbit solve_periodic(const HamiltonianModel& model, const LocalChart& chart,
                             const std::vector<HomoclinicOrbit>& lib, const ShadowingSpec& spec, double E,
                             const ContinuationOptions& opt) {
    return refine_periodic(model, chart, lib, homoclinic_guess(model, chart, lib, spec, E, opt), opt);
}

PeriodicOrbit predict(const HamiltonianModel& model, const LocalChart& chart,
                      const std::vector<HomoclinicOrbit>&, const PeriodicOrbit& last,
                      const PeriodicOrbit* before, double E, const ContinuationOptions& opt) {
    if (E == 0.0 || std::abs(E) > opt.e_max || (E > 0) != (last.E > 0))
        throw Error("EnergyOutOfRange", "energy incompatible with the family");
    const int n = chart.n;
    const std::size_t L = last.legs.size();
    std::vector<Vec> anchors = last.anchors_local;
    if (before && before->legs.size() == L && before->E != last.E) {
        const double s = (E - last.E) / (last.E - before->E);
        for (std::size_t l = 0; l < L; ++l) anchors[l] += s * (last.anchors_local[l] - before->anchors_local[l]);
    }
    std::vector<LegGuess> g(L);
    for (std::size_t l = 0; l < L; ++l) {
        const Leg& leg = last.legs[l];
        if (leg.kind == LegKind::Outer) {
            g[l].time = last.leg_time[l];
            for (int q = 0; q < leg.subsegments; ++q) {
                const int j = leg.first_node + q;
                g[l].lifted.push_back(shift_from(last.nodes[j], last.node_lattice[j]));
            }
            g[l].lifted.front() = lift(chart.from_local(anchors[l]), leg.start_lattice);
        } else {
            const Vec& next = anchors[(l + 1) % L];
            const double t_lin = last.leg_time[l] + std::log(std::abs(last.E / E)) / chart.lambda[0];
            const double t_z = inner_transit(chart, next.head(n), anchors[l].tail(n), E, t_lin);
            if (t_z <= 0.0) throw Error("EnergyOutOfRange", "predicted transit time is not positive");
            g[l].time = t_z;
            g[l].lifted = inner_profile(model, chart, anchors[l].tail(n), next.head(n), t_z,
                                        subsegments_for(t_z, opt.subsegment_time), leg.start_lattice);
        }
    }
    return assemble(last.spec, last.legs, g, E, last.shift);
}

std::vector<double> energy_grid(double E0, double E_min, double ratio) {
    if (!(E0 > 0) || !(E_min > 0) || !(ratio > 0 && ratio < 1) || E0 < E_min)
        throw Error("ConfigInvalid", "energy grid needs E0 >= E_min > 0 and ratio in (0,1)");
    std::vector<double> out;
    for (double e = E0; e >= E_min * (1 - 1e-9); e *= ratio) out.push_back(e);
    return out;
}

CylinderFamily continue_family(const HamiltonianModel& model, const LocalChart& chart,
                               const std::vector<HomoclinicOrbit>& lib, const ShadowingSpec& spec,
                               const std::vector<double>& energies, const ContinuationOptions& opt) {
    CylinderFamily fam;
    fam.spec = spec;
    std::vector<PeriodicOrbit> path;
    for (double target : energies) {
        const double E = spec.energy_sign > 0 ? std::abs(target) : -std::abs(target);
        if (path.empty()) {
            path.push_back(solve_periodic(model, chart, lib, spec, E, opt));
            fam.orbits.push_back(path.back());
            fam.log.push_back("solved E=" + fmt_g(E));
            continue;
        }
        double goal = E;
        while (true) {
            const PeriodicOrbit& last = path.back();
            const PeriodicOrbit* before = path.size() > 1 ? &path[path.size() - 2] : nullptr;
            double e_try = goal;
            bool done = false;
            while (!done) {
                try {
                    PeriodicOrbit o = refine_periodic(model, chart, lib, predict(model, chart, lib, last, before, e_try, opt), opt);
                    path.push_back(std::move(o));
                    done = true;
                } catch (const Error& err) {
                    fam.log.push_back("corrector failed at E=" + fmt_g(e_try) + ": " + err.what());
                    try {
                        PeriodicOrbit o = solve_periodic(model, chart, lib, spec, e_try, opt);
                        path.push_back(std::move(o));
                        done = true;
                        fam.log.push_back("predictor failed at E=" + fmt_g(e_try) + ", restarted from skeleton");
                        break;
                    } catch (const Error&) {
                    }
                    const double mid = (e_try > 0 ? 1.0 : -1.0) * std::sqrt(std::abs(e_try * last.E));
                    if (std::abs(mid - last.E) < 1e-3 * std::abs(last.E))
                        throw Error("ContinuationStalled", "step collapsed at E=" + fmt_g(e_try) + " from E=" +
                                                                fmt_g(last.E) + ": " + err.what());
                    fam.log.push_back("halved step toward E=" + fmt_g(e_try));
                    e_try = mid;
                }
            }
            if (path.back().E == goal) break;
        }
        fam.orbits.push_back(path.back());
    }
    std::sort(fam.orbits.begin(), fam.orbits.end(), [](const auto& a, const auto& b) { return a.E < b.E; });
    return fam;
}

FloquetReport floquet_analysis(const HamiltonianModel& model, const LocalChart& chart, const PeriodicOrbit& o) {
    FloquetReport rep;
    const int d = static_cast<int>(o.nodes.front().size());
    const int n = d / 2;
    if (o.segment_psi.empty()) throw Error("DefectiveSpectrum", "no monodromy factors");
    Mat Q = Mat::Identity(d, d);
    Vec logs = Vec::Zero(d);
    Eigen::VectorXi sgn = Eigen::VectorXi::Ones(d);
    const int sweeps = 12;
    for (int sw = 0; sw < sweeps; ++sw) {
        Mat Q0 = Q;
        logs.setZero();
        for (const Mat& P : o.segment_psi) {
            Eigen::HouseholderQR<Mat> qr(P * Q);
            Mat R = qr.matrixQR().triangularView<Eigen::Upper>();
            Mat Qn = qr.householderQ() * Mat::Identity(d, d);
            for (int i = 0; i < d; ++i)
                if (R(i, i) < 0) {
                    R.row(i) *= -1.0;
                    Qn.col(i) *= -1.0;
                }
            for (int i = 0; i < d; ++i) logs[i] += std::log(R(i, i));
            Q = Qn;
        }
        for (int i = 0; i < d; ++i) sgn[i] = Q.col(i).dot(Q0.col(i)) >= 0 ? 1 : -1;
        rep.sweeps = sw + 1;
    }
    // dominant eigenvector: first column at the anchor
    std::vector<int> idx(d);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](int a, int b) { return logs[a] > logs[b]; });
    for (int i : idx) {
        rep.log_abs.push_back(logs[i]);
        rep.signs.push_back(sgn[i]);
    }
    // trivial pair: the two closest to |log| = 0
    std::vector<int> by_abs(d);
    std::iota(by_abs.begin(), by_abs.end(), 0);
    std::sort(by_abs.begin(), by_abs.end(), [&](int a, int b) { return std::abs(rep.log_abs[a]) < std::abs(rep.log_abs[b]); });
    std::vector<bool> trivial(d, false);
    trivial[by_abs[0]] = trivial[by_abs[1]] = true;
    std::vector<double> logs_nt;
    std::vector<int> signs_nt;
    for (int i = 0; i < d; ++i)
        if (!trivial[i]) {
            rep.sigma.push_back(rep.signs[i] * std::exp(rep.log_abs[i]));
            logs_nt.push_back(rep.log_abs[i]);
            signs_nt.push_back(rep.signs[i]);
        }
    rep.log_abs = logs_nt;
    rep.signs = signs_nt;
    std::vector<bool> used(logs_nt.size(), false);
    for (std::size_t i = 0; i < logs_nt.size(); ++i) {
        if (used[i]) continue;
        int best = -1;
        double bd = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < logs_nt.size(); ++j) {
            if (j == i || used[j]) continue;
            double dd = std::abs(logs_nt[i] + logs_nt[j]);
            if (dd < bd) {
                bd = dd;
                best = static_cast<int>(j);
            }
        }
        if (best < 0) throw Error("DefectiveSpectrum", "unpaired multiplier");
        used[i] = used[best] = true;
        rep.pairs.push_back({static_cast<int>(i), best});
        rep.pairing_defect = std::max(rep.pairing_defect, std::abs(std::expm1(logs_nt[i] + logs_nt[best])));
    }
    if (rep.pairing_defect > 1e-4) throw Error("DefectiveSpectrum", "reciprocal pairing defect above 1e-4");
    if (n >= 2) {
        Vec e = Q.col(idx[0]);
        const Vec& z0 = o.nodes.front();
        Mat T = chart.to_local_jacobian(z0);
        Vec xi = T * e;
        Vec X = T * model.field(z0);
        xi -= (xi[0] / X[0]) * X;
        rep.eta_local = xi;
        rep.eta_ratio = xi.segment(n + 1, n - 1).norm() / xi.segment(1, n - 1).norm();
    }
    {
        // energy carried by the family tangent across each subsegment
        const int N = static_cast<int>(o.nodes.size());
        double log_sigma = 0.0;
        for (int j = 0; j < N && static_cast<int>(o.tangent.size()) == N; ++j) {
            const int jn = (j + 1) % N;
            Vec zn = o.nodes[jn];
            const Vec g = model.gradH(zn);
            log_sigma += std::log(std::abs(g.dot(o.segment_psi[j] * o.tangent[j]) / g.dot(o.tangent[jn])));
        }
        rep.sigma1_analog = std::exp(log_sigma);
    }
    if (n >= 2 && o.legs.size() >= 4) {
        LegJacobians lj = leg_jacobians(model, chart, o);
        double sum = 0.0;
        for (std::size_t l = 0; l + 1 < lj.projected.size(); l += 2) {
            Mat pass = lj.projected[l + 1] * lj.projected[l];
            Eigen::EigenSolver<Mat> es(pass, false);
            double top = 0.0;
            for (int i = 0; i < es.eigenvalues().size(); ++i) top = std::max(top, std::abs(es.eigenvalues()[i]));
            sum += std::log(top);
        }
        rep.product_consistency = std::abs(std::expm1(sum - logs_nt.front()));
    }
    return rep;
}

LegJacobians leg_jacobians(const HamiltonianModel& model, const LocalChart& chart, const PeriodicOrbit& o) {
    LegJacobians out;
    const int d = static_cast<int>(o.nodes.front().size());
    const std::size_t L = o.legs.size();
    for (std::size_t l = 0; l < L; ++l) {
        const Leg& leg = o.legs[l];
        const Leg& next = o.legs[(l + 1) % L];
        Mat P = Mat::Identity(d, d);
        for (int q = 0; q < leg.subsegments; ++q) P = o.segment_psi[leg.first_node + q] * P;
        SectionMapResult res;
        fill_map_jacobians(chart, model, o.nodes[leg.first_node], leg.start_side, o.nodes[next.first_node],
                           next.start_side, P, res);
        out.projected.push_back(res.projected);
        out.max_symplectic_defect = std::max(out.max_symplectic_defect, res.symplectic_defect);
    }
    out.composite = Mat::Identity(d - 2, d - 2);
    for (const Mat& P : out.projected) out.composite = P * out.composite;
    SectionMapResult mono;
    fill_map_jacobians(chart, model, o.nodes.front(), o.legs.front().start_side, o.nodes.front(),
                       o.legs.front().start_side, o.monodromy, mono);
    out.monodromy_projected = mono.projected;
    out.max_symplectic_defect = std::max(out.max_symplectic_defect, mono.symplectic_defect);
    if (d > 2)
        out.factorization_error =
            (out.composite - out.monodromy_projected).norm() / std::max(1e-300, out.monodromy_projected.norm());
    return out;
}

OrbitSegment sample_orbit(const HamiltonianModel& model, const PeriodicOrbit& o, const Tolerances& tol) {
    OrbitSegment out;
    out.n = model.n();
    out.dense_dim = 2 * model.n();
    out.energy = o.E;
    double t0 = 0.0;
    for (std::size_t l = 0; l < o.legs.size(); ++l) {
        const Leg& leg = o.legs[l];
        const double h = o.leg_time[l] / leg.subsegments;
        for (int q = 0; q < leg.subsegments; ++q) {
            const int j = leg.first_node + q;
            OrbitSegment seg = integrate(model, o.nodes[j], 0.0, h, tol);
            const Vec shift = o.node_lattice[j].cast<double>();
            for (std::size_t k = 0; k < seg.times.size(); ++k) {
                if (k == 0 && !out.times.empty()) continue;
                Vec z = seg.states[k];
                z.head(out.n) += shift;
                out.times.push_back(t0 + seg.times[k]);
                out.states.push_back(z);
            }
            for (DenseStep st : seg.steps) {
                st.t0 += t0;
                for (int i = 0; i < out.n; ++i) st.rc[i] += shift[i];
                out.steps.push_back(std::move(st));
            }
            t0 += h;
        }
    }
    return out;
}

std::vector<IVec> lattice_itinerary(const OrbitSegment& seg, const IVec& shift, int n) {
    const double t0 = seg.times.front(), T = seg.times.back() - t0;
    const bool dense = !seg.steps.empty();
    const int m = dense ? std::max(4000, static_cast<int>(400 * T)) : static_cast<int>(seg.states.size()) - 1;
    std::vector<double> dist(m);
    std::vector<IVec> near(m);
    for (int k = 0; k < m; ++k) {
        Vec z = dense ? seg.at(t0 + T * k / m) : seg.states[k];
        near[k] = nearest_lattice(z, n);
        Vec rel = z;
        rel.head(n) -= near[k].cast<double>();
        dist[k] = rel.norm();
    }
    // closest approaches to the lattice, periodic in t
    std::vector<IVec> visits;
    for (int k = 0; k < m; ++k) {
        const double prev = dist[(k + m - 1) % m], next = dist[(k + 1) % m];
        if (!(dist[k] < prev && dist[k] <= next) || dist[k] > 0.5) continue;
        if (!visits.empty() && visits.back() == near[k]) continue;
        visits.push_back(near[k]);
    }
    std::vector<IVec> inc;
    if (visits.empty()) return inc;
    if (visits.size() > 1 && visits.front() == visits.back() - shift) visits.pop_back();
    IVec prev = visits.back() - shift;
    for (const IVec& v : visits) {
        inc.push_back(v - prev);
        prev = v;
    }
    return inc;
}

std::vector<IVec> itinerary(const HamiltonianModel& model, const LocalChart&, const PeriodicOrbit& o,
                            const Tolerances& tol) {
    return lattice_itinerary(sample_orbit(model, o, tol), o.shift, model.n());
}

SymmetryReport s_symmetry(const HamiltonianModel& model, const PeriodicOrbit& o, const Tolerances& tol) {
    SymmetryReport rep;
    const int n = model.n();
    OrbitSegment seg = sample_orbit(model, o, tol);
    const double T = seg.times.back();
    auto ynorm2 = [&](double t) { return seg.at(t).tail(n).squaredNorm(); };
    // y = 0 passages: local minima of |y|^2 on a fine grid, refined by golden section
    const int grid = 4000;
    std::vector<double> ts(grid + 1), ys(grid + 1);
    for (int k = 0; k <= grid; ++k) {
        ts[k] = T * k / grid;
        ys[k] = ynorm2(ts[k]);
    }
    std::vector<double> stars;
    for (int k = 0; k < grid; ++k) {
        const double yl = ys[(k + grid - 1) % grid], y = ys[k], yr = ys[k + 1];
        if (!(y <= yl && y < yr)) continue;
        double a = ts[k] - T / grid, b = ts[k] + T / grid;
        const double g = 0.5 * (std::sqrt(5.0) - 1.0);
        auto f = [&](double t) { return ynorm2(std::fmod(t + T, T)); };
        double x1 = b - g * (b - a), x2 = a + g * (b - a), f1 = f(x1), f2 = f(x2);
        for (int it = 0; it < 100; ++it) {
            if (f1 < f2) {
                b = x2; x2 = x1; f2 = f1; x1 = b - g * (b - a); f1 = f(x1);
            } else {
                a = x1; x1 = x2; f1 = f2; x2 = a + g * (b - a); f2 = f(x2);
            }
        }
        double tm = 0.5 * (a + b);
        if (std::sqrt(f(tm)) < 1e-6) stars.push_back(std::fmod(tm + T, T));
    }
    rep.y_zero_crossings = static_cast<int>(stars.size());
    if (stars.empty()) {
        rep.defect = std::numeric_limits<double>::infinity();
        return rep;
    }
    rep.t_star = stars.front();
    const Vec base_shift = o.shift.cast<double>();
    auto at = [&](double t) {
        double k = std::floor(t / T);
        Vec z = seg.at(t - k * T);
        z.head(n) += k * base_shift;
        return z;
    };
    for (int k = 0; k <= 2000; ++k) {
        const double t = 0.5 * T * k / 2000;
        Vec a = at(rep.t_star - t), b = at(rep.t_star + t);
        Vec d(2 * n);
        d.head(n) = a.head(n) - b.head(n);
        d.tail(n) = a.tail(n) + b.tail(n);
        rep.defect = std::max(rep.defect, d.norm());
    }
    return rep;
}

UniquenessReport uniqueness_probe(const HamiltonianModel& model, const LocalChart& chart,
                                  const std::vector<HomoclinicOrbit>& lib, const PeriodicOrbit& orbit,
                                  int n_probes, double delta, const ContinuationOptions& opt, unsigned seed) {
    UniquenessReport rep;
    rep.probes = n_probes;
    std::mt19937 gen(seed);
    std::normal_distribution<double> nd;
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    ContinuationOptions po = opt;
    po.check_itinerary = false;
    po.floquet = false;
    po.tube_radius = std::numeric_limits<double>::infinity();
    for (int k = 0; k < n_probes; ++k) {
        PeriodicOrbit g = orbit;
        for (Vec& z : g.nodes) {
            Vec e(z.size());
            for (int i = 0; i < e.size(); ++i) e[i] = nd(gen);
            z += delta * ud(gen) * e.normalized();
        }
        try {
            PeriodicOrbit s = refine_periodic(model, chart, lib, g, po);
            ++rep.converged;
            double dist = 0.0;
            for (std::size_t j = 0; j < s.nodes.size(); ++j) {
                Vec a = shift_from(s.nodes[j], s.node_lattice[j]);
                Vec b = shift_from(orbit.nodes[j], orbit.node_lattice[j]);
                dist = std::max(dist, (a - b).norm());
            }
            if (dist < 1e-7) {
                ++rep.coincident;
            } else {
                ++rep.distinct;
                OrbitSegment seg = sample_orbit(model, s, opt.tol);
                double far = 0.0;
                for (const Vec& z : seg.states) {
                    double best = std::numeric_limits<double>::infinity();
                    for (const Leg& leg : s.legs) {
                        if (leg.kind != LegKind::Outer) continue;
                        for (const Vec& q : lib[leg.homoclinic].states)
                            best = std::min(best, (lift(q, leg.start_lattice) - z).norm());
                    }
                    far = std::max(far, best);
                }
                rep.max_distinct_skeleton_distance = std::max(rep.max_distinct_skeleton_distance, far);
            }
        } catch (const Error&) {
        }
    }
    rep.unique = rep.distinct == 0;
    return rep;
}

GraphOracleResult graph_transform_oracle(const HamiltonianModel& model, const LocalChart& chart,
                                         const std::vector<HomoclinicOrbit>& lib, const ShadowingSpec& spec,
                                         double E, int resolution, const ContinuationOptions& opt) {
    if (chart.n != 2) throw Error("ConfigInvalid", "graph transform oracle needs n = 2");
    if (!(E > 0) || spec.energy_sign <= 0) throw Error("EnergyOutOfRange", "graph transform oracle needs E > 0");
    std::vector<Leg> legs = build_legs(lib, spec);
    const double r = opt.r;
    MapOptions mo;
    mo.r = r;
    mo.jacobian = false;
    mo.tube_radius = opt.tube_radius;
    mo.tol = opt.tol;
    auto start = [&](double uh, double vh) {
        Vec hat(2);
        hat << uh, vh;
        return chart.from_local(point_on_section(chart, model, legs[0].start_side, r, hat, E));
    };
    auto R = [&](double uh, double vh) {
        Vec z = start(uh, vh);
        for (int i : spec.order) {
            const HomoclinicOrbit& h = lib[i];
            SectionMapResult a = outer_map(chart, model, z, h, mo);
            z = shift_to(a.image, a.lattice);
            SectionMapResult b = inner_map(chart, model, z, entry_side(h.entry_sign), 1, mo);
            z = b.image;
        }
        return hat_coordinates(chart.to_local(z));
    };
    auto defined = [&](double uh, double vh, Vec* out) {
        try {
            Vec v = R(uh, vh);
            if (out) *out = v;
            return true;
        } catch (const Error&) {
            return false;
        }
    };
    const HomoclinicOrbit& h0 = lib[spec.order.front()];
    for (int i : spec.order)
        if (std::abs(lib[i].exit_local[1]) > r || std::abs(lib[i].entry_local[3]) > r)
            throw Error("ConfigInvalid", "graph transform oracle needs section crossings inside the r-window");
    // center: the outer image lands on the stable axis (u-hat = 0 at Sigma^+)
    auto first_u = [&](double uh) {
        SectionMapResult a = outer_map(chart, model, start(uh, 0.0), h0, mo);
        return a.image_local[1];
    };
    const double u0 = h0.exit_local[1];
    double f0 = first_u(u0);
    double lo = u0, hi = u0, flo = f0, fhi = f0;
    bool bracketed = false;
    for (double step = 1e-12; step < r && !bracketed; step *= 2.0) {
        double a = u0 - step, b = u0 + step;
        double fa = first_u(a), fb = first_u(b);
        if ((fa > 0) != (f0 > 0)) {
            lo = a; hi = u0; flo = fa; fhi = f0; bracketed = true;
        } else if ((fb > 0) != (f0 > 0)) {
            lo = u0; hi = b; flo = f0; fhi = fb; bracketed = true;
        }
    }
    if (!bracketed) throw Error("ContractionFailed", "could not locate the inner-map domain");
    boost::uintmax_t iters = 200;
    auto tolf = [](double a, double b) { return std::abs(a - b) <= 1e-17 + 4e-16 * std::abs(a); };
    auto root = boost::math::tools::toms748_solve(first_u, lo, hi, flo, fhi, tolf, iters);
    const double c = 0.5 * (root.first + root.second);
    // window on which R is defined and overflows itself
    double delta = r;
    Vec rl, rc, rr;
    for (int k = 0; k < 200; ++k, delta *= 0.5) {
        if (defined(c - delta, 0.0, &rl) && defined(c, 0.0, &rc) && defined(c + delta, 0.0, &rr) &&
            (rl[0] - (c - delta) > 0) != (rr[0] - (c + delta) > 0))
            break;
    }
    delta *= 0.5;
    GraphOracleResult out;
    out.center = c;
    out.window = delta;
    const int m = std::max(3, resolution);
    std::vector<double> grid(m), F(m, 0.0);
    for (int j = 0; j < m; ++j) grid[j] = c - delta + 2.0 * delta * j / (m - 1);
    auto interp = [&](double s) {
        double q = (s - grid.front()) / (grid.back() - grid.front()) * (m - 1);
        int k = std::clamp(static_cast<int>(std::floor(q)), 0, m - 2);
        double w = q - k;
        return (1 - w) * F[k] + w * F[k + 1];
    };
    auto graph_image = [&](double s) { return R(s, interp(s)); };
    auto preimage = [&](double target) {
        auto f = [&](double s) { return graph_image(s)[0] - target; };
        double a = grid.front(), b = grid.back();
        double fa = f(a), fb = f(b);
        if ((fa > 0) == (fb > 0)) throw Error("ContractionFailed", "graph image does not cover the window");
        boost::uintmax_t it = 200;
        auto rt = boost::math::tools::toms748_solve(f, a, b, fa, fb, tolf, it);
        return 0.5 * (rt.first + rt.second);
    };
    double prev_change = std::numeric_limits<double>::infinity();
    int stagnant = 0;
    for (int it = 0; it < 100; ++it) {
        std::vector<double> Fn(m);
        for (int j = 0; j < m; ++j) Fn[j] = graph_image(preimage(grid[j]))[1];
        double change = 0.0;
        for (int j = 0; j < m; ++j) change = std::max(change, std::abs(Fn[j] - F[j]));
        F = Fn;
        out.iterations = it + 1;
        out.final_change = change;
        if (change < 1e-9) break;
        stagnant = change >= prev_change ? stagnant + 1 : 0;
        if (stagnant >= 10) throw Error("ContractionFailed", "graph transform is not contracting");
        prev_change = change;
    }
    auto g = [&](double s) { return graph_image(s)[0] - s; };
    double a = grid.front(), b = grid.back();
    double ga = g(a), gb = g(b);
    if ((ga > 0) == (gb > 0)) throw Error("ContractionFailed", "no fixed point in the window");
    boost::uintmax_t it = 200;
    auto rt = boost::math::tools::toms748_solve(g, a, b, ga, gb, tolf, it);
    const double s = 0.5 * (rt.first + rt.second);
    out.anchor_hat = Vec(2);
    out.anchor_hat << s, interp(s);
    out.grid = grid;
    out.graph = F;
    return out;
}

std::string orbit_to_json(const PeriodicOrbit& o) {
    nlohmann::json j;
    j["E"] = o.E;
    j["T"] = o.T;
    j["gamma"] = o.gamma;
    j["shift"] = ivec_json(o.shift);
    j["iterations"] = o.iterations;
    j["residual"] = o.residual;
    j["closure"] = o.closure;
    j["energy_error"] = o.energy_error;
    j["shadow_distance"] = o.shadow_distance;
    nlohmann::json legs = nlohmann::json::array();
    for (std::size_t l = 0; l < o.legs.size(); ++l) {
        const Leg& g = o.legs[l];
        legs.push_back({{"kind", g.kind == LegKind::Outer ? "outer" : "inner"},
                        {"homoclinic", g.homoclinic},
                        {"section", to_string(g.start_side)},
                        {"lattice", ivec_json(g.start_lattice)},
                        {"subsegments", g.subsegments},
                        {"time", o.leg_time[l]},
                        {"anchor_local", o.anchors_local.empty() ? nlohmann::json() : vec_json(o.anchors_local[l])}});
    }
    j["legs"] = legs;
    nlohmann::json it = nlohmann::json::array();
    for (const IVec& v : o.itinerary) it.push_back(ivec_json(v));
    j["itinerary"] = it;
    nlohmann::json f;
    f["sigma"] = o.floquet.sigma;
    f["log_abs"] = o.floquet.log_abs;
    f["pairing_defect"] = o.floquet.pairing_defect;
    f["sigma1_analog"] = o.floquet.sigma1_analog;
    f["product_consistency"] = o.floquet.product_consistency;
    f["eta_ratio"] = o.floquet.eta_ratio;
    j["floquet"] = f;
    return j.dump(2);
}

std::string orbit_state_to_json(const PeriodicOrbit& o) {
    nlohmann::json j;
    j["E"] = o.E;
    j["gamma"] = o.gamma;
    j["shift"] = ivec_json(o.shift);
    j["spec"] = {{"order", o.spec.order}, {"energy_sign", o.spec.energy_sign}, {"name", o.spec.name}};
    nlohmann::json legs = nlohmann::json::array();
    for (std::size_t l = 0; l < o.legs.size(); ++l) {
        const Leg& g = o.legs[l];
        legs.push_back({{"kind", g.kind == LegKind::Outer ? "outer" : "inner"},
                        {"homoclinic", g.homoclinic},
                        {"section", to_string(g.start_side)},
                        {"lattice", ivec_json(g.start_lattice)},
                        {"first_node", g.first_node},
                        {"subsegments", g.subsegments},
                        {"time", o.leg_time[l]}});
    }
    j["legs"] = legs;
    nlohmann::json nodes = nlohmann::json::array(), lat = nlohmann::json::array();
    for (std::size_t k = 0; k < o.nodes.size(); ++k) {
        nodes.push_back(vec_json(o.nodes[k]));
        lat.push_back(ivec_json(o.node_lattice[k]));
    }
    j["nodes"] = nodes;
    j["node_lattice"] = lat;
    return j.dump();
}

PeriodicOrbit orbit_state_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const std::exception& e) {
        throw Error("ConfigInvalid", std::string("orbit state: ") + e.what());
    }
    auto to_vec = [](const nlohmann::json& a) {
        std::vector<double> v = a.get<std::vector<double>>();
        return Vec(Eigen::Map<Vec>(v.data(), static_cast<Eigen::Index>(v.size())));
    };
    auto to_ivec = [](const nlohmann::json& a) {
        std::vector<int> v = a.get<std::vector<int>>();
        return IVec(Eigen::Map<IVec>(v.data(), static_cast<Eigen::Index>(v.size())));
    };
    auto side = [](const std::string& s) {
        for (SectionSide c : {SectionSide::UPlus, SectionSide::UMinus, SectionSide::VPlus, SectionSide::VMinus,
                              SectionSide::Diagonal, SectionSide::AntiDiagonal})
            if (to_string(c) == s) return c;
        throw Error("ConfigInvalid", "unknown section " + s);
    };
    PeriodicOrbit o;
    try {
        o.E = j.at("E").get<double>();
        o.gamma = j.at("gamma").get<double>();
        o.shift = to_ivec(j.at("shift"));
        o.spec.order = j.at("spec").at("order").get<std::vector<int>>();
        o.spec.energy_sign = j.at("spec").at("energy_sign").get<int>();
        o.spec.name = j.at("spec").at("name").get<std::string>();
        for (const auto& g : j.at("legs")) {
            Leg leg;
            leg.kind = g.at("kind").get<std::string>() == "outer" ? LegKind::Outer : LegKind::Inner;
            leg.homoclinic = g.at("homoclinic").get<int>();
            leg.start_side = side(g.at("section").get<std::string>());
            leg.start_lattice = to_ivec(g.at("lattice"));
            leg.first_node = g.at("first_node").get<int>();
            leg.subsegments = g.at("subsegments").get<int>();
            o.legs.push_back(leg);
            o.leg_time.push_back(g.at("time").get<double>());
        }
        for (const auto& z : j.at("nodes")) o.nodes.push_back(to_vec(z));
        for (const auto& c : j.at("node_lattice")) o.node_lattice.push_back(to_ivec(c));
    } catch (const nlohmann::json::exception& e) {
        throw Error("ConfigInvalid", std::string("orbit state: ") + e.what());
    }
    if (o.nodes.empty() || o.nodes.size() != o.node_lattice.size())
        throw Error("ConfigInvalid", "orbit state: node lists inconsistent");
    o.T = std::accumulate(o.leg_time.begin(), o.leg_time.end(), 0.0);
    return o;
}

}  // namespace nhic
