#include "nhic/homoclinics.hpp"

#include <Eigen/SVD>
#include <boost/math/tools/toms748_solve.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>

namespace nhic {

namespace {

Vec direction_from_angle(double theta) {
    Vec d(2);
    d << std::cos(theta), std::sin(theta);
    return d;
}

Vec seed_point(const LocalChart& chart, const Vec& dir, double eps) {
    Vec w = Vec::Zero(2 * chart.n);
    w.head(chart.n) = eps * dir.normalized();
    return chart.from_local(w);
}

// Scalar mismatch for n = 2: component of u across the zero-energy direction at (u, v).
double planar_mismatch(const Vec& w, const Vec& lambda) {
    Vec a = lambda.cwiseProduct(w.tail(2));
    double na = a.norm();
    if (na == 0.0) return w.head(2).norm();
    return (-w[0] * a[1] + w[1] * a[0]) / na;
}

// Projection of u onto the complement of Lambda v (general n).
Vec general_mismatch(const Vec& w, const Vec& lambda, int n) {
    Vec u = w.head(n);
    Vec a = lambda.cwiseProduct(w.tail(n));
    double na = a.norm();
    if (na > 0) u -= a * (a.dot(u) / (na * na));
    // drop the component along the largest entry of a to leave n-1 independent equations
    Eigen::Index k = 0;
    a.cwiseAbs().maxCoeff(&k);
    Vec m(n - 1);
    for (int i = 0, j = 0; i < n; ++i)
        if (i != k) m[j++] = u[i];
    return m;
}

RunOptions box_options(const HomoclinicOptions& opt, int n) {
    RunOptions ro;
    ro.keep_dense = false;
    const double box = opt.box;
    ro.observer = [box, n](double, const Vec& z) {
        for (int i = 0; i < n; ++i)
            if (std::abs(z[i]) > box) return false;
        return true;
    };
    ro.observer_error = "EscapedDomain";
    return ro;
}

std::string class_label(const IVec& c, int exit_sign) {
    std::ostringstream os;
    os << "(";
    for (int i = 0; i < c.size(); ++i) os << (i ? "," : "") << c[i];
    os << ")" << (exit_sign > 0 ? "+" : "-");
    return os.str();
}

// Tail on a straightened axis: integrate the reduced field along {v = 0} backward
// (unstable) or along {u = 0} forward (stable) until |.| < stop.
std::vector<std::pair<double, Vec>> axis_tail(const HamiltonianModel& model, const LocalChart& chart,
                                              const Vec& start, bool unstable, double stop,
                                              const Tolerances& tol) {
    const int n = chart.n;
    auto rhs = [&](double, const double* y, double* f) {
        Vec w = Vec::Zero(2 * n);
        if (unstable) w.head(n) = Eigen::Map<const Vec>(y, n);
        else w.tail(n) = Eigen::Map<const Vec>(y, n);
        Vec lf = chart.local_field(model, w);
        Vec part = unstable ? Vec(lf.head(n)) : Vec(lf.tail(n));
        for (int i = 0; i < n; ++i) f[i] = part[i];
    };
    Dop853 s(n, rhs, tol);
    const double r0 = start.norm();
    double T = std::log(std::max(r0, stop) / stop) / chart.lambda[0] + 1.0;
    s.start(0.0, start.data(), unstable ? -T : T);
    std::vector<std::pair<double, Vec>> out;
    while (s.step()) {
        Vec y = Eigen::Map<const Vec>(s.y(), n);
        out.push_back({s.t(), y});
        if (y.norm() < stop) break;
    }
    return out;
}

// Flows a point of the straightened unstable axis backward until |u| = radius.
Vec pull_back_to_radius(const HamiltonianModel& model, const LocalChart& chart, const Vec& u0,
                        double radius, const Tolerances& tol) {
    const int n = chart.n;
    if (u0.norm() <= radius) return u0;
    auto rhs = [&](double, const double* y, double* f) {
        Vec w = Vec::Zero(2 * n);
        w.head(n) = Eigen::Map<const Vec>(y, n);
        Vec lf = chart.local_field(model, w);
        for (int i = 0; i < n; ++i) f[i] = lf[i];
    };
    Dop853 s(n, rhs, tol);
    double T = std::log(u0.norm() / radius) / chart.lambda[0] + 1.0;
    s.start(0.0, u0.data(), -T);
    Vec y(n);
    while (s.step()) {
        if (Eigen::Map<const Vec>(s.y(), n).norm() > radius) continue;
        double a = s.t_old(), b = s.t();
        for (int it = 0; it < 200 && std::abs(a - b) > 1e-15; ++it) {
            double m = 0.5 * (a + b);
            s.dense(m, y.data());
            (y.norm() > radius ? a : b) = m;
        }
        s.dense(b, y.data());
        return y;
    }
    throw Error("NoConvergence", "unstable axis did not reach the seed radius");
}

double approach_angle(const Vec& xdot, const Vec& xi) {
    double c = std::abs(xdot.normalized().dot(xi.normalized()));
    return std::acos(std::min(1.0, c));
}

}  // namespace

HomoclinicOptions default_homoclinic_options(const LocalChart& chart) {
    HomoclinicOptions o;
    o.r = chart.r_prime / 4.0;
    o.eps0 = chart.r_prime / 10.0;
    o.match_radius = chart.r_prime / 2.0;
    return o;
}

ScanPoint scan_mismatch(const HamiltonianModel& model, const LocalChart& chart, double theta,
                        const HomoclinicOptions& opt) {
    ScanPoint sp;
    sp.theta = theta;
    Vec z0 = seed_point(chart, direction_from_angle(theta), opt.eps0);
    EventSpec ev = lattice_ball_event(chart, opt.match_radius, Direction::Decreasing, "return");
    try {
        EventRun run = integrate_events(model, z0, opt.t_max, {ev}, opt.tol, box_options(opt, chart.n));
        if (!run.hit) return sp;
        sp.klass = nearest_lattice(run.hit->z, chart.n);
        Vec w = chart.to_local_at(run.hit->z, sp.klass);
        sp.entry_sign = w[chart.n] >= 0 ? 1 : -1;
        sp.mismatch = planar_mismatch(w, chart.lambda);
        sp.time = run.hit->t;
        sp.valid = true;
    } catch (const Error&) {
        sp.valid = false;
    }
    return sp;
}

std::vector<double> closest_approach(const HamiltonianModel& model, const LocalChart& chart,
                                     double theta, const std::vector<IVec>& targets,
                                     const HomoclinicOptions& opt) {
    const int n = chart.n;
    std::vector<double> best(targets.size(), std::numeric_limits<double>::infinity());
    Vec z0 = seed_point(chart, direction_from_angle(theta), opt.eps0);
    Dop853 s(2 * n, [&](double, const double* y, double* f) {
        Eigen::Map<Vec>(f, 2 * n) = model.field(Eigen::Map<const Vec>(y, 2 * n));
    }, opt.tol);
    s.start(0.0, z0.data(), opt.scan_time);
    Vec z(2 * n);
    auto record = [&](const Vec& p) {
        for (std::size_t k = 0; k < targets.size(); ++k)
            best[k] = std::min(best[k], chart.to_linear(shift_to(p, targets[k])).norm());
    };
    while (s.step()) {
        for (int j = 1; j <= 8; ++j) {
            s.dense(s.t_old() + (s.t() - s.t_old()) * j / 8.0, z.data());
            record(z);
        }
        for (int i = 0; i < n; ++i)
            if (std::abs(z[i]) > opt.box) return best;
    }
    return best;
}

HomoclinicOrbit build_homoclinic(const HamiltonianModel& model, const LocalChart& chart,
                                 const Vec& seed_direction, const HomoclinicOptions& opt) {
    const int n = chart.n;
    HomoclinicOrbit h;
    h.r = opt.r;
    h.seed_direction = seed_direction.normalized();
    h.seed_radius = opt.eps0;
    const IVec zero = IVec::Zero(n);
    Vec z0 = seed_point(chart, h.seed_direction, opt.eps0);

    std::vector<EventSpec> exit_events = {
        section_event(chart, SectionSide::UPlus, opt.r, zero, Direction::Increasing, chart.r_prime),
        section_event(chart, SectionSide::UMinus, opt.r, zero, Direction::Decreasing, chart.r_prime)};
    RunOptions ro = box_options(opt, n);
    EventRun ex = integrate_events(model, z0, opt.t_max, exit_events, opt.tol, ro);
    if (!ex.hit) throw Error("NoConvergence", "seed never crossed the exit section inside the chart");
    h.exit_sign = ex.hit->event_index == 0 ? 1 : -1;
    h.exit_point = ex.hit->z;
    h.exit_local = chart.to_local(h.exit_point);

    std::vector<EventSpec> entry_events = {
        lattice_section_event(chart, SectionSide::VPlus, opt.r, Direction::Decreasing, chart.r_prime),
        lattice_section_event(chart, SectionSide::VMinus, opt.r, Direction::Increasing, chart.r_prime)};
    ro.keep_dense = true;
    EventRun out = integrate_events(model, h.exit_point, opt.t_max, entry_events, opt.tol, ro);
    if (!out.hit) throw Error("NoConvergence", "orbit did not re-enter a chart ball");
    h.entry_sign = out.hit->event_index == 0 ? 1 : -1;
    h.entry_point = out.hit->z;
    h.klass = nearest_lattice(h.entry_point, n);
    h.entry_local = chart.to_local_at(h.entry_point, h.klass);
    h.outer = out.segment;
    h.tau = out.hit->t;
    h.mismatch = h.entry_local.head(n).norm();
    h.label = class_label(h.klass, h.exit_sign);

    // tails on the straightened manifolds
    Vec u_exit = h.exit_local.head(n), v_entry = h.entry_local.tail(n);
    auto back = axis_tail(model, chart, u_exit, true, opt.tail_radius, opt.tol);
    auto fwd = axis_tail(model, chart, v_entry, false, opt.tail_radius, opt.tol);
    for (auto it = back.rbegin(); it != back.rend(); ++it) {
        Vec w = Vec::Zero(2 * n);
        w.head(n) = it->second;
        h.times.push_back(it->first);
        h.states.push_back(chart.from_local(w));
    }
    for (std::size_t k = 0; k < h.outer.times.size(); ++k) {
        h.times.push_back(h.outer.times[k]);
        h.states.push_back(h.outer.states[k]);
    }
    for (auto& [t, v] : fwd) {
        Vec w = Vec::Zero(2 * n);
        w.tail(n) = v;
        h.times.push_back(h.tau + t);
        h.states.push_back(chart.from_local_at(w, h.klass));
    }
    h.max_energy = 0.0;
    for (const Vec& z : h.states) h.max_energy = std::max(h.max_energy, std::abs(model.H(z)));
    Vec xi = chart.L.col(0).head(n);
    auto xdot = [&](const Vec& z) { return Vec(model.field(z).head(n)); };
    h.approach_angle_out = approach_angle(xdot(h.states.front()), xi);
    h.approach_angle_in = approach_angle(xdot(h.states.back()), xi);
    return h;
}

namespace {

double refine_theta(const HamiltonianModel& model, const LocalChart& chart, double a, double b,
                    double fa, double fb, const HomoclinicOptions& opt, const ScanPoint& ref) {
    auto f = [&](double th) {
        ScanPoint p = scan_mismatch(model, chart, th, opt);
        if (!p.valid || p.klass != ref.klass || p.entry_sign != ref.entry_sign)
            throw Error("NoConvergence", "bracket left the class window");
        return p.mismatch;
    };
    boost::uintmax_t it = 200;
    auto tolf = [](double x, double y) { return std::abs(x - y) <= 4e-16 * std::max(1.0, std::abs(x)); };
    auto res = boost::math::tools::toms748_solve(f, a, b, fa, fb, tolf, it);
    double th = 0.5 * (res.first + res.second);
    double fth = std::abs(f(res.first)) < std::abs(f(res.second)) ? res.first : res.second;
    return std::abs(f(th)) <= std::abs(f(fth)) ? th : fth;
}

// Secant polish of the seed angle on the signed entry mismatch of the built orbit itself.
HomoclinicOrbit build_polished(const HamiltonianModel& model, const LocalChart& chart, double th,
                               const HomoclinicOptions& opt) {
    HomoclinicOrbit h = build_homoclinic(model, chart, direction_from_angle(th), opt);
    auto signed_mis = [&](const HomoclinicOrbit& o) { return planar_mismatch(o.entry_local, chart.lambda); };
    double t0 = th, f0 = signed_mis(h);
    double t1 = th + 1e-12, f1;
    HomoclinicOrbit best = h;
    for (int it = 0; it < 8 && best.mismatch > 1e-12; ++it) {
        HomoclinicOrbit g = build_homoclinic(model, chart, direction_from_angle(t1), opt);
        if (g.klass != h.klass || g.entry_sign != h.entry_sign || g.exit_sign != h.exit_sign) break;
        f1 = signed_mis(g);
        if (g.mismatch < best.mismatch) best = std::move(g);
        if (f1 == f0) break;
        double t2 = t1 - f1 * (t1 - t0) / (f1 - f0);
        t0 = t1; f0 = f1; t1 = t2;
    }
    return best;
}

// Golden-section descent of the closest approach to target inside [lo, hi] until the orbit is
// captured by the match ball of target, then a bracketed root of the mismatch.
std::optional<double> zoom_to_class(const HamiltonianModel& model, const LocalChart& chart, double lo,
                                    double hi, const IVec& target, const HomoclinicOptions& opt) {
    const std::vector<IVec> tv{target};
    auto dist = [&](double th) { return closest_approach(model, chart, th, tv, opt)[0]; };
    auto captured = [&](double th) {
        ScanPoint p = scan_mismatch(model, chart, th, opt);
        return p.valid && p.klass == target ? std::optional<ScanPoint>(p) : std::nullopt;
    };
    const double g = 0.5 * (std::sqrt(5.0) - 1.0);
    double a = lo, b = hi;
    double x1 = b - g * (b - a), x2 = a + g * (b - a);
    double f1 = dist(x1), f2 = dist(x2);
    std::optional<ScanPoint> in;
    for (int it = 0; it < 200 && b - a > 1e-14; ++it) {
        double x = f1 < f2 ? x1 : x2;
        if (std::min(f1, f2) < opt.match_radius && (in = captured(x))) break;
        if (f1 < f2) {
            b = x2; x2 = x1; f2 = f1;
            x1 = b - g * (b - a); f1 = dist(x1);
        } else {
            a = x1; x1 = x2; f1 = f2;
            x2 = a + g * (b - a); f2 = dist(x2);
        }
    }
    if (!in) return std::nullopt;
    if (std::abs(in->mismatch) < 1e-14) return in->theta;
    for (int side : {1, -1}) {
        double step = 1e-11;
        ScanPoint prev = *in;
        for (int k = 0; k < 50; ++k, step *= 2.0) {
            std::optional<ScanPoint> q = captured(in->theta + side * step);
            if (!q || q->entry_sign != in->entry_sign) break;
            if ((q->mismatch > 0) != (prev.mismatch > 0)) {
                double l = std::min(prev.theta, q->theta), r = std::max(prev.theta, q->theta);
                double fl = prev.theta < q->theta ? prev.mismatch : q->mismatch;
                double fr = prev.theta < q->theta ? q->mismatch : prev.mismatch;
                return refine_theta(model, chart, l, r, fl, fr, opt, *in);
            }
            prev = *q;
        }
    }
    return std::nullopt;
}

}  // namespace

std::vector<HomoclinicOrbit> find_homoclinics(const HamiltonianModel& model, const LocalChart& chart,
                                              const std::vector<double>& seeds,
                                              const HomoclinicOptions& opt) {
    const int n = chart.n;
    std::vector<HomoclinicOrbit> found;
    auto accept = [&](HomoclinicOrbit&& h) {
        if (h.mismatch > 1e-8) return;
        for (const auto& g : found)
            if (g.klass == h.klass && g.exit_sign == h.exit_sign && g.entry_sign == h.entry_sign &&
                (g.exit_point - h.exit_point).norm() < 1e-6)
                return;
        found.push_back(std::move(h));
    };
    if (n == 1) {
        for (double s : seeds) {
            Vec d = Vec::Constant(1, s >= 0 ? 1.0 : -1.0);
            accept(build_homoclinic(model, chart, d, opt));
        }
        return found;
    }
    if (n == 2) {
        std::vector<ScanPoint> scan;
        for (double th : seeds) scan.push_back(scan_mismatch(model, chart, th, opt));
        for (std::size_t i = 0; i + 1 < scan.size(); ++i) {
            const ScanPoint &a = scan[i], &b = scan[i + 1];
            if (!a.valid || !b.valid || a.klass != b.klass || a.entry_sign != b.entry_sign) continue;
            if (a.klass.isZero()) continue;
            if ((a.mismatch > 0) == (b.mismatch > 0) && a.mismatch != 0.0) continue;
            try {
                double th = refine_theta(model, chart, a.theta, b.theta, a.mismatch, b.mismatch, opt, a);
                accept(build_polished(model, chart, th, opt));
            } catch (const Error&) {
            }
        }
        std::vector<IVec> targets = opt.target_classes;
        if (targets.empty())
            for (int a = -1; a <= 1; ++a)
                for (int b = -1; b <= 1; ++b)
                    if (a || b) targets.push_back((IVec(2) << a, b).finished());
        std::vector<std::vector<double>> dist;
        dist.reserve(seeds.size());
        for (double th : seeds) dist.push_back(closest_approach(model, chart, th, targets, opt));
        const std::size_t m = seeds.size();
        for (std::size_t k = 0; k < targets.size(); ++k) {
            for (std::size_t i = 0; i < m; ++i) {
                double d = dist[i][k];
                double dl = dist[(i + m - 1) % m][k], dr = dist[(i + 1) % m][k];
                if (!(d < opt.approach_threshold) || d > dl || d > dr) continue;
                double lo = i > 0 ? seeds[i - 1] : seeds[i] - (seeds[1] - seeds[0]);
                double hi = i + 1 < m ? seeds[i + 1] : seeds[i] + (seeds[1] - seeds[0]);
                try {
                    if (auto th = zoom_to_class(model, chart, lo, hi, targets[k], opt))
                        accept(build_polished(model, chart, *th, opt));
                } catch (const Error&) {
                }
            }
        }
        return found;
    }
    // n >= 3: Newton on the seed direction from each supplied unit direction
    const std::size_t count = seeds.size() / n;
    for (std::size_t s = 0; s < count; ++s) {
        Vec d = Eigen::Map<const Vec>(seeds.data() + s * n, n).normalized();
        try {
            for (int it = 0; it < 30; ++it) {
                // tangent basis of the sphere at d
                Eigen::JacobiSVD<Mat> svd(d.transpose(), Eigen::ComputeFullV);
                Mat T = svd.matrixV().rightCols(n - 1);
                auto mismatch = [&](const Vec& dir) {
                    Vec z0 = seed_point(chart, dir, opt.eps0);
                    EventSpec ev = lattice_ball_event(chart, opt.match_radius, Direction::Decreasing);
                    EventRun run = integrate_events(model, z0, opt.t_max, {ev}, opt.tol, box_options(opt, n));
                    if (!run.hit) throw Error("NoConvergence", "no return");
                    IVec c = nearest_lattice(run.hit->z, n);
                    return general_mismatch(chart.to_local_at(run.hit->z, c), chart.lambda, n);
                };
                Vec m0 = mismatch(d);
                if (m0.norm() < 1e-13) break;
                Mat J(n - 1, n - 1);
                const double hstep = 1e-7;
                for (int j = 0; j < n - 1; ++j) J.col(j) = (mismatch((d + hstep * T.col(j)).normalized()) - m0) / hstep;
                Vec step = J.fullPivLu().solve(-m0);
                d = (d + T * step).normalized();
                if (step.norm() < 1e-14) break;
            }
            accept(build_homoclinic(model, chart, d, opt));
        } catch (const Error&) {
        }
    }
    return found;
}

HomoclinicOrbit pair_by_symmetry(const HamiltonianModel& model, const LocalChart& chart,
                                 const HomoclinicOrbit& orbit, const HomoclinicOptions& opt) {
    const int n = chart.n;
    // Reflected orbit z^-(t) = s z^+(-t), shifted to start at lattice 0.
    auto reflect = [&](const Vec& z) {
        Vec r = shift_to(z, orbit.klass);
        r.tail(n) *= -1.0;
        return r;
    };
    // Seed: the reflected stable tail lies on W^u_loc; pull it back to the seed radius.
    Vec best;
    for (std::size_t k = 0; k < orbit.states.size(); ++k) {
        if (orbit.times[k] < orbit.tau) continue;
        Vec w = chart.to_local(reflect(orbit.states[k]));
        if (w.head(n).norm() <= 0.5 * chart.r_prime) {
            best = w.head(n);
            break;
        }
    }
    if (best.size() == 0) throw Error("NoConvergence", "orbit has no stable tail to reflect");
    Vec dir = pull_back_to_radius(model, chart, best, opt.eps0, opt.tol).normalized();
    HomoclinicOrbit h;
    if (n == 2) {
        h = build_polished(model, chart, std::atan2(dir[1], dir[0]), opt);
    } else {
        h = build_homoclinic(model, chart, dir, opt);
    }
    // distance between the recomputed orbit and the reflected samples, aligned at the crossings
    double defect = 0.0;
    for (std::size_t k = 0; k < orbit.outer.times.size(); ++k) {
        double t = orbit.outer.times[k];
        double tr = orbit.tau - t;
        if (tr < 0 || tr > h.tau) continue;
        defect = std::max(defect, (h.outer.at(tr) - reflect(orbit.outer.states[k])).norm());
    }
    h.symmetry_defect = defect;
    return h;
}

double transversality_margin(const Mat& tangent_u, const Mat& tangent_s, const Vec& field,
                             const Vec& grad_h) {
    const int dim = static_cast<int>(field.size());
    const int n = dim / 2;
    if (n <= 1) return 1.0;
    Vec a = field.normalized();
    Vec b = grad_h - a * a.dot(grad_h);
    b.normalize();
    Mat P = Mat::Identity(dim, dim) - a * a.transpose() - b * b.transpose();
    auto reduced = [&](const Mat& B) {
        Mat R = P * B;
        Eigen::JacobiSVD<Mat> svd(R, Eigen::ComputeThinU);
        return Mat(svd.matrixU().leftCols(n - 1));
    };
    Mat C(dim, 2 * n - 2);
    C << reduced(tangent_u), reduced(tangent_s);
    Eigen::JacobiSVD<Mat> svd(C);
    return svd.singularValues().minCoeff();
}

H2Certificate check_H2(const HamiltonianModel& model, const LocalChart& chart, HomoclinicOrbit& orbit,
                       bool throw_on_failure, const Tolerances& tol) {
    const int n = chart.n;
    H2Certificate c;
    double tm = 0.5 * orbit.tau;
    Mat Bu = chart.from_local_jacobian(orbit.exit_local).leftCols(n);
    Mat Bs = chart.from_local_jacobian(orbit.entry_local).rightCols(n);
    VariationalSegment fu = integrate_variational(model, orbit.exit_point, 0.0, tm, tol);
    VariationalSegment fs = integrate_variational(model, orbit.entry_point, 0.0, tm - orbit.tau, tol);
    Vec zm = fu.base.states.back();
    Mat Tu = fu.fundamental.back() * Bu;
    Mat Ts = fs.fundamental.back() * Bs;
    c.margin = transversality_margin(Tu, Ts, model.field(zm), model.gradH(zm));
    c.angle_out = orbit.approach_angle_out;
    c.angle_in = orbit.approach_angle_in;
    c.transversal = c.margin >= 1e-6;
    c.approach_ok = c.angle_out < 1e-3 && c.angle_in < 1e-3;
    if (!c.transversal) c.failures.push_back("TangencyDetected");
    if (!c.approach_ok) c.failures.push_back("WrongApproachDirection");
    c.passed = c.failures.empty();
    orbit.transversality_margin = c.margin;
    if (throw_on_failure && !c.passed)
        throw Error(c.failures.front(), "margin=" + std::to_string(c.margin));
    return c;
}

std::vector<Vec> x_samples(const HomoclinicOrbit& orbit) {
    std::vector<Vec> xs;
    const int n = static_cast<int>(orbit.klass.size());
    for (const Vec& z : orbit.states) xs.push_back(z.head(n));
    return xs;
}

namespace {

double torus_distance(const Vec& a, const Vec& b, const IVec& h) {
    double s = 0.0;
    for (int i = 0; i < a.size(); ++i) {
        double d = std::fmod(a[i] - b[i], static_cast<double>(h[i]));
        if (d < 0) d += h[i];
        d = std::min(d, h[i] - d);
        s += d * d;
    }
    return std::sqrt(s);
}

double lattice_distance(const Vec& x) {
    double s = 0.0;
    for (int i = 0; i < x.size(); ++i) {
        double d = x[i] - std::round(x[i]);
        s += d * d;
    }
    return std::sqrt(s);
}

}  // namespace

HomoclinicChain analyze_H3(const std::vector<IVec>& classes,
                           const std::vector<std::vector<Vec>>& curves_x, int h_max, int ell_max,
                           double sep_tol, double vertex_exclusion) {
    if (classes.empty()) throw Error("NoCoveringFound", "empty chain");
    const int n = static_cast<int>(classes[0].size());
    const int k = static_cast<int>(classes.size());
    IVec total = IVec::Zero(n);
    for (const auto& c : classes) total += c;

    struct Cand {
        long cost;
        int ell;
        IVec h;
    };
    std::vector<Cand> cands;
    IVec h = IVec::Ones(n);
    while (true) {
        long prod = 1;
        for (int i = 0; i < n; ++i) prod *= h[i];
        for (int l = 0; l <= ell_max; ++l) cands.push_back({prod * (l + 1), l, h});
        int i = 0;
        while (i < n && h[i] == h_max) h[i++] = 1;
        if (i == n) break;
        ++h[i];
    }
    std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
        if (a.cost != b.cost) return a.cost < b.cost;
        return a.ell < b.ell;
    });

    // thin the curves for the pairwise check
    std::vector<std::vector<Vec>> thin(k);
    for (int i = 0; i < k && i < static_cast<int>(curves_x.size()); ++i) {
        const auto& c = curves_x[i];
        std::size_t stride = std::max<std::size_t>(1, c.size() / 1500);
        for (std::size_t j = 0; j < c.size(); j += stride)
            if (lattice_distance(c[j]) > vertex_exclusion) thin[i].push_back(c[j]);
    }

    for (const Cand& cd : cands) {
        bool closes = true;
        for (int i = 0; i < n; ++i)
            if (((cd.ell + 1) * total[i]) % cd.h[i] != 0) closes = false;
        if (!closes) continue;
        // start vertices of the (ell+1)k lifted curves must be distinct in T^n_h
        std::vector<IVec> offsets;
        IVec s = IVec::Zero(n);
        for (int m = 0; m <= cd.ell; ++m)
            for (int j = 0; j < k; ++j) {
                offsets.push_back(s);
                s += classes[j];
            }
        std::vector<IVec> verts;
        bool distinct = true;
        for (const auto& o : offsets) {
            IVec v(n);
            for (int i = 0; i < n; ++i) v[i] = ((o[i] % cd.h[i]) + cd.h[i]) % cd.h[i];
            for (const auto& w : verts)
                if (w == v) distinct = false;
            verts.push_back(v);
        }
        if (!distinct) continue;
        double sep = std::numeric_limits<double>::infinity();
        bool have_curves = !curves_x.empty();
        if (have_curves) {
            const int L = static_cast<int>(offsets.size());
            for (int a = 0; a < L; ++a)
                for (int b = a + 1; b < L; ++b) {
                    const auto& ca = thin[a % k];
                    const auto& cb = thin[b % k];
                    Vec oa = offsets[a].cast<double>(), ob = offsets[b].cast<double>();
                    for (const Vec& p : ca)
                        for (const Vec& q : cb) sep = std::min(sep, torus_distance(p + oa, q + ob, cd.h));
                }
        }
        if (have_curves && !(sep > sep_tol)) continue;
        HomoclinicChain ch;
        for (int j = 0; j < k; ++j) ch.order.push_back(j);
        ch.classes = classes;
        ch.h = cd.h;
        ch.ell = cd.ell;
        ch.separation = sep;
        return ch;
    }
    throw Error("NoCoveringFound", "no covering within the search bounds");
}

}  // namespace nhic
