#include "nhic/sectionmaps.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace nhic {

namespace {

bool is_u_side(SectionSide s) { return s == SectionSide::UPlus || s == SectionSide::UMinus; }
bool is_v_side(SectionSide s) { return s == SectionSide::VPlus || s == SectionSide::VMinus; }

std::vector<int> hat_indices(int n) {
    std::vector<int> idx;
    for (int i = 1; i < n; ++i) idx.push_back(i);
    for (int i = n + 1; i < 2 * n; ++i) idx.push_back(i);
    return idx;
}

Vec grad_h_local(const LocalChart& chart, const HamiltonianModel& model, const Vec& z) {
    Vec w = chart.to_local(z);
    return chart.from_local_jacobian(w).transpose() * model.gradH(z);
}

nlohmann::json mat_json(const Mat& M) {
    nlohmann::json a = nlohmann::json::array();
    for (int i = 0; i < M.rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (int j = 0; j < M.cols(); ++j) row.push_back(M(i, j));
        a.push_back(row);
    }
    return a;
}

nlohmann::json vec_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

}  // namespace

Vec hat_coordinates(const Vec& w) {
    const int n = static_cast<int>(w.size()) / 2;
    auto idx = hat_indices(n);
    Vec h(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) h[k] = w[idx[k]];
    return h;
}

Vec point_on_section(const LocalChart& chart, const HamiltonianModel& model, SectionSide side, double r,
                     const Vec& hat, double E) {
    const int n = chart.n;
    if (!is_u_side(side) && !is_v_side(side))
        throw Error("ConfigInvalid", "point_on_section needs a coordinate section");
    Vec w = Vec::Zero(2 * n);
    auto idx = hat_indices(n);
    for (std::size_t k = 0; k < idx.size(); ++k) w[idx[k]] = hat[k];
    const int fixed = is_u_side(side) ? 0 : n;
    const int free = is_u_side(side) ? n : 0;
    w[fixed] = (side == SectionSide::UPlus || side == SectionSide::VPlus) ? r : -r;
    double rest = 0.0;
    for (int i = 1; i < n; ++i) rest += chart.lambda[i] * w[i] * w[n + i];
    w[free] = (E - rest) / (chart.lambda[0] * w[fixed]);
    for (int it = 0; it < 50; ++it) {
        Vec z = chart.from_local(w);
        double f = model.H(z) - E;
        double g = (chart.from_local_jacobian(w).transpose() * model.gradH(z))[free];
        double step = f / g;
        w[free] -= step;
        if (std::abs(step) <= 1e-17 + 1e-15 * std::abs(w[free])) break;
    }
    return w;
}

Mat section_differential(const Mat& local_jacobian, const Vec& exit_field_local, SectionSide exit_side) {
    const int n = static_cast<int>(local_jacobian.rows()) / 2;
    Vec g = section_gradient_local(exit_side, n);
    double gx = g.dot(exit_field_local);
    if (std::abs(gx) < 1e-10) throw Error("TangentialExit", "exit field tangent to the section");
    Eigen::RowVectorXd nu = -(g.transpose() * local_jacobian) / gx;
    return local_jacobian + exit_field_local * nu;
}

Mat project_jacobian(const Mat& corrected, const Vec& gh_in, SectionSide entry_side) {
    const int n = static_cast<int>(corrected.rows()) / 2;
    auto idx = hat_indices(n);
    const int m = static_cast<int>(idx.size());
    Mat lift = Mat::Zero(2 * n, m);
    for (int j = 0; j < m; ++j) {
        Vec xi = Vec::Zero(2 * n);
        xi[idx[j]] = 1.0;
        double rest = gh_in.dot(xi);
        if (is_u_side(entry_side)) {
            xi[n] = -rest / gh_in[n];
        } else if (is_v_side(entry_side)) {
            xi[0] = -rest / gh_in[0];
        } else {
            double sgn = entry_side == SectionSide::Diagonal ? 1.0 : -1.0;
            double s = -rest / (gh_in[0] + sgn * gh_in[n]);
            xi[0] = s;
            xi[n] = sgn * s;
        }
        lift.col(j) = xi;
    }
    Mat full = corrected * lift;
    Mat P(m, m);
    for (int i = 0; i < m; ++i) P.row(i) = full.row(idx[i]);
    return P;
}

void fill_map_jacobians(const LocalChart& chart, const HamiltonianModel& model, const Vec& z_in,
                        SectionSide entry_side, const Vec& z_out, SectionSide exit_side, const Mat& Psi,
                        SectionMapResult& res) {
    Vec w_in = chart.to_local(z_in);
    Mat T_out = chart.to_local_jacobian(z_out);
    Mat D = T_out * Psi * chart.from_local_jacobian(w_in);
    Vec X_out = T_out * model.field(z_out);
    res.jacobian = Psi;
    res.local_jacobian = section_differential(D, X_out, exit_side);
    res.projected = project_jacobian(res.local_jacobian, grad_h_local(chart, model, z_in), entry_side);
    res.symplectic_defect = symplectic_defect(res.projected);
}

SectionMapResult outer_map(const LocalChart& chart, const HamiltonianModel& model, const Vec& z,
                           const HomoclinicOrbit& h, const MapOptions& opt) {
    const int n = chart.n;
    const double r = opt.r > 0 ? opt.r : h.r;
    SectionSide entry = h.exit_sign > 0 ? SectionSide::UPlus : SectionSide::UMinus;
    SectionSide target = h.entry_sign > 0 ? SectionSide::VPlus : SectionSide::VMinus;
    Direction dir = h.entry_sign > 0 ? Direction::Decreasing : Direction::Increasing;
    EventSpec ev = section_event(chart, target, r, h.klass, dir, chart.r_prime, "outer");
    RunOptions ro;
    ro.variational = opt.jacobian;
    ro.keep_dense = opt.keep_segment;
    if (opt.tube_radius > 0) {
        const auto* ref = &h.outer.states;
        const double R = opt.tube_radius;
        ro.observer = [ref, R](double, const Vec& p) {
            double best = std::numeric_limits<double>::infinity();
            for (const Vec& q : *ref) best = std::min(best, (q - p).norm());
            return best <= R;
        };
        ro.observer_error = "LeftTube";
    }
    EventRun run = integrate_events(model, z, opt.t_max, {ev}, opt.tol, ro);
    if (!run.hit) throw Error("EventNotReached", "outer map did not reach the entry section");
    SectionMapResult res;
    res.image = run.hit->z;
    res.lattice = h.klass;
    res.image_local = chart.to_local_at(res.image, h.klass);
    res.target = target;
    res.time = run.hit->t;
    res.energy = model.H(z);
    if (opt.keep_segment) res.segment = run.segment;
    if (opt.jacobian) {
        Vec out_rel = shift_to(res.image, h.klass);
        fill_map_jacobians(chart, model, z, entry, out_rel, target, run.hit->Psi, res);
    }
    (void)n;
    return res;
}

SectionMapResult inner_map(const LocalChart& chart, const HamiltonianModel& model, const Vec& z,
                           SectionSide entry_side, int expected_sign, const MapOptions& opt) {
    const int n = chart.n;
    const double E = model.H(z);
    const int es = E > 0 ? 1 : (E < 0 ? -1 : 0);
    if (es == 0 || (expected_sign != 0 && es != expected_sign))
        throw Error("WrongEnergySign", "inner map needs nonzero energy of the expected sign");
    Vec w0 = chart.to_local(z);
    const int entry_sign = w0[n] >= 0 ? 1 : -1;
    const int exit_sign = es > 0 ? entry_sign : -entry_sign;
    SectionSide target = exit_sign > 0 ? SectionSide::UPlus : SectionSide::UMinus;
    Direction dir = exit_sign > 0 ? Direction::Increasing : Direction::Decreasing;
    const double r = opt.r;
    EventSpec ev = section_event(chart, target, r, IVec::Zero(n), dir, chart.r_prime, "inner");
    RunOptions ro;
    ro.variational = opt.jacobian;
    ro.keep_dense = opt.keep_segment;
    const LocalChart* ch = &chart;
    ro.observer = [ch](double, const Vec& p) { return ch->in_chart(p, ch->r_prime); };
    ro.observer_error = "NotInInnerDomain";
    EventRun run = integrate_events(model, z, opt.t_max, {ev}, opt.tol, ro);
    if (!run.hit) throw Error("NotInInnerDomain", "inner map did not reach the exit section");
    SectionMapResult res;
    res.image = run.hit->z;
    res.lattice = IVec::Zero(n);
    res.image_local = chart.to_local(res.image);
    res.target = target;
    res.time = run.hit->t;
    res.energy = E;
    if (opt.keep_segment) res.segment = run.segment;
    if (opt.jacobian) fill_map_jacobians(chart, model, z, entry_side, res.image, target, run.hit->Psi, res);
    return res;
}

ExpansionReport verify_expansion_contraction(const SectionMapResult& inner, const Vec& lambda, double r,
                                             double c, double c_prime, int samples, unsigned seed) {
    ExpansionReport rep;
    const int m = static_cast<int>(inner.projected.rows()) / 2;
    if (m == 0) throw Error("ConfigInvalid", "expansion check needs n >= 2");
    const double t = inner.time;
    const double l1 = lambda[0], l2 = lambda[1];
    std::mt19937 gen(seed);
    std::normal_distribution<double> nd;
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    std::vector<std::pair<double, double>> data;  // (expansion ratio, vhat*/uhat*)
    for (int k = 0; k < samples; ++k) {
        Vec a(m), b(m);
        for (int i = 0; i < m; ++i) {
            a[i] = nd(gen);
            b[i] = nd(gen);
        }
        b *= ud(gen) * a.norm() / b.norm();
        Vec xi(2 * m);
        xi << a, b;
        Vec out = inner.projected * xi;
        data.push_back({out.head(m).norm() / a.norm(), out.tail(m).norm() / out.head(m).norm()});
    }
    rep.samples = samples;
    double min_rate = std::numeric_limits<double>::infinity();
    for (auto& [ex, ratio] : data) min_rate = std::min(min_rate, std::log(ex) / t);
    rep.min_expansion_log_rate = min_rate;
    rep.c_fit = std::max(0.0, (l2 - min_rate) / r);
    const double cu = c > 0 ? c : rep.c_fit;
    double need = 0.0;
    for (auto& [ex, ratio] : data) need = std::max(need, ratio / (r * std::exp(-(l1 - cu * r) * t) * t));
    rep.c_prime_fit = need;
    const double cp = c_prime > 0 ? c_prime : rep.c_prime_fit;
    for (auto& [ex, ratio] : data) {
        bool e_ok = std::log(ex) / t >= l2 - cu * r - 1e-12;
        bool c_ok = ratio <= cp * r * std::exp(-(l1 - cu * r) * t) * t * (1 + 1e-12);
        if (!e_ok || !c_ok) ++rep.violations;
    }
    rep.expansion_ok = rep.violations == 0;
    rep.contraction_ok = rep.violations == 0;
    return rep;
}

std::string map_to_json(const SectionMapResult& res) {
    nlohmann::json j;
    j["image"] = vec_json(res.image);
    j["image_local"] = vec_json(res.image_local);
    j["time"] = res.time;
    j["energy"] = res.energy;
    j["target"] = to_string(res.target);
    j["jacobian"] = mat_json(res.local_jacobian);
    j["projected"] = mat_json(res.projected);
    j["symplectic_defect"] = res.symplectic_defect;
    return j.dump(2);
}

}  // namespace nhic
