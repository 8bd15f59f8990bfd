#include "nhic/localframe.hpp"

#include <Eigen/Eigenvalues>
#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

namespace nhic {

namespace {

double nan() { return std::numeric_limits<double>::quiet_NaN(); }

Vec eval_vec(const PolyVec& p, const Vec& x) {
    Vec r(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) r[i] = p[i].eval(x.data());
    return r;
}

Mat eval_mat(const std::vector<PolyVec>& h, const Vec& x) {
    const int n = static_cast<int>(h.size());
    Mat m(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) m(i, j) = h[i][j].eval(x.data());
    return m;
}

// Generating function sum_k <P_k(x), x>/(k+1) of a graph map P.
Poly generating_function(const PolyVec& P, int max_deg) {
    const int n = static_cast<int>(P.size());
    const int D = P[0].degree();
    Poly F(n, D);
    for (int i = 0; i < n; ++i) {
        Poly xi = Poly::variable(n, D, i);
        for (int k = 2; k <= max_deg; ++k) {
            Poly hk = P[i].homogeneous(k);
            if (hk.max_abs() == 0.0) continue;
            F += (hk * xi) * (1.0 / (k + 1));
        }
    }
    return F;
}

// Directions on the unit sphere in R^n used for residual sampling.
std::vector<Vec> sphere_samples(int n, int count) {
    std::vector<Vec> out;
    if (n == 1) {
        out.push_back(Vec::Constant(1, 1.0));
        out.push_back(Vec::Constant(1, -1.0));
        return out;
    }
    if (n == 2) {
        for (int k = 0; k < count; ++k) {
            double t = 2.0 * std::numbers::pi * k / count;
            Vec d(2);
            d << std::cos(t), std::sin(t);
            out.push_back(d);
        }
        return out;
    }
    std::mt19937_64 rng(12345);
    std::normal_distribution<double> N(0.0, 1.0);
    for (int k = 0; k < count; ++k) {
        Vec d(n);
        for (int i = 0; i < n; ++i) d[i] = N(rng);
        out.push_back(d.normalized());
    }
    for (int i = 0; i < n; ++i) {
        out.push_back(Vec::Unit(n, i));
        out.push_back(-Vec::Unit(n, i));
    }
    return out;
}

}  // namespace

Vec shift_to(const Vec& z, const IVec& c) {
    Vec r = z;
    for (int i = 0; i < c.size(); ++i) r[i] -= c[i];
    return r;
}

Vec shift_from(const Vec& z, const IVec& c) {
    Vec r = z;
    for (int i = 0; i < c.size(); ++i) r[i] += c[i];
    return r;
}

Vec LocalChart::to_local(const Vec& z) const {
    Vec lin = L_inv * z;
    if (is_linear()) return lin;
    Vec u = lin.head(n), v = lin.tail(n);
    Vec p = u - eval_vec(grad_F_u, v);
    Vec q = v - eval_vec(grad_F_v, p);
    Vec w(2 * n);
    w << p, q;
    return w;
}

Vec LocalChart::from_local(const Vec& w) const {
    if (is_linear()) return L * w;
    Vec p = w.head(n), q = w.tail(n);
    Vec qp = q + eval_vec(grad_F_v, p);
    Vec u = p + eval_vec(grad_F_u, qp);
    Vec lin(2 * n);
    lin << u, qp;
    return L * lin;
}

Mat LocalChart::to_local_jacobian(const Vec& z) const {
    if (is_linear()) return L_inv;
    Vec lin = L_inv * z;
    Vec v = lin.tail(n);
    Vec p = lin.head(n) - eval_vec(grad_F_u, v);
    Mat S1 = Mat::Identity(2 * n, 2 * n);
    S1.topRightCorner(n, n) = -eval_mat(hess_F_u, v);
    Mat S2 = Mat::Identity(2 * n, 2 * n);
    S2.bottomLeftCorner(n, n) = -eval_mat(hess_F_v, p);
    return S2 * S1 * L_inv;
}

Mat LocalChart::from_local_jacobian(const Vec& w) const {
    if (is_linear()) return L;
    Vec p = w.head(n), q = w.tail(n);
    Vec qp = q + eval_vec(grad_F_v, p);
    Mat Hv = eval_mat(hess_F_v, p);
    Mat Hu = eval_mat(hess_F_u, qp);
    Mat Dlin(2 * n, 2 * n);
    // rows: u then q'; columns: p then q
    Dlin.bottomLeftCorner(n, n) = Hv;
    Dlin.bottomRightCorner(n, n).setIdentity();
    Dlin.topLeftCorner(n, n) = Mat::Identity(n, n) + Hu * Hv;
    Dlin.topRightCorner(n, n) = Hu;
    return L * Dlin;
}

Vec LocalChart::to_local_at(const Vec& z, const IVec& c) const { return to_local(shift_to(z, c)); }

Vec LocalChart::from_local_at(const Vec& w, const IVec& c) const { return shift_from(from_local(w), c); }

bool LocalChart::in_chart(const Vec& z_rel, double radius) const {
    Vec lin = L_inv * z_rel;
    if (!(lin.norm() <= linear_gate)) return false;
    return to_local(z_rel).norm() <= radius;
}

Vec LocalChart::local_field(const HamiltonianModel& model, const Vec& w) const {
    Vec z = from_local(w);
    return to_local_jacobian(z) * model.field(z);
}

double LocalChart::straightening_residual(const HamiltonianModel& model, double radius,
                                          int samples) const {
    double res = 0.0;
    for (const Vec& d : sphere_samples(n, samples)) {
        Vec w = Vec::Zero(2 * n);
        w.head(n) = radius * d;
        res = std::max(res, local_field(model, w).tail(n).norm());
        w.setZero();
        w.tail(n) = radius * d;
        res = std::max(res, local_field(model, w).head(n).norm());
    }
    return res;
}

double LocalChart::graph_residual(double radius, bool unstable, int samples) const {
    // Residual of the invariance equation for the truncated nonlinearity, evaluated in
    // linear coordinates with the exact field supplied through rho's polynomial gradient.
    double res = 0.0;
    PolyVec grho = gradient(rho);
    const PolyVec& G = unstable ? unstable_graph : stable_graph;
    for (const Vec& d : sphere_samples(n, samples)) {
        Vec s = radius * d;
        Vec g = is_linear() ? Vec::Zero(n) : eval_vec(G, s);
        Vec u = unstable ? s : g, v = unstable ? g : s;
        Vec a = u - v;
        Vec gr = is_linear() ? Vec::Zero(n) : eval_vec(grho, a);
        Vec udot = lambda.cwiseProduct(u) - gr;
        Vec vdot = -lambda.cwiseProduct(v) - gr;
        Mat DG = Mat::Zero(n, n);
        if (!is_linear())
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j) DG(i, j) = G[i].derivative(j).eval(s.data());
        Vec r = unstable ? Vec(vdot - DG * udot) : Vec(udot - DG * vdot);
        res = std::max(res, r.norm());
    }
    return res;
}

LocalChart build_chart(const HamiltonianModel& model, const SaddleSpectrum& spectrum,
                       const ChartOptions& opt) {
    if (opt.degree < 1) throw Error("ConfigInvalid", "chart degree must be >= 1");
    LocalChart ch;
    const int n = model.n();
    ch.n = n;
    ch.degree = opt.degree;

    Eigen::SelfAdjointEigenSolver<Mat> ea(model.A());
    Mat Ah = ea.eigenvectors() * ea.eigenvalues().cwiseSqrt().asDiagonal() * ea.eigenvectors().transpose();
    Mat Ahi = Ah.inverse();
    Mat D2V = model.potential().hessian(Vec::Zero(n));
    Mat S = Ah * D2V * Ah;
    S = 0.5 * (S + S.transpose());
    Eigen::SelfAdjointEigenSolver<Mat> es(S);
    Mat Q = es.eigenvectors();
    ch.lambda = es.eigenvalues().cwiseSqrt();
    for (int i = 0; i < n; ++i) {
        Vec x = Ah * Q.col(i);
        Eigen::Index k;
        x.cwiseAbs().maxCoeff(&k);
        if (x[k] < 0) Q.col(i) *= -1.0;
    }
    if ((ch.lambda - spectrum.lambda).norm() > 1e-8 * ch.lambda.norm())
        throw Error("SpectrumMismatch", "chart exponents disagree with the certified spectrum");
    Mat M = Ah * Q * (1.0 / (2.0 * ch.lambda.array()).sqrt()).matrix().asDiagonal();
    Mat N = Ahi * Q * (ch.lambda.array() / 2.0).sqrt().matrix().asDiagonal();
    ch.L.resize(2 * n, 2 * n);
    ch.L << M, -M, N, N;
    ch.L_inv = ch.L.inverse();

    const int d = opt.degree;
    if (d >= 2) {
        const int Dg = d + 1;
        Poly W = model.potential().taylor(Dg).lower_order(3);
        PolyVec xs;
        for (int j = 0; j < n; ++j) {
            Poly xj(n, Dg);
            for (int k = 0; k < n; ++k) xj += Poly::variable(n, Dg, k) * M(j, k);
            xs.push_back(xj);
        }
        ch.rho = W.compose(xs) * -1.0;
        PolyVec grho = gradient(ch.rho);

        PolyVec G(n, Poly(n, Dg));
        PolyVec uvars;
        for (int k = 0; k < n; ++k) uvars.push_back(Poly::variable(n, Dg, k));
        const MonomialBasis& B = G[0].basis();
        for (int k = 2; k <= d; ++k) {
            PolyVec a(n);
            for (int i = 0; i < n; ++i) a[i] = uvars[i] - G[i];
            PolyVec g(n);
            for (int i = 0; i < n; ++i) g[i] = grho[i].compose(a);
            for (int i = 0; i < n; ++i) {
                Poly rhs = g[i] * -1.0;
                for (int j = 0; j < n; ++j) rhs += G[i].derivative(j) * g[j];
                for (int m = B.degree_start[k]; m < B.degree_start[k + 1]; ++m) {
                    double den = ch.lambda[i];
                    for (int t = 0; t < n; ++t) den += B.exps[m][t] * ch.lambda[t];
                    if (std::abs(den) < 1e-9)
                        throw Error("SmallDivisor", "resonant denominator in manifold expansion");
                    G[i][m] = rhs[m] / den;
                }
            }
        }
        ch.unstable_graph = G;
        PolyVec negv;
        for (int k = 0; k < n; ++k) negv.push_back(uvars[k] * -1.0);
        for (int i = 0; i < n; ++i) ch.stable_graph.push_back(G[i].compose(negv) * -1.0);

        ch.F_u = generating_function(ch.stable_graph, d);
        ch.grad_F_u = gradient(ch.F_u);
        for (auto& p : ch.grad_F_u) p = p.truncated(d);
        ch.hess_F_u = hessian(ch.F_u);

        // unstable graph after the first shear: q' = V'(p'), p' = u - grad F_u(G(u))
        PolyVec uofp = uvars;
        for (int it = 0; it < d + 1; ++it) {
            PolyVec Gu(n);
            for (int i = 0; i < n; ++i) Gu[i] = G[i].compose(uofp).truncated(d);
            PolyVec next(n);
            for (int i = 0; i < n; ++i) next[i] = (uvars[i] + ch.grad_F_u[i].compose(Gu)).truncated(d);
            uofp = next;
        }
        PolyVec Vp(n);
        for (int i = 0; i < n; ++i) Vp[i] = G[i].compose(uofp).truncated(d);
        ch.F_v = generating_function(Vp, d);
        ch.grad_F_v = gradient(ch.F_v);
        for (auto& p : ch.grad_F_v) p = p.truncated(d);
        ch.hess_F_v = hessian(ch.F_v);
    } else {
        ch.degree = 1;
        ch.rho = Poly(n, 2);
    }

    auto residual_at = [&](double rad) {
        ch.linear_gate = 2.0 * rad;
        return ch.straightening_residual(model, rad);
    };
    if (opt.r_prime > 0.0) {
        ch.r_prime = opt.r_prime;
        ch.residual_bound = residual_at(opt.r_prime);
        ch.residual_profile.push_back({opt.r_prime, ch.residual_bound});
        if (ch.residual_bound >= opt.residual_target && !opt.allow_large_radius)
            throw Error("RadiusTooLarge", "straightening residual " + std::to_string(ch.residual_bound) +
                                              " exceeds target at r'=" + std::to_string(opt.r_prime));
    } else {
        double rad = opt.max_radius;
        ch.r_prime = 0.0;
        for (int k = 0; k < 40; ++k, rad *= 0.5) {
            double res = residual_at(rad);
            ch.residual_profile.push_back({rad, res});
            if (res < opt.residual_target) {
                ch.r_prime = rad;
                ch.residual_bound = res;
                break;
            }
        }
        if (ch.r_prime == 0.0) throw Error("RadiusTooLarge", "no dyadic radius meets the residual target");
    }
    ch.linear_gate = 2.0 * ch.r_prime;
    return ch;
}

double hamiltonian_in_local(const LocalChart& chart, const HamiltonianModel& model, const Vec& w) {
    if (!(w.norm() <= 2.0 * chart.r_prime))
        throw Error("OutOfChart", "local point outside the chart ball");
    return model.H(chart.from_local(w));
}

std::string to_string(SectionSide s) {
    switch (s) {
        case SectionSide::UPlus: return "u1=+r";
        case SectionSide::UMinus: return "u1=-r";
        case SectionSide::VPlus: return "v1=+r";
        case SectionSide::VMinus: return "v1=-r";
        case SectionSide::Diagonal: return "u1=v1";
        case SectionSide::AntiDiagonal: return "u1=-v1";
    }
    return "?";
}

double section_value(SectionSide side, const Vec& w, double r) {
    const int n = static_cast<int>(w.size()) / 2;
    switch (side) {
        case SectionSide::UPlus: return w[0] - r;
        case SectionSide::UMinus: return w[0] + r;
        case SectionSide::VPlus: return w[n] - r;
        case SectionSide::VMinus: return w[n] + r;
        case SectionSide::Diagonal: return w[0] - w[n];
        case SectionSide::AntiDiagonal: return w[0] + w[n];
    }
    return nan();
}

Vec section_gradient_local(SectionSide side, int n) {
    Vec g = Vec::Zero(2 * n);
    switch (side) {
        case SectionSide::UPlus:
        case SectionSide::UMinus: g[0] = 1.0; break;
        case SectionSide::VPlus:
        case SectionSide::VMinus: g[n] = 1.0; break;
        case SectionSide::Diagonal: g[0] = 1.0; g[n] = -1.0; break;
        case SectionSide::AntiDiagonal: g[0] = 1.0; g[n] = 1.0; break;
    }
    return g;
}

EventSpec section_event(const LocalChart& chart, SectionSide side, double r, const IVec& c,
                        Direction dir, double gate_radius, const std::string& name) {
    EventSpec e;
    e.name = name.empty() ? to_string(side) : name;
    const LocalChart* ch = &chart;
    e.g = [ch, side, r, c, gate_radius](const Vec& z) {
        Vec zr = shift_to(z, c);
        if (!((ch->L_inv * zr).norm() <= ch->linear_gate)) return nan();
        Vec w = ch->to_local(zr);
        if (!(w.norm() <= gate_radius)) return nan();
        return section_value(side, w, r);
    };
    e.grad = [ch, side, c](const Vec& z) {
        Vec zr = shift_to(z, c);
        return Vec(ch->to_local_jacobian(zr).transpose() * section_gradient_local(side, ch->n));
    };
    e.direction = dir;
    return e;
}

EventSpec ball_event(const LocalChart& chart, double R, const IVec& c, Direction dir,
                     const std::string& name) {
    EventSpec e;
    e.name = name.empty() ? "ball" : name;
    const LocalChart* ch = &chart;
    e.g = [ch, R, c](const Vec& z) {
        Vec zr = shift_to(z, c);
        if (!((ch->L_inv * zr).norm() <= ch->linear_gate)) return nan();
        return ch->to_local(zr).norm() - R;
    };
    e.grad = [ch, c](const Vec& z) {
        Vec zr = shift_to(z, c);
        Vec w = ch->to_local(zr);
        double nw = w.norm();
        Vec gw = nw > 0 ? Vec(w / nw) : Vec(Vec::Zero(w.size()));
        return Vec(ch->to_local_jacobian(zr).transpose() * gw);
    };
    e.direction = dir;
    return e;
}

IVec nearest_lattice(const Vec& z, int n) {
    IVec c(n);
    for (int i = 0; i < n; ++i) c[i] = static_cast<int>(std::lround(z[i]));
    return c;
}

EventSpec lattice_section_event(const LocalChart& chart, SectionSide side, double r, Direction dir,
                                double gate_radius, const std::string& name) {
    EventSpec e;
    e.name = name.empty() ? to_string(side) : name;
    const LocalChart* ch = &chart;
    e.g = [ch, side, r, gate_radius](const Vec& z) {
        if (!z.allFinite()) return nan();
        Vec zr = shift_to(z, nearest_lattice(z, ch->n));
        if (!((ch->L_inv * zr).norm() <= ch->linear_gate)) return nan();
        Vec w = ch->to_local(zr);
        if (!(w.norm() <= gate_radius)) return nan();
        return section_value(side, w, r);
    };
    e.grad = [ch, side](const Vec& z) {
        Vec zr = shift_to(z, nearest_lattice(z, ch->n));
        return Vec(ch->to_local_jacobian(zr).transpose() * section_gradient_local(side, ch->n));
    };
    e.direction = dir;
    return e;
}

EventSpec lattice_ball_event(const LocalChart& chart, double R, Direction dir, const std::string& name) {
    EventSpec e;
    e.name = name.empty() ? "ball" : name;
    const LocalChart* ch = &chart;
    e.g = [ch, R](const Vec& z) {
        if (!z.allFinite()) return nan();
        Vec zr = shift_to(z, nearest_lattice(z, ch->n));
        if (!((ch->L_inv * zr).norm() <= ch->linear_gate)) return nan();
        return ch->to_local(zr).norm() - R;
    };
    e.direction = dir;
    return e;
}

std::vector<Mat> local_fundamentals(const LocalChart& chart, const VariationalSegment& run) {
    std::vector<Mat> out;
    Mat D0inv = chart.to_local_jacobian(run.base.states.front()).inverse();
    for (std::size_t k = 0; k < run.fundamental.size(); ++k)
        out.push_back(chart.to_local_jacobian(run.base.states[k]) * run.fundamental[k] * D0inv);
    return out;
}

namespace {

void cone_split(ConeFamily fam, int n, int k, const Vec& xi, Vec& major, Vec& minor) {
    if (fam == ConeFamily::KPlus) {
        major = xi.tail(n);
        minor = xi.head(n);
        return;
    }
    int kk = fam == ConeFamily::KMinusK ? k : 0;
    major = xi.segment(kk, n - kk);
    minor.resize(kk + n);
    minor << xi.head(kk), xi.tail(n);
}

}  // namespace

ConeReport cone_check(const LocalChart& chart, const std::vector<double>& times,
                      const std::vector<Mat>& local_psi, const ConeParams& cone, ConeFamily family,
                      int n_vectors, unsigned seed) {
    const int n = chart.n;
    const int k = family == ConeFamily::KMinusK ? cone.k : 0;
    if (k < 0 || k >= n) throw Error("ConfigInvalid", "cone split index out of range");
    ConeReport rep;
    rep.vectors = n_vectors;
    rep.samples = static_cast<int>(times.size());
    rep.min_margin = std::numeric_limits<double>::infinity();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> N(0.0, 1.0);
    const int nmaj = family == ConeFamily::KPlus ? n : n - k;
    const int nmin = 2 * n - nmaj;
    const std::size_t K = local_psi.size();
    Mat PsiTinv;
    if (family == ConeFamily::KPlus) PsiTinv = local_psi.back().inverse();
    for (int s = 0; s < n_vectors; ++s) {
        Vec a(nmaj), b(nmin);
        for (int i = 0; i < nmaj; ++i) a[i] = N(rng);
        for (int i = 0; i < nmin; ++i) b[i] = N(rng);
        a.normalize();
        b = b.normalized() * cone.alpha;
        Vec xi(2 * n);
        if (family == ConeFamily::KPlus) {
            xi << b, a;
        } else {
            xi << b.head(k), a, b.tail(n);
        }
        for (std::size_t j = 0; j < K; ++j) {
            Vec img;
            if (family == ConeFamily::KPlus) {
                if (j + 1 == K) continue;
                img = local_psi[j] * (PsiTinv * xi);
            } else {
                if (j == 0) continue;
                img = local_psi[j] * xi;
            }
            Vec major, minor;
            cone_split(family, n, k, img, major, minor);
            double mn = minor.norm();
            double margin = mn == 0.0 ? std::numeric_limits<double>::infinity()
                                      : cone.alpha * major.norm() / mn - 1.0;
            if (margin < rep.min_margin) {
                rep.min_margin = margin;
                if (margin <= 0.0) {
                    rep.violation_time = times[j];
                    rep.violation_vector = xi;
                }
            }
        }
    }
    rep.invariant = rep.min_margin > 0.0;
    return rep;
}

std::pair<double, double> cone_alpha_range(const Vec& lambda, int k, double c, double r) {
    const double cr = c * r;
    double lo = cr / (lambda[0] - cr), hi = lambda[0] / cr - 1.0;
    if (k >= 1 && k < lambda.size()) {
        double B = (lambda[k] - lambda[k - 1]) / cr - 2.0;
        if (B <= 2.0) return {std::numeric_limits<double>::infinity(), 0.0};
        double disc = std::sqrt(B * B - 4.0);
        lo = std::max(lo, 0.5 * (B - disc));
        hi = std::min(hi, 0.5 * (B + disc));
    }
    return {lo, hi};
}

std::string chart_to_json(const LocalChart& ch) {
    using nlohmann::json;
    json j;
    j["n"] = ch.n;
    j["degree"] = ch.degree;
    j["lambda"] = std::vector<double>(ch.lambda.data(), ch.lambda.data() + ch.n);
    json L = json::array();
    for (int i = 0; i < ch.L.rows(); ++i) {
        json row = json::array();
        for (int k = 0; k < ch.L.cols(); ++k) row.push_back(ch.L(i, k));
        L.push_back(row);
    }
    j["linear_matrix"] = L;
    auto dump_poly = [](const Poly& p) {
        json terms = json::array();
        if (p.size() == 0) return terms;
        const MonomialBasis& B = p.basis();
        for (int m = 0; m < p.size(); ++m)
            if (p[m] != 0.0) terms.push_back({{"exp", B.exps[m]}, {"c", p[m]}});
        return terms;
    };
    if (!ch.is_linear()) {
        j["F_u"] = dump_poly(ch.F_u);
        j["F_v"] = dump_poly(ch.F_v);
        json G = json::array();
        for (const auto& g : ch.unstable_graph) G.push_back(dump_poly(g));
        j["unstable_graph"] = G;
    }
    j["r_prime"] = ch.r_prime;
    j["residual_bound"] = ch.residual_bound;
    json prof = json::array();
    for (auto& [a, b] : ch.residual_profile) prof.push_back({a, b});
    j["residual_profile"] = prof;
    return j.dump(2);
}

}  // namespace nhic
