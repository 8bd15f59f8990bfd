#include "nhic/model.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>

namespace nhic {

namespace {
constexpr double kTwoPi = 2.0 * std::numbers::pi;
}

TorusPotential::TorusPotential(int n, std::vector<Mode> modes, double c0)
    : n_(n), modes_(std::move(modes)), c0_(c0) {
    for (const auto& md : modes_)
        if (md.m.size() != n) throw Error("ConfigInvalid", "mode dimension mismatch");
    v0_ = c0_;
    for (const auto& md : modes_) v0_ += md.a;
}

double TorusPotential::value(const Vec& x) const {
    double v = v0_;
    for (const auto& md : modes_) {
        double th = kTwoPi * md.m.cast<double>().dot(x);
        double sh = std::sin(0.5 * th);
        v += -2.0 * md.a * sh * sh + md.b * std::sin(th);
    }
    return v;
}

Vec TorusPotential::gradient(const Vec& x) const {
    Vec g = Vec::Zero(n_);
    for (const auto& md : modes_) {
        Vec k = kTwoPi * md.m.cast<double>();
        double th = k.dot(x);
        g += (-md.a * std::sin(th) + md.b * std::cos(th)) * k;
    }
    return g;
}

Mat TorusPotential::hessian(const Vec& x) const {
    Mat h = Mat::Zero(n_, n_);
    for (const auto& md : modes_) {
        Vec k = kTwoPi * md.m.cast<double>();
        double th = k.dot(x);
        h -= (md.a * std::cos(th) + md.b * std::sin(th)) * (k * k.transpose());
    }
    return h;
}

void TorusPotential::value_gradient_hessian(const Vec& x, double* v, Vec* g, Mat* h) const {
    if (v) *v = v0_;
    if (g) g->setZero(n_);
    if (h) h->setZero(n_, n_);
    for (const auto& md : modes_) {
        double th = 0.0;
        for (int i = 0; i < n_; ++i) th += kTwoPi * md.m[i] * x[i];
        double c = std::cos(th), s = std::sin(th);
        double cv = md.a * c + md.b * s;
        double dv = -md.a * s + md.b * c;
        if (v) {
            double sh = std::sin(0.5 * th);
            *v += -2.0 * md.a * sh * sh + md.b * s;
        }
        for (int i = 0; i < n_; ++i) {
            double ki = kTwoPi * md.m[i];
            if (g) (*g)[i] += dv * ki;
            if (h)
                for (int j = 0; j < n_; ++j) (*h)(i, j) -= cv * ki * kTwoPi * md.m[j];
        }
    }
}

TorusPotential TorusPotential::translated(const Vec& x0) const {
    std::vector<Mode> out;
    for (const auto& md : modes_) {
        double th = kTwoPi * md.m.cast<double>().dot(x0);
        Mode m2 = md;
        m2.a = md.a * std::cos(th) + md.b * std::sin(th);
        m2.b = md.b * std::cos(th) - md.a * std::sin(th);
        out.push_back(m2);
    }
    TorusPotential t(n_, out, c0_);
    t.c0_ = c0_ - value(x0);
    t.v0_ = 0.0;
    return t;
}

Poly TorusPotential::taylor(int deg) const {
    Poly p = Poly::constant(n_, deg, c0_);
    for (const auto& md : modes_) {
        Poly th(n_, deg);
        for (int i = 0; i < n_; ++i) th += (kTwoPi * md.m[i]) * Poly::variable(n_, deg, i);
        // cos and sin series in the linear form th
        Poly pw = Poly::constant(n_, deg, 1.0);
        double fact = 1.0;
        for (int k = 0; k <= deg; ++k) {
            if (k > 0) {
                pw = pw * th;
                fact *= k;
            }
            double ck = 0.0, sk = 0.0;
            switch (k % 4) {
                case 0: ck = 1.0; break;
                case 1: sk = 1.0; break;
                case 2: ck = -1.0; break;
                case 3: sk = -1.0; break;
            }
            double coef = (md.a * ck + md.b * sk) / fact;
            if (coef != 0.0) p += coef * pw;
        }
    }
    return p;
}

HamiltonianModel::HamiltonianModel(const Mat& A, const TorusPotential& V, int grid_per_axis)
    : n_(V.dim()), A_(A) {
    if (A.rows() != n_ || A.cols() != n_) throw Error("ConfigInvalid", "A has wrong shape");
    if ((A - A.transpose()).norm() > 1e-12 * (1.0 + A.norm()))
        throw Error("ConfigInvalid", "A is not symmetric");
    Eigen::SelfAdjointEigenSolver<Mat> es(A);
    if (es.eigenvalues().minCoeff() <= 0.0) throw Error("ConfigInvalid", "A is not positive definite");

    // Coarse grid search for the global minimum, then Newton polish.
    int g = grid_per_axis;
    if (n_ >= 4) g = std::min(g, 16);
    long total = 1;
    for (int i = 0; i < n_; ++i) total *= g;
    std::vector<double> vals(total);
    Vec x(n_);
    for (long idx = 0; idx < total; ++idx) {
        long r = idx;
        for (int i = 0; i < n_; ++i) {
            x[i] = static_cast<double>(r % g) / g;
            r /= g;
        }
        vals[idx] = V.value(x);
    }
    auto point = [&](long idx) {
        Vec p(n_);
        long r = idx;
        for (int i = 0; i < n_; ++i) {
            p[i] = static_cast<double>(r % g) / g;
            r /= g;
        }
        return p;
    };
    auto newton = [&](Vec p) {
        for (int it = 0; it < 50; ++it) {
            Vec gr = V.gradient(p);
            Mat h = V.hessian(p);
            Vec dx = h.ldlt().solve(gr);
            p -= dx;
            if (dx.norm() < 1e-15) break;
        }
        return p;
    };
    // local minima on the periodic grid
    std::vector<std::pair<double, Vec>> minima;
    for (long idx = 0; idx < total; ++idx) {
        bool is_min = true;
        long stride = 1;
        for (int i = 0; i < n_ && is_min; ++i) {
            long coord = (idx / stride) % g;
            long up = idx + (((coord + 1) % g) - coord) * stride;
            long dn = idx + (((coord + g - 1) % g) - coord) * stride;
            if (vals[up] < vals[idx] || vals[dn] < vals[idx]) is_min = false;
            stride *= g;
        }
        if (is_min) {
            Vec p = newton(point(idx));
            minima.emplace_back(V.value(p), p);
        }
    }
    std::sort(minima.begin(), minima.end(), [](auto& a, auto& b) { return a.first < b.first; });
    Vec x0 = minima.front().second;
    for (int i = 0; i < n_; ++i) {
        x0[i] -= std::round(x0[i]);
        if (std::abs(x0[i]) < 1e-14) x0[i] = 0.0;
    }
    norm_.x0 = x0;
    norm_.v_min = minima.front().first;
    norm_.grid_points_per_axis = g;
    norm_.grid_gap = std::numeric_limits<double>::infinity();
    for (std::size_t k = 1; k < minima.size(); ++k) {
        Vec d = minima[k].second - x0;
        for (int i = 0; i < n_; ++i) d[i] -= std::round(d[i]);
        if (d.norm() > 1e-6) {
            norm_.grid_gap = std::min(norm_.grid_gap, minima[k].first - norm_.v_min);
        }
    }
    norm_.unique_on_grid = norm_.grid_gap > 1e-8;
    V_ = V.translated(x0);
}

HamiltonianModel HamiltonianModel::pendulum() {
    Mode m;
    m.m = IVec::Constant(1, 1);
    m.a = -1.0;
    return HamiltonianModel(Mat::Identity(1, 1), TorusPotential(1, {m}, 1.0));
}

HamiltonianModel HamiltonianModel::coupled_pendula(double coupling) {
    std::vector<Mode> modes;
    Mode m1;
    m1.m = IVec(2);
    m1.m << 1, 0;
    m1.a = -1.0;
    Mode m2;
    m2.m = IVec(2);
    m2.m << 0, 1;
    m2.a = -2.0;
    Mode m3;
    m3.m = IVec(2);
    m3.m << 1, -1;
    m3.a = -coupling;
    modes = {m1, m2, m3};
    return HamiltonianModel(Mat::Identity(2, 2), TorusPotential(2, modes, 3.0 + coupling));
}

double HamiltonianModel::H(const Vec& z) const {
    Vec y = z.tail(n_);
    return 0.5 * y.dot(A_ * y) - V_.value(z.head(n_));
}

Vec HamiltonianModel::gradH(const Vec& z) const {
    Vec g(2 * n_);
    g.head(n_) = -V_.gradient(z.head(n_));
    g.tail(n_) = A_ * z.tail(n_);
    return g;
}

Vec HamiltonianModel::field(const Vec& z) const {
    Vec f(2 * n_);
    f.head(n_) = A_ * z.tail(n_);
    f.tail(n_) = V_.gradient(z.head(n_));
    return f;
}

Mat HamiltonianModel::field_jacobian(const Vec& z) const {
    Mat M = Mat::Zero(2 * n_, 2 * n_);
    M.topRightCorner(n_, n_) = A_;
    M.bottomLeftCorner(n_, n_) = V_.hessian(z.head(n_));
    return M;
}

Mat HamiltonianModel::hessH(const Vec& z) const {
    Mat M = Mat::Zero(2 * n_, 2 * n_);
    M.topLeftCorner(n_, n_) = -V_.hessian(z.head(n_));
    M.bottomRightCorner(n_, n_) = A_;
    return M;
}

void HamiltonianModel::field_and_jacobian(const double* z, double* f, Mat* DX, Vec* gH,
                                          Mat* HH) const {
    Vec x = Eigen::Map<const Vec>(z, n_);
    Eigen::Map<const Vec> y(z + n_, n_);
    Vec g;
    Mat h;
    V_.value_gradient_hessian(x, nullptr, &g, (DX || HH) ? &h : nullptr);
    Vec Ay = A_ * y;
    for (int i = 0; i < n_; ++i) {
        f[i] = Ay[i];
        f[n_ + i] = g[i];
    }
    if (DX) {
        DX->setZero(2 * n_, 2 * n_);
        DX->topRightCorner(n_, n_) = A_;
        DX->bottomLeftCorner(n_, n_) = h;
    }
    if (gH) {
        gH->resize(2 * n_);
        gH->head(n_) = -g;
        gH->tail(n_) = Ay;
    }
    if (HH) {
        HH->setZero(2 * n_, 2 * n_);
        HH->topLeftCorner(n_, n_) = -h;
        HH->bottomRightCorner(n_, n_) = A_;
    }
}

Evaluation evaluate(const HamiltonianModel& model, const Vec& z) {
    return {model.H(z), model.gradH(z), model.field(z)};
}

SaddleSpectrum analyze_saddle(const HamiltonianModel& model, int nonresonance_order) {
    const int n = model.n();
    Vec zero = Vec::Zero(n);
    if (model.potential().gradient(zero).norm() > 1e-10)
        throw Error("NotAFixedPoint", "grad V(0) does not vanish");
    Mat D = model.potential().hessian(zero);
    Eigen::SelfAdjointEigenSolver<Mat> esD(D);
    SaddleSpectrum s;
    s.nonresonance_order = nonresonance_order;
    s.hessian_pd = esD.eigenvalues().minCoeff() > 0.0;
    if (!s.hessian_pd) throw Error("HessianNotPositiveDefinite", "D^2 V(0) is not positive definite");

    Eigen::SelfAdjointEigenSolver<Mat> esA(model.A());
    Mat Ah = esA.eigenvectors() * esA.eigenvalues().cwiseSqrt().asDiagonal() *
             esA.eigenvectors().transpose();
    Mat Ahi = esA.eigenvectors() * esA.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() *
              esA.eigenvectors().transpose();
    Eigen::SelfAdjointEigenSolver<Mat> es(Ah * D * Ah);
    s.lambda = es.eigenvalues().cwiseSqrt();
    s.distinctness_margin = n > 1 ? std::numeric_limits<double>::infinity() : s.lambda[0];
    for (int i = 1; i < n; ++i)
        s.distinctness_margin = std::min(s.distinctness_margin, s.lambda[i] - s.lambda[i - 1]);
    if (n > 1 && s.distinctness_margin < 1e-8)
        throw Error("RepeatedExponent", "exponent gap below 1e-8");

    Mat M = model.field_jacobian(Vec::Zero(2 * n));
    s.xi_plus.resize(2 * n, n);
    s.xi_minus.resize(2 * n, n);
    s.max_residual = 0.0;
    for (int i = 0; i < n; ++i) {
        Vec q = es.eigenvectors().col(i);
        double l = s.lambda[i];
        Vec xi(2 * n);
        xi.head(n) = Ah * q / std::sqrt(2.0 * l);
        xi.tail(n) = Ahi * q * std::sqrt(l / 2.0);
        Eigen::Index imax;
        xi.head(n).cwiseAbs().maxCoeff(&imax);
        if (xi[imax] < 0) xi = -xi;
        xi.normalize();
        s.xi_plus.col(i) = xi;
        Vec xm = xi;
        xm.tail(n) = -xm.tail(n);
        s.xi_minus.col(i) = xm;
        s.max_residual = std::max(s.max_residual, (M * xi - l * xi).norm());
        s.max_residual = std::max(s.max_residual, (M * xm + l * xm).norm());
    }

    // finite-order nonresonance: <k, lambda> != 0 for 0 < |k|_1 <= N
    s.closest_resonance = std::numeric_limits<double>::infinity();
    IVec k = IVec::Zero(n);
    IVec worst = k;
    std::function<void(int, int)> rec = [&](int i, int budget) {
        if (i == n) {
            if (k.cwiseAbs().sum() == 0) return;
            double v = std::abs(k.cast<double>().dot(s.lambda));
            if (v < s.closest_resonance) {
                s.closest_resonance = v;
                worst = k;
            }
            return;
        }
        for (int e = -budget; e <= budget; ++e) {
            k[i] = e;
            rec(i + 1, budget - std::abs(e));
        }
        k[i] = 0;
    };
    rec(0, nonresonance_order);
    if (n > 1 && s.closest_resonance < 1e-9) {
        std::string ks;
        for (int i = 0; i < n; ++i) ks += (i ? "," : "") + std::to_string(worst[i]);
        throw Error("ResonanceDetected", "k=(" + ks + ")");
    }
    return s;
}

H1Certificate check_H1(const HamiltonianModel& model, const SaddleSpectrum& spec, int kappa) {
    (void)model;
    H1Certificate c;
    const int n = static_cast<int>(spec.lambda.size());
    double l1 = spec.lambda[0], ln = spec.lambda[n - 1];
    c.kappa_min = 2;
    while ((c.kappa_min - 1) * l1 <= ln) ++c.kappa_min;
    c.kappa = kappa;
    c.kappa_ok = (kappa - 1) * l1 > ln;
    c.hessian_pd = spec.hessian_pd;
    c.eigen_distinct = n == 1 || spec.distinctness_margin >= 1e-8;
    c.nonresonant = n == 1 || spec.closest_resonance >= 1e-9;
    if (!c.kappa_ok) c.failures.push_back("kappa below kappa_min");
    if (!c.hessian_pd) c.failures.push_back("Hessian not positive definite");
    if (!c.eigen_distinct) c.failures.push_back("repeated exponent");
    if (!c.nonresonant) c.failures.push_back("finite-order resonance");
    if (spec.max_residual > 1e-10) c.failures.push_back("eigenpair residual above 1e-10");
    c.passed = c.failures.empty();
    return c;
}

}  // namespace nhic
