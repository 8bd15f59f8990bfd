#pragma once

#include "nhic/common.hpp"
#include "nhic/poly.hpp"

#include <string>
#include <vector>

namespace nhic {

struct Mode {
    IVec m;
    double a = 0.0;  // cosine coefficient
    double b = 0.0;  // sine coefficient
};

// V(x) = c0 + sum_m a_m cos(2 pi m.x) + b_m sin(2 pi m.x)
class TorusPotential {
public:
    TorusPotential() = default;
    TorusPotential(int n, std::vector<Mode> modes, double c0 = 0.0);

    int dim() const { return n_; }
    const std::vector<Mode>& modes() const { return modes_; }
    double constant() const { return c0_; }

    double value(const Vec& x) const;
    Vec gradient(const Vec& x) const;
    Mat hessian(const Vec& x) const;
    void value_gradient_hessian(const Vec& x, double* v, Vec* g, Mat* h) const;

    // Shift so that the minimum found near x0 sits at the origin with value 0.
    TorusPotential translated(const Vec& x0) const;

    // Taylor polynomial of V at 0 up to total degree deg.
    Poly taylor(int deg) const;

private:
    int n_ = 0;
    std::vector<Mode> modes_;
    double c0_ = 0.0;
    double v0_ = 0.0;  // value at the origin; modes are summed as a(cos - 1) + b sin
};

struct NormalizationReport {
    Vec x0;                  // minimizer in original coordinates
    double v_min = 0.0;
    double grid_gap = 0.0;   // second-lowest basin value minus minimum on the grid
    bool unique_on_grid = true;
    int grid_points_per_axis = 0;
};

class HamiltonianModel {
public:
    HamiltonianModel() = default;
    // Normalizes V on construction: minimum to 0 and V(0)=0.
    HamiltonianModel(const Mat& A, const TorusPotential& V, int grid_per_axis = 64);

    static HamiltonianModel pendulum();
    static HamiltonianModel coupled_pendula(double coupling = 0.1);

    int n() const { return n_; }
    const Mat& A() const { return A_; }
    const TorusPotential& potential() const { return V_; }
    const NormalizationReport& normalization() const { return norm_; }

    double H(const Vec& z) const;
    Vec gradH(const Vec& z) const;
    Vec field(const Vec& z) const;           // X_H = J grad H = (A y, grad V)
    Mat field_jacobian(const Vec& z) const;  // [[0, A], [D^2 V, 0]]
    Mat hessH(const Vec& z) const;

    // Raw-pointer variants for the integrator hot loop.
    void field_and_jacobian(const double* z, double* f, Mat* DX, Vec* gH, Mat* HH) const;

private:
    int n_ = 0;
    Mat A_;
    TorusPotential V_;
    NormalizationReport norm_;
};

struct Evaluation {
    double H;
    Vec gradH;
    Vec XH;
};
Evaluation evaluate(const HamiltonianModel& model, const Vec& z);

struct SaddleSpectrum {
    Vec lambda;                  // strictly increasing
    Mat xi_plus;                 // columns: unit eigenvectors for +lambda_i
    Mat xi_minus;                // columns: (Xi_x, -Xi_y)
    int nonresonance_order = 8;
    bool hessian_pd = true;
    double distinctness_margin = 0.0;
    double max_residual = 0.0;
    double closest_resonance = 0.0;  // min |<k,lambda>| over 0<|k|_1<=N
};

SaddleSpectrum analyze_saddle(const HamiltonianModel& model, int nonresonance_order = 8);

struct H1Certificate {
    int kappa_min = 0;
    int kappa = 0;
    bool smoothness_ok = true;  // trigonometric polynomials are smooth
    bool kappa_ok = false;
    bool eigen_distinct = false;
    bool hessian_pd = false;
    bool nonresonant = false;
    bool passed = false;
    std::vector<std::string> failures;
};

H1Certificate check_H1(const HamiltonianModel& model, const SaddleSpectrum& spec, int kappa);

}  // namespace nhic
