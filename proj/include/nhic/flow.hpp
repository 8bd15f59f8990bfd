#pragma once

#include "nhic/common.hpp"
#include "nhic/model.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace nhic {

struct Tolerances {
    double rtol = 1e-12;
    double atol = 1e-14;
    double h_max = 0.25;
    long max_steps = 5'000'000;
    double blowup = 1e6;
};

// Dormand-Prince 8(5,3) with 7th-order dense output (Hairer-Wanner DOP853).
class Dop853 {
public:
    using Rhs = std::function<void(double, const double*, double*)>;

    Dop853(int dim, Rhs f, const Tolerances& tol);

    void start(double t0, const double* y0, double t_end);
    // Advances one accepted step; returns false once t_end has been reached.
    bool step();

    int dim() const { return n_; }
    double t() const { return t_; }
    double t_old() const { return told_; }
    double h() const { return hlast_; }
    const double* y() const { return w_.data(); }
    const double* y_old() const { return wold_.data(); }
    bool finished() const { return done_; }
    long steps() const { return naccpt_; }

    // Dense output on [t_old, t] of the last accepted step.
    void dense(double ti, double* out) const;
    const std::vector<double>& dense_coefficients() const { return rc_; }

private:
    double hinit();
    void step12();
    double error_estimation();
    void prepare_dense();

    int n_;
    Rhs f_;
    Tolerances tol_;
    double t_ = 0, told_ = 0, tend_ = 0, h_ = 0, hlast_ = 0, posneg_ = 1, facold_ = 1e-4;
    bool done_ = false, reject_ = false;
    long nstep_ = 0, naccpt_ = 0;
    std::vector<double> w_, wold_, ww1_, k1_, k2_, k3_, k4_, k5_, k6_, k7_, k8_, k9_, k10_;
    std::vector<double> rc_;  // 8 blocks of n
};

// One accepted step's dense interpolant.
struct DenseStep {
    double t0 = 0.0;
    double h = 0.0;
    std::vector<double> rc;  // 8*dim
};

double dense_eval_component(const DenseStep& s, int dim, int i, double t);
void dense_eval(const DenseStep& s, int dim, double t, double* out);

struct OrbitSegment {
    int n = 0;
    std::vector<double> times;
    std::vector<Vec> states;
    double energy = 0.0;
    std::vector<DenseStep> steps;
    int dense_dim = 0;  // dimension stored in dense steps (2n or augmented)

    double t_begin() const { return times.front(); }
    double t_end() const { return times.back(); }
    Vec at(double t) const;  // phase point by dense output
    double max_energy_error(const HamiltonianModel& m) const;
};

struct VariationalSegment {
    OrbitSegment base;
    std::vector<Mat> fundamental;  // Psi(t) at base.times
    Mat at(double t) const;        // Psi(t) by dense output
};

enum class Direction { Increasing, Decreasing, Any };

// Event function g; NaN means "inactive here" (used to gate chart-local sections).
struct EventSpec {
    std::string name;
    std::function<double(const Vec&)> g;
    std::function<Vec(const Vec&)> grad;  // optional, used for Newton polish and grazing test
    Direction direction = Direction::Any;
    bool terminal = true;
};

EventSpec plane_event(int component, double level, Direction dir, const std::string& name);

struct EventHit {
    int event_index = -1;
    double t = 0.0;
    Vec z;
    Mat Psi;      // present when variational
    double g_dot = 0.0;
};

struct EventRun {
    OrbitSegment segment;
    std::vector<Mat> fundamental;  // at segment.times when variational
    std::optional<EventHit> hit;
    std::vector<EventHit> nonterminal_hits;
};

OrbitSegment integrate(const HamiltonianModel& model, const Vec& z0, double t0, double t1,
                       const Tolerances& tol = {});
VariationalSegment integrate_variational(const HamiltonianModel& model, const Vec& z0, double t0,
                                         double t1, const Tolerances& tol = {});

// Integrates until the first terminal event fires (or t_max is reached, then hit is empty).
// Observer returning false aborts with the given error kind.
struct RunOptions {
    bool variational = false;
    bool keep_dense = true;
    std::function<bool(double, const Vec&)> observer;
    std::string observer_error = "Aborted";
};
EventRun integrate_events(const HamiltonianModel& model, const Vec& z0, double t_max,
                          const std::vector<EventSpec>& events, const Tolerances& tol,
                          const RunOptions& opt);

// Single terminal event; throws EventNotReached.
EventRun integrate_to_event(const HamiltonianModel& model, const Vec& z0, const EventSpec& ev,
                            double t_max, const Tolerances& tol = {}, bool variational = false);

// Short-time flow for shooting: z(h) of dz/dt = X_H + gamma grad H, with
// Psi = dz(h)/dz0 and w = dz(h)/dgamma when requested.
struct Propagation {
    Vec z;
    Mat Psi;
    Vec dgamma;
    Vec field_end;  // X_H + gamma grad H at z(h)
    long steps = 0;
};
Propagation propagate(const HamiltonianModel& model, const Vec& z0, double h, double gamma,
                      bool jacobian, const Tolerances& tol = {});

void write_segment_csv(const OrbitSegment& seg, const HamiltonianModel& model,
                       const std::string& path);

}  // namespace nhic
