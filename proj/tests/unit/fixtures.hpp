#pragma once

#include "nhic/continuation.hpp"
#include "nhic/cylinder.hpp"
#include "nhic/homoclinics.hpp"
#include "nhic/localframe.hpp"
#include "nhic/model.hpp"

#include <numbers>
#include <vector>

namespace fx {

using namespace nhic;

struct Setup {
    HamiltonianModel model;
    SaddleSpectrum spectrum;
    LocalChart chart;
    HomoclinicOptions hopt;
    ContinuationOptions copt;
    std::vector<HomoclinicOrbit> lib;
};

// Pendulum with library {(1)+, (-1)-}.
inline const Setup& pendulum() {
    static const Setup s = [] {
        Setup p;
        p.model = HamiltonianModel::pendulum();
        p.spectrum = analyze_saddle(p.model);
        p.chart = build_chart(p.model, p.spectrum, {});
        p.hopt = default_homoclinic_options(p.chart);
        p.hopt.r = p.chart.r_prime / 2;
        p.copt.r = p.hopt.r;
        auto found = find_homoclinics(p.model, p.chart, {1.0, -1.0}, p.hopt);
        for (const char* l : {"(1)+", "(-1)-"})
            for (auto& h : found)
                if (h.label == l) p.lib.push_back(h);
        return p;
    }();
    return s;
}

inline const CylinderFamily& pendulum_family(int sign) {
    static const CylinderFamily pos = [] {
        const Setup& p = pendulum();
        return continue_family(p.model, p.chart, p.lib, {{0}, 1, "(1)+"}, energy_grid(1e-3, 1e-9, 0.1), p.copt);
    }();
    static const CylinderFamily neg = [] {
        const Setup& p = pendulum();
        return continue_family(p.model, p.chart, p.lib, {{0, 1}, -1, "pair(1)"}, energy_grid(1e-3, 1e-9, 0.1),
                               p.copt);
    }();
    return sign > 0 ? pos : neg;
}

// Coupled pendula with library {(1,0)+, (0,1)+, (-1,0)-, (0,-1)-}.
inline const Setup& coupled() {
    static const Setup s = [] {
        Setup p;
        p.model = HamiltonianModel::coupled_pendula(0.1);
        p.spectrum = analyze_saddle(p.model);
        p.chart = build_chart(p.model, p.spectrum, {});
        p.hopt = default_homoclinic_options(p.chart);
        p.hopt.r = p.chart.r_prime / 8;
        p.hopt.target_classes = {(IVec(2) << 1, 0).finished(), (IVec(2) << 0, 1).finished()};
        p.copt.r = p.hopt.r;
        std::vector<double> seeds;
        for (int k = 0; k < p.hopt.scan_points; ++k) seeds.push_back(2 * std::numbers::pi * k / p.hopt.scan_points);
        auto found = find_homoclinics(p.model, p.chart, seeds, p.hopt);
        for (const char* l : {"(1,0)+", "(0,1)+"})
            for (auto& h : found)
                if (h.label == l) p.lib.push_back(h);
        p.lib.push_back(pair_by_symmetry(p.model, p.chart, p.lib[0], p.hopt));
        p.lib.push_back(pair_by_symmetry(p.model, p.chart, p.lib[1], p.hopt));
        return p;
    }();
    return s;
}

}  // namespace fx
