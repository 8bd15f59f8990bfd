#include "nhic/poly.hpp"

#include "nhic/common.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>

namespace nhic {

namespace {

void enumerate(int nvar, int remaining, int k, std::vector<int>& cur,
               std::vector<std::vector<int>>& out) {
    if (k == nvar - 1) {
        cur[k] = remaining;
        out.push_back(cur);
        return;
    }
    for (int e = remaining; e >= 0; --e) {
        cur[k] = e;
        enumerate(nvar, remaining - e, k + 1, cur, out);
    }
}

}  // namespace

int MonomialBasis::index(const std::vector<int>& e) const {
    long c = 0, base = 1;
    int t = 0;
    for (int k = 0; k < nvar; ++k) {
        if (e[k] < 0) return -1;
        t += e[k];
        c += e[k] * base;
        base *= (deg + 1);
    }
    if (t > deg) return -1;
    return lookup[c];
}

std::shared_ptr<const MonomialBasis> MonomialBasis::get(int nvar, int deg) {
    static std::mutex mtx;
    static std::map<std::pair<int, int>, std::shared_ptr<const MonomialBasis>> cache;
    std::lock_guard<std::mutex> lock(mtx);
    auto key = std::make_pair(nvar, deg);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;

    auto b = std::make_shared<MonomialBasis>();
    b->nvar = nvar;
    b->deg = deg;
    std::vector<int> cur(nvar, 0);
    b->degree_start.push_back(0);
    for (int t = 0; t <= deg; ++t) {
        if (nvar > 0) enumerate(nvar, t, 0, cur, b->exps);
        else if (t == 0) b->exps.push_back({});
        b->degree_start.push_back(static_cast<int>(b->exps.size()));
    }
    long lsize = 1;
    for (int k = 0; k < nvar; ++k) lsize *= (deg + 1);
    b->lookup.assign(lsize, -1);
    for (int i = 0; i < b->size(); ++i) {
        const auto& e = b->exps[i];
        long c = 0, base = 1;
        int t = 0;
        for (int k = 0; k < nvar; ++k) {
            c += e[k] * base;
            base *= (deg + 1);
            t += e[k];
        }
        b->code.push_back(c);
        b->total.push_back(t);
        b->lookup[c] = i;
    }
    b->parent.assign(b->size(), -1);
    b->pivot.assign(b->size(), -1);
    for (int i = 1; i < b->size(); ++i) {
        auto e = b->exps[i];
        int k = 0;
        while (e[k] == 0) ++k;
        e[k] -= 1;
        b->pivot[i] = k;
        b->parent[i] = b->index(e);
    }
    cache[key] = b;
    return b;
}

Poly::Poly(int nvar, int deg)
    : basis_(MonomialBasis::get(nvar, deg)), c_(basis_->size(), 0.0) {}

Poly Poly::constant(int nvar, int deg, double c) {
    Poly p(nvar, deg);
    p.c_[0] = c;
    return p;
}

Poly Poly::variable(int nvar, int deg, int k) {
    Poly p(nvar, deg);
    if (deg >= 1) {
        std::vector<int> e(nvar, 0);
        e[k] = 1;
        p.c_[p.basis_->index(e)] = 1.0;
    }
    return p;
}

double Poly::coeff(const std::vector<int>& e) const {
    int i = basis_->index(e);
    return i < 0 ? 0.0 : c_[i];
}

void Poly::set_coeff(const std::vector<int>& e, double v) {
    int i = basis_->index(e);
    if (i < 0) throw Error("PolyIndex", "monomial outside basis");
    c_[i] = v;
}

Poly& Poly::operator+=(const Poly& o) {
    for (int i = 0; i < size(); ++i) c_[i] += o.c_[i];
    return *this;
}

Poly& Poly::operator-=(const Poly& o) {
    for (int i = 0; i < size(); ++i) c_[i] -= o.c_[i];
    return *this;
}

Poly& Poly::operator*=(double s) {
    for (double& v : c_) v *= s;
    return *this;
}

Poly operator*(const Poly& a, const Poly& b) {
    const MonomialBasis& B = *a.basis_;
    Poly r(B.nvar, B.deg);
    const int N = B.size();
    for (int i = 0; i < N; ++i) {
        if (a.c_[i] == 0.0) continue;
        const int ti = B.total[i];
        const int jmax = B.degree_start[B.deg - ti + 1];
        for (int j = 0; j < jmax; ++j) {
            if (b.c_[j] == 0.0) continue;
            r.c_[B.lookup[B.code[i] + B.code[j]]] += a.c_[i] * b.c_[j];
        }
    }
    return r;
}

Poly Poly::derivative(int k) const {
    const MonomialBasis& B = *basis_;
    Poly r(B.nvar, B.deg);
    for (int i = 0; i < size(); ++i) {
        const auto& e = B.exps[i];
        if (e[k] == 0 || c_[i] == 0.0) continue;
        auto f = e;
        f[k] -= 1;
        r.c_[B.index(f)] += e[k] * c_[i];
    }
    return r;
}

Poly Poly::homogeneous(int k) const {
    Poly r(nvar(), degree());
    if (k < 0 || k > degree()) return r;
    for (int i = basis_->degree_start[k]; i < basis_->degree_start[k + 1]; ++i) r.c_[i] = c_[i];
    return r;
}

Poly Poly::truncated(int k) const {
    Poly r = *this;
    for (int i = 0; i < size(); ++i)
        if (basis_->total[i] > k) r.c_[i] = 0.0;
    return r;
}

Poly Poly::lower_order(int k) const {
    Poly r = *this;
    for (int i = 0; i < size(); ++i)
        if (basis_->total[i] < k) r.c_[i] = 0.0;
    return r;
}

Poly Poly::compose(const std::vector<Poly>& subs) const {
    if (static_cast<int>(subs.size()) != nvar()) throw Error("PolyCompose", "arity mismatch");
    const int nv2 = subs.empty() ? 0 : subs[0].nvar();
    const int d2 = subs.empty() ? degree() : subs[0].degree();
    const MonomialBasis& B = *basis_;
    std::vector<Poly> mono(B.size());
    mono[0] = Poly::constant(nv2, d2, 1.0);
    Poly r = Poly::constant(nv2, d2, c_[0]);
    for (int i = 1; i < B.size(); ++i) {
        mono[i] = mono[B.parent[i]] * subs[B.pivot[i]];
        if (c_[i] != 0.0) {
            for (int j = 0; j < r.size(); ++j) r.c_[j] += c_[i] * mono[i].c_[j];
        }
    }
    return r;
}

double Poly::eval(const double* x) const {
    const MonomialBasis& B = *basis_;
    const int N = B.size();
    double vals[4096];
    std::vector<double> heap;
    double* m = vals;
    if (N > 4096) {
        heap.resize(N);
        m = heap.data();
    }
    m[0] = 1.0;
    double s = c_[0];
    for (int i = 1; i < N; ++i) {
        m[i] = m[B.parent[i]] * x[B.pivot[i]];
        s += c_[i] * m[i];
    }
    return s;
}

double Poly::max_abs() const {
    double m = 0.0;
    for (double v : c_) m = std::max(m, std::abs(v));
    return m;
}

double Poly::max_abs_degree(int k) const {
    double m = 0.0;
    if (k < 0 || k > degree()) return 0.0;
    for (int i = basis_->degree_start[k]; i < basis_->degree_start[k + 1]; ++i)
        m = std::max(m, std::abs(c_[i]));
    return m;
}

PolyVec gradient(const Poly& p) {
    PolyVec g;
    for (int k = 0; k < p.nvar(); ++k) g.push_back(p.derivative(k));
    return g;
}

std::vector<PolyVec> hessian(const Poly& p) {
    std::vector<PolyVec> h;
    PolyVec g = gradient(p);
    for (const auto& gk : g) h.push_back(gradient(gk));
    return h;
}

Poly dot(const PolyVec& a, const PolyVec& b) {
    Poly r(a[0].nvar(), a[0].degree());
    for (std::size_t i = 0; i < a.size(); ++i) r += a[i] * b[i];
    return r;
}

}  // namespace nhic
