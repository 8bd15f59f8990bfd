#pragma once

#include <memory>
#include <vector>

namespace nhic {

// Graded monomial table for polynomials in nvar variables up to total degree deg.
struct MonomialBasis {
    int nvar = 0;
    int deg = 0;
    std::vector<std::vector<int>> exps;
    std::vector<int> total;
    std::vector<long> code;   // sum_k e_k (deg+1)^k, additive under products
    std::vector<int> lookup;  // code -> index, -1 if total degree exceeds deg
    std::vector<int> parent;  // index of exps[i] - e_{pivot[i]}
    std::vector<int> pivot;
    std::vector<int> degree_start;  // first index of each total degree, size deg+2

    int size() const { return static_cast<int>(exps.size()); }
    int index(const std::vector<int>& e) const;

    static std::shared_ptr<const MonomialBasis> get(int nvar, int deg);
};

// Truncated multivariate polynomial with dense graded coefficients.
class Poly {
public:
    Poly() = default;
    Poly(int nvar, int deg);

    static Poly constant(int nvar, int deg, double c);
    static Poly variable(int nvar, int deg, int k);

    int nvar() const { return basis_ ? basis_->nvar : 0; }
    int degree() const { return basis_ ? basis_->deg : 0; }
    int size() const { return static_cast<int>(c_.size()); }
    const MonomialBasis& basis() const { return *basis_; }

    double& operator[](int i) { return c_[i]; }
    double operator[](int i) const { return c_[i]; }
    double coeff(const std::vector<int>& e) const;
    void set_coeff(const std::vector<int>& e, double v);

    Poly& operator+=(const Poly& o);
    Poly& operator-=(const Poly& o);
    Poly& operator*=(double s);
    friend Poly operator+(Poly a, const Poly& b) { return a += b; }
    friend Poly operator-(Poly a, const Poly& b) { return a -= b; }
    friend Poly operator*(Poly a, double s) { return a *= s; }
    friend Poly operator*(double s, Poly a) { return a *= s; }
    friend Poly operator*(const Poly& a, const Poly& b);

    Poly derivative(int k) const;
    Poly homogeneous(int k) const;
    Poly truncated(int k) const;
    Poly lower_order(int k) const;  // keeps degrees >= k

    // P(subs_0, ..., subs_{nvar-1}); all substitutes share a basis, result in it.
    Poly compose(const std::vector<Poly>& subs) const;

    double eval(const double* x) const;
    double max_abs() const;
    double max_abs_degree(int k) const;

private:
    std::shared_ptr<const MonomialBasis> basis_;
    std::vector<double> c_;
};

// Vector-valued helpers.
using PolyVec = std::vector<Poly>;

PolyVec gradient(const Poly& p);
std::vector<PolyVec> hessian(const Poly& p);
Poly dot(const PolyVec& a, const PolyVec& b);

}  // namespace nhic
