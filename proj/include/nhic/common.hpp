#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <utility>

namespace nhic {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using IVec = Eigen::VectorXi;

// All library failures carry a machine-readable kind, e.g. "EventNotReached".
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& what)
        : std::runtime_error(kind + ": " + what), kind_(std::move(kind)) {}
    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

// Canonical matrix J = [[0, I], [-I, 0]] of size 2n.
inline Mat symplectic_j(int n) {
    Mat J = Mat::Zero(2 * n, 2 * n);
    J.topRightCorner(n, n).setIdentity();
    J.bottomLeftCorner(n, n) = -Mat::Identity(n, n);
    return J;
}

// ||M^T J M - J|| / max(1, ||M||^2); the normalization keeps the defect
// meaningful for strongly hyperbolic maps whose entries reach 1e16.
inline double symplectic_defect(const Mat& M) {
    const int n = static_cast<int>(M.rows()) / 2;
    if (n == 0) return 0.0;
    Mat J = symplectic_j(n);
    double nm = M.norm();
    return (M.transpose() * J * M - J).norm() / std::max(1.0, nm * nm);
}

}  // namespace nhic
