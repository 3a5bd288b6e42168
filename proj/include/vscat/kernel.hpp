// SPDX-License-Identifier: Apache-2.0
//
// Squared-exponential covariance over departure angles.

#pragma once

#include "vscat/geometry.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <span>

namespace vscat {

/// Squared angular distance. Azimuth enters through its chord on the unit
/// circle, 2 - 2 cos(daz), so the seam at +-pi is continuous and the kernel
/// stays positive definite on any angle set.
inline double angular_distance_sq(const Aod& a, const Aod& b) {
    const double daz = a.azimuth - b.azimuth;
    const double del = a.elevation - b.elevation;
    return 2.0 - 2.0 * std::cos(daz) + del * del;
}

inline double kernel_from_distance_sq(double d2, double v, double rho) {
    return v * v * std::exp(-d2 / (2.0 * rho * rho));
}

inline double kernel(const Aod& a, const Aod& b, double v, double rho) {
    return kernel_from_distance_sq(angular_distance_sq(a, b), v, rho);
}

inline Eigen::MatrixXd kernel_matrix(std::span<const Aod> angles, double v, double rho) {
    const auto n = static_cast<Eigen::Index>(angles.size());
    Eigen::MatrixXd k(n, n);
    for (Eigen::Index a = 0; a < n; ++a) {
        k(a, a) = v * v;
        for (Eigen::Index b = 0; b < a; ++b) {
            k(a, b) = k(b, a) = kernel(angles[a], angles[b], v, rho);
        }
    }
    return k;
}

} // namespace vscat
