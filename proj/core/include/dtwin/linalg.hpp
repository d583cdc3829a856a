// SPDX-License-Identifier: Apache-2.0
#ifndef DTWIN_LINALG_HPP
#define DTWIN_LINALG_HPP

#include <Eigen/Dense>

namespace dtwin {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// State of an n-dimensional model. Length is the owning model's state_dim().
using StateVector = Vector;

} // namespace dtwin

#endif // DTWIN_LINALG_HPP
