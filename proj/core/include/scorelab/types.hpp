#pragma once

#include <Eigen/Core>

namespace scorelab {

// Points in data space, noise vectors and noise predictions all live in R^d.
using Vector = Eigen::VectorXd;

// A noise-prediction vector eps(x, t, condition).
using EpsPrediction = Eigen::VectorXd;

}  // namespace scorelab
