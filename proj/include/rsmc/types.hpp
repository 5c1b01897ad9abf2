#pragma once

#include <Eigen/Dense>

namespace rsmc {

// All numerics run in double precision; gradient checks against central
// finite differences require it.
using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using VecRef = Eigen::Ref<const Eigen::VectorXd>;
using MatRef = Eigen::Ref<const Eigen::MatrixXd>;

}  // namespace rsmc
