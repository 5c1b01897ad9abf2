#pragma once

#include <string>
#include <vector>

#include "rsmc/types.hpp"

namespace rsmc {

// A named set of parameter matrices updated together under one learning rate.
struct ParamGroup {
  std::vector<std::string> names;
  std::vector<Mat*> mats;

  void add(const std::string& name, Mat* m) {
    names.push_back(name);
    mats.push_back(m);
  }
};

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long long t = 0;
  std::vector<Mat> m;  // first moments, zero-initialised
  std::vector<Mat> v;  // second moments, zero-initialised
};

AdamState adam_init(const ParamGroup& params, double lr);

// Standard Adam update with bias correction. Throws on non-finite gradients,
// naming the offending parameter.
void adam_step(AdamState& state, const ParamGroup& params, const std::vector<Mat>& grads);

// Scales gradients in place so their global l2 norm is at most max_norm.
// Returns true when clipping triggered.
bool clip_global_norm(std::vector<Mat>& grads, double max_norm);

}  // namespace rsmc
