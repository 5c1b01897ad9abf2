#pragma once

#include <string>
#include <vector>

#include "rsmc/rng.hpp"
#include "rsmc/tape.hpp"
#include "rsmc/types.hpp"

namespace rsmc {

// Two-hidden-layer perceptron with a smooth (GELU) nonlinearity.
// Parameter count: (in+1)*H + (H+1)*H + (H+1)*out.
struct Mlp {
  Mat w1, b1;  // in x H, 1 x H
  Mat w2, b2;  // H x H,  1 x H
  Mat w3, b3;  // H x out, 1 x out

  int in_dim() const { return static_cast<int>(w1.rows()); }
  int hidden_dim() const { return static_cast<int>(w1.cols()); }
  int out_dim() const { return static_cast<int>(w3.cols()); }
  int param_count() const;
};

// Uniform fan-in initialisation with a small final-layer scale so the net
// starts close to the zero map.
Mlp mlp_init(int in, int hidden, int out, Rng rng, double final_scale = 0.01);

// Plain forward pass over a batch (rows = samples).
Mat mlp_forward(const Mlp& m, const Mat& x);

struct MlpLeaves {
  int w1, b1, w2, b2, w3, b3;
};

MlpLeaves mlp_register(ad::Tape& tape, const Mlp& m);

// Recorded forward pass; x_node may be a constant or any tape node.
int mlp_forward(ad::Tape& tape, const MlpLeaves& ids, int x_node);

// Accumulate tape gradients back into a gradient struct shaped like the net.
struct MlpGrads {
  Mat w1, b1, w2, b2, w3, b3;
};
MlpGrads mlp_grads(const ad::Tape& tape, const MlpLeaves& ids);

}  // namespace rsmc
