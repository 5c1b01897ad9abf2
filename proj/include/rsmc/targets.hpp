#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>

#include "rsmc/rng.hpp"
#include "rsmc/types.hpp"

namespace rsmc::targets {

// An unnormalised target density R over R^d. Gradients, exact samplers and
// exact log-normalisers are optional capabilities used by oracle tests and
// evaluation; everything else only queries log_r pointwise.
struct TargetSpec {
  std::string name;
  int dim = 0;
  std::function<double(const VecRef&)> log_r;
  std::function<Vec(const MatRef&)> log_r_rows;                 // batched form, may be empty
  std::function<Vec(const VecRef&)> grad_log_r;                 // may be empty
  std::function<Mat(Rng&, int)> exact_sampler;                  // may be empty
  std::optional<double> exact_log_z;

  bool has_grad() const { return static_cast<bool>(grad_log_r); }
  bool has_sampler() const { return static_cast<bool>(exact_sampler); }
};

// Batched log R over rows of x, falling back to the pointwise form.
Vec log_r_rows(const TargetSpec& spec, const MatRef& x);

struct GmmSpec {
  Mat means;  // component_count x d, each coordinate drawn from U[-40,40]
  int component_count = 40;
  std::uint64_t seed = 0;
};

GmmSpec gmm_spec(int dim, int component_count = 40, std::uint64_t seed = 0);
double gmm_log_density(const GmmSpec& spec, const VecRef& x);
Vec gmm_grad_log_density(const GmmSpec& spec, const VecRef& x);

double funnel_log_density(const VecRef& x);
Vec funnel_grad_log_density(const VecRef& x);

double manywell_log_density(const VecRef& x);
Vec manywell_grad_log_density(const VecRef& x);

// Named targets selectable from config. Known names: "gmm40" (any dim,
// seeded means), "funnel" (dim 10), "manywell" (even dim), "planted_gauss"
// (1-d, R = 7*N(0,1), exact log Z = log 7).
TargetSpec make_target(const std::string& name, int dim, std::uint64_t seed = 0);

TargetSpec make_gmm(int dim, int component_count = 40, std::uint64_t seed = 0);
TargetSpec make_funnel();
TargetSpec make_manywell(int dim);
TargetSpec make_planted_gauss(double z = 7.0);

// Draws i.i.d. samples from pi for targets that support it.
// Throws when the target has no exact sampler.
Mat exact_sample(const TargetSpec& spec, Rng& rng, int count);

}  // namespace rsmc::targets
