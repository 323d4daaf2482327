#ifndef QULAB_OPTIM_HPP_
#define QULAB_OPTIM_HPP_

#include <cstdint>

#include "qulab/param_tree.hpp"

namespace qulab {

struct AdamWConfig {
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  float weight_decay = 0.0f;
};

struct AdamWState {
  AdamWConfig config;
  int64_t step = 0;
  ParamTree m;  // first moments, same structure as the parameters
  ParamTree v;  // second moments

  static AdamWState init(const ParamTree& params, const AdamWConfig& config);
};

// One AdamW update (decoupled weight decay, bias-corrected moments).
// Modules with mask value 0 are skipped entirely: parameters and moments of
// those modules are bit-identical before and after.
void adamw_step(ParamTree& params, const ParamTree& grads, AdamWState& state,
                const ModuleMask* module_mask = nullptr);

}  // namespace qulab

#endif  // QULAB_OPTIM_HPP_
