#include "qulab/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace qulab {

AdamWState AdamWState::init(const ParamTree& params, const AdamWConfig& config) {
  AdamWState state;
  state.config = config;
  state.step = 0;
  state.m = params.zeros_like();
  state.v = params.zeros_like();
  return state;
}

void adamw_step(ParamTree& params, const ParamTree& grads, AdamWState& state,
                const ModuleMask* module_mask) {
  if (!params.same_structure(grads) || !params.same_structure(state.m)) {
    throw std::invalid_argument("adamw_step: parameter/gradient structure mismatch");
  }
  state.step += 1;
  const AdamWConfig& c = state.config;
  const double bc1 = 1.0 - std::pow(static_cast<double>(c.beta1), static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(static_cast<double>(c.beta2), static_cast<double>(state.step));

  for (size_t mi = 0; mi < params.modules.size(); ++mi) {
    ParamModule& pm = params.modules[mi];
    if (module_mask) {
      auto it = module_mask->find(pm.name);
      if (it != module_mask->end() && it->second == 0) continue;
    }
    const ParamModule& gm = grads.modules[mi];
    ParamModule& mm = state.m.modules[mi];
    ParamModule& vm = state.v.modules[mi];
    for (size_t li = 0; li < pm.leaves.size(); ++li) {
      float* p = pm.leaves[li].tensor.data();
      const float* g = gm.leaves[li].tensor.data();
      float* m1 = mm.leaves[li].tensor.data();
      float* m2 = vm.leaves[li].tensor.data();
      const int64_t n = pm.leaves[li].tensor.size();
      for (int64_t i = 0; i < n; ++i) {
        m1[i] = c.beta1 * m1[i] + (1.0f - c.beta1) * g[i];
        m2[i] = c.beta2 * m2[i] + (1.0f - c.beta2) * g[i] * g[i];
        const double mhat = static_cast<double>(m1[i]) / bc1;
        const double vhat = static_cast<double>(m2[i]) / bc2;
        const double update = mhat / (std::sqrt(vhat) + static_cast<double>(c.eps)) +
                              static_cast<double>(c.weight_decay) * static_cast<double>(p[i]);
        p[i] = static_cast<float>(static_cast<double>(p[i]) -
                                  static_cast<double>(c.lr) * update);
      }
    }
  }
}

}  // namespace qulab
