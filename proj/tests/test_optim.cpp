#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "qulab/model.hpp"
#include "qulab/optim.hpp"
#include "testutil.hpp"

using namespace qulab;

namespace {

ParamTree single_scalar_tree(float value) {
  ParamTree tree;
  ParamModule m;
  m.name = "only";
  m.leaves.push_back({"w", Tensor::scalar(value)});
  tree.modules.push_back(std::move(m));
  return tree;
}

}  // namespace

TEST_CASE("zero gradients move parameters only through weight decay") {
  LanguageModel model = init_model(testutil::tiny_config());
  ParamTree zeros = model.params.zeros_like();

  SUBCASE("decay 0 leaves the tree bit-identical") {
    ParamTree params = model.params;
    AdamWState state = AdamWState::init(params, {});
    adamw_step(params, zeros, state);
    CHECK(testutil::trees_bit_identical(params, model.params));
  }
  SUBCASE("positive decay shrinks each weight by lr*wd*w") {
    ParamTree params = model.params;
    AdamWConfig cfg;
    cfg.lr = 0.1f;
    cfg.weight_decay = 0.5f;
    AdamWState state = AdamWState::init(params, cfg);
    adamw_step(params, zeros, state);
    const float before = model.params.leaf(0).tensor[7];
    const float after = params.leaf(0).tensor[7];
    CHECK(after == doctest::Approx(before * (1.0f - 0.1f * 0.5f)).epsilon(1e-6));
  }
}

TEST_CASE("all-zero module mask freezes the entire tree") {
  LanguageModel model = init_model(testutil::tiny_config());
  ParamTree params = model.params;
  ParamTree grads = model.params.zeros_like();
  for (auto& mod : grads.modules) {
    for (auto& leaf : mod.leaves) leaf.tensor.fill(0.37f);
  }
  ModuleMask mask;
  for (const auto& mod : params.modules) mask[mod.name] = 0;
  AdamWState state = AdamWState::init(params, {});
  for (int step = 0; step < 3; ++step) adamw_step(params, grads, state, &mask);
  CHECK(testutil::trees_bit_identical(params, model.params));
  CHECK(state.step == 3);
}

TEST_CASE("scalar parameter follows the hand-rolled AdamW recurrence") {
  const std::vector<float> grad_seq = {0.4f, -1.2f, 0.05f, 2.0f, -0.3f, 0.9f, 0.9f, -2.5f};
  AdamWConfig cfg;
  cfg.lr = 0.01f;
  cfg.beta1 = 0.9f;
  cfg.beta2 = 0.999f;
  cfg.eps = 1e-8f;
  cfg.weight_decay = 0.02f;

  ParamTree params = single_scalar_tree(1.5f);
  AdamWState state = AdamWState::init(params, cfg);

  double w = 1.5, m = 0.0, v = 0.0;
  for (size_t t = 0; t < grad_seq.size(); ++t) {
    ParamTree grads = params.zeros_like();
    grads.leaf(0).tensor[0] = grad_seq[t];
    adamw_step(params, grads, state);

    const double g = grad_seq[t];
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
    const double mhat = m / (1.0 - std::pow(cfg.beta1, static_cast<double>(t + 1)));
    const double vhat = v / (1.0 - std::pow(cfg.beta2, static_cast<double>(t + 1)));
    w -= cfg.lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * w);

    CHECK(params.leaf(0).tensor[0] == doctest::Approx(w).epsilon(1e-5));
  }
  CHECK(state.step == static_cast<int64_t>(grad_seq.size()));
}

TEST_CASE("structure mismatch is rejected") {
  ParamTree params = single_scalar_tree(1.0f);
  ParamTree bad;
  ParamModule m;
  m.name = "only";
  m.leaves.push_back({"w", Tensor({2})});
  bad.modules.push_back(std::move(m));
  AdamWState state = AdamWState::init(params, {});
  CHECK_THROWS_AS(adamw_step(params, bad, state), std::invalid_argument);
}
