#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "qulab/error.hpp"
#include "qulab/model.hpp"
#include "qulab/rng.hpp"
#include "testutil.hpp"

using namespace qulab;
using namespace qulab::testutil;

TEST_CASE("init_model determinism and config validation") {
  const ModelConfig cfg = tiny_config();
  LanguageModel a = init_model(cfg);
  LanguageModel b = init_model(cfg);
  CHECK(trees_bit_identical(a.params, b.params));

  ModelConfig other = cfg;
  other.init_seed = cfg.init_seed + 1;
  CHECK_FALSE(trees_bit_identical(a.params, init_model(other).params));

  ModelConfig bad = cfg;
  bad.d_model = 8;
  bad.n_heads = 3;
  CHECK_THROWS_AS(init_model(bad), ConfigError);
}

TEST_CASE("parameter count matches the closed-form formula") {
  const ModelConfig cfg = tiny_config();
  LanguageModel model = init_model(cfg);
  const int64_t v = cfg.vocab_size, d = cfg.d_model, ff = cfg.d_ff, L = cfg.n_layers,
                t = cfg.max_seq_len;
  // embed + per-layer (attention, ffn; bias-free, gain-only norms) +
  // final norm + untied head
  const int64_t per_attn = d + 4 * d * d;
  const int64_t per_ffn = d + d * ff + ff * d;
  const int64_t expect = v * d + t * d + L * (per_attn + per_ffn) + d + d * v;
  CHECK(model.params.total_params() == expect);
}

TEST_CASE("module partition covers every tensor exactly once") {
  LanguageModel model = init_model(tiny_config());
  int64_t sum = 0;
  for (const auto& mod : model.params.modules) {
    for (const auto& leaf : mod.leaves) sum += leaf.tensor.size();
  }
  CHECK(sum == model.params.total_params());
  CHECK(model.params.modules.size() ==
        static_cast<size_t>(2 * model.config.n_layers + 3));
  CHECK(model.params.modules.front().name == "embed");
  CHECK(model.params.modules.back().name == "lm_head");
}

TEST_CASE("causality: perturbing token t leaves earlier logits rows bit-identical") {
  LanguageModel model = init_model(tiny_config());
  std::vector<int> tokens = {3, 7, 1, 9, 5, 2};
  Tensor base = forward_logits(model, tokens);
  for (size_t t = 1; t < tokens.size(); ++t) {
    std::vector<int> perturbed = tokens;
    perturbed[t] = (perturbed[t] + 4) % model.config.vocab_size;
    Tensor out = forward_logits(model, perturbed);
    for (size_t row = 0; row < t; ++row) {
      for (int j = 0; j < out.cols(); ++j) {
        CHECK(out.at2(static_cast<int>(row), j) == base.at2(static_cast<int>(row), j));
      }
    }
  }
}

TEST_CASE("forward_logits shape and normalization") {
  LanguageModel model = init_model(tiny_config());
  Tensor single = forward_logits(model, {5});
  CHECK(single.rows() == 1);
  CHECK(single.cols() == model.config.vocab_size);

  Tensor logits = forward_logits(model, {1, 2, 3});
  for (int t = 0; t < logits.rows(); ++t) {
    double mx = -1e300;
    for (int j = 0; j < logits.cols(); ++j) mx = std::max(mx, (double)logits.at2(t, j));
    double denom = 0.0;
    for (int j = 0; j < logits.cols(); ++j) denom += std::exp(logits.at2(t, j) - mx);
    double total = 0.0;
    for (int j = 0; j < logits.cols(); ++j) total += std::exp(logits.at2(t, j) - mx) / denom;
    CHECK(std::fabs(total - 1.0) < 1e-5);
  }

  std::vector<int> too_long(static_cast<size_t>(model.config.max_seq_len) + 1, 1);
  CHECK_THROWS_AS(forward_logits(model, too_long), std::invalid_argument);
}

TEST_CASE("sequence_nll of an untrained model is close to ln(vocab)") {
  const ModelConfig cfg = tiny_config(64, 5);
  LanguageModel model = init_model(cfg);
  Rng rng(51);
  double total = 0.0;
  const int trials = 8;
  for (int t = 0; t < trials; ++t) {
    std::vector<int> tokens;
    for (int i = 0; i < 7; ++i) {
      tokens.push_back(static_cast<int>(rng.next_below(static_cast<uint64_t>(cfg.vocab_size))));
    }
    total += sequence_nll(model, tokens);
  }
  const double nll = total / trials;
  const double uniform = std::log(static_cast<double>(cfg.vocab_size));
  CHECK(std::fabs(nll - uniform) / uniform < 0.05);
}

TEST_CASE("sequence_nll is definitionally the cross entropy of shifted logits") {
  LanguageModel model = init_model(tiny_config());
  std::vector<int> tokens = {3, 1, 4, 1, 5};
  std::vector<int> inputs(tokens.begin(), tokens.end() - 1);
  std::vector<int> targets(tokens.begin() + 1, tokens.end());
  Tape tape(false);
  Var ce = tape.cross_entropy_logits(tape.constant(forward_logits(model, inputs)), targets);
  CHECK(sequence_nll(model, tokens) == doctest::Approx(tape.value(ce).item()).epsilon(1e-6));
  CHECK_THROWS_AS(sequence_nll(model, {3}), std::invalid_argument);
}

TEST_CASE("per_token_logprobs definitional properties") {
  LanguageModel model = init_model(tiny_config());
  std::vector<int> tokens = {2, 8, 6, 1, 11, 0, 7};
  const auto lp = per_token_logprobs(model, tokens);
  CHECK(lp.size() == tokens.size() - 1);
  double mean = 0.0;
  for (float v : lp) {
    CHECK(v <= 0.0f);
    mean += v;
  }
  mean /= static_cast<double>(lp.size());
  CHECK(std::fabs(-mean - sequence_nll(model, tokens)) < 1e-5);
}

TEST_CASE("generate_greedy basics") {
  LanguageModel model = init_model(tiny_config());
  CHECK(generate_greedy(model, {1, 2}, 0).empty());
  const auto a = generate_greedy(model, {1, 2, 3}, 4);
  const auto b = generate_greedy(model, {1, 2, 3}, 4);
  CHECK(a == b);
  CHECK(a.size() == 4);
  CHECK_THROWS_AS(generate_greedy(model, {1}, 100), std::invalid_argument);
  CHECK_THROWS_AS(generate_greedy(model, {}, 1), std::invalid_argument);
}

TEST_CASE("overfitting one sentence makes greedy continuation exact") {
  ModelConfig cfg = tiny_config(16, 3);
  LanguageModel model = init_model(cfg);
  const std::vector<int> sentence = {1, 9, 4, 12, 7, 3, 2};
  TrainConfig tc;
  tc.epochs = 300;
  tc.lr = 3e-3f;
  tc.batch_size = 1;
  tc.seed = 9;
  LanguageModel fit = train_model(model, {sentence}, tc);
  const std::vector<int> prefix(sentence.begin(), sentence.begin() + 3);
  const auto continuation = generate_greedy(fit, prefix, static_cast<int>(sentence.size()) - 3);
  const std::vector<int> expected(sentence.begin() + 3, sentence.end());
  CHECK(continuation == expected);
}

TEST_CASE("training reduces loss and is reproducible") {
  ModelConfig cfg = tiny_config(24, 17);
  LanguageModel model = init_model(cfg);
  Rng rng(100);
  std::vector<std::vector<int>> corpus;
  for (int s = 0; s < 10; ++s) {
    std::vector<int> seq;
    for (int t = 0; t < 7; ++t) {
      seq.push_back(static_cast<int>(rng.next_below(static_cast<uint64_t>(cfg.vocab_size))));
    }
    corpus.push_back(seq);
  }
  auto mean_nll = [&](const LanguageModel& m) {
    double acc = 0.0;
    for (const auto& seq : corpus) acc += sequence_nll(m, seq);
    return acc / static_cast<double>(corpus.size());
  };

  TrainConfig tc;
  tc.epochs = 25;  // 10 sequences, batch 1: 250 optimizer steps
  tc.lr = 1e-3f;
  tc.batch_size = 1;
  tc.seed = 4;
  const double before = mean_nll(model);
  LanguageModel after_model = train_model(model, corpus, tc);
  CHECK(mean_nll(after_model) < before);

  LanguageModel again = train_model(model, corpus, tc);
  CHECK(trees_bit_identical(after_model.params, again.params));

  LanguageModel zero = train_model(model, corpus, {.epochs = 0, .lr = 1.0f, .batch_size = 1, .seed = 1});
  CHECK(trees_bit_identical(zero.params, model.params));

  CHECK_THROWS_AS(train_model(model, {}, tc), DataError);
}

TEST_CASE("reverse-mode gradients match central finite differences on the full loss") {
  // Small enough to finite-difference every coordinate, large enough to
  // exercise every op: two layers, two heads, gelu ffn, layer norms.
  const ModelConfig cfg = tiny_config();
  LanguageModel model = init_model(cfg);
  const std::vector<std::vector<int>> batch = {{1, 5, 3, 9, 2, 7}, {4, 4, 8, 0, 12, 6, 10, 11}};

  Tape tape(true);
  BoundModel bound = bind_model(tape, model, true);
  std::vector<Var> nlls;
  for (const auto& seq : batch) {
    nlls.push_back(tape.scale(tape.mean(token_logprobs_on_tape(tape, bound, cfg, seq)), -1.0f));
  }
  Var loss = tape.mean(tape.stack_scalars(nlls));
  tape.backward(loss);

  RefParams ref = RefParams::from(model.params);
  // The double-precision reference must agree with the float32 forward.
  CHECK(std::fabs(ref_mean_nll(cfg, ref, batch) - tape.value(loss).item()) < 1e-4);

  auto loss_fn = [&](const RefParams& p) { return ref_mean_nll(cfg, p, batch); };
  int checked = 0, failed = 0;
  for (int leaf = 0; leaf < model.params.num_leaves(); ++leaf) {
    const Tensor& g = tape.grad(bound.flat[static_cast<size_t>(leaf)]);
    for (int64_t i = 0; i < g.size(); ++i) {
      const double fd = fd_grad(ref, leaf, static_cast<size_t>(i), loss_fn);
      if (!grad_close(g[i], fd)) ++failed;
      ++checked;
    }
  }
  CHECK(checked == model.params.total_params());
  CHECK(failed == 0);
}
