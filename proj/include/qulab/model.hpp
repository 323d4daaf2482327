#ifndef QULAB_MODEL_HPP_
#define QULAB_MODEL_HPP_

#include <cstdint>
#include <vector>

#include "qulab/param_tree.hpp"
#include "qulab/tape.hpp"

namespace qulab {

struct ModelConfig {
  int vocab_size = 0;
  int d_model = 128;
  int n_layers = 2;
  int n_heads = 4;
  int d_ff = 256;
  int max_seq_len = 64;
  uint64_t init_seed = 0;

  void validate() const;  // throws ConfigError
};

// Tiny pre-norm causal transformer, bias-free with gain-only layer norms.
// Learned positional embeddings live in the `embed` module; the output head
// is untied from the embedding.
// Module names: embed, layer{k}.attn, layer{k}.ffn, final_norm, lm_head.
struct LanguageModel {
  ModelConfig config;
  ParamTree params;
};

LanguageModel init_model(const ModelConfig& config);

// Parameter handles for a model bound onto a tape, in ParamTree
// enumeration order.
struct BoundModel {
  std::vector<Var> flat;
  Var tok_emb, pos_emb;
  struct Layer {
    Var ln_g, wq, wk, wv, wo;
    Var ln2_g, w1, w2;
  };
  std::vector<Layer> layers;
  Var fin_g, head_w;
};

BoundModel bind_model(Tape& tape, const LanguageModel& model, bool requires_grad);

// Causal forward pass; logits row t conditions only on tokens <= t.
Var forward_logits_on_tape(Tape& tape, const BoundModel& bound, const ModelConfig& config,
                           const std::vector<int>& tokens);

// Per-position log p(tokens[t+1] | tokens[..t]) for t in [0, T-2]; length T-1.
Var token_logprobs_on_tape(Tape& tape, const BoundModel& bound, const ModelConfig& config,
                           const std::vector<int>& tokens);

// Collect leaf gradients from a tape after backward, shaped like `like`.
ParamTree grads_from_tape(const Tape& tape, const BoundModel& bound, const ParamTree& like);

// ---- plain (non-recording) inference ----
Tensor forward_logits(const LanguageModel& model, const std::vector<int>& tokens);
float sequence_nll(const LanguageModel& model, const std::vector<int>& tokens);
std::vector<float> per_token_logprobs(const LanguageModel& model, const std::vector<int>& tokens);
// Deterministic argmax decoding; ties break toward the lowest token id.
// Returns exactly n_new tokens.
std::vector<int> generate_greedy(const LanguageModel& model, const std::vector<int>& prefix,
                                 int n_new);

struct TrainConfig {
  int epochs = 1;
  float lr = 1e-3f;
  int batch_size = 8;
  uint64_t seed = 0;
  float weight_decay = 0.0f;
};

// AdamW minimization of the mean per-sequence NLL. Deterministic under a
// fixed seed; epochs == 0 returns a bit-identical copy.
LanguageModel train_model(const LanguageModel& model,
                          const std::vector<std::vector<int>>& sequences,
                          const TrainConfig& config,
                          std::vector<float>* epoch_losses = nullptr);

}  // namespace qulab

#endif  // QULAB_MODEL_HPP_
