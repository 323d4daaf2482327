#include "qulab/model.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "qulab/error.hpp"
#include "qulab/optim.hpp"
#include "qulab/rng.hpp"

namespace qulab {

namespace {

// Interior projections use the usual small transformer init; embeddings and
// the output head are drawn wider. The wide tensors set the per-tensor
// round-to-nearest scale max|w|/2^(N-1), and with the softmax margins being
// scale-free (hidden states are layer-normed), a wider draw reproduces the
// large-model regime where the low-bit grid is coarse relative to the
// per-weight updates an unlearning run applies.
constexpr float kInitStd = 0.12f;
constexpr float kEmbedInitStd = 0.12f;
constexpr float kHeadInitStd = 0.12f;
constexpr float kMaskValue = -1e9f;

Tensor normal_tensor(Shape shape, Rng& rng, float std_dev) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i) {
    t[i] = static_cast<float>(rng.next_normal() * std_dev);
  }
  return t;
}

Tensor causal_mask(int t) {
  Tensor m({t, t});
  for (int i = 0; i < t; ++i) {
    for (int j = i + 1; j < t; ++j) m.at2(i, j) = kMaskValue;
  }
  return m;
}

void check_tokens(const ModelConfig& cfg, const std::vector<int>& tokens) {
  if (tokens.empty()) throw std::invalid_argument("model: empty token sequence");
  if (static_cast<int>(tokens.size()) > cfg.max_seq_len) {
    throw std::invalid_argument("model: sequence longer than max_seq_len");
  }
  for (int id : tokens) {
    if (id < 0 || id >= cfg.vocab_size) throw std::out_of_range("model: token id out of range");
  }
}

}  // namespace

void ModelConfig::validate() const {
  if (vocab_size <= 0 || d_model <= 0 || n_layers <= 0 || n_heads <= 0 || d_ff <= 0) {
    throw ConfigError("model config: all sizes must be positive");
  }
  if (max_seq_len < 2) throw ConfigError("model config: max_seq_len must be >= 2");
  if (d_model % n_heads != 0) {
    throw ConfigError("model config: d_model must be divisible by n_heads");
  }
}

LanguageModel init_model(const ModelConfig& config) {
  config.validate();
  Rng rng(config.init_seed ^ 0x51A3C0DEull);

  const int d = config.d_model;
  const int v = config.vocab_size;
  const int ff = config.d_ff;

  LanguageModel model;
  model.config = config;
  ParamTree& tree = model.params;

  ParamModule embed;
  embed.name = "embed";
  embed.leaves.push_back({"tok", normal_tensor({v, d}, rng, kEmbedInitStd)});
  embed.leaves.push_back({"pos", normal_tensor({config.max_seq_len, d}, rng, kEmbedInitStd)});
  tree.modules.push_back(std::move(embed));

  for (int k = 0; k < config.n_layers; ++k) {
    // Bias-free blocks, gain-only norms: every trainable tensor keeps a
    // healthy magnitude range, so no parameter gets a degenerate
    // quantization scale.
    ParamModule attn;
    attn.name = "layer" + std::to_string(k) + ".attn";
    attn.leaves.push_back({"ln_g", Tensor::full({d}, 1.0f)});
    attn.leaves.push_back({"wq", normal_tensor({d, d}, rng, kInitStd)});
    attn.leaves.push_back({"wk", normal_tensor({d, d}, rng, kInitStd)});
    attn.leaves.push_back({"wv", normal_tensor({d, d}, rng, kInitStd)});
    attn.leaves.push_back({"wo", normal_tensor({d, d}, rng, kInitStd)});
    tree.modules.push_back(std::move(attn));

    ParamModule ffn;
    ffn.name = "layer" + std::to_string(k) + ".ffn";
    ffn.leaves.push_back({"ln_g", Tensor::full({d}, 1.0f)});
    ffn.leaves.push_back({"w1", normal_tensor({d, ff}, rng, kInitStd)});
    ffn.leaves.push_back({"w2", normal_tensor({ff, d}, rng, kInitStd)});
    tree.modules.push_back(std::move(ffn));
  }

  ParamModule fin;
  fin.name = "final_norm";
  fin.leaves.push_back({"g", Tensor::full({d}, 1.0f)});
  tree.modules.push_back(std::move(fin));

  ParamModule head;
  head.name = "lm_head";
  head.leaves.push_back({"w", normal_tensor({d, v}, rng, kHeadInitStd)});
  tree.modules.push_back(std::move(head));

  return model;
}

BoundModel bind_model(Tape& tape, const LanguageModel& model, bool requires_grad) {
  BoundModel bound;
  for (const auto& module : model.params.modules) {
    for (const auto& leaf : module.leaves) {
      bound.flat.push_back(tape.leaf(leaf.tensor, requires_grad));
    }
  }
  int i = 0;
  bound.tok_emb = bound.flat[static_cast<size_t>(i++)];
  bound.pos_emb = bound.flat[static_cast<size_t>(i++)];
  bound.layers.resize(static_cast<size_t>(model.config.n_layers));
  for (auto& layer : bound.layers) {
    layer.ln_g = bound.flat[static_cast<size_t>(i++)];
    layer.wq = bound.flat[static_cast<size_t>(i++)];
    layer.wk = bound.flat[static_cast<size_t>(i++)];
    layer.wv = bound.flat[static_cast<size_t>(i++)];
    layer.wo = bound.flat[static_cast<size_t>(i++)];
    layer.ln2_g = bound.flat[static_cast<size_t>(i++)];
    layer.w1 = bound.flat[static_cast<size_t>(i++)];
    layer.w2 = bound.flat[static_cast<size_t>(i++)];
  }
  bound.fin_g = bound.flat[static_cast<size_t>(i++)];
  bound.head_w = bound.flat[static_cast<size_t>(i++)];
  return bound;
}

Var forward_logits_on_tape(Tape& tape, const BoundModel& bound, const ModelConfig& config,
                           const std::vector<int>& tokens) {
  check_tokens(config, tokens);
  const int t = static_cast<int>(tokens.size());
  const int heads = config.n_heads;
  const int head_dim = config.d_model / heads;
  const float att_scale = 1.0f / std::sqrt(static_cast<float>(head_dim));

  std::vector<int> positions(static_cast<size_t>(t));
  std::iota(positions.begin(), positions.end(), 0);

  Var x = tape.add(tape.embedding_lookup(bound.tok_emb, tokens),
                   tape.embedding_lookup(bound.pos_emb, positions));
  Var mask = tape.constant(causal_mask(t));
  // Gain-only norms share one zero bias that carries no gradient.
  Var zero_bias = tape.constant(Tensor({config.d_model}));

  for (const auto& layer : bound.layers) {
    Var h = tape.layer_norm(x, layer.ln_g, zero_bias);
    Var q = tape.matmul(h, layer.wq);
    Var k = tape.matmul(h, layer.wk);
    Var v = tape.matmul(h, layer.wv);
    std::vector<Var> head_outs;
    head_outs.reserve(static_cast<size_t>(heads));
    for (int hd = 0; hd < heads; ++hd) {
      Var qh = tape.slice_cols(q, hd * head_dim, head_dim);
      Var kh = tape.slice_cols(k, hd * head_dim, head_dim);
      Var vh = tape.slice_cols(v, hd * head_dim, head_dim);
      Var scores = tape.scale(tape.matmul(qh, tape.transpose(kh)), att_scale);
      Var weights = tape.softmax_rows(tape.add(scores, mask));
      head_outs.push_back(tape.matmul(weights, vh));
    }
    x = tape.add(x, tape.matmul(tape.concat_cols(head_outs), layer.wo));

    Var h2 = tape.layer_norm(x, layer.ln2_g, zero_bias);
    x = tape.add(x, tape.matmul(tape.gelu(tape.matmul(h2, layer.w1)), layer.w2));
  }

  Var normed = tape.layer_norm(x, bound.fin_g, zero_bias);
  return tape.matmul(normed, bound.head_w);
}

Var token_logprobs_on_tape(Tape& tape, const BoundModel& bound, const ModelConfig& config,
                           const std::vector<int>& tokens) {
  if (tokens.size() < 2) {
    throw std::invalid_argument("token_logprobs: sequence of length >= 2 required");
  }
  std::vector<int> inputs(tokens.begin(), tokens.end() - 1);
  std::vector<int> targets(tokens.begin() + 1, tokens.end());
  Var logits = forward_logits_on_tape(tape, bound, config, inputs);
  return tape.token_logprobs(logits, targets);
}

ParamTree grads_from_tape(const Tape& tape, const BoundModel& bound, const ParamTree& like) {
  ParamTree grads = like.zeros_like();
  int flat = 0;
  for (auto& module : grads.modules) {
    for (auto& leaf : module.leaves) {
      leaf.tensor = tape.grad(bound.flat[static_cast<size_t>(flat++)]);
    }
  }
  return grads;
}

Tensor forward_logits(const LanguageModel& model, const std::vector<int>& tokens) {
  Tape tape(false);
  BoundModel bound = bind_model(tape, model, false);
  Var logits = forward_logits_on_tape(tape, bound, model.config, tokens);
  return tape.value(logits);
}

float sequence_nll(const LanguageModel& model, const std::vector<int>& tokens) {
  Tape tape(false);
  BoundModel bound = bind_model(tape, model, false);
  Var lp = token_logprobs_on_tape(tape, bound, model.config, tokens);
  const Tensor& t = tape.value(lp);
  double acc = 0.0;
  for (int64_t i = 0; i < t.size(); ++i) acc += t[i];
  return static_cast<float>(-acc / static_cast<double>(t.size()));
}

std::vector<float> per_token_logprobs(const LanguageModel& model, const std::vector<int>& tokens) {
  Tape tape(false);
  BoundModel bound = bind_model(tape, model, false);
  Var lp = token_logprobs_on_tape(tape, bound, model.config, tokens);
  return tape.value(lp).vec();
}

std::vector<int> generate_greedy(const LanguageModel& model, const std::vector<int>& prefix,
                                 int n_new) {
  if (prefix.empty()) throw std::invalid_argument("generate_greedy: empty prefix");
  if (n_new < 0) throw std::invalid_argument("generate_greedy: negative token count");
  if (static_cast<int>(prefix.size()) + n_new > model.config.max_seq_len) {
    throw std::invalid_argument("generate_greedy: prefix plus continuation exceeds max_seq_len");
  }
  std::vector<int> sequence = prefix;
  std::vector<int> out;
  out.reserve(static_cast<size_t>(n_new));
  for (int step = 0; step < n_new; ++step) {
    Tensor logits = forward_logits(model, sequence);
    const int last = logits.rows() - 1;
    int best = 0;
    float best_val = logits.at2(last, 0);
    for (int j = 1; j < logits.cols(); ++j) {
      if (logits.at2(last, j) > best_val) {
        best_val = logits.at2(last, j);
        best = j;
      }
    }
    sequence.push_back(best);
    out.push_back(best);
  }
  return out;
}

LanguageModel train_model(const LanguageModel& model,
                          const std::vector<std::vector<int>>& sequences,
                          const TrainConfig& config, std::vector<float>* epoch_losses) {
  if (sequences.empty()) throw DataError("train: empty training data");
  for (const auto& seq : sequences) {
    if (seq.size() < 2) throw DataError("train: sequences must have length >= 2");
  }
  LanguageModel trained = model;
  if (config.epochs == 0) return trained;

  AdamWConfig opt_cfg;
  opt_cfg.lr = config.lr;
  opt_cfg.weight_decay = config.weight_decay;
  AdamWState opt = AdamWState::init(trained.params, opt_cfg);

  Rng shuffle_rng(config.seed ^ 0x7bb5d1f0a2c3e48dull);
  std::vector<int> order(sequences.size());
  std::iota(order.begin(), order.end(), 0);

  const int batch_size = std::max(1, config.batch_size);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double epoch_loss = 0.0;
    int batches = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(batch_size)) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(batch_size));
      Tape tape(true);
      BoundModel bound = bind_model(tape, trained, true);
      std::vector<Var> nlls;
      nlls.reserve(end - start);
      for (size_t i = start; i < end; ++i) {
        Var lp = token_logprobs_on_tape(tape, bound, trained.config,
                                        sequences[static_cast<size_t>(order[i])]);
        nlls.push_back(tape.scale(tape.mean(lp), -1.0f));
      }
      Var loss = tape.mean(tape.stack_scalars(nlls));
      tape.backward(loss);
      ParamTree grads = grads_from_tape(tape, bound, trained.params);
      adamw_step(trained.params, grads, opt);
      epoch_loss += tape.value(loss).item();
      ++batches;
    }
    if (epoch_losses) epoch_losses->push_back(static_cast<float>(epoch_loss / batches));
  }
  return trained;
}

}  // namespace qulab
