#include "qulab/unlearn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "qulab/error.hpp"
#include "qulab/optim.hpp"
#include "qulab/rng.hpp"

namespace qulab {

namespace {

// Per-sequence mean NLL, averaged over the batch.
Var batch_mean_nll(Tape& tape, const BoundModel& bound, const ModelConfig& config,
                   const std::vector<std::vector<int>>& batch) {
  std::vector<Var> nlls;
  nlls.reserve(batch.size());
  for (const auto& seq : batch) {
    Var lp = token_logprobs_on_tape(tape, bound, config, seq);
    nlls.push_back(tape.scale(tape.mean(lp), -1.0f));
  }
  return tape.mean(tape.stack_scalars(nlls));
}

}  // namespace

void UnlearnConfig::validate() const {
  if (alpha < 0.0f) throw ConfigError("unlearn: alpha must be >= 0");
  if (method == UnlearnMethod::NPO && !(beta > 0.0f)) {
    throw ConfigError("unlearn: NPO requires beta > 0");
  }
  if (!(sure_percentile >= 0.0 && sure_percentile <= 100.0)) {
    throw ConfigError("unlearn: sure_percentile must lie in [0, 100]");
  }
  if (epochs < 0) throw ConfigError("unlearn: epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("unlearn: batch_size must be >= 1");
  if (!(lr > 0.0f)) throw ConfigError("unlearn: lr must be positive");
}

std::string UnlearnConfig::label() const {
  std::string s = method == UnlearnMethod::GA ? "GA" : "NPO";
  if (regularizer == Regularizer::GDR) s += "_GDR";
  if (regularizer == Regularizer::KLR) s += "_KLR";
  if (sure_enabled) s += "+SURE";
  return s;
}

UnlearnConfig parse_unlearn_label(const std::string& label) {
  UnlearnConfig config;
  std::string base = label;
  const size_t plus = base.find('+');
  if (plus != std::string::npos) {
    const std::string suffix = base.substr(plus + 1);
    if (suffix != "SURE") throw ConfigError("unlearn: unknown method suffix '" + suffix + "'");
    config.sure_enabled = true;
    base = base.substr(0, plus);
  }
  if (base == "GA") {
    config.method = UnlearnMethod::GA;
    config.regularizer = Regularizer::None;
  } else if (base == "GA_GDR") {
    config.method = UnlearnMethod::GA;
    config.regularizer = Regularizer::GDR;
  } else if (base == "GA_KLR") {
    config.method = UnlearnMethod::GA;
    config.regularizer = Regularizer::KLR;
  } else if (base == "NPO") {
    config.method = UnlearnMethod::NPO;
    config.regularizer = Regularizer::None;
  } else if (base == "NPO_GDR") {
    config.method = UnlearnMethod::NPO;
    config.regularizer = Regularizer::GDR;
  } else if (base == "NPO_KLR") {
    config.method = UnlearnMethod::NPO;
    config.regularizer = Regularizer::KLR;
  } else {
    throw ConfigError("unlearn: unknown method '" + label + "'");
  }
  return config;
}

UnlearnData build_unlearn_data(const CorpusSplits& splits, const TokenizerVocab& vocab,
                               bool include_qa) {
  UnlearnData data;
  for (const auto& doc : entity_documents(splits.forget)) {
    data.forget.push_back(wrap_sequence(vocab, doc.text));
  }
  for (const auto& doc : entity_documents(splits.retain)) {
    data.retain.push_back(wrap_sequence(vocab, doc.text));
  }
  if (include_qa) {
    for (const auto& fact : splits.forget) {
      data.forget.push_back(wrap_sequence(vocab, qa_train_text(fact)));
    }
    for (const auto& fact : splits.retain) {
      data.retain.push_back(wrap_sequence(vocab, qa_train_text(fact)));
    }
  }
  return data;
}

Var loss_ga(Tape& tape, const BoundModel& bound, const ModelConfig& config,
            const std::vector<std::vector<int>>& forget_batch) {
  if (forget_batch.empty()) throw DataError("loss_ga: empty forget batch");
  // Mean log-likelihood = -(mean cross-entropy); same tape, negated.
  return tape.scale(batch_mean_nll(tape, bound, config, forget_batch), -1.0f);
}

Var loss_npo(Tape& tape, const BoundModel& bound, const ModelConfig& config,
             const std::vector<std::vector<int>>& forget_batch,
             const std::vector<float>& target_logprob_sums, float beta) {
  if (forget_batch.empty()) throw DataError("loss_npo: empty forget batch");
  if (!(beta > 0.0f)) throw ConfigError("loss_npo: beta must be positive");
  if (target_logprob_sums.size() != forget_batch.size()) {
    throw std::invalid_argument("loss_npo: one reference log-likelihood per batch element");
  }
  std::vector<Var> terms;
  terms.reserve(forget_batch.size());
  for (size_t b = 0; b < forget_batch.size(); ++b) {
    Var lp_sum = tape.sum(token_logprobs_on_tape(tape, bound, config, forget_batch[b]));
    Var ratio = tape.sub(lp_sum, tape.scalar(target_logprob_sums[b]));
    terms.push_back(tape.logsigmoid(tape.scale(ratio, -beta)));
  }
  Var mean_term = tape.mean(tape.stack_scalars(terms));
  return tape.scale(mean_term, -2.0f / beta);
}

Var loss_gdr(Tape& tape, Var unlearn_loss, const BoundModel& bound, const ModelConfig& config,
             const std::vector<std::vector<int>>& retain_batch, float alpha) {
  if (retain_batch.empty()) throw DataError("loss_gdr: empty retain batch");
  Var retain_ce = batch_mean_nll(tape, bound, config, retain_batch);
  return tape.add(unlearn_loss, tape.scale(retain_ce, alpha));
}

Var loss_klr(Tape& tape, Var unlearn_loss, const BoundModel& bound, const ModelConfig& config,
             const std::vector<std::vector<int>>& retain_batch,
             const std::vector<Tensor>& target_logprob_rows, float alpha) {
  if (retain_batch.empty()) throw DataError("loss_klr: empty retain batch");
  if (target_logprob_rows.size() != retain_batch.size()) {
    throw std::invalid_argument("loss_klr: one reference distribution per batch element");
  }
  std::vector<Var> kl_sums;
  int64_t total_positions = 0;
  for (size_t b = 0; b < retain_batch.size(); ++b) {
    const auto& seq = retain_batch[b];
    std::vector<int> inputs(seq.begin(), seq.end() - 1);
    Var logits = forward_logits_on_tape(tape, bound, config, inputs);
    Var logp = tape.log_softmax_rows(logits);
    Var p = tape.exp(logp);
    Var diff = tape.sub(logp, tape.constant(target_logprob_rows[b]));
    kl_sums.push_back(tape.sum(tape.mul(p, diff)));
    total_positions += static_cast<int64_t>(inputs.size());
  }
  Var kl_total = kl_sums.size() == 1 ? kl_sums[0] : tape.sum(tape.stack_scalars(kl_sums));
  Var kl_mean = tape.scale(kl_total, 1.0f / static_cast<float>(total_positions));
  return tape.add(unlearn_loss, tape.scale(kl_mean, alpha));
}

float sequence_logprob_sum(const LanguageModel& model, const std::vector<int>& tokens) {
  Tape tape(false);
  BoundModel bound = bind_model(tape, model, false);
  Var lp_sum = tape.sum(token_logprobs_on_tape(tape, bound, model.config, tokens));
  return tape.value(lp_sum).item();
}

Tensor reference_logprob_rows(const LanguageModel& model, const std::vector<int>& tokens) {
  Tape tape(false);
  BoundModel bound = bind_model(tape, model, false);
  std::vector<int> inputs(tokens.begin(), tokens.end() - 1);
  Var logits = forward_logits_on_tape(tape, bound, model.config, inputs);
  return tape.value(tape.log_softmax_rows(logits));
}

std::map<std::string, double> compute_saliency(const LanguageModel& model_at_theta_o,
                                               const std::vector<std::vector<int>>& forget_data,
                                               const UnlearnConfig& config) {
  if (forget_data.empty()) throw DataError("compute_saliency: empty forget data");
  Tape tape(true);
  BoundModel bound = bind_model(tape, model_at_theta_o, true);
  Var loss;
  if (config.method == UnlearnMethod::GA) {
    loss = loss_ga(tape, bound, model_at_theta_o.config, forget_data);
  } else {
    // At theta_o the reference model is theta_o itself.
    std::vector<float> ref;
    ref.reserve(forget_data.size());
    for (const auto& seq : forget_data) {
      ref.push_back(sequence_logprob_sum(model_at_theta_o, seq));
    }
    loss = loss_npo(tape, bound, model_at_theta_o.config, forget_data, ref, config.beta);
  }
  tape.backward(loss);

  std::map<std::string, double> scores;
  int flat = 0;
  for (const auto& module : model_at_theta_o.params.modules) {
    double sq = 0.0;
    for (size_t li = 0; li < module.leaves.size(); ++li) {
      const Tensor& g = tape.grad(bound.flat[static_cast<size_t>(flat++)]);
      for (int64_t i = 0; i < g.size(); ++i) {
        sq += static_cast<double>(g[i]) * static_cast<double>(g[i]);
      }
    }
    scores[module.name] = std::sqrt(sq);
  }
  return scores;
}

SaliencyMask build_mask(const std::map<std::string, double>& scores, double percentile) {
  if (scores.empty()) throw DataError("build_mask: empty scores");
  if (!(percentile >= 0.0 && percentile <= 100.0)) {
    throw ConfigError("build_mask: percentile must lie in [0, 100]");
  }
  std::vector<double> sorted;
  sorted.reserve(scores.size());
  for (const auto& [name, s] : scores) sorted.push_back(s);
  std::sort(sorted.begin(), sorted.end());

  double gamma;
  if (percentile >= 100.0) {
    // Degenerate top percentile: threshold above every score, nothing masked.
    gamma = std::nextafter(sorted.back(), std::numeric_limits<double>::infinity());
  } else {
    const int n = static_cast<int>(sorted.size());
    const int rank = std::max<int>(
        1, static_cast<int>(std::ceil(percentile / 100.0 * static_cast<double>(n))));
    gamma = sorted[static_cast<size_t>(std::min(rank, n) - 1)];
  }

  SaliencyMask mask;
  mask.scores = scores;
  mask.threshold = gamma;
  for (const auto& [name, s] : scores) mask.mask[name] = s >= gamma ? 1 : 0;
  return mask;
}

UnlearnResult unlearn_run(const LanguageModel& target_model, const UnlearnData& data,
                          const UnlearnConfig& config) {
  config.validate();
  if (data.forget.empty()) throw DataError("unlearn_run: empty forget data");
  const bool needs_retain = config.regularizer != Regularizer::None;
  if (needs_retain && data.retain.empty()) throw DataError("unlearn_run: empty retain data");

  UnlearnResult result;
  result.model = target_model;

  if (config.sure_enabled) {
    result.mask = build_mask(compute_saliency(target_model, data.forget, config),
                             config.sure_percentile);
  }
  if (config.epochs == 0) return result;

  // Frozen reference values from the target model, computed once.
  std::vector<float> npo_ref;
  if (config.method == UnlearnMethod::NPO) {
    npo_ref.reserve(data.forget.size());
    for (const auto& seq : data.forget) {
      npo_ref.push_back(sequence_logprob_sum(target_model, seq));
    }
  }
  std::vector<Tensor> klr_ref;
  if (config.regularizer == Regularizer::KLR) {
    klr_ref.reserve(data.retain.size());
    for (const auto& seq : data.retain) {
      klr_ref.push_back(reference_logprob_rows(target_model, seq));
    }
  }

  AdamWConfig opt_cfg;
  opt_cfg.lr = config.lr;
  AdamWState opt = AdamWState::init(result.model.params, opt_cfg);
  const ModuleMask* gates = result.mask ? &result.mask->mask : nullptr;

  Rng rng(config.seed ^ 0xF0F0F0F0ull);
  std::vector<size_t> forget_order(data.forget.size());
  std::iota(forget_order.begin(), forget_order.end(), size_t{0});
  std::vector<size_t> retain_order(data.retain.size());
  std::iota(retain_order.begin(), retain_order.end(), size_t{0});
  size_t retain_cursor = 0;

  const ModelConfig& mc = result.model.config;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(forget_order);
    double ep_loss = 0.0, ep_forget = 0.0, ep_reg = 0.0;
    int ep_batches = 0;
    for (size_t start = 0; start < forget_order.size();
         start += static_cast<size_t>(config.batch_size)) {
      const size_t end =
          std::min(forget_order.size(), start + static_cast<size_t>(config.batch_size));
      std::vector<std::vector<int>> forget_batch;
      std::vector<float> batch_npo_ref;
      for (size_t i = start; i < end; ++i) {
        forget_batch.push_back(data.forget[forget_order[i]]);
        if (config.method == UnlearnMethod::NPO) {
          batch_npo_ref.push_back(npo_ref[forget_order[i]]);
        }
      }

      Tape tape(true);
      BoundModel bound = bind_model(tape, result.model, true);
      Var forget_loss =
          config.method == UnlearnMethod::GA
              ? loss_ga(tape, bound, mc, forget_batch)
              : loss_npo(tape, bound, mc, forget_batch, batch_npo_ref, config.beta);

      Var loss = forget_loss;
      if (needs_retain) {
        std::vector<std::vector<int>> retain_batch;
        std::vector<Tensor> retain_ref;
        for (size_t i = 0; i < forget_batch.size(); ++i) {
          if (retain_cursor == 0) rng.shuffle(retain_order);
          const size_t idx = retain_order[retain_cursor];
          retain_cursor = (retain_cursor + 1) % retain_order.size();
          retain_batch.push_back(data.retain[idx]);
          if (config.regularizer == Regularizer::KLR) retain_ref.push_back(klr_ref[idx]);
        }
        if (config.regularizer == Regularizer::GDR) {
          loss = loss_gdr(tape, loss, bound, mc, retain_batch, config.alpha);
        } else {
          loss = loss_klr(tape, loss, bound, mc, retain_batch, retain_ref, config.alpha);
        }
      }
      tape.backward(loss);
      ParamTree grads = grads_from_tape(tape, bound, result.model.params);
      adamw_step(result.model.params, grads, opt, gates);

      const double loss_val = tape.value(loss).item();
      const double forget_val = tape.value(forget_loss).item();
      ep_loss += loss_val;
      ep_forget += forget_val;
      if (needs_retain && config.alpha > 0.0f) {
        ep_reg += (loss_val - forget_val) / static_cast<double>(config.alpha);
      }
      ++ep_batches;
      result.log.steps += 1;
    }
    result.log.epoch_loss.push_back(static_cast<float>(ep_loss / ep_batches));
    result.log.epoch_forget_loss.push_back(static_cast<float>(ep_forget / ep_batches));
    result.log.epoch_regularizer.push_back(static_cast<float>(ep_reg / ep_batches));
  }
  return result;
}

}  // namespace qulab
