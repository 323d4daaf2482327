#ifndef QULAB_UNLEARN_HPP_
#define QULAB_UNLEARN_HPP_

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "qulab/corpus.hpp"
#include "qulab/model.hpp"
#include "qulab/param_tree.hpp"
#include "qulab/tape.hpp"

namespace qulab {

enum class UnlearnMethod { GA, NPO };
enum class Regularizer { None, GDR, KLR };

struct UnlearnConfig {
  UnlearnMethod method = UnlearnMethod::GA;
  Regularizer regularizer = Regularizer::None;
  float alpha = 1.0f;  // retain-loss weight
  float beta = 0.1f;   // NPO temperature
  float lr = 1e-5f;
  int epochs = 10;
  int batch_size = 4;
  uint64_t seed = 0;
  bool sure_enabled = false;
  double sure_percentile = 90.0;

  void validate() const;
  std::string label() const;  // e.g. "GA_GDR+SURE"
};

// "GA", "NPO_KLR", "GA_GDR+SURE", ... -> method/regularizer/sure flags.
UnlearnConfig parse_unlearn_label(const std::string& label);

// Module-level gradient-norm saliency with hard thresholding.
struct SaliencyMask {
  std::map<std::string, double> scores;  // module name -> s_i
  double threshold = 0.0;                // gamma
  ModuleMask mask;                       // module name -> 0/1; 1 iff s_i >= gamma
};

struct UnlearnData {
  std::vector<std::vector<int>> forget;
  std::vector<std::vector<int>> retain;
};

UnlearnData build_unlearn_data(const CorpusSplits& splits, const TokenizerVocab& vocab,
                               bool include_qa);

// ---- loss builders (tape nodes) ----

// Mean log-likelihood of the forget batch; minimizing it ascends the
// cross-entropy.
Var loss_ga(Tape& tape, const BoundModel& bound, const ModelConfig& config,
            const std::vector<std::vector<int>>& forget_batch);

// Sequence log-likelihood (summed over next-token positions) of each batch
// element under the current parameters, against the frozen values
// target_logprob_sums of the reference model.
Var loss_npo(Tape& tape, const BoundModel& bound, const ModelConfig& config,
             const std::vector<std::vector<int>>& forget_batch,
             const std::vector<float>& target_logprob_sums, float beta);

// unlearn_loss + alpha * mean retain cross-entropy.
Var loss_gdr(Tape& tape, Var unlearn_loss, const BoundModel& bound, const ModelConfig& config,
             const std::vector<std::vector<int>>& retain_batch, float alpha);

// unlearn_loss + alpha * mean-over-positions KL(p_theta || p_target) on the
// retain batch; target_logprob_rows[b] holds the frozen reference
// log-probabilities, one row per next-token position of batch element b.
Var loss_klr(Tape& tape, Var unlearn_loss, const BoundModel& bound, const ModelConfig& config,
             const std::vector<std::vector<int>>& retain_batch,
             const std::vector<Tensor>& target_logprob_rows, float alpha);

// ---- frozen-reference helpers ----
float sequence_logprob_sum(const LanguageModel& model, const std::vector<int>& tokens);
Tensor reference_logprob_rows(const LanguageModel& model, const std::vector<int>& tokens);

// s_i = Frobenius norm of the concatenated forget-loss gradients of module
// i, evaluated at the given parameters over the full forget set.
std::map<std::string, double> compute_saliency(const LanguageModel& model_at_theta_o,
                                               const std::vector<std::vector<int>>& forget_data,
                                               const UnlearnConfig& config);

// gamma = nearest-rank percentile of the score multiset; mask[i] = 1 iff
// s_i >= gamma. percentile 100 masks nothing.
SaliencyMask build_mask(const std::map<std::string, double>& scores, double percentile);

struct UnlearnLog {
  std::vector<float> epoch_loss;         // composite objective
  std::vector<float> epoch_forget_loss;  // forget-family term
  std::vector<float> epoch_regularizer;  // unweighted retain term
  int steps = 0;
};

struct UnlearnResult {
  LanguageModel model;
  std::optional<SaliencyMask> mask;
  UnlearnLog log;
};

UnlearnResult unlearn_run(const LanguageModel& target_model, const UnlearnData& data,
                          const UnlearnConfig& config);

}  // namespace qulab

#endif  // QULAB_UNLEARN_HPP_
