#ifndef QULAB_METRICS_HPP_
#define QULAB_METRICS_HPP_

#include <optional>
#include <string>
#include <vector>

#include "qulab/corpus.hpp"
#include "qulab/model.hpp"

namespace qulab {

struct EvalConfig {
  int prefix_len = 8;         // leading tokens given for verbatim continuation
  double min_k = 0.2;         // fraction of lowest per-token log-probs
  int max_answer_tokens = 8;  // generation cap for QA answers
};

// One (model, precision) cell of the results grid.
struct EvalReport {
  std::string model_label;
  std::string precision_label;  // full | int8 | int4
  double verbmem_forget = 0.0;  // M1, percent
  double knowmem_forget = 0.0;  // M2, percent
  double knowmem_retain = 0.0;  // M4, percent
  bool privleak_available = false;
  double privleak = 0.0;  // M3, signed percent
  double auc_unlearn = 0.0;
  double auc_retrain = 0.0;  // reference AUC used for M3
  double holdout_perplexity = 0.0;
  int verbmem_docs_scored = 0;
  int verbmem_docs_skipped = 0;
};

struct MiaScores {
  std::vector<double> member_scores;     // forget sequences
  std::vector<double> nonmember_scores;  // holdout sequences
  double k = 0.2;
};

// ROUGE-L F1 over case-folded word tokens. 0 when either side is empty or
// there is no common subsequence.
double rouge_l_f1(const std::vector<std::string>& candidate, const std::vector<std::string>& reference);

// Case-folded token strings for ROUGE scoring.
std::vector<std::string> fold_tokens(const TokenizerVocab& vocab, const std::vector<int>& ids);

// M1: mean ROUGE-L F1 between the greedy continuation of each doc's first
// prefix_len tokens and the true remainder, in percent. Docs shorter than
// prefix_len + 2 are skipped and counted.
double verbmem(const LanguageModel& model, const TokenizerVocab& vocab,
               const std::vector<EntityDoc>& docs, int prefix_len, int* skipped = nullptr);

// M2/M4: mean ROUGE-L F1 between the greedy answer to each rendered
// question and the true answer, in percent.
double knowmem(const LanguageModel& model, const TokenizerVocab& vocab,
               const std::vector<FactRecord>& facts, int max_answer_tokens);

// Mean of the lowest ceil(k * (T-1)) per-token log-probabilities.
double min_k_score(const LanguageModel& model, const std::vector<int>& sequence, double k);

// Mann-Whitney AUC; ties count 1/2. Higher score predicts member.
double auc_roc(const std::vector<double>& member_scores,
               const std::vector<double>& nonmember_scores);

// Signed percent deviation of the unlearned model's MIA AUC from the
// retrained model's.
double privleak(double auc_unlearn, double auc_retrain);

MiaScores mia_scores(const LanguageModel& model, const CorpusSplits& splits,
                     const TokenizerVocab& vocab, double k);

// Token-weighted perplexity over the holdout documents.
double holdout_perplexity(const LanguageModel& model, const CorpusSplits& splits,
                          const TokenizerVocab& vocab);

EvalReport evaluate(const LanguageModel& model, const CorpusSplits& splits,
                    const TokenizerVocab& vocab, const EvalConfig& config,
                    std::optional<double> retrain_auc_reference);

}  // namespace qulab

#endif  // QULAB_METRICS_HPP_
