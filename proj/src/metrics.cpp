#include "qulab/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "qulab/error.hpp"

namespace qulab {

namespace {

std::string to_lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

int lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  const size_t n = a.size(), m = b.size();
  std::vector<int> prev(m + 1, 0), cur(m + 1, 0);
  for (size_t i = 1; i <= n; ++i) {
    for (size_t j = 1; j <= m; ++j) {
      if (a[i - 1] == b[j - 1]) {
        cur[j] = prev[j - 1] + 1;
      } else {
        cur[j] = std::max(prev[j], cur[j - 1]);
      }
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

std::vector<int> question_prompt(const TokenizerVocab& vocab, const std::string& question) {
  std::vector<int> prompt;
  prompt.push_back(TokenizerVocab::kBos);
  for (int id : tokenize(vocab, question)) prompt.push_back(id);
  return prompt;
}

std::vector<int> truncate_at_eos(const std::vector<int>& ids) {
  std::vector<int> out;
  for (int id : ids) {
    if (id == TokenizerVocab::kEos) break;
    out.push_back(id);
  }
  return out;
}

}  // namespace

double rouge_l_f1(const std::vector<std::string>& candidate,
                  const std::vector<std::string>& reference) {
  if (candidate.empty() || reference.empty()) return 0.0;
  const int lcs = lcs_length(candidate, reference);
  if (lcs == 0) return 0.0;
  const double p = static_cast<double>(lcs) / static_cast<double>(candidate.size());
  const double r = static_cast<double>(lcs) / static_cast<double>(reference.size());
  return 2.0 * p * r / (p + r);
}

std::vector<std::string> fold_tokens(const TokenizerVocab& vocab, const std::vector<int>& ids) {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int id : ids) out.push_back(to_lower(vocab.token_of(id)));
  return out;
}

double verbmem(const LanguageModel& model, const TokenizerVocab& vocab,
               const std::vector<EntityDoc>& docs, int prefix_len, int* skipped) {
  if (docs.empty()) throw DataError("verbmem: no documents");
  if (prefix_len < 1) throw std::invalid_argument("verbmem: prefix_len must be >= 1");
  double total = 0.0;
  int scored = 0, skip = 0;
  for (const auto& doc : docs) {
    const std::vector<int> tokens = tokenize(vocab, doc.text);
    if (static_cast<int>(tokens.size()) < prefix_len + 2) {
      ++skip;
      continue;
    }
    std::vector<int> prompt;
    prompt.push_back(TokenizerVocab::kBos);
    prompt.insert(prompt.end(), tokens.begin(), tokens.begin() + prefix_len);
    const int n_new = static_cast<int>(tokens.size()) - prefix_len;
    const std::vector<int> continuation = generate_greedy(model, prompt, n_new);
    const std::vector<int> reference(tokens.begin() + prefix_len, tokens.end());
    total += rouge_l_f1(fold_tokens(vocab, continuation), fold_tokens(vocab, reference));
    ++scored;
  }
  if (skipped) *skipped = skip;
  if (scored == 0) throw DataError("verbmem: every document shorter than prefix_len + 2");
  return 100.0 * total / scored;
}

double knowmem(const LanguageModel& model, const TokenizerVocab& vocab,
               const std::vector<FactRecord>& facts, int max_answer_tokens) {
  if (facts.empty()) throw DataError("knowmem: no qa pairs");
  if (max_answer_tokens < 1) throw std::invalid_argument("knowmem: max_answer_tokens must be >= 1");
  double total = 0.0;
  for (const auto& fact : facts) {
    auto [question, answer] = render_qa(fact);
    const std::vector<int> prompt = question_prompt(vocab, question);
    const int room = model.config.max_seq_len - static_cast<int>(prompt.size());
    const int n_new = std::min(max_answer_tokens, room);
    if (n_new < 1) throw DataError("knowmem: question fills the whole context window");
    const std::vector<int> raw = generate_greedy(model, prompt, n_new);
    const std::vector<int> generated = truncate_at_eos(raw);
    total += rouge_l_f1(fold_tokens(vocab, generated),
                        fold_tokens(vocab, tokenize(vocab, answer)));
  }
  return 100.0 * total / static_cast<double>(facts.size());
}

double min_k_score(const LanguageModel& model, const std::vector<int>& sequence, double k) {
  if (sequence.size() < 2) throw std::invalid_argument("min_k_score: sequence too short");
  if (!(k > 0.0 && k <= 1.0)) throw std::invalid_argument("min_k_score: k must be in (0, 1]");
  std::vector<float> lp = per_token_logprobs(model, sequence);
  const int take =
      static_cast<int>(std::ceil(k * static_cast<double>(lp.size())));
  std::sort(lp.begin(), lp.end());
  double acc = 0.0;
  for (int i = 0; i < take; ++i) acc += lp[static_cast<size_t>(i)];
  return acc / take;
}

double auc_roc(const std::vector<double>& member_scores,
               const std::vector<double>& nonmember_scores) {
  if (member_scores.empty() || nonmember_scores.empty()) {
    throw DataError("auc_roc: empty score list");
  }
  // Midrank Mann-Whitney.
  struct Entry {
    double score;
    bool member;
  };
  std::vector<Entry> all;
  all.reserve(member_scores.size() + nonmember_scores.size());
  for (double s : member_scores) all.push_back({s, true});
  for (double s : nonmember_scores) all.push_back({s, false});
  std::sort(all.begin(), all.end(), [](const Entry& a, const Entry& b) { return a.score < b.score; });

  double member_rank_sum = 0.0;
  size_t i = 0;
  while (i < all.size()) {
    size_t j = i;
    while (j < all.size() && all[j].score == all[i].score) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // ranks are 1-based
    for (size_t t = i; t < j; ++t) {
      if (all[t].member) member_rank_sum += midrank;
    }
    i = j;
  }
  const double n = static_cast<double>(member_scores.size());
  const double m = static_cast<double>(nonmember_scores.size());
  const double u = member_rank_sum - n * (n + 1.0) / 2.0;
  return u / (n * m);
}

double privleak(double auc_unlearn, double auc_retrain) {
  if (!(auc_retrain > 0.0)) throw NumericError("privleak: reference AUC must be positive");
  return (auc_unlearn - auc_retrain) / auc_retrain * 100.0;
}

MiaScores mia_scores(const LanguageModel& model, const CorpusSplits& splits,
                     const TokenizerVocab& vocab, double k) {
  if (splits.forget.empty() || splits.holdout.empty()) {
    throw DataError("mia_scores: forget and holdout splits must be nonempty");
  }
  MiaScores scores;
  scores.k = k;
  for (const auto& doc : entity_documents(splits.forget)) {
    scores.member_scores.push_back(min_k_score(model, wrap_sequence(vocab, doc.text), k));
  }
  for (const auto& doc : entity_documents(splits.holdout)) {
    scores.nonmember_scores.push_back(min_k_score(model, wrap_sequence(vocab, doc.text), k));
  }
  return scores;
}

double holdout_perplexity(const LanguageModel& model, const CorpusSplits& splits,
                          const TokenizerVocab& vocab) {
  if (splits.holdout.empty()) throw DataError("holdout_perplexity: empty holdout split");
  double nll_sum = 0.0;
  int64_t positions = 0;
  for (const auto& doc : entity_documents(splits.holdout)) {
    const std::vector<int> seq = wrap_sequence(vocab, doc.text);
    const std::vector<float> lp = per_token_logprobs(model, seq);
    for (float v : lp) nll_sum -= v;
    positions += static_cast<int64_t>(lp.size());
  }
  return std::exp(nll_sum / static_cast<double>(positions));
}

EvalReport evaluate(const LanguageModel& model, const CorpusSplits& splits,
                    const TokenizerVocab& vocab, const EvalConfig& config,
                    std::optional<double> retrain_auc_reference) {
  if (splits.holdout.empty()) throw DataError("evaluate: holdout split required");
  EvalReport report;
  report.verbmem_forget = verbmem(model, vocab, entity_documents(splits.forget),
                                  config.prefix_len, &report.verbmem_docs_skipped);
  report.verbmem_docs_scored =
      static_cast<int>(entity_documents(splits.forget).size()) - report.verbmem_docs_skipped;
  report.knowmem_forget = knowmem(model, vocab, splits.forget, config.max_answer_tokens);
  report.knowmem_retain = knowmem(model, vocab, splits.retain, config.max_answer_tokens);

  const MiaScores mia = mia_scores(model, splits, vocab, config.min_k);
  report.auc_unlearn = auc_roc(mia.member_scores, mia.nonmember_scores);
  if (retrain_auc_reference.has_value()) {
    report.auc_retrain = *retrain_auc_reference;
    report.privleak = privleak(report.auc_unlearn, report.auc_retrain);
    report.privleak_available = true;
  }
  report.holdout_perplexity = holdout_perplexity(model, splits, vocab);
  return report;
}

}  // namespace qulab
