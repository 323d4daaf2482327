#ifndef QULAB_CORPUS_HPP_
#define QULAB_CORPUS_HPP_

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace qulab {

// One synthetic fact, e.g. (Velmora, capital, Brinhollow) rendered as
// "The capital of Velmora is Brinhollow."
struct FactRecord {
  std::string entity;
  std::string relation;
  std::string value;
  std::string sentence;
};

struct CorpusSplits {
  std::vector<FactRecord> forget;
  std::vector<FactRecord> retain;
  std::vector<FactRecord> holdout;
  uint64_t seed = 0;
};

// Word-level closed vocabulary with reserved control ids.
class TokenizerVocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;

  static TokenizerVocab build(const std::vector<std::string>& texts);

  int id_of(const std::string& token) const;  // kUnk when absent
  const std::string& token_of(int id) const;
  int size() const { return static_cast<int>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  static TokenizerVocab from_tokens(std::vector<std::string> tokens);

 private:
  std::vector<std::string> tokens_;
};

// Whitespace/punctuation word segmentation; punctuation marks are their own
// tokens.
std::vector<std::string> split_words(const std::string& text);

std::vector<FactRecord> generate_corpus(int n_entities, int relations_per_entity, uint64_t seed);

// Entity-level partition: all facts of one entity land in exactly one split.
CorpusSplits make_splits(const std::vector<FactRecord>& facts, double forget_frac,
                         double holdout_frac, uint64_t seed);

std::pair<std::string, std::string> render_qa(const FactRecord& fact);

std::vector<int> tokenize(const TokenizerVocab& vocab, const std::string& text);
std::string detokenize(const TokenizerVocab& vocab, const std::vector<int>& ids);

// All sentences of one entity joined in relation order; the unit of
// verbatim-memorization scoring and membership inference.
struct EntityDoc {
  std::string entity;
  std::string text;
};
std::vector<EntityDoc> entity_documents(const std::vector<FactRecord>& facts);

// Question followed by the bare answer, the QA form a sequence model can
// learn and be quizzed on.
std::string qa_train_text(const FactRecord& fact);

// bos + token ids + eos, the canonical training sequence of a text.
std::vector<int> wrap_sequence(const TokenizerVocab& vocab, const std::string& text);

}  // namespace qulab

#endif  // QULAB_CORPUS_HPP_
