#include "qulab/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>
#include <stdexcept>
#include <unordered_map>

#include "qulab/error.hpp"
#include "qulab/rng.hpp"

namespace qulab {

namespace {

struct RelationTemplate {
  const char* relation;
  const char* sentence;  // with {E} and {V}
  const char* question;  // with {E}
};

// Fixed relation set; relations_per_entity picks a prefix of it.
constexpr RelationTemplate kRelations[] = {
    {"capital", "The capital of {E} is {V}.", "What is the capital of {E}?"},
    {"founder", "The founder of {E} is {V}.", "Who is the founder of {E}?"},
    {"currency", "The currency of {E} is {V}.", "What is the currency of {E}?"},
    {"anthem", "The anthem of {E} is {V}.", "What is the anthem of {E}?"},
    {"river", "The river of {E} is {V}.", "What is the river of {E}?"},
    {"festival", "The festival of {E} is {V}.", "What is the festival of {E}?"},
};
constexpr int kNumRelations = static_cast<int>(sizeof(kRelations) / sizeof(kRelations[0]));

const RelationTemplate* find_template(const std::string& relation) {
  for (const auto& t : kRelations) {
    if (relation == t.relation) return &t;
  }
  return nullptr;
}

std::string expand(const char* tmpl, const std::string& entity, const std::string& value) {
  std::string out;
  for (const char* p = tmpl; *p; ++p) {
    if (p[0] == '{' && p[1] == 'E' && p[2] == '}') {
      out += entity;
      p += 2;
    } else if (p[0] == '{' && p[1] == 'V' && p[2] == '}') {
      out += value;
      p += 2;
    } else {
      out += *p;
    }
  }
  return out;
}

// Capitalized CVCV(CV) pseudoword, a string the model cannot know from
// anywhere but the corpus.
std::string pseudoword(Rng& rng) {
  static const char consonants[] = "bdfghklmnprstvz";
  static const char vowels[] = "aeiou";
  const int syllables = 2 + static_cast<int>(rng.next_below(2));
  std::string w;
  for (int s = 0; s < syllables; ++s) {
    w += consonants[rng.next_below(sizeof(consonants) - 1)];
    w += vowels[rng.next_below(sizeof(vowels) - 1)];
  }
  if (rng.next_below(2) == 0) w += consonants[rng.next_below(sizeof(consonants) - 1)];
  w[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(w[0])));
  return w;
}

std::string fresh_pseudoword(Rng& rng, std::set<std::string>& used) {
  for (int attempt = 0; attempt < 10000; ++attempt) {
    std::string w = pseudoword(rng);
    if (used.insert(w).second) return w;
  }
  throw DataError("corpus: pseudoword space exhausted");
}

// Values are two-word phrases ("Brinhollow Kedari"), so answer scoring has
// token-level granularity instead of a single all-or-nothing token.
std::string fresh_value_phrase(Rng& rng, std::set<std::string>& used) {
  return fresh_pseudoword(rng, used) + " " + fresh_pseudoword(rng, used);
}

}  // namespace

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> out;
  std::string word;
  for (char c : text) {
    const unsigned char uc = static_cast<unsigned char>(c);
    if (std::isalnum(uc) || c == '\'') {
      word += c;
    } else {
      if (!word.empty()) {
        out.push_back(word);
        word.clear();
      }
      if (!std::isspace(uc)) out.push_back(std::string(1, c));
    }
  }
  if (!word.empty()) out.push_back(word);
  return out;
}

TokenizerVocab TokenizerVocab::build(const std::vector<std::string>& texts) {
  TokenizerVocab vocab;
  vocab.tokens_ = {"<pad>", "<bos>", "<eos>", "<unk>"};
  std::set<std::string> seen(vocab.tokens_.begin(), vocab.tokens_.end());
  for (const auto& text : texts) {
    for (auto& w : split_words(text)) {
      if (seen.insert(w).second) vocab.tokens_.push_back(w);
    }
  }
  return vocab;
}

TokenizerVocab TokenizerVocab::from_tokens(std::vector<std::string> tokens) {
  if (tokens.size() < 4) throw DataError("vocab: missing reserved tokens");
  TokenizerVocab vocab;
  vocab.tokens_ = std::move(tokens);
  return vocab;
}

int TokenizerVocab::id_of(const std::string& token) const {
  for (size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i] == token) return static_cast<int>(i);
  }
  return kUnk;
}

const std::string& TokenizerVocab::token_of(int id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("vocab: token id out of range");
  return tokens_[static_cast<size_t>(id)];
}

std::vector<FactRecord> generate_corpus(int n_entities, int relations_per_entity, uint64_t seed) {
  if (n_entities < 3) throw ConfigError("generate_corpus: need at least 3 entities");
  if (relations_per_entity < 1 || relations_per_entity > kNumRelations) {
    throw ConfigError("generate_corpus: relations_per_entity out of range");
  }
  Rng rng(seed ^ 0xC0FFEEull);
  std::set<std::string> used;
  std::vector<std::string> entities;
  entities.reserve(static_cast<size_t>(n_entities));
  for (int i = 0; i < n_entities; ++i) entities.push_back(fresh_pseudoword(rng, used));

  std::vector<FactRecord> facts;
  facts.reserve(static_cast<size_t>(n_entities) * static_cast<size_t>(relations_per_entity));
  for (const auto& entity : entities) {
    for (int r = 0; r < relations_per_entity; ++r) {
      const RelationTemplate& t = kRelations[r];
      FactRecord fact;
      fact.entity = entity;
      fact.relation = t.relation;
      fact.value = fresh_value_phrase(rng, used);
      fact.sentence = expand(t.sentence, fact.entity, fact.value);
      facts.push_back(std::move(fact));
    }
  }
  return facts;
}

CorpusSplits make_splits(const std::vector<FactRecord>& facts, double forget_frac,
                         double holdout_frac, uint64_t seed) {
  if (!(forget_frac > 0.0 && forget_frac < 1.0) || !(holdout_frac > 0.0 && holdout_frac < 1.0) ||
      forget_frac + holdout_frac >= 1.0) {
    throw ConfigError("make_splits: fractions must lie in (0,1) and sum below 1");
  }
  // Entities in order of first appearance.
  std::vector<std::string> entities;
  std::set<std::string> seen;
  for (const auto& f : facts) {
    if (seen.insert(f.entity).second) entities.push_back(f.entity);
  }
  const int n = static_cast<int>(entities.size());
  if (n < 3) throw ConfigError("make_splits: need at least 3 entities");

  const int n_forget = std::max<int>(1, static_cast<int>(std::llround(forget_frac * n)));
  const int n_holdout = std::max<int>(1, static_cast<int>(std::llround(holdout_frac * n)));
  if (n_forget + n_holdout >= n) {
    throw ConfigError("make_splits: no entities left for the retain split");
  }

  std::vector<std::string> shuffled = entities;
  Rng rng(seed ^ 0x5EEDull);
  rng.shuffle(shuffled);

  std::set<std::string> forget_set(shuffled.begin(), shuffled.begin() + n_forget);
  std::set<std::string> holdout_set(shuffled.begin() + n_forget,
                                    shuffled.begin() + n_forget + n_holdout);

  CorpusSplits splits;
  splits.seed = seed;
  for (const auto& f : facts) {
    if (forget_set.count(f.entity)) {
      splits.forget.push_back(f);
    } else if (holdout_set.count(f.entity)) {
      splits.holdout.push_back(f);
    } else {
      splits.retain.push_back(f);
    }
  }
  return splits;
}

std::pair<std::string, std::string> render_qa(const FactRecord& fact) {
  const RelationTemplate* t = find_template(fact.relation);
  if (!t) throw DataError("render_qa: no template for relation '" + fact.relation + "'");
  return {expand(t->question, fact.entity, fact.value), fact.value};
}

std::vector<int> tokenize(const TokenizerVocab& vocab, const std::string& text) {
  std::vector<int> ids;
  for (const auto& w : split_words(text)) ids.push_back(vocab.id_of(w));
  return ids;
}

std::string detokenize(const TokenizerVocab& vocab, const std::vector<int>& ids) {
  std::string out;
  for (int id : ids) {
    const std::string& tok = vocab.token_of(id);
    const bool is_punct = tok.size() == 1 && !std::isalnum(static_cast<unsigned char>(tok[0]));
    if (!out.empty() && !is_punct) out += ' ';
    out += tok;
  }
  return out;
}

std::vector<EntityDoc> entity_documents(const std::vector<FactRecord>& facts) {
  std::vector<EntityDoc> docs;
  std::unordered_map<std::string, size_t> index;
  for (const auto& f : facts) {
    auto it = index.find(f.entity);
    if (it == index.end()) {
      index.emplace(f.entity, docs.size());
      docs.push_back({f.entity, f.sentence});
    } else {
      docs[it->second].text += " " + f.sentence;
    }
  }
  return docs;
}

std::string qa_train_text(const FactRecord& fact) {
  auto [question, answer] = render_qa(fact);
  return question + " " + answer;
}

std::vector<int> wrap_sequence(const TokenizerVocab& vocab, const std::string& text) {
  std::vector<int> ids;
  ids.push_back(TokenizerVocab::kBos);
  for (int id : tokenize(vocab, text)) ids.push_back(id);
  ids.push_back(TokenizerVocab::kEos);
  return ids;
}

}  // namespace qulab
