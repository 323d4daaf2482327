#ifndef QULAB_RUNCONFIG_HPP_
#define QULAB_RUNCONFIG_HPP_

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "qulab/metrics.hpp"
#include "qulab/model.hpp"
#include "qulab/quant.hpp"
#include "qulab/unlearn.hpp"

namespace qulab {

// Sectioned key = value text, e.g.
//   [corpus]
//   n_entities = 64
// Keys are addressed as "section.key". Unknown keys are rejected when a
// RunConfig is built, so typos fail loudly.
class ConfigFile {
 public:
  static ConfigFile parse_file(const std::string& path);
  static ConfigFile parse_text(const std::string& text);

  bool has(const std::string& dotted_key) const;
  std::string get_string(const std::string& dotted_key, const std::string& fallback) const;
  double get_double(const std::string& dotted_key, double fallback) const;
  int get_int(const std::string& dotted_key, int fallback) const;
  uint64_t get_u64(const std::string& dotted_key, uint64_t fallback) const;
  bool get_bool(const std::string& dotted_key, bool fallback) const;

  const std::map<std::string, std::string>& entries() const { return entries_; }
  std::vector<std::string> sections() const;

 private:
  std::map<std::string, std::string> entries_;  // "section.key" -> raw value
};

struct CorpusConfig {
  int n_entities = 64;
  int relations_per_entity = 3;
  double forget_frac = 0.25;
  double holdout_frac = 0.25;
};

struct TrainStageConfig {
  float lr = 1e-3f;
  int epochs = 60;
  int batch_size = 8;
  float weight_decay = 0.0f;
  bool include_qa = true;  // QA sequences join the training corpus
};

// One grid cell: an unlearning configuration under a stable label.
struct UnlearnCell {
  std::string name;
  UnlearnConfig config;
};

struct RunConfig {
  uint64_t seed = 7;
  CorpusConfig corpus;
  ModelConfig model;  // vocab_size filled after data generation
  TrainStageConfig train;
  std::vector<UnlearnCell> grid;
  std::vector<int> quant_bits = {8, 4};
  QuantGranularity quant_granularity = QuantGranularity::PerTensor;
  int quant_group_size = 64;
  EvalConfig eval;

  static RunConfig defaults();
  static RunConfig from_file(const std::string& path);
  static RunConfig from_config(const ConfigFile& file);

  // Canonical serialized form, written into the run directory as the
  // immutable config snapshot.
  std::string to_text() const;

  QuantSpec quant_spec(int bits) const;
};

}  // namespace qulab

#endif  // QULAB_RUNCONFIG_HPP_
