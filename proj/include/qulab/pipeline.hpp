#ifndef QULAB_PIPELINE_HPP_
#define QULAB_PIPELINE_HPP_

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "qulab/corpus.hpp"
#include "qulab/manifest.hpp"
#include "qulab/runconfig.hpp"

namespace qulab {

// Orchestrates one run directory:
//   <run-dir>/{config.snapshot, manifest.json, data/, ckpts/, masks/,
//              reports/, collisions/, logs/, report.md, report.csv}
// Every stage is checkpointed in the manifest with output checksums, so a
// rerun resumes where it stopped and recomputes anything whose files no
// longer validate.
class Pipeline {
 public:
  // Creates the run directory (or adopts an existing one). The config
  // snapshot is immutable: reopening with a different config is an error.
  Pipeline(std::string run_dir, RunConfig config, bool quiet = false);

  // Reopen from the stored snapshot.
  static Pipeline open(const std::string& run_dir, bool quiet = false);

  void gen_data();
  void train_target();
  void train_retrain();
  void unlearn_cell(const std::string& cell_name);
  void unlearn_custom(const UnlearnCell& cell);  // cell need not be in the grid
  void quantize_checkpoint(const std::string& model_label, int bits);
  void collision(const std::string& model_label, int bits);
  void eval_model(const std::string& model_label, const std::string& precision);
  void write_report();
  void run_all();

  const RunConfig& config() const { return config_; }
  const RunManifest& manifest() const { return manifest_; }
  const std::string& run_dir() const { return run_dir_; }

  std::vector<std::string> model_labels() const;  // target, retrain, grid cells
  std::string precision_label(int bits) const;
  std::string ckpt_path(const std::string& model_label, const std::string& precision) const;
  std::string report_path(const std::string& model_label, const std::string& precision) const;

  // Data access (with the per-stage read audit).
  CorpusSplits load_splits(bool with_forget, bool with_holdout);
  TokenizerVocab load_vocab();

 private:
  void save_manifest();
  bool stage_valid(const std::string& name) const;
  void run_stage(const std::string& name,
                 const std::function<std::vector<std::string>()>& body);
  std::string rel(const std::string& abs_path) const;
  std::vector<FactRecord> load_facts_file(const std::string& name);
  uint64_t stage_seed(const std::string& purpose) const;
  const UnlearnCell& find_cell(const std::string& name) const;
  void log_line(const std::string& text) const;

  std::string run_dir_;
  RunConfig config_;
  RunManifest manifest_;
  bool quiet_ = false;
  std::vector<std::string>* active_audit_ = nullptr;
};

}  // namespace qulab

#endif  // QULAB_PIPELINE_HPP_
