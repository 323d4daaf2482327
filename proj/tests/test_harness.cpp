#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "qulab/checkpoint.hpp"
#include "qulab/error.hpp"
#include "qulab/manifest.hpp"
#include "qulab/pipeline.hpp"
#include "qulab/report.hpp"
#include "qulab/runconfig.hpp"
#include "testutil.hpp"

using namespace qulab;
namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// Small config so harness tests stay fast.
const char* kSmokeConfig = R"(
[run]
seed = 21

[corpus]
n_entities = 8
relations_per_entity = 2
forget_frac = 0.25
holdout_frac = 0.25

[model]
d_model = 32
n_layers = 2
n_heads = 2
d_ff = 64
max_seq_len = 56

[train]
lr = 2e-3
epochs = 6
batch_size = 4

[unlearn.GA_GDR]
alpha = 2
lr = 1e-4
epochs = 4
batch_size = 4
)";

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) {
    path = fs::temp_directory_path() / name;
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("config parsing, rejection of unknown keys and snapshot round-trip") {
  const ConfigFile file = ConfigFile::parse_text(kSmokeConfig);
  CHECK(file.get_int("corpus.n_entities", 0) == 8);
  CHECK(file.get_double("train.lr", 0.0) == doctest::Approx(2e-3));

  RunConfig rc = RunConfig::from_config(file);
  CHECK(rc.seed == 21);
  CHECK(rc.grid.size() == 1);
  CHECK(rc.grid[0].name == "GA_GDR");
  CHECK(rc.grid[0].config.regularizer == Regularizer::GDR);

  // Canonical text parses back to identical canonical text.
  const std::string text = rc.to_text();
  const RunConfig back = RunConfig::from_config(ConfigFile::parse_text(text));
  CHECK(back.to_text() == text);

  CHECK_THROWS_AS(RunConfig::from_config(ConfigFile::parse_text("[corpus]\nentities = 4\n")),
                  ConfigError);
  CHECK_THROWS_AS(ConfigFile::parse_text("stray = 1\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_config(ConfigFile::parse_text(
                      "[unlearn.GA_XYZ]\nalpha = 1\n")),
                  ConfigError);
}

TEST_CASE("manifest save and load round-trip") {
  TempDir tmp("qulab_manifest_test");
  RunManifest m;
  m.run_id = "r1";
  m.created_at = timestamp_utc();
  m.seed = 5;
  StageRecord rec;
  rec.done = true;
  rec.outputs["data/corpus.jsonl"] = 0xDEADBEEF;
  rec.files_read = {"data/vocab.json"};
  m.stages["gen-data"] = rec;

  const std::string path = (tmp.path / "manifest.json").string();
  m.save(path);
  const RunManifest back = RunManifest::load(path);
  CHECK(back.run_id == "r1");
  CHECK(back.seed == 5);
  CHECK(back.stage_done("gen-data"));
  CHECK_FALSE(back.stage_done("train"));
  CHECK(back.stages.at("gen-data").outputs.at("data/corpus.jsonl") == 0xDEADBEEF);
  CHECK(back.stages.at("gen-data").files_read == std::vector<std::string>{"data/vocab.json"});
}

TEST_CASE("eval report json round-trip preserves every field") {
  EvalReport r;
  r.model_label = "GA_KLR";
  r.precision_label = "int4";
  r.verbmem_forget = 75.6;
  r.knowmem_forget = 34.6;
  r.knowmem_retain = 51.3;
  r.privleak_available = true;
  r.privleak = -60.0;
  r.auc_unlearn = 0.1234;
  r.auc_retrain = 0.5;
  r.holdout_perplexity = 12.75;
  r.verbmem_docs_scored = 16;

  const EvalReport back = eval_report_from_json(eval_report_to_json(r));
  CHECK(back.model_label == r.model_label);
  CHECK(back.precision_label == r.precision_label);
  CHECK(back.verbmem_forget == r.verbmem_forget);
  CHECK(back.knowmem_forget == r.knowmem_forget);
  CHECK(back.knowmem_retain == r.knowmem_retain);
  CHECK(back.privleak == r.privleak);
  CHECK(back.auc_unlearn == r.auc_unlearn);
  CHECK(back.holdout_perplexity == r.holdout_perplexity);
  CHECK(back.verbmem_docs_scored == r.verbmem_docs_scored);
}

TEST_CASE("report renders hand-entered rows unchanged, sorted, csv = md") {
  // Published BOOKS GA_KLR cells: M1 13.0 at full precision, 75.6 at int4.
  EvalReport full;
  full.model_label = "GA_KLR";
  full.precision_label = "full";
  full.verbmem_forget = 13.0;
  full.knowmem_forget = 15.1;
  full.privleak_available = true;
  full.privleak = -40.8;
  full.knowmem_retain = 33.7;

  EvalReport int4 = full;
  int4.precision_label = "int4";
  int4.verbmem_forget = 75.6;
  int4.knowmem_forget = 34.6;
  int4.privleak = -60.0;
  int4.knowmem_retain = 51.3;

  EvalReport target;
  target.model_label = "target";
  target.precision_label = "full";
  target.verbmem_forget = 99.8;
  target.knowmem_forget = 59.4;
  target.privleak_available = true;
  target.privleak = -57.5;
  target.knowmem_retain = 66.9;

  // Deliberately shuffled input order.
  const std::vector<EvalReport> rows = {int4, target, full};
  const std::string md = render_markdown_table(rows);
  const std::string csv = render_csv_table(rows);

  CHECK(md.find("| GA_KLR | full | 13.0 | 15.1 | -40.8 | 33.7 |") != std::string::npos);
  CHECK(md.find("| GA_KLR | int4 | 75.6 | 34.6 | -60.0 | 51.3 |") != std::string::npos);
  CHECK(csv.find("GA_KLR,full,13.0,15.1,-40.8,33.7") != std::string::npos);
  CHECK(csv.find("GA_KLR,int4,75.6,34.6,-60.0,51.3") != std::string::npos);

  // target rows come first, then methods; full precedes int4
  const size_t target_pos = csv.find("target,full");
  const size_t klr_full_pos = csv.find("GA_KLR,full");
  const size_t klr_int4_pos = csv.find("GA_KLR,int4");
  CHECK(target_pos != std::string::npos);
  CHECK(target_pos < klr_full_pos);
  CHECK(klr_full_pos < klr_int4_pos);

  // identical numeric content in both renderings
  for (const char* cell : {"13.0", "15.1", "-40.8", "33.7", "75.6", "34.6", "-60.0", "51.3",
                           "99.8", "59.4", "-57.5", "66.9"}) {
    CHECK(md.find(cell) != std::string::npos);
    CHECK(csv.find(cell) != std::string::npos);
  }
}

TEST_CASE("pipeline stages produce, resume and audit") {
  TempDir tmp("qulab_pipe_test");
  const std::string run_dir = (tmp.path / "run").string();
  RunConfig rc = RunConfig::from_config(ConfigFile::parse_text(kSmokeConfig));

  Pipeline pipe(run_dir, rc, true);
  pipe.gen_data();

  SUBCASE("gen-data is byte-stable across reruns") {
    const std::string first = read_file(fs::path(run_dir) / "data" / "corpus.jsonl");
    fs::remove(fs::path(run_dir) / "data" / "corpus.jsonl");  // invalidate
    Pipeline again(run_dir, rc, true);
    again.gen_data();
    CHECK(read_file(fs::path(run_dir) / "data" / "corpus.jsonl") == first);
  }

  SUBCASE("line counts match the configured split fractions") {
    auto count_lines = [&](const std::string& name) {
      std::istringstream is(read_file(fs::path(run_dir) / "data" / name));
      int n = 0;
      std::string line;
      while (std::getline(is, line)) {
        if (!line.empty()) ++n;
      }
      return n;
    };
    CHECK(count_lines("forget.jsonl") == 2 * 2);   // 2 of 8 entities
    CHECK(count_lines("holdout.jsonl") == 2 * 2);
    CHECK(count_lines("retain.jsonl") == 4 * 2);
    CHECK(count_lines("qa.jsonl") == 16);  // one pair per fact
    CHECK(count_lines("corpus.jsonl") == 16);
  }

  SUBCASE("config snapshot is immutable") {
    RunConfig other = rc;
    other.seed = 99;
    CHECK_THROWS_AS(Pipeline(run_dir, other, true), ConfigError);
  }

  SUBCASE("train then retrain; the retrain audit never reads forget files") {
    pipe.train_target();
    pipe.train_retrain();
    const auto& retrain_reads = pipe.manifest().stages.at("retrain").files_read;
    CHECK_FALSE(retrain_reads.empty());
    for (const auto& path : retrain_reads) {
      CAPTURE(path);
      CHECK(path.find("forget") == std::string::npos);
    }
    // the target training does read the forget split
    bool target_saw_forget = false;
    for (const auto& path : pipe.manifest().stages.at("train").files_read) {
      target_saw_forget = target_saw_forget || path.find("forget") != std::string::npos;
    }
    CHECK(target_saw_forget);

    // checkpoints reload bit-identically
    const LanguageModel target = load_checkpoint(pipe.ckpt_path("target", "full"));
    save_checkpoint(pipe.ckpt_path("target", "full") + ".copy", target);
    CHECK(read_file(pipe.ckpt_path("target", "full")) ==
          read_file(pipe.ckpt_path("target", "full") + ".copy"));

    SUBCASE("completed stages are skipped, invalidated stages rerun") {
      const auto before = fs::last_write_time(pipe.ckpt_path("target", "full"));
      Pipeline resumed(run_dir, rc, true);
      resumed.train_target();  // validates and skips
      CHECK(fs::last_write_time(resumed.ckpt_path("target", "full")) == before);

      // corrupt the checkpoint; the stage must recompute
      {
        std::ofstream out(resumed.ckpt_path("target", "full"),
                          std::ios::binary | std::ios::app);
        out << "garbage";
      }
      Pipeline repaired(run_dir, rc, true);
      repaired.train_target();
      const LanguageModel fixed = load_checkpoint(repaired.ckpt_path("target", "full"));
      CHECK(testutil::trees_bit_identical(fixed.params, target.params));
    }

    SUBCASE("unlearn cell writes checkpoint and log; eval needs its inputs") {
      pipe.unlearn_cell("GA_GDR");
      CHECK(fs::exists(pipe.ckpt_path("GA_GDR", "full")));
      CHECK(fs::exists(fs::path(run_dir) / "logs" / "unlearn.GA_GDR.json"));
      const LanguageModel unlearned = load_checkpoint(pipe.ckpt_path("GA_GDR", "full"));
      CHECK_FALSE(testutil::trees_bit_identical(unlearned.params, target.params));

      CHECK_THROWS_AS(pipe.eval_model("GA_GDR", "int4"), DataError);
      pipe.quantize_checkpoint("GA_GDR", 4);
      pipe.eval_model("GA_GDR", "int4");
      CHECK(fs::exists(pipe.report_path("GA_GDR", "int4")));
      const EvalReport rep = load_eval_report(pipe.report_path("GA_GDR", "int4"));
      CHECK(rep.model_label == "GA_GDR");
      CHECK(rep.precision_label == "int4");
      // no retrain reference evaluated yet: M3 marked absent
      CHECK_FALSE(rep.privleak_available);
    }
  }
}

TEST_CASE("unknown unlearn cell is a config error") {
  TempDir tmp("qulab_pipe_cfg_test");
  RunConfig rc = RunConfig::from_config(ConfigFile::parse_text(kSmokeConfig));
  Pipeline pipe((tmp.path / "run").string(), rc, true);
  CHECK_THROWS_AS(pipe.unlearn_cell("NPO_KLR"), ConfigError);
}
