#include "qulab/pipeline.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "qulab/checkpoint.hpp"
#include "qulab/error.hpp"
#include "qulab/metrics.hpp"
#include "qulab/quant.hpp"
#include "qulab/report.hpp"
#include "qulab/unlearn.hpp"

namespace qulab {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << text;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

json fact_to_json(const FactRecord& f) {
  json j;
  j["entity"] = f.entity;
  j["relation"] = f.relation;
  j["value"] = f.value;
  j["sentence"] = f.sentence;
  return j;
}

FactRecord fact_from_json(const json& j) {
  FactRecord f;
  f.entity = j.at("entity").get<std::string>();
  f.relation = j.at("relation").get<std::string>();
  f.value = j.at("value").get<std::string>();
  f.sentence = j.at("sentence").get<std::string>();
  return f;
}

void write_facts_jsonl(const std::string& path, const std::vector<FactRecord>& facts) {
  std::ostringstream os;
  for (const auto& f : facts) os << fact_to_json(f).dump() << "\n";
  write_text_file(path, os.str());
}

}  // namespace

Pipeline::Pipeline(std::string run_dir, RunConfig config, bool quiet)
    : run_dir_(std::move(run_dir)), config_(std::move(config)), quiet_(quiet) {
  fs::create_directories(run_dir_);
  for (const char* sub : {"data", "ckpts", "masks", "reports", "collisions", "logs"}) {
    fs::create_directories(fs::path(run_dir_) / sub);
  }
  const std::string snapshot_path = run_dir_ + "/config.snapshot";
  const std::string text = config_.to_text();
  if (fs::exists(snapshot_path)) {
    const std::string existing = read_text_file(snapshot_path);
    if (existing != text) {
      throw ConfigError("run directory holds a different config snapshot: " + snapshot_path);
    }
  } else {
    write_text_file(snapshot_path, text);
  }
  const std::string manifest_path = run_dir_ + "/manifest.json";
  if (fs::exists(manifest_path)) {
    manifest_ = RunManifest::load(manifest_path);
  } else {
    manifest_.run_id = fs::path(run_dir_).filename().string();
    manifest_.created_at = timestamp_utc();
    manifest_.seed = config_.seed;
    save_manifest();
  }
}

Pipeline Pipeline::open(const std::string& run_dir, bool quiet) {
  const std::string snapshot_path = run_dir + "/config.snapshot";
  if (!fs::exists(snapshot_path)) {
    throw DataError("no config snapshot in " + run_dir + "; run gen-data or pipeline first");
  }
  RunConfig config = RunConfig::from_config(ConfigFile::parse_text(read_text_file(snapshot_path)));
  return Pipeline(run_dir, std::move(config), quiet);
}

void Pipeline::save_manifest() {
  manifest_.updated_at = timestamp_utc();
  manifest_.save(run_dir_ + "/manifest.json");
}

std::string Pipeline::rel(const std::string& abs_path) const {
  return fs::relative(abs_path, run_dir_).string();
}

void Pipeline::log_line(const std::string& text) const {
  if (!quiet_) std::cout << "[qulab] " << text << "\n" << std::flush;
}

bool Pipeline::stage_valid(const std::string& name) const {
  auto it = manifest_.stages.find(name);
  if (it == manifest_.stages.end() || !it->second.done) return false;
  for (const auto& [file, crc] : it->second.outputs) {
    const std::string path = run_dir_ + "/" + file;
    if (!fs::exists(path)) return false;
    if (crc32_file(path) != crc) return false;
  }
  return true;
}

void Pipeline::run_stage(const std::string& name,
                         const std::function<std::vector<std::string>()>& body) {
  if (stage_valid(name)) {
    log_line("skip " + name + " (outputs validate)");
    return;
  }
  log_line("run  " + name);
  StageRecord& rec = manifest_.stages[name];
  rec.done = false;
  rec.error.clear();
  rec.outputs.clear();
  rec.files_read.clear();
  std::vector<std::string> audit;
  active_audit_ = &audit;
  try {
    const std::vector<std::string> produced = body();
    active_audit_ = nullptr;
    for (const auto& path : produced) rec.outputs[rel(path)] = crc32_file(path);
    rec.files_read = audit;
    rec.done = true;
    save_manifest();
  } catch (const std::exception& e) {
    active_audit_ = nullptr;
    rec.error = e.what();
    rec.files_read = audit;
    save_manifest();
    throw;
  }
}

uint64_t Pipeline::stage_seed(const std::string& purpose) const {
  return config_.seed ^ fnv1a(purpose);
}

std::vector<FactRecord> Pipeline::load_facts_file(const std::string& name) {
  const std::string path = run_dir_ + "/data/" + name;
  if (active_audit_) active_audit_->push_back(rel(path));
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path + "; run gen-data first");
  std::vector<FactRecord> facts;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      facts.push_back(fact_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return facts;
}

CorpusSplits Pipeline::load_splits(bool with_forget, bool with_holdout) {
  CorpusSplits splits;
  splits.seed = stage_seed("splits");
  if (with_forget) splits.forget = load_facts_file("forget.jsonl");
  splits.retain = load_facts_file("retain.jsonl");
  if (with_holdout) splits.holdout = load_facts_file("holdout.jsonl");
  return splits;
}

TokenizerVocab Pipeline::load_vocab() {
  const std::string path = run_dir_ + "/data/vocab.json";
  if (active_audit_) active_audit_->push_back(rel(path));
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw DataError(std::string("vocab parse error: ") + e.what());
  }
  return TokenizerVocab::from_tokens(j.at("tokens").get<std::vector<std::string>>());
}

std::vector<std::string> Pipeline::model_labels() const {
  std::vector<std::string> labels = {"target", "retrain"};
  for (const auto& cell : config_.grid) labels.push_back(cell.name);
  return labels;
}

std::string Pipeline::precision_label(int bits) const { return "int" + std::to_string(bits); }

std::string Pipeline::ckpt_path(const std::string& model_label,
                                const std::string& precision) const {
  if (precision == "full") return run_dir_ + "/ckpts/" + model_label + ".qlb";
  return run_dir_ + "/ckpts/" + model_label + "." + precision + ".qlb";
}

std::string Pipeline::report_path(const std::string& model_label,
                                  const std::string& precision) const {
  return run_dir_ + "/reports/" + model_label + "." + precision + ".json";
}

const UnlearnCell& Pipeline::find_cell(const std::string& name) const {
  for (const auto& cell : config_.grid) {
    if (cell.name == name) return cell;
  }
  throw ConfigError("unknown unlearn cell '" + name + "'");
}

void Pipeline::gen_data() {
  run_stage("gen-data", [&]() -> std::vector<std::string> {
    const auto facts = generate_corpus(config_.corpus.n_entities,
                                       config_.corpus.relations_per_entity, stage_seed("corpus"));
    const CorpusSplits splits = make_splits(facts, config_.corpus.forget_frac,
                                            config_.corpus.holdout_frac, stage_seed("splits"));

    std::vector<std::string> texts;
    for (const auto& f : facts) {
      texts.push_back(f.sentence);
      texts.push_back(qa_train_text(f));
    }
    const TokenizerVocab vocab = TokenizerVocab::build(texts);

    const std::string data = run_dir_ + "/data";
    write_facts_jsonl(data + "/corpus.jsonl", facts);
    write_facts_jsonl(data + "/forget.jsonl", splits.forget);
    write_facts_jsonl(data + "/retain.jsonl", splits.retain);
    write_facts_jsonl(data + "/holdout.jsonl", splits.holdout);

    std::ostringstream qa;
    auto qa_lines = [&](const std::vector<FactRecord>& list, const char* split_name) {
      for (const auto& f : list) {
        auto [question, answer] = render_qa(f);
        json j;
        j["entity"] = f.entity;
        j["relation"] = f.relation;
        j["question"] = question;
        j["answer"] = answer;
        j["split"] = split_name;
        qa << j.dump() << "\n";
      }
    };
    qa_lines(splits.forget, "forget");
    qa_lines(splits.retain, "retain");
    qa_lines(splits.holdout, "holdout");
    write_text_file(data + "/qa.jsonl", qa.str());

    json vj;
    vj["tokens"] = vocab.tokens();
    write_text_file(data + "/vocab.json", vj.dump(2) + "\n");

    return {data + "/corpus.jsonl", data + "/forget.jsonl", data + "/retain.jsonl",
            data + "/holdout.jsonl", data + "/qa.jsonl", data + "/vocab.json"};
  });
}

void Pipeline::train_target() {
  run_stage("train", [&]() -> std::vector<std::string> {
    const TokenizerVocab vocab = load_vocab();
    CorpusSplits splits = load_splits(true, false);

    std::vector<std::vector<int>> sequences;
    const UnlearnData data = build_unlearn_data(splits, vocab, config_.train.include_qa);
    sequences = data.forget;
    sequences.insert(sequences.end(), data.retain.begin(), data.retain.end());

    ModelConfig mc = config_.model;
    mc.vocab_size = vocab.size();
    mc.init_seed = stage_seed("init");
    LanguageModel base = init_model(mc);

    TrainConfig tc;
    tc.lr = config_.train.lr;
    tc.epochs = config_.train.epochs;
    tc.batch_size = config_.train.batch_size;
    tc.weight_decay = config_.train.weight_decay;
    tc.seed = stage_seed("train");
    std::vector<float> losses;
    LanguageModel target = train_model(base, sequences, tc, &losses);

    const std::string path = ckpt_path("target", "full");
    save_checkpoint(path, target);
    json lj;
    lj["epoch_loss"] = losses;
    const std::string log_path = run_dir_ + "/logs/train.json";
    write_text_file(log_path, lj.dump(2) + "\n");
    return {path, log_path};
  });
}

void Pipeline::train_retrain() {
  run_stage("retrain", [&]() -> std::vector<std::string> {
    const TokenizerVocab vocab = load_vocab();
    // The retraining reference never touches the forget split.
    CorpusSplits splits = load_splits(false, false);

    const UnlearnData data = build_unlearn_data(splits, vocab, config_.train.include_qa);
    const std::vector<std::vector<int>>& sequences = data.retain;

    ModelConfig mc = config_.model;
    mc.vocab_size = vocab.size();
    mc.init_seed = stage_seed("init");
    LanguageModel base = init_model(mc);

    TrainConfig tc;
    tc.lr = config_.train.lr;
    tc.epochs = config_.train.epochs;
    tc.batch_size = config_.train.batch_size;
    tc.weight_decay = config_.train.weight_decay;
    tc.seed = stage_seed("retrain");
    std::vector<float> losses;
    LanguageModel retrain = train_model(base, sequences, tc, &losses);

    const std::string path = ckpt_path("retrain", "full");
    save_checkpoint(path, retrain);
    json lj;
    lj["epoch_loss"] = losses;
    const std::string log_path = run_dir_ + "/logs/retrain.json";
    write_text_file(log_path, lj.dump(2) + "\n");
    return {path, log_path};
  });
}

void Pipeline::unlearn_cell(const std::string& cell_name) {
  unlearn_custom(find_cell(cell_name));
}

void Pipeline::unlearn_custom(const UnlearnCell& cell) {
  const std::string cell_name = cell.name;
  run_stage("unlearn:" + cell_name, [&]() -> std::vector<std::string> {
    const std::string target_path = ckpt_path("target", "full");
    if (!fs::exists(target_path)) throw DataError("target checkpoint missing; run train first");
    LanguageModel target = load_checkpoint(target_path);
    const TokenizerVocab vocab = load_vocab();
    CorpusSplits splits = load_splits(true, false);
    const UnlearnData data = build_unlearn_data(splits, vocab, config_.train.include_qa);

    UnlearnConfig uc = cell.config;
    uc.seed = stage_seed("unlearn:" + cell_name);
    const UnlearnResult result = unlearn_run(target, data, uc);

    const std::string path = ckpt_path(cell_name, "full");
    save_checkpoint(path, result.model);
    std::vector<std::string> produced = {path};

    if (result.mask.has_value()) {
      json mj;
      mj["threshold"] = result.mask->threshold;
      json scores = json::object();
      for (const auto& [name, s] : result.mask->scores) scores[name] = s;
      mj["scores"] = scores;
      json bits = json::object();
      for (const auto& [name, b] : result.mask->mask) bits[name] = b;
      mj["mask"] = bits;
      mj["percentile"] = uc.sure_percentile;
      const std::string mask_path = run_dir_ + "/masks/" + cell_name + ".json";
      write_text_file(mask_path, mj.dump(2) + "\n");
      produced.push_back(mask_path);
    }

    json lj;
    lj["epoch_loss"] = result.log.epoch_loss;
    lj["epoch_forget_loss"] = result.log.epoch_forget_loss;
    lj["epoch_regularizer"] = result.log.epoch_regularizer;
    lj["steps"] = result.log.steps;
    const std::string log_path = run_dir_ + "/logs/unlearn." + cell_name + ".json";
    write_text_file(log_path, lj.dump(2) + "\n");
    produced.push_back(log_path);
    return produced;
  });
}

void Pipeline::quantize_checkpoint(const std::string& model_label, int bits) {
  const std::string precision = precision_label(bits);
  run_stage("quantize:" + model_label + ":" + precision, [&]() -> std::vector<std::string> {
    const std::string src = ckpt_path(model_label, "full");
    if (!fs::exists(src)) throw DataError("checkpoint missing: " + src);
    const LanguageModel model = load_checkpoint(src);
    const LanguageModel snapped = quantize_model(model, config_.quant_spec(bits));
    const std::string dst = ckpt_path(model_label, precision);
    save_checkpoint(dst, snapped);
    return {dst};
  });
}

void Pipeline::collision(const std::string& model_label, int bits) {
  const std::string precision = precision_label(bits);
  run_stage("collision:" + model_label + ":" + precision, [&]() -> std::vector<std::string> {
    const LanguageModel target = load_checkpoint(ckpt_path("target", "full"));
    const LanguageModel other = load_checkpoint(ckpt_path(model_label, "full"));
    const CollisionReport rep = collision_report(target.params, other.params,
                                                 config_.quant_spec(bits));
    json j;
    j["bits"] = rep.bits;
    j["fraction"] = rep.fraction;
    j["matches"] = rep.matches;
    j["total"] = rep.total;
    json tensors = json::array();
    for (const auto& t : rep.tensors) {
      json tj;
      tj["name"] = t.name;
      tj["fraction"] = t.fraction;
      tj["matches"] = t.matches;
      tj["total"] = t.total;
      tensors.push_back(tj);
    }
    j["tensors"] = tensors;
    j["abs_delta_over_half_step_histogram"] = rep.histogram;
    j["histogram_bin_width"] = CollisionReport::kHistBinWidth;
    const std::string path =
        run_dir_ + "/collisions/" + model_label + "." + precision + ".json";
    write_text_file(path, j.dump(2) + "\n");
    return {path};
  });
}

void Pipeline::eval_model(const std::string& model_label, const std::string& precision) {
  run_stage("eval:" + model_label + ":" + precision, [&]() -> std::vector<std::string> {
    const std::string src = ckpt_path(model_label, precision);
    if (!fs::exists(src)) throw DataError("checkpoint missing: " + src);
    const LanguageModel model = load_checkpoint(src);
    const TokenizerVocab vocab = load_vocab();
    const CorpusSplits splits = load_splits(true, true);

    // M3 is measured against the retrained model's full-precision AUC.
    std::optional<double> reference;
    const bool is_reference_cell = model_label == "retrain" && precision == "full";
    if (is_reference_cell) {
      const MiaScores own = mia_scores(model, splits, vocab, config_.eval.min_k);
      reference = auc_roc(own.member_scores, own.nonmember_scores);
    } else {
      const std::string ref_path = report_path("retrain", "full");
      if (fs::exists(ref_path)) {
        reference = load_eval_report(ref_path).auc_unlearn;
      }
    }

    EvalReport report = evaluate(model, splits, vocab, config_.eval, reference);
    report.model_label = model_label;
    report.precision_label = precision;
    const std::string path = report_path(model_label, precision);
    save_eval_report(path, report);
    return {path};
  });
}

void Pipeline::write_report() {
  run_stage("report", [&]() -> std::vector<std::string> {
    const std::vector<EvalReport> rows = load_reports_dir(run_dir_ + "/reports");
    if (rows.empty()) {
      log_line("warning: no eval reports found, emitting empty tables");
    }
    const std::string md = render_markdown_table(rows);
    const std::string csv = render_csv_table(rows);
    write_text_file(run_dir_ + "/report.md", md);
    write_text_file(run_dir_ + "/report.csv", csv);
    return {run_dir_ + "/report.md", run_dir_ + "/report.csv"};
  });
}

void Pipeline::run_all() {
  gen_data();
  train_target();
  train_retrain();
  for (const auto& cell : config_.grid) unlearn_cell(cell.name);

  for (const auto& label : model_labels()) {
    for (int bits : config_.quant_bits) quantize_checkpoint(label, bits);
  }

  // The retrained model's full-precision AUC anchors every M3 value.
  eval_model("retrain", "full");
  for (const auto& label : model_labels()) {
    if (label != "retrain") eval_model(label, "full");
    for (int bits : config_.quant_bits) eval_model(label, precision_label(bits));
  }

  for (const auto& cell : config_.grid) {
    for (int bits : config_.quant_bits) collision(cell.name, bits);
  }
  for (int bits : config_.quant_bits) collision("retrain", bits);

  write_report();
}

}  // namespace qulab
