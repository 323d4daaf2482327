#include "qulab/report.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "qulab/error.hpp"

namespace qulab {

using nlohmann::json;

namespace {

int precision_rank(const std::string& label) {
  if (label == "full") return 0;
  if (label == "int8") return 1;
  if (label == "int4") return 2;
  return 3;
}

int model_rank(const std::string& label) {
  if (label == "target") return 0;
  if (label == "retrain") return 1;
  return 2;
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

struct Cells {
  std::string m1, m2, m3, m4, auc, ppl;
};

Cells row_cells(const EvalReport& r) {
  Cells c;
  c.m1 = fixed(r.verbmem_forget, 1);
  c.m2 = fixed(r.knowmem_forget, 1);
  c.m3 = r.privleak_available ? fixed(r.privleak, 1) : "-";
  c.m4 = fixed(r.knowmem_retain, 1);
  c.auc = fixed(r.auc_unlearn, 4);
  c.ppl = fixed(r.holdout_perplexity, 3);
  return c;
}

}  // namespace

std::string eval_report_to_json(const EvalReport& r) {
  json j;
  j["model"] = r.model_label;
  j["precision"] = r.precision_label;
  j["verbmem_forget"] = r.verbmem_forget;
  j["knowmem_forget"] = r.knowmem_forget;
  j["knowmem_retain"] = r.knowmem_retain;
  j["privleak_available"] = r.privleak_available;
  if (r.privleak_available) {
    j["privleak"] = r.privleak;
    j["auc_retrain"] = r.auc_retrain;
  }
  j["auc_unlearn"] = r.auc_unlearn;
  j["holdout_perplexity"] = r.holdout_perplexity;
  j["verbmem_docs_scored"] = r.verbmem_docs_scored;
  j["verbmem_docs_skipped"] = r.verbmem_docs_skipped;
  return j.dump(2) + "\n";
}

EvalReport eval_report_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string("report parse error: ") + e.what());
  }
  EvalReport r;
  r.model_label = j.value("model", "");
  r.precision_label = j.value("precision", "");
  r.verbmem_forget = j.value("verbmem_forget", 0.0);
  r.knowmem_forget = j.value("knowmem_forget", 0.0);
  r.knowmem_retain = j.value("knowmem_retain", 0.0);
  r.privleak_available = j.value("privleak_available", false);
  r.privleak = j.value("privleak", 0.0);
  r.auc_retrain = j.value("auc_retrain", 0.0);
  r.auc_unlearn = j.value("auc_unlearn", 0.0);
  r.holdout_perplexity = j.value("holdout_perplexity", 0.0);
  r.verbmem_docs_scored = j.value("verbmem_docs_scored", 0);
  r.verbmem_docs_skipped = j.value("verbmem_docs_skipped", 0);
  return r;
}

void save_eval_report(const std::string& path, const EvalReport& report) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write report " + path);
  out << eval_report_to_json(report);
}

EvalReport load_eval_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open report " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return eval_report_from_json(buf.str());
}

std::vector<EvalReport> sort_report_rows(std::vector<EvalReport> rows) {
  std::sort(rows.begin(), rows.end(), [](const EvalReport& a, const EvalReport& b) {
    const int ma = model_rank(a.model_label), mb = model_rank(b.model_label);
    if (ma != mb) return ma < mb;
    if (a.model_label != b.model_label) return a.model_label < b.model_label;
    return precision_rank(a.precision_label) < precision_rank(b.precision_label);
  });
  return rows;
}

std::string render_markdown_table(const std::vector<EvalReport>& rows) {
  std::ostringstream os;
  os << "| Method | Precision | M1 VerbMem(f) | M2 KnowMem(f) | M3 PrivLeak | M4 KnowMem(r) | "
        "MIA AUC | Holdout PPL |\n";
  os << "|---|---|---|---|---|---|---|---|\n";
  for (const auto& r : sort_report_rows(rows)) {
    const Cells c = row_cells(r);
    os << "| " << r.model_label << " | " << r.precision_label << " | " << c.m1 << " | " << c.m2
       << " | " << c.m3 << " | " << c.m4 << " | " << c.auc << " | " << c.ppl << " |\n";
  }
  return os.str();
}

std::string render_csv_table(const std::vector<EvalReport>& rows) {
  std::ostringstream os;
  os << "method,precision,verbmem_forget,knowmem_forget,privleak,knowmem_retain,auc,"
        "holdout_ppl\n";
  for (const auto& r : sort_report_rows(rows)) {
    const Cells c = row_cells(r);
    os << r.model_label << "," << r.precision_label << "," << c.m1 << "," << c.m2 << "," << c.m3
       << "," << c.m4 << "," << c.auc << "," << c.ppl << "\n";
  }
  return os.str();
}

std::vector<EvalReport> load_reports_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  std::vector<std::string> files;
  if (fs::exists(dir)) {
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.is_regular_file() && entry.path().extension() == ".json") {
        files.push_back(entry.path().string());
      }
    }
  }
  std::sort(files.begin(), files.end());
  std::vector<EvalReport> rows;
  for (const auto& f : files) rows.push_back(load_eval_report(f));
  return rows;
}

}  // namespace qulab
