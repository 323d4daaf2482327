#ifndef QULAB_REPORT_HPP_
#define QULAB_REPORT_HPP_

#include <string>
#include <vector>

#include "qulab/metrics.hpp"

namespace qulab {

std::string eval_report_to_json(const EvalReport& report);
EvalReport eval_report_from_json(const std::string& text);

void save_eval_report(const std::string& path, const EvalReport& report);
EvalReport load_eval_report(const std::string& path);

// Rows of the results grid, sorted with the reference models (target,
// retrain) first, then methods lexicographically; precision order full,
// int8, int4. Markdown and CSV carry identical numeric strings.
std::vector<EvalReport> sort_report_rows(std::vector<EvalReport> rows);
std::string render_markdown_table(const std::vector<EvalReport>& rows);
std::string render_csv_table(const std::vector<EvalReport>& rows);

// Loads every *.json report under the directory.
std::vector<EvalReport> load_reports_dir(const std::string& dir);

}  // namespace qulab

#endif  // QULAB_REPORT_HPP_
