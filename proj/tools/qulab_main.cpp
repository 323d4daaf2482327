// Command-line front end for the unlearning/quantization lab.
//
// Exit codes: 0 success, 1 usage/config error, 2 data or dependency error,
// 3 numeric error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "qulab/checkpoint.hpp"
#include "qulab/error.hpp"
#include "qulab/pipeline.hpp"
#include "qulab/quant.hpp"
#include "qulab/report.hpp"
#include "qulab/runconfig.hpp"
#include "qulab/unlearn.hpp"

namespace {

using namespace qulab;

struct CommonOpts {
  std::string config_path;
  std::string run_dir = "runs/default";
  std::optional<uint64_t> seed;
};

Pipeline make_pipeline(const CommonOpts& opts) {
  if (!opts.config_path.empty()) {
    RunConfig rc = RunConfig::from_file(opts.config_path);
    if (opts.seed) rc.seed = *opts.seed;
    return Pipeline(opts.run_dir, std::move(rc));
  }
  if (opts.seed) {
    RunConfig rc = RunConfig::defaults();
    rc.seed = *opts.seed;
    return Pipeline(opts.run_dir, std::move(rc));
  }
  if (std::filesystem::exists(opts.run_dir + "/config.snapshot")) {
    return Pipeline::open(opts.run_dir);
  }
  return Pipeline(opts.run_dir, RunConfig::defaults());
}

UnlearnCell resolve_cell(const Pipeline& pipe, const std::string& method, bool sure,
                         std::optional<double> percentile) {
  std::string label = method;
  if (sure && label.find("+SURE") == std::string::npos) label += "+SURE";
  for (const auto& cell : pipe.config().grid) {
    if (cell.name == label) {
      UnlearnCell chosen = cell;
      if (percentile) chosen.config.sure_percentile = *percentile;
      return chosen;
    }
  }
  UnlearnCell cell;
  cell.name = label;
  cell.config = parse_unlearn_label(label);
  cell.config.lr = cell.config.sure_enabled ? 1e-4f : 1e-5f;
  cell.config.epochs = 100;
  cell.config.batch_size = 4;
  cell.config.alpha = cell.config.regularizer == Regularizer::None ? 0.0f : 5.0f;
  if (percentile) cell.config.sure_percentile = *percentile;
  cell.config.validate();
  return cell;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"qulab: train, unlearn, quantize and evaluate a tiny language model"};
  app.require_subcommand(1);

  CommonOpts opts;
  app.add_option("--config", opts.config_path, "Run configuration file");
  app.add_option("--run-dir", opts.run_dir, "Run directory (default runs/default)");
  uint64_t seed_value = 0;
  auto* seed_opt = app.add_option("--seed", seed_value, "Override the config seed");

  auto* cmd_gen = app.add_subcommand("gen-data", "Generate corpus, splits, vocab and QA files");
  auto* cmd_train = app.add_subcommand("train", "Train the target model on forget + retain");
  auto* cmd_retrain = app.add_subcommand("retrain", "Train the reference model on retain only");

  auto* cmd_unlearn = app.add_subcommand("unlearn", "Run one unlearning cell");
  std::string method;
  bool sure = false;
  double percentile = -1.0;
  cmd_unlearn->add_option("--method", method, "GA, GA_GDR, GA_KLR, NPO, NPO_GDR, NPO_KLR")
      ->required();
  cmd_unlearn->add_flag("--sure", sure, "Enable saliency-masked large-rate unlearning");
  auto* pct_opt = cmd_unlearn->add_option("--percentile", percentile,
                                          "Saliency mask percentile (with --sure)");

  auto* cmd_quant = app.add_subcommand("quantize", "Snap a model checkpoint to its RTN grid");
  std::string quant_model = "target";
  int bits = 4;
  cmd_quant->add_option("--model", quant_model, "Model label (target, retrain, or a cell name)");
  cmd_quant->add_option("--bits", bits, "Quantization width")->required();

  auto* cmd_coll = app.add_subcommand("collision", "Index-collision report between checkpoints");
  std::string ckpt_a, ckpt_b, coll_out;
  cmd_coll->add_option("ckpt_a", ckpt_a, "Checkpoint providing the shared scales")->required();
  cmd_coll->add_option("ckpt_b", ckpt_b, "Checkpoint compared against it")->required();
  cmd_coll->add_option("--bits", bits, "Quantization width")->required();
  cmd_coll->add_option("--out", coll_out, "Write the JSON report here instead of stdout");

  auto* cmd_eval = app.add_subcommand("eval", "Evaluate one (model, precision) cell");
  std::string eval_model = "target";
  std::string eval_precision = "full";
  cmd_eval->add_option("--model", eval_model, "Model label");
  cmd_eval->add_option("--precision", eval_precision, "full, int8 or int4");

  auto* cmd_report = app.add_subcommand("report", "Render report.md and report.csv");
  auto* cmd_pipe = app.add_subcommand("pipeline", "Run every stage end to end, resumably");

  try {
    app.parse(argc, argv);
    if (seed_opt->count() > 0) opts.seed = seed_value;

    if (cmd_coll->parsed()) {
      const LanguageModel a = load_checkpoint(ckpt_a);
      const LanguageModel b = load_checkpoint(ckpt_b);
      QuantSpec spec;
      spec.bits = bits;
      const CollisionReport rep = collision_report(a.params, b.params, spec);
      nlohmann::json j;
      j["bits"] = rep.bits;
      j["fraction"] = rep.fraction;
      j["matches"] = rep.matches;
      j["total"] = rep.total;
      j["abs_delta_over_half_step_histogram"] = rep.histogram;
      const std::string text = j.dump(2) + "\n";
      if (coll_out.empty()) {
        std::cout << text;
      } else {
        std::ofstream out(coll_out, std::ios::trunc);
        if (!out) throw IoError("cannot write " + coll_out);
        out << text;
      }
      return 0;
    }

    Pipeline pipe = make_pipeline(opts);
    if (cmd_gen->parsed()) {
      pipe.gen_data();
    } else if (cmd_train->parsed()) {
      pipe.train_target();
    } else if (cmd_retrain->parsed()) {
      pipe.train_retrain();
    } else if (cmd_unlearn->parsed()) {
      std::optional<double> pct;
      if (pct_opt->count() > 0) pct = percentile;
      pipe.unlearn_custom(resolve_cell(pipe, method, sure, pct));
    } else if (cmd_quant->parsed()) {
      pipe.quantize_checkpoint(quant_model, bits);
    } else if (cmd_eval->parsed()) {
      pipe.eval_model(eval_model, eval_precision);
    } else if (cmd_report->parsed()) {
      pipe.write_report();
    } else if (cmd_pipe->parsed()) {
      pipe.run_all();
    }
    return 0;
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_name() == "CallForHelp" ? 0 : 1;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
