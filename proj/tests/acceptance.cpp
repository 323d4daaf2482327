// Acceptance suite: one pass/fail line per criterion.
//
//  1  worked round-to-nearest scale/interval values
//  2  property suites (quantization bounds, nesting, autodiff vs central
//     finite differences, ROUGE/AUC oracles, NPO anchor, KLR sign, SURE
//     locality)
//  3  quantization recovers forgotten knowledge on the default corpus
//  4  saliency-masked large-rate unlearning resists that recovery
//  5  collision-fraction ordering across precisions and rates
//  6  report parity on hand-entered rows
//  7  end-to-end determinism
//
// Criteria 3-5 share one default-config pipeline run (minutes); everything
// else is fast.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "qulab/checkpoint.hpp"
#include "qulab/corpus.hpp"
#include "qulab/metrics.hpp"
#include "qulab/model.hpp"
#include "qulab/optim.hpp"
#include "qulab/pipeline.hpp"
#include "qulab/quant.hpp"
#include "qulab/report.hpp"
#include "qulab/rng.hpp"
#include "qulab/runconfig.hpp"
#include "qulab/tape.hpp"
#include "qulab/unlearn.hpp"
#include "testutil.hpp"

namespace fs = std::filesystem;
using namespace qulab;
using namespace qulab::testutil;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void fail(const std::string& why) {
    pass = false;
    if (!detail.empty()) detail += "; ";
    detail += why;
  }
  void require(bool ok, const std::string& why) {
    if (!ok) fail(why);
  }
  void note(const std::string& text) {
    if (!detail.empty()) detail += "; ";
    detail += text;
  }
};

int failures = 0;

void report_line(int id, const std::string& name, const Outcome& o) {
  if (!o.pass) ++failures;
  std::printf("criterion %d [%s]: %s%s%s\n", id, name.c_str(), o.pass ? "PASS" : "FAIL",
              o.detail.empty() ? "" : " — ", o.detail.c_str());
  std::fflush(stdout);
}

void run_criterion(int id, const std::string& name, const std::function<void(Outcome&)>& body) {
  Outcome o;
  try {
    body(o);
  } catch (const std::exception& e) {
    o.fail(std::string("exception: ") + e.what());
  }
  report_line(id, name, o);
}

QuantSpec bits_spec(int bits) {
  QuantSpec spec;
  spec.bits = bits;
  return spec;
}

Tensor random_weights(int n, Rng& rng, float scale) {
  Tensor t({n});
  for (int64_t i = 0; i < t.size(); ++i) {
    t[i] = static_cast<float>(rng.next_normal() * scale);
  }
  return t;
}

// ---------------------------------------------------------------------------
// 1. worked scale/interval values
// ---------------------------------------------------------------------------
void criterion_1(Outcome& o) {
  Tensor anchor({2}, {200.0f, -60.0f});
  const QuantizedTensor q4 = quantize(anchor, bits_spec(4));
  const QuantizedTensor q8 = quantize(anchor, bits_spec(8));
  o.require(q4.scales[0] == 25.0f, "delta(int4) != 25");
  o.require(q8.scales[0] == 1.5625f, "delta(int8) != 1.5625");
  o.require(q8.scales[0] / 2.0f == 0.78125f, "int8 half step != 0.78125");

  // every weight in [-12.5, 12.5) maps to index 0 at 4 bits, endpoints exact
  bool zero_cell = true;
  for (int i = 0; i <= 1000; ++i) {
    const float w = -12.5f + 25.0f * static_cast<float>(i) / 1001.0f;  // stays below +12.5
    Tensor t({2}, {200.0f, w});
    zero_cell = zero_cell && quantize(t, bits_spec(4)).indices[1] == 0;
  }
  {
    Tensor t({2}, {200.0f, -12.5f});
    zero_cell = zero_cell && quantize(t, bits_spec(4)).indices[1] == 0;
    Tensor u({2}, {200.0f, 12.5f});
    zero_cell = zero_cell && quantize(u, bits_spec(4)).indices[1] == 1;
  }
  o.require(zero_cell, "[-12.5, 12.5) does not collapse to index 0");

  const auto [lo, hi] = interval_of(0, 25.0, 4);
  o.require(lo == -12.5 && hi == 12.5, "interval_of(0, 25) != [-12.5, 12.5)");

  // minimal index-flipping perturbation from an int8 interval center
  Tensor center({2}, {200.0f, 25.0f});  // 25 = 16 * 1.5625
  Tensor flipped({2}, {200.0f, 25.0f + 0.78125f});
  Tensor held({2}, {200.0f, std::nextafterf(25.0f + 0.78125f, 0.0f)});
  o.require(quantize(center, bits_spec(8)).indices[1] == 16, "center index");
  o.require(quantize(flipped, bits_spec(8)).indices[1] == 17, "delta/2 nudge must flip");
  o.require(quantize(held, bits_spec(8)).indices[1] == 16, "sub-delta/2 nudge must hold");
}

// ---------------------------------------------------------------------------
// 2. property suites
// ---------------------------------------------------------------------------
void criterion_2(Outcome& o) {
  Rng rng(2024);

  // round-trip bounds and grid membership, >= 1e4 cases
  {
    int cases = 0, bad = 0;
    for (int trial = 0; trial < 50; ++trial) {
      const int bits = 3 + static_cast<int>(rng.next_below(8));
      const QuantSpec spec = bits_spec(bits);
      Tensor w = random_weights(256, rng, 0.3f + static_cast<float>(rng.next_double()) * 8.0f);
      const QuantizedTensor q = quantize(w, spec);
      const Tensor back = dequantize(q);
      float max_abs = 0.0f;
      for (int64_t i = 0; i < w.size(); ++i) max_abs = std::max(max_abs, std::fabs(w[i]));
      for (int64_t i = 0; i < w.size(); ++i) {
        const double delta = q.scales[0];
        const bool clamped =
            std::floor(w[i] / delta + 0.5) > static_cast<double>(spec.max_index());
        const double bound = (clamped ? delta : delta / 2.0) + 2.4e-7 * max_abs;
        if (std::fabs(static_cast<double>(w[i]) - back[i]) > bound) ++bad;
        if (back[i] != static_cast<float>(q.indices[static_cast<size_t>(i)]) * q.scales[0]) ++bad;
        ++cases;
      }
    }
    o.require(cases >= 10000 && bad == 0,
              "round-trip bound/grid membership failed on " + std::to_string(bad) + " cases");
  }

  // int8-in-int4 nesting: exact ratio 16, grid refinement, interval
  // containment away from the straddling residue i = 8 (mod 16)
  {
    int cases = 0, bad = 0;
    for (int trial = 0; trial < 45; ++trial) {
      Tensor w = random_weights(256, rng, 0.2f + static_cast<float>(rng.next_double()) * 10.0f);
      const QuantizedTensor q4 = quantize(w, bits_spec(4));
      const QuantizedTensor q8 = quantize(w, bits_spec(8));
      if (q4.scales[0] != 16.0f * q8.scales[0]) ++bad;
      for (int j = -8; j <= 7; ++j) {
        if (static_cast<float>(j) * q4.scales[0] != static_cast<float>(16 * j) * q8.scales[0]) {
          ++bad;
        }
      }
      for (int64_t i = 0; i < w.size(); ++i) {
        const int32_t i8 = q8.indices[static_cast<size_t>(i)];
        const int64_t i4c = static_cast<int64_t>(std::floor(i8 / 16.0 + 0.5));
        if (i4c < -8 || i4c > 7) continue;
        const auto [lo8, hi8] = interval_of(i8, q8.scales[0], 8);
        const auto [lo4, hi4] = interval_of(i4c, q4.scales[0], 4);
        const int res = ((i8 % 16) + 16) % 16;
        if (res != 8) {
          if (lo8 < lo4 - 1e-9 * q4.scales[0] || hi8 > hi4 + 1e-9 * q4.scales[0]) ++bad;
        }
        ++cases;
      }
    }
    o.require(cases >= 10000 && bad == 0, "int8/int4 nesting failed");
  }

  // reverse-mode gradients vs central finite differences on the full model
  {
    const ModelConfig cfg = tiny_config();
    LanguageModel model = init_model(cfg);
    const std::vector<std::vector<int>> batch = {{1, 5, 3, 9, 2, 7}, {4, 4, 8, 0, 12, 6, 10, 11}};
    Tape tape(true);
    BoundModel bound = bind_model(tape, model, true);
    std::vector<Var> nlls;
    for (const auto& seq : batch) {
      nlls.push_back(tape.scale(tape.mean(token_logprobs_on_tape(tape, bound, cfg, seq)), -1.0f));
    }
    Var loss = tape.mean(tape.stack_scalars(nlls));
    tape.backward(loss);
    RefParams ref = RefParams::from(model.params);
    auto loss_fn = [&](const RefParams& p) { return ref_mean_nll(cfg, p, batch); };
    int64_t checked = 0, bad = 0;
    for (int leaf = 0; leaf < model.params.num_leaves(); ++leaf) {
      const Tensor& g = tape.grad(bound.flat[static_cast<size_t>(leaf)]);
      for (int64_t i = 0; i < g.size(); ++i) {
        if (!grad_close(g[i], fd_grad(ref, leaf, static_cast<size_t>(i), loss_fn))) ++bad;
        ++checked;
      }
    }
    o.require(bad == 0, "autodiff/finite-difference mismatch on " + std::to_string(bad) + " of " +
                            std::to_string(checked) + " coordinates");
    o.require(checked == model.params.total_params() && checked <= 50000,
              "gradcheck coverage wrong");
  }

  // ROUGE-L F1 against a memoized-recurrence LCS oracle
  {
    static const std::vector<std::string> pool = {"a", "b", "c", "d", "e", "f"};
    auto lcs_oracle = [](const std::vector<std::string>& a, const std::vector<std::string>& b) {
      std::vector<std::vector<int>> memo(a.size() + 1, std::vector<int>(b.size() + 1, -1));
      std::function<int(size_t, size_t)> go = [&](size_t i, size_t j) -> int {
        if (i == a.size() || j == b.size()) return 0;
        int& m = memo[i][j];
        if (m >= 0) return m;
        if (a[i] == b[j]) return m = 1 + go(i + 1, j + 1);
        return m = std::max(go(i + 1, j), go(i, j + 1));
      };
      return go(0, 0);
    };
    int bad = 0, cases = 0;
    for (int trial = 0; trial < 12000; ++trial) {
      std::vector<std::string> cand, ref;
      const int nc = 1 + static_cast<int>(rng.next_below(10));
      const int nr = 1 + static_cast<int>(rng.next_below(10));
      for (int i = 0; i < nc; ++i) cand.push_back(pool[rng.next_below(4)]);
      for (int i = 0; i < nr; ++i) ref.push_back(pool[rng.next_below(4)]);
      const int lcs = lcs_oracle(cand, ref);
      double expect = 0.0;
      if (lcs > 0) {
        const double p = static_cast<double>(lcs) / nc;
        const double r = static_cast<double>(lcs) / nr;
        expect = 2.0 * p * r / (p + r);
      }
      if (std::fabs(rouge_l_f1(cand, ref) - expect) > 1e-9) ++bad;
      ++cases;
    }
    o.require(cases >= 10000 && bad == 0, "rouge oracle mismatch");
  }

  // AUC-ROC against the O(n*m) pairwise count
  {
    int bad = 0;
    int64_t cases = 0;
    for (int trial = 0; trial < 2500; ++trial) {
      std::vector<double> mem, non;
      const int n = 2 + static_cast<int>(rng.next_below(9));
      const int m = 2 + static_cast<int>(rng.next_below(9));
      for (int i = 0; i < n; ++i) mem.push_back(static_cast<double>(rng.next_below(7)) * 0.25);
      for (int i = 0; i < m; ++i) non.push_back(static_cast<double>(rng.next_below(7)) * 0.25);
      double wins = 0.0;
      for (double a : mem) {
        for (double b : non) {
          if (a > b) wins += 1.0;
          if (a == b) wins += 0.5;
        }
      }
      if (std::fabs(auc_roc(mem, non) - wins / (n * m)) > 1e-9) ++bad;
      cases += n * m;
    }
    o.require(cases >= 10000 && bad == 0, "auc oracle mismatch");
  }

  // NPO anchor at theta = theta_target
  {
    const ModelConfig cfg = tiny_config();
    LanguageModel model = init_model(cfg);
    const float beta = 0.1f;
    for (int trial = 0; trial < 4; ++trial) {
      std::vector<std::vector<int>> batch;
      for (int s = 0; s < 2 + trial; ++s) {
        std::vector<int> seq;
        for (int t = 0; t < 6; ++t) {
          seq.push_back(static_cast<int>(rng.next_below(static_cast<uint64_t>(cfg.vocab_size))));
        }
        batch.push_back(seq);
      }
      std::vector<float> ref;
      for (const auto& seq : batch) ref.push_back(sequence_logprob_sum(model, seq));
      Tape tape(false);
      BoundModel bound = bind_model(tape, model, false);
      const double loss = tape.value(loss_npo(tape, bound, cfg, batch, ref, beta)).item();
      o.require(std::fabs(loss - 2.0 / beta * std::log(2.0)) < 1e-5,
                "NPO anchor off: " + std::to_string(loss));
    }
  }

  // KLR: zero at the target, nonnegative under perturbation
  {
    const ModelConfig cfg = tiny_config();
    LanguageModel model = init_model(cfg);
    std::vector<std::vector<int>> retain = {{2, 6, 1, 9}, {11, 3, 7, 5, 8}};
    std::vector<Tensor> ref_rows;
    for (const auto& seq : retain) ref_rows.push_back(reference_logprob_rows(model, seq));

    Tape tape(false);
    BoundModel bound = bind_model(tape, model, false);
    Var zero = tape.scalar(0.0f);
    const double at_target = tape.value(loss_klr(tape, zero, bound, cfg, retain, ref_rows, 1.0f)).item();
    o.require(std::fabs(at_target) < 1e-6, "KLR not zero at the target");

    for (int trial = 0; trial < 5; ++trial) {
      LanguageModel other = model;
      for (auto& mod : other.params.modules) {
        for (auto& leaf : mod.leaves) {
          for (int64_t i = 0; i < leaf.tensor.size(); ++i) {
            leaf.tensor[i] += static_cast<float>(rng.next_normal() * 0.03);
          }
        }
      }
      Tape tp(false);
      BoundModel bd = bind_model(tp, other, false);
      Var z = tp.scalar(0.0f);
      const double kl = tp.value(loss_klr(tp, z, bd, cfg, retain, ref_rows, 1.0f)).item();
      o.require(kl >= -1e-7, "KLR negative: " + std::to_string(kl));
    }
  }

  // SURE locality: modules masked 0 stay bit-identical through a run
  {
    const auto facts = generate_corpus(6, 2, 314);
    const CorpusSplits splits = make_splits(facts, 0.34, 0.33, 3);
    std::vector<std::string> texts;
    for (const auto& f : facts) {
      texts.push_back(f.sentence);
      texts.push_back(qa_train_text(f));
    }
    const TokenizerVocab vocab = TokenizerVocab::build(texts);
    ModelConfig cfg = tiny_config(vocab.size(), 77);
    cfg.max_seq_len = 48;
    LanguageModel target = init_model(cfg);
    const UnlearnData data = build_unlearn_data(splits, vocab, true);
    for (double pct : {40.0, 75.0, 90.0}) {
      UnlearnConfig uc;
      uc.method = UnlearnMethod::GA;
      uc.regularizer = Regularizer::GDR;
      uc.alpha = 1.0f;
      uc.lr = 5e-4f;
      uc.epochs = 3;
      uc.batch_size = 2;
      uc.sure_enabled = true;
      uc.sure_percentile = pct;
      const UnlearnResult res = unlearn_run(target, data, uc);
      for (size_t m = 0; m < target.params.modules.size(); ++m) {
        const auto& name = target.params.modules[m].name;
        if (res.mask->mask.at(name) != 0) continue;
        for (size_t l = 0; l < target.params.modules[m].leaves.size(); ++l) {
          const Tensor& a = target.params.modules[m].leaves[l].tensor;
          const Tensor& b = res.model.params.modules[m].leaves[l].tensor;
          for (int64_t i = 0; i < a.size(); ++i) {
            if (a[i] != b[i]) {
              o.fail("SURE locality violated in " + name);
              break;
            }
          }
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// 6. report parity with hand-entered published rows
// ---------------------------------------------------------------------------
void criterion_6(Outcome& o) {
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

  const std::vector<EvalReport> rows = {int4, full};
  const std::string md = render_markdown_table(rows);
  const std::string csv = render_csv_table(rows);
  o.require(md.find("| GA_KLR | full | 13.0 | 15.1 |") != std::string::npos,
            "markdown drops the full-precision row values");
  o.require(md.find("| GA_KLR | int4 | 75.6 | 34.6 |") != std::string::npos,
            "markdown drops the int4 row values");
  o.require(csv.find("GA_KLR,full,13.0,15.1,-40.8,33.7") != std::string::npos, "csv full row");
  o.require(csv.find("GA_KLR,int4,75.6,34.6,-60.0,51.3") != std::string::npos, "csv int4 row");
  const size_t p_full = csv.find("GA_KLR,full");
  const size_t p_int4 = csv.find("GA_KLR,int4");
  o.require(p_full < p_int4, "rows out of order");
}

}  // namespace

// Criteria 3-5 and 7 are defined in acceptance_runs.cpp (they share the
// pipeline fixtures).
void run_pipeline_criteria();

int main() {
  run_criterion(1, "quantization worked values", criterion_1);
  run_criterion(2, "property suites", criterion_2);
  run_pipeline_criteria();
  run_criterion(6, "report parity", criterion_6);
  if (failures == 0) {
    std::printf("acceptance: all criteria passed\n");
  } else {
    std::printf("acceptance: %d criterion(s) failed\n", failures);
  }
  return failures == 0 ? 0 : 1;
}
