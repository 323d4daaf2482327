#include "qulab/quant.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "qulab/error.hpp"

namespace qulab {

namespace {

int64_t round_half_up(double x) { return static_cast<int64_t>(std::floor(x + 0.5)); }

int group_elems(const QuantSpec& spec, int64_t tensor_size) {
  if (spec.granularity == QuantGranularity::PerTensor) {
    return static_cast<int>(tensor_size);
  }
  return spec.group_size;
}

}  // namespace

void QuantSpec::validate() const {
  if (bits < 2 || bits > 24) throw ConfigError("quant: bits must be in [2, 24]");
  if (granularity == QuantGranularity::PerGroup && group_size < 1) {
    throw ConfigError("quant: group_size must be >= 1");
  }
}

QuantizedTensor quantize(const Tensor& weights, const QuantSpec& spec) {
  spec.validate();
  if (!weights.all_finite()) throw NumericError("quantize: non-finite weight");

  QuantizedTensor q;
  q.shape = weights.shape();
  q.spec = spec;
  const int64_t n = weights.size();
  q.group_size = group_elems(spec, n);
  q.indices.resize(static_cast<size_t>(n));

  const int64_t lo = spec.min_index();
  const int64_t hi = spec.max_index();
  const double levels = static_cast<double>(int64_t{1} << (spec.bits - 1));

  for (int64_t start = 0; start < n; start += q.group_size) {
    const int64_t end = std::min<int64_t>(n, start + q.group_size);
    float max_abs = 0.0f;
    for (int64_t i = start; i < end; ++i) max_abs = std::max(max_abs, std::fabs(weights[i]));
    // All-zero group: scale pinned to 1, every index 0.
    const float delta =
        max_abs == 0.0f ? 1.0f : static_cast<float>(static_cast<double>(max_abs) / levels);
    q.scales.push_back(delta);
    for (int64_t i = start; i < end; ++i) {
      const int64_t raw = round_half_up(static_cast<double>(weights[i]) / delta);
      q.indices[static_cast<size_t>(i)] = static_cast<int32_t>(std::clamp(raw, lo, hi));
    }
  }
  return q;
}

Tensor dequantize(const QuantizedTensor& q) {
  Tensor out(q.shape);
  for (int64_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<float>(q.indices[static_cast<size_t>(i)]) * q.scale_of(i);
  }
  return out;
}

std::pair<double, double> interval_of(int64_t index, double delta, int bits) {
  QuantSpec spec;
  spec.bits = bits;
  spec.validate();
  if (index < spec.min_index() || index > spec.max_index()) {
    throw std::out_of_range("interval_of: index outside the representable range");
  }
  return {(static_cast<double>(index) - 0.5) * delta, (static_cast<double>(index) + 0.5) * delta};
}

ParamTree quantize_tree(const ParamTree& params, const QuantSpec& spec) {
  ParamTree out = params;
  for (auto& module : out.modules) {
    for (auto& leaf : module.leaves) {
      leaf.tensor = dequantize(quantize(leaf.tensor, spec));
    }
  }
  return out;
}

LanguageModel quantize_model(const LanguageModel& model, const QuantSpec& spec) {
  LanguageModel out;
  out.config = model.config;
  out.params = quantize_tree(model.params, spec);
  return out;
}

CollisionReport collision_report(const ParamTree& a, const ParamTree& b, const QuantSpec& spec) {
  spec.validate();
  if (!a.same_structure(b)) throw DataError("collision_report: parameter structure mismatch");

  CollisionReport report;
  report.bits = spec.bits;
  const int64_t lo = spec.min_index();
  const int64_t hi = spec.max_index();

  int flat_leaf = 0;
  for (size_t mi = 0; mi < a.modules.size(); ++mi) {
    for (size_t li = 0; li < a.modules[mi].leaves.size(); ++li) {
      const Tensor& ta = a.modules[mi].leaves[li].tensor;
      const Tensor& tb = b.modules[mi].leaves[li].tensor;
      // Shared scales from the first tree.
      QuantizedTensor qa = quantize(ta, spec);

      CollisionReport::TensorStats stats;
      stats.name = a.qualified_name(flat_leaf++);
      stats.total = ta.size();
      for (int64_t i = 0; i < ta.size(); ++i) {
        const float delta = qa.scale_of(i);
        const int64_t ib = std::clamp(
            round_half_up(static_cast<double>(tb[i]) / delta), lo, hi);
        if (ib == qa.indices[static_cast<size_t>(i)]) ++stats.matches;

        const double rel = std::fabs(static_cast<double>(ta[i]) - static_cast<double>(tb[i])) /
                           (static_cast<double>(delta) / 2.0);
        int bin = static_cast<int>(rel / CollisionReport::kHistBinWidth);
        bin = std::clamp(bin, 0, CollisionReport::kHistBins - 1);
        report.histogram[static_cast<size_t>(bin)] += 1;
      }
      stats.fraction =
          stats.total == 0 ? 1.0 : static_cast<double>(stats.matches) / stats.total;
      report.matches += stats.matches;
      report.total += stats.total;
      report.tensors.push_back(std::move(stats));
    }
  }
  report.fraction = report.total == 0 ? 1.0 : static_cast<double>(report.matches) / report.total;
  return report;
}

}  // namespace qulab
