#ifndef QULAB_QUANT_HPP_
#define QULAB_QUANT_HPP_

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "qulab/model.hpp"
#include "qulab/param_tree.hpp"
#include "qulab/tensor.hpp"

namespace qulab {

enum class QuantGranularity { PerTensor, PerGroup };

// Round-to-nearest spec: scale Delta = max|w| / 2^(N-1) per group, index
// range [-2^(N-1), 2^(N-1)-1]. Round(x) is floor(x + 1/2), so the weights
// mapping to index i are exactly the half-open interval
// [(i-1/2)Delta, (i+1/2)Delta).
struct QuantSpec {
  int bits = 4;
  QuantGranularity granularity = QuantGranularity::PerTensor;
  int group_size = 64;  // used when granularity == PerGroup

  void validate() const;
  int64_t min_index() const { return -(int64_t{1} << (bits - 1)); }
  int64_t max_index() const { return (int64_t{1} << (bits - 1)) - 1; }
};

struct QuantizedTensor {
  Shape shape;
  std::vector<int32_t> indices;
  std::vector<float> scales;  // one per group
  int group_size = 0;         // flat elements per group
  QuantSpec spec;

  int64_t size() const { return static_cast<int64_t>(indices.size()); }
  float scale_of(int64_t flat_index) const {
    return scales[static_cast<size_t>(flat_index / group_size)];
  }
};

QuantizedTensor quantize(const Tensor& weights, const QuantSpec& spec);
Tensor dequantize(const QuantizedTensor& q);

// Half-open weight interval sharing quantization index i.
std::pair<double, double> interval_of(int64_t index, double delta, int bits);

// Snap every parameter leaf to its quantization grid; inference arithmetic
// stays float32 over the snapped values.
ParamTree quantize_tree(const ParamTree& params, const QuantSpec& spec);
LanguageModel quantize_model(const LanguageModel& model, const QuantSpec& spec);

// Fraction of weight positions whose quantization index agrees between two
// trees of identical structure. Scales come from `a` and are shared, so
// index equality is meaningful.
struct CollisionReport {
  struct TensorStats {
    std::string name;
    int64_t matches = 0;
    int64_t total = 0;
    double fraction = 0.0;
  };

  static constexpr int kHistBins = 17;  // |a-b|/(Delta/2) in 0.25 steps, last bin >= 4
  static constexpr double kHistBinWidth = 0.25;

  int bits = 0;
  std::vector<TensorStats> tensors;
  int64_t matches = 0;
  int64_t total = 0;
  double fraction = 0.0;
  std::vector<int64_t> histogram = std::vector<int64_t>(kHistBins, 0);
};

CollisionReport collision_report(const ParamTree& a, const ParamTree& b, const QuantSpec& spec);

}  // namespace qulab

#endif  // QULAB_QUANT_HPP_
