#ifndef QULAB_PARAM_TREE_HPP_
#define QULAB_PARAM_TREE_HPP_

#include <map>
#include <string>
#include <vector>

#include "qulab/tensor.hpp"

namespace qulab {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// One saliency unit: a named group of parameter leaves (embedding, one
// layer's attention block, one layer's feed-forward block, ...).
struct ParamModule {
  std::string name;
  std::vector<NamedTensor> leaves;
};

// Ordered, stably enumerable parameter collection. Enumeration order is the
// construction order and is the canonical order for checkpoints, gradient
// maps and optimizer state.
struct ParamTree {
  std::vector<ParamModule> modules;

  int64_t total_params() const;
  int num_leaves() const;

  // Flat leaf access in enumeration order.
  const NamedTensor& leaf(int flat_index) const;
  NamedTensor& leaf(int flat_index);
  std::string qualified_name(int flat_index) const;

  bool same_structure(const ParamTree& other) const;
  ParamTree zeros_like() const;

  const ParamModule* find_module(const std::string& name) const;
};

// mask.at(module) == 0 marks a module as frozen for the optimizer.
using ModuleMask = std::map<std::string, int>;

}  // namespace qulab

#endif  // QULAB_PARAM_TREE_HPP_
