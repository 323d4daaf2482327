#include "qulab/param_tree.hpp"

#include <stdexcept>

namespace qulab {

int64_t ParamTree::total_params() const {
  int64_t n = 0;
  for (const auto& m : modules) {
    for (const auto& l : m.leaves) n += l.tensor.size();
  }
  return n;
}

int ParamTree::num_leaves() const {
  int n = 0;
  for (const auto& m : modules) n += static_cast<int>(m.leaves.size());
  return n;
}

const NamedTensor& ParamTree::leaf(int flat_index) const {
  int i = flat_index;
  for (const auto& m : modules) {
    if (i < static_cast<int>(m.leaves.size())) return m.leaves[static_cast<size_t>(i)];
    i -= static_cast<int>(m.leaves.size());
  }
  throw std::out_of_range("ParamTree::leaf: index out of range");
}

NamedTensor& ParamTree::leaf(int flat_index) {
  return const_cast<NamedTensor&>(static_cast<const ParamTree*>(this)->leaf(flat_index));
}

std::string ParamTree::qualified_name(int flat_index) const {
  int i = flat_index;
  for (const auto& m : modules) {
    if (i < static_cast<int>(m.leaves.size())) {
      return m.name + "." + m.leaves[static_cast<size_t>(i)].name;
    }
    i -= static_cast<int>(m.leaves.size());
  }
  throw std::out_of_range("ParamTree::qualified_name: index out of range");
}

bool ParamTree::same_structure(const ParamTree& other) const {
  if (modules.size() != other.modules.size()) return false;
  for (size_t m = 0; m < modules.size(); ++m) {
    const auto& a = modules[m];
    const auto& b = other.modules[m];
    if (a.name != b.name || a.leaves.size() != b.leaves.size()) return false;
    for (size_t l = 0; l < a.leaves.size(); ++l) {
      if (a.leaves[l].name != b.leaves[l].name ||
          a.leaves[l].tensor.shape() != b.leaves[l].tensor.shape()) {
        return false;
      }
    }
  }
  return true;
}

ParamTree ParamTree::zeros_like() const {
  ParamTree out;
  out.modules.reserve(modules.size());
  for (const auto& m : modules) {
    ParamModule om;
    om.name = m.name;
    om.leaves.reserve(m.leaves.size());
    for (const auto& l : m.leaves) {
      om.leaves.push_back({l.name, Tensor(l.tensor.shape())});
    }
    out.modules.push_back(std::move(om));
  }
  return out;
}

const ParamModule* ParamTree::find_module(const std::string& name) const {
  for (const auto& m : modules) {
    if (m.name == name) return &m;
  }
  return nullptr;
}

}  // namespace qulab
