#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "kwsf/nn/tensor.hpp"

namespace kwsf::nn {

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> tensor;
  bool trainable = true;  // false for batch-norm running statistics
};

// Named tensors in declaration order. Names are unique.
template <typename T>
class ParameterSet {
 public:
  Tensor<T>& add(std::string name, Tensor<T> tensor, bool trainable = true) {
    require(!index_of(name), ErrorCode::kInvalidArgument, "duplicate parameter name '" + name + "'");
    entries_.push_back({std::move(name), std::move(tensor), trainable});
    return entries_.back().tensor;
  }

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  Parameter<T>& operator[](std::size_t i) { return entries_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return entries_[i]; }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  std::optional<std::size_t> index_of(std::string_view name) const {
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (entries_[i].name == name) return i;
    }
    return std::nullopt;
  }

  Tensor<T>& get(std::string_view name) { return entries_[checked_index(name)].tensor; }
  const Tensor<T>& get(std::string_view name) const { return entries_[checked_index(name)].tensor; }

  // Same names, order, shapes and trainable flags.
  bool same_schema(const ParameterSet& other) const {
    if (entries_.size() != other.entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      const auto& a = entries_[i];
      const auto& b = other.entries_[i];
      if (a.name != b.name || a.trainable != b.trainable || a.tensor.shape() != b.tensor.shape()) return false;
    }
    return true;
  }

  std::size_t scalar_count(bool trainable_only = false) const {
    std::size_t n = 0;
    for (const auto& e : entries_) {
      if (!trainable_only || e.trainable) n += e.tensor.size();
    }
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) {
      if (e.trainable) e.tensor.zero_grad();
    }
  }

  template <typename U>
  ParameterSet<U> cast() const {
    ParameterSet<U> out;
    for (const auto& e : entries_) out.add(e.name, e.tensor.template cast<U>(), e.trainable);
    return out;
  }

  // Value equality over schema and data.
  bool operator==(const ParameterSet& other) const {
    if (!same_schema(other)) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (!(entries_[i].tensor == other.entries_[i].tensor)) return false;
    }
    return true;
  }

 private:
  std::size_t checked_index(std::string_view name) const {
    const auto i = index_of(name);
    if (!i) fail(ErrorCode::kInvalidArgument, "no parameter named '" + std::string(name) + "'");
    return *i;
  }

  std::vector<Parameter<T>> entries_;
};

}  // namespace kwsf::nn
