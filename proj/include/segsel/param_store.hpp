#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "segsel/tensor.hpp"

namespace segsel {

/// Named trainable tensors, each paired with a gradient buffer of the same shape.
/// Iteration order is insertion order.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    Tensor grad;
  };

  ParamStore() = default;
  explicit ParamStore(std::string label) : label_(std::move(label)) {}

  /// Adds a parameter. Names must be unique within the store.
  Tensor& add(const std::string& name, Tensor value);

  bool contains(std::string_view name) const;
  std::size_t index_of(std::string_view name) const;

  Entry& entry(std::size_t index) { return entries_.at(index); }
  const Entry& entry(std::size_t index) const { return entries_.at(index); }
  Entry& entry(std::string_view name) { return entries_[index_of(name)]; }
  const Entry& entry(std::string_view name) const { return entries_[index_of(name)]; }

  Tensor& value(std::string_view name) { return entry(name).value; }
  const Tensor& value(std::string_view name) const { return entry(name).value; }
  const Tensor& grad(std::string_view name) const { return entry(name).grad; }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;

  const std::string& label() const { return label_; }

  void zero_grad();

  /// Same names, shapes and values (gradients are ignored).
  bool same_values(const ParamStore& other) const;

 private:
  std::string label_;
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace segsel
