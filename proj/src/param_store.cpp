#include "segsel/param_store.hpp"

#include <stdexcept>

namespace segsel {

Tensor& ParamStore::add(const std::string& name, Tensor value) {
  if (index_.contains(name)) {
    throw std::invalid_argument("duplicate parameter name '" + name + "' in store '" + label_ + "'");
  }
  Tensor grad(value.shape(), 0.0);
  index_.emplace(name, entries_.size());
  entries_.push_back(Entry{name, std::move(value), std::move(grad)});
  return entries_.back().value;
}

bool ParamStore::contains(std::string_view name) const { return index_.contains(std::string(name)); }

std::size_t ParamStore::index_of(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) {
    throw std::out_of_range("no parameter '" + std::string(name) + "' in store '" + label_ + "'");
  }
  return it->second;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& e : entries_) e.grad.fill(0.0);
}

bool ParamStore::same_values(const ParamStore& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name != other.entries_[i].name) return false;
    if (!(entries_[i].value == other.entries_[i].value)) return false;
  }
  return true;
}

}  // namespace segsel
