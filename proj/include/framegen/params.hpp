#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "framegen/tensor.hpp"

namespace framegen {

/// Named leaf tensors in insertion order.
class ParameterStore {
 public:
  using Entry = std::pair<std::string, Tensor>;

  // Throws ContractError on a duplicate name.
  Tensor& add(std::string name, Tensor value);
  bool contains(std::string_view name) const;
  Tensor& get(std::string_view name);
  const Tensor& get(std::string_view name) const;

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::vector<std::string> names() const;

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  void zero_grad();
  std::size_t total_elements() const;
  // Deep copy; the copy's leaves are independent of this store's.
  ParameterStore clone() const;

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Simple '*' glob over dotted names ('*' matches any run of characters,
// '?' matches one).
bool glob_match(std::string_view pattern, std::string_view text);

}  // namespace framegen
