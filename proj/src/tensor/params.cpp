#include "framegen/params.hpp"

namespace framegen {

Tensor& ParameterStore::add(std::string name, Tensor value) {
  if (index_.contains(name)) throw ContractError("duplicate parameter name '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.emplace_back(std::move(name), std::move(value));
  return entries_.back().second;
}

bool ParameterStore::contains(std::string_view name) const { return index_.contains(std::string(name)); }

Tensor& ParameterStore::get(std::string_view name) {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ContractError("no parameter named '" + std::string(name) + "'");
  return entries_[it->second].second;
}

const Tensor& ParameterStore::get(std::string_view name) const {
  return const_cast<ParameterStore*>(this)->get(name);
}

std::vector<std::string> ParameterStore::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, _] : entries_) out.push_back(name);
  return out;
}

void ParameterStore::zero_grad() {
  for (auto& [_, t] : entries_) t.zero_grad();
}

std::size_t ParameterStore::total_elements() const {
  std::size_t n = 0;
  for (const auto& [_, t] : entries_) n += t.size();
  return n;
}

ParameterStore ParameterStore::clone() const {
  ParameterStore out;
  for (const auto& [name, t] : entries_) out.add(name, t.clone(t.requires_grad()));
  return out;
}

bool glob_match(std::string_view pattern, std::string_view text) {
  std::size_t p = 0, t = 0, star = std::string_view::npos, mark = 0;
  while (t < text.size()) {
    if (p < pattern.size() && (pattern[p] == '?' || pattern[p] == text[t])) {
      ++p;
      ++t;
    } else if (p < pattern.size() && pattern[p] == '*') {
      star = p++;
      mark = t;
    } else if (star != std::string_view::npos) {
      p = star + 1;
      t = ++mark;
    } else {
      return false;
    }
  }
  while (p < pattern.size() && pattern[p] == '*') ++p;
  return p == pattern.size();
}

}  // namespace framegen
