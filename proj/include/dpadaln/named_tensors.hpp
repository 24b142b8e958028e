#pragma once

#include <cmath>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dpadaln/tensor.hpp"

namespace dpadaln {

/// Ordered collection of named tensors. Iteration, flattening and norms all
/// follow insertion order, so two sets built the same way share a layout.
template <class Tag>
class NamedTensorSet {
 public:
  struct Entry {
    std::string id;
    Tensor value;
  };

  void add(std::string id, Tensor value) {
    if (index_.contains(id)) throw Error("duplicate tensor identifier '" + id + "'");
    index_.emplace(id, entries_.size());
    entries_.push_back({std::move(id), std::move(value)});
  }

  bool contains(std::string_view id) const { return index_.contains(std::string(id)); }

  Tensor& at(std::string_view id) { return entries_[lookup(id)].value; }
  const Tensor& at(std::string_view id) const { return entries_[lookup(id)].value; }

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  std::size_t count() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  /// Total number of scalar coordinates P.
  std::size_t dimension() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

  std::vector<double> flatten() const {
    std::vector<double> flat;
    flat.reserve(dimension());
    for (const auto& e : entries_) flat.insert(flat.end(), e.value.data.begin(), e.value.data.end());
    return flat;
  }

  void unflatten(std::span<const double> flat) {
    if (flat.size() != dimension()) {
      throw Error("unflatten: expected " + std::to_string(dimension()) + " values, got " +
                  std::to_string(flat.size()));
    }
    std::size_t off = 0;
    for (auto& e : entries_) {
      for (double& v : e.value.data) v = flat[off++];
    }
  }

  double squared_norm() const {
    double s = 0.0;
    for (const auto& e : entries_) {
      for (double v : e.value.data) s += v * v;
    }
    return s;
  }

  double norm() const { return std::sqrt(squared_norm()); }

  bool all_finite() const {
    for (const auto& e : entries_) {
      if (!e.value.all_finite()) return false;
    }
    return true;
  }

  template <class OtherTag>
  bool same_layout(const NamedTensorSet<OtherTag>& other) const {
    if (other.entries().size() != entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (entries_[i].id != other.entries()[i].id) return false;
      if (entries_[i].value.shape != other.entries()[i].value.shape) return false;
    }
    return true;
  }

  /// Same identifiers and shapes, all values zero, possibly under another tag.
  template <class OtherTag = Tag>
  NamedTensorSet<OtherTag> zeros_like() const {
    NamedTensorSet<OtherTag> out;
    for (const auto& e : entries_) out.add(e.id, Tensor::zeros_like(e.value));
    return out;
  }

  /// this += a * x (layouts must match).
  template <class OtherTag>
  void axpy(double a, const NamedTensorSet<OtherTag>& x) {
    if (!same_layout(x)) throw Error("axpy: layout mismatch");
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      auto& dst = entries_[i].value.data;
      const auto& src = x.entries()[i].value.data;
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += a * src[j];
    }
  }

  void scale(double a) {
    for (auto& e : entries_) {
      for (double& v : e.value.data) v *= a;
    }
  }

  friend bool operator==(const NamedTensorSet& a, const NamedTensorSet& b) {
    if (!a.same_layout(b)) return false;
    for (std::size_t i = 0; i < a.entries_.size(); ++i) {
      if (a.entries_[i].value.data != b.entries_[i].value.data) return false;
    }
    return true;
  }

 private:
  std::size_t lookup(std::string_view id) const {
    auto it = index_.find(std::string(id));
    if (it == index_.end()) throw Error("unknown tensor identifier '" + std::string(id) + "'");
    return it->second;
  }

  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct ParamTag;
struct GradTag;

/// Trainable parameters keyed by stable identifier.
using ParamSet = NamedTensorSet<ParamTag>;
/// Per-parameter gradient buffers; covers exactly the trainable set.
using GradientVector = NamedTensorSet<GradTag>;

}  // namespace dpadaln
