#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gex/tensor.hpp"

namespace gex::graph {

// Named parameter buffers plus per-parameter Adam moments.
template <class T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor<T> value;
    Tensor<T> m;  // first moment
    Tensor<T> v;  // second moment
    int64_t step = 0;
    bool trainable = true;  // false for running statistics
  };

  // Throws std::invalid_argument on a duplicate name.
  size_t add(std::string name, Tensor<T> value, bool trainable = true);

  std::optional<size_t> find(std::string_view name) const;
  size_t index(std::string_view name) const;  // throws std::out_of_range

  const Entry& entry(size_t i) const { return entries_.at(i); }
  Entry& entry(size_t i) { return entries_.at(i); }
  const Tensor<T>& value(std::string_view name) const { return entries_[index(name)].value; }
  Tensor<T>& value(std::string_view name) { return entries_[index(name)].value; }

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  size_t size() const { return entries_.size(); }
  int64_t parameter_count() const;

  bool operator==(const ParamStore& o) const;

 private:
  std::vector<Entry> entries_;
  std::map<std::string, size_t, std::less<>> by_name_;
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One bias-corrected Adam step for every parameter named in `grads`. All
// gradients are checked for finiteness before anything is modified; a
// non-finite entry raises NonFiniteError naming the parameter.
template <class T>
void adam_update(ParamStore<T>& store, const std::map<std::string, Tensor<T>>& grads,
                 const AdamConfig& config);

extern template class ParamStore<float>;
extern template class ParamStore<double>;

}  // namespace gex::graph
