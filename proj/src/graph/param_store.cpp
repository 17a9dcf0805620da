#include "gex/graph/param_store.hpp"

#include <cmath>
#include <stdexcept>

#include "gex/graph/graph.hpp"

namespace gex::graph {

template <class T>
size_t ParamStore<T>::add(std::string name, Tensor<T> value, bool trainable) {
  if (by_name_.count(name) != 0) {
    throw std::invalid_argument("ParamStore: duplicate parameter '" + name + "'");
  }
  Entry e;
  e.name = name;
  e.m = Tensor<T>(value.shape);
  e.v = Tensor<T>(value.shape);
  e.value = std::move(value);
  e.trainable = trainable;
  entries_.push_back(std::move(e));
  by_name_.emplace(std::move(name), entries_.size() - 1);
  return entries_.size() - 1;
}

template <class T>
std::optional<size_t> ParamStore<T>::find(std::string_view name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) return std::nullopt;
  return it->second;
}

template <class T>
size_t ParamStore<T>::index(std::string_view name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) {
    throw std::out_of_range("ParamStore: no parameter '" + std::string(name) + "'");
  }
  return it->second;
}

template <class T>
int64_t ParamStore<T>::parameter_count() const {
  int64_t n = 0;
  for (const auto& e : entries_) {
    if (e.trainable) n += e.value.size();
  }
  return n;
}

template <class T>
bool ParamStore<T>::operator==(const ParamStore& o) const {
  if (entries_.size() != o.entries_.size()) return false;
  for (size_t i = 0; i < entries_.size(); ++i) {
    const auto& a = entries_[i];
    const auto& b = o.entries_[i];
    if (a.name != b.name || a.value != b.value || a.m != b.m || a.v != b.v ||
        a.step != b.step || a.trainable != b.trainable) {
      return false;
    }
  }
  return true;
}

template <class T>
void adam_update(ParamStore<T>& store, const std::map<std::string, Tensor<T>>& grads,
                 const AdamConfig& config) {
  std::vector<std::pair<size_t, const Tensor<T>*>> work;
  work.reserve(grads.size());
  for (const auto& [name, g] : grads) {
    const size_t i = store.index(name);
    const auto& e = store.entry(i);
    if (g.shape != e.value.shape) {
      throw ShapeError("adam_update: gradient for '" + name + "' has shape " +
                       to_string(g.shape) + ", parameter has " + to_string(e.value.shape));
    }
    for (T x : g.data) {
      if (!std::isfinite(x)) {
        throw NonFiniteError("adam_update: non-finite gradient for parameter '" + name + "'");
      }
    }
    work.emplace_back(i, &g);
  }
  const double b1 = config.beta1;
  const double b2 = config.beta2;
  for (auto [i, g] : work) {
    auto& e = store.entry(i);
    e.step += 1;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(e.step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(e.step));
    const double step = config.lr / c1;
    const double root_c2 = std::sqrt(c2);
    for (int64_t k = 0; k < e.value.size(); ++k) {
      const double gk = static_cast<double>((*g)[k]);
      const double m = b1 * static_cast<double>(e.m[k]) + (1.0 - b1) * gk;
      const double v = b2 * static_cast<double>(e.v[k]) + (1.0 - b2) * gk * gk;
      e.m[k] = static_cast<T>(m);
      e.v[k] = static_cast<T>(v);
      e.value[k] -= static_cast<T>(step * m / (std::sqrt(v) / root_c2 + config.eps));
    }
  }
}

template class ParamStore<float>;
template class ParamStore<double>;
template void adam_update<float>(ParamStore<float>&, const std::map<std::string, Tensor<float>>&,
                                 const AdamConfig&);
template void adam_update<double>(ParamStore<double>&,
                                  const std::map<std::string, Tensor<double>>&,
                                  const AdamConfig&);

}  // namespace gex::graph
