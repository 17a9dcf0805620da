#include "gex/graph/gradcheck.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "gex/graph/param_store.hpp"

namespace gex::graph {

template <class T>
T finite_difference_check(Graph<T>& graph, NodeId scalar, NodeId wrt, const Bindings<T>& point,
                          T h) {
  if (!(h > T(0))) throw GraphError("finite_difference_check: step must be positive");
  const Node<T>& w = graph.node(wrt);
  Tensor<T> base;
  if (const Tensor<T>* bound = point.find(wrt)) {
    base = *bound;
  } else if (w.op == Op::Parameter) {
    base = w.store->entry(w.param_index).value;
  } else {
    throw MissingInputError("finite_difference_check: wrt node is neither bound nor a parameter");
  }

  const std::array<NodeId, 1> wrt_list{wrt};
  const GradientMap grads = graph.differentiate(scalar, wrt_list);
  const NodeId gnode = grads.at(wrt);
  const std::array<NodeId, 1> gout{gnode};
  const Tensor<T> analytic = graph.evaluate(gout, point).at(gnode);

  const std::array<NodeId, 1> fout{scalar};
  auto f_at = [&](const Tensor<T>& v) {
    Bindings<T> b = point;
    b.bind(wrt, v);
    const T y = graph.evaluate(fout, b).scalar(scalar);
    if (!std::isfinite(y)) {
      throw NonFiniteError("finite_difference_check: non-finite evaluation");
    }
    return y;
  };

  T worst = T(0);
  Tensor<T> probe = base;
  for (int64_t i = 0; i < base.size(); ++i) {
    probe[i] = base[i] + h;
    const T up = f_at(probe);
    probe[i] = base[i] - h;
    const T down = f_at(probe);
    probe[i] = base[i];
    const T numeric = (up - down) / (T(2) * h);
    const T a = analytic[i];
    if (!std::isfinite(a)) throw NonFiniteError("finite_difference_check: non-finite gradient");
    const T denom = std::max({std::abs(a), std::abs(numeric), T(1e-12)});
    worst = std::max(worst, std::abs(a - numeric) / denom);
  }
  return worst;
}

template float finite_difference_check<float>(Graph<float>&, NodeId, NodeId,
                                              const Bindings<float>&, float);
template double finite_difference_check<double>(Graph<double>&, NodeId, NodeId,
                                                const Bindings<double>&, double);

}  // namespace gex::graph
