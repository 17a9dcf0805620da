#pragma once

#include "gex/graph/graph.hpp"

namespace gex::graph {

// Compares the symbolic gradient of `scalar` with respect to `wrt` against
// central differences at the binding point. Returns the largest componentwise
//   |analytic - numeric| / max(|analytic|, |numeric|, 1e-12).
// `wrt` must be an Input bound in `point` or a Parameter. Appends gradient
// nodes to `graph`.
template <class T>
T finite_difference_check(Graph<T>& graph, NodeId scalar, NodeId wrt, const Bindings<T>& point,
                          T h);

}  // namespace gex::graph
