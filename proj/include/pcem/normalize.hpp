#pragma once

// Global renormalization and KL divergence between two parameterizations of
// the same circuit. Renormalization rewrites every sum edge as
// theta' = theta * Z(child) / Z(node), entirely in log space so deep circuits
// cannot overflow their partition functions.

#include <cmath>
#include <span>
#include <utility>
#include <vector>

#include "pcem/circuit.hpp"
#include "pcem/error.hpp"
#include "pcem/flows.hpp"
#include "pcem/inference.hpp"

namespace pcem {

/// Per-node renormalization. The returned parameters define the same
/// distribution divided by Z at every node, and carry the normalized flag.
inline ParamVector renormalize(const Circuit& c, const ParamVector& params) {
  const std::vector<double> log_z = log_partition(c, params);
  for (NodeId i = 0; i < c.num_nodes(); ++i)
    if (log_z[i] == kNegInf || !std::isfinite(log_z[i]))
      throw NumericError("partition function of node " + std::to_string(i) +
                         " is zero or non-finite; cannot renormalize");
  ParamVector out;
  out.phi.resize(c.num_edges());
  for (NodeId i = 0; i < c.num_nodes(); ++i) {
    const Node& n = c.node(i);
    if (n.kind != NodeKind::Sum) continue;
    for (std::size_t k = 0; k < n.children.size(); ++k) {
      const EdgeId e = n.first_edge + static_cast<EdgeId>(k);
      out.phi[e] = params.phi[e] + log_z[n.children[k]] - log_z[i];
    }
  }
  out.normalized = true;
  return out;
}

/// KL divergence over the joint of observed variables and the latent child
/// selectors, computed by the bottom-up recursion: inputs contribute zero,
/// products add child terms, sum nodes add
///   sum_c theta_c * ((phi_c - phi'_c) + KL_c).
/// Requires both parameter vectors normalized; the recursion is only the
/// joint KL in that case.
inline double kl_joint(const Circuit& c, const ParamVector& p, const ParamVector& q) {
  if (p.phi.size() != c.num_edges() || q.phi.size() != c.num_edges())
    throw std::invalid_argument("parameter vector does not match circuit");
  if (!p.normalized || !q.normalized)
    throw std::invalid_argument("kl_joint needs normalized parameters on both sides");
  std::vector<double> kl(c.num_nodes(), 0.0);
  for (NodeId i = 0; i < c.num_nodes(); ++i) {
    const Node& n = c.node(i);
    if (n.kind == NodeKind::Product) {
      double s = 0.0;
      for (NodeId ch : n.children) s += kl[ch];
      kl[i] = s;
    } else if (n.kind == NodeKind::Sum) {
      double s = 0.0;
      for (std::size_t k = 0; k < n.children.size(); ++k) {
        const EdgeId e = n.first_edge + static_cast<EdgeId>(k);
        const double theta = std::exp(p.phi[e]);
        if (theta == 0.0) continue;  // 0 * log 0 reads as 0
        s += theta * ((p.phi[e] - q.phi[e]) + kl[n.children[k]]);
      }
      kl[i] = s;
    }
  }
  return kl[c.root()];
}

/// The linear form of the joint KL in the second argument: differences of
/// kl_joint against a fixed base equal -<edge_td(base), phi_a - phi_b>.
/// Returns (left, right) so callers can assert the identity at their own
/// tolerance.
inline std::pair<double, double> kl_linear_form_check(const Circuit& c, const ParamVector& base,
                                                      const ParamVector& a, const ParamVector& b) {
  const double lhs = kl_joint(c, base, a) - kl_joint(c, base, b);
  const TdVector td = td_probs(c, base);
  double rhs = 0.0;
  for (std::size_t e = 0; e < td.edge_td.size(); ++e)
    rhs -= td.edge_td[e] * (a.phi[e] - b.phi[e]);
  return {lhs, rhs};
}

/// Max per-edge deviation between the normalized log-likelihood gradient
/// under `params` and under renormalize(params), over a batch. Each side is
/// the data flows minus the gradient of log Z, and the latter is itself a
/// backward pass with every leaf reading 1 (the all-marginalized flows; it
/// collapses to the edge TD-probs once the circuit is normalized).
inline double gradient_invariance_check(const Circuit& c, const ParamVector& params,
                                        const Dataset& data,
                                        std::span<const std::uint32_t> rows = {}) {
  const ParamVector renormed = renormalize(c, params);
  const Evidence all = Evidence::all_marginalized(c.num_vars());

  const FlowTable raw_flows = backward_flows(c, params, data, rows);
  const FlowTable raw_zgrad = backward_flows(c, params, all);
  const FlowTable new_flows = backward_flows(c, renormed, data, rows);
  const FlowTable new_zgrad = backward_flows(c, renormed, all);

  double dev = 0.0;
  for (std::size_t e = 0; e < c.num_edges(); ++e) {
    const double lhs = raw_flows.edge_flow[e] - raw_zgrad.edge_flow[e];
    const double rhs = new_flows.edge_flow[e] - new_zgrad.edge_flow[e];
    dev = std::max(dev, std::abs(lhs - rhs));
  }
  return dev;
}

}  // namespace pcem
