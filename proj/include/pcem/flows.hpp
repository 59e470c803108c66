#pragma once

// Backward pass over the circuit: per-edge flows (the gradient of the
// unnormalized log-likelihood w.r.t. the log-parameters), per-node flows,
// normalized child flows, and top-down reach probabilities. Per-sample work
// stays in log space; exponentiation happens only when accumulating a batch.

#include <cmath>
#include <mutex>
#include <span>
#include <vector>

#include "pcem/circuit.hpp"
#include "pcem/dataset.hpp"
#include "pcem/error.hpp"
#include "pcem/inference.hpp"
#include "pcem/util.hpp"

namespace pcem {

/// Reach probabilities: node_td per node, edge_td = theta * node_td(owner)
/// per sum edge. Data-independent; one top-down pass.
struct TdVector {
  std::vector<double> node_td;
  std::vector<double> edge_td;
};

inline TdVector td_probs(const Circuit& c, const ParamVector& params) {
  TdVector td;
  td.node_td.assign(c.num_nodes(), 0.0);
  td.edge_td.assign(c.num_edges(), 0.0);
  td.node_td[c.root()] = 1.0;
  for (NodeId i = c.root() + 1; i-- > 0;) {
    const Node& n = c.node(i);
    if (n.kind == NodeKind::Sum) {
      for (std::size_t k = 0; k < n.children.size(); ++k) {
        const EdgeId e = n.first_edge + static_cast<EdgeId>(k);
        td.edge_td[e] = std::exp(params.phi[e]) * td.node_td[i];
        td.node_td[n.children[k]] += td.edge_td[e];
      }
    } else if (n.kind == NodeKind::Product) {
      // A product passes its own reach through unweighted.
      for (NodeId ch : n.children) td.node_td[ch] += td.node_td[i];
    }
  }
  return td;
}

/// Batch-aggregated flows (already divided by the batch size).
struct FlowTable {
  std::vector<double> edge_flow;
  std::vector<double> node_flow;
  std::size_t batch_size = 0;
};

struct FlowOptions {
  unsigned threads = 0;
  bool deterministic = false;  // sequential reduction in row order
};

namespace detail {

/// logb[n] = log d p~(x) / d p~_n(x), given forward values logv.
/// Zero-valued products need care: the partial derivative w.r.t. one child is
/// the product of the remaining children, which is nonzero iff that child is
/// the only zero.
inline void backward_log(const Circuit& c, std::span<const double> phi,
                         std::span<const double> logv, std::span<double> logb) {
  for (auto& b : logb) b = kNegInf;
  logb[c.root()] = 0.0;
  for (NodeId i = c.root() + 1; i-- > 0;) {
    const Node& n = c.node(i);
    if (logb[i] == kNegInf && n.kind != NodeKind::Input) {
      continue;  // nothing above reaches this node for this sample
    }
    if (n.kind == NodeKind::Sum) {
      for (std::size_t k = 0; k < n.children.size(); ++k) {
        const NodeId ch = n.children[k];
        logb[ch] = log_add_exp(logb[ch], logb[i] + phi[n.first_edge + k]);
      }
    } else if (n.kind == NodeKind::Product) {
      std::size_t zeros = 0;
      double finite_sum = 0.0;
      for (NodeId ch : n.children) {
        if (logv[ch] == kNegInf)
          ++zeros;
        else
          finite_sum += logv[ch];
      }
      if (zeros >= 2) continue;
      for (NodeId ch : n.children) {
        if (zeros == 1) {
          if (logv[ch] != kNegInf) continue;
          logb[ch] = log_add_exp(logb[ch], logb[i] + finite_sum);
        } else {
          logb[ch] = log_add_exp(logb[ch], logb[i] + finite_sum - logv[ch]);
        }
      }
    }
  }
}

/// Accumulates one sample's flows into linear-space tables (no 1/|D| yet).
/// Returns false when p~(x) = 0.
inline bool accumulate_flows(const Circuit& c, std::span<const double> phi,
                             std::span<const double> logv, std::span<double> logb,
                             std::span<double> edge_acc, std::span<double> node_acc) {
  const double log_root = logv[c.root()];
  if (log_root == kNegInf) return false;
  backward_log(c, phi, logv, logb);
  for (NodeId i = 0; i < c.num_nodes(); ++i) {
    const Node& n = c.node(i);
    const double nf = logb[i] + logv[i] - log_root;
    if (nf != kNegInf) node_acc[i] += std::exp(nf);
    if (n.kind != NodeKind::Sum) continue;
    for (std::size_t k = 0; k < n.children.size(); ++k) {
      const EdgeId e = n.first_edge + static_cast<EdgeId>(k);
      const double ef = phi[e] + logv[n.children[k]] + logb[i] - log_root;
      if (ef != kNegInf) edge_acc[e] += std::exp(ef);
    }
  }
  return true;
}

}  // namespace detail

/// Aggregated flows over a batch of rows: edge_flow(n,c) is the mean gradient
/// of log p~ w.r.t. phi_{n,c}; node_flow(n) the mean gradient w.r.t. the
/// node's log-value. A zero-likelihood row aborts with its index; training
/// should smooth parameters rather than drop such samples silently.
inline FlowTable backward_flows(const Circuit& c, const ParamVector& params, const Dataset& data,
                                std::span<const std::uint32_t> rows = {},
                                const FlowOptions& opts = {}) {
  check_compatible(c, data);
  const std::size_t count = rows.empty() ? data.rows() : rows.size();
  if (count == 0) throw std::invalid_argument("empty batch");

  FlowTable table;
  table.edge_flow.assign(c.num_edges(), 0.0);
  table.node_flow.assign(c.num_nodes(), 0.0);
  table.batch_size = count;

  const unsigned threads = opts.deterministic ? 1 : opts.threads;
  std::size_t bad_row = count;  // first zero-likelihood row, count = none

  struct Partial {
    std::vector<double> edge, node;
  };
  std::vector<Partial> partials(opts.deterministic ? 1 : detail::effective_threads(threads));
  std::mutex bad_mutex;

  detail::parallel_chunks(count, threads, [&](std::size_t begin, std::size_t end, unsigned worker) {
    Partial& part = partials[worker];
    part.edge.assign(c.num_edges(), 0.0);
    part.node.assign(c.num_nodes(), 0.0);
    std::vector<double> logv(c.num_nodes()), logb(c.num_nodes());
    for (std::size_t i = begin; i < end; ++i) {
      const std::size_t r = rows.empty() ? i : rows[i];
      auto sample = data.row(r);
      detail::eval_nodes(c, params.phi, [&](const Node& n) {
        if (const auto* ind = std::get_if<Indicator>(&n.dist))
          return detail::log_indicator(*ind, sample[n.var]);
        return detail::log_gaussian(std::get<FixedGaussian>(n.dist), sample[n.var]);
      }, logv);
      if (!detail::accumulate_flows(c, params.phi, logv, logb, part.edge, part.node)) {
        std::lock_guard<std::mutex> lock(bad_mutex);
        bad_row = std::min(bad_row, i);
        return;
      }
    }
  });

  if (bad_row < count)
    throw NumericError("zero-likelihood sample at batch index " + std::to_string(bad_row));

  for (const Partial& part : partials) {
    if (part.edge.empty()) continue;
    for (std::size_t e = 0; e < table.edge_flow.size(); ++e) table.edge_flow[e] += part.edge[e];
    for (std::size_t i = 0; i < table.node_flow.size(); ++i) table.node_flow[i] += part.node[i];
  }
  const double inv = 1.0 / static_cast<double>(count);
  for (double& v : table.edge_flow) v *= inv;
  for (double& v : table.node_flow) v *= inv;
  return table;
}

/// Flows of a single fully observed sample.
inline FlowTable backward_flows(const Circuit& c, const ParamVector& params,
                                std::span<const double> sample) {
  FlowTable table;
  table.edge_flow.assign(c.num_edges(), 0.0);
  table.node_flow.assign(c.num_nodes(), 0.0);
  table.batch_size = 1;
  std::vector<double> logv = log_eval(c, params, sample);
  std::vector<double> logb(c.num_nodes());
  if (!detail::accumulate_flows(c, params.phi, logv, logb, table.edge_flow, table.node_flow))
    throw NumericError("zero-likelihood sample at batch index 0");
  return table;
}

/// Flows of a single evidence query (marginalized variables read as 1).
inline FlowTable backward_flows(const Circuit& c, const ParamVector& params,
                                const Evidence& evidence) {
  FlowTable table;
  table.edge_flow.assign(c.num_edges(), 0.0);
  table.node_flow.assign(c.num_nodes(), 0.0);
  table.batch_size = 1;
  std::vector<double> logv = log_eval(c, params, evidence);
  std::vector<double> logb(c.num_nodes());
  if (!detail::accumulate_flows(c, params.phi, logv, logb, table.edge_flow, table.node_flow))
    throw NumericError("zero-likelihood sample at batch index 0");
  return table;
}

/// Per-edge F^(n,c) = theta * p~_c(x) / p~_n(x) for one sample. Sums to one
/// over the children of every sum node the sample activates; zero elsewhere.
inline std::vector<double> normalized_child_flows(const Circuit& c, const ParamVector& params,
                                                  std::span<const double> sample) {
  std::vector<double> logv = log_eval(c, params, sample);
  std::vector<double> out(c.num_edges(), 0.0);
  for (NodeId i = 0; i < c.num_nodes(); ++i) {
    const Node& n = c.node(i);
    if (n.kind != NodeKind::Sum || logv[i] == kNegInf) continue;
    for (std::size_t k = 0; k < n.children.size(); ++k) {
      const EdgeId e = n.first_edge + static_cast<EdgeId>(k);
      const double t = params.phi[e] + logv[n.children[k]] - logv[i];
      out[e] = t == kNegInf ? 0.0 : std::exp(t);
    }
  }
  return out;
}

namespace detail {

inline std::vector<double> rel_from_flows(const Circuit& c, const FlowTable& flows,
                                          const TdVector& td) {
  std::vector<double> rel(c.num_nodes());
  for (NodeId i = 0; i < c.num_nodes(); ++i)
    rel[i] = td.node_td[i] > 0.0 ? flows.node_flow[i] / td.node_td[i]
                                 : std::numeric_limits<double>::quiet_NaN();
  return rel;
}

}  // namespace detail

/// rel(n) = F(n) / TD(n) for one sample; NaN marks nodes with TD(n) = 0,
/// whose relative importance is undefined.
inline std::vector<double> relative_importance(const Circuit& c, const ParamVector& params,
                                               std::span<const double> sample) {
  return detail::rel_from_flows(c, backward_flows(c, params, sample), td_probs(c, params));
}

/// Evidence variant; with everything marginalized, flows reduce to the reach
/// probabilities and every defined rel(n) is 1.
inline std::vector<double> relative_importance(const Circuit& c, const ParamVector& params,
                                               const Evidence& evidence) {
  return detail::rel_from_flows(c, backward_flows(c, params, evidence), td_probs(c, params));
}

/// Gradient of the mean normalized log-likelihood w.r.t. phi. Valid only for
/// normalized parameters, where the partition-function term reduces to the
/// edge TD-probs.
inline std::vector<double> loglik_gradient(const Circuit& c, const ParamVector& params,
                                           const Dataset& data,
                                           std::span<const std::uint32_t> rows = {},
                                           const FlowOptions& opts = {}) {
  if (!params.normalized)
    throw std::invalid_argument(
        "log-likelihood gradient needs normalized parameters; call renormalize() first");
  const FlowTable flows = backward_flows(c, params, data, rows, opts);
  const TdVector td = td_probs(c, params);
  std::vector<double> grad(c.num_edges());
  for (std::size_t e = 0; e < grad.size(); ++e) grad[e] = flows.edge_flow[e] - td.edge_td[e];
  return grad;
}

}  // namespace pcem
