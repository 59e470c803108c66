#pragma once

// Brute-force reference implementations for tests. Everything here works by
// exhaustive enumeration of variable assignments and latent selections and is
// deliberately independent of the log-space forward/backward passes it
// cross-checks. Latent enumeration walks only sum nodes reachable under the
// selections made above them; selector entries of unreached sum nodes are
// pinned to zero and carry no probability mass.

#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pcem/circuit.hpp"
#include "pcem/dataset.hpp"
#include "pcem/error.hpp"
#include "pcem/flows.hpp"
#include "pcem/normalize.hpp"

namespace pcem::oracle {

struct OracleLimits {
  std::size_t max_assignments = 4096;  // about 12 binary variables
  std::size_t max_trees = 262144;
};

/// One latent child selection per sum node, in node-id order.
struct LatentState {
  std::vector<std::uint32_t> choice;
};

inline std::vector<NodeId> sum_nodes(const Circuit& c) {
  std::vector<NodeId> out;
  for (NodeId i = 0; i < c.num_nodes(); ++i)
    if (c.node(i).kind == NodeKind::Sum) out.push_back(i);
  return out;
}

/// A complete set of latent selections together with the sum edges and input
/// nodes it makes reachable from the root.
struct InducedTree {
  LatentState state;
  std::vector<EdgeId> edges;
  std::vector<NodeId> leaves;
};

inline std::vector<InducedTree> enumerate_latent_states(const Circuit& c,
                                                        const OracleLimits& limits = {}) {
  const std::vector<NodeId> sums = sum_nodes(c);
  std::vector<std::size_t> sum_index(c.num_nodes(), 0);
  for (std::size_t i = 0; i < sums.size(); ++i) sum_index[sums[i]] = i;

  std::vector<InducedTree> out;
  LatentState z;
  z.choice.assign(sums.size(), 0);
  std::vector<EdgeId> edges;
  std::vector<NodeId> leaves;
  std::vector<NodeId> pending{c.root()};

  auto rec = [&](auto&& self) -> void {
    if (pending.empty()) {
      if (out.size() >= limits.max_trees)
        throw std::invalid_argument("circuit exceeds the latent enumeration size guard (" +
                                    std::to_string(limits.max_trees) + " states)");
      out.push_back({z, edges, leaves});
      return;
    }
    const NodeId id = pending.back();
    pending.pop_back();
    const Node& n = c.node(id);
    if (n.kind == NodeKind::Input) {
      leaves.push_back(id);
      self(self);
      leaves.pop_back();
    } else if (n.kind == NodeKind::Product) {
      for (NodeId ch : n.children) pending.push_back(ch);
      self(self);
      pending.resize(pending.size() - n.children.size());
    } else {
      const std::size_t si = sum_index[id];
      for (std::uint32_t k = 0; k < n.children.size(); ++k) {
        z.choice[si] = k;
        edges.push_back(n.first_edge + k);
        pending.push_back(n.children[k]);
        self(self);
        pending.pop_back();
        edges.pop_back();
      }
      z.choice[si] = 0;
    }
    pending.push_back(id);
  };
  rec(rec);
  return out;
}

/// All joint assignments of the (categorical) variables.
inline std::vector<std::vector<double>> enumerate_assignments(const Circuit& c,
                                                              const OracleLimits& limits = {}) {
  std::size_t total = 1;
  for (VarId v = 0; v < c.num_vars(); ++v) {
    if (c.var(v).continuous())
      throw std::invalid_argument("assignment enumeration needs categorical variables");
    if (total > limits.max_assignments / c.var(v).cardinality)
      throw std::invalid_argument("circuit exceeds the assignment enumeration size guard (" +
                                  std::to_string(limits.max_assignments) + " assignments)");
    total *= c.var(v).cardinality;
  }
  std::vector<std::vector<double>> out;
  out.reserve(total);
  std::vector<double> cur(c.num_vars(), 0.0);
  for (std::size_t i = 0; i < total; ++i) {
    out.push_back(cur);
    for (std::size_t v = 0; v < c.num_vars(); ++v) {
      cur[v] += 1.0;
      if (cur[v] < c.var(static_cast<VarId>(v)).cardinality) break;
      cur[v] = 0.0;
    }
  }
  return out;
}

namespace detail {

inline double leaf_value(const Node& n, double x) {
  if (const auto* ind = std::get_if<Indicator>(&n.dist))
    return x == static_cast<double>(ind->category) ? 1.0 : 0.0;
  const auto& g = std::get<FixedGaussian>(n.dist);
  const double z = (x - g.mean) / g.stddev;
  return std::exp(-0.5 * z * z) / (g.stddev * std::sqrt(2.0 * std::numbers::pi));
}

/// Linear-space weight of a tree: product of selected edge weights times the
/// product of leaf values at x.
inline double tree_value(const Circuit& c, const ParamVector& params, const InducedTree& t,
                         std::span<const double> x) {
  double v = 1.0;
  for (EdgeId e : t.edges) v *= std::exp(params.phi[e]);
  for (NodeId leaf : t.leaves) v *= leaf_value(c.node(leaf), x[c.node(leaf).var]);
  return v;
}

}  // namespace detail

/// Joint value p~(x, z): the forward pass with every sum node restricted to
/// its selected child. Selections of sum nodes the root never reaches do not
/// affect the value.
inline double brute_joint(const Circuit& c, const ParamVector& params, std::span<const double> x,
                          const LatentState& z) {
  const std::vector<NodeId> sums = sum_nodes(c);
  if (z.choice.size() != sums.size())
    throw std::invalid_argument("latent state has " + std::to_string(z.choice.size()) +
                                " selections, circuit has " + std::to_string(sums.size()) +
                                " sum nodes");
  std::vector<std::size_t> sum_index(c.num_nodes(), 0);
  for (std::size_t i = 0; i < sums.size(); ++i) {
    sum_index[sums[i]] = i;
    if (z.choice[i] >= c.node(sums[i]).children.size())
      throw std::invalid_argument("latent selection out of range at node " +
                                  std::to_string(sums[i]));
  }
  if (x.size() != c.num_vars()) throw std::invalid_argument("sample does not match circuit");

  auto value = [&](auto&& self, NodeId id) -> double {
    const Node& n = c.node(id);
    if (n.kind == NodeKind::Input) return detail::leaf_value(n, x[n.var]);
    if (n.kind == NodeKind::Product) {
      double v = 1.0;
      for (NodeId ch : n.children) v *= self(self, ch);
      return v;
    }
    const std::uint32_t k = z.choice[sum_index[id]];
    return std::exp(params.phi[n.first_edge + k]) * self(self, n.children[k]);
  };
  return value(value, c.root());
}

/// Partition function by full enumeration of assignments and latent states.
inline double brute_Z(const Circuit& c, const ParamVector& params,
                      const OracleLimits& limits = {}) {
  const auto trees = enumerate_latent_states(c, limits);
  const auto assignments = enumerate_assignments(c, limits);
  double z = 0.0;
  for (const auto& x : assignments)
    for (const auto& t : trees) z += detail::tree_value(c, params, t, x);
  return z;
}

/// Posterior over latent states given x, as (state, probability) pairs for
/// every enumerated state.
inline std::vector<std::pair<LatentState, double>> brute_posterior(
    const Circuit& c, const ParamVector& params, std::span<const double> x,
    const OracleLimits& limits = {}) {
  const auto trees = enumerate_latent_states(c, limits);
  std::vector<double> w(trees.size());
  double total = 0.0;
  for (std::size_t i = 0; i < trees.size(); ++i) {
    w[i] = detail::tree_value(c, params, trees[i], x);
    total += w[i];
  }
  if (!(total > 0.0)) throw NumericError("zero-likelihood sample in posterior enumeration");
  std::vector<std::pair<LatentState, double>> out;
  out.reserve(trees.size());
  for (std::size_t i = 0; i < trees.size(); ++i) out.emplace_back(trees[i].state, w[i] / total);
  return out;
}

/// Exact surrogate objective: the dataset-averaged expected complete-data
/// log-likelihood of `next` under the posterior of `cur`.
inline double brute_Q(const Circuit& c, const ParamVector& cur, const ParamVector& next,
                      const Dataset& data, const OracleLimits& limits = {}) {
  if (data.rows() == 0) throw std::invalid_argument("empty dataset");
  const auto trees = enumerate_latent_states(c, limits);
  const double log_z_next = std::log(brute_Z(c, next, limits));

  double q = 0.0;
  for (std::size_t r = 0; r < data.rows(); ++r) {
    const auto x = data.row(r);
    double total = 0.0;
    std::vector<double> w(trees.size());
    for (std::size_t i = 0; i < trees.size(); ++i) {
      w[i] = detail::tree_value(c, cur, trees[i], x);
      total += w[i];
    }
    if (!(total > 0.0))
      throw NumericError("zero-likelihood sample at row " + std::to_string(r));
    double qx = 0.0;
    for (std::size_t i = 0; i < trees.size(); ++i) {
      if (w[i] == 0.0) continue;
      const double log_joint_next =
          std::log(detail::tree_value(c, next, trees[i], x)) - log_z_next;
      qx += (w[i] / total) * log_joint_next;
    }
    q += qx;
  }
  return q / static_cast<double>(data.rows());
}

/// Joint KL between two parameterizations by direct enumeration over
/// assignments and latent states.
inline double brute_kl_joint(const Circuit& c, const ParamVector& p, const ParamVector& q,
                             const OracleLimits& limits = {}) {
  const auto trees = enumerate_latent_states(c, limits);
  const auto assignments = enumerate_assignments(c, limits);
  const double zp = brute_Z(c, p, limits);
  const double zq = brute_Z(c, q, limits);
  double kl = 0.0;
  for (const auto& x : assignments) {
    for (const auto& t : trees) {
      const double pp = detail::tree_value(c, p, t, x) / zp;
      if (pp == 0.0) continue;
      const double qq = detail::tree_value(c, q, t, x) / zq;
      kl += pp * std::log(pp / qq);
    }
  }
  return kl;
}

/// Residual of the regularized-linearization identity: the change in the
/// surrogate objective minus (linearized log-likelihood change minus joint
/// KL). Zero up to float rounding for normalized parameter pairs; this binds
/// the enumeration oracle, the flow-based gradient, and the KL recursion
/// together.
inline double prop1_residual(const Circuit& c, const ParamVector& params,
                             const ParamVector& next, const Dataset& data,
                             const OracleLimits& limits = {}) {
  const double q_diff = brute_Q(c, params, next, data, limits) -
                        brute_Q(c, params, params, data, limits);
  const std::vector<double> grad = loglik_gradient(c, params, data);
  double linear = 0.0;
  for (std::size_t e = 0; e < grad.size(); ++e)
    linear += grad[e] * (next.phi[e] - params.phi[e]);
  const double kl = kl_joint(c, params, next);
  return q_diff - (linear - kl);
}

/// Per-node membership of (x, z) in the support recursion: an input node is
/// supported when its leaf value is positive, a product when all children
/// are, a sum when its selected child is.
inline std::vector<char> support_membership(const Circuit& c, std::span<const double> x,
                                            const LatentState& z) {
  const std::vector<NodeId> sums = sum_nodes(c);
  if (z.choice.size() != sums.size())
    throw std::invalid_argument("latent state does not match circuit");
  std::vector<std::size_t> sum_index(c.num_nodes(), 0);
  for (std::size_t i = 0; i < sums.size(); ++i) sum_index[sums[i]] = i;

  std::vector<char> member(c.num_nodes(), 0);
  for (NodeId i = 0; i < c.num_nodes(); ++i) {
    const Node& n = c.node(i);
    if (n.kind == NodeKind::Input) {
      member[i] = detail::leaf_value(n, x[n.var]) > 0.0;
    } else if (n.kind == NodeKind::Product) {
      member[i] = 1;
      for (NodeId ch : n.children)
        if (!member[ch]) {
          member[i] = 0;
          break;
        }
    } else {
      const std::uint32_t k = z.choice[sum_index[i]];
      if (k >= n.children.size())
        throw std::invalid_argument("latent selection out of range at node " + std::to_string(i));
      member[i] = member[n.children[k]];
    }
  }
  return member;
}

}  // namespace pcem::oracle
