#pragma once

// Circuit builders: tiny hand fixtures, seeded random legal circuits over a
// variable-partition tree, and a Chow-Liu-tree compiler that expands each
// tree vertex into a block of latent mixture states.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <utility>
#include <vector>

#include "pcem/circuit.hpp"
#include "pcem/dataset.hpp"

namespace pcem {

struct BuiltCircuit {
  Circuit circuit;
  ParamVector params;
};

/// Symmetric-Dirichlet weights per sum node (strictly positive, normalized).
inline ParamVector random_params(const Circuit& c, std::uint64_t seed,
                                 double concentration = 1.0) {
  if (!(concentration > 0.0)) throw std::invalid_argument("concentration must be > 0");
  std::mt19937_64 rng(seed);
  std::gamma_distribution<double> gamma(concentration, 1.0);
  std::vector<double> phi(c.num_edges());
  for (const Node& n : c.nodes()) {
    if (n.kind != NodeKind::Sum) continue;
    double total = 0.0;
    for (std::size_t k = 0; k < n.children.size(); ++k) {
      double g = gamma(rng);
      while (g <= 0.0) g = gamma(rng);
      phi[n.first_edge + k] = g;
      total += g;
    }
    for (std::size_t k = 0; k < n.children.size(); ++k) {
      const EdgeId e = n.first_edge + static_cast<EdgeId>(k);
      phi[e] = std::log(phi[e] / total);
    }
  }
  ParamVector out{std::move(phi), true};
  return out;
}

// ---------------------------------------------------------------------------
// Hand fixtures

/// One binary variable; root mixes the two indicators half and half.
inline BuiltCircuit fixture_c1() {
  std::vector<Node> nodes;
  nodes.push_back(Node::indicator(0, 0));
  nodes.push_back(Node::indicator(0, 1));
  nodes.push_back(Node::sum({0, 1}));
  Circuit c(std::move(nodes), {VarDomain::categorical(2)});
  const double h = std::log(0.5);
  ParamVector p = make_params(c, {h, h});
  return {std::move(c), std::move(p)};
}

/// Two binary variables; root mixes two products of per-variable mixtures.
inline BuiltCircuit fixture_c2() {
  std::vector<Node> nodes;
  nodes.push_back(Node::indicator(0, 0));  // 0: [X1=0]
  nodes.push_back(Node::indicator(0, 1));  // 1: [X1=1]
  nodes.push_back(Node::indicator(1, 0));  // 2: [X2=0]
  nodes.push_back(Node::indicator(1, 1));  // 3: [X2=1]
  nodes.push_back(Node::sum({0, 1}));      // 4: A1
  nodes.push_back(Node::sum({0, 1}));      // 5: A2
  nodes.push_back(Node::sum({2, 3}));      // 6: B1
  nodes.push_back(Node::sum({2, 3}));      // 7: B2
  nodes.push_back(Node::product({4, 6}));  // 8: P1
  nodes.push_back(Node::product({5, 7}));  // 9: P2
  nodes.push_back(Node::sum({8, 9}));      // 10: root
  Circuit c(std::move(nodes), {VarDomain::categorical(2), VarDomain::categorical(2)});
  auto ln = [](double x) { return std::log(x); };
  ParamVector p = make_params(
      c, {ln(0.8), ln(0.2), ln(0.2), ln(0.8), ln(0.7), ln(0.3), ln(0.3), ln(0.7), ln(0.5),
          ln(0.5)});
  return {std::move(c), std::move(p)};
}

/// One continuous variable; root mixes two unit-weight Gaussian bumps.
inline BuiltCircuit fixture_g1() {
  std::vector<Node> nodes;
  nodes.push_back(Node::gaussian(0, -1.5, 0.75));
  nodes.push_back(Node::gaussian(0, 1.5, 0.75));
  nodes.push_back(Node::sum({0, 1}));
  Circuit c(std::move(nodes), {VarDomain::cont()});
  const double h = std::log(0.5);
  ParamVector p = make_params(c, {h, h});
  return {std::move(c), std::move(p)};
}

inline BuiltCircuit fixture(const std::string& name) {
  if (name == "c1") return fixture_c1();
  if (name == "c2") return fixture_c2();
  if (name == "g1") return fixture_g1();
  throw std::invalid_argument("unknown fixture '" + name + "'");
}

// ---------------------------------------------------------------------------
// Random circuits

struct RandomSpec {
  std::uint32_t num_vars = 2;
  std::uint32_t depth = 3;       // partition depth before the splits become chains
  std::uint32_t sum_fanout = 2;  // mixture states per variable block
  std::uint64_t seed = 0;
  std::uint32_t cardinality = 2;
};

/// Seeded random circuit over a random variable-partition tree: every block
/// of variables carries `sum_fanout` mixture states, adjacent blocks combine
/// through product nodes. Alternating, smooth, and decomposable by
/// construction; every node except the root has a parent.
inline BuiltCircuit build_random(const RandomSpec& spec) {
  if (spec.num_vars < 1) throw std::invalid_argument("need at least one variable");
  if (spec.depth < 1) throw std::invalid_argument("depth must be >= 1");
  if (spec.sum_fanout < 1) throw std::invalid_argument("sum_fanout must be >= 1");
  if (spec.cardinality < 2 || spec.cardinality > kMaxCardinality)
    throw std::invalid_argument("cardinality must lie in [2, " +
                                std::to_string(kMaxCardinality) + "]");

  std::mt19937_64 rng(spec.seed);
  std::vector<VarId> vars(spec.num_vars);
  std::iota(vars.begin(), vars.end(), 0);
  std::shuffle(vars.begin(), vars.end(), rng);

  std::vector<Node> nodes;
  auto emit = [&](Node n) {
    nodes.push_back(std::move(n));
    return static_cast<NodeId>(nodes.size() - 1);
  };

  // Returns the block's mixture nodes, built bottom-up over a contiguous
  // slice of the shuffled variable order.
  auto build = [&](auto&& self, std::size_t begin, std::size_t end, std::uint32_t depth,
                   bool is_root) -> std::vector<NodeId> {
    const std::size_t size = end - begin;
    const std::uint32_t n_sums = is_root ? 1 : spec.sum_fanout;
    if (size == 1) {
      std::vector<NodeId> leaves;
      for (std::uint32_t cat = 0; cat < spec.cardinality; ++cat)
        leaves.push_back(emit(Node::indicator(vars[begin], cat)));
      std::vector<NodeId> sums;
      for (std::uint32_t s = 0; s < n_sums; ++s) sums.push_back(emit(Node::sum(leaves)));
      return sums;
    }

    std::size_t split;
    if (depth <= 1) {
      split = begin + 1;  // chain off one variable at a time
    } else {
      std::uniform_int_distribution<std::size_t> pick(1, size - 1);
      split = begin + pick(rng);
    }
    const std::vector<NodeId> left = self(self, begin, split, depth > 1 ? depth - 1 : 1, false);
    const std::vector<NodeId> right = self(self, split, end, depth > 1 ? depth - 1 : 1, false);

    // Round-robin pairing keeps every child block's mixture state parented.
    const std::size_t n_products = std::max(left.size(), right.size());
    std::vector<NodeId> products;
    for (std::size_t j = 0; j < n_products; ++j)
      products.push_back(
          emit(Node::product({left[j % left.size()], right[j % right.size()]})));

    std::vector<NodeId> sums;
    for (std::uint32_t s = 0; s < n_sums; ++s) {
      std::vector<NodeId> children;
      for (std::size_t j = 0; j < products.size(); ++j)
        if (j % n_sums == s) children.push_back(products[j]);
      // Each sum may pick up one extra product, so blocks are not all chains.
      std::uniform_int_distribution<std::size_t> pick(0, products.size() - 1);
      const NodeId extra = products[pick(rng)];
      if (std::find(children.begin(), children.end(), extra) == children.end())
        children.push_back(extra);
      std::sort(children.begin(), children.end());
      sums.push_back(emit(Node::sum(std::move(children))));
    }
    return sums;
  };

  build(build, 0, spec.num_vars, spec.depth, true);
  Circuit circuit(std::move(nodes),
                  std::vector<VarDomain>(spec.num_vars, VarDomain::categorical(spec.cardinality)));
  ParamVector params = random_params(circuit, rng());
  return {std::move(circuit), std::move(params)};
}

// ---------------------------------------------------------------------------
// Chow-Liu tree builder

/// Pairwise mutual information from empirical counts with +1 smoothing on
/// the joint table. Symmetric, zero diagonal.
inline std::vector<std::vector<double>> mutual_information(const Dataset& data) {
  const std::size_t cols = data.cols();
  for (const VarDomain& d : data.domains())
    if (d.continuous())
      throw std::invalid_argument("mutual information needs categorical columns");
  std::vector<std::vector<double>> mi(cols, std::vector<double>(cols, 0.0));
  for (std::size_t a = 0; a < cols; ++a) {
    for (std::size_t b = a + 1; b < cols; ++b) {
      const std::size_t ca = data.domains()[a].cardinality;
      const std::size_t cb = data.domains()[b].cardinality;
      std::vector<double> joint(ca * cb, 1.0);  // +1 smoothing
      for (std::size_t r = 0; r < data.rows(); ++r)
        joint[static_cast<std::size_t>(data.at(r, a)) * cb +
              static_cast<std::size_t>(data.at(r, b))] += 1.0;
      const double total = static_cast<double>(data.rows()) + static_cast<double>(ca * cb);
      std::vector<double> pa(ca, 0.0), pb(cb, 0.0);
      for (std::size_t i = 0; i < ca; ++i)
        for (std::size_t j = 0; j < cb; ++j) {
          joint[i * cb + j] /= total;
          pa[i] += joint[i * cb + j];
          pb[j] += joint[i * cb + j];
        }
      double m = 0.0;
      for (std::size_t i = 0; i < ca; ++i)
        for (std::size_t j = 0; j < cb; ++j) {
          const double p = joint[i * cb + j];
          if (p > 0.0) m += p * std::log(p / (pa[i] * pb[j]));
        }
      mi[a][b] = mi[b][a] = std::max(0.0, m);
    }
  }
  return mi;
}

/// Maximum spanning tree over MI weights, rooted at variable 0. Ties prefer
/// adjacent variable indices first and then lower ones, so fully independent
/// columns fall back to the index-order chain. Returns parent ids, -1 root.
inline std::vector<int> spanning_tree(const std::vector<std::vector<double>>& mi) {
  const std::size_t n = mi.size();
  struct Edge {
    double w;
    std::size_t a, b;
  };
  std::vector<Edge> edges;
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = a + 1; b < n; ++b) edges.push_back({mi[a][b], a, b});
  std::stable_sort(edges.begin(), edges.end(), [](const Edge& x, const Edge& y) {
    if (x.w != y.w) return x.w > y.w;
    if (x.b - x.a != y.b - y.a) return x.b - x.a < y.b - y.a;
    return x.a < y.a;
  });
  std::vector<std::size_t> rep(n);
  std::iota(rep.begin(), rep.end(), 0);
  auto find = [&](std::size_t x) {
    while (rep[x] != x) x = rep[x] = rep[rep[x]];
    return x;
  };
  std::vector<std::vector<std::size_t>> adj(n);
  std::size_t used = 0;
  for (const Edge& e : edges) {
    if (used + 1 == n) break;
    const std::size_t ra = find(e.a), rb = find(e.b);
    if (ra == rb) continue;
    rep[ra] = rb;
    adj[e.a].push_back(e.b);
    adj[e.b].push_back(e.a);
    ++used;
  }
  std::vector<int> parent(n, -2);
  std::vector<std::size_t> stack{0};
  parent[0] = -1;
  while (!stack.empty()) {
    const std::size_t v = stack.back();
    stack.pop_back();
    for (std::size_t u : adj[v])
      if (parent[u] == -2) {
        parent[u] = static_cast<int>(v);
        stack.push_back(u);
      }
  }
  return parent;
}

/// Latent-tree circuit over the dataset's maximum-MI spanning tree. Each tree
/// vertex v becomes `hidden_size` joint states: state j is a product of a
/// categorical leaf mixture over x_v and the children subtrees' state-j
/// mixtures; each vertex then exposes `hidden_size` mixtures over its own
/// states (one per parent state), collapsing to a single root mixture at
/// variable 0.
inline BuiltCircuit build_clt(const Dataset& data, std::uint32_t hidden_size,
                              std::uint64_t seed) {
  if (data.cols() < 2) throw std::invalid_argument("latent tree needs at least two variables");
  if (hidden_size < 1) throw std::invalid_argument("hidden_size must be >= 1");
  for (const VarDomain& d : data.domains())
    if (d.continuous()) throw std::invalid_argument("latent tree needs categorical columns");

  const std::vector<int> parent = spanning_tree(mutual_information(data));
  const std::size_t n_vars = data.cols();
  std::vector<std::vector<std::size_t>> tree_children(n_vars);
  for (std::size_t v = 1; v < n_vars; ++v)
    tree_children[parent[v]].push_back(v);

  std::vector<Node> nodes;
  auto emit = [&](Node n) {
    nodes.push_back(std::move(n));
    return static_cast<NodeId>(nodes.size() - 1);
  };

  // state_mixtures[v][k]: mixture over v's joint states for parent state k.
  auto compile = [&](auto&& self, std::size_t v) -> std::vector<NodeId> {
    std::vector<std::vector<NodeId>> child_mixtures;
    for (std::size_t u : tree_children[v]) child_mixtures.push_back(self(self, u));

    std::vector<NodeId> leaves;
    for (std::uint32_t cat = 0; cat < data.domains()[v].cardinality; ++cat)
      leaves.push_back(emit(Node::indicator(static_cast<VarId>(v), cat)));

    std::vector<NodeId> states;
    for (std::uint32_t j = 0; j < hidden_size; ++j) {
      const NodeId leaf_mix = emit(Node::sum(leaves));
      std::vector<NodeId> parts{leaf_mix};
      for (const auto& mix : child_mixtures) parts.push_back(mix[j]);
      states.push_back(emit(Node::product(std::move(parts))));
    }

    const bool is_root = parent[v] < 0;
    const std::uint32_t n_mixtures = is_root ? 1 : hidden_size;
    std::vector<NodeId> mixtures;
    for (std::uint32_t k = 0; k < n_mixtures; ++k) mixtures.push_back(emit(Node::sum(states)));
    return mixtures;
  };
  compile(compile, 0);

  Circuit circuit(std::move(nodes), data.domains());
  ParamVector params = random_params(circuit, seed);
  return {std::move(circuit), std::move(params)};
}

}  // namespace pcem
