#pragma once

// Probabilistic circuit structure: an immutable DAG of input, product, and
// sum nodes stored in topological order (children precede parents, the root
// is the last node). Sum-edge parameters live outside the structure in a
// ParamVector so training never copies the graph.

#include <bit>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "pcem/error.hpp"
#include "pcem/util.hpp"

namespace pcem {

using NodeId = std::uint32_t;
using EdgeId = std::uint32_t;
using VarId = std::uint32_t;

struct Indicator {
  std::uint32_t category = 0;
};

struct FixedGaussian {
  double mean = 0.0;
  double stddev = 1.0;
};

using InputDist = std::variant<Indicator, FixedGaussian>;

enum class NodeKind : std::uint8_t { Input, Product, Sum };

struct Node {
  NodeKind kind = NodeKind::Input;
  VarId var = 0;        // input nodes only
  InputDist dist{};     // input nodes only
  std::vector<NodeId> children;
  EdgeId first_edge = 0;  // sum nodes: edges are [first_edge, first_edge + children.size())

  static Node indicator(VarId var, std::uint32_t category) {
    Node n;
    n.kind = NodeKind::Input;
    n.var = var;
    n.dist = Indicator{category};
    return n;
  }
  static Node gaussian(VarId var, double mean, double stddev) {
    Node n;
    n.kind = NodeKind::Input;
    n.var = var;
    n.dist = FixedGaussian{mean, stddev};
    return n;
  }
  static Node product(std::vector<NodeId> children) {
    Node n;
    n.kind = NodeKind::Product;
    n.children = std::move(children);
    return n;
  }
  static Node sum(std::vector<NodeId> children) {
    Node n;
    n.kind = NodeKind::Sum;
    n.children = std::move(children);
    return n;
  }
};

/// Variable domain. cardinality == 0 marks a continuous variable.
struct VarDomain {
  std::uint32_t cardinality = 0;

  bool continuous() const { return cardinality == 0; }

  static VarDomain categorical(std::uint32_t card) {
    if (card == 0) throw std::invalid_argument("categorical cardinality must be >= 1");
    return VarDomain{card};
  }
  static VarDomain cont() { return VarDomain{0}; }

  friend bool operator==(const VarDomain&, const VarDomain&) = default;
};

/// Set of variable ids, fixed universe size.
class VarSet {
 public:
  VarSet() = default;
  explicit VarSet(std::size_t universe) : words_((universe + 63) / 64, 0), universe_(universe) {}

  void set(VarId v) { words_[v >> 6] |= std::uint64_t{1} << (v & 63); }
  bool test(VarId v) const { return (words_[v >> 6] >> (v & 63)) & 1; }

  VarSet& operator|=(const VarSet& o) {
    for (std::size_t i = 0; i < words_.size(); ++i) words_[i] |= o.words_[i];
    return *this;
  }
  bool intersects(const VarSet& o) const {
    for (std::size_t i = 0; i < words_.size(); ++i)
      if (words_[i] & o.words_[i]) return true;
    return false;
  }
  std::size_t count() const {
    std::size_t c = 0;
    for (auto w : words_) c += static_cast<std::size_t>(std::popcount(w));
    return c;
  }
  std::vector<VarId> to_vector() const {
    std::vector<VarId> out;
    for (VarId v = 0; v < universe_; ++v)
      if (test(v)) out.push_back(v);
    return out;
  }

  friend bool operator==(const VarSet&, const VarSet&) = default;

 private:
  std::vector<std::uint64_t> words_;
  std::size_t universe_ = 0;
};

class Circuit {
 public:
  /// Takes ownership of the node list; throws std::invalid_argument on
  /// structural malformation (non-topological child index, bad variable
  /// reference, empty child list on an inner node, non-positive stddev).
  Circuit(std::vector<Node> nodes, std::vector<VarDomain> vars)
      : nodes_(std::move(nodes)), vars_(std::move(vars)) {
    if (nodes_.empty()) throw std::invalid_argument("circuit has no nodes");
    EdgeId next_edge = 0;
    for (NodeId i = 0; i < nodes_.size(); ++i) {
      Node& n = nodes_[i];
      if (n.kind == NodeKind::Input) {
        if (!n.children.empty())
          throw std::invalid_argument("input node " + std::to_string(i) + " has children");
        if (n.var >= vars_.size())
          throw std::invalid_argument("input node " + std::to_string(i) +
                                      " references unknown variable " + std::to_string(n.var));
        const VarDomain& d = vars_[n.var];
        if (const auto* ind = std::get_if<Indicator>(&n.dist)) {
          if (d.continuous())
            throw std::invalid_argument("indicator node " + std::to_string(i) +
                                        " on continuous variable");
          if (ind->category >= d.cardinality)
            throw std::invalid_argument("indicator node " + std::to_string(i) + " category " +
                                        std::to_string(ind->category) + " >= cardinality " +
                                        std::to_string(d.cardinality));
        } else {
          const auto& g = std::get<FixedGaussian>(n.dist);
          if (!d.continuous())
            throw std::invalid_argument("gaussian node " + std::to_string(i) +
                                        " on categorical variable");
          if (!(g.stddev > 0.0) || !std::isfinite(g.stddev) || !std::isfinite(g.mean))
            throw std::invalid_argument("gaussian node " + std::to_string(i) +
                                        " needs finite mean and stddev > 0");
        }
      } else {
        if (n.children.empty())
          throw std::invalid_argument("node " + std::to_string(i) + " has no children");
        for (NodeId c : n.children)
          if (c >= i)
            throw std::invalid_argument("node " + std::to_string(i) + " child " +
                                        std::to_string(c) + " breaks topological order");
        if (n.kind == NodeKind::Sum) {
          n.first_edge = next_edge;
          next_edge += static_cast<EdgeId>(n.children.size());
        }
      }
    }
    num_edges_ = next_edge;
  }

  const std::vector<Node>& nodes() const { return nodes_; }
  const Node& node(NodeId i) const { return nodes_[i]; }
  std::size_t num_nodes() const { return nodes_.size(); }
  std::size_t num_vars() const { return vars_.size(); }
  std::size_t num_edges() const { return num_edges_; }
  NodeId root() const { return static_cast<NodeId>(nodes_.size() - 1); }
  const VarDomain& var(VarId v) const { return vars_[v]; }
  const std::vector<VarDomain>& vars() const { return vars_; }

 private:
  std::vector<Node> nodes_;
  std::vector<VarDomain> vars_;
  EdgeId num_edges_ = 0;
};

/// Log-parameters, one per sum edge. `normalized` asserts that every sum
/// node's weights add to 1 within 1e-12; routines that only make sense on a
/// normalized circuit check this flag rather than re-deriving it.
struct ParamVector {
  std::vector<double> phi;
  bool normalized = false;
};

inline bool params_normalized(const Circuit& c, std::span<const double> phi, double tol = 1e-12) {
  for (const Node& n : c.nodes()) {
    if (n.kind != NodeKind::Sum) continue;
    double s = 0.0;
    for (std::size_t k = 0; k < n.children.size(); ++k) s += std::exp(phi[n.first_edge + k]);
    if (!(std::abs(s - 1.0) <= tol)) return false;
  }
  return true;
}

/// Builds a ParamVector, rejecting NaN/+inf entries (-inf encodes an exactly
/// zero weight, which exact EM can produce). The normalized flag is derived.
inline ParamVector make_params(const Circuit& c, std::vector<double> phi) {
  if (phi.size() != c.num_edges())
    throw std::invalid_argument("parameter vector has " + std::to_string(phi.size()) +
                                " entries, circuit has " + std::to_string(c.num_edges()) +
                                " sum edges");
  for (double v : phi)
    if (std::isnan(v) || v == std::numeric_limits<double>::infinity())
      throw std::invalid_argument("parameter vector contains NaN or +inf");
  ParamVector p{std::move(phi), false};
  p.normalized = params_normalized(c, p.phi);
  return p;
}

// ---------------------------------------------------------------------------
// Structural validation

enum class Rule : std::uint8_t { Smoothness, Decomposability, Alternation, SingleRoot, Dangling };

inline const char* rule_name(Rule r) {
  switch (r) {
    case Rule::Smoothness: return "smoothness";
    case Rule::Decomposability: return "decomposability";
    case Rule::Alternation: return "alternation";
    case Rule::SingleRoot: return "single-root";
    case Rule::Dangling: return "dangling";
  }
  return "?";
}

struct Violation {
  NodeId node;
  Rule rule;
  std::string detail;
};

struct ValidationReport {
  bool ok = true;
  std::vector<Violation> violations;
};

/// Scope of every node: the variables under its descendant inputs.
/// One bottom-up pass; order-independent in the sibling lists.
inline std::vector<VarSet> scopes(const Circuit& c) {
  std::vector<VarSet> out(c.num_nodes(), VarSet(c.num_vars()));
  for (NodeId i = 0; i < c.num_nodes(); ++i) {
    const Node& n = c.node(i);
    if (n.kind == NodeKind::Input) {
      out[i].set(n.var);
    } else {
      for (NodeId ch : n.children) out[i] |= out[ch];
    }
  }
  return out;
}

/// Checks smoothness, decomposability, alternation, and root uniqueness.
/// Malformed indices never reach this point; the Circuit constructor rejects
/// them outright.
inline ValidationReport validate(const Circuit& c) {
  ValidationReport report;
  auto add = [&](NodeId node, Rule rule, std::string detail) {
    report.violations.push_back({node, rule, std::move(detail)});
  };

  std::vector<std::uint32_t> parents(c.num_nodes(), 0);
  for (const Node& n : c.nodes())
    for (NodeId ch : n.children) ++parents[ch];

  std::vector<NodeId> roots;
  for (NodeId i = 0; i < c.num_nodes(); ++i)
    if (parents[i] == 0) roots.push_back(i);
  // The last node can never be a child, so roots is never empty.
  if (roots.size() > 1) {
    add(c.root(), Rule::SingleRoot,
        std::to_string(roots.size()) + " parentless nodes; the root must be unique");
    for (NodeId r : roots)
      if (r != c.root()) add(r, Rule::Dangling, "node is unreachable from the root");
  }

  const std::vector<VarSet> sc = scopes(c);
  for (NodeId i = 0; i < c.num_nodes(); ++i) {
    const Node& n = c.node(i);
    if (n.kind == NodeKind::Sum) {
      for (NodeId ch : n.children)
        if (c.node(ch).kind == NodeKind::Sum)
          add(i, Rule::Alternation, "sum node has sum child " + std::to_string(ch));
      for (NodeId ch : n.children) {
        if (!(sc[ch] == sc[n.children.front()])) {
          add(i, Rule::Smoothness, "children have unequal scopes");
          break;
        }
      }
    } else if (n.kind == NodeKind::Product) {
      for (NodeId ch : n.children)
        if (c.node(ch).kind == NodeKind::Product)
          add(i, Rule::Alternation, "product node has product child " + std::to_string(ch));
      VarSet seen(c.num_vars());
      for (NodeId ch : n.children) {
        if (seen.intersects(sc[ch])) {
          add(i, Rule::Decomposability, "children have overlapping scopes");
          break;
        }
        seen |= sc[ch];
      }
    }
  }

  report.ok = report.violations.empty();
  return report;
}

}  // namespace pcem
