#pragma once

// Text format for circuits + parameters, one item per line:
//
//   pc v1
//   var <var_id> <cardinality|cont>
//   input <node_id> <var_id> ind <category>
//   input <node_id> <var_id> gauss <mean> <std>
//   prod <node_id> <child_id> <child_id> ...
//   sum <node_id> <child_id>:<phi> <child_id>:<phi> ...
//
// `#` starts a comment. Node ids are dense and topological; the root is the
// highest id. phi values use shortest round-trip decimal encoding, so
// deserialize(serialize(x)) is bit-exact on parameters.

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pcem/circuit.hpp"
#include "pcem/error.hpp"
#include "pcem/util.hpp"

namespace pcem {

inline std::string serialize(const Circuit& c, const ParamVector& params) {
  if (params.phi.size() != c.num_edges())
    throw std::invalid_argument("parameter vector does not match circuit");
  std::string out = "pc v1\n";
  for (VarId v = 0; v < c.num_vars(); ++v) {
    out += "var " + std::to_string(v) + ' ';
    out += c.var(v).continuous() ? "cont" : std::to_string(c.var(v).cardinality);
    out += '\n';
  }
  for (NodeId i = 0; i < c.num_nodes(); ++i) {
    const Node& n = c.node(i);
    switch (n.kind) {
      case NodeKind::Input:
        out += "input " + std::to_string(i) + ' ' + std::to_string(n.var);
        if (const auto* ind = std::get_if<Indicator>(&n.dist)) {
          out += " ind " + std::to_string(ind->category);
        } else {
          const auto& g = std::get<FixedGaussian>(n.dist);
          out += " gauss " + detail::format_double(g.mean) + ' ' + detail::format_double(g.stddev);
        }
        break;
      case NodeKind::Product:
        out += "prod " + std::to_string(i);
        for (NodeId ch : n.children) out += ' ' + std::to_string(ch);
        break;
      case NodeKind::Sum:
        out += "sum " + std::to_string(i);
        for (std::size_t k = 0; k < n.children.size(); ++k)
          out += ' ' + std::to_string(n.children[k]) + ':' +
                 detail::format_double(params.phi[n.first_edge + k]);
        break;
    }
    out += '\n';
  }
  return out;
}

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t' && s[j] != '\r') ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

inline std::uint64_t parse_id(std::string_view tok, std::size_t line, const char* what) {
  std::uint64_t v = 0;
  if (!parse_uint(tok, v)) throw ParseError(line, std::string("bad ") + what + " '" + std::string(tok) + "'");
  return v;
}

}  // namespace detail

inline std::pair<Circuit, ParamVector> deserialize(std::string_view text) {
  struct Pending {
    Node node;
    std::vector<double> phi;  // sum nodes, parallel to children
    bool present = false;
  };
  std::vector<Pending> pending;
  std::vector<std::optional<VarDomain>> vars;
  bool saw_header = false;

  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? text.size() - pos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;

    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    auto toks = detail::split_ws(line);
    if (toks.empty()) continue;

    if (!saw_header) {
      if (toks.size() != 2 || toks[0] != "pc" || toks[1] != "v1")
        throw ParseError(line_no, "expected header 'pc v1'");
      saw_header = true;
      continue;
    }

    auto ensure_node_slot = [&](std::uint64_t id) -> Pending& {
      if (id >= (std::uint64_t{1} << 31)) throw ParseError(line_no, "node id too large");
      if (pending.size() <= id) pending.resize(id + 1);
      Pending& p = pending[id];
      if (p.present) throw ParseError(line_no, "duplicate node id " + std::to_string(id));
      p.present = true;
      return p;
    };
    auto parse_child = [&](std::string_view tok, std::uint64_t self) -> NodeId {
      std::uint64_t ch = detail::parse_id(tok, line_no, "child id");
      if (ch >= self)
        throw ParseError(line_no, "child " + std::to_string(ch) + " of node " +
                                      std::to_string(self) + " breaks topological order");
      return static_cast<NodeId>(ch);
    };

    if (toks[0] == "var") {
      if (toks.size() != 3) throw ParseError(line_no, "var line needs 'var <id> <cardinality|cont>'");
      std::uint64_t id = detail::parse_id(toks[1], line_no, "variable id");
      if (vars.size() <= id) vars.resize(id + 1);
      if (vars[id]) throw ParseError(line_no, "duplicate variable id " + std::to_string(id));
      if (toks[2] == "cont") {
        vars[id] = VarDomain::cont();
      } else {
        std::uint64_t card = detail::parse_id(toks[2], line_no, "cardinality");
        if (card == 0) throw ParseError(line_no, "cardinality must be >= 1");
        vars[id] = VarDomain::categorical(static_cast<std::uint32_t>(card));
      }
    } else if (toks[0] == "input") {
      if (toks.size() < 4) throw ParseError(line_no, "truncated input line");
      std::uint64_t id = detail::parse_id(toks[1], line_no, "node id");
      std::uint64_t var = detail::parse_id(toks[2], line_no, "variable id");
      Pending& p = ensure_node_slot(id);
      if (toks[3] == "ind") {
        if (toks.size() != 5) throw ParseError(line_no, "indicator line needs a category");
        std::uint64_t cat = detail::parse_id(toks[4], line_no, "category");
        p.node = Node::indicator(static_cast<VarId>(var), static_cast<std::uint32_t>(cat));
      } else if (toks[3] == "gauss") {
        if (toks.size() != 6) throw ParseError(line_no, "gauss line needs mean and std");
        double mean = 0, sd = 0;
        if (!detail::parse_double(toks[4], mean) || !detail::parse_double(toks[5], sd))
          throw ParseError(line_no, "bad gaussian parameters");
        p.node = Node::gaussian(static_cast<VarId>(var), mean, sd);
      } else {
        throw ParseError(line_no, "unknown input distribution '" + std::string(toks[3]) + "'");
      }
    } else if (toks[0] == "prod") {
      if (toks.size() < 3) throw ParseError(line_no, "product node needs at least one child");
      std::uint64_t id = detail::parse_id(toks[1], line_no, "node id");
      std::vector<NodeId> children;
      for (std::size_t k = 2; k < toks.size(); ++k) children.push_back(parse_child(toks[k], id));
      ensure_node_slot(id).node = Node::product(std::move(children));
    } else if (toks[0] == "sum") {
      if (toks.size() < 3) throw ParseError(line_no, "sum node needs at least one child");
      std::uint64_t id = detail::parse_id(toks[1], line_no, "node id");
      std::vector<NodeId> children;
      std::vector<double> phi;
      for (std::size_t k = 2; k < toks.size(); ++k) {
        std::string_view tok = toks[k];
        auto colon = tok.find(':');
        if (colon == std::string_view::npos)
          throw ParseError(line_no, "sum child needs '<child>:<phi>', got '" + std::string(tok) + "'");
        children.push_back(parse_child(tok.substr(0, colon), id));
        double w = 0;
        if (!detail::parse_double(tok.substr(colon + 1), w))
          throw ParseError(line_no, "bad phi value '" + std::string(tok.substr(colon + 1)) + "'");
        phi.push_back(w);
      }
      Pending& p = ensure_node_slot(id);
      p.node = Node::sum(std::move(children));
      p.phi = std::move(phi);
    } else {
      throw ParseError(line_no, "unknown directive '" + std::string(toks[0]) + "'");
    }
  }

  if (!saw_header) throw ParseError(0, "empty circuit file");
  if (pending.empty()) throw ParseError(0, "circuit file defines no nodes");

  std::vector<VarDomain> var_list;
  var_list.reserve(vars.size());
  for (std::size_t v = 0; v < vars.size(); ++v) {
    if (!vars[v]) throw ParseError(0, "variable " + std::to_string(v) + " is never declared");
    var_list.push_back(*vars[v]);
  }

  std::vector<Node> nodes;
  std::vector<double> phi;
  nodes.reserve(pending.size());
  for (std::size_t i = 0; i < pending.size(); ++i) {
    if (!pending[i].present) throw ParseError(0, "node " + std::to_string(i) + " is never declared");
    for (double w : pending[i].phi) phi.push_back(w);
    nodes.push_back(std::move(pending[i].node));
  }

  Circuit circuit(std::move(nodes), std::move(var_list));
  ParamVector params = make_params(circuit, std::move(phi));
  return {std::move(circuit), std::move(params)};
}

inline void save_circuit(const std::filesystem::path& path, const Circuit& c,
                         const ParamVector& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out << serialize(c, params);
  if (!out) throw std::runtime_error("failed writing '" + path.string() + "'");
}

inline std::pair<Circuit, ParamVector> load_circuit(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return deserialize(ss.str());
}

}  // namespace pcem
