#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "helpers.hpp"
#include "pcem/builders.hpp"
#include "pcem/circuit.hpp"
#include "pcem/serialize.hpp"

using namespace pcem;

namespace {

bool has_violation(const ValidationReport& r, Rule rule) {
  for (const auto& v : r.violations)
    if (v.rule == rule) return true;
  return false;
}

}  // namespace

TEST_CASE("construction rejects malformed structure") {
  SECTION("child index out of topological order") {
    std::vector<Node> nodes;
    nodes.push_back(Node::indicator(0, 0));
    nodes.push_back(Node::sum({0, 2}));  // forward reference
    nodes.push_back(Node::indicator(0, 1));
    REQUIRE_THROWS_AS(Circuit(std::move(nodes), {VarDomain::categorical(2)}),
                      std::invalid_argument);
  }
  SECTION("inner node without children") {
    std::vector<Node> nodes;
    nodes.push_back(Node::indicator(0, 0));
    nodes.push_back(Node::product({}));
    REQUIRE_THROWS_AS(Circuit(std::move(nodes), {VarDomain::categorical(2)}),
                      std::invalid_argument);
  }
  SECTION("indicator category beyond cardinality") {
    std::vector<Node> nodes;
    nodes.push_back(Node::indicator(0, 2));
    REQUIRE_THROWS_AS(Circuit(std::move(nodes), {VarDomain::categorical(2)}),
                      std::invalid_argument);
  }
  SECTION("gaussian with non-positive stddev") {
    std::vector<Node> nodes;
    nodes.push_back(Node::gaussian(0, 0.0, 0.0));
    REQUIRE_THROWS_AS(Circuit(std::move(nodes), {VarDomain::cont()}), std::invalid_argument);
  }
}

TEST_CASE("validate accepts the hand fixtures") {
  REQUIRE(validate(fixture_c1().circuit).ok);
  REQUIRE(validate(fixture_c2().circuit).ok);
  REQUIRE(validate(fixture_g1().circuit).ok);
}

TEST_CASE("validate flags smoothness violations") {
  // Sum over children with scopes {X1} and {X2}.
  std::vector<Node> nodes;
  nodes.push_back(Node::indicator(0, 0));
  nodes.push_back(Node::indicator(1, 0));
  nodes.push_back(Node::sum({0, 1}));
  Circuit c(std::move(nodes), {VarDomain::categorical(2), VarDomain::categorical(2)});
  const auto report = validate(c);
  REQUIRE_FALSE(report.ok);
  REQUIRE(has_violation(report, Rule::Smoothness));
  REQUIRE(report.violations.front().node == 2);
}

TEST_CASE("validate flags decomposability violations") {
  // Product with two children over the same variable.
  std::vector<Node> nodes;
  nodes.push_back(Node::indicator(0, 0));
  nodes.push_back(Node::indicator(0, 1));
  nodes.push_back(Node::product({0, 1}));
  Circuit c(std::move(nodes), {VarDomain::categorical(2)});
  const auto report = validate(c);
  REQUIRE_FALSE(report.ok);
  REQUIRE(has_violation(report, Rule::Decomposability));
}

TEST_CASE("validate flags alternation and dangling nodes") {
  // sum -> sum chain plus an unparented extra node.
  std::vector<Node> nodes;
  nodes.push_back(Node::indicator(0, 0));
  nodes.push_back(Node::indicator(0, 1));
  nodes.push_back(Node::sum({0, 1}));
  nodes.push_back(Node::sum({0, 1}));  // dangling
  nodes.push_back(Node::sum({2}));
  Circuit c(std::move(nodes), {VarDomain::categorical(2)});
  const auto report = validate(c);
  REQUIRE_FALSE(report.ok);
  REQUIRE(has_violation(report, Rule::Alternation));
  REQUIRE(has_violation(report, Rule::Dangling));
  REQUIRE(has_violation(report, Rule::SingleRoot));
}

TEST_CASE("scopes of the fixtures") {
  const auto c2 = fixture_c2();
  const auto sc = scopes(c2.circuit);
  REQUIRE(sc[c2.circuit.root()].to_vector() == std::vector<VarId>{0, 1});
  REQUIRE(sc[4].to_vector() == std::vector<VarId>{0});  // A1
  REQUIRE(sc[6].to_vector() == std::vector<VarId>{1});  // B1

  const auto c1 = fixture_c1();
  REQUIRE(scopes(c1.circuit)[c1.circuit.root()].to_vector() == std::vector<VarId>{0});
}

TEST_CASE("scopes are invariant to sibling order") {
  auto permuted = [] {
    std::vector<Node> nodes;
    nodes.push_back(Node::indicator(0, 0));
    nodes.push_back(Node::indicator(0, 1));
    nodes.push_back(Node::indicator(1, 0));
    nodes.push_back(Node::indicator(1, 1));
    nodes.push_back(Node::sum({1, 0}));      // A1 reversed
    nodes.push_back(Node::sum({0, 1}));      // A2
    nodes.push_back(Node::sum({3, 2}));      // B1 reversed
    nodes.push_back(Node::sum({2, 3}));      // B2
    nodes.push_back(Node::product({6, 4}));  // P1 reversed
    nodes.push_back(Node::product({5, 7}));  // P2
    nodes.push_back(Node::sum({9, 8}));      // root reversed
    return Circuit(std::move(nodes), {VarDomain::categorical(2), VarDomain::categorical(2)});
  }();
  const auto base = scopes(fixture_c2().circuit);
  const auto perm = scopes(permuted);
  for (std::size_t i = 0; i < base.size(); ++i) REQUIRE(base[i] == perm[i]);
}

TEST_CASE("random legal circuits validate cleanly") {
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    const auto built = test::small_random_circuit(seed);
    const auto report = validate(built.circuit);
    CAPTURE(seed);
    REQUIRE(report.ok);
    REQUIRE(built.params.normalized);
  }
}

TEST_CASE("serialize round-trips structure and parameters bit-exactly") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto built = test::small_random_circuit(seed);
    const std::string text = serialize(built.circuit, built.params);
    const auto [circuit, params] = deserialize(text);
    REQUIRE(circuit.num_nodes() == built.circuit.num_nodes());
    REQUIRE(circuit.num_edges() == built.circuit.num_edges());
    REQUIRE(params.phi == built.params.phi);  // bit-exact
    REQUIRE(params.normalized == built.params.normalized);
    REQUIRE(serialize(circuit, params) == text);
  }
}

TEST_CASE("serialize round-trips gaussian leaves and continuous domains") {
  const auto g1 = fixture_g1();
  const auto [c, p] = deserialize(serialize(g1.circuit, g1.params));
  REQUIRE(c.var(0).continuous());
  const auto& g = std::get<FixedGaussian>(c.node(0).dist);
  REQUIRE(g.mean == -1.5);
  REQUIRE(g.stddev == 0.75);
  REQUIRE(p.phi == g1.params.phi);
}

TEST_CASE("serialize handles awkward parameter values") {
  auto c1 = fixture_c1();
  ParamVector p = make_params(c1.circuit, {0.0, -std::numeric_limits<double>::infinity()});
  const auto [c, q] = deserialize(serialize(c1.circuit, p));
  REQUIRE(q.phi[0] == 0.0);
  REQUIRE(q.phi[1] == -std::numeric_limits<double>::infinity());
}

TEST_CASE("deserialize computes ln(0.5) weights from decimal text") {
  const std::string text =
      "pc v1\n"
      "var 0 2\n"
      "input 0 0 ind 0\n"
      "input 1 0 ind 1\n"
      "# a comment line\n"
      "sum 2 0:-0.6931471805599453 1:-0.6931471805599453\n";
  const auto [c, p] = deserialize(text);
  REQUIRE(c.node(2).kind == NodeKind::Sum);
  REQUIRE(std::exp(p.phi[0]) == Catch::Approx(0.5).epsilon(1e-15));
  REQUIRE(std::exp(p.phi[1]) == Catch::Approx(0.5).epsilon(1e-15));
  REQUIRE(p.normalized);
}

TEST_CASE("parse errors carry line numbers") {
  const std::string bad =
      "pc v1\n"
      "var 0 2\n"
      "input 0 0 ind 0\n"
      "prod 4\n";  // product with no children
  try {
    deserialize(bad);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    REQUIRE(e.line() == 4);
  }

  REQUIRE_THROWS_AS(deserialize("not a circuit\n"), ParseError);
  REQUIRE_THROWS_AS(deserialize("pc v1\nsum 0 1:0.0\n"), ParseError);  // forward child
}

TEST_CASE("make_params rejects size and value mismatches") {
  auto c1 = fixture_c1();
  REQUIRE_THROWS_AS(make_params(c1.circuit, {0.0}), std::invalid_argument);
  REQUIRE_THROWS_AS(make_params(c1.circuit, {0.0, std::nan("")}), std::invalid_argument);
  // Unnormalized weights are fine, the flag just stays off.
  const auto p = make_params(c1.circuit, {std::log(1.0), std::log(3.0)});
  REQUIRE_FALSE(p.normalized);
}
