#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "helpers.hpp"
#include "pcem/builders.hpp"
#include "pcem/flows.hpp"

using namespace pcem;

namespace {

Dataset rows_of(const Circuit& c, std::initializer_list<std::initializer_list<double>> rows) {
  Dataset d(c.vars());
  for (const auto& r : rows) d.append_row(std::vector<double>(r));
  return d;
}

}  // namespace

TEST_CASE("td_probs on the fixtures") {
  const auto c1 = fixture_c1();
  const TdVector td1 = td_probs(c1.circuit, c1.params);
  REQUIRE(td1.node_td[c1.circuit.root()] == 1.0);
  REQUIRE(td1.edge_td[0] == Catch::Approx(0.5).margin(1e-15));
  REQUIRE(td1.edge_td[1] == Catch::Approx(0.5).margin(1e-15));

  const auto c2 = fixture_c2();
  const TdVector td2 = td_probs(c2.circuit, c2.params);
  REQUIRE(td2.node_td[4] == Catch::Approx(0.5).margin(1e-15));   // A1
  REQUIRE(td2.edge_td[0] == Catch::Approx(0.4).margin(1e-15));   // A1 -> [X1=0]
  REQUIRE(td2.node_td[8] == Catch::Approx(0.5).margin(1e-15));   // P1
}

TEST_CASE("td_probs scales linearly in a node's weights") {
  const auto c2 = fixture_c2();
  ParamVector scaled = c2.params;
  const double k = std::log(3.0);
  scaled.phi[0] += k;  // scale all of A1's weights by 3
  scaled.phi[1] += k;
  scaled.normalized = false;
  const TdVector base = td_probs(c2.circuit, c2.params);
  const TdVector after = td_probs(c2.circuit, scaled);
  REQUIRE(after.edge_td[0] == Catch::Approx(3.0 * base.edge_td[0]).epsilon(1e-12));
  REQUIRE(after.edge_td[1] == Catch::Approx(3.0 * base.edge_td[1]).epsilon(1e-12));
}

TEST_CASE("td_probs edge sums recover node values on normalized circuits") {
  for (std::uint64_t seed = 0; seed < 15; ++seed) {
    const auto built = test::small_random_circuit(seed);
    const TdVector td = td_probs(built.circuit, built.params);
    for (NodeId i = 0; i < built.circuit.num_nodes(); ++i) {
      const Node& n = built.circuit.node(i);
      if (n.kind != NodeKind::Sum) continue;
      double s = 0.0;
      for (std::size_t kk = 0; kk < n.children.size(); ++kk) s += td.edge_td[n.first_edge + kk];
      REQUIRE(s == Catch::Approx(td.node_td[i]).margin(1e-12));
    }
  }
}

TEST_CASE("backward flows on C1") {
  const auto c1 = fixture_c1();
  const Dataset single = rows_of(c1.circuit, {{0.0}});
  const FlowTable f = backward_flows(c1.circuit, c1.params, single);
  REQUIRE(f.edge_flow[0] == Catch::Approx(1.0).margin(1e-14));
  REQUIRE(f.edge_flow[1] == Catch::Approx(0.0).margin(1e-14));
  REQUIRE(f.node_flow[c1.circuit.root()] == Catch::Approx(1.0).margin(1e-14));

  const Dataset batch = rows_of(c1.circuit, {{0.0}, {0.0}, {1.0}});
  const FlowTable g = backward_flows(c1.circuit, c1.params, batch);
  REQUIRE(g.edge_flow[0] == Catch::Approx(2.0 / 3.0).margin(1e-14));
  REQUIRE(g.edge_flow[1] == Catch::Approx(1.0 / 3.0).margin(1e-14));
}

TEST_CASE("backward flows on C2 match the hand-derived chain rule") {
  const auto c2 = fixture_c2();
  const Dataset batch = rows_of(c2.circuit, {{0.0, 0.0}});
  const FlowTable f = backward_flows(c2.circuit, c2.params, batch);
  REQUIRE(f.node_flow[8] == Catch::Approx(0.28 / 0.31).epsilon(1e-12));  // P1
  REQUIRE(f.node_flow[9] == Catch::Approx(0.03 / 0.31).epsilon(1e-12));  // P2
  REQUIRE(f.edge_flow[0] == Catch::Approx(0.28 / 0.31).epsilon(1e-12));  // A1 -> [X1=0]

  // Cross-check against finite differences of the unnormalized log value:
  // flows are exactly that gradient.
  ParamVector work = c2.params;
  const double x[] = {0.0, 0.0};
  const double h = 1e-6;
  for (std::size_t e = 0; e < c2.circuit.num_edges(); ++e) {
    const double keep = work.phi[e];
    work.phi[e] = keep + h;
    const double hi = log_eval(c2.circuit, work, x)[c2.circuit.root()];
    work.phi[e] = keep - h;
    const double lo = log_eval(c2.circuit, work, x)[c2.circuit.root()];
    work.phi[e] = keep;
    REQUIRE(f.edge_flow[e] == Catch::Approx((hi - lo) / (2 * h)).margin(1e-7));
  }
}

TEST_CASE("zero-likelihood samples abort with the sample index") {
  const auto c1 = fixture_c1();
  ParamVector p = make_params(c1.circuit, {0.0, kNegInf});  // all mass on category 0
  const Dataset batch = rows_of(c1.circuit, {{0.0}, {1.0}});
  REQUIRE_THROWS_WITH(backward_flows(c1.circuit, p, batch),
                      Catch::Matchers::ContainsSubstring("batch index 1"));
}

TEST_CASE("normalized child flows") {
  const auto c1 = fixture_c1();
  const double x0[] = {0.0};
  const auto f1 = normalized_child_flows(c1.circuit, c1.params, x0);
  REQUIRE(f1[0] == Catch::Approx(1.0).margin(1e-14));
  REQUIRE(f1[1] == 0.0);

  const auto c2 = fixture_c2();
  const double x00[] = {0.0, 0.0};
  const auto f2 = normalized_child_flows(c2.circuit, c2.params, x00);
  REQUIRE(f2[0] == Catch::Approx(1.0).margin(1e-14));  // A1 -> [X1=0]
  REQUIRE(f2[1] == 0.0);
  REQUIRE(f2[8] == Catch::Approx(0.28 / 0.31).epsilon(1e-12));  // root -> P1
  REQUIRE(f2[9] == Catch::Approx(0.03 / 0.31).epsilon(1e-12));
  REQUIRE(f2[8] + f2[9] == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("activated sum nodes have child flows summing to one (property)") {
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    const auto built = test::small_random_circuit(seed);
    const ParamVector params = test::perturb_params(built.circuit, built.params, seed + 7);
    const Dataset data = test::random_dataset(built.circuit, 4, seed + 13);
    CAPTURE(seed);
    for (std::size_t r = 0; r < data.rows(); ++r) {
      const auto sample = data.row(r);
      const auto fhat = normalized_child_flows(built.circuit, params, sample);
      const auto values = log_eval(built.circuit, params, sample);
      const FlowTable per_sample = backward_flows(built.circuit, params, sample);
      for (NodeId i = 0; i < built.circuit.num_nodes(); ++i) {
        const Node& n = built.circuit.node(i);
        if (n.kind != NodeKind::Sum) continue;
        if (values[i] != kNegInf) {
          double s = 0.0;
          for (std::size_t k = 0; k < n.children.size(); ++k) s += fhat[n.first_edge + k];
          REQUIRE(s == Catch::Approx(1.0).margin(1e-12));
        }
        // Chain rule: edge flow = node flow * normalized child flow.
        for (std::size_t k = 0; k < n.children.size(); ++k) {
          const EdgeId e = n.first_edge + static_cast<EdgeId>(k);
          REQUIRE(per_sample.edge_flow[e] ==
                  Catch::Approx(per_sample.node_flow[i] * fhat[e]).margin(1e-12));
        }
      }
    }
  }
}

TEST_CASE("relative importance on C1 and G1") {
  const auto c1 = fixture_c1();
  const double x0[] = {0.0};
  const auto rel1 = relative_importance(c1.circuit, c1.params, x0);
  REQUIRE(rel1[0] == Catch::Approx(2.0).margin(1e-13));  // the matching indicator
  REQUIRE(rel1[1] == Catch::Approx(0.0).margin(1e-13));

  const auto g1 = fixture_g1();
  const double x[] = {-1.5};
  const auto rel = relative_importance(g1.circuit, g1.params, x);
  // The weighted sum of child importances at the root is exactly one.
  REQUIRE(0.5 * rel[0] + 0.5 * rel[1] == Catch::Approx(1.0).margin(1e-12));
  // The near bump eats almost the whole update, the far one nearly none.
  REQUIRE(rel[0] > 1.99);
  REQUIRE(rel[1] < 1e-3);
}

TEST_CASE("fully marginalized evidence reproduces the reach probabilities") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto built = test::small_random_circuit(seed);
    const Evidence all = Evidence::all_marginalized(built.circuit.num_vars());
    const FlowTable f = backward_flows(built.circuit, built.params, all);
    const TdVector td = td_probs(built.circuit, built.params);
    CAPTURE(seed);
    for (NodeId i = 0; i < built.circuit.num_nodes(); ++i)
      REQUIRE(f.node_flow[i] == Catch::Approx(td.node_td[i]).margin(1e-12));
    for (std::size_t e = 0; e < built.circuit.num_edges(); ++e)
      REQUIRE(f.edge_flow[e] == Catch::Approx(td.edge_td[e]).margin(1e-12));

    // Equivalently, every node the root can reach has relative importance 1.
    const auto rel = relative_importance(built.circuit, built.params, all);
    for (NodeId i = 0; i < built.circuit.num_nodes(); ++i) {
      if (td.node_td[i] > 0.0)
        REQUIRE(rel[i] == Catch::Approx(1.0).margin(1e-12));
      else
        REQUIRE(std::isnan(rel[i]));
    }
  }
}

TEST_CASE("worker counts honor the environment cap") {
  ::setenv("CIRCUIT_EM_THREADS", "2", 1);
  REQUIRE(pcem::detail::effective_threads(8) == 2);
  REQUIRE(pcem::detail::effective_threads(1) == 1);
  ::setenv("CIRCUIT_EM_THREADS", "not-a-number", 1);
  REQUIRE(pcem::detail::effective_threads(3) == 3);
  ::unsetenv("CIRCUIT_EM_THREADS");
  REQUIRE(pcem::detail::effective_threads(5) == 5);
}

TEST_CASE("loglik_gradient on C1") {
  const auto c1 = fixture_c1();
  const Dataset single = rows_of(c1.circuit, {{0.0}});
  const auto g = loglik_gradient(c1.circuit, c1.params, single);
  REQUIRE(g[0] == Catch::Approx(0.5).margin(1e-14));
  REQUIRE(g[1] == Catch::Approx(-0.5).margin(1e-14));

  // A dataset matching the model exactly sits at a stationary point.
  const Dataset both = rows_of(c1.circuit, {{0.0}, {1.0}});
  for (double v : loglik_gradient(c1.circuit, c1.params, both))
    REQUIRE(v == Catch::Approx(0.0).margin(1e-14));
}

TEST_CASE("loglik_gradient requires normalized parameters") {
  const auto c1 = fixture_c1();
  const ParamVector raw = make_params(c1.circuit, {std::log(1.0), std::log(3.0)});
  const Dataset single = rows_of(c1.circuit, {{0.0}});
  REQUIRE_THROWS_WITH(loglik_gradient(c1.circuit, raw, single),
                      Catch::Matchers::ContainsSubstring("renormalize"));
}

TEST_CASE("loglik_gradient matches finite differences (property)") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto built = test::small_random_circuit(seed);
    const Dataset data = test::random_dataset(built.circuit, 3, seed + 31);
    CAPTURE(seed);
    const auto grad = loglik_gradient(built.circuit, built.params, data);
    const auto fd = test::fd_loglik_gradient(built.circuit, built.params, data);
    double scale = 1.0;
    for (double v : fd) scale = std::max(scale, std::abs(v));
    for (std::size_t e = 0; e < grad.size(); ++e)
      REQUIRE(std::abs(grad[e] - fd[e]) / scale < 1e-6);
  }
}

TEST_CASE("deterministic flows are bit-stable across repeat runs") {
  const auto built = test::small_random_circuit(3);
  const Dataset data = test::random_dataset(built.circuit, 64, 17);
  FlowOptions opts;
  opts.deterministic = true;
  const FlowTable a = backward_flows(built.circuit, built.params, data, {}, opts);
  const FlowTable b = backward_flows(built.circuit, built.params, data, {}, opts);
  REQUIRE(a.edge_flow == b.edge_flow);
  REQUIRE(a.node_flow == b.node_flow);
}

TEST_CASE("parallel flow accumulation agrees with sequential") {
  const auto built = test::small_random_circuit(5);
  const Dataset data = test::random_dataset(built.circuit, 512, 23);
  FlowOptions seq{1, true};
  FlowOptions par{4, false};
  const FlowTable a = backward_flows(built.circuit, built.params, data, {}, seq);
  const FlowTable b = backward_flows(built.circuit, built.params, data, {}, par);
  for (std::size_t e = 0; e < a.edge_flow.size(); ++e)
    REQUIRE(a.edge_flow[e] == Catch::Approx(b.edge_flow[e]).margin(1e-12));
}
