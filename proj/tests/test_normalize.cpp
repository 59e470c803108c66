#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "helpers.hpp"
#include "pcem/builders.hpp"
#include "pcem/normalize.hpp"
#include "pcem/oracle.hpp"

using namespace pcem;

TEST_CASE("renormalize on C1") {
  const auto c1 = fixture_c1();
  const ParamVector raw = make_params(c1.circuit, {std::log(1.0), std::log(3.0)});
  const ParamVector out = renormalize(c1.circuit, raw);
  REQUIRE(out.normalized);
  REQUIRE(std::exp(out.phi[0]) == Catch::Approx(0.25).epsilon(1e-14));
  REQUIRE(std::exp(out.phi[1]) == Catch::Approx(0.75).epsilon(1e-14));
}

TEST_CASE("renormalize is the identity on normalized parameters") {
  const auto c2 = fixture_c2();
  const ParamVector out = renormalize(c2.circuit, c2.params);
  for (std::size_t e = 0; e < out.phi.size(); ++e)
    REQUIRE(out.phi[e] == Catch::Approx(c2.params.phi[e]).margin(1e-12));
}

TEST_CASE("renormalize touches only nodes whose partition deviates") {
  const auto c2 = fixture_c2();
  ParamVector scaled = c2.params;
  scaled.phi[8] += std::log(10.0);  // scale both root weights by 10
  scaled.phi[9] += std::log(10.0);
  scaled.normalized = false;
  const ParamVector out = renormalize(c2.circuit, scaled);
  REQUIRE(std::exp(out.phi[8]) == Catch::Approx(0.5).epsilon(1e-13));
  REQUIRE(std::exp(out.phi[9]) == Catch::Approx(0.5).epsilon(1e-13));
  for (std::size_t e = 0; e < 8; ++e)
    REQUIRE(out.phi[e] == Catch::Approx(c2.params.phi[e]).margin(1e-13));
}

TEST_CASE("renormalize is idempotent and preserves the distribution (property)") {
  for (std::uint64_t seed = 0; seed < 15; ++seed) {
    const auto built = test::small_random_circuit(seed, 3, 6);
    const ParamVector raw = test::perturb_params(built.circuit, built.params, seed + 5);
    CAPTURE(seed);
    const ParamVector once = renormalize(built.circuit, raw);
    const ParamVector twice = renormalize(built.circuit, once);
    for (std::size_t e = 0; e < once.phi.size(); ++e)
      REQUIRE(twice.phi[e] == Catch::Approx(once.phi[e]).margin(1e-12));

    REQUIRE(std::exp(log_partition(built.circuit, once)[built.circuit.root()]) ==
            Catch::Approx(1.0).epsilon(1e-12));

    const double log_z = log_partition(built.circuit, raw)[built.circuit.root()];
    for (const auto& x : oracle::enumerate_assignments(built.circuit)) {
      const double before = log_eval(built.circuit, raw, x)[built.circuit.root()];
      const double after = log_eval(built.circuit, once, x)[built.circuit.root()];
      REQUIRE(after == Catch::Approx(before - log_z).margin(1e-10));
    }
  }
}

TEST_CASE("renormalize rejects zero partition functions") {
  const auto c1 = fixture_c1();
  const ParamVector dead = make_params(c1.circuit, {kNegInf, kNegInf});
  REQUIRE_THROWS_AS(renormalize(c1.circuit, dead), NumericError);
}

TEST_CASE("kl_joint basics") {
  const auto c1 = fixture_c1();
  REQUIRE(kl_joint(c1.circuit, c1.params, c1.params) == 0.0);

  const ParamVector q = make_params(c1.circuit, {std::log(0.7), std::log(0.3)});
  const double expected = 0.5 * std::log(0.5 / 0.7) + 0.5 * std::log(0.5 / 0.3);
  REQUIRE(kl_joint(c1.circuit, c1.params, q) == Catch::Approx(expected).epsilon(1e-12));

  const ParamVector raw = make_params(c1.circuit, {std::log(1.0), std::log(3.0)});
  REQUIRE_THROWS_AS(kl_joint(c1.circuit, c1.params, raw), std::invalid_argument);
}

TEST_CASE("kl_joint localizes a single differing node by its reach") {
  const auto c2 = fixture_c2();
  ParamVector q = c2.params;
  q.phi[4] = std::log(0.5);  // B1 weights move to (0.5, 0.5)
  q.phi[5] = std::log(0.5);
  q.normalized = true;
  const double local = 0.7 * std::log(0.7 / 0.5) + 0.3 * std::log(0.3 / 0.5);
  const double td_b1 = 0.5;
  REQUIRE(kl_joint(c2.circuit, c2.params, q) ==
          Catch::Approx(td_b1 * local).epsilon(1e-12));
}

TEST_CASE("kl_joint is nonnegative and matches enumeration (property)") {
  for (std::uint64_t seed = 0; seed < 12; ++seed) {
    const auto built = test::small_random_circuit(seed, 3, 5);
    const ParamVector q = random_params(built.circuit, seed + 1000);
    CAPTURE(seed);
    const double kl = kl_joint(built.circuit, built.params, q);
    REQUIRE(kl >= 0.0);
    REQUIRE(kl == Catch::Approx(oracle::brute_kl_joint(built.circuit, built.params, q))
                      .margin(1e-10));

    // Data processing: the joint KL dominates the KL of the observed
    // marginals.
    double marginal_kl = 0.0;
    for (const auto& x : oracle::enumerate_assignments(built.circuit)) {
      const double lp = log_eval(built.circuit, built.params, x)[built.circuit.root()];
      const double lq = log_eval(built.circuit, q, x)[built.circuit.root()];
      marginal_kl += std::exp(lp) * (lp - lq);
    }
    REQUIRE(kl >= marginal_kl - 1e-10);
  }
}

TEST_CASE("kl linear form: differences are inner products against reach") {
  const auto c1 = fixture_c1();
  const ParamVector a = make_params(c1.circuit, {std::log(0.7), std::log(0.3)});
  const ParamVector b = make_params(c1.circuit, {std::log(0.6), std::log(0.4)});

  const auto [same_l, same_r] = kl_linear_form_check(c1.circuit, c1.params, a, a);
  REQUIRE(same_l == 0.0);
  REQUIRE(same_r == 0.0);

  const auto [lhs, rhs] = kl_linear_form_check(c1.circuit, c1.params, a, b);
  const double by_hand = (0.5 * std::log(0.5 / 0.7) + 0.5 * std::log(0.5 / 0.3)) -
                         (0.5 * std::log(0.5 / 0.6) + 0.5 * std::log(0.5 / 0.4));
  REQUIRE(lhs == Catch::Approx(by_hand).epsilon(1e-12));
  REQUIRE(lhs == Catch::Approx(rhs).margin(1e-10));
}

TEST_CASE("kl linear form holds on random circuits (property)") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto built = test::small_random_circuit(seed);
    const ParamVector a = random_params(built.circuit, seed + 11);
    const ParamVector b = random_params(built.circuit, seed + 12);
    CAPTURE(seed);
    const auto [lhs, rhs] = kl_linear_form_check(built.circuit, built.params, a, b);
    REQUIRE(std::abs(lhs - rhs) < 1e-8);
  }
}

TEST_CASE("gradients are invariant under renormalization") {
  const auto c1 = fixture_c1();
  const ParamVector raw = make_params(c1.circuit, {std::log(1.0), std::log(3.0)});
  Dataset d(c1.circuit.vars());
  const double r0[] = {0.0};
  d.append_row(r0);
  REQUIRE(gradient_invariance_check(c1.circuit, raw, d) < 1e-12);

  // Already-normalized parameters trivially agree with themselves.
  REQUIRE(gradient_invariance_check(c1.circuit, c1.params, d) < 1e-12);

  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto built = test::small_random_circuit(seed);
    const ParamVector jittered = test::perturb_params(built.circuit, built.params, seed + 77);
    const Dataset data = test::random_dataset(built.circuit, 4, seed + 78);
    CAPTURE(seed);
    REQUIRE(gradient_invariance_check(built.circuit, jittered, data) < 1e-9);
  }
}
