#pragma once

// Shared test utilities: fixture shorthands, random circuit/dataset
// generation sized for the enumeration oracle, and a finite-difference
// gradient of the normalized log-likelihood (the independent check for the
// flow-based gradient).

#include <random>
#include <vector>

#include "pcem/builders.hpp"
#include "pcem/dataset.hpp"
#include "pcem/inference.hpp"

namespace test {

/// Small random circuit that the enumeration oracle can afford: binary
/// variables, few mixture states.
inline pcem::BuiltCircuit small_random_circuit(std::uint64_t seed, std::uint32_t min_vars = 3,
                                               std::uint32_t max_vars = 7) {
  std::mt19937_64 rng(seed);
  pcem::RandomSpec spec;
  spec.num_vars = min_vars + static_cast<std::uint32_t>(rng() % (max_vars - min_vars + 1));
  spec.depth = 2 + static_cast<std::uint32_t>(rng() % 3);
  spec.sum_fanout = 1 + static_cast<std::uint32_t>(rng() % 2);
  spec.cardinality = 2;
  spec.seed = rng();
  return pcem::build_random(spec);
}

/// Random rows matching the circuit's variable domains.
inline pcem::Dataset random_dataset(const pcem::Circuit& c, std::size_t rows,
                                    std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  pcem::Dataset out(c.vars());
  std::vector<double> row(c.num_vars());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t v = 0; v < c.num_vars(); ++v) {
      const auto& d = c.var(static_cast<pcem::VarId>(v));
      row[v] = d.continuous() ? std::normal_distribution<double>(0.0, 1.0)(rng)
                              : static_cast<double>(rng() % d.cardinality);
    }
    out.append_row(row);
  }
  return out;
}

/// Unnormalized variant: jitters each log-parameter by U(-spread, spread).
inline pcem::ParamVector perturb_params(const pcem::Circuit& c, const pcem::ParamVector& params,
                                        std::uint64_t seed, double spread = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-spread, spread);
  std::vector<double> phi = params.phi;
  for (double& v : phi) v += u(rng);
  return pcem::make_params(c, std::move(phi));
}

/// Central finite differences of log(p~(x) / Z) w.r.t. every log-parameter.
inline std::vector<double> fd_loglik_gradient(const pcem::Circuit& c,
                                              const pcem::ParamVector& params,
                                              std::span<const double> sample, double h = 1e-5) {
  std::vector<double> grad(c.num_edges());
  pcem::ParamVector work = params;
  work.normalized = false;
  for (std::size_t e = 0; e < c.num_edges(); ++e) {
    const double keep = work.phi[e];
    auto value = [&](double phi_e) {
      work.phi[e] = phi_e;
      const double ll = pcem::log_eval(c, work, sample)[c.root()];
      const double lz = pcem::log_partition(c, work)[c.root()];
      return ll - lz;
    };
    const double hi = value(keep + h);
    const double lo = value(keep - h);
    work.phi[e] = keep;
    grad[e] = (hi - lo) / (2.0 * h);
  }
  return grad;
}

/// Mean of fd_loglik_gradient over a dataset.
inline std::vector<double> fd_loglik_gradient(const pcem::Circuit& c,
                                              const pcem::ParamVector& params,
                                              const pcem::Dataset& data, double h = 1e-5) {
  std::vector<double> grad(c.num_edges(), 0.0);
  for (std::size_t r = 0; r < data.rows(); ++r) {
    const auto g = fd_loglik_gradient(c, params, data.row(r), h);
    for (std::size_t e = 0; e < g.size(); ++e) grad[e] += g[e];
  }
  for (double& v : grad) v /= static_cast<double>(data.rows());
  return grad;
}

}  // namespace test
