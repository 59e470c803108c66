#pragma once

// Feedforward evaluation. Everything runs in log space with a max-shift per
// sum node; a probability of exactly zero is the first-class value -inf and
// never turns into NaN.

#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include "pcem/circuit.hpp"
#include "pcem/dataset.hpp"
#include "pcem/util.hpp"

namespace pcem {

/// Per-variable evidence: an observed value or "marginalized".
struct Evidence {
  std::vector<std::optional<double>> values;

  static Evidence all_marginalized(std::size_t num_vars) {
    Evidence e;
    e.values.assign(num_vars, std::nullopt);
    return e;
  }
  static Evidence observed(std::span<const double> sample) {
    Evidence e;
    e.values.assign(sample.begin(), sample.end());
    return e;
  }
};

namespace detail {

inline double log_indicator(const Indicator& ind, double x) {
  return x == static_cast<double>(ind.category) ? 0.0 : kNegInf;
}

inline double log_gaussian(const FixedGaussian& g, double x) {
  const double z = (x - g.mean) / g.stddev;
  return -0.5 * z * z - std::log(g.stddev) - 0.5 * std::log(2.0 * std::numbers::pi);
}

inline void check_sample_value(const Circuit& c, VarId v, double x) {
  const VarDomain& d = c.var(v);
  if (d.continuous()) {
    if (!std::isfinite(x))
      throw std::invalid_argument("non-finite value for continuous variable " + std::to_string(v));
    return;
  }
  if (!(x >= 0.0) || x != std::floor(x) || x >= d.cardinality)
    throw std::invalid_argument("value for variable " + std::to_string(v) +
                                " is not a category below " + std::to_string(d.cardinality));
}

/// Core bottom-up pass. `leaf(node)` supplies the log-value of input nodes.
template <class LeafLog>
void eval_nodes(const Circuit& c, std::span<const double> phi, LeafLog&& leaf,
                std::span<double> out) {
  for (NodeId i = 0; i < c.num_nodes(); ++i) {
    const Node& n = c.node(i);
    switch (n.kind) {
      case NodeKind::Input:
        out[i] = leaf(n);
        break;
      case NodeKind::Product: {
        double s = 0.0;
        for (NodeId ch : n.children) {
          if (out[ch] == kNegInf) {
            s = kNegInf;
            break;
          }
          s += out[ch];
        }
        out[i] = s;
        break;
      }
      case NodeKind::Sum: {
        double m = kNegInf;
        for (std::size_t k = 0; k < n.children.size(); ++k)
          m = std::max(m, phi[n.first_edge + k] + out[n.children[k]]);
        if (m == kNegInf) {
          out[i] = kNegInf;
          break;
        }
        double acc = 0.0;
        for (std::size_t k = 0; k < n.children.size(); ++k) {
          const double t = phi[n.first_edge + k] + out[n.children[k]];
          if (t != kNegInf) acc += std::exp(t - m);
        }
        out[i] = m + std::log(acc);
        break;
      }
    }
  }
}

}  // namespace detail

/// Per-node log-values for one fully observed sample; the root entry is the
/// (unnormalized) log-likelihood.
inline std::vector<double> log_eval(const Circuit& c, const ParamVector& params,
                                    std::span<const double> sample) {
  if (sample.size() != c.num_vars())
    throw std::invalid_argument("sample has " + std::to_string(sample.size()) +
                                " values, circuit has " + std::to_string(c.num_vars()) +
                                " variables");
  for (VarId v = 0; v < c.num_vars(); ++v) detail::check_sample_value(c, v, sample[v]);
  std::vector<double> out(c.num_nodes());
  detail::eval_nodes(c, params.phi, [&](const Node& n) {
    if (const auto* ind = std::get_if<Indicator>(&n.dist))
      return detail::log_indicator(*ind, sample[n.var]);
    return detail::log_gaussian(std::get<FixedGaussian>(n.dist), sample[n.var]);
  }, out);
  return out;
}

/// Same pass under evidence; marginalized variables make their input nodes
/// output log 1 = 0 (all leaf distributions integrate to one).
inline std::vector<double> log_eval(const Circuit& c, const ParamVector& params,
                                    const Evidence& evidence) {
  if (evidence.values.size() != c.num_vars())
    throw std::invalid_argument("evidence mask does not match variable count");
  for (VarId v = 0; v < c.num_vars(); ++v)
    if (evidence.values[v]) detail::check_sample_value(c, v, *evidence.values[v]);
  std::vector<double> out(c.num_nodes());
  detail::eval_nodes(c, params.phi, [&](const Node& n) {
    const auto& obs = evidence.values[n.var];
    if (!obs) return 0.0;
    if (const auto* ind = std::get_if<Indicator>(&n.dist))
      return detail::log_indicator(*ind, *obs);
    return detail::log_gaussian(std::get<FixedGaussian>(n.dist), *obs);
  }, out);
  return out;
}

/// Per-node log partition functions: the forward pass with every leaf set to
/// one. The root entry is log Z.
inline std::vector<double> log_partition(const Circuit& c, const ParamVector& params) {
  std::vector<double> out(c.num_nodes());
  detail::eval_nodes(c, params.phi, [](const Node&) { return 0.0; }, out);
  return out;
}

inline double log_marginal(const Circuit& c, const ParamVector& params, const Evidence& evidence) {
  return log_eval(c, params, evidence)[c.root()];
}

struct BatchEval {
  std::vector<double> per_sample;  // root log-values, one per row
  double mean = 0.0;
};

struct EvalOptions {
  unsigned threads = 0;  // 0 = automatic, capped by CIRCUIT_EM_THREADS
};

/// Root log-value per row plus the arithmetic mean. Rows are independent, so
/// the batch parallelizes freely; the mean is reduced in row order either way.
inline BatchEval batch_log_eval(const Circuit& c, const ParamVector& params, const Dataset& data,
                                std::span<const std::uint32_t> rows = {},
                                const EvalOptions& opts = {}) {
  check_compatible(c, data);
  const std::size_t count = rows.empty() ? data.rows() : rows.size();
  if (count == 0) throw std::invalid_argument("empty batch");
  BatchEval out;
  out.per_sample.resize(count);
  detail::parallel_chunks(count, opts.threads, [&](std::size_t begin, std::size_t end, unsigned) {
    std::vector<double> values(c.num_nodes());
    for (std::size_t i = begin; i < end; ++i) {
      const std::size_t r = rows.empty() ? i : rows[i];
      auto sample = data.row(r);
      detail::eval_nodes(c, params.phi, [&](const Node& n) {
        if (const auto* ind = std::get_if<Indicator>(&n.dist))
          return detail::log_indicator(*ind, sample[n.var]);
        return detail::log_gaussian(std::get<FixedGaussian>(n.dist), sample[n.var]);
      }, values);
      out.per_sample[i] = values[c.root()];
    }
  });
  double acc = 0.0;
  for (double v : out.per_sample) acc += v;
  out.mean = acc / static_cast<double>(count);
  return out;
}

}  // namespace pcem
