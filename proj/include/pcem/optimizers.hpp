#pragma once

// Parameter update rules and the training loop.
//
// Per sum node n with batch flows F(n,c) and reach probability TD(n):
//   full batch:        theta' = (F + pc/k) / sum(F + pc/k)
//   mini-batch (fixed) theta' = (1-a)*theta + a*F/sum(F)
//   mini-batch (reach) theta' = ((1-a)*TD(n)*theta + a*F) / Z
// The reach-weighted rule degenerates to the full-batch rule at a = 1, and
// freezes nodes whose normalizer Z is zero (no sample reaches them).
// Gradient methods step the unconstrained log-parameters and renormalize,
// since every gradient evaluation requires a normalized circuit.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pcem/circuit.hpp"
#include "pcem/dataset.hpp"
#include "pcem/flows.hpp"
#include "pcem/inference.hpp"
#include "pcem/normalize.hpp"

namespace pcem {

enum class Optimizer { FullEM, MiniEMBaseline, MiniEMProposed, SGD, Adam };

struct TrainConfig {
  Optimizer optimizer = Optimizer::MiniEMProposed;
  double alpha_start = 0.4;
  double alpha_end = 0.08;
  std::size_t batch_size = 32768;
  double eta = 0.0;          // momentum on the flow tables (mini-batch EM only)
  double pseudocount = 0.0;  // full-batch EM smoothing mass per sum node
  std::size_t epochs = 1;
  std::uint64_t seed = 0;
  bool deterministic = false;
  double lr = 1e-2;  // SGD/Adam step size
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t metrics_every = 0;  // record every k steps; 0 = epoch ends only
  unsigned threads = 0;
};

namespace detail {

inline void require_normalized(const ParamVector& p, const char* op) {
  if (!p.normalized)
    throw std::invalid_argument(std::string(op) +
                                " needs normalized parameters; call renormalize() first");
}

}  // namespace detail

/// Closed-form M-step over full-dataset flows. Nodes whose flows are all zero
/// (and pseudocount is zero) keep their previous weights; their ids are
/// appended to `frozen` when given.
inline ParamVector full_batch_em_step(const Circuit& c, const ParamVector& params,
                                      const FlowTable& flows, double pseudocount,
                                      std::vector<NodeId>* frozen = nullptr) {
  detail::require_normalized(params, "full_batch_em_step");
  if (pseudocount < 0.0) throw std::invalid_argument("pseudocount must be >= 0");
  ParamVector out;
  out.phi.resize(c.num_edges());
  for (NodeId i = 0; i < c.num_nodes(); ++i) {
    const Node& n = c.node(i);
    if (n.kind != NodeKind::Sum) continue;
    const double smooth = pseudocount / static_cast<double>(n.children.size());
    double denom = 0.0;
    for (std::size_t k = 0; k < n.children.size(); ++k)
      denom += flows.edge_flow[n.first_edge + k] + smooth;
    if (denom == 0.0) {
      for (std::size_t k = 0; k < n.children.size(); ++k)
        out.phi[n.first_edge + k] = params.phi[n.first_edge + k];
      if (frozen) frozen->push_back(i);
      continue;
    }
    for (std::size_t k = 0; k < n.children.size(); ++k) {
      const EdgeId e = n.first_edge + static_cast<EdgeId>(k);
      out.phi[e] = std::log((flows.edge_flow[e] + smooth) / denom);
    }
  }
  out.normalized = true;
  return out;
}

/// Fixed-rate mini-batch EM: convex combination of the old weights and the
/// per-node normalized flows.
inline ParamVector minibatch_em_step_baseline(const Circuit& c, const ParamVector& params,
                                              const FlowTable& flows, double alpha,
                                              std::vector<NodeId>* frozen = nullptr) {
  detail::require_normalized(params, "minibatch_em_step_baseline");
  if (!(alpha > 0.0) || alpha > 1.0)
    throw std::invalid_argument("step size alpha must lie in (0, 1]");
  ParamVector out;
  out.phi.resize(c.num_edges());
  for (NodeId i = 0; i < c.num_nodes(); ++i) {
    const Node& n = c.node(i);
    if (n.kind != NodeKind::Sum) continue;
    double z = 0.0;
    for (std::size_t k = 0; k < n.children.size(); ++k) z += flows.edge_flow[n.first_edge + k];
    if (z == 0.0) {
      for (std::size_t k = 0; k < n.children.size(); ++k)
        out.phi[n.first_edge + k] = params.phi[n.first_edge + k];
      if (frozen) frozen->push_back(i);
      continue;
    }
    for (std::size_t k = 0; k < n.children.size(); ++k) {
      const EdgeId e = n.first_edge + static_cast<EdgeId>(k);
      out.phi[e] =
          std::log((1.0 - alpha) * std::exp(params.phi[e]) + alpha * flows.edge_flow[e] / z);
    }
  }
  out.normalized = true;
  return out;
}

/// Reach-weighted mini-batch EM. The TD term keeps weights of barely-reached
/// nodes close to their current values, giving each node an effective step
/// size proportional to how much of the batch actually flowed through it.
inline ParamVector minibatch_em_step_proposed(const Circuit& c, const ParamVector& params,
                                              const FlowTable& flows, const TdVector& td,
                                              double alpha,
                                              std::vector<NodeId>* frozen = nullptr) {
  detail::require_normalized(params, "minibatch_em_step_proposed");
  if (!(alpha > 0.0) || alpha > 1.0)
    throw std::invalid_argument("step size alpha must lie in (0, 1]");
  ParamVector out;
  out.phi.resize(c.num_edges());
  for (NodeId i = 0; i < c.num_nodes(); ++i) {
    const Node& n = c.node(i);
    if (n.kind != NodeKind::Sum) continue;
    double z = 0.0;
    for (std::size_t k = 0; k < n.children.size(); ++k) {
      const EdgeId e = n.first_edge + static_cast<EdgeId>(k);
      z += (1.0 - alpha) * td.node_td[i] * std::exp(params.phi[e]) + alpha * flows.edge_flow[e];
    }
    if (z == 0.0) {
      for (std::size_t k = 0; k < n.children.size(); ++k)
        out.phi[n.first_edge + k] = params.phi[n.first_edge + k];
      if (frozen) frozen->push_back(i);
      continue;
    }
    for (std::size_t k = 0; k < n.children.size(); ++k) {
      const EdgeId e = n.first_edge + static_cast<EdgeId>(k);
      const double num =
          (1.0 - alpha) * td.node_td[i] * std::exp(params.phi[e]) + alpha * flows.edge_flow[e];
      out.phi[e] = std::log(num / z);
    }
  }
  out.normalized = true;
  return out;
}

/// Exponential moving average over flow tables with the usual bias
/// correction: the corrected table equals the raw table on the first update
/// and for eta = 0.
struct MomentumFlows {
  std::vector<double> edge_fm;
  std::vector<double> node_fm;
  std::size_t steps = 0;

  explicit MomentumFlows(const Circuit& c)
      : edge_fm(c.num_edges(), 0.0), node_fm(c.num_nodes(), 0.0) {}
};

inline FlowTable momentum_update(MomentumFlows& fm, const FlowTable& flows, double eta) {
  if (!(eta >= 0.0) || eta >= 1.0) throw std::invalid_argument("eta must lie in [0, 1)");
  if (fm.edge_fm.size() != flows.edge_flow.size() || fm.node_fm.size() != flows.node_flow.size())
    throw std::invalid_argument("momentum table does not match flow table");
  for (std::size_t e = 0; e < fm.edge_fm.size(); ++e)
    fm.edge_fm[e] = eta * fm.edge_fm[e] + (1.0 - eta) * flows.edge_flow[e];
  for (std::size_t i = 0; i < fm.node_fm.size(); ++i)
    fm.node_fm[i] = eta * fm.node_fm[i] + (1.0 - eta) * flows.node_flow[i];
  const double correction = 1.0 - std::pow(eta, static_cast<double>(fm.steps + 1));
  FlowTable corrected;
  corrected.batch_size = flows.batch_size;
  corrected.edge_flow.resize(fm.edge_fm.size());
  corrected.node_flow.resize(fm.node_fm.size());
  for (std::size_t e = 0; e < fm.edge_fm.size(); ++e)
    corrected.edge_flow[e] = fm.edge_fm[e] / correction;
  for (std::size_t i = 0; i < fm.node_fm.size(); ++i)
    corrected.node_flow[i] = fm.node_fm[i] / correction;
  ++fm.steps;
  return corrected;
}

/// Plain ascent step on the log-parameters followed by renormalization.
inline ParamVector sgd_step(const Circuit& c, const ParamVector& params,
                            std::span<const double> gradient, double alpha) {
  if (gradient.size() != c.num_edges())
    throw std::invalid_argument("gradient does not match circuit");
  ParamVector shifted;
  shifted.phi.resize(c.num_edges());
  for (std::size_t e = 0; e < shifted.phi.size(); ++e)
    shifted.phi[e] = params.phi[e] + alpha * gradient[e];
  return renormalize(c, shifted);
}

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::size_t steps = 0;

  explicit AdamState(const Circuit& c) : m(c.num_edges(), 0.0), v(c.num_edges(), 0.0) {}
};

/// Adam ascent on the log-parameters followed by renormalization.
inline ParamVector adam_step(const Circuit& c, const ParamVector& params,
                             std::span<const double> gradient, AdamState& state, double lr,
                             double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
  if (gradient.size() != c.num_edges())
    throw std::invalid_argument("gradient does not match circuit");
  if (state.m.size() != c.num_edges())
    throw std::invalid_argument("optimizer state does not match circuit");
  ++state.steps;
  const double t = static_cast<double>(state.steps);
  ParamVector shifted;
  shifted.phi.resize(c.num_edges());
  for (std::size_t e = 0; e < c.num_edges(); ++e) {
    state.m[e] = beta1 * state.m[e] + (1.0 - beta1) * gradient[e];
    state.v[e] = beta2 * state.v[e] + (1.0 - beta2) * gradient[e] * gradient[e];
    const double m_hat = state.m[e] / (1.0 - std::pow(beta1, t));
    const double v_hat = state.v[e] / (1.0 - std::pow(beta2, t));
    shifted.phi[e] = params.phi[e] + lr * m_hat / (std::sqrt(v_hat) + eps);
  }
  return renormalize(c, shifted);
}

/// Cosine decay from alpha_start (t = 0) to alpha_end (t = T).
inline double cosine_alpha(std::size_t t, std::size_t total, double alpha_start,
                           double alpha_end) {
  if (total < 1) throw std::invalid_argument("schedule length must be >= 1");
  if (t > total) throw std::invalid_argument("step index exceeds schedule length");
  const double frac = static_cast<double>(t) / static_cast<double>(total);
  return alpha_end + (alpha_start - alpha_end) * (1.0 + std::cos(std::numbers::pi * frac)) / 2.0;
}

struct MetricsRow {
  std::size_t samples_consumed = 0;
  std::size_t step = 0;
  double train_ll = 0.0;
  double valid_ll = std::numeric_limits<double>::quiet_NaN();  // NaN = no validation set
  double alpha = 0.0;
};

struct TrainResult {
  ParamVector params;
  std::vector<MetricsRow> metrics;
  std::size_t zero_flow_events = 0;  // sum nodes frozen for lack of batch flow
};

/// CSV with columns samples_consumed,step,train_ll,valid_ll,alpha. Doubles
/// use shortest round-trip encoding so equal runs produce equal bytes; a
/// missing validation set leaves the column empty.
inline std::string metrics_to_csv(std::span<const MetricsRow> rows) {
  std::string out = "samples_consumed,step,train_ll,valid_ll,alpha\n";
  for (const MetricsRow& r : rows) {
    out += std::to_string(r.samples_consumed) + ',' + std::to_string(r.step) + ',';
    out += detail::format_double(r.train_ll) + ',';
    if (!std::isnan(r.valid_ll)) out += detail::format_double(r.valid_ll);
    out += ',' + detail::format_double(r.alpha) + '\n';
  }
  return out;
}

/// Runs the configured optimizer. Parameters stay normalized throughout;
/// full-batch EM performs one update per epoch, everything else walks seeded
/// per-epoch shuffles in batches. A batch covering the whole dataset skips
/// shuffling, so a full-dataset mini-batch run reproduces the full-batch
/// trajectory exactly.
inline TrainResult train_loop(const Circuit& c, const ParamVector& init, const Dataset& train,
                              const Dataset* valid, const TrainConfig& cfg) {
  detail::require_normalized(init, "train_loop");
  check_compatible(c, train);
  if (valid) check_compatible(c, *valid);
  if (train.rows() == 0) throw std::invalid_argument("empty training set");
  if (cfg.epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (cfg.batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  if (!(cfg.eta >= 0.0) || cfg.eta >= 1.0) throw std::invalid_argument("eta must lie in [0, 1)");
  if (cfg.pseudocount < 0.0) throw std::invalid_argument("pseudocount must be >= 0");

  const std::size_t n_rows = train.rows();
  const bool full = cfg.optimizer == Optimizer::FullEM;
  const bool em_mini =
      cfg.optimizer == Optimizer::MiniEMBaseline || cfg.optimizer == Optimizer::MiniEMProposed;
  if (em_mini &&
      (!(cfg.alpha_end > 0.0) || cfg.alpha_end > cfg.alpha_start || cfg.alpha_start > 1.0))
    throw std::invalid_argument("mini-batch EM needs 0 < alpha_end <= alpha_start <= 1");
  const std::size_t batch = full ? n_rows : std::min(cfg.batch_size, n_rows);
  const std::size_t steps_per_epoch = (n_rows + batch - 1) / batch;
  const std::size_t total_steps = cfg.epochs * steps_per_epoch;
  const std::size_t schedule_len = total_steps > 1 ? total_steps - 1 : 1;

  FlowOptions flow_opts{cfg.threads, cfg.deterministic};
  EvalOptions eval_opts{cfg.deterministic ? 1u : cfg.threads};

  TrainResult result;
  result.params = init;

  auto record = [&](std::size_t step, std::size_t consumed, double alpha) {
    MetricsRow row;
    row.samples_consumed = consumed;
    row.step = step;
    row.train_ll = batch_log_eval(c, result.params, train, {}, eval_opts).mean;
    if (valid && valid->rows() > 0)
      row.valid_ll = batch_log_eval(c, result.params, *valid, {}, eval_opts).mean;
    row.alpha = alpha;
    result.metrics.push_back(row);
  };

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::uint32_t> order(n_rows);
  for (std::size_t i = 0; i < n_rows; ++i) order[i] = static_cast<std::uint32_t>(i);

  MomentumFlows momentum(c);
  AdamState adam(c);
  std::vector<NodeId> frozen;

  std::size_t step = 0;
  std::size_t consumed = 0;
  record(step, consumed, cosine_alpha(0, schedule_len, cfg.alpha_start, cfg.alpha_end));

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (!full && batch < n_rows) std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t offset = 0; offset < n_rows; offset += batch) {
      const std::size_t take = std::min(batch, n_rows - offset);
      std::span<const std::uint32_t> rows(order.data() + offset, take);
      const double alpha = cosine_alpha(step, schedule_len, cfg.alpha_start, cfg.alpha_end);

      FlowTable flows = backward_flows(c, result.params, train, rows, flow_opts);
      if (em_mini && cfg.eta > 0.0) flows = momentum_update(momentum, flows, cfg.eta);

      frozen.clear();
      switch (cfg.optimizer) {
        case Optimizer::FullEM:
          result.params = full_batch_em_step(c, result.params, flows, cfg.pseudocount, &frozen);
          break;
        case Optimizer::MiniEMBaseline:
          result.params = minibatch_em_step_baseline(c, result.params, flows, alpha, &frozen);
          break;
        case Optimizer::MiniEMProposed: {
          const TdVector td = td_probs(c, result.params);
          result.params =
              minibatch_em_step_proposed(c, result.params, flows, td, alpha, &frozen);
          break;
        }
        case Optimizer::SGD: {
          const TdVector td = td_probs(c, result.params);
          std::vector<double> grad(c.num_edges());
          for (std::size_t e = 0; e < grad.size(); ++e)
            grad[e] = flows.edge_flow[e] - td.edge_td[e];
          result.params = sgd_step(c, result.params, grad, cfg.lr);
          break;
        }
        case Optimizer::Adam: {
          const TdVector td = td_probs(c, result.params);
          std::vector<double> grad(c.num_edges());
          for (std::size_t e = 0; e < grad.size(); ++e)
            grad[e] = flows.edge_flow[e] - td.edge_td[e];
          result.params = adam_step(c, result.params, grad, adam, cfg.lr, cfg.adam_beta1,
                                    cfg.adam_beta2, cfg.adam_eps);
          break;
        }
      }
      result.zero_flow_events += frozen.size();
      ++step;
      consumed += take;

      const bool epoch_end = offset + take >= n_rows;
      if ((cfg.metrics_every > 0 && step % cfg.metrics_every == 0) ||
          (cfg.metrics_every == 0 && epoch_end) || (epoch_end && epoch + 1 == cfg.epochs))
        record(step, consumed, alpha);
    }
  }
  return result;
}

}  // namespace pcem
