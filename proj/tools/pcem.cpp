// Command-line harness: validate circuits, train parameters, evaluate
// likelihoods, and renormalize checkpoints. Exit codes: 0 success, 1 domain
// failure (invalid circuit, unnormalized checkpoint, zero partition),
// 2 usage or I/O failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "pcem/pcem.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kDomainFailure = 1;
constexpr int kUsageFailure = 2;

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw std::runtime_error("failed writing '" + path.string() + "'");
}

int cmd_validate(const std::string& circuit_path) {
  const auto [circuit, params] = pcem::load_circuit(circuit_path);
  const pcem::ValidationReport report = pcem::validate(circuit);
  if (report.ok) {
    std::cout << "ok: " << circuit.num_nodes() << " nodes, " << circuit.num_edges()
              << " sum edges, " << circuit.num_vars() << " variables\n";
    return kOk;
  }
  for (const auto& v : report.violations)
    std::cout << "violation node " << v.node << " [" << pcem::rule_name(v.rule) << "] "
              << v.detail << "\n";
  return kDomainFailure;
}

struct TrainArgs {
  std::string circuit_path;
  std::string build;  // "clt" or "random" when no circuit file is given
  std::uint32_t hidden_size = 8;
  std::uint32_t num_vars = 8;
  std::uint32_t depth = 3;
  std::uint32_t sum_fanout = 2;
  std::uint32_t cardinality = 2;
  std::string data_path;
  std::string valid_path;
  std::string optimizer = "mini-em";
  pcem::TrainConfig config;
  std::string metrics_out;
  std::string checkpoint_out;
};

int cmd_train(TrainArgs& args) {
  const pcem::Dataset data = pcem::load_dataset(args.data_path);
  std::optional<pcem::Dataset> valid;
  if (!args.valid_path.empty()) valid = pcem::load_dataset(args.valid_path);

  if (args.optimizer == "full-em")
    args.config.optimizer = pcem::Optimizer::FullEM;
  else if (args.optimizer == "mini-em")
    args.config.optimizer = pcem::Optimizer::MiniEMProposed;
  else if (args.optimizer == "mini-em-baseline")
    args.config.optimizer = pcem::Optimizer::MiniEMBaseline;
  else if (args.optimizer == "sgd")
    args.config.optimizer = pcem::Optimizer::SGD;
  else if (args.optimizer == "adam")
    args.config.optimizer = pcem::Optimizer::Adam;
  else
    throw std::invalid_argument("unknown optimizer '" + args.optimizer + "'");

  std::optional<pcem::BuiltCircuit> built;
  if (!args.circuit_path.empty()) {
    auto [circuit, params] = pcem::load_circuit(args.circuit_path);
    built.emplace(pcem::BuiltCircuit{std::move(circuit), std::move(params)});
  } else if (args.build == "clt") {
    built.emplace(pcem::build_clt(data, args.hidden_size, args.config.seed));
  } else if (args.build == "random") {
    pcem::RandomSpec spec{args.num_vars, args.depth, args.sum_fanout, args.config.seed,
                          args.cardinality};
    built.emplace(pcem::build_random(spec));
  } else {
    throw std::invalid_argument("pass --circuit or --build {clt,random}");
  }

  if (!built->params.normalized) {
    std::cerr << "checkpoint is not normalized; run `pcem renorm` first\n";
    return kDomainFailure;
  }

  const pcem::TrainResult result = pcem::train_loop(
      built->circuit, built->params, data, valid ? &*valid : nullptr, args.config);

  if (result.zero_flow_events > 0)
    std::cerr << "warning: " << result.zero_flow_events
              << " sum-node updates were frozen for lack of batch flow\n";

  if (!args.metrics_out.empty())
    write_text(args.metrics_out, pcem::metrics_to_csv(result.metrics));
  if (!args.checkpoint_out.empty())
    pcem::save_circuit(args.checkpoint_out, built->circuit, result.params);

  const pcem::MetricsRow& last = result.metrics.back();
  std::cout << "steps " << last.step << " samples " << last.samples_consumed << " train_ll "
            << pcem::detail::format_double(last.train_ll);
  if (!std::isnan(last.valid_ll))
    std::cout << " valid_ll " << pcem::detail::format_double(last.valid_ll);
  std::cout << "\n";
  return kOk;
}

int cmd_eval(const std::string& circuit_path, const std::string& data_path) {
  const auto [circuit, params] = pcem::load_circuit(circuit_path);
  if (!params.normalized) {
    std::cerr << "checkpoint is not normalized; run `pcem renorm` first\n";
    return kDomainFailure;
  }
  const pcem::Dataset data = pcem::load_dataset(data_path);
  const pcem::BatchEval eval = pcem::batch_log_eval(circuit, params, data);
  const double bits_per_var =
      -eval.mean / (static_cast<double>(circuit.num_vars()) * std::log(2.0));
  std::cout << "mean_ll " << pcem::detail::format_double(eval.mean) << "\n";
  std::cout << "bits_per_var " << pcem::detail::format_double(bits_per_var) << "\n";
  return kOk;
}

struct PatchifyArgs {
  std::string images_path;
  std::uint32_t count = 0, height = 0, width = 0, patch = 16;
  bool ycc_as_printed = false;
  std::string out_path;
};

int cmd_patchify(const PatchifyArgs& args) {
  std::ifstream in(args.images_path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + args.images_path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string bytes = ss.str();
  const pcem::Dataset data =
      pcem::patchify({reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()},
                     args.count, args.height, args.width, args.patch, args.ycc_as_printed);
  const auto raw = pcem::dataset_to_raw(data);
  std::ofstream out(args.out_path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + args.out_path + "' for writing");
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw std::runtime_error("failed writing '" + args.out_path + "'");
  std::cout << "wrote " << data.rows() << " rows x " << data.cols() << " variables\n";
  return kOk;
}

int cmd_renorm(const std::string& in_path, const std::string& out_path) {
  const auto [circuit, params] = pcem::load_circuit(in_path);
  // Already-normalized checkpoints pass through unchanged, so re-running the
  // command is byte-stable.
  const pcem::ParamVector normalized =
      params.normalized ? params : pcem::renormalize(circuit, params);
  pcem::save_circuit(out_path, circuit, normalized);
  std::cout << "wrote " << out_path << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"probabilistic circuit training and inference"};
  app.require_subcommand(1);

  // validate
  std::string validate_path;
  CLI::App* validate = app.add_subcommand("validate", "check structural properties");
  validate->add_option("circuit", validate_path, "circuit file")->required();

  // train
  TrainArgs train;
  CLI::App* train_cmd = app.add_subcommand("train", "fit sum-edge parameters");
  train_cmd->add_option("--circuit", train.circuit_path, "initial checkpoint");
  train_cmd->add_option("--build", train.build, "builder when no checkpoint is given")
      ->check(CLI::IsMember({"clt", "random"}));
  train_cmd->add_option("--hidden-size", train.hidden_size, "latent states per tree vertex");
  train_cmd->add_option("--num-vars", train.num_vars, "random builder: variable count");
  train_cmd->add_option("--depth", train.depth, "random builder: partition depth");
  train_cmd->add_option("--sum-fanout", train.sum_fanout, "random builder: mixtures per block");
  train_cmd->add_option("--cardinality", train.cardinality, "random builder: categories");
  train_cmd->add_option("--data", train.data_path, "training data (csv or raw)")->required();
  train_cmd->add_option("--valid", train.valid_path, "validation data");
  train_cmd->add_option("--optimizer", train.optimizer,
                        "full-em | mini-em | mini-em-baseline | sgd | adam");
  train_cmd->add_option("--alpha-start", train.config.alpha_start, "initial EM step size");
  train_cmd->add_option("--alpha-end", train.config.alpha_end, "final EM step size");
  train_cmd->add_option("--batch-size", train.config.batch_size, "samples per update");
  train_cmd->add_option("--eta", train.config.eta, "flow momentum factor");
  train_cmd->add_option("--pseudocount", train.config.pseudocount, "full-EM smoothing mass");
  train_cmd->add_option("--epochs", train.config.epochs, "passes over the data");
  train_cmd->add_option("--seed", train.config.seed, "RNG seed");
  train_cmd->add_flag("--deterministic", train.config.deterministic,
                      "bit-reproducible reductions");
  train_cmd->add_option("--lr", train.config.lr, "SGD/Adam learning rate");
  train_cmd->add_option("--metrics-every", train.config.metrics_every,
                        "record metrics every k steps (0 = epoch ends)");
  train_cmd->add_option("--metrics-out", train.metrics_out, "metrics CSV path");
  train_cmd->add_option("--checkpoint-out", train.checkpoint_out, "final checkpoint path");

  // eval
  std::string eval_circuit, eval_data;
  CLI::App* eval = app.add_subcommand("eval", "mean log-likelihood of a dataset");
  eval->add_option("--circuit", eval_circuit, "checkpoint")->required();
  eval->add_option("--data", eval_data, "dataset")->required();

  // renorm
  std::string renorm_in, renorm_out;
  CLI::App* renorm = app.add_subcommand("renorm", "globally renormalize a checkpoint");
  renorm->add_option("input", renorm_in, "circuit file")->required();
  renorm->add_option("output", renorm_out, "normalized circuit file")->required();

  // patchify
  PatchifyArgs patchify;
  CLI::App* patchify_cmd =
      app.add_subcommand("patchify", "split raw RGB images into a patch dataset");
  patchify_cmd->add_option("--images", patchify.images_path, "raw count*H*W*3 byte file")
      ->required();
  patchify_cmd->add_option("--count", patchify.count, "number of images")->required();
  patchify_cmd->add_option("--height", patchify.height, "image height")->required();
  patchify_cmd->add_option("--width", patchify.width, "image width")->required();
  patchify_cmd->add_option("--patch", patchify.patch, "patch side length");
  patchify_cmd->add_flag("--ycc-as-printed", patchify.ycc_as_printed,
                         "keep the additive luma term of the published transform");
  patchify_cmd->add_option("--out", patchify.out_path, "output dataset (raw format)")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsageFailure;
  }

  try {
    if (*validate) return cmd_validate(validate_path);
    if (*train_cmd) return cmd_train(train);
    if (*eval) return cmd_eval(eval_circuit, eval_data);
    if (*renorm) return cmd_renorm(renorm_in, renorm_out);
    if (*patchify_cmd) return cmd_patchify(patchify);
  } catch (const pcem::NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kDomainFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsageFailure;
  }
  return kUsageFailure;
}
