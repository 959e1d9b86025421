#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "auber/baselines.hpp"
#include "auber/errors.hpp"
#include "auber/io.hpp"
#include "auber/orchestrator.hpp"
#include "auber/rng.hpp"
#include "auber/trainer.hpp"

namespace {

using namespace auber;

struct CommonOpts {
  std::string config_path;
  std::uint64_t seed = 0;
  std::string train_path;
  std::string dev_path;
  std::string checkpoint_in;
  std::string checkpoint_out;
  std::string report_path;
  std::string metrics_path;
  int episodes = -1;
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool needs_checkpoint) {
  cmd->add_option("--config", opts.config_path, "JSON run configuration");
  cmd->add_option("--seed", opts.seed, "master seed for the run")->required();
  cmd->add_option("--train", opts.train_path, "training TSV (overrides config)");
  cmd->add_option("--dev", opts.dev_path, "dev TSV (overrides config)");
  if (needs_checkpoint) {
    cmd->add_option("--checkpoint", opts.checkpoint_in, "input model checkpoint")->required();
  }
  cmd->add_option("--out", opts.checkpoint_out, "output model checkpoint");
  cmd->add_option("--report", opts.report_path, "output report JSON");
  cmd->add_option("--metrics", opts.metrics_path, "output metrics CSV");
  cmd->add_option("--episodes", opts.episodes, "override agent episodes per layer");
}

RunConfig resolve_config(const CommonOpts& opts) {
  RunConfig cfg = opts.config_path.empty() ? default_config() : load_config(opts.config_path);
  cfg.seed = opts.seed;
  if (!opts.train_path.empty()) cfg.paths.train = opts.train_path;
  if (!opts.dev_path.empty()) cfg.paths.dev = opts.dev_path;
  if (!opts.checkpoint_in.empty()) cfg.paths.checkpoint_in = opts.checkpoint_in;
  if (!opts.checkpoint_out.empty()) cfg.paths.checkpoint_out = opts.checkpoint_out;
  if (!opts.report_path.empty()) cfg.paths.report = opts.report_path;
  if (!opts.metrics_path.empty()) cfg.paths.metrics = opts.metrics_path;
  if (opts.episodes >= 0) cfg.agent.episodes = opts.episodes;
  validate(cfg);
  return cfg;
}

struct LoadedData {
  Dataset train;
  Dataset dev;
};

LoadedData load_data(const RunConfig& cfg) {
  LoadedData data;
  if (cfg.paths.train.empty() != cfg.paths.dev.empty()) {
    throw InputError("provide both --train and --dev paths, or neither for synthetic data");
  }
  if (!cfg.paths.train.empty()) {
    data.train = load_dataset_tsv(cfg.paths.train, cfg.model.vocab, cfg.model.max_len,
                                  static_cast<int>(cfg.model.classes));
    data.dev = load_dataset_tsv(cfg.paths.dev, cfg.model.vocab, cfg.model.max_len,
                                static_cast<int>(cfg.model.classes));
    return data;
  }
  if (cfg.model.classes != 2) {
    throw InputError("the synthetic task is binary; set model classes to 2 or pass TSV data");
  }
  Rng data_rng = substream(cfg.seed, "data");
  data.train = generate_synthetic(cfg.synthetic, cfg.synthetic.train_examples, data_rng);
  data.dev = generate_synthetic(cfg.synthetic, cfg.synthetic.dev_examples, data_rng);
  return data;
}

void print_eval(const char* tag, const EvalResult& ev) {
  std::cout << tag << ": accuracy " << ev.accuracy * 100.0 << "%, mcc " << ev.mcc << "\n";
}

AuberParams auber_params(const RunConfig& cfg) {
  AuberParams p;
  p.agent = cfg.agent;
  p.recipe = cfg.state;
  p.reverse_order = cfg.reverse_order;
  p.split = cfg.trainer.split;
  p.inter_lr = cfg.trainer.inter_lr;
  p.inter_epochs = cfg.trainer.inter_epochs;
  p.final_lr = cfg.trainer.final_lr;
  p.patience = cfg.trainer.patience;
  p.max_epochs = cfg.trainer.max_epochs;
  p.batch = cfg.trainer.batch;
  return p;
}

void print_report(const PruneReport& report) {
  std::cout << "method: " << report.method << "\n";
  for (const LayerPolicy& p : report.layer_policies) {
    std::cout << "layer " << p.layer << ": pruned [";
    for (std::size_t i = 0; i < p.pruned_heads.size(); ++i) {
      if (i) std::cout << ", ";
      std::cout << p.pruned_heads[i];
    }
    std::cout << "]\n";
  }
  std::cout << "total pruned: " << report.total_pruned << "\n";
  print_eval("pre ", report.pre);
  print_eval("post", report.post);
}

void finish_run(EncoderModel& model, PruneReport& report, const RunConfig& cfg,
                const MetricsLog& log, Rng& rng) {
  const std::string report_path = cfg.paths.report.empty() ? "report.json" : cfg.paths.report;
  emit_report(report, cfg, report_path);
  std::cout << "report written to " << report_path << "\n";
  if (!cfg.paths.checkpoint_out.empty()) {
    save_checkpoint(model, cfg, rng.state(), cfg.paths.checkpoint_out);
    std::cout << "model written to " << cfg.paths.checkpoint_out << "\n";
  }
  if (!cfg.paths.metrics.empty()) {
    write_metrics_csv(log, cfg.paths.metrics);
    std::cout << "metrics written to " << cfg.paths.metrics << "\n";
  }
  print_report(report);
}

int cmd_train(const CommonOpts& opts) {
  RunConfig cfg = resolve_config(opts);
  LoadedData data = load_data(cfg);

  Rng init_rng = substream(cfg.seed, "init");
  EncoderModel model = make_model(cfg.model, init_rng);

  Rng train_rng = substream(cfg.seed, "train");
  MetricsLog log;
  fine_tune(model, data.train, cfg.trainer.base_lr, cfg.trainer.base_epochs, cfg.trainer.batch,
            train_rng, &data.dev, &log, "train");

  print_eval("train", evaluate(model, data.train));
  print_eval("dev  ", evaluate(model, data.dev));

  const std::string out = cfg.paths.checkpoint_out.empty() ? "model.aubr" : cfg.paths.checkpoint_out;
  save_checkpoint(model, cfg, train_rng.state(), out);
  std::cout << "model written to " << out << "\n";
  if (!cfg.paths.metrics.empty()) {
    write_metrics_csv(log, cfg.paths.metrics);
    std::cout << "metrics written to " << cfg.paths.metrics << "\n";
  }
  return 0;
}

int cmd_auber(const CommonOpts& opts) {
  RunConfig cfg = resolve_config(opts);
  EncoderModel model = load_checkpoint(cfg.paths.checkpoint_in).model;
  LoadedData data = load_data(cfg);

  Rng rng = substream(cfg.seed, "auber");
  MetricsLog log;
  PruneReport report = run_auber(model, data.train, data.dev, auber_params(cfg), cfg.seed, rng, &log);
  finish_run(model, report, cfg, log, rng);
  return 0;
}

int cmd_baseline(const CommonOpts& opts, const std::string& method, std::size_t p) {
  RunConfig cfg = resolve_config(opts);
  EncoderModel model = load_checkpoint(cfg.paths.checkpoint_in).model;
  LoadedData data = load_data(cfg);

  HeadScoreTable table;
  if (method == "random") {
    Rng score_rng = substream(cfg.seed, "scores");
    table = random_scores(model, score_rng);
  } else if (method == "confidence") {
    table = confidence_scores(model, data.train);
  } else if (method == "gradient") {
    table = gradient_importance(model, data.train);
  } else {
    throw InputError("method must be random, confidence or gradient, got \"" + method + "\"");
  }

  BaselineParams params;
  params.final_lr = cfg.trainer.final_lr;
  params.patience = cfg.trainer.patience;
  params.max_epochs = cfg.trainer.max_epochs;
  params.batch = cfg.trainer.batch;

  Rng rng = substream(cfg.seed, "baseline");
  MetricsLog log;
  PruneReport report =
      prune_by_scores(model, table, p, data.train, data.dev, params, cfg.seed, rng, &log);
  finish_run(model, report, cfg, log, rng);
  return 0;
}

int cmd_ablate(const CommonOpts& opts, const std::string& state_variant, bool reverse) {
  RunConfig cfg = resolve_config(opts);
  std::string label;
  if (!state_variant.empty() && reverse) {
    throw InputError("pick one ablation: --state or --order reverse");
  }
  if (state_variant == "query") {
    cfg.state = {MatrixKind::Query, NormKind::L1};
    label = "ablate:query";
  } else if (state_variant == "key") {
    cfg.state = {MatrixKind::Key, NormKind::L1};
    label = "ablate:key";
  } else if (state_variant == "l2") {
    cfg.state = {MatrixKind::Value, NormKind::L2};
    label = "ablate:l2";
  } else if (!state_variant.empty()) {
    throw InputError("state ablation must be query, key or l2, got \"" + state_variant + "\"");
  } else if (reverse) {
    cfg.reverse_order = true;
    label = "ablate:reverse";
  } else {
    throw InputError("pick an ablation: --state {query,key,l2} or --order reverse");
  }

  EncoderModel model = load_checkpoint(cfg.paths.checkpoint_in).model;
  LoadedData data = load_data(cfg);

  Rng rng = substream(cfg.seed, "auber");
  MetricsLog log;
  PruneReport report = run_auber(model, data.train, data.dev, auber_params(cfg), cfg.seed, rng, &log);
  report.method = label;
  finish_run(model, report, cfg, log, rng);
  return 0;
}

int cmd_report(const std::vector<std::string>& paths) {
  std::vector<PruneReport> reports;
  reports.reserve(paths.size());
  for (const std::string& p : paths) reports.push_back(load_report(p));
  std::cout << render_comparison(reports);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"attention-head pruning workbench"};
  app.require_subcommand(1);

  CommonOpts train_opts;
  CLI::App* train_cmd = app.add_subcommand("train", "fit a base classifier and checkpoint it");
  add_common(train_cmd, train_opts, false);

  CommonOpts auber_opts;
  CLI::App* auber_cmd = app.add_subcommand("auber", "prune a checkpoint with the learned policy");
  add_common(auber_cmd, auber_opts, true);

  CommonOpts baseline_opts;
  std::string baseline_method;
  std::size_t baseline_p = 0;
  CLI::App* baseline_cmd = app.add_subcommand("baseline", "prune a checkpoint with a heuristic");
  add_common(baseline_cmd, baseline_opts, true);
  baseline_cmd->add_option("--method", baseline_method, "random, confidence or gradient")
      ->required();
  baseline_cmd->add_option("--p", baseline_p, "number of heads to prune")->required();

  CommonOpts ablate_opts;
  std::string ablate_state;
  std::string ablate_order;
  CLI::App* ablate_cmd = app.add_subcommand("ablate", "run a state or order variant");
  add_common(ablate_cmd, ablate_opts, true);
  ablate_cmd->add_option("--state", ablate_state, "state variant: query, key or l2");
  ablate_cmd->add_option("--order", ablate_order, "layer order variant: reverse");

  std::vector<std::string> compare_paths;
  CLI::App* report_cmd = app.add_subcommand("report", "compare finished runs");
  report_cmd->add_option("--compare", compare_paths, "report JSON files")
      ->required()
      ->expected(1, -1);

  CLI11_PARSE(app, argc, argv);

  try {
    if (train_cmd->parsed()) return cmd_train(train_opts);
    if (auber_cmd->parsed()) return cmd_auber(auber_opts);
    if (baseline_cmd->parsed()) return cmd_baseline(baseline_opts, baseline_method, baseline_p);
    if (ablate_cmd->parsed()) {
      if (!ablate_order.empty() && ablate_order != "reverse") {
        throw InputError("order ablation must be reverse, got \"" + ablate_order + "\"");
      }
      return cmd_ablate(ablate_opts, ablate_state, ablate_order == "reverse");
    }
    if (report_cmd->parsed()) return cmd_report(compare_paths);
  } catch (const Error& e) {
    std::cerr << "error[" << e.category() << "]: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error[internal]: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
