#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "auber/baselines.hpp"
#include "auber/dqn.hpp"
#include "auber/model.hpp"
#include "auber/orchestrator.hpp"
#include "auber/rng.hpp"
#include "auber/state.hpp"
#include "auber/trainer.hpp"

namespace auber {

struct TrainerConfig {
  double base_lr = 1e-3;
  // Deep enough that the base run memorizes the training set; pruning then
  // has headroom to improve held-out accuracy after the final fine-tune.
  int base_epochs = 300;
  int batch = 32;
  double inter_lr = 2e-6;
  int inter_epochs = 1;
  double final_lr = 1e-4;
  int patience = 20;
  int max_epochs = 200;
  SplitRatio split = SplitRatio::TrainOneValTwo;
};

struct SyntheticSpec {
  int train_examples = 300;
  int dev_examples = 600;
  int seq_len = 16;
  int vocab = 64;
  int trigger = 7;
  double label_noise = 0.15;
};

struct PathConfig {
  std::string train;  // TSV; empty means synthetic data
  std::string dev;
  std::string checkpoint_in;
  std::string checkpoint_out;
  std::string report;
  std::string metrics;
};

struct RunConfig {
  ModelDims model;
  TrainerConfig trainer;
  AgentConfig agent;
  StateRecipe state;
  bool reverse_order = false;
  // Pruning is realized as gate closures; weights stay in place. This
  // is the only supported mode and is echoed into every artifact.
  std::string prune_mode = "gates";
  std::uint64_t seed = 0;
  PathConfig paths;
  SyntheticSpec synthetic;
};

RunConfig default_config();
void validate(const RunConfig& cfg);
RunConfig load_config(const std::string& path);
RunConfig parse_config(const std::string& text);  // same, from a JSON string
std::string config_to_json(const RunConfig& cfg);

// FNV-1a over the token bytes.
std::uint64_t token_hash(std::string_view token);

// Lines of "<label>\t<text>"; text is whitespace-split and each token
// hashed into [0, vocab). Sequences are truncated to max_len.
Dataset load_dataset_tsv(const std::string& path, std::size_t vocab, std::size_t max_len,
                         int num_classes);

// Class-balanced trigger-detection task: label 1 iff the trigger token
// occurs, then labels are flipped with probability label_noise.
Dataset generate_synthetic(const SyntheticSpec& spec, int count, Rng& rng);

struct Checkpoint {
  std::uint32_t version = 1;
  RunConfig config;
  EncoderModel model;
  std::uint64_t rng_state = 0;
};

void save_checkpoint(const EncoderModel& model, const RunConfig& cfg, std::uint64_t rng_state,
                     const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

void emit_report(const PruneReport& report, const RunConfig& cfg, const std::string& path);
PruneReport load_report(const std::string& path);

// Side-by-side table of runs, accuracies in percent.
std::string render_comparison(const std::vector<PruneReport>& reports);

void write_metrics_csv(const MetricsLog& log, const std::string& path);

// Write to <path>.tmp then rename, so readers never see half a file.
void write_file_atomic(const std::string& path, std::string_view bytes);
std::string read_file(const std::string& path);

}  // namespace auber
