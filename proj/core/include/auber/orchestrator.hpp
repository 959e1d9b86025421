#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "auber/dqn.hpp"
#include "auber/state.hpp"
#include "auber/trainer.hpp"

namespace auber {

struct StepOutcome {
  std::optional<LayerState> next;  // empty when the episode ended
  double reward = 0.0;
};

// Episode interface the agent trains against: reset to a fresh layer,
// then prune (0..H-1) or quit (H).
class PruneEnv {
 public:
  virtual ~PruneEnv() = default;
  virtual LayerState reset() = 0;
  virtual StepOutcome step(int action) = 0;
  virtual std::size_t heads() const = 0;
};

// Prunes gates of one layer of a live model; the reward of a prune is
// the change in mini-val accuracy it causes, quit pays 0. reset()
// reopens the layer's gates and leaves the rest of the model alone.
class RealEnv final : public PruneEnv {
 public:
  RealEnv(EncoderModel& model, std::size_t layer, const Dataset& mini_val,
          const StateRecipe& recipe);

  LayerState reset() override;
  StepOutcome step(int action) override;
  std::size_t heads() const override;

  double original_accuracy() const { return original_accuracy_; }
  double previous_accuracy() const { return prev_accuracy_; }

 private:
  EncoderModel* model_;
  std::size_t layer_;
  const Dataset* mini_val_;
  StateRecipe recipe_;
  double original_accuracy_;
  double prev_accuracy_;
  LayerState current_;
  bool terminal_ = true;
  std::size_t prunes_ = 0;
};

// Scripted environment with one fixed reward per head and a uniform
// starting state; used to test that learning finds planted structure.
class MockEnv final : public PruneEnv {
 public:
  MockEnv(std::size_t heads, std::vector<double> prune_rewards, double quit_reward = 0.0);

  LayerState reset() override;
  StepOutcome step(int action) override;
  std::size_t heads() const override;

 private:
  std::size_t heads_;
  std::vector<double> prune_rewards_;
  double quit_reward_;
  LayerState current_;
  bool terminal_ = true;
  std::size_t prunes_ = 0;
};

// One episode: act until quit, with the quit forced once only one head
// would remain. Every transition goes to the agent's memory and one
// optimize call runs at the end.
std::vector<Transition> run_episode(PruneEnv& env, DqnAgent& agent, Rng& rng);

// Fresh agent trained for cfg.episodes episodes on the environment.
DqnAgent train_agent(PruneEnv& env, const AgentConfig& cfg, Rng& rng);

// train_agent on a RealEnv for the given layer; the layer's gates are
// reopened before returning, so the model comes back unpruned.
DqnAgent train_layer(EncoderModel& model, std::size_t layer, const AgentConfig& cfg,
                     const Dataset& mini_val, const StateRecipe& recipe, Rng& rng);

struct LayerPolicy {
  std::size_t layer = 0;
  std::vector<std::size_t> pruned_heads;  // in prune order
  double final_mini_val_accuracy = 0.0;
};

// Greedy rollout (eps 0) of the trained agent; the prunes it picks are
// applied to the model for good.
LayerPolicy extract_policy(EncoderModel& model, std::size_t layer, const DqnAgent& agent,
                           const Dataset& mini_val, const StateRecipe& recipe, Rng& rng);

struct PruneReport {
  std::string method = "auber";
  std::vector<LayerPolicy> layer_policies;
  std::vector<std::size_t> order;  // layer visit order; empty for baselines
  std::size_t total_pruned = 0;
  EvalResult pre;
  EvalResult post;
  std::uint64_t seed = 0;
};

struct AuberParams {
  AgentConfig agent;
  StateRecipe recipe;
  bool reverse_order = false;
  SplitRatio split = SplitRatio::TrainOneValTwo;
  double inter_lr = 2e-6;
  int inter_epochs = 1;
  double final_lr = 1e-4;
  int patience = 20;
  int max_epochs = 200;
  int batch = 32;
};

// Layer-by-layer pruning: per layer, split the training data, train an
// agent against mini-val rewards, apply its greedy policy, then nudge
// the survivors on mini-train. A final early-stopped fine-tune on the
// full training data closes the run.
PruneReport run_auber(EncoderModel& model, const Dataset& train, const Dataset& dev,
                      const AuberParams& params, std::uint64_t seed, Rng& rng,
                      MetricsLog* log = nullptr);

}  // namespace auber
