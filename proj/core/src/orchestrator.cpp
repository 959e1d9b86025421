#include "auber/orchestrator.hpp"

#include <algorithm>
#include <string>
#include <utility>

#include "auber/errors.hpp"

namespace auber {

RealEnv::RealEnv(EncoderModel& model, std::size_t layer, const Dataset& mini_val,
                 const StateRecipe& recipe)
    : model_(&model), layer_(layer), mini_val_(&mini_val), recipe_(recipe) {
  if (layer >= model.layers.size()) {
    throw InputError("layer index " + std::to_string(layer) + " outside " +
                     std::to_string(model.layers.size()) + " layers");
  }
  if (mini_val.empty()) throw InputError("reward dataset is empty");
  if (live_heads(model.layers[layer]) != model.layers[layer].gates.size()) {
    throw StateError("pruning episodes need the target layer fully open");
  }
  original_accuracy_ = evaluate(model, mini_val).accuracy;
  prev_accuracy_ = original_accuracy_;
}

std::size_t RealEnv::heads() const { return model_->layers[layer_].gates.size(); }

LayerState RealEnv::reset() {
  reset_gates(*model_, layer_);
  prev_accuracy_ = original_accuracy_;
  current_ = layer_state(*model_, layer_, recipe_);
  terminal_ = false;
  prunes_ = 0;
  return current_;
}

StepOutcome RealEnv::step(int action) {
  if (terminal_) throw PolicyError("step on a finished episode; call reset first");
  const std::size_t H = heads();
  if (action < 0 || static_cast<std::size_t>(action) > H) {
    throw PolicyError("action " + std::to_string(action) + " outside [0, " + std::to_string(H) +
                      "]");
  }
  if (static_cast<std::size_t>(action) == H) {
    terminal_ = true;
    return {std::nullopt, 0.0};
  }

  prune_head(*model_, layer_, static_cast<std::size_t>(action));
  ++prunes_;
  const double acc = evaluate(*model_, *mini_val_).accuracy;
  const double reward = acc - prev_accuracy_;
  prev_accuracy_ = acc;
  mark_pruned(current_, static_cast<std::size_t>(action));
  return {current_, reward};
}

MockEnv::MockEnv(std::size_t heads, std::vector<double> prune_rewards, double quit_reward)
    : heads_(heads), prune_rewards_(std::move(prune_rewards)), quit_reward_(quit_reward) {
  if (heads < 2) throw InputError("mock environment needs at least 2 heads");
  if (prune_rewards_.size() != heads) {
    throw InputError("mock environment needs one reward per head, got " +
                     std::to_string(prune_rewards_.size()));
  }
}

std::size_t MockEnv::heads() const { return heads_; }

LayerState MockEnv::reset() {
  current_.values.assign(heads_, 1.0 / static_cast<double>(heads_));
  current_.pruned.assign(heads_, false);
  terminal_ = false;
  prunes_ = 0;
  return current_;
}

StepOutcome MockEnv::step(int action) {
  if (terminal_) throw PolicyError("step on a finished episode; call reset first");
  if (action < 0 || static_cast<std::size_t>(action) > heads_) {
    throw PolicyError("action " + std::to_string(action) + " outside [0, " +
                      std::to_string(heads_) + "]");
  }
  if (static_cast<std::size_t>(action) == heads_) {
    terminal_ = true;
    return {std::nullopt, quit_reward_};
  }
  if (current_.pruned[static_cast<std::size_t>(action)]) {
    throw PolicyError("head " + std::to_string(action) + " already pruned this episode");
  }
  ++prunes_;
  mark_pruned(current_, static_cast<std::size_t>(action));
  return {current_, prune_rewards_[static_cast<std::size_t>(action)]};
}

std::vector<Transition> run_episode(PruneEnv& env, DqnAgent& agent, Rng& rng) {
  const std::size_t H = env.heads();
  std::vector<Transition> episode;
  LayerState state = env.reset();
  std::size_t prunes = 0;

  for (;;) {
    int action;
    if (prunes == H - 1) {
      // Only one head left; the quit is forced, not chosen.
      action = static_cast<int>(H);
    } else {
      std::vector<bool> valid(H + 1, true);
      for (std::size_t h = 0; h < H; ++h) valid[h] = !state.pruned[h];
      action = agent.select(state.values, valid, rng);
    }

    StepOutcome out = env.step(action);
    Transition t;
    t.state = state.values;
    t.action = action;
    t.reward = out.reward;
    if (out.next) t.next_state = out.next->values;
    agent.remember(t);
    episode.push_back(std::move(t));

    if (!out.next) break;
    state = *out.next;
    ++prunes;
  }

  agent.optimize(rng);
  return episode;
}

DqnAgent train_agent(PruneEnv& env, const AgentConfig& cfg, Rng& rng) {
  DqnAgent agent(env.heads(), cfg, rng);
  for (int e = 0; e < cfg.episodes; ++e) run_episode(env, agent, rng);
  return agent;
}

DqnAgent train_layer(EncoderModel& model, std::size_t layer, const AgentConfig& cfg,
                     const Dataset& mini_val, const StateRecipe& recipe, Rng& rng) {
  RealEnv env(model, layer, mini_val, recipe);
  DqnAgent agent = train_agent(env, cfg, rng);
  reset_gates(model, layer);
  return agent;
}

LayerPolicy extract_policy(EncoderModel& model, std::size_t layer, const DqnAgent& agent,
                           const Dataset& mini_val, const StateRecipe& recipe, Rng& rng) {
  RealEnv env(model, layer, mini_val, recipe);
  const std::size_t H = env.heads();

  LayerPolicy policy;
  policy.layer = layer;
  LayerState state = env.reset();

  for (;;) {
    int action;
    if (policy.pruned_heads.size() == H - 1) {
      action = static_cast<int>(H);
    } else {
      std::vector<bool> valid(H + 1, true);
      for (std::size_t h = 0; h < H; ++h) valid[h] = !state.pruned[h];
      action = select_action(agent.policy(), state.values, 0.0, valid, rng);
    }
    StepOutcome out = env.step(action);
    if (!out.next) break;
    policy.pruned_heads.push_back(static_cast<std::size_t>(action));
    state = *out.next;
  }

  policy.final_mini_val_accuracy = env.previous_accuracy();
  return policy;
}

PruneReport run_auber(EncoderModel& model, const Dataset& train, const Dataset& dev,
                      const AuberParams& params, std::uint64_t seed, Rng& rng, MetricsLog* log) {
  if (train.empty() || dev.empty()) {
    throw InputError("run_auber needs non-empty train and dev sets");
  }

  PruneReport report;
  report.seed = seed;
  report.pre = evaluate(model, dev);

  report.order.resize(model.layers.size());
  for (std::size_t l = 0; l < report.order.size(); ++l) report.order[l] = l;
  if (params.reverse_order) std::reverse(report.order.begin(), report.order.end());

  for (std::size_t l : report.order) {
    SplitPair split = split_mini(train, rng, params.split);
    DqnAgent agent = train_layer(model, l, params.agent, split.mini_val, params.recipe, rng);
    LayerPolicy policy = extract_policy(model, l, agent, split.mini_val, params.recipe, rng);
    report.total_pruned += policy.pruned_heads.size();
    report.layer_policies.push_back(std::move(policy));

    const double loss =
        fine_tune(model, split.mini_train, params.inter_lr, params.inter_epochs, params.batch, rng);
    if (log) {
      log->add(static_cast<long>(l), "layer_finetune", evaluate(model, split.mini_val).accuracy,
               loss);
    }
  }

  EarlyStopResult finetuned = early_stop_finetune(model, train, dev, params.final_lr,
                                                  params.patience, params.max_epochs, params.batch,
                                                  rng, log);
  model = std::move(finetuned.model);
  report.post = evaluate(model, dev);
  return report;
}

}  // namespace auber
