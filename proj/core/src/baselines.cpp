#include "auber/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <tuple>
#include <utility>

#include "auber/errors.hpp"

namespace auber {

std::string to_string(ScoreMethod method) {
  switch (method) {
    case ScoreMethod::Random:
      return "random";
    case ScoreMethod::Confidence:
      return "confidence";
    case ScoreMethod::GradientImportance:
      return "gradient";
  }
  throw InputError("unknown score method");
}

namespace {

HeadScoreTable empty_table(const EncoderModel& model, ScoreMethod method) {
  HeadScoreTable t;
  t.layers = model.layers.size();
  t.heads = model.dims.heads;
  t.method = method;
  t.scores.assign(t.layers * t.heads, 0.0);
  return t;
}

}  // namespace

HeadScoreTable random_scores(const EncoderModel& model, Rng& rng) {
  HeadScoreTable t = empty_table(model, ScoreMethod::Random);
  for (double& s : t.scores) s = rng.next_double();
  return t;
}

double mean_row_max(const Matrix& att) {
  double sum = 0.0;
  for (std::size_t r = 0; r < att.rows(); ++r) {
    double mx = att(r, 0);
    for (std::size_t j = 1; j < att.cols(); ++j) mx = std::max(mx, att(r, j));
    sum += mx;
  }
  return sum / static_cast<double>(att.rows());
}

HeadScoreTable confidence_scores(const EncoderModel& model, const Dataset& data) {
  if (data.empty()) throw InputError("confidence_scores on empty dataset");
  HeadScoreTable t = empty_table(model, ScoreMethod::Confidence);
  std::vector<double> rows(t.layers * t.heads, 0.0);
  for (const TrainExample& ex : data.examples) {
    ForwardResult fwd = model_forward(model, ex.tokens);
    for (std::size_t l = 0; l < t.layers; ++l) {
      for (std::size_t h = 0; h < t.heads; ++h) {
        if (model.layers[l].gates[h] == 0.0) continue;
        const Matrix& att = fwd.cache.layers[l].heads[h].att;
        t.at(l, h) += mean_row_max(att) * static_cast<double>(att.rows());
        rows[l * t.heads + h] += static_cast<double>(att.rows());
      }
    }
  }
  for (std::size_t i = 0; i < t.scores.size(); ++i) {
    if (rows[i] > 0.0) t.scores[i] /= rows[i];
  }
  return t;
}

HeadScoreTable gradient_importance(const EncoderModel& model, const Dataset& data) {
  if (data.empty()) throw InputError("gradient_importance on empty dataset");
  HeadScoreTable t = empty_table(model, ScoreMethod::GradientImportance);
  for (const TrainExample& ex : data.examples) {
    BackwardResult bwd = model_backward(model, ex.tokens, ex.label);
    for (std::size_t l = 0; l < t.layers; ++l)
      for (std::size_t h = 0; h < t.heads; ++h) t.at(l, h) += std::abs(bwd.grads.layers[l].gates[h]);
  }
  for (double& s : t.scores) s /= static_cast<double>(data.size());
  return t;
}

PruneReport prune_by_scores(EncoderModel& model, const HeadScoreTable& table, std::size_t p,
                            const Dataset& train, const Dataset& dev, const BaselineParams& params,
                            std::uint64_t seed, Rng& rng, MetricsLog* log) {
  if (table.layers != model.layers.size() || table.heads != model.dims.heads) {
    throw ShapeError("score table shape does not match the model");
  }
  if (train.empty() || dev.empty()) {
    throw InputError("prune_by_scores needs non-empty train and dev sets");
  }

  std::size_t feasible = 0;
  for (const EncoderLayer& layer : model.layers) {
    const std::size_t live = live_heads(layer);
    feasible += live > 0 ? live - 1 : 0;
  }
  if (p > feasible) {
    throw InputError("cannot prune " + std::to_string(p) + " heads; only " +
                     std::to_string(feasible) + " are removable");
  }

  PruneReport report;
  report.method = to_string(table.method);
  report.seed = seed;
  report.pre = evaluate(model, dev);

  // Global ascending order; ties break on layer then head index.
  std::vector<std::pair<std::size_t, std::size_t>> candidates;
  for (std::size_t l = 0; l < table.layers; ++l)
    for (std::size_t h = 0; h < table.heads; ++h)
      if (model.layers[l].gates[h] != 0.0) candidates.emplace_back(l, h);
  std::sort(candidates.begin(), candidates.end(),
            [&table](const auto& a, const auto& b) {
              return std::make_tuple(table.at(a.first, a.second), a.first, a.second) <
                     std::make_tuple(table.at(b.first, b.second), b.first, b.second);
            });

  std::vector<LayerPolicy> policies(model.layers.size());
  for (std::size_t l = 0; l < policies.size(); ++l) policies[l].layer = l;

  std::size_t pruned = 0;
  for (const auto& [l, h] : candidates) {
    if (pruned == p) break;
    if (live_heads(model.layers[l]) <= 1) continue;  // keep one head per layer
    prune_head(model, l, h);
    policies[l].pruned_heads.push_back(h);
    ++pruned;
  }
  report.total_pruned = pruned;

  const double post_prune_acc = evaluate(model, dev).accuracy;
  for (LayerPolicy& pol : policies) pol.final_mini_val_accuracy = post_prune_acc;
  report.layer_policies = std::move(policies);

  EarlyStopResult finetuned = early_stop_finetune(model, train, dev, params.final_lr,
                                                  params.patience, params.max_epochs, params.batch,
                                                  rng, log);
  model = std::move(finetuned.model);
  report.post = evaluate(model, dev);
  return report;
}

}  // namespace auber
