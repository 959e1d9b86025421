#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "auber/orchestrator.hpp"
#include "auber/trainer.hpp"

namespace auber {

enum class ScoreMethod { Random, Confidence, GradientImportance };

std::string to_string(ScoreMethod method);

// One importance score per head; pruning removes the lowest scores
// first.
struct HeadScoreTable {
  std::size_t layers = 0;
  std::size_t heads = 0;
  ScoreMethod method = ScoreMethod::Random;
  std::vector<double> scores;

  double& at(std::size_t l, std::size_t h) { return scores[l * heads + h]; }
  double at(std::size_t l, std::size_t h) const { return scores[l * heads + h]; }
};

HeadScoreTable random_scores(const EncoderModel& model, Rng& rng);

// Mean over one attention matrix's rows of the row maximum.
double mean_row_max(const Matrix& att);

// Mean attention confidence per head across every example and query
// position. Heads with a closed gate score 0.
HeadScoreTable confidence_scores(const EncoderModel& model, const Dataset& data);

// Mean absolute gate gradient per head across the dataset.
HeadScoreTable gradient_importance(const EncoderModel& model, const Dataset& data);

struct BaselineParams {
  double final_lr = 1e-4;
  int patience = 20;
  int max_epochs = 200;
  int batch = 32;
};

// Prune the p lowest-scoring live heads model-wide (never a layer's
// last one), then run the same final fine-tune as the pruning agent.
PruneReport prune_by_scores(EncoderModel& model, const HeadScoreTable& table, std::size_t p,
                            const Dataset& train, const Dataset& dev, const BaselineParams& params,
                            std::uint64_t seed, Rng& rng, MetricsLog* log = nullptr);

}  // namespace auber
