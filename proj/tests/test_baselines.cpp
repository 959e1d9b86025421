#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "auber/baselines.hpp"
#include "auber/errors.hpp"
#include "support.hpp"

using namespace auber;

namespace {

EncoderModel tiny_model(std::uint64_t seed) {
  Rng rng(seed);
  return make_model(testsupport::tiny_dims(), rng);
}

}  // namespace

TEST_CASE("score method names") {
  CHECK(to_string(ScoreMethod::Random) == "random");
  CHECK(to_string(ScoreMethod::Confidence) == "confidence");
  CHECK(to_string(ScoreMethod::GradientImportance) == "gradient");
}

TEST_CASE("random scores are deterministic in the stream and lie in the unit interval") {
  EncoderModel model = tiny_model(90);
  Rng a(91), b(91);
  const HeadScoreTable ta = random_scores(model, a);
  const HeadScoreTable tb = random_scores(model, b);
  CHECK(ta.layers == 2);
  CHECK(ta.heads == 2);
  CHECK(ta.method == ScoreMethod::Random);
  REQUIRE(ta.scores.size() == 4);
  for (std::size_t i = 0; i < ta.scores.size(); ++i) {
    CHECK(ta.scores[i] == tb.scores[i]);
    CHECK(ta.scores[i] >= 0.0);
    CHECK(ta.scores[i] < 1.0);
  }
}

TEST_CASE("mean_row_max on a hand matrix") {
  const Matrix att = Matrix::from_rows({{0.9, 0.1}, {0.2, 0.8}});
  CHECK(mean_row_max(att) == doctest::Approx(0.85).epsilon(1e-15));
  const Matrix single = Matrix::from_rows({{1.0}});
  CHECK(mean_row_max(single) == 1.0);
}

TEST_CASE("confidence of single-token sequences is exactly one") {
  EncoderModel model = tiny_model(92);
  Dataset data;
  data.examples.push_back({{3}, 0});
  data.examples.push_back({{7}, 1});
  const HeadScoreTable t = confidence_scores(model, data);
  for (double s : t.scores) CHECK(s == 1.0);
}

TEST_CASE("confidence scores average row maxima and stay above chance") {
  EncoderModel model = tiny_model(93);
  Dataset data = testsupport::random_dataset(model.dims, 10, 94);

  const HeadScoreTable t = confidence_scores(model, data);
  for (double s : t.scores) {
    // Each row max of an N-point distribution is at least 1/N.
    CHECK(s >= 1.0 / static_cast<double>(model.dims.max_len));
    CHECK(s <= 1.0);
  }

  // Independent accumulation from the forward caches.
  std::vector<double> sums(4, 0.0), rows(4, 0.0);
  for (const TrainExample& ex : data.examples) {
    const ForwardResult fwd = model_forward(model, ex.tokens);
    for (std::size_t l = 0; l < 2; ++l)
      for (std::size_t h = 0; h < 2; ++h) {
        const Matrix& att = fwd.cache.layers[l].heads[h].att;
        sums[l * 2 + h] += mean_row_max(att) * static_cast<double>(att.rows());
        rows[l * 2 + h] += static_cast<double>(att.rows());
      }
  }
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(t.scores[i] == doctest::Approx(sums[i] / rows[i]).epsilon(1e-12));
}

TEST_CASE("a gated head scores zero confidence") {
  EncoderModel model = tiny_model(95);
  model.layers[1].gates[0] = 0.0;
  Dataset data = testsupport::random_dataset(model.dims, 6, 96);
  const HeadScoreTable t = confidence_scores(model, data);
  CHECK(t.at(1, 0) == 0.0);
  CHECK(t.at(1, 1) > 0.0);
  CHECK_THROWS_AS(confidence_scores(model, Dataset{}), InputError);
}

TEST_CASE("example order does not change confidence scores") {
  EncoderModel model = tiny_model(97);
  Dataset data = testsupport::random_dataset(model.dims, 8, 98);
  Dataset reversed = data;
  std::reverse(reversed.examples.begin(), reversed.examples.end());
  const HeadScoreTable a = confidence_scores(model, data);
  const HeadScoreTable b = confidence_scores(model, reversed);
  for (std::size_t i = 0; i < a.scores.size(); ++i)
    CHECK(a.scores[i] == doctest::Approx(b.scores[i]).epsilon(1e-12));
}

TEST_CASE("gradient importance matches a finite-difference oracle") {
  EncoderModel model = tiny_model(99);
  Dataset data = testsupport::random_dataset(model.dims, 5, 100);
  const HeadScoreTable t = gradient_importance(model, data);

  const double h_step = 1e-5;
  for (std::size_t l = 0; l < 2; ++l) {
    for (std::size_t h = 0; h < 2; ++h) {
      double mean_abs = 0.0;
      for (const TrainExample& ex : data.examples) {
        EncoderModel up = model;
        EncoderModel down = model;
        up.layers[l].gates[h] += h_step;
        down.layers[l].gates[h] -= h_step;
        const double lu = softmax_xent(model_forward(up, ex.tokens).logits, ex.label).loss;
        const double ld = softmax_xent(model_forward(down, ex.tokens).logits, ex.label).loss;
        mean_abs += std::abs((lu - ld) / (2.0 * h_step));
      }
      mean_abs /= static_cast<double>(data.size());
      CHECK(t.at(l, h) == doctest::Approx(mean_abs).epsilon(1e-4));
    }
  }
}

TEST_CASE("a silenced head carries zero gradient importance") {
  EncoderModel model = tiny_model(101);
  model.layers[0].heads[1].wv.fill(0.0);
  Dataset data = testsupport::random_dataset(model.dims, 4, 102);
  const HeadScoreTable t = gradient_importance(model, data);
  CHECK(t.at(0, 1) == 0.0);
  CHECK(t.at(0, 0) != 0.0);
  CHECK_THROWS_AS(gradient_importance(model, Dataset{}), InputError);
}

TEST_CASE("duplicated heads earn identical importance") {
  ModelDims dims = testsupport::tiny_dims();
  Rng rng(103);
  EncoderModel model = make_model(dims, rng);
  // Make head 1 a clone of head 0, including its slice of the output
  // projection, so both contribute identically.
  model.layers[0].heads[1] = model.layers[0].heads[0];
  const std::size_t m = dims.value_dim;
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < dims.embed_dim; ++c)
      model.layers[0].wo(m + r, c) = model.layers[0].wo(r, c);

  Dataset data = testsupport::random_dataset(dims, 6, 104);
  const HeadScoreTable grad = gradient_importance(model, data);
  CHECK(grad.at(0, 0) == doctest::Approx(grad.at(0, 1)).epsilon(1e-12));
  const HeadScoreTable conf = confidence_scores(model, data);
  CHECK(conf.at(0, 0) == doctest::Approx(conf.at(0, 1)).epsilon(1e-12));
}

TEST_CASE("prune_by_scores removes the weakest heads in score order") {
  ModelDims dims = testsupport::tiny_dims();
  dims.layers = 1;
  dims.heads = 4;
  Rng rng(105);
  EncoderModel model = make_model(dims, rng);
  Dataset train = testsupport::random_dataset(dims, 12, 106);
  Dataset dev = testsupport::random_dataset(dims, 6, 107);

  HeadScoreTable table;
  table.layers = 1;
  table.heads = 4;
  table.method = ScoreMethod::Confidence;
  table.scores = {0.4, 0.1, 0.3, 0.2};

  BaselineParams params;
  params.max_epochs = 3;
  params.patience = 2;
  params.batch = 8;
  const EncoderModel before = model;
  Rng prng(108);
  const PruneReport rep = prune_by_scores(model, table, 3, train, dev, params, 108, prng);

  CHECK(rep.method == "confidence");
  CHECK(rep.total_pruned == 3);
  CHECK(rep.order.empty());
  REQUIRE(rep.layer_policies.size() == 1);
  CHECK(rep.layer_policies[0].pruned_heads == std::vector<std::size_t>{1, 3, 2});
  CHECK(model.layers[0].gates[0] == 1.0);  // best head survives
  CHECK(rep.pre.accuracy == evaluate(before, dev).accuracy);
  CHECK(rep.post.accuracy == evaluate(model, dev).accuracy);

  // The recorded accuracy is measured after pruning, before tuning.
  EncoderModel probe = before;
  prune_head(probe, 0, 1);
  prune_head(probe, 0, 3);
  prune_head(probe, 0, 2);
  CHECK(rep.layer_policies[0].final_mini_val_accuracy == evaluate(probe, dev).accuracy);
}

TEST_CASE("prune_by_scores never empties a layer") {
  EncoderModel model = tiny_model(109);  // 2 layers x 2 heads
  Dataset train = testsupport::random_dataset(model.dims, 9, 110);
  Dataset dev = testsupport::random_dataset(model.dims, 6, 111);

  // Both weakest heads sit in layer 0; only one of them may go.
  HeadScoreTable table;
  table.layers = 2;
  table.heads = 2;
  table.scores = {0.1, 0.2, 0.8, 0.9};

  BaselineParams params;
  params.max_epochs = 2;
  params.patience = 1;
  params.batch = 4;
  Rng rng(112);
  const PruneReport rep = prune_by_scores(model, table, 2, train, dev, params, 112, rng);
  CHECK(rep.total_pruned == 2);
  CHECK(rep.layer_policies[0].pruned_heads == std::vector<std::size_t>{0});
  CHECK(rep.layer_policies[1].pruned_heads == std::vector<std::size_t>{0});
  CHECK(live_heads(model.layers[0]) == 1);
  CHECK(live_heads(model.layers[1]) == 1);
}

TEST_CASE("prune_by_scores validates its inputs") {
  EncoderModel model = tiny_model(113);
  Dataset train = testsupport::random_dataset(model.dims, 9, 114);
  Dataset dev = testsupport::random_dataset(model.dims, 3, 115);
  Rng rng(116);

  HeadScoreTable table;
  table.layers = 2;
  table.heads = 2;
  table.scores = {0.1, 0.2, 0.3, 0.4};
  BaselineParams params;
  params.max_epochs = 1;

  // More prunes than the keep-one rule allows: feasible is 2.
  CHECK_THROWS_AS(prune_by_scores(model, table, 3, train, dev, params, 0, rng), InputError);

  HeadScoreTable wrong = table;
  wrong.heads = 3;
  wrong.scores.resize(6, 0.0);
  CHECK_THROWS_AS(prune_by_scores(model, wrong, 1, train, dev, params, 0, rng), ShapeError);
  CHECK_THROWS_AS(prune_by_scores(model, table, 1, Dataset{}, dev, params, 0, rng), InputError);
}

TEST_CASE("pruning zero heads still fine-tunes but closes no gates") {
  EncoderModel model = tiny_model(117);
  Dataset train = testsupport::random_dataset(model.dims, 9, 118);
  Dataset dev = testsupport::random_dataset(model.dims, 3, 119);

  Rng srng(120);
  const HeadScoreTable table = random_scores(model, srng);
  BaselineParams params;
  params.max_epochs = 2;
  params.patience = 1;
  params.batch = 4;
  Rng rng(121);
  const PruneReport rep = prune_by_scores(model, table, 0, train, dev, params, 121, rng);
  CHECK(rep.total_pruned == 0);
  for (const EncoderLayer& layer : model.layers)
    for (double g : layer.gates) CHECK(g == 1.0);
  for (const LayerPolicy& lp : rep.layer_policies) CHECK(lp.pruned_heads.empty());
}

TEST_CASE("already-closed gates are not counted or re-pruned") {
  ModelDims dims = testsupport::tiny_dims();
  dims.layers = 1;
  dims.heads = 3;
  Rng mrng(122);
  EncoderModel model = make_model(dims, mrng);
  prune_head(model, 0, 2);

  Dataset train = testsupport::random_dataset(dims, 9, 123);
  Dataset dev = testsupport::random_dataset(dims, 3, 124);
  HeadScoreTable table;
  table.layers = 1;
  table.heads = 3;
  table.scores = {0.5, 0.4, 0.0};  // the closed head also has the lowest score

  BaselineParams params;
  params.max_epochs = 1;
  params.batch = 4;
  Rng rng(125);
  // Feasible prunes: 2 live heads - 1.
  CHECK_THROWS_AS(prune_by_scores(model, table, 2, train, dev, params, 0, rng), InputError);
  const PruneReport rep = prune_by_scores(model, table, 1, train, dev, params, 0, rng);
  CHECK(rep.layer_policies[0].pruned_heads == std::vector<std::size_t>{1});
  CHECK(model.layers[0].gates[0] == 1.0);
}
