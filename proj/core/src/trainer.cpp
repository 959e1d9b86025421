#include "auber/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>

#include "auber/errors.hpp"

namespace auber {

double matthews(long tp, long tn, long fp, long fn) {
  const double num = static_cast<double>(tp) * tn - static_cast<double>(fp) * fn;
  const double den = std::sqrt(static_cast<double>(tp + fp)) * std::sqrt(static_cast<double>(tp + fn)) *
                     std::sqrt(static_cast<double>(tn + fp)) * std::sqrt(static_cast<double>(tn + fn));
  if (den == 0.0) return 0.0;
  return num / den;
}

EvalResult evaluate(const EncoderModel& model, const Dataset& data) {
  if (data.empty()) throw InputError("evaluate on empty dataset");
  long correct = 0;
  long tp = 0, tn = 0, fp = 0, fn = 0;
  for (const TrainExample& ex : data.examples) {
    ForwardResult fwd = model_forward(model, ex.tokens);
    const int pred = static_cast<int>(argmax(fwd.logits));
    if (pred == ex.label) ++correct;
    if (data.num_classes == 2) {
      if (ex.label == 1) {
        (pred == 1 ? tp : fn) += 1;
      } else {
        (pred == 0 ? tn : fp) += 1;
      }
    }
  }
  EvalResult r;
  r.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  r.mcc = data.num_classes == 2 ? matthews(tp, tn, fp, fn) : 0.0;
  return r;
}

SplitPair split_mini(const Dataset& data, Rng& rng, SplitRatio ratio) {
  if (data.size() < 3) {
    throw InputError("split_mini needs at least 3 examples, got " + std::to_string(data.size()));
  }
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), 0);
  shuffle(idx, rng);

  const std::size_t third = data.size() / 3;
  SplitPair out;
  out.mini_train.num_classes = data.num_classes;
  out.mini_val.num_classes = data.num_classes;
  // The first third is the small side of the split.
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const bool small_side = i < third;
    const bool to_train = (ratio == SplitRatio::TrainOneValTwo) ? small_side : !small_side;
    (to_train ? out.mini_train : out.mini_val).examples.push_back(data.examples[idx[i]]);
  }
  return out;
}

namespace {

// Mean gradient over one minibatch, accumulated into acc.
double batch_gradients(const EncoderModel& model, const Dataset& data,
                       const std::vector<std::size_t>& order, std::size_t begin, std::size_t end,
                       GradientSet& acc) {
  const double scale = 1.0 / static_cast<double>(end - begin);
  double loss = 0.0;
  auto acc_blocks = gradient_blocks(acc);
  for (auto& b : acc_blocks) std::fill(b.begin(), b.end(), 0.0);
  for (std::size_t i = begin; i < end; ++i) {
    const TrainExample& ex = data.examples[order[i]];
    BackwardResult bwd = model_backward(model, ex.tokens, ex.label);
    loss += bwd.loss;
    auto src = gradient_blocks(bwd.grads);
    for (std::size_t b = 0; b < src.size(); ++b)
      for (std::size_t k = 0; k < src[b].size(); ++k) acc_blocks[b][k] += src[b][k];
  }
  for (auto& b : acc_blocks)
    for (double& g : b) g *= scale;
  return loss * scale;
}

double run_epoch(EncoderModel& model, const Dataset& data, int batch, Adam& opt, Rng& rng) {
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  shuffle(order, rng);

  GradientSet acc = make_gradient_set(model);
  auto params = parameter_blocks(model);
  double epoch_loss = 0.0;
  std::size_t batches = 0;
  for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(batch)) {
    const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(batch));
    epoch_loss += batch_gradients(model, data, order, begin, end, acc);
    opt.step(params, gradient_blocks(std::as_const(acc)));
    ++batches;
  }
  return epoch_loss / static_cast<double>(batches);
}

}  // namespace

double fine_tune(EncoderModel& model, const Dataset& data, double lr, int epochs, int batch,
                 Rng& rng, const Dataset* eval_set, MetricsLog* log, const std::string& phase) {
  if (data.empty()) throw InputError("fine_tune on empty dataset");
  if (epochs < 0) throw InputError("fine_tune needs a non-negative epoch count");
  if (batch < 1) throw InputError("fine_tune batch size must be positive");
  if (lr < 0.0) throw InputError("fine_tune learning rate must be non-negative");

  Adam opt({.lr = lr});
  double last = 0.0;
  for (int e = 0; e < epochs; ++e) {
    last = run_epoch(model, data, batch, opt, rng);
    if (log) {
      const double acc = evaluate(model, eval_set ? *eval_set : data).accuracy;
      log->add(e + 1, phase, acc, last);
    }
  }
  return last;
}

EarlyStopTracker::EarlyStopTracker(int patience) : patience_(patience) {
  if (patience < 1) throw InputError("early stop patience must be positive");
}

bool EarlyStopTracker::observe(double val_accuracy) {
  ++epoch_;
  if (val_accuracy > best_) {
    best_ = val_accuracy;
    best_epoch_ = epoch_;
    since_best_ = 0;
  } else {
    ++since_best_;
  }
  return since_best_ >= patience_;
}

EarlyStopResult early_stop_finetune(const EncoderModel& start, const Dataset& train,
                                    const Dataset& val, double lr, int patience, int max_epochs,
                                    int batch, Rng& rng, MetricsLog* log) {
  if (train.empty() || val.empty()) {
    throw InputError("early_stop_finetune needs non-empty train and validation sets");
  }
  if (max_epochs < 1) throw InputError("max_epochs must be positive");

  EncoderModel model = start;
  Adam opt({.lr = lr});
  EarlyStopTracker tracker(patience);
  EarlyStopResult result;
  result.model = start;

  for (int e = 1; e <= max_epochs; ++e) {
    const double loss = run_epoch(model, train, batch, opt, rng);
    const EvalResult ev = evaluate(model, val);
    if (log) log->add(e, "finetune", ev.accuracy, loss);
    const bool was_best = ev.accuracy > tracker.best();
    const bool stop = tracker.observe(ev.accuracy);
    if (was_best) result.model = model;
    if (stop) break;
  }
  result.val_accuracy = tracker.best();
  result.best_epoch = tracker.best_epoch();
  result.epochs_run = tracker.epochs_seen();
  return result;
}

}  // namespace auber
