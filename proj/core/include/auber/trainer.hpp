#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "auber/model.hpp"
#include "auber/optimizer.hpp"
#include "auber/rng.hpp"

namespace auber {

struct TrainExample {
  std::vector<int> tokens;
  int label = 0;
};

struct Dataset {
  std::vector<TrainExample> examples;
  int num_classes = 2;

  std::size_t size() const { return examples.size(); }
  bool empty() const { return examples.empty(); }
};

struct EvalResult {
  double accuracy = 0.0;
  double mcc = 0.0;
};

// Matthews correlation from a binary confusion matrix; 0 when any
// marginal is empty.
double matthews(long tp, long tn, long fp, long fn);

// Accuracy over the dataset, plus MCC when there are two classes
// (class 1 counted as positive). MCC is 0 otherwise.
EvalResult evaluate(const EncoderModel& model, const Dataset& data);

enum class SplitRatio {
  TrainOneValTwo,  // 1 part fine-tune data, 2 parts reward data
  TrainTwoValOne,
};

struct SplitPair {
  Dataset mini_train;
  Dataset mini_val;
};

// Shuffled split into thirds; the smaller side gets floor(n / 3).
SplitPair split_mini(const Dataset& data, Rng& rng,
                     SplitRatio ratio = SplitRatio::TrainOneValTwo);

struct MetricsRow {
  long epoch = 0;
  std::string phase;
  double accuracy = 0.0;
  double loss = 0.0;
};

struct MetricsLog {
  std::vector<MetricsRow> rows;
  void add(long epoch, std::string phase, double accuracy, double loss) {
    rows.push_back({epoch, std::move(phase), accuracy, loss});
  }
};

// Minibatch Adam over shuffled epochs, fresh optimizer state. Gates
// are never updated. Returns the mean loss of the last epoch. With a
// log, each epoch records the loss plus accuracy on eval_set (or on
// the training data when eval_set is null).
double fine_tune(EncoderModel& model, const Dataset& data, double lr, int epochs, int batch,
                 Rng& rng, const Dataset* eval_set = nullptr, MetricsLog* log = nullptr,
                 const std::string& phase = "train");

// Stop once validation accuracy has not strictly improved for
// `patience` consecutive epochs.
class EarlyStopTracker {
 public:
  explicit EarlyStopTracker(int patience);

  // Feed one epoch's validation accuracy; true means stop now.
  bool observe(double val_accuracy);

  double best() const { return best_; }
  int best_epoch() const { return best_epoch_; }
  int epochs_seen() const { return epoch_; }

 private:
  int patience_;
  int epoch_ = 0;
  int best_epoch_ = 0;
  int since_best_ = 0;
  double best_ = -1.0;
};

struct EarlyStopResult {
  EncoderModel model;  // snapshot of the best epoch
  double val_accuracy = 0.0;
  int best_epoch = 0;
  int epochs_run = 0;
};

// Fine-tune with per-epoch validation and early stopping; returns the
// best epoch's snapshot, never a later one.
EarlyStopResult early_stop_finetune(const EncoderModel& start, const Dataset& train,
                                    const Dataset& val, double lr, int patience, int max_epochs,
                                    int batch, Rng& rng, MetricsLog* log = nullptr);

}  // namespace auber
