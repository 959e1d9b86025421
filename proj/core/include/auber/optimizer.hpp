#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace auber {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam over a fixed list of parameter blocks. Moment buffers are laid
// out to mirror the block list passed to the first step() call.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void set_lr(double lr) { cfg_.lr = lr; }
  const AdamConfig& config() const { return cfg_; }
  long steps() const { return t_; }

  void step(const std::vector<std::span<double>>& params,
            const std::vector<std::span<const double>>& grads);

 private:
  AdamConfig cfg_;
  long t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

}  // namespace auber
