#include "auber/optimizer.hpp"

#include <cmath>
#include <string>

#include "auber/errors.hpp"

namespace auber {

void Adam::step(const std::vector<std::span<double>>& params,
                const std::vector<std::span<const double>>& grads) {
  if (params.size() != grads.size()) {
    throw ShapeError("adam got " + std::to_string(params.size()) + " parameter blocks and " +
                     std::to_string(grads.size()) + " gradient blocks");
  }
  if (m_.empty()) {
    m_.resize(params.size());
    v_.resize(params.size());
    for (std::size_t b = 0; b < params.size(); ++b) {
      m_[b].assign(params[b].size(), 0.0);
      v_[b].assign(params[b].size(), 0.0);
    }
  }
  if (m_.size() != params.size()) {
    throw ShapeError("adam block count changed between steps");
  }

  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t b = 0; b < params.size(); ++b) {
    if (params[b].size() != grads[b].size() || params[b].size() != m_[b].size()) {
      throw ShapeError("adam block " + std::to_string(b) + " size mismatch");
    }
    double* p = params[b].data();
    const double* g = grads[b].data();
    double* m = m_[b].data();
    double* v = v_[b].data();
    for (std::size_t i = 0; i < params[b].size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

}  // namespace auber
