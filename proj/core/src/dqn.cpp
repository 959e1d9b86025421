#include "auber/dqn.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "auber/errors.hpp"

namespace auber {

namespace {

AgentConfig validated(const AgentConfig& cfg) {
  validate(cfg);
  return cfg;
}

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<const EMat> emap(const Matrix& m) {
  return Eigen::Map<const EMat>(m.data(), static_cast<Eigen::Index>(m.rows()),
                                static_cast<Eigen::Index>(m.cols()));
}

Eigen::Map<EMat> emap(Matrix& m) {
  return Eigen::Map<EMat>(m.data(), static_cast<Eigen::Index>(m.rows()),
                          static_cast<Eigen::Index>(m.cols()));
}

// out = x * w, then the bias added to every row.
Matrix affine(const Matrix& x, const Matrix& w, const std::vector<double>& b) {
  Matrix out(x.rows(), w.cols());
  emap(out).noalias() = emap(x) * emap(w);
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t j = 0; j < out.cols(); ++j) out(r, j) += b[j];
  return out;
}

Matrix leaky_matrix(const Matrix& z) {
  Matrix a(z.rows(), z.cols());
  for (std::size_t i = 0; i < z.size(); ++i) a.storage()[i] = leaky_relu(z.storage()[i]);
  return a;
}

struct BatchCache {
  Matrix z1, a1, z2, a2, z3, a3, out;
};

BatchCache forward_cached(const QNet& net, const Matrix& states) {
  BatchCache c;
  c.z1 = affine(states, net.w1, net.b1);
  c.a1 = leaky_matrix(c.z1);
  c.z2 = affine(c.a1, net.w2, net.b2);
  c.a2 = leaky_matrix(c.z2);
  c.z3 = affine(c.a2, net.w3, net.b3);
  c.a3 = leaky_matrix(c.z3);
  c.out = affine(c.a3, net.w4, net.b4);
  return c;
}

QNet zeros_like(const QNet& net) {
  QNet z;
  z.w1 = Matrix(net.w1.rows(), net.w1.cols());
  z.w2 = Matrix(net.w2.rows(), net.w2.cols());
  z.w3 = Matrix(net.w3.rows(), net.w3.cols());
  z.w4 = Matrix(net.w4.rows(), net.w4.cols());
  z.b1.assign(net.b1.size(), 0.0);
  z.b2.assign(net.b2.size(), 0.0);
  z.b3.assign(net.b3.size(), 0.0);
  z.b4.assign(net.b4.size(), 0.0);
  return z;
}

void add_colsum(const Matrix& m, std::vector<double>& out) {
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out[j] += m(i, j);
}

// dz = da through the leaky ReLU that produced a from z.
Matrix leaky_backward(const Matrix& da, const Matrix& z) {
  Matrix dz(da.rows(), da.cols());
  for (std::size_t i = 0; i < da.size(); ++i)
    dz.storage()[i] = da.storage()[i] * (z.storage()[i] > 0.0 ? 1.0 : 0.01);
  return dz;
}

}  // namespace

void validate(const AgentConfig& cfg) {
  if (cfg.eps_start < 0.0 || cfg.eps_start > 1.0 || cfg.eps_end < 0.0 || cfg.eps_end > 1.0)
    throw InputError("epsilon bounds must lie in [0, 1]");
  if (cfg.eps_end > cfg.eps_start) throw InputError("eps_end must not exceed eps_start");
  if (cfg.eps_decay <= 0.0) throw InputError("eps_decay must be positive");
  if (cfg.batch < 1) throw InputError("agent batch size must be positive");
  if (cfg.memory < static_cast<std::size_t>(cfg.batch))
    throw InputError("replay capacity below the batch size would never optimize");
  if (cfg.gamma < 0.0 || cfg.gamma > 1.0) throw InputError("gamma must lie in [0, 1]");
  if (cfg.lr < 0.0) throw InputError("agent learning rate must be non-negative");
  if (cfg.tau_sync < 1) throw InputError("tau_sync must be positive");
  if (cfg.episodes < 0) throw InputError("episode count must be non-negative");
  if (cfg.hidden < 1) throw InputError("hidden width must be positive");
}

QNet make_qnet(std::size_t heads, int hidden, Rng& rng) {
  if (heads < 1) throw InputError("qnet needs at least one head input");
  if (hidden < 1) throw InputError("qnet hidden width must be positive");
  const std::size_t h = static_cast<std::size_t>(hidden);
  QNet net;
  net.w1 = Matrix(heads, h);
  net.w2 = Matrix(h, h);
  net.w3 = Matrix(h, h);
  net.w4 = Matrix(h, heads + 1);
  fill_xavier(net.w1, rng);
  fill_xavier(net.w2, rng);
  fill_xavier(net.w3, rng);
  fill_xavier(net.w4, rng);
  net.b1.assign(h, 0.0);
  net.b2.assign(h, 0.0);
  net.b3.assign(h, 0.0);
  net.b4.assign(heads + 1, 0.0);
  return net;
}

void copy_parameters(const QNet& from, QNet& to) {
  auto src = qnet_blocks(from);
  auto dst = qnet_blocks(to);
  for (std::size_t b = 0; b < src.size(); ++b) {
    if (src[b].size() != dst[b].size()) throw ShapeError("copy between differently shaped qnets");
    std::copy(src[b].begin(), src[b].end(), dst[b].begin());
  }
}

std::vector<std::span<double>> qnet_blocks(QNet& net) {
  return {std::span<double>(net.w1.storage()), std::span<double>(net.b1),
          std::span<double>(net.w2.storage()), std::span<double>(net.b2),
          std::span<double>(net.w3.storage()), std::span<double>(net.b3),
          std::span<double>(net.w4.storage()), std::span<double>(net.b4)};
}

std::vector<std::span<const double>> qnet_blocks(const QNet& net) {
  return {std::span<const double>(net.w1.storage()), std::span<const double>(net.b1),
          std::span<const double>(net.w2.storage()), std::span<const double>(net.b2),
          std::span<const double>(net.w3.storage()), std::span<const double>(net.b3),
          std::span<const double>(net.w4.storage()), std::span<const double>(net.b4)};
}

double leaky_relu(double x) { return x > 0.0 ? x : 0.01 * x; }

Matrix qnet_forward_batch(const QNet& net, const Matrix& states) {
  if (states.cols() != net.input()) {
    throw ShapeError("qnet expects " + std::to_string(net.input()) + " inputs, got " +
                     std::to_string(states.cols()));
  }
  return forward_cached(net, states).out;
}

std::vector<double> qnet_forward(const QNet& net, std::span<const double> state) {
  Matrix s(1, state.size());
  std::copy(state.begin(), state.end(), s.storage().begin());
  Matrix out = qnet_forward_batch(net, s);
  return out.storage();
}

double epsilon_at(long step, const AgentConfig& cfg) {
  if (step < 0) throw InputError("epsilon schedule step must be non-negative");
  return cfg.eps_end +
         (cfg.eps_start - cfg.eps_end) * std::exp(-static_cast<double>(step) / cfg.eps_decay);
}

int select_action(const QNet& net, std::span<const double> state, double eps,
                  const std::vector<bool>& valid, Rng& rng) {
  if (state.size() != net.input()) {
    throw ShapeError("state has " + std::to_string(state.size()) + " entries, net expects " +
                     std::to_string(net.input()));
  }
  if (valid.size() != net.output()) {
    throw ShapeError("valid mask covers " + std::to_string(valid.size()) + " actions, net has " +
                     std::to_string(net.output()));
  }
  if (!valid.back()) throw PolicyError("the quit action must stay selectable");

  // One draw for the explore decision in every call, even at eps 0 or
  // 1, so rollouts consume the stream identically either way.
  const double u = rng.next_double();
  if (u < eps) {
    std::vector<int> options;
    for (std::size_t a = 0; a < valid.size(); ++a)
      if (valid[a]) options.push_back(static_cast<int>(a));
    return options[rng.index(options.size())];
  }

  const std::vector<double> q = qnet_forward(net, state);
  int best = -1;
  for (std::size_t a = 0; a < q.size(); ++a) {
    if (!valid[a]) continue;
    if (best < 0 || q[a] > q[static_cast<std::size_t>(best)]) best = static_cast<int>(a);
  }
  return best;
}

ReplayMemory::ReplayMemory(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw InputError("replay capacity must be positive");
  buf_.reserve(capacity);
}

void ReplayMemory::push(Transition t) {
  const int quit = static_cast<int>(t.state.size());
  if (t.action < 0 || t.action > quit) {
    throw PolicyError("transition action " + std::to_string(t.action) + " outside [0, " +
                      std::to_string(quit) + "]");
  }
  if (t.action == quit && t.next_state.has_value())
    throw PolicyError("quit transitions must be terminal");
  if (t.action < quit && !t.next_state.has_value())
    throw PolicyError("prune transitions must carry a successor state");
  if (t.next_state && t.next_state->size() != t.state.size())
    throw ShapeError("successor state size differs from state size");

  if (buf_.size() < capacity_) {
    buf_.push_back(std::move(t));
  } else {
    buf_[write_] = std::move(t);
  }
  write_ = (write_ + 1) % capacity_;
}

const Transition& ReplayMemory::sample(Rng& rng) const {
  if (buf_.empty()) throw StateError("sampling from empty replay memory");
  return buf_[rng.index(buf_.size())];
}

void push_transition(ReplayMemory& memory, Transition t) { memory.push(std::move(t)); }

double huber(double residual) {
  const double a = std::abs(residual);
  if (a <= 1.0) return 0.5 * residual * residual;
  return a - 0.5;
}

std::vector<double> bellman_targets(const std::vector<const Transition*>& batch,
                                    const QNet& target, double gamma) {
  std::vector<double> y(batch.size());
  std::vector<std::size_t> open;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    y[i] = batch[i]->reward;
    if (batch[i]->next_state) open.push_back(i);
  }
  if (open.empty()) return y;

  Matrix next(open.size(), target.input());
  for (std::size_t r = 0; r < open.size(); ++r) {
    const std::vector<double>& s = *batch[open[r]]->next_state;
    for (std::size_t j = 0; j < s.size(); ++j) next(r, j) = s[j];
  }
  Matrix q = qnet_forward_batch(target, next);
  for (std::size_t r = 0; r < open.size(); ++r) {
    double best = q(r, 0);
    for (std::size_t j = 1; j < q.cols(); ++j) best = std::max(best, q(r, j));
    y[open[r]] += gamma * best;
  }
  return y;
}

std::optional<double> optimize_step(QNet& policy, const QNet& target, const ReplayMemory& memory,
                                    const AgentConfig& cfg, Adam& opt, Rng& rng) {
  const std::size_t B = static_cast<std::size_t>(cfg.batch);
  if (memory.size() < B) return std::nullopt;

  std::vector<const Transition*> batch;
  batch.reserve(B);
  for (std::size_t i = 0; i < B; ++i) batch.push_back(&memory.sample(rng));

  Matrix states(B, policy.input());
  for (std::size_t r = 0; r < B; ++r) {
    if (batch[r]->state.size() != policy.input())
      throw ShapeError("replayed state size differs from the policy input");
    for (std::size_t j = 0; j < policy.input(); ++j) states(r, j) = batch[r]->state[j];
  }

  BatchCache c = forward_cached(policy, states);
  const std::vector<double> y = bellman_targets(batch, target, cfg.gamma);

  double loss = 0.0;
  Matrix dout(B, policy.output());
  for (std::size_t r = 0; r < B; ++r) {
    const double e = c.out(r, static_cast<std::size_t>(batch[r]->action)) - y[r];
    loss += huber(e);
    // Huber derivative is the residual clipped to [-1, 1].
    dout(r, static_cast<std::size_t>(batch[r]->action)) =
        std::clamp(e, -1.0, 1.0) / static_cast<double>(B);
  }
  loss /= static_cast<double>(B);

  QNet g = zeros_like(policy);
  emap(g.w4).noalias() = emap(c.a3).transpose() * emap(dout);
  add_colsum(dout, g.b4);
  Matrix da3(B, c.a3.cols());
  emap(da3).noalias() = emap(dout) * emap(policy.w4).transpose();
  Matrix dz3 = leaky_backward(da3, c.z3);

  emap(g.w3).noalias() = emap(c.a2).transpose() * emap(dz3);
  add_colsum(dz3, g.b3);
  Matrix da2(B, c.a2.cols());
  emap(da2).noalias() = emap(dz3) * emap(policy.w3).transpose();
  Matrix dz2 = leaky_backward(da2, c.z2);

  emap(g.w2).noalias() = emap(c.a1).transpose() * emap(dz2);
  add_colsum(dz2, g.b2);
  Matrix da1(B, c.a1.cols());
  emap(da1).noalias() = emap(dz2) * emap(policy.w2).transpose();
  Matrix dz1 = leaky_backward(da1, c.z1);

  emap(g.w1).noalias() = emap(states).transpose() * emap(dz1);
  add_colsum(dz1, g.b1);

  opt.step(qnet_blocks(policy), qnet_blocks(std::as_const(g)));
  return loss;
}

void sync_target(const QNet& policy, QNet& target, long calls, const AgentConfig& cfg) {
  if (calls % cfg.tau_sync == 0) copy_parameters(policy, target);
}

DqnAgent::DqnAgent(std::size_t heads, const AgentConfig& cfg, Rng& init_rng)
    : cfg_(validated(cfg)),
      policy_(make_qnet(heads, cfg.hidden, init_rng)),
      target_(policy_),
      memory_(cfg.memory),
      opt_(AdamConfig{.lr = cfg.lr}) {}

int DqnAgent::select(std::span<const double> state, const std::vector<bool>& valid, Rng& rng) {
  const double eps = epsilon_at(action_steps_, cfg_);
  ++action_steps_;
  return select_action(policy_, state, eps, valid, rng);
}

void DqnAgent::remember(Transition t) { memory_.push(std::move(t)); }

std::optional<double> DqnAgent::optimize(Rng& rng) {
  std::optional<double> loss = optimize_step(policy_, target_, memory_, cfg_, opt_, rng);
  if (loss) {
    // Only parameter-changing calls advance the sync clock.
    ++optimize_calls_;
    sync_target(policy_, target_, optimize_calls_, cfg_);
  }
  return loss;
}

}  // namespace auber
