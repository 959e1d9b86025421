#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "auber/matrix.hpp"
#include "auber/optimizer.hpp"
#include "auber/rng.hpp"

namespace auber {

struct AgentConfig {
  double eps_start = 1.0;
  double eps_end = 0.05;
  double eps_decay = 256.0;
  int batch = 128;
  std::size_t memory = 5000;
  double gamma = 1.0;
  // Chosen by calibration on the planted-structure environment; see the
  // agent-convergence acceptance criterion.
  double lr = 1e-4;
  int tau_sync = 10;  // hard target sync every this many optimize calls
  int episodes = 300;
  int hidden = 512;
};

void validate(const AgentConfig& cfg);

// Four affine layers, leaky ReLU after the first three. Maps a head
// state of size H to H+1 action values (H prunes plus quit).
struct QNet {
  Matrix w1, w2, w3, w4;  // stored input x output
  std::vector<double> b1, b2, b3, b4;

  std::size_t input() const { return w1.rows(); }
  std::size_t output() const { return w4.cols(); }
};

QNet make_qnet(std::size_t heads, int hidden, Rng& rng);
void copy_parameters(const QNet& from, QNet& to);
std::vector<std::span<double>> qnet_blocks(QNet& net);
std::vector<std::span<const double>> qnet_blocks(const QNet& net);

double leaky_relu(double x);  // negative slope 0.01

std::vector<double> qnet_forward(const QNet& net, std::span<const double> state);
// One state per row.
Matrix qnet_forward_batch(const QNet& net, const Matrix& states);

// eps_end + (eps_start - eps_end) * exp(-step / eps_decay)
double epsilon_at(long step, const AgentConfig& cfg);

// Epsilon-greedy over the valid actions. Exactly one uniform draw
// decides explore vs exploit, so the total draw count per call is
// fixed. Quit (index H) must always be valid.
int select_action(const QNet& net, std::span<const double> state, double eps,
                  const std::vector<bool>& valid, Rng& rng);

struct Transition {
  std::vector<double> state;
  int action = 0;
  std::optional<std::vector<double>> next_state;  // empty means terminal
  double reward = 0.0;
};

// Fixed-capacity ring; once full, new transitions overwrite the oldest.
class ReplayMemory {
 public:
  explicit ReplayMemory(std::size_t capacity = 5000);

  void push(Transition t);
  const Transition& sample(Rng& rng) const;  // uniform, with replacement
  const Transition& at(std::size_t i) const { return buf_[i]; }

  std::size_t size() const { return buf_.size(); }
  std::size_t capacity() const { return capacity_; }

 private:
  std::size_t capacity_;
  std::size_t write_ = 0;
  std::vector<Transition> buf_;
};

void push_transition(ReplayMemory& memory, Transition t);

double huber(double residual);  // delta = 1

// r for terminal transitions, else r + gamma * max_a target(s', a).
std::vector<double> bellman_targets(const std::vector<const Transition*>& batch,
                                    const QNet& target, double gamma);

// One minibatch of Huber-loss Q-learning. Returns the loss, or nothing
// (and touches no parameters) while the memory is smaller than the
// batch size.
std::optional<double> optimize_step(QNet& policy, const QNet& target, const ReplayMemory& memory,
                                    const AgentConfig& cfg, Adam& opt, Rng& rng);

// Hard copy policy -> target when calls is a multiple of tau_sync.
void sync_target(const QNet& policy, QNet& target, long calls, const AgentConfig& cfg);

// Policy net, target net, replay memory and the counters that drive
// the epsilon schedule and target syncs.
class DqnAgent {
 public:
  DqnAgent(std::size_t heads, const AgentConfig& cfg, Rng& init_rng);

  int select(std::span<const double> state, const std::vector<bool>& valid, Rng& rng);
  void remember(Transition t);
  std::optional<double> optimize(Rng& rng);

  const AgentConfig& config() const { return cfg_; }
  const QNet& policy() const { return policy_; }
  // Writable view, mainly for planting hand-crafted policies.
  QNet& mutable_policy() { return policy_; }
  const QNet& target() const { return target_; }
  ReplayMemory& memory() { return memory_; }
  const ReplayMemory& memory() const { return memory_; }
  long action_steps() const { return action_steps_; }
  long optimize_calls() const { return optimize_calls_; }

 private:
  AgentConfig cfg_;
  QNet policy_;
  QNet target_;
  ReplayMemory memory_;
  Adam opt_;
  long action_steps_ = 0;
  long optimize_calls_ = 0;
};

}  // namespace auber
