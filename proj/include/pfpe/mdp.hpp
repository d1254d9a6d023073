#pragma once

#include "pfpe/linalg.hpp"

#include <nlohmann/json.hpp>

#include <cstddef>
#include <random>
#include <vector>

namespace pfpe {

/// Random engine used for every sampling path. One engine per thread.
using Rng = std::mt19937_64;

/**
 * Finite MDP <S, A, P, R, gamma> with bounded rewards.
 *
 * Transition probabilities are stored densely, indexed [s][a][s'].
 * Rewards are Normal(reward_mean[s][a], reward_noise_std) truncated to
 * [-r_max, r_max]; a zero noise level gives deterministic rewards.
 * Invariants are checked once at construction, after which the object is
 * immutable.
 */
class FiniteMdp {
 public:
  FiniteMdp(std::size_t n_states, std::size_t n_actions, std::vector<double> transition,
            std::vector<double> reward_mean, double reward_noise_std, double gamma, double r_max);

  std::size_t n_states() const noexcept { return n_states_; }
  std::size_t n_actions() const noexcept { return n_actions_; }
  std::size_t n_pairs() const noexcept { return n_states_ * n_actions_; }

  double transition(std::size_t s, std::size_t a, std::size_t s_next) const {
    return transition_[(s * n_actions_ + a) * n_states_ + s_next];
  }
  double reward_mean(std::size_t s, std::size_t a) const { return reward_mean_[s * n_actions_ + a]; }
  double reward_noise_std() const noexcept { return reward_noise_std_; }
  double gamma() const noexcept { return gamma_; }
  double r_max() const noexcept { return r_max_; }

  /// Copy with a different discount (validated).
  FiniteMdp with_gamma(double gamma) const;

  bool operator==(const FiniteMdp&) const = default;

 private:
  std::size_t n_states_;
  std::size_t n_actions_;
  std::vector<double> transition_;
  std::vector<double> reward_mean_;
  double reward_noise_std_;
  double gamma_;
  double r_max_;
};

/// Action probabilities indexed [s][a]; rows sum to one.
class Policy {
 public:
  explicit Policy(Matrix probs);

  static Policy uniform(std::size_t n_states, std::size_t n_actions);
  static Policy deterministic(std::size_t n_states, std::size_t n_actions, std::size_t action);

  double operator()(std::size_t s, std::size_t a) const { return probs_(s, a); }
  const Matrix& probs() const noexcept { return probs_; }
  std::size_t n_states() const noexcept { return static_cast<std::size_t>(probs_.rows()); }
  std::size_t n_actions() const noexcept { return static_cast<std::size_t>(probs_.cols()); }

 private:
  Matrix probs_;
};

/// Distribution over states.
class StateDistribution {
 public:
  explicit StateDistribution(Vector probs);

  static StateDistribution uniform(std::size_t n_states);

  double operator()(std::size_t s) const { return probs_(static_cast<Eigen::Index>(s)); }
  const Vector& probs() const noexcept { return probs_; }
  std::size_t size() const noexcept { return static_cast<std::size_t>(probs_.size()); }

 private:
  Vector probs_;
};

/// One sampled tuple (s, a, r, s', a').
struct Transition {
  std::size_t s = 0;
  std::size_t a = 0;
  double r = 0.0;
  std::size_t s_next = 0;
  std::size_t a_next = 0;

  bool operator==(const Transition&) const = default;
};

/// s ~ d, a ~ mu(s), r ~ R(s,a), s' ~ P(s,a), a' ~ pi(s'). i.i.d. across calls.
Transition sample_transition(const FiniteMdp& mdp, const StateDistribution& d, const Policy& mu,
                             const Policy& pi, Rng& rng);

/// One-step lookahead distribution P^mu(s') = sum_{s,a} d(s) mu(a|s) P(s'|s,a).
StateDistribution lookahead_distribution(const FiniteMdp& mdp, const StateDistribution& d,
                                         const Policy& mu);

/// State-to-state kernel induced by a policy.
Matrix state_kernel(const FiniteMdp& mdp, const Policy& pi);

/**
 * Stationary distribution of the chain induced by pi.
 *
 * Power iteration on the lazy chain (I + P)/2, which shares the stationary
 * distribution of P and removes periodicity. Throws NonErgodic if the
 * iteration cap is hit or the fixed-point residual exceeds 1e-10.
 */
StateDistribution stationary_distribution(const FiniteMdp& mdp, const Policy& pi,
                                          std::size_t max_iterations = 200000);

/// Lower bound on every transition probability of random_ergodic_mdp.
inline constexpr double kErgodicityFloor = 1e-3;

/// Transition rows eps + (1 - S*eps) * Dirichlet(1); rewards uniform in [-r_max, r_max].
FiniteMdp random_ergodic_mdp(Rng& rng, std::size_t n_states, std::size_t n_actions, double r_max,
                             double gamma = 0.9);

/// Policy with rows proportional to Uniform(0.5, 1.5) draws (full support).
Policy random_full_support_policy(Rng& rng, std::size_t n_states, std::size_t n_actions);

/// 1 state, 1 action, reward 1 on the self-loop.
FiniteMdp make_self_loop(double reward = 1.0, double gamma = 0.9);

/// 2 states, 1 action, 0 -> 1 -> 0 deterministically; rewards (1, 0).
FiniteMdp make_cycle2(double gamma = 0.9);

void to_json(nlohmann::json& j, const FiniteMdp& mdp);
FiniteMdp mdp_from_json(const nlohmann::json& j);

}  // namespace pfpe
