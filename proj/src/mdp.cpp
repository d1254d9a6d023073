#include "pfpe/mdp.hpp"

#include "pfpe/errors.hpp"

#include <cmath>
#include <string>

namespace pfpe {

namespace {

constexpr double kSumTolerance = 1e-12;

void check_probability_row(const double* row, std::size_t n, const std::string& where) {
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(row[i] >= 0.0) || !std::isfinite(row[i])) {
      throw InvalidModel(where + ": negative or non-finite probability");
    }
    sum += row[i];
  }
  if (std::abs(sum - 1.0) > kSumTolerance) {
    throw InvalidModel(where + ": probabilities sum to " + std::to_string(sum));
  }
}

std::size_t draw_categorical(const double* probs, std::size_t n, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double u = unit(rng);
  double acc = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (probs[i] <= 0.0) continue;
    acc += probs[i];
    last_positive = i;
    if (u < acc) return i;
  }
  return last_positive;
}

}  // namespace

FiniteMdp::FiniteMdp(std::size_t n_states, std::size_t n_actions, std::vector<double> transition,
                     std::vector<double> reward_mean, double reward_noise_std, double gamma,
                     double r_max)
    : n_states_(n_states),
      n_actions_(n_actions),
      transition_(std::move(transition)),
      reward_mean_(std::move(reward_mean)),
      reward_noise_std_(reward_noise_std),
      gamma_(gamma),
      r_max_(r_max) {
  if (n_states_ == 0 || n_actions_ == 0) throw InvalidModel("MDP needs at least one state and action");
  if (transition_.size() != n_states_ * n_actions_ * n_states_) {
    throw DimensionMismatch("transition tensor", n_states_ * n_actions_ * n_states_, transition_.size());
  }
  if (reward_mean_.size() != n_states_ * n_actions_) {
    throw DimensionMismatch("reward table", n_states_ * n_actions_, reward_mean_.size());
  }
  if (!(gamma_ >= 0.0 && gamma_ < 1.0)) throw InvalidModel("gamma must lie in [0, 1)");
  if (!(reward_noise_std_ >= 0.0) || !std::isfinite(reward_noise_std_)) {
    throw InvalidModel("reward_noise_std must be finite and nonnegative");
  }
  if (!(r_max_ >= 0.0) || !std::isfinite(r_max_)) throw InvalidModel("r_max must be finite and nonnegative");
  for (std::size_t s = 0; s < n_states_; ++s) {
    for (std::size_t a = 0; a < n_actions_; ++a) {
      check_probability_row(&transition_[(s * n_actions_ + a) * n_states_], n_states_,
                            "transition[" + std::to_string(s) + "][" + std::to_string(a) + "]");
      const double r = reward_mean_[s * n_actions_ + a];
      if (!std::isfinite(r) || std::abs(r) > r_max_) {
        throw InvalidModel("reward_mean exceeds r_max at (" + std::to_string(s) + ", " +
                           std::to_string(a) + ")");
      }
    }
  }
}

FiniteMdp FiniteMdp::with_gamma(double gamma) const {
  return FiniteMdp(n_states_, n_actions_, transition_, reward_mean_, reward_noise_std_, gamma, r_max_);
}

Policy::Policy(Matrix probs) : probs_(std::move(probs)) {
  if (probs_.rows() == 0 || probs_.cols() == 0) throw InvalidModel("empty policy");
  for (Eigen::Index s = 0; s < probs_.rows(); ++s) {
    Eigen::RowVectorXd row = probs_.row(s);
    check_probability_row(row.data(), static_cast<std::size_t>(row.size()),
                          "policy row " + std::to_string(s));
  }
}

Policy Policy::uniform(std::size_t n_states, std::size_t n_actions) {
  return Policy(Matrix::Constant(static_cast<Eigen::Index>(n_states), static_cast<Eigen::Index>(n_actions),
                                 1.0 / static_cast<double>(n_actions)));
}

Policy Policy::deterministic(std::size_t n_states, std::size_t n_actions, std::size_t action) {
  if (action >= n_actions) throw InvalidModel("deterministic policy: action out of range");
  Matrix p = Matrix::Zero(static_cast<Eigen::Index>(n_states), static_cast<Eigen::Index>(n_actions));
  p.col(static_cast<Eigen::Index>(action)).setOnes();
  return Policy(std::move(p));
}

StateDistribution::StateDistribution(Vector probs) : probs_(std::move(probs)) {
  if (probs_.size() == 0) throw InvalidModel("empty state distribution");
  check_probability_row(probs_.data(), static_cast<std::size_t>(probs_.size()), "state distribution");
}

StateDistribution StateDistribution::uniform(std::size_t n_states) {
  return StateDistribution(Vector::Constant(static_cast<Eigen::Index>(n_states),
                                            1.0 / static_cast<double>(n_states)));
}

namespace {

void check_compatible(const FiniteMdp& mdp, const StateDistribution& d, const Policy& p,
                      const char* who) {
  if (d.size() != mdp.n_states()) throw DimensionMismatch(who, mdp.n_states(), d.size());
  if (p.n_states() != mdp.n_states()) throw DimensionMismatch(who, mdp.n_states(), p.n_states());
  if (p.n_actions() != mdp.n_actions()) throw DimensionMismatch(who, mdp.n_actions(), p.n_actions());
}

}  // namespace

Transition sample_transition(const FiniteMdp& mdp, const StateDistribution& d, const Policy& mu,
                             const Policy& pi, Rng& rng) {
  const std::size_t n_s = mdp.n_states();
  const std::size_t n_a = mdp.n_actions();
  Transition t;
  t.s = draw_categorical(d.probs().data(), n_s, rng);

  double row[64];
  std::vector<double> big;
  const auto policy_row = [&](const Policy& p, std::size_t s) -> const double* {
    double* dst = row;
    if (n_a > 64) {
      big.resize(n_a);
      dst = big.data();
    }
    for (std::size_t a = 0; a < n_a; ++a) dst[a] = p(s, a);
    return dst;
  };

  t.a = draw_categorical(policy_row(mu, t.s), n_a, rng);

  const double mean = mdp.reward_mean(t.s, t.a);
  if (mdp.reward_noise_std() > 0.0) {
    std::normal_distribution<double> noise(mean, mdp.reward_noise_std());
    double r = noise(rng);
    while (std::abs(r) > mdp.r_max()) r = noise(rng);
    t.r = r;
  } else {
    t.r = mean;
  }

  std::vector<double> next(n_s);
  for (std::size_t s2 = 0; s2 < n_s; ++s2) next[s2] = mdp.transition(t.s, t.a, s2);
  t.s_next = draw_categorical(next.data(), n_s, rng);
  t.a_next = draw_categorical(policy_row(pi, t.s_next), n_a, rng);
  return t;
}

StateDistribution lookahead_distribution(const FiniteMdp& mdp, const StateDistribution& d,
                                         const Policy& mu) {
  check_compatible(mdp, d, mu, "lookahead_distribution");
  Vector out = Vector::Zero(static_cast<Eigen::Index>(mdp.n_states()));
  for (std::size_t s = 0; s < mdp.n_states(); ++s) {
    for (std::size_t a = 0; a < mdp.n_actions(); ++a) {
      const double w = d(s) * mu(s, a);
      if (w == 0.0) continue;
      for (std::size_t s2 = 0; s2 < mdp.n_states(); ++s2) {
        out(static_cast<Eigen::Index>(s2)) += w * mdp.transition(s, a, s2);
      }
    }
  }
  out /= out.sum();
  return StateDistribution(std::move(out));
}

Matrix state_kernel(const FiniteMdp& mdp, const Policy& pi) {
  if (pi.n_states() != mdp.n_states() || pi.n_actions() != mdp.n_actions()) {
    throw DimensionMismatch("state_kernel", mdp.n_pairs(), pi.n_states() * pi.n_actions());
  }
  const auto n = static_cast<Eigen::Index>(mdp.n_states());
  Matrix kernel = Matrix::Zero(n, n);
  for (std::size_t s = 0; s < mdp.n_states(); ++s)
    for (std::size_t a = 0; a < mdp.n_actions(); ++a)
      for (std::size_t s2 = 0; s2 < mdp.n_states(); ++s2)
        kernel(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(s2)) +=
            pi(s, a) * mdp.transition(s, a, s2);
  return kernel;
}

StateDistribution stationary_distribution(const FiniteMdp& mdp, const Policy& pi,
                                          std::size_t max_iterations) {
  const Matrix kernel = state_kernel(mdp, pi);
  const auto n = kernel.rows();
  const Matrix lazy = 0.5 * (Matrix::Identity(n, n) + kernel);
  Eigen::RowVectorXd d = Eigen::RowVectorXd::Constant(n, 1.0 / static_cast<double>(n));
  bool settled = false;
  for (std::size_t it = 0; it < max_iterations; ++it) {
    Eigen::RowVectorXd next = d * lazy;
    next /= next.sum();
    const double change = (next - d).cwiseAbs().maxCoeff();
    d = next;
    if (change <= 1e-15) {
      settled = true;
      break;
    }
  }
  const double residual = (d * kernel - d).cwiseAbs().maxCoeff();
  if (!settled && residual > 1e-10) {
    throw NonErgodic("stationary distribution: power iteration did not settle (residual " +
                     std::to_string(residual) + ")");
  }
  if (residual > 1e-10) {
    throw NonErgodic("stationary distribution: residual " + std::to_string(residual));
  }
  d = d.cwiseMax(0.0);
  d /= d.sum();
  return StateDistribution(d.transpose());
}

FiniteMdp random_ergodic_mdp(Rng& rng, std::size_t n_states, std::size_t n_actions, double r_max,
                             double gamma) {
  if (n_states == 0 || n_actions == 0) throw InvalidModel("random_ergodic_mdp: empty model");
  const double floor_mass = kErgodicityFloor * static_cast<double>(n_states);
  if (floor_mass >= 1.0) throw InvalidModel("random_ergodic_mdp: too many states for the floor");

  std::gamma_distribution<double> gamma_draw(1.0, 1.0);
  std::uniform_real_distribution<double> reward_draw(-r_max, r_max);
  std::vector<double> transition(n_states * n_actions * n_states);
  std::vector<double> rewards(n_states * n_actions);
  for (std::size_t sa = 0; sa < n_states * n_actions; ++sa) {
    double* row = &transition[sa * n_states];
    double total = 0.0;
    for (std::size_t s2 = 0; s2 < n_states; ++s2) {
      row[s2] = gamma_draw(rng);
      total += row[s2];
    }
    double sum = 0.0;
    for (std::size_t s2 = 0; s2 < n_states; ++s2) {
      row[s2] = kErgodicityFloor + (1.0 - floor_mass) * row[s2] / total;
      sum += row[s2];
    }
    for (std::size_t s2 = 0; s2 < n_states; ++s2) row[s2] /= sum;
    rewards[sa] = reward_draw(rng);
  }
  return FiniteMdp(n_states, n_actions, std::move(transition), std::move(rewards), 0.0, gamma, r_max);
}

Policy random_full_support_policy(Rng& rng, std::size_t n_states, std::size_t n_actions) {
  std::uniform_real_distribution<double> draw(0.5, 1.5);
  Matrix p(static_cast<Eigen::Index>(n_states), static_cast<Eigen::Index>(n_actions));
  for (Eigen::Index s = 0; s < p.rows(); ++s) {
    for (Eigen::Index a = 0; a < p.cols(); ++a) p(s, a) = draw(rng);
    p.row(s) /= p.row(s).sum();
  }
  return Policy(std::move(p));
}

FiniteMdp make_self_loop(double reward, double gamma) {
  return FiniteMdp(1, 1, {1.0}, {reward}, 0.0, gamma, std::max(1.0, std::abs(reward)));
}

FiniteMdp make_cycle2(double gamma) {
  return FiniteMdp(2, 1, {0.0, 1.0, 1.0, 0.0}, {1.0, 0.0}, 0.0, gamma, 1.0);
}

void to_json(nlohmann::json& j, const FiniteMdp& mdp) {
  nlohmann::json transition = nlohmann::json::array();
  nlohmann::json rewards = nlohmann::json::array();
  for (std::size_t s = 0; s < mdp.n_states(); ++s) {
    nlohmann::json per_action = nlohmann::json::array();
    nlohmann::json reward_row = nlohmann::json::array();
    for (std::size_t a = 0; a < mdp.n_actions(); ++a) {
      nlohmann::json row = nlohmann::json::array();
      for (std::size_t s2 = 0; s2 < mdp.n_states(); ++s2) row.push_back(mdp.transition(s, a, s2));
      per_action.push_back(std::move(row));
      reward_row.push_back(mdp.reward_mean(s, a));
    }
    transition.push_back(std::move(per_action));
    rewards.push_back(std::move(reward_row));
  }
  j = nlohmann::json{{"n_states", mdp.n_states()},
                     {"n_actions", mdp.n_actions()},
                     {"transition", std::move(transition)},
                     {"reward_mean", std::move(rewards)},
                     {"reward_noise_std", mdp.reward_noise_std()},
                     {"gamma", mdp.gamma()},
                     {"r_max", mdp.r_max()}};
}

FiniteMdp mdp_from_json(const nlohmann::json& j) {
  const auto n_s = j.at("n_states").get<std::size_t>();
  const auto n_a = j.at("n_actions").get<std::size_t>();
  const auto& tr = j.at("transition");
  const auto& rw = j.at("reward_mean");
  if (tr.size() != n_s || rw.size() != n_s) throw DimensionMismatch("mdp json rows", n_s, tr.size());
  std::vector<double> transition;
  std::vector<double> rewards;
  transition.reserve(n_s * n_a * n_s);
  rewards.reserve(n_s * n_a);
  for (std::size_t s = 0; s < n_s; ++s) {
    if (tr[s].size() != n_a || rw[s].size() != n_a) {
      throw DimensionMismatch("mdp json actions", n_a, tr[s].size());
    }
    for (std::size_t a = 0; a < n_a; ++a) {
      if (tr[s][a].size() != n_s) throw DimensionMismatch("mdp json next states", n_s, tr[s][a].size());
      for (std::size_t s2 = 0; s2 < n_s; ++s2) transition.push_back(tr[s][a][s2].get<double>());
      rewards.push_back(rw[s][a].get<double>());
    }
  }
  return FiniteMdp(n_s, n_a, std::move(transition), std::move(rewards),
                   j.value("reward_noise_std", 0.0), j.at("gamma").get<double>(),
                   j.at("r_max").get<double>());
}

}  // namespace pfpe
