#pragma once

#include "pfpe/linalg.hpp"
#include "pfpe/mdp.hpp"

#include <nlohmann/json.hpp>

#include <cstddef>
#include <limits>

namespace pfpe {

/// Feature table for a finite MDP; row s * n_actions + a holds phi(s, a).
class FeatureMap {
 public:
  FeatureMap(std::size_t n_states, std::size_t n_actions, Matrix table);

  /// phi(s, a) = e_{s * n_actions + a}.
  static FeatureMap one_hot(std::size_t n_states, std::size_t n_actions);

  std::size_t dim() const noexcept { return static_cast<std::size_t>(table_.cols()); }
  std::size_t n_states() const noexcept { return n_states_; }
  std::size_t n_actions() const noexcept { return n_actions_; }

  auto operator()(std::size_t s, std::size_t a) const {
    return table_.row(static_cast<Eigen::Index>(s * n_actions_ + a)).transpose();
  }
  const Matrix& table() const noexcept { return table_; }

 private:
  std::size_t n_states_;
  std::size_t n_actions_;
  Matrix table_;
};

nlohmann::json feature_table_to_json(const FeatureMap& features);
FeatureMap feature_map_from_json(const nlohmann::json& rows, std::size_t n_states,
                                 std::size_t n_actions);

/// Parametric action-value function Q_w(s, a) with exact first and second derivatives.
class Approximator {
 public:
  virtual ~Approximator() = default;

  virtual std::size_t param_dim() const = 0;
  virtual std::size_t n_states() const = 0;
  virtual std::size_t n_actions() const = 0;
  virtual bool is_linear() const = 0;

  virtual double value(const Vector& w, std::size_t s, std::size_t a) const = 0;
  virtual Vector grad(const Vector& w, std::size_t s, std::size_t a) const = 0;
  virtual Matrix hess(const Vector& w, std::size_t s, std::size_t a) const = 0;

 protected:
  void check_params(const Vector& w) const;
};

class LinearApproximator final : public Approximator {
 public:
  explicit LinearApproximator(FeatureMap features) : features_(std::move(features)) {}

  std::size_t param_dim() const override { return features_.dim(); }
  std::size_t n_states() const override { return features_.n_states(); }
  std::size_t n_actions() const override { return features_.n_actions(); }
  bool is_linear() const override { return true; }

  double value(const Vector& w, std::size_t s, std::size_t a) const override;
  Vector grad(const Vector& w, std::size_t s, std::size_t a) const override;
  Matrix hess(const Vector& w, std::size_t s, std::size_t a) const override;

  const FeatureMap& features() const noexcept { return features_; }

 private:
  FeatureMap features_;
};

/// One hidden tanh layer over a one-hot (s, a) encoding, scalar linear head.
struct MlpSpec {
  std::size_t n_states = 1;
  std::size_t n_actions = 1;
  std::size_t hidden_width = 8;

  std::size_t input_dim() const noexcept { return n_states * n_actions; }
  std::size_t param_dim() const noexcept { return hidden_width * input_dim() + 2 * hidden_width + 1; }

  bool operator==(const MlpSpec&) const = default;
};

/**
 * Tiny MLP: Q(s, a) = v . tanh(W x + b1) + b2 with x one-hot.
 *
 * Parameter layout is [W row-major (H x m) | b1 (H) | v (H) | b2].
 * Only column (s, a) of W is touched by any single evaluation, so gradients
 * and Hessians are sparse but returned dense.
 */
class MlpApproximator final : public Approximator {
 public:
  explicit MlpApproximator(MlpSpec spec);

  std::size_t param_dim() const override { return spec_.param_dim(); }
  std::size_t n_states() const override { return spec_.n_states; }
  std::size_t n_actions() const override { return spec_.n_actions; }
  bool is_linear() const override { return false; }

  double value(const Vector& w, std::size_t s, std::size_t a) const override;
  Vector grad(const Vector& w, std::size_t s, std::size_t a) const override;
  Matrix hess(const Vector& w, std::size_t s, std::size_t a) const override;

  const MlpSpec& spec() const noexcept { return spec_; }

  /// Entries uniform in [-0.5, 0.5].
  Vector initial_params(Rng& rng) const;

  std::size_t index_w(std::size_t unit, std::size_t input) const {
    return unit * spec_.input_dim() + input;
  }
  std::size_t index_b1(std::size_t unit) const { return spec_.hidden_width * spec_.input_dim() + unit; }
  std::size_t index_v(std::size_t unit) const {
    return spec_.hidden_width * spec_.input_dim() + spec_.hidden_width + unit;
  }
  std::size_t index_b2() const { return spec_.param_dim() - 1; }

 private:
  MlpSpec spec_;
};

/// Scales v onto the ball of radius c_clip when it lies outside. Infinite c_clip is the identity.
Vector clip_vector(const Vector& v, double c_clip);

inline constexpr double kNoClip = std::numeric_limits<double>::infinity();

namespace fd {

/// Central differences of value() in every coordinate.
Vector gradient(const Approximator& q, const Vector& w, std::size_t s, std::size_t a,
                double step = 1e-5);

/// Central differences of the analytic gradient, column by column.
Matrix hessian(const Approximator& q, const Vector& w, std::size_t s, std::size_t a,
               double step = 1e-5);

/// max|approx - exact| / max(max|exact|, 1e-8).
double relative_error(const Matrix& approx, const Matrix& exact);

}  // namespace fd

/// Baird's seven-state star problem with its classic eight-weight features.
struct BairdSetup {
  static constexpr std::size_t kWavy = 0;
  static constexpr std::size_t kSolid = 1;
  static constexpr std::size_t kLower = 6;

  FiniteMdp mdp;
  FeatureMap features;
  Policy pi;
  Policy mu;
  StateDistribution d;
  Vector initial_params;
};

BairdSetup build_baird(double gamma = 0.99);

}  // namespace pfpe
