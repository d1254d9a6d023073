#pragma once

#include "pfpe/approximator.hpp"
#include "pfpe/gram.hpp"
#include "pfpe/mdp.hpp"

#include <cstdint>
#include <memory>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace pfpe {

/// Everything that defines the expected TD vector: environment, Q-function and the three distributions.
struct Problem {
  Problem(FiniteMdp mdp, std::shared_ptr<const Approximator> approx, StateDistribution d, Policy mu,
          Policy pi);

  FiniteMdp mdp;
  std::shared_ptr<const Approximator> approx;
  StateDistribution d;
  Policy mu;
  Policy pi;

  double gamma() const noexcept { return mdp.gamma(); }
};

struct StepSizeSchedule {
  enum class Kind { Constant, RobbinsMunro };

  Kind kind = Kind::Constant;
  double alpha0 = 0.01;
  double power = 1.0;  // only for RobbinsMunro

  static StepSizeSchedule constant(double alpha);
  /// alpha_l = alpha0 / (1 + l)^p with 0.5 < p <= 1.
  static StepSizeSchedule robbins_munro(double alpha0, double p);

  double operator()(std::uint64_t l) const;
  bool operator==(const StepSizeSchedule&) const = default;
};

struct TargetUpdateRule {
  enum class Kind { PeriodicCopy, Momentum };

  Kind kind = Kind::PeriodicCopy;
  double momentum = 0.0;

  static TargetUpdateRule periodic_copy() { return {}; }
  static TargetUpdateRule with_momentum(double mu_m);

  bool operator==(const TargetUpdateRule&) const = default;
};

struct Regularisation {
  bool enabled = false;
  double mix = 1.0;
  double eta = 0.0;

  bool operator==(const Regularisation&) const = default;
};

enum class UpdateMode { Sampled, ExactExpectation };

struct RunConfig {
  StepSizeSchedule schedule;
  std::uint64_t k = 1;
  std::uint64_t n_target_updates = 1;
  TargetUpdateRule target_rule;
  Regularisation regularisation;
  UpdateMode mode = UpdateMode::Sampled;
  std::uint64_t seed = 0;
  double clip = kNoClip;
  std::optional<double> gamma_override;
  double divergence_threshold = 1e8;
  std::optional<Vector> initial_params;
  /// Reference point for the dist_to_fixed_point column; NaN in the trace when absent.
  std::optional<Vector> fixed_point;

  void validate() const;
};

struct TraceRow {
  std::uint64_t l = 0;
  std::uint64_t step = 0;
  double alpha = 0.0;
  double td_error_norm = 0.0;
  double dist_to_fixed_point = 0.0;
  double param_norm = 0.0;
  bool diverged = false;
};

/// One row and one target vector per outer index l = 0..L.
struct RunTrace {
  std::vector<TraceRow> rows;
  std::vector<Vector> targets;
  bool diverged = false;

  std::uint64_t steps_executed() const { return rows.empty() ? 0 : rows.back().step; }
};

/// Parameter blow-up; carries everything recorded up to that point.
class Diverged : public std::runtime_error {
 public:
  Diverged(const std::string& what, RunTrace partial)
      : std::runtime_error(what), trace_(std::move(partial)) {}

  const RunTrace& trace() const noexcept { return trace_; }

 private:
  RunTrace trace_;
};

/// (r + gamma Q_{w_target}(s',a') - Q_w(s,a)) grad Q_w(s,a), clipped to radius c_clip.
Vector td_error_vector(const Approximator& q, const Vector& w, const Vector& w_target, const Transition& t,
                       double gamma, double c_clip = kNoClip);

/// Exact expectation of td_error_vector over d, mu, P and pi, with mean rewards.
Vector expected_td_vector(const Problem& problem, const Vector& w, const Vector& w_target);

/// mix * delta(w, w_t) + (1 - mix) * (delta(w_t, w) - eta (w - w_t)), exact expectation.
Vector regularised_td_vector(const Problem& problem, const Vector& w, const Vector& w_target,
                             const Regularisation& reg);

/// One inner step. Sampled mode requires rng. Throws Diverged (empty trace) on blow-up.
Vector pfpe_inner_step(const Problem& problem, const Vector& w, const Vector& w_target, double alpha,
                       const RunConfig& config, Rng* rng);

/// omega_bar from the current iterate and the snapshots taken k and 2k steps earlier.
Vector target_update(const Vector& w_i, const Vector& w_i_minus_k, const Vector& w_i_minus_2k,
                     const TargetUpdateRule& rule, std::uint64_t step, std::uint64_t k);

/// Keeps the snapshot history for target_update. Missing history defaults to w0.
class TargetUpdater {
 public:
  TargetUpdater(TargetUpdateRule rule, std::uint64_t k, const Vector& w0);

  Vector update(std::uint64_t step, const Vector& w_i);

 private:
  TargetUpdateRule rule_;
  std::uint64_t k_;
  Vector back_k_;
  Vector back_2k_;
};

/// Runs n_target_updates outer blocks of k inner steps. Throws Diverged with the partial trace.
RunTrace run_pfpe(const Problem& problem, const RunConfig& config);

/// Same as run_pfpe but reports divergence through RunTrace::diverged.
RunTrace run_pfpe_collect(const Problem& problem, const RunConfig& config);

struct FpeSolution {
  Vector w;
  bool ridge_used = false;
  double residual = 0.0;
};

inline constexpr double kRidge = 1e-10;

/**
 * Minimiser of the target-conditioned loss for linear features:
 * the w with b + gamma * phi_prime * w_target - phi * w = 0.
 * Singular phi raises SingularGramMatrix unless allow_ridge, in which case
 * phi + 1e-10 I is solved instead and ridge_used is set.
 */
FpeSolution fpe_solve_linear(const GramMatrices& gram, double gamma, const Vector& w_target,
                             bool allow_ridge = false);

/// Solves (phi - gamma phi_prime) w = b. Singular systems raise SingularSystem unless
/// allow_min_norm, which returns the minimum-norm least-squares solution.
Vector td_fixed_point_linear(const GramMatrices& gram, double gamma, bool allow_min_norm = false);

inline constexpr const char* kTraceCsvHeader =
    "run_id,seed,l,step,k,alpha,td_error_norm,dist_to_fixed_point,param_norm,diverged";

void write_trace_csv(std::ostream& out, const std::string& run_id, std::uint64_t seed, std::uint64_t k,
                     const RunTrace& trace);

}  // namespace pfpe
