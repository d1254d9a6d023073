#pragma once

#include "pfpe/gram.hpp"
#include "pfpe/td_engine.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace pfpe {

/// gamma * phi_prime - phi.
Matrix td_jacobian_linear(const GramMatrices& gram, double gamma);

/// Hessian of the half-squared target-conditioned loss: phi.
Matrix loss_hessian_linear(const GramMatrices& gram);

// ---- pointwise Jacobians of the expected TD vector (exact enumeration) ----

/// H(w; w_bar) = -d/dw delta(w, w_bar) = E[grad grad^T] - E[(r + gamma E'Q_{w_bar} - Q_w) hess].
Matrix loss_hessian(const Problem& problem, const Vector& w, const Vector& w_bar);

/// J_delta(w_q; w_t) = d/dw_t delta(w_q, w_t) = gamma E[grad Q_{w_q}(s,a) E'[grad Q_{w_t}(s',a')]^T].
Matrix cross_jacobian(const Problem& problem, const Vector& w_q, const Vector& w_t);

/// E[grad Q (gamma E'[grad Q'] - grad Q)^T].
Matrix outer_product_term(const Problem& problem, const Vector& w);

/// E[(T Q_w - Q_w) hess Q_w].
Matrix bellman_hessian_term(const Problem& problem, const Vector& w);

/// Total derivative of delta(w, w), assembled as outer_product_term + bellman_hessian_term.
Matrix td_jacobian(const Problem& problem, const Vector& w);

struct JacobianSet {
  enum class Kind { Pointwise, PathMean };

  Matrix H;
  Matrix J_delta;
  Matrix J_TD;
  Kind kind = Kind::Pointwise;
  /// False when H and J_delta were integrated against a fixed off-path target.
  bool on_path = true;

  /// max |J_TD - (J_delta - H)|.
  double identity_residual() const;
};

/// H(w; w), J_delta(w; w) and the independently assembled J_TD(w).
JacobianSet pointwise_jacobians(const Problem& problem, const Vector& w);

/**
 * Path-mean Jacobians along w(t) = w - t (w - w_star), t in [0, 1].
 *
 * Composite trapezoid rule with n_quad intervals. Without w_bar the target
 * moves with the path (H(w(t); w(t)), J_delta(w(t); w(t))). With w_bar the
 * off-path pair is returned: H integrates H(w(t); w_bar) and J_delta
 * integrates J_delta(w_bar; w(t)).
 * When check_convergence is set the rule is repeated with 2 n_quad intervals and
 * QuadratureUnconverged is raised if any entry moves by more than 1e-6;
 * the finer result is returned.
 */
JacobianSet path_mean_jacobians_numeric(const Problem& problem, const Vector& w, const Vector& w_star,
                                        std::size_t n_quad, const std::optional<Vector>& w_bar = std::nullopt,
                                        bool check_convergence = true);

inline constexpr double kQuadratureTolerance = 1e-6;

/// (H_Reg, J_delta_Reg) for the mixed and damped TD vector.
std::pair<Matrix, Matrix> regularised_jacobians(const Matrix& H_bar, const Matrix& J_delta_bar, double mix,
                                                double eta);

/// Eigenvalue maximising |1 - alpha lambda|; ties go to the smaller lambda.
double lambda_h_star(const Vector& eigenvalues, double alpha);

double condition_function(double alpha, std::uint64_t k, double lambda_h_star, double j_td_norm_star,
                          double j_fpe_norm_star);

/// (1 - |1 - alpha lambda|^k) sigma_delta / lambda. DegenerateEigenvalue when lambda = 0.
double sigma_k(double alpha, std::uint64_t k, double lambda_h_star, double sigma_delta);

/// Smallest k with condition_function(k) < 1, or nullopt when no finite k exists.
std::optional<std::uint64_t> min_k_for_contraction(double alpha, double lambda_min, double j_td_norm_star,
                                                   double j_fpe_norm_star);

/// alpha sigma_k / (1 - c) + exp(-l (1 - c)) (e0 - sigma_k / (1 - c)).
double corollary_bound_curve(double l, double c, double alpha, double sigma_k, double initial_error);

struct FpeNorm {
  double value = 0.0;
  bool ridge_used = false;
};

/// ||H^{-1} J_delta||_2. SingularHessian unless allow_ridge, which solves with H + 1e-10 I.
FpeNorm fpe_stability_norm(const Matrix& H_bar, const Matrix& J_delta_bar, bool allow_ridge = false);

struct ShiftCheck {
  bool passed = false;
  double margin = 0.0;  // smallest eigenvalue of phi - gamma^2 phi''
};

ShiftCheck low_distribution_shift_check(const Matrix& phi, const Matrix& lookahead_phi, double gamma);

/// max over samples of lambda_max of the symmetrised J_TD(w) decomposition.
double nonlinear_jacobian_bound(const Problem& problem, const std::vector<Vector>& samples);

/// Spectral radius of the exact linear outer map A^k + (I - A^k) F with A = I - alpha phi,
/// restricted to range(phi), the subspace on which the iteration can move.
double outer_map_spectral_radius(const GramMatrices& gram, double gamma, double alpha, std::uint64_t k);

struct AnalysisSpec {
  double alpha = 0.01;
  std::uint64_t k = 1;
  std::optional<Vector> center;
  double radius = 1.0;
  std::size_t samples = 128;
  std::size_t n_quad = 32;
  std::optional<double> sigma_delta;
  std::size_t sigma_points = 32;
  std::size_t sigma_transitions = 1000;
  std::uint64_t seed = 0;
  double clip = kNoClip;
};

struct SpectralReport {
  std::optional<double> lambda_h_star;
  std::optional<double> lambda_min;
  std::optional<double> j_td_norm_star;
  std::optional<double> j_fpe_norm_star;
  std::optional<double> condition_value;
  std::optional<double> sigma_k;
  std::optional<double> contraction_constant;
  std::optional<std::uint64_t> k_min;
  std::optional<double> sigma_delta;
  std::optional<double> outer_map_spectral_radius;

  std::optional<bool> assumption4;
  std::optional<bool> assumption5;
  std::optional<bool> assumption6;
  std::optional<bool> low_shift;
  std::optional<bool> outer_map_contracts;

  std::map<std::string, double> margins;
  nlohmann::json conventions = nlohmann::json::object();
  std::map<std::string, std::string> unavailable;

  double alpha = 0.0;
  std::uint64_t k = 1;

  /// Condition-function verdict, or the exact outer-map verdict when available.
  bool predicted_stable() const;
};

SpectralReport analyze(const Problem& problem, const AnalysisSpec& spec);

/// Report from supplied norms only (no environment).
SpectralReport synthetic_report(double alpha, std::uint64_t k, double lambda_h_star, double j_td_norm_star,
                                double j_fpe_norm_star, std::optional<double> sigma_delta = std::nullopt);

nlohmann::json report_to_json(const SpectralReport& report);

}  // namespace pfpe
