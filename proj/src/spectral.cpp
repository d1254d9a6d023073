#include "pfpe/spectral.hpp"

#include "pfpe/errors.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

namespace pfpe {

GramMatrices gram_matrices(const FiniteMdp& mdp, const FeatureMap& features, const StateDistribution& d,
                           const Policy& mu, const Policy& pi) {
  if (features.n_states() != mdp.n_states() || features.n_actions() != mdp.n_actions()) {
    throw DimensionMismatch("feature map pairs", mdp.n_pairs(), features.n_states() * features.n_actions());
  }
  const auto n = static_cast<Eigen::Index>(features.dim());
  const std::size_t n_s = mdp.n_states();
  const std::size_t n_a = mdp.n_actions();

  // Expected next features under pi, per next state.
  Matrix next_features = Matrix::Zero(n, static_cast<Eigen::Index>(n_s));
  for (std::size_t s2 = 0; s2 < n_s; ++s2)
    for (std::size_t a2 = 0; a2 < n_a; ++a2)
      next_features.col(static_cast<Eigen::Index>(s2)) += pi(s2, a2) * features(s2, a2);

  GramMatrices g{Matrix::Zero(n, n), Matrix::Zero(n, n), Vector::Zero(n)};
  for (std::size_t s = 0; s < n_s; ++s) {
    for (std::size_t a = 0; a < n_a; ++a) {
      const double weight = d(s) * mu(s, a);
      if (weight == 0.0) continue;
      const Vector phi = features(s, a);
      Vector bootstrap = Vector::Zero(n);
      for (std::size_t s2 = 0; s2 < n_s; ++s2) {
        bootstrap += mdp.transition(s, a, s2) * next_features.col(static_cast<Eigen::Index>(s2));
      }
      g.phi.noalias() += weight * phi * phi.transpose();
      g.phi_prime.noalias() += weight * phi * bootstrap.transpose();
      g.b += weight * mdp.reward_mean(s, a) * phi;
    }
  }
  return g;
}

Matrix lookahead_gram(const FiniteMdp& mdp, const FeatureMap& features, const StateDistribution& d,
                      const Policy& mu, const Policy& pi) {
  const StateDistribution next = lookahead_distribution(mdp, d, mu);
  const auto n = static_cast<Eigen::Index>(features.dim());
  Matrix out = Matrix::Zero(n, n);
  for (std::size_t s2 = 0; s2 < mdp.n_states(); ++s2) {
    for (std::size_t a2 = 0; a2 < mdp.n_actions(); ++a2) {
      const double weight = next(s2) * pi(s2, a2);
      if (weight == 0.0) continue;
      const Vector phi = features(s2, a2);
      out.noalias() += weight * phi * phi.transpose();
    }
  }
  return out;
}

Matrix td_jacobian_linear(const GramMatrices& gram, double gamma) { return gamma * gram.phi_prime - gram.phi; }

Matrix loss_hessian_linear(const GramMatrices& gram) { return gram.phi; }

namespace {

Eigen::Index dim_of(const Problem& p) { return static_cast<Eigen::Index>(p.approx->param_dim()); }

/// E'[Q_w(s', a')] for every next state s'.
std::vector<double> next_values(const Problem& p, const Vector& w) {
  std::vector<double> v(p.mdp.n_states(), 0.0);
  for (std::size_t s2 = 0; s2 < p.mdp.n_states(); ++s2)
    for (std::size_t a2 = 0; a2 < p.mdp.n_actions(); ++a2)
      if (p.pi(s2, a2) != 0.0) v[s2] += p.pi(s2, a2) * p.approx->value(w, s2, a2);
  return v;
}

/// E'[grad Q_w(s', a')] as columns indexed by s'.
Matrix next_grads(const Problem& p, const Vector& w) {
  Matrix g = Matrix::Zero(dim_of(p), static_cast<Eigen::Index>(p.mdp.n_states()));
  for (std::size_t s2 = 0; s2 < p.mdp.n_states(); ++s2)
    for (std::size_t a2 = 0; a2 < p.mdp.n_actions(); ++a2)
      if (p.pi(s2, a2) != 0.0) g.col(static_cast<Eigen::Index>(s2)) += p.pi(s2, a2) * p.approx->grad(w, s2, a2);
  return g;
}

/// Calls fn(s, a, weight) for every pair with positive sampling weight.
template <typename Fn>
void for_each_pair(const Problem& p, Fn&& fn) {
  for (std::size_t s = 0; s < p.mdp.n_states(); ++s)
    for (std::size_t a = 0; a < p.mdp.n_actions(); ++a) {
      const double weight = p.d(s) * p.mu(s, a);
      if (weight != 0.0) fn(s, a, weight);
    }
}

double bootstrap_value(const Problem& p, std::size_t s, std::size_t a, const std::vector<double>& next) {
  double acc = 0.0;
  for (std::size_t s2 = 0; s2 < p.mdp.n_states(); ++s2) acc += p.mdp.transition(s, a, s2) * next[s2];
  return acc;
}

Vector bootstrap_grad(const Problem& p, std::size_t s, std::size_t a, const Matrix& next) {
  Vector acc = Vector::Zero(next.rows());
  for (std::size_t s2 = 0; s2 < p.mdp.n_states(); ++s2) {
    acc += p.mdp.transition(s, a, s2) * next.col(static_cast<Eigen::Index>(s2));
  }
  return acc;
}

}  // namespace

Matrix loss_hessian(const Problem& p, const Vector& w, const Vector& w_bar) {
  const auto next = next_values(p, w_bar);
  const bool linear = p.approx->is_linear();
  Matrix h = Matrix::Zero(dim_of(p), dim_of(p));
  for_each_pair(p, [&](std::size_t s, std::size_t a, double weight) {
    const Vector g = p.approx->grad(w, s, a);
    h.noalias() += weight * g * g.transpose();
    if (!linear) {
      const double delta = p.mdp.reward_mean(s, a) + p.gamma() * bootstrap_value(p, s, a, next) - p.approx->value(w, s, a);
      h -= (weight * delta) * p.approx->hess(w, s, a);
    }
  });
  return h;
}

Matrix cross_jacobian(const Problem& p, const Vector& w_q, const Vector& w_t) {
  const Matrix next = next_grads(p, w_t);
  Matrix j = Matrix::Zero(dim_of(p), dim_of(p));
  for_each_pair(p, [&](std::size_t s, std::size_t a, double weight) {
    j.noalias() += (weight * p.gamma()) * p.approx->grad(w_q, s, a) * bootstrap_grad(p, s, a, next).transpose();
  });
  return j;
}

Matrix outer_product_term(const Problem& p, const Vector& w) {
  const Matrix next = next_grads(p, w);
  Matrix m = Matrix::Zero(dim_of(p), dim_of(p));
  for_each_pair(p, [&](std::size_t s, std::size_t a, double weight) {
    const Vector g = p.approx->grad(w, s, a);
    m.noalias() += weight * g * (p.gamma() * bootstrap_grad(p, s, a, next) - g).transpose();
  });
  return m;
}

Matrix bellman_hessian_term(const Problem& p, const Vector& w) {
  Matrix m = Matrix::Zero(dim_of(p), dim_of(p));
  if (p.approx->is_linear()) return m;
  const auto next = next_values(p, w);
  for_each_pair(p, [&](std::size_t s, std::size_t a, double weight) {
    const double bellman_error =
        p.mdp.reward_mean(s, a) + p.gamma() * bootstrap_value(p, s, a, next) - p.approx->value(w, s, a);
    m += (weight * bellman_error) * p.approx->hess(w, s, a);
  });
  return m;
}

Matrix td_jacobian(const Problem& p, const Vector& w) { return outer_product_term(p, w) + bellman_hessian_term(p, w); }

double JacobianSet::identity_residual() const { return linalg::max_abs_diff(J_TD, J_delta - H); }

JacobianSet pointwise_jacobians(const Problem& p, const Vector& w) {
  JacobianSet set;
  set.H = loss_hessian(p, w, w);
  set.J_delta = cross_jacobian(p, w, w);
  set.J_TD = td_jacobian(p, w);
  set.kind = JacobianSet::Kind::Pointwise;
  return set;
}

namespace {

using PointFn = std::function<Matrix(const Vector&)>;

/// Trapezoid mean of fn over w(t) = w - t (w - w_star). With check, evaluates on the
/// doubled grid and compares against its even-indexed subgrid.
Matrix integrate_path(const PointFn& fn, const Vector& w, const Vector& w_star, std::size_t n_quad, bool check,
                      const char* what) {
  if (n_quad < 2) throw std::invalid_argument("path-mean quadrature needs n_quad >= 2");
  if (w.size() != w_star.size()) {
    throw DimensionMismatch("path endpoints", static_cast<std::size_t>(w.size()),
                            static_cast<std::size_t>(w_star.size()));
  }
  const Vector direction = w - w_star;
  const std::size_t n_fine = check ? 2 * n_quad : n_quad;
  Matrix coarse;
  Matrix fine;
  for (std::size_t j = 0; j <= n_fine; ++j) {
    const double t = static_cast<double>(j) / static_cast<double>(n_fine);
    const Matrix value = fn(w - t * direction);
    const bool end = (j == 0 || j == n_fine);
    const double fine_weight = (end ? 0.5 : 1.0) / static_cast<double>(n_fine);
    if (j == 0) {
      fine = fine_weight * value;
    } else {
      fine += fine_weight * value;
    }
    if (check && j % 2 == 0) {
      const double coarse_weight = (end ? 0.5 : 1.0) / static_cast<double>(n_quad);
      if (j == 0) {
        coarse = coarse_weight * value;
      } else {
        coarse += coarse_weight * value;
      }
    }
  }
  if (check) {
    const double change = linalg::max_abs_diff(fine, coarse);
    if (change > kQuadratureTolerance) {
      throw QuadratureUnconverged(std::string(what) + ": doubling n_quad moved an entry", change);
    }
  }
  return fine;
}

}  // namespace

JacobianSet path_mean_jacobians_numeric(const Problem& p, const Vector& w, const Vector& w_star, std::size_t n_quad,
                                        const std::optional<Vector>& w_bar, bool check_convergence) {
  JacobianSet set;
  set.kind = JacobianSet::Kind::PathMean;
  set.on_path = !w_bar.has_value();
  if (w_bar) {
    const Vector fixed = *w_bar;
    set.H = integrate_path([&](const Vector& x) { return loss_hessian(p, x, fixed); }, w, w_star, n_quad,
                           check_convergence, "path-mean H");
    set.J_delta = integrate_path([&](const Vector& x) { return cross_jacobian(p, fixed, x); }, w, w_star, n_quad,
                                 check_convergence, "path-mean J_delta");
  } else {
    set.H = integrate_path([&](const Vector& x) { return loss_hessian(p, x, x); }, w, w_star, n_quad,
                           check_convergence, "path-mean H");
    set.J_delta = integrate_path([&](const Vector& x) { return cross_jacobian(p, x, x); }, w, w_star, n_quad,
                                 check_convergence, "path-mean J_delta");
  }
  set.J_TD = integrate_path([&](const Vector& x) { return td_jacobian(p, x); }, w, w_star, n_quad,
                            check_convergence, "path-mean J_TD");
  return set;
}

std::pair<Matrix, Matrix> regularised_jacobians(const Matrix& H_bar, const Matrix& J_delta_bar, double mix,
                                                double eta) {
  if (H_bar.rows() != H_bar.cols() || J_delta_bar.rows() != J_delta_bar.cols() || H_bar.rows() != J_delta_bar.rows()) {
    throw DimensionMismatch("regularised_jacobians", static_cast<std::size_t>(H_bar.rows()),
                            static_cast<std::size_t>(J_delta_bar.rows()));
  }
  const Matrix eye = Matrix::Identity(H_bar.rows(), H_bar.cols());
  Matrix h_reg = mix * H_bar - (1.0 - mix) * (J_delta_bar - eta * eye);
  Matrix j_reg = mix * J_delta_bar - (1.0 - mix) * (H_bar - eta * eye);
  return {std::move(h_reg), std::move(j_reg)};
}

double lambda_h_star(const Vector& eigenvalues, double alpha) {
  if (eigenvalues.size() == 0) throw std::invalid_argument("lambda_h_star: no eigenvalues");
  double best = eigenvalues(0);
  double best_score = std::abs(1.0 - alpha * best);
  for (Eigen::Index i = 1; i < eigenvalues.size(); ++i) {
    const double lambda = eigenvalues(i);
    const double score = std::abs(1.0 - alpha * lambda);
    if (score > best_score || (score == best_score && lambda < best)) {
      best = lambda;
      best_score = score;
    }
  }
  return best;
}

double condition_function(double alpha, std::uint64_t k, double lambda_h_star, double j_td_norm_star,
                          double j_fpe_norm_star) {
  if (k < 1) throw std::invalid_argument("condition_function: k must be at least 1");
  if (!(alpha > 0.0)) throw std::invalid_argument("condition_function: alpha must be positive");
  const double q = std::pow(std::abs(1.0 - alpha * lambda_h_star), static_cast<double>(k - 1));
  return q * j_td_norm_star + (1.0 + q) * j_fpe_norm_star;
}

double sigma_k(double alpha, std::uint64_t k, double lambda_h_star, double sigma_delta) {
  if (lambda_h_star == 0.0) throw DegenerateEigenvalue("sigma_k: lambda_H* is zero");
  const double q = std::pow(std::abs(1.0 - alpha * lambda_h_star), static_cast<double>(k));
  return (1.0 - q) * sigma_delta / lambda_h_star;
}

std::optional<std::uint64_t> min_k_for_contraction(double alpha, double lambda_min, double j_td_norm_star,
                                                   double j_fpe_norm_star) {
  if (!(j_fpe_norm_star < 1.0)) return std::nullopt;
  const auto c = [&](std::uint64_t k) {
    return condition_function(alpha, k, lambda_min, j_td_norm_star, j_fpe_norm_star);
  };
  if (c(1) < 1.0) return 1;
  const double q = std::abs(1.0 - alpha * lambda_min);
  if (!(q < 1.0)) return std::nullopt;
  if (q == 0.0) return 2;
  const double threshold =
      1.0 + (std::log(1.0 - j_fpe_norm_star) - std::log(j_td_norm_star + j_fpe_norm_star)) / std::log(q);
  if (!std::isfinite(threshold) || threshold > 1e15) return std::nullopt;
  auto k = static_cast<std::uint64_t>(std::max(1.0, std::floor(threshold) + 1.0));
  // Guard the rounding of the closed form.
  while (k > 1 && c(k - 1) < 1.0) --k;
  while (!(c(k) < 1.0)) ++k;
  return k;
}

double corollary_bound_curve(double l, double c, double alpha, double sigma_k_value, double initial_error) {
  if (!(c >= 0.0 && c < 1.0)) throw std::invalid_argument("corollary_bound_curve: c must lie in [0, 1)");
  const double ball = sigma_k_value / (1.0 - c);
  return alpha * ball + std::exp(-l * (1.0 - c)) * (initial_error - ball);
}

FpeNorm fpe_stability_norm(const Matrix& H_bar, const Matrix& J_delta_bar, bool allow_ridge) {
  if (H_bar.rows() != H_bar.cols() || H_bar.rows() != J_delta_bar.rows()) {
    throw DimensionMismatch("fpe_stability_norm", static_cast<std::size_t>(H_bar.rows()),
                            static_cast<std::size_t>(J_delta_bar.rows()));
  }
  Eigen::JacobiSVD<Matrix> svd(H_bar);
  const Vector& sv = svd.singularValues();
  const bool singular = sv(sv.size() - 1) <= 1e-12 * std::max(1.0, sv(0));
  FpeNorm out;
  if (!singular) {
    out.value = linalg::spectral_norm(H_bar.partialPivLu().solve(J_delta_bar));
    return out;
  }
  if (!allow_ridge) {
    throw SingularHessian("path-mean Hessian is singular (smallest singular value " +
                          std::to_string(sv(sv.size() - 1)) + ")");
  }
  const Matrix ridged = H_bar + kRidge * Matrix::Identity(H_bar.rows(), H_bar.cols());
  out.value = linalg::spectral_norm(ridged.partialPivLu().solve(J_delta_bar));
  out.ridge_used = true;
  return out;
}

ShiftCheck low_distribution_shift_check(const Matrix& phi, const Matrix& lookahead_phi, double gamma) {
  const Vector ev = linalg::symmetric_eigenvalues(phi - gamma * gamma * lookahead_phi);
  return {ev(0) > 0.0, ev(0)};
}

double nonlinear_jacobian_bound(const Problem& p, const std::vector<Vector>& samples) {
  if (samples.empty()) throw std::invalid_argument("nonlinear_jacobian_bound: no samples");
  double bound = -std::numeric_limits<double>::infinity();
  for (const Vector& w : samples) {
    const Matrix m = bellman_hessian_term(p, w) + outer_product_term(p, w);
    const Vector ev = linalg::symmetric_eigenvalues(m);
    bound = std::max(bound, ev(ev.size() - 1));
  }
  return bound;
}

double outer_map_spectral_radius(const GramMatrices& gram, double gamma, double alpha, std::uint64_t k) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(linalg::symmetrize(gram.phi));
  if (eig.info() != Eigen::Success) throw EigenSolverFailure("outer map: eigensolve of phi failed");
  const Vector& lambda = eig.eigenvalues();
  const double cutoff = 1e-10 * std::max(1.0, lambda.cwiseAbs().maxCoeff());
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < lambda.size(); ++i)
    if (lambda(i) > cutoff) keep.push_back(i);
  if (keep.empty()) return 0.0;
  const auto r = static_cast<Eigen::Index>(keep.size());
  Matrix u(gram.phi.rows(), r);
  Vector lr(r);
  for (Eigen::Index j = 0; j < r; ++j) {
    u.col(j) = eig.eigenvectors().col(keep[static_cast<std::size_t>(j)]);
    lr(j) = lambda(keep[static_cast<std::size_t>(j)]);
  }
  // In the eigenbasis of phi restricted to its range: A = diag(1 - alpha lambda),
  // F = diag(1/lambda) U^T gamma phi' U.
  const Matrix f = lr.cwiseInverse().asDiagonal() * (u.transpose() * (gamma * gram.phi_prime) * u);
  Vector ak(r);
  for (Eigen::Index j = 0; j < r; ++j) ak(j) = std::pow(1.0 - alpha * lr(j), static_cast<double>(k));
  Matrix m = (Vector::Ones(r) - ak).asDiagonal() * f;
  m.diagonal() += ak;
  return linalg::spectral_radius(linalg::general_eigenvalues(m));
}

bool SpectralReport::predicted_stable() const {
  if (outer_map_contracts.has_value()) return *outer_map_contracts || (condition_value && *condition_value < 1.0);
  return condition_value.has_value() && *condition_value < 1.0;
}

namespace {

std::vector<Vector> ball_samples(const Vector& center, double radius, std::size_t count, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto n = center.size();
  std::vector<Vector> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Vector dir(n);
    for (Eigen::Index j = 0; j < n; ++j) dir(j) = normal(rng);
    const double norm = dir.norm();
    if (norm == 0.0) {
      out.push_back(center);
      continue;
    }
    const double scale = radius * std::pow(unit(rng), 1.0 / static_cast<double>(n));
    out.push_back(center + (scale / norm) * dir);
  }
  return out;
}

/// Largest standard deviation of the sampled TD vector over the given points.
double estimate_sigma_delta(const Problem& p, const std::vector<Vector>& points, std::size_t transitions, double clip,
                            Rng& rng) {
  double worst = 0.0;
  for (const Vector& w : points) {
    Vector mean = Vector::Zero(w.size());
    std::vector<Vector> draws;
    draws.reserve(transitions);
    for (std::size_t i = 0; i < transitions; ++i) {
      const Transition t = sample_transition(p.mdp, p.d, p.mu, p.pi, rng);
      draws.push_back(td_error_vector(*p.approx, w, w, t, p.gamma(), clip));
      mean += draws.back();
    }
    mean /= static_cast<double>(transitions);
    double var = 0.0;
    for (const Vector& x : draws) var += (x - mean).squaredNorm();
    var /= static_cast<double>(std::max<std::size_t>(1, transitions - 1));
    worst = std::max(worst, std::sqrt(var));
  }
  return worst;
}

/// Gauss-Newton refinement of delta(w, w) = 0 from a starting point.
std::pair<Vector, bool> refine_fixed_point(const Problem& p, Vector w) {
  for (int it = 0; it < 100; ++it) {
    const Vector r = expected_td_vector(p, w, w);
    if (r.norm() < 1e-10) return {w, true};
    Eigen::CompleteOrthogonalDecomposition<Matrix> cod(td_jacobian(p, w));
    const Vector step = cod.solve(r);
    if (!step.allFinite()) break;
    w -= step;
  }
  return {w, expected_td_vector(p, w, w).norm() < 1e-10};
}

template <typename Fn>
void guarded(SpectralReport& report, const char* field, Fn&& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    report.unavailable[field] = e.what();
  }
}

void finish_report(SpectralReport& report) {
  if (report.lambda_h_star && report.j_td_norm_star && report.j_fpe_norm_star) {
    report.condition_value = condition_function(report.alpha, report.k, *report.lambda_h_star,
                                                *report.j_td_norm_star, *report.j_fpe_norm_star);
    report.contraction_constant = report.condition_value;
    report.assumption6 = *report.condition_value < 1.0;
    report.margins["assumption6"] = 1.0 - *report.condition_value;
    report.margins["condition_minus_fpe_norm"] = *report.condition_value - *report.j_fpe_norm_star;
  } else {
    report.unavailable.emplace("condition_value", "missing lambda_h_star or a norm");
  }
  if (report.lambda_h_star && report.sigma_delta) {
    guarded(report, "sigma_k", [&] {
      report.sigma_k = sigma_k(report.alpha, report.k, *report.lambda_h_star, *report.sigma_delta);
    });
  }
  if (report.j_td_norm_star && report.j_fpe_norm_star) {
    const double lambda_min = report.lambda_min.value_or(report.lambda_h_star.value_or(0.0));
    report.k_min = min_k_for_contraction(report.alpha, lambda_min, *report.j_td_norm_star, *report.j_fpe_norm_star);
  }
}

}  // namespace

SpectralReport synthetic_report(double alpha, std::uint64_t k, double lambda_h_star_value, double j_td_norm_star,
                                double j_fpe_norm_star, std::optional<double> sigma_delta) {
  SpectralReport report;
  report.alpha = alpha;
  report.k = k;
  report.lambda_h_star = lambda_h_star_value;
  report.lambda_min = lambda_h_star_value;
  report.j_td_norm_star = j_td_norm_star;
  report.j_fpe_norm_star = j_fpe_norm_star;
  report.sigma_delta = sigma_delta;
  report.assumption5 = j_fpe_norm_star < 1.0;
  report.margins["assumption5"] = 1.0 - j_fpe_norm_star;
  report.conventions["source"] = "synthetic norms supplied by the caller";
  finish_report(report);
  return report;
}

SpectralReport analyze(const Problem& p, const AnalysisSpec& spec) {
  SpectralReport report;
  report.alpha = spec.alpha;
  report.k = spec.k;
  report.conventions["loss"] = "half squared norm, so H = phi for linear features";
  report.conventions["phi_prime"] = "E[phi(s,a) E'[phi(s',a')]^T]";
  report.conventions["region"] = {{"radius", spec.radius}, {"samples", spec.samples}, {"n_quad", spec.n_quad}};

  Rng rng(spec.seed);
  const auto* linear = dynamic_cast<const LinearApproximator*>(p.approx.get());
  Vector w_star;

  if (linear != nullptr) {
    const GramMatrices gram = gram_matrices(p.mdp, linear->features(), p.d, p.mu, p.pi);
    const double gamma = p.gamma();
    try {
      w_star = td_fixed_point_linear(gram, gamma, false);
      report.conventions["fixed_point"] = "unique solution";
    } catch (const SingularSystem&) {
      w_star = td_fixed_point_linear(gram, gamma, true);
      report.conventions["fixed_point"] = "minimum-norm solution of a singular system";
    }
    const Matrix& h = gram.phi;
    const Matrix j_delta = gamma * gram.phi_prime;
    const Matrix j_td = td_jacobian_linear(gram, gamma);
    report.conventions["sup_over_region"] = "exact: linear Jacobians are constant";

    guarded(report, "lambda_h_star", [&] {
      const Vector ev = linalg::symmetric_eigenvalues(h);
      report.lambda_h_star = lambda_h_star(ev, spec.alpha);
      report.lambda_min = ev(0);
    });
    guarded(report, "j_td_norm_star", [&] {
      report.j_td_norm_star = linalg::spectral_norm(Matrix::Identity(h.rows(), h.cols()) + spec.alpha * j_td);
    });
    guarded(report, "j_fpe_norm_star", [&] {
      const FpeNorm f = fpe_stability_norm(h, j_delta, true);
      report.j_fpe_norm_star = f.value;
      report.conventions["fpe_ridge_used"] = f.ridge_used;
      report.assumption5 = f.value < 1.0;
      report.margins["assumption5"] = 1.0 - f.value;
    });
    guarded(report, "assumption4", [&] {
      const double top = linalg::max_real_part(linalg::general_eigenvalues(j_td));
      report.assumption4 = top < 0.0;
      report.margins["assumption4"] = -top;
    });
    guarded(report, "low_shift", [&] {
      const ShiftCheck check =
          low_distribution_shift_check(gram.phi, lookahead_gram(p.mdp, linear->features(), p.d, p.mu, p.pi), gamma);
      report.low_shift = check.passed;
      report.margins["low_shift"] = check.margin;
    });
    guarded(report, "outer_map_spectral_radius", [&] {
      const double rho = outer_map_spectral_radius(gram, gamma, spec.alpha, spec.k);
      report.outer_map_spectral_radius = rho;
      report.outer_map_contracts = rho < 1.0;
      report.margins["outer_map"] = 1.0 - rho;
    });
  } else {
    const Vector start = spec.center.value_or(Vector::Zero(static_cast<Eigen::Index>(p.approx->param_dim())));
    bool converged = false;
    std::tie(w_star, converged) = refine_fixed_point(p, start);
    report.conventions["fixed_point"] =
        converged ? "Gauss-Newton refinement of the region center" : "region center (refinement did not converge)";
    report.conventions["sup_over_region"] = "Monte Carlo maximum over the sampled ball";

    const std::vector<Vector> pts = ball_samples(w_star, spec.radius, spec.samples, rng);
    double best_lambda = 0.0;
    double best_score = -1.0;
    double lambda_min = std::numeric_limits<double>::infinity();
    double td_norm = 0.0;
    double fpe_norm = 0.0;
    double a5_norm = 0.0;
    double top_real = -std::numeric_limits<double>::infinity();
    bool ridge = false;
    bool ok = true;
    for (std::size_t j = 0; j < pts.size() && ok; ++j) {
      const Vector& w = pts[j];
      const Vector& w2 = pts[(j + 1) % pts.size()];
      const bool check = (j == 0);
      try {
        const Matrix h_bar = integrate_path([&](const Vector& x) { return loss_hessian(p, x, w); }, w2, w_star,
                                            spec.n_quad, check, "path-mean H");
        const Matrix jd_bar = integrate_path([&](const Vector& x) { return cross_jacobian(p, w2, x); }, w, w_star,
                                             spec.n_quad, check, "path-mean J_delta");
        const Matrix jd_star = integrate_path([&](const Vector& x) { return cross_jacobian(p, w_star, x); }, w,
                                              w_star, spec.n_quad, check, "path-mean J_delta");
        const Matrix jtd_bar = integrate_path([&](const Vector& x) { return td_jacobian(p, x); }, w, w_star,
                                              spec.n_quad, check, "path-mean J_TD");
        const Vector ev = linalg::symmetric_eigenvalues(h_bar);
        for (Eigen::Index i = 0; i < ev.size(); ++i) {
          const double score = std::abs(1.0 - spec.alpha * ev(i));
          if (score > best_score || (score == best_score && ev(i) < best_lambda)) {
            best_score = score;
            best_lambda = ev(i);
          }
        }
        lambda_min = std::min(lambda_min, ev(0));
        td_norm = std::max(td_norm, linalg::spectral_norm(Matrix::Identity(w.size(), w.size()) + spec.alpha * jtd_bar));
        const FpeNorm f = fpe_stability_norm(h_bar, jd_bar, true);
        const FpeNorm f5 = fpe_stability_norm(h_bar, jd_star, true);
        ridge = ridge || f.ridge_used || f5.ridge_used;
        fpe_norm = std::max(fpe_norm, f.value);
        a5_norm = std::max(a5_norm, f5.value);
        top_real = std::max(top_real, linalg::max_real_part(linalg::general_eigenvalues(jtd_bar)));
      } catch (const std::exception& e) {
        report.unavailable["region_sup"] = e.what();
        ok = false;
      }
    }
    if (ok) {
      report.lambda_h_star = best_lambda;
      report.lambda_min = lambda_min;
      report.j_td_norm_star = td_norm;
      report.j_fpe_norm_star = fpe_norm;
      report.conventions["fpe_ridge_used"] = ridge;
      report.assumption4 = top_real < 0.0;
      report.margins["assumption4"] = -top_real;
      report.assumption5 = a5_norm < 1.0;
      report.margins["assumption5"] = 1.0 - a5_norm;
    }
    guarded(report, "nonlinear_jacobian_bound",
            [&] { report.margins["nonlinear_jacobian_bound"] = nonlinear_jacobian_bound(p, pts); });
    report.unavailable.emplace("low_shift", "defined for linear features only");
    report.unavailable.emplace("outer_map_spectral_radius", "defined for linear features only");
  }

  if (spec.sigma_delta) {
    report.sigma_delta = *spec.sigma_delta;
    report.conventions["sigma_delta"] = "supplied";
  } else {
    guarded(report, "sigma_delta", [&] {
      const std::size_t count = std::min(spec.sigma_points, std::max<std::size_t>(1, spec.samples));
      const std::vector<Vector> pts = ball_samples(w_star, spec.radius, count, rng);
      report.sigma_delta = estimate_sigma_delta(p, pts, spec.sigma_transitions, spec.clip, rng);
      report.conventions["sigma_delta"] = "max sample standard deviation of the TD vector over " +
                                          std::to_string(count) + " points x " +
                                          std::to_string(spec.sigma_transitions) + " transitions";
    });
  }

  finish_report(report);
  return report;
}

namespace {

template <typename T>
nlohmann::json opt(const std::optional<T>& v) {
  if (!v) return nullptr;
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(*v)) return nullptr;
  }
  return *v;
}

}  // namespace

nlohmann::json report_to_json(const SpectralReport& r) {
  nlohmann::json margins = nlohmann::json::object();
  for (const auto& [key, value] : r.margins) margins[key] = std::isfinite(value) ? nlohmann::json(value) : nlohmann::json(nullptr);
  nlohmann::json unavailable = nlohmann::json::object();
  for (const auto& [key, value] : r.unavailable) unavailable[key] = value;
  return {{"alpha", r.alpha},
          {"k", r.k},
          {"lambda_h_star", opt(r.lambda_h_star)},
          {"lambda_min", opt(r.lambda_min)},
          {"j_td_norm_star", opt(r.j_td_norm_star)},
          {"j_fpe_norm_star", opt(r.j_fpe_norm_star)},
          {"condition_value", opt(r.condition_value)},
          {"sigma_k", opt(r.sigma_k)},
          {"contraction_constant", opt(r.contraction_constant)},
          {"k_min", opt(r.k_min)},
          {"sigma_delta", opt(r.sigma_delta)},
          {"outer_map_spectral_radius", opt(r.outer_map_spectral_radius)},
          {"predicted_stable", r.predicted_stable()},
          {"verdicts",
           {{"assumption4", opt(r.assumption4)},
            {"assumption5", opt(r.assumption5)},
            {"assumption6", opt(r.assumption6)},
            {"low_shift", opt(r.low_shift)},
            {"outer_map_contracts", opt(r.outer_map_contracts)}}},
          {"margins", margins},
          {"conventions", r.conventions},
          {"unavailable", unavailable}};
}

}  // namespace pfpe
