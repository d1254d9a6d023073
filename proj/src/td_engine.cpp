#include "pfpe/td_engine.hpp"

#include "pfpe/errors.hpp"

#include <cmath>
#include <iomanip>
#include <limits>

namespace pfpe {

Problem::Problem(FiniteMdp mdp_in, std::shared_ptr<const Approximator> approx_in, StateDistribution d_in,
                 Policy mu_in, Policy pi_in)
    : mdp(std::move(mdp_in)),
      approx(std::move(approx_in)),
      d(std::move(d_in)),
      mu(std::move(mu_in)),
      pi(std::move(pi_in)) {
  if (!approx) throw std::invalid_argument("Problem: approximator is null");
  if (d.size() != mdp.n_states()) throw DimensionMismatch("sampling distribution", mdp.n_states(), d.size());
  for (const Policy* p : {&mu, &pi}) {
    if (p->n_states() != mdp.n_states()) throw DimensionMismatch("policy states", mdp.n_states(), p->n_states());
    if (p->n_actions() != mdp.n_actions()) {
      throw DimensionMismatch("policy actions", mdp.n_actions(), p->n_actions());
    }
  }
  if (approx->n_states() != mdp.n_states() || approx->n_actions() != mdp.n_actions()) {
    throw DimensionMismatch("approximator pairs", mdp.n_pairs(), approx->n_states() * approx->n_actions());
  }
}

StepSizeSchedule StepSizeSchedule::constant(double alpha) {
  if (!(alpha > 0.0)) throw std::invalid_argument("constant step size must be positive");
  return {Kind::Constant, alpha, 1.0};
}

StepSizeSchedule StepSizeSchedule::robbins_munro(double alpha0, double p) {
  if (!(alpha0 > 0.0)) throw std::invalid_argument("Robbins-Munro alpha0 must be positive");
  if (!(p > 0.5 && p <= 1.0)) throw std::invalid_argument("Robbins-Munro exponent must lie in (0.5, 1]");
  return {Kind::RobbinsMunro, alpha0, p};
}

double StepSizeSchedule::operator()(std::uint64_t l) const {
  if (kind == Kind::Constant) return alpha0;
  return alpha0 / std::pow(1.0 + static_cast<double>(l), power);
}

TargetUpdateRule TargetUpdateRule::with_momentum(double mu_m) {
  if (!(mu_m >= 0.0 && mu_m <= 1.0)) throw std::invalid_argument("momentum must lie in [0, 1]");
  return {Kind::Momentum, mu_m};
}

void RunConfig::validate() const {
  if (k < 1) throw std::invalid_argument("k must be at least 1");
  if (n_target_updates < 1) throw std::invalid_argument("n_target_updates must be at least 1");
  if (!(clip > 0.0)) throw std::invalid_argument("clip threshold must be positive");
  if (!(divergence_threshold > 0.0)) throw std::invalid_argument("divergence threshold must be positive");
  if (schedule.kind == StepSizeSchedule::Kind::Constant && !(schedule.alpha0 > 0.0)) {
    throw std::invalid_argument("step size must be positive");
  }
  if (schedule.kind == StepSizeSchedule::Kind::RobbinsMunro &&
      !(schedule.alpha0 > 0.0 && schedule.power > 0.5 && schedule.power <= 1.0)) {
    throw std::invalid_argument("invalid Robbins-Munro schedule");
  }
  if (!(target_rule.momentum >= 0.0 && target_rule.momentum <= 1.0)) {
    throw std::invalid_argument("momentum must lie in [0, 1]");
  }
  if (regularisation.enabled && !(regularisation.eta >= 0.0)) {
    throw std::invalid_argument("regularisation strength must be nonnegative");
  }
}

Vector td_error_vector(const Approximator& q, const Vector& w, const Vector& w_target, const Transition& t,
                       double gamma, double c_clip) {
  const double delta = t.r + gamma * q.value(w_target, t.s_next, t.a_next) - q.value(w, t.s, t.a);
  return clip_vector(delta * q.grad(w, t.s, t.a), c_clip);
}

Vector expected_td_vector(const Problem& problem, const Vector& w, const Vector& w_target) {
  const FiniteMdp& mdp = problem.mdp;
  const Approximator& q = *problem.approx;
  const std::size_t n_s = mdp.n_states();
  const std::size_t n_a = mdp.n_actions();

  std::vector<double> next_value(n_s, 0.0);
  for (std::size_t s2 = 0; s2 < n_s; ++s2) {
    for (std::size_t a2 = 0; a2 < n_a; ++a2) {
      const double p = problem.pi(s2, a2);
      if (p != 0.0) next_value[s2] += p * q.value(w_target, s2, a2);
    }
  }

  Vector out = Vector::Zero(static_cast<Eigen::Index>(q.param_dim()));
  for (std::size_t s = 0; s < n_s; ++s) {
    for (std::size_t a = 0; a < n_a; ++a) {
      const double weight = problem.d(s) * problem.mu(s, a);
      if (weight == 0.0) continue;
      double bootstrap = 0.0;
      for (std::size_t s2 = 0; s2 < n_s; ++s2) bootstrap += mdp.transition(s, a, s2) * next_value[s2];
      const double delta = mdp.reward_mean(s, a) + mdp.gamma() * bootstrap - q.value(w, s, a);
      out.noalias() += (weight * delta) * q.grad(w, s, a);
    }
  }
  return out;
}

Vector regularised_td_vector(const Problem& problem, const Vector& w, const Vector& w_target,
                             const Regularisation& reg) {
  if (!reg.enabled) return expected_td_vector(problem, w, w_target);
  const Vector forward = expected_td_vector(problem, w, w_target);
  const Vector swapped = expected_td_vector(problem, w_target, w);
  // Written as a correction to forward so equal arguments return forward bit for bit.
  return forward + (1.0 - reg.mix) * ((swapped - forward) - reg.eta * (w - w_target));
}

namespace {

bool blown_up(const Vector& w, double threshold) { return !w.allFinite() || w.norm() > threshold; }

}  // namespace

Vector pfpe_inner_step(const Problem& problem, const Vector& w, const Vector& w_target, double alpha,
                       const RunConfig& config, Rng* rng) {
  Vector direction;
  if (config.mode == UpdateMode::ExactExpectation) {
    direction = regularised_td_vector(problem, w, w_target, config.regularisation);
  } else {
    if (rng == nullptr) throw std::invalid_argument("sampled update needs a generator");
    const Transition t = sample_transition(problem.mdp, problem.d, problem.mu, problem.pi, *rng);
    const Approximator& q = *problem.approx;
    const double gamma = problem.gamma();
    direction = td_error_vector(q, w, w_target, t, gamma, config.clip);
    const Regularisation& reg = config.regularisation;
    if (reg.enabled) {
      const Vector swapped = td_error_vector(q, w_target, w, t, gamma, config.clip);
      direction += (1.0 - reg.mix) * ((swapped - direction) - reg.eta * (w - w_target));
    }
  }
  Vector next = w + alpha * direction;
  if (blown_up(next, config.divergence_threshold)) {
    throw Diverged("parameter norm exceeded the divergence threshold", RunTrace{});
  }
  return next;
}

Vector target_update(const Vector& w_i, const Vector& w_i_minus_k, const Vector& w_i_minus_2k,
                     const TargetUpdateRule& rule, std::uint64_t step, std::uint64_t k) {
  if (k == 0 || step % k != 0) {
    throw CalledOffSchedule("target update requested at step " + std::to_string(step) +
                            ", which is not a multiple of k = " + std::to_string(k));
  }
  if (rule.kind == TargetUpdateRule::Kind::PeriodicCopy) return w_i;
  const double m = rule.momentum;
  return (1.0 - m) * w_i + m * (w_i_minus_k - w_i_minus_2k);
}

TargetUpdater::TargetUpdater(TargetUpdateRule rule, std::uint64_t k, const Vector& w0)
    : rule_(rule), k_(k), back_k_(w0), back_2k_(w0) {}

Vector TargetUpdater::update(std::uint64_t step, const Vector& w_i) {
  Vector next = target_update(w_i, back_k_, back_2k_, rule_, step, k_);
  back_2k_ = std::move(back_k_);
  back_k_ = w_i;
  return next;
}

namespace {

Vector default_initial_params(const Problem& problem, const RunConfig& config) {
  if (config.initial_params) {
    if (static_cast<std::size_t>(config.initial_params->size()) != problem.approx->param_dim()) {
      throw DimensionMismatch("initial parameters", problem.approx->param_dim(),
                              static_cast<std::size_t>(config.initial_params->size()));
    }
    return *config.initial_params;
  }
  if (const auto* mlp = dynamic_cast<const MlpApproximator*>(problem.approx.get())) {
    Rng init_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
    return mlp->initial_params(init_rng);
  }
  return Vector::Zero(static_cast<Eigen::Index>(problem.approx->param_dim()));
}

TraceRow make_row(const Problem& problem, const RunConfig& config, std::uint64_t l, std::uint64_t step,
                  double alpha, const Vector& target) {
  TraceRow row;
  row.l = l;
  row.step = step;
  row.alpha = alpha;
  row.td_error_norm = expected_td_vector(problem, target, target).norm();
  row.dist_to_fixed_point = config.fixed_point ? (target - *config.fixed_point).norm()
                                               : std::numeric_limits<double>::quiet_NaN();
  row.param_norm = target.norm();
  return row;
}

}  // namespace

RunTrace run_pfpe(const Problem& problem_in, const RunConfig& config) {
  config.validate();
  const Problem problem = config.gamma_override
                              ? Problem(problem_in.mdp.with_gamma(*config.gamma_override), problem_in.approx,
                                        problem_in.d, problem_in.mu, problem_in.pi)
                              : problem_in;
  if (config.fixed_point && static_cast<std::size_t>(config.fixed_point->size()) != problem.approx->param_dim()) {
    throw DimensionMismatch("fixed point", problem.approx->param_dim(),
                            static_cast<std::size_t>(config.fixed_point->size()));
  }

  Rng rng(config.seed);
  Vector w = default_initial_params(problem, config);
  Vector target = w;
  TargetUpdater updater(config.target_rule, config.k, w);

  RunTrace trace;
  trace.rows.reserve(config.n_target_updates + 1);
  trace.targets.reserve(config.n_target_updates + 1);
  trace.rows.push_back(make_row(problem, config, 0, 0, config.schedule(0), target));
  trace.targets.push_back(target);

  std::uint64_t step = 0;
  Rng* sampler = config.mode == UpdateMode::Sampled ? &rng : nullptr;
  for (std::uint64_t l = 0; l < config.n_target_updates; ++l) {
    const double alpha = config.schedule(l);
    try {
      for (std::uint64_t j = 0; j < config.k; ++j) {
        w = pfpe_inner_step(problem, w, target, alpha, config, sampler);
        ++step;
      }
    } catch (const Diverged&) {
      // Record the iterate that crossed the threshold, then hand back the trace.
      TraceRow row;
      row.l = l + 1;
      row.step = step + 1;
      row.alpha = alpha;
      row.td_error_norm = std::numeric_limits<double>::infinity();
      row.dist_to_fixed_point = config.fixed_point ? std::numeric_limits<double>::infinity()
                                                   : std::numeric_limits<double>::quiet_NaN();
      row.param_norm = std::numeric_limits<double>::infinity();
      row.diverged = true;
      trace.rows.push_back(row);
      trace.diverged = true;
      throw Diverged("run diverged at step " + std::to_string(step + 1), std::move(trace));
    }
    target = updater.update(step, w);
    TraceRow row = make_row(problem, config, l + 1, step, alpha, target);
    if (blown_up(target, config.divergence_threshold) || !std::isfinite(row.td_error_norm)) {
      row.diverged = true;
      trace.rows.push_back(row);
      trace.targets.push_back(target);
      trace.diverged = true;
      throw Diverged("target parameters diverged at step " + std::to_string(step), std::move(trace));
    }
    trace.rows.push_back(row);
    trace.targets.push_back(target);
  }
  return trace;
}

RunTrace run_pfpe_collect(const Problem& problem, const RunConfig& config) {
  try {
    return run_pfpe(problem, config);
  } catch (const Diverged& e) {
    return e.trace();
  }
}

FpeSolution fpe_solve_linear(const GramMatrices& gram, double gamma, const Vector& w_target, bool allow_ridge) {
  const auto n = gram.phi.rows();
  if (gram.phi.cols() != n || gram.phi_prime.rows() != n || gram.phi_prime.cols() != n || gram.b.size() != n) {
    throw DimensionMismatch("gram matrices", static_cast<std::size_t>(n), static_cast<std::size_t>(gram.b.size()));
  }
  if (w_target.size() != n) {
    throw DimensionMismatch("target parameters", static_cast<std::size_t>(n), static_cast<std::size_t>(w_target.size()));
  }
  const Vector rhs = gram.b + gamma * gram.phi_prime * w_target;
  const double tolerance = 1e-10 * std::max(1.0, rhs.norm());

  Eigen::JacobiSVD<Matrix> svd(gram.phi);
  const Vector& sv = svd.singularValues();
  const bool singular = sv(n - 1) <= 1e-12 * std::max(1.0, sv(0));

  FpeSolution out;
  if (!singular) {
    out.w = gram.phi.partialPivLu().solve(rhs);
    out.residual = (rhs - gram.phi * out.w).norm();
    if (out.residual <= tolerance) return out;
    if (!allow_ridge) {
      throw SingularGramMatrix("feature Gram matrix too ill-conditioned: residual " + std::to_string(out.residual));
    }
  } else if (!allow_ridge) {
    throw SingularGramMatrix("feature Gram matrix is singular (smallest singular value " +
                             std::to_string(sv(n - 1)) + ")");
  }
  const Matrix ridged = gram.phi + kRidge * Matrix::Identity(n, n);
  out.w = ridged.ldlt().solve(rhs);
  out.residual = (rhs - gram.phi * out.w).norm();
  out.ridge_used = true;
  return out;
}

Vector td_fixed_point_linear(const GramMatrices& gram, double gamma, bool allow_min_norm) {
  const Matrix a = gram.phi - gamma * gram.phi_prime;
  const auto n = a.rows();
  Eigen::JacobiSVD<Matrix> svd(a);
  const Vector& sv = svd.singularValues();
  const double sigma_min = sv(n - 1);
  if (sigma_min > 1e-10 * std::max(1.0, sv(0))) {
    Vector w = a.partialPivLu().solve(gram.b);
    const double residual = (gram.b - a * w).norm();
    if (residual <= 1e-10 * std::max(1.0, gram.b.norm())) return w;
  }
  if (!allow_min_norm) throw SingularSystem("TD fixed-point system is singular", sigma_min);
  Eigen::CompleteOrthogonalDecomposition<Matrix> cod(a);
  cod.setThreshold(1e-10);
  return cod.solve(gram.b);
}

void write_trace_csv(std::ostream& out, const std::string& run_id, std::uint64_t seed, std::uint64_t k,
                     const RunTrace& trace) {
  const auto old_precision = out.precision(12);
  for (const TraceRow& row : trace.rows) {
    out << run_id << ',' << seed << ',' << row.l << ',' << row.step << ',' << k << ',' << row.alpha << ','
        << row.td_error_norm << ',' << row.dist_to_fixed_point << ',' << row.param_norm << ','
        << (row.diverged ? 1 : 0) << '\n';
  }
  out.precision(old_precision);
}

}  // namespace pfpe
