#include "pfpe/errors.hpp"
#include "pfpe/spectral.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <gtest/gtest.h>

#include <cmath>

using namespace pfpe;

namespace {

Problem linear_problem(const FiniteMdp& mdp, const FeatureMap& fm, const StateDistribution& d, const Policy& mu,
                       const Policy& pi) {
  return Problem(mdp, std::make_shared<LinearApproximator>(fm), d, mu, pi);
}

Problem cycle_problem(double gamma = 0.9) {
  return linear_problem(make_cycle2(gamma), FeatureMap::one_hot(2, 1), StateDistribution::uniform(2),
                        Policy::uniform(2, 1), Policy::uniform(2, 1));
}

GramMatrices gram_of(const Problem& p) {
  const auto& lin = dynamic_cast<const LinearApproximator&>(*p.approx);
  return gram_matrices(p.mdp, lin.features(), p.d, p.mu, p.pi);
}

Problem baird_problem() {
  const BairdSetup b = build_baird();
  return linear_problem(b.mdp, b.features, b.d, b.mu, b.pi);
}

// On-policy ergodic problem with one-hot features: d = d^pi, mu = pi.
Problem on_policy(std::uint64_t seed, double gamma = 0.9) {
  Rng rng(seed);
  const std::size_t n_s = 2 + seed % 9;
  const std::size_t n_a = 1 + seed % 3;
  const FiniteMdp mdp = random_ergodic_mdp(rng, n_s, n_a, 1.0, gamma);
  const Policy pi = random_full_support_policy(rng, n_s, n_a);
  return linear_problem(mdp, FeatureMap::one_hot(n_s, n_a), stationary_distribution(mdp, pi), pi, pi);
}

Problem mlp_problem(std::uint64_t seed, bool zero_rewards = false) {
  Rng rng(seed);
  FiniteMdp mdp = random_ergodic_mdp(rng, 3, 2, 1.0, 0.8);
  if (zero_rewards) {
    std::vector<double> t;
    for (std::size_t s = 0; s < 3; ++s)
      for (std::size_t a = 0; a < 2; ++a)
        for (std::size_t s2 = 0; s2 < 3; ++s2) t.push_back(mdp.transition(s, a, s2));
    mdp = FiniteMdp(3, 2, t, std::vector<double>(6, 0.0), 0.0, 0.8, 1.0);
  }
  const Policy mu = random_full_support_policy(rng, 3, 2);
  const Policy pi = random_full_support_policy(rng, 3, 2);
  return Problem(mdp, std::make_shared<MlpApproximator>(MlpSpec{3, 2, 4}), StateDistribution::uniform(3), mu, pi);
}

Vector random_params(Rng& rng, std::size_t n, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Vector v(static_cast<Eigen::Index>(n));
  for (auto& x : v) x = u(rng);
  return v;
}

/// Central differences of f: R^n -> R^n, column j = d f / d x_j.
template <typename Fn>
Matrix jacobian_fd(Fn&& f, const Vector& x, double h = 1e-5) {
  const auto n = x.size();
  Matrix out(f(x).size(), n);
  for (Eigen::Index j = 0; j < n; ++j) {
    Vector xp = x, xm = x;
    xp(j) += h;
    xm(j) -= h;
    out.col(j) = (f(xp) - f(xm)) / (2 * h);
  }
  return out;
}

}  // namespace

// ---- Gram matrices and linear Jacobians ----

TEST(GramMatrices, SelfLoopScalar) {
  const Problem p = linear_problem(make_self_loop(0.7, 0.9), FeatureMap(1, 1, Matrix::Ones(1, 1)),
                                   StateDistribution::uniform(1), Policy::uniform(1, 1), Policy::uniform(1, 1));
  const GramMatrices g = gram_of(p);
  EXPECT_DOUBLE_EQ(g.phi(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(g.phi_prime(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(g.b(0), 0.7);
  EXPECT_DOUBLE_EQ(td_jacobian_linear(g, 0.9)(0, 0), 0.9 - 1.0);
  EXPECT_DOUBLE_EQ(loss_hessian_linear(g)(0, 0), 1.0);
}

TEST(GramMatrices, Cycle) {
  const GramMatrices g = gram_of(cycle_problem());
  Matrix perm(2, 2);
  perm << 0, 1, 1, 0;
  EXPECT_LE((g.phi - 0.5 * Matrix::Identity(2, 2)).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LE((g.phi_prime - 0.5 * perm).cwiseAbs().maxCoeff(), 1e-15);
  Matrix expected(2, 2);
  expected << -0.5, 0.45, 0.45, -0.5;
  EXPECT_LE((td_jacobian_linear(g, 0.9) - expected).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(GramMatrices, BairdRankDeficient) {
  const GramMatrices g = gram_of(baird_problem());
  Eigen::BDCSVD<Matrix> svd(g.phi);
  svd.setThreshold(1e-10);
  EXPECT_EQ(g.phi.rows(), 8);
  EXPECT_LE(svd.rank(), 7);
  EXPECT_LE((g.phi - g.phi.transpose()).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_GE(linalg::symmetric_eigenvalues(g.phi)(0), -1e-10);
}

TEST(TdJacobianLinear, BairdHasUnstableMode) {
  const GramMatrices g = gram_of(baird_problem());
  EXPECT_GT(linalg::max_real_part(linalg::general_eigenvalues(td_jacobian_linear(g, 0.99))), 0.0);
}

TEST(TdJacobianLinear, OnPolicyModesAreStable) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Problem p = on_policy(seed);
    EXPECT_LT(linalg::max_real_part(linalg::general_eigenvalues(td_jacobian_linear(gram_of(p), p.gamma()))), 0.0)
        << seed;
  }
}

TEST(LossHessianLinear, OneHotUniform) {
  const std::size_t m = 5;
  const Problem p = linear_problem(make_cycle2(), FeatureMap::one_hot(2, 1), StateDistribution::uniform(2),
                                   Policy::uniform(2, 1), Policy::uniform(2, 1));
  EXPECT_LE((loss_hessian_linear(gram_of(p)) - 0.5 * Matrix::Identity(2, 2)).cwiseAbs().maxCoeff(), 1e-15);
  Rng rng(1);
  const FiniteMdp mdp = random_ergodic_mdp(rng, m, 1, 1.0);
  const Problem q = linear_problem(mdp, FeatureMap::one_hot(m, 1), StateDistribution::uniform(m), Policy::uniform(m, 1),
                                   Policy::uniform(m, 1));
  EXPECT_LE((loss_hessian_linear(gram_of(q)) - Matrix::Identity(5, 5) / 5.0).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(LossHessianLinear, MatchesFiniteDifferencesOfLossGradient) {
  const Problem p = baird_problem();
  Rng rng(2);
  for (int trial = 0; trial < 5; ++trial) {
    const Vector w = random_params(rng, 8, 3.0);
    const Vector w_bar = random_params(rng, 8, 3.0);
    // The loss gradient is -delta(w, w_bar).
    const Matrix fd = jacobian_fd([&](const Vector& x) { Vector g = -expected_td_vector(p, x, w_bar); return g; }, w);
    EXPECT_LE((fd - loss_hessian_linear(gram_of(p))).cwiseAbs().maxCoeff(), 1e-8);
  }
}

// ---- pointwise and path-mean Jacobians ----

TEST(Jacobians, LinearPointwiseEqualsGramForms) {
  const Problem p = baird_problem();
  const GramMatrices g = gram_of(p);
  const JacobianSet set = pointwise_jacobians(p, Vector::LinSpaced(8, -1.0, 1.0));
  EXPECT_LE((set.H - g.phi).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((set.J_delta - 0.99 * g.phi_prime).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((set.J_TD - td_jacobian_linear(g, 0.99)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE(set.identity_residual(), 1e-9);
}

TEST(Jacobians, LinearPathMeanIsConstant) {
  const Problem p = baird_problem();
  const GramMatrices g = gram_of(p);
  Rng rng(4);
  for (std::size_t n_quad : {2u, 5u, 16u}) {
    const JacobianSet set = path_mean_jacobians_numeric(p, random_params(rng, 8, 5.0), random_params(rng, 8, 5.0), n_quad);
    EXPECT_LE((set.H - g.phi).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE((set.J_TD - td_jacobian_linear(g, 0.99)).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE(set.identity_residual(), 1e-9);
    EXPECT_EQ(set.kind, JacobianSet::Kind::PathMean);
  }
}

TEST(Jacobians, MlpPointwiseMatchesFiniteDifferences) {
  const Problem p = mlp_problem(5);
  Rng rng(6);
  for (int trial = 0; trial < 4; ++trial) {
    const Vector w = random_params(rng, p.approx->param_dim(), 0.8);
    const Vector wt = random_params(rng, p.approx->param_dim(), 0.8);
    const Matrix h_fd = jacobian_fd([&](const Vector& x) { Vector g = -expected_td_vector(p, x, wt); return g; }, w);
    EXPECT_LE(fd::relative_error(h_fd, loss_hessian(p, w, wt)), 1e-4);
    const Matrix jd_fd = jacobian_fd([&](const Vector& x) { return expected_td_vector(p, w, x); }, wt);
    EXPECT_LE(fd::relative_error(jd_fd, cross_jacobian(p, w, wt)), 1e-4);
    const Matrix jtd_fd = jacobian_fd([&](const Vector& x) { return expected_td_vector(p, x, x); }, w);
    EXPECT_LE(fd::relative_error(jtd_fd, td_jacobian(p, w)), 1e-4);
  }
}

TEST(Jacobians, MlpIdentityHoldsPointwiseAndOnPath) {
  const Problem p = mlp_problem(7);
  Rng rng(8);
  for (int trial = 0; trial < 5; ++trial) {
    const Vector w = random_params(rng, p.approx->param_dim(), 1.0);
    EXPECT_LE(pointwise_jacobians(p, w).identity_residual(), 1e-9);
    const Vector w_star = w + 0.1 * random_params(rng, p.approx->param_dim(), 1.0);
    const JacobianSet set = path_mean_jacobians_numeric(p, w, w_star, 16, std::nullopt, false);
    EXPECT_TRUE(set.on_path);
    EXPECT_LE(set.identity_residual(), 1e-9);
  }
}

TEST(Jacobians, OffPathVariantIsFlagged) {
  const Problem p = mlp_problem(9);
  Rng rng(1);
  const Vector w = random_params(rng, p.approx->param_dim(), 0.5);
  const Vector w_bar = random_params(rng, p.approx->param_dim(), 0.5);
  const JacobianSet set = path_mean_jacobians_numeric(p, w, w + 0.05 * w_bar, 8, w_bar, false);
  EXPECT_FALSE(set.on_path);
}

TEST(Jacobians, DegenerateLineEqualsPointwise) {
  const Problem p = mlp_problem(10);
  Rng rng(3);
  const Vector w = random_params(rng, p.approx->param_dim(), 1.0);
  const JacobianSet path = path_mean_jacobians_numeric(p, w, w, 4);
  const JacobianSet point = pointwise_jacobians(p, w);
  EXPECT_LE((path.H - point.H).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((path.J_delta - point.J_delta).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((path.J_TD - point.J_TD).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Jacobians, MlpQuadratureSelfConsistent) {
  const Problem p = mlp_problem(11);
  Rng rng(12);
  // Path starts at the network's own initialisation.
  const Vector w = dynamic_cast<const MlpApproximator&>(*p.approx).initial_params(rng);
  const Vector w_star = w + 0.1 * random_params(rng, p.approx->param_dim(), 1.0);
  const JacobianSet a = path_mean_jacobians_numeric(p, w, w_star, 64, std::nullopt, false);
  const JacobianSet b = path_mean_jacobians_numeric(p, w, w_star, 128, std::nullopt, false);
  const JacobianSet c = path_mean_jacobians_numeric(p, w, w_star, 256, std::nullopt, false);
  // Composite trapezoid is second order: halving the step cuts the change by four.
  const double ratio = (a.H - b.H).cwiseAbs().maxCoeff() / (b.H - c.H).cwiseAbs().maxCoeff();
  EXPECT_NEAR(ratio, 4.0, 0.05);
  EXPECT_LE((a.H - b.H).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_LE((a.J_delta - b.J_delta).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_LE((a.J_TD - b.J_TD).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_NO_THROW(path_mean_jacobians_numeric(p, w, w_star, 64));
}

TEST(Jacobians, CoarseQuadratureOnLongPathIsReported) {
  const Problem p = mlp_problem(13);
  Rng rng(14);
  const Vector w = random_params(rng, p.approx->param_dim(), 1.0);
  const Vector w_star = w + 6.0 * random_params(rng, p.approx->param_dim(), 1.0);
  EXPECT_THROW(path_mean_jacobians_numeric(p, w, w_star, 2), QuadratureUnconverged);
  EXPECT_THROW(path_mean_jacobians_numeric(p, w, w_star, 1), std::invalid_argument);
}

// ---- regularisation ----

TEST(RegularisedJacobians, MixOneUnchanged) {
  const GramMatrices g = gram_of(baird_problem());
  const auto [h, j] = regularised_jacobians(g.phi, 0.99 * g.phi_prime, 1.0, 123.0);
  EXPECT_EQ(h, g.phi);
  EXPECT_EQ(j, 0.99 * g.phi_prime);
}

TEST(RegularisedJacobians, MatchDifferentiationOfRegularisedVectorLinear) {
  const Problem p = baird_problem();
  const GramMatrices g = gram_of(p);
  Rng rng(15);
  for (double mix : {0.1, 0.4, 0.8}) {
    for (double eta : {0.0, 2.0, 50.0}) {
      const Regularisation reg{true, mix, eta};
      const Vector w = random_params(rng, 8, 2.0);
      const Vector wt = random_params(rng, 8, 2.0);
      const Matrix h_fd = jacobian_fd([&](const Vector& x) { Vector v = -regularised_td_vector(p, x, wt, reg); return v; }, w);
      const Matrix j_fd = jacobian_fd([&](const Vector& x) { return regularised_td_vector(p, w, x, reg); }, wt);
      const auto [h, j] = regularised_jacobians(g.phi, 0.99 * g.phi_prime, mix, eta);
      EXPECT_LE((h - h_fd).cwiseAbs().maxCoeff(), 1e-8 * std::max(1.0, eta));
      EXPECT_LE((j - j_fd).cwiseAbs().maxCoeff(), 1e-8 * std::max(1.0, eta));
    }
  }
}

TEST(RegularisedJacobians, MatchDifferentiationOfRegularisedVectorMlp) {
  const Problem p = mlp_problem(16);
  Rng rng(17);
  const Regularisation reg{true, 0.3, 4.0};
  const Vector w = random_params(rng, p.approx->param_dim(), 0.7);
  // At w_t = w the path means collapse to pointwise values.
  const JacobianSet set = pointwise_jacobians(p, w);
  const auto [h, j] = regularised_jacobians(set.H, set.J_delta, reg.mix, reg.eta);
  const Matrix h_fd = jacobian_fd([&](const Vector& x) { Vector v = -regularised_td_vector(p, x, w, reg); return v; }, w);
  const Matrix j_fd = jacobian_fd([&](const Vector& x) { return regularised_td_vector(p, w, x, reg); }, w);
  EXPECT_LE(fd::relative_error(h_fd, h), 1e-4);
  EXPECT_LE(fd::relative_error(j_fd, j), 1e-4);
}

TEST(RegularisedJacobians, LargeEtaDrivesFpeNormToOne) {
  // H_Reg^{-1} J_Reg = I + H_Reg^{-1}(J_delta - H), and H_Reg grows like (1 - mix) eta.
  const Problem p = on_policy(3);
  const GramMatrices g = gram_of(p);
  for (double mix : {0.2, 0.5}) {
    double previous = std::numeric_limits<double>::infinity();
    for (double eta : {10.0, 1e2, 1e3, 1e4}) {
      const auto [h, j] = regularised_jacobians(g.phi, p.gamma() * g.phi_prime, mix, eta);
      const double deviation = std::abs(fpe_stability_norm(h, j).value - 1.0);
      EXPECT_LT(deviation, previous) << "mix=" << mix << " eta=" << eta;
      previous = deviation;
    }
    EXPECT_LT(previous, 1e-3);
  }
}

// ---- scalar formulas ----

TEST(LambdaHStar, Examples) {
  EXPECT_DOUBLE_EQ(lambda_h_star(Eigen::Vector2d(1.0, 3.0), 0.1), 1.0);
  EXPECT_DOUBLE_EQ(lambda_h_star(Vector::Constant(1, 1.0), 7.0), 1.0);
  EXPECT_DOUBLE_EQ(lambda_h_star(Eigen::Vector2d(1.0, 30.0), 0.1), 30.0);
  // |1 - 0.5*1| == |1 - 0.5*3|: the smaller eigenvalue wins.
  EXPECT_DOUBLE_EQ(lambda_h_star(Eigen::Vector2d(3.0, 1.0), 0.5), 1.0);
}

TEST(ConditionFunction, Examples) {
  EXPECT_DOUBLE_EQ(condition_function(0.37, 1, 2.0, 1.5, 0.85), 1.5 + 2 * 0.85);
  EXPECT_NEAR(condition_function(0.1, 2, 1.0, 1.5, 0.85), 2.965, 1e-12);
  EXPECT_NEAR(condition_function(0.1, 1000000, 1.0, 1.5, 0.85), 0.85, 1e-12);
  EXPECT_NEAR(condition_function(0.1, 28, 1.0, 1.5, 0.85), 0.987, 1e-3);
  EXPECT_NEAR(condition_function(0.1, 27, 1.0, 1.5, 0.85), 1.002, 1e-3);
  EXPECT_THROW(condition_function(0.1, 0, 1.0, 1.5, 0.85), std::invalid_argument);
}

TEST(ConditionFunction, LowerBoundAndMonotoneInK) {
  Rng rng(18);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int cell = 0; cell < 1000; ++cell) {
    const double alpha = 1e-3 + u(rng);
    const double lambda = 1e-3 + 3.0 * u(rng);
    const double td = 3.0 * u(rng);
    const double fpe = 2.0 * u(rng);
    const auto k = static_cast<std::uint64_t>(1 + cell % 200);
    const double c = condition_function(alpha, k, lambda, td, fpe);
    EXPECT_GE(c, fpe);
    if (std::abs(1 - alpha * lambda) < 1.0) {
      EXPECT_LE(condition_function(alpha, k + 1, lambda, td, fpe), c);
    }
  }
}

TEST(SigmaK, Examples) {
  EXPECT_DOUBLE_EQ(sigma_k(0.1, 0, 1.0, 2.0), 0.0);
  EXPECT_NEAR(sigma_k(0.1, 1, 1.0, 2.0), 0.2, 1e-15);
  EXPECT_NEAR(sigma_k(0.1, 100000, 1.0, 2.0), 2.0, 1e-12);
  EXPECT_THROW(sigma_k(0.1, 3, 0.0, 2.0), DegenerateEigenvalue);
}

TEST(MinK, ReferenceConstants) {
  const auto k = min_k_for_contraction(0.1, 1.0, 1.5, 0.85);
  ASSERT_TRUE(k.has_value());
  EXPECT_EQ(*k, 28u);
  EXPECT_LT(condition_function(0.1, 28, 1.0, 1.5, 0.85), 1.0);
  EXPECT_GE(condition_function(0.1, 27, 1.0, 1.5, 0.85), 1.0);
}

TEST(MinK, NoFiniteKAndImmediateContraction) {
  EXPECT_FALSE(min_k_for_contraction(0.1, 1.0, 1.5, 1.0).has_value());
  EXPECT_FALSE(min_k_for_contraction(0.1, 1.0, 1.5, 1.3).has_value());
  EXPECT_EQ(min_k_for_contraction(0.1, 1.0, 0.2, 0.3), std::optional<std::uint64_t>(1));
}

TEST(MinK, BracketingOnRandomGrid) {
  Rng rng(19);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int found = 0;
  for (int cell = 0; cell < 200; ++cell) {
    const double alpha = 0.01 + 0.5 * u(rng);
    const double lambda = 0.05 + 1.5 * u(rng);
    const double td = 3.0 * u(rng);
    const double fpe = 0.99 * u(rng);
    const auto k = min_k_for_contraction(alpha, lambda, td, fpe);
    if (!k) {
      EXPECT_GE(std::abs(1 - alpha * lambda), 1.0);
      continue;
    }
    ++found;
    EXPECT_LT(condition_function(alpha, *k, lambda, td, fpe), 1.0);
    if (*k > 1) {
      EXPECT_GE(condition_function(alpha, *k - 1, lambda, td, fpe), 1.0);
    }
  }
  EXPECT_GT(found, 150);
}

TEST(DecayCurve, Examples) {
  const double a = 0.1, s = 0.4, c = 0.6, e0 = 3.0;
  EXPECT_NEAR(corollary_bound_curve(0, c, a, s, e0), a * s / (1 - c) + e0 - s / (1 - c), 1e-15);
  EXPECT_NEAR(corollary_bound_curve(1e6, c, a, s, e0), a * s / (1 - c), 1e-15);
  EXPECT_NEAR(corollary_bound_curve(7, c, a, 0.0, e0), std::exp(-7 * (1 - c)) * e0, 1e-15);
  EXPECT_THROW(corollary_bound_curve(1, 1.0, a, s, e0), std::invalid_argument);
}

TEST(FpeStabilityNorm, Examples) {
  const GramMatrices g = gram_of(cycle_problem());
  EXPECT_NEAR(fpe_stability_norm(g.phi, 0.9 * g.phi_prime).value, 0.9, 1e-12);
  EXPECT_EQ(fpe_stability_norm(g.phi, 0.0 * g.phi_prime).value, 0.0);
  EXPECT_NEAR(fpe_stability_norm(Matrix::Ones(1, 1), Matrix::Constant(1, 1, 0.9)).value, 0.9, 1e-15);
}

TEST(FpeStabilityNorm, SingularHessian) {
  const GramMatrices g = gram_of(baird_problem());
  EXPECT_THROW(fpe_stability_norm(g.phi, 0.99 * g.phi_prime), SingularHessian);
  const FpeNorm f = fpe_stability_norm(g.phi, 0.99 * g.phi_prime, true);
  EXPECT_TRUE(f.ridge_used);
  EXPECT_TRUE(std::isfinite(f.value));
}

TEST(LowShift, OnPolicyPassesBairdFails) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Problem p = on_policy(seed);
    const auto& lin = dynamic_cast<const LinearApproximator&>(*p.approx);
    const Matrix look = lookahead_gram(p.mdp, lin.features(), p.d, p.mu, p.pi);
    EXPECT_TRUE(low_distribution_shift_check(gram_of(p).phi, look, p.gamma()).passed) << seed;
  }
  const BairdSetup b = build_baird();
  const Matrix look = lookahead_gram(b.mdp, b.features, b.d, b.mu, b.pi);
  const ShiftCheck check = low_distribution_shift_check(gram_of(baird_problem()).phi, look, 0.99);
  EXPECT_FALSE(check.passed);
  EXPECT_LE(check.margin, 0.0);
}

TEST(LowShift, ZeroDiscountMarginIsSmallestEigenvalue) {
  const Problem p = on_policy(4);
  const GramMatrices g = gram_of(p);
  const ShiftCheck check = low_distribution_shift_check(g.phi, Matrix::Identity(g.phi.rows(), g.phi.cols()), 0.0);
  EXPECT_TRUE(check.passed);
  EXPECT_NEAR(check.margin, linalg::symmetric_eigenvalues(g.phi)(0), 1e-15);
}

TEST(NonlinearBound, LinearIsSymmetrisedTdJacobian) {
  const Problem p = baird_problem();
  const Vector ev = linalg::symmetric_eigenvalues(linalg::symmetrize(td_jacobian_linear(gram_of(p), 0.99)));
  EXPECT_NEAR(nonlinear_jacobian_bound(p, {Vector::Zero(8), Vector::Ones(8)}), ev(ev.size() - 1), 1e-12);
}

TEST(NonlinearBound, ZeroBellmanErrorLeavesOuterProductTerm) {
  const Problem p = mlp_problem(20, true);
  const Vector w = Vector::Zero(static_cast<Eigen::Index>(p.approx->param_dim()));
  EXPECT_LE(bellman_hessian_term(p, w).cwiseAbs().maxCoeff(), 1e-15);
  const Vector ev = linalg::symmetric_eigenvalues(linalg::symmetrize(outer_product_term(p, w)));
  EXPECT_NEAR(nonlinear_jacobian_bound(p, {w}), ev(ev.size() - 1), 1e-12);
}

TEST(NonlinearBound, DominatesPointwiseRealParts) {
  const Problem p = mlp_problem(21);
  Rng rng(22);
  std::vector<Vector> samples;
  for (int i = 0; i < 8; ++i) samples.push_back(random_params(rng, p.approx->param_dim(), 1.0));
  double top = -std::numeric_limits<double>::infinity();
  for (const Vector& w : samples) top = std::max(top, linalg::max_real_part(linalg::general_eigenvalues(td_jacobian(p, w))));
  EXPECT_GE(nonlinear_jacobian_bound(p, samples), top - 1e-10);
}

// ---- outer map and exact-mode contraction ----

TEST(OuterMap, MatchesDirectAssemblyWhenPhiInvertible) {
  Rng rng(23);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Problem p = on_policy(seed + 30);
    const GramMatrices g = gram_of(p);
    const auto n = g.phi.rows();
    const double alpha = 0.5;
    for (std::uint64_t k : {1u, 3u, 20u}) {
      Matrix a = Matrix::Identity(n, n) - alpha * g.phi;
      Matrix ak = Matrix::Identity(n, n);
      for (std::uint64_t i = 0; i < k; ++i) ak = a * ak;
      const Matrix f = g.phi.partialPivLu().solve(p.gamma() * g.phi_prime);
      const Matrix m = ak + (Matrix::Identity(n, n) - ak) * f;
      Eigen::EigenSolver<Matrix> oracle(m, false);
      EXPECT_NEAR(outer_map_spectral_radius(g, p.gamma(), alpha, k), oracle.eigenvalues().cwiseAbs().maxCoeff(), 1e-9);
    }
  }
}

TEST(OuterMap, BairdContractsOnlyForLongBlocks) {
  const GramMatrices g = gram_of(baird_problem());
  EXPECT_GT(outer_map_spectral_radius(g, 0.99, 0.01, 1), 1.0);
  EXPECT_GT(outer_map_spectral_radius(g, 0.99, 0.01, 10), 1.0);
  EXPECT_LT(outer_map_spectral_radius(g, 0.99, 0.01, 500), 1.0);
}

TEST(ExactMode, PerStepContractionByConditionValue) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Problem p = on_policy(seed + 50, 0.6);
    const GramMatrices g = gram_of(p);
    AnalysisSpec spec;
    spec.alpha = 0.5;
    spec.k = 4;
    spec.sigma_delta = 0.0;
    const SpectralReport report = analyze(p, spec);
    ASSERT_TRUE(report.condition_value.has_value());
    const Vector w_star = td_fixed_point_linear(g, p.gamma());
    RunConfig cfg;
    cfg.mode = UpdateMode::ExactExpectation;
    cfg.k = spec.k;
    cfg.n_target_updates = 30;
    cfg.schedule = StepSizeSchedule::constant(spec.alpha);
    cfg.initial_params = Vector::Constant(g.phi.rows(), 3.0);
    const RunTrace tr = run_pfpe(p, cfg);
    for (std::size_t l = 0; l + 1 < tr.targets.size(); ++l) {
      const double before = (tr.targets[l] - w_star).norm();
      const double after = (tr.targets[l + 1] - w_star).norm();
      EXPECT_LE(after, *report.condition_value * before * (1 + 1e-12) + 1e-13) << "seed " << seed << " l " << l;
    }
  }
}

TEST(ExactMode, DecayCurveBoundsErrorTrace) {
  const double gamma = 0.5;
  const Problem p = cycle_problem(gamma);
  const GramMatrices g = gram_of(p);
  const double alpha = 0.5;
  const std::uint64_t k = 10;
  const SpectralReport report = synthetic_report(
      alpha, k, lambda_h_star(linalg::symmetric_eigenvalues(g.phi), alpha),
      linalg::spectral_norm(Matrix::Identity(2, 2) + alpha * td_jacobian_linear(g, gamma)),
      fpe_stability_norm(g.phi, gamma * g.phi_prime).value, 0.0);
  const double c = *report.condition_value;
  ASSERT_LT(c, 1.0);
  const Vector w_star = td_fixed_point_linear(g, gamma);
  RunConfig cfg;
  cfg.mode = UpdateMode::ExactExpectation;
  cfg.k = k;
  cfg.n_target_updates = 40;
  cfg.schedule = StepSizeSchedule::constant(alpha);
  cfg.initial_params = Eigen::Vector2d(-4.0, 9.0);
  cfg.fixed_point = w_star;
  const RunTrace tr = run_pfpe(p, cfg);
  const double e0 = tr.rows.front().dist_to_fixed_point;
  for (const TraceRow& row : tr.rows) {
    EXPECT_LE(row.dist_to_fixed_point, corollary_bound_curve(static_cast<double>(row.l), c, alpha, 0.0, e0) + 1e-12);
  }
}

// ---- reports ----

TEST(Analyze, CycleVerdictsAllTrue) {
  AnalysisSpec spec;
  spec.alpha = 0.1;
  spec.k = 10;
  const SpectralReport r = analyze(cycle_problem(), spec);
  ASSERT_TRUE(r.assumption4 && r.assumption5 && r.low_shift);
  EXPECT_TRUE(*r.assumption4);
  EXPECT_TRUE(*r.assumption5);
  EXPECT_TRUE(*r.low_shift);
  EXPECT_NEAR(*r.j_fpe_norm_star, 0.9, 1e-12);
  EXPECT_GE(*r.condition_value, *r.j_fpe_norm_star);
  EXPECT_TRUE(r.sigma_delta.has_value());
  EXPECT_TRUE(r.sigma_k.has_value());
}

TEST(Analyze, BairdSingleStepPredictsInstability) {
  AnalysisSpec spec;
  spec.alpha = 0.01;
  spec.k = 1;
  spec.sigma_delta = 0.0;
  const SpectralReport r = analyze(baird_problem(), spec);
  ASSERT_TRUE(r.condition_value.has_value());
  EXPECT_GT(*r.condition_value, 1.0);
  EXPECT_FALSE(r.predicted_stable());
  EXPECT_FALSE(*r.assumption4);
  EXPECT_FALSE(*r.low_shift);
}

TEST(Analyze, BairdLongBlocksPredictStability) {
  AnalysisSpec spec;
  spec.alpha = 0.01;
  spec.k = 500;
  spec.sigma_delta = 0.0;
  const SpectralReport r = analyze(baird_problem(), spec);
  EXPECT_TRUE(r.predicted_stable());
  EXPECT_TRUE(*r.outer_map_contracts);
}

TEST(Analyze, MlpReportIsFilled) {
  AnalysisSpec spec;
  spec.alpha = 0.05;
  spec.k = 5;
  spec.samples = 4;
  spec.n_quad = 8;
  spec.radius = 0.05;
  spec.sigma_points = 2;
  spec.sigma_transitions = 200;
  const SpectralReport r = analyze(mlp_problem(24), spec);
  EXPECT_TRUE(r.lambda_h_star.has_value());
  EXPECT_TRUE(r.condition_value.has_value());
  EXPECT_TRUE(r.sigma_delta.has_value());
  EXPECT_EQ(r.unavailable.count("low_shift"), 1u);
  EXPECT_EQ(r.margins.count("nonlinear_jacobian_bound"), 1u);
}

TEST(Report, JsonShape) {
  const SpectralReport r = synthetic_report(0.1, 2, 1.0, 1.5, 0.85, 2.0);
  const nlohmann::json j = report_to_json(r);
  for (const char* key : {"lambda_h_star", "j_td_norm_star", "j_fpe_norm_star", "condition_value", "sigma_k", "k_min",
                          "sigma_delta", "verdicts", "margins", "conventions"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
  for (const char* key : {"assumption4", "assumption5", "assumption6", "low_shift"}) {
    EXPECT_TRUE(j["verdicts"].contains(key)) << key;
  }
  EXPECT_NEAR(j["condition_value"].get<double>(), 2.965, 1e-12);
  EXPECT_EQ(j["k_min"].get<int>(), 28);
  EXPECT_NEAR(j["sigma_k"].get<double>(), (1 - 0.81) * 2.0, 1e-12);
  EXPECT_TRUE(j["verdicts"]["assumption4"].is_null());
}
