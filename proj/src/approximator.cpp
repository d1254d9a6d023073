#include "pfpe/approximator.hpp"

#include "pfpe/errors.hpp"

#include <cmath>

namespace pfpe {

FeatureMap::FeatureMap(std::size_t n_states, std::size_t n_actions, Matrix table)
    : n_states_(n_states), n_actions_(n_actions), table_(std::move(table)) {
  if (static_cast<std::size_t>(table_.rows()) != n_states_ * n_actions_) {
    throw DimensionMismatch("feature table rows", n_states_ * n_actions_,
                            static_cast<std::size_t>(table_.rows()));
  }
  if (table_.cols() == 0) throw InvalidModel("feature dimension must be positive");
  if (!table_.allFinite()) throw InvalidModel("feature table has non-finite entries");
}

FeatureMap FeatureMap::one_hot(std::size_t n_states, std::size_t n_actions) {
  const auto m = static_cast<Eigen::Index>(n_states * n_actions);
  return FeatureMap(n_states, n_actions, Matrix::Identity(m, m));
}

nlohmann::json feature_table_to_json(const FeatureMap& features) {
  nlohmann::json rows = nlohmann::json::array();
  const Matrix& t = features.table();
  for (Eigen::Index i = 0; i < t.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < t.cols(); ++j) row.push_back(t(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

FeatureMap feature_map_from_json(const nlohmann::json& rows, std::size_t n_states,
                                 std::size_t n_actions) {
  if (!rows.is_array() || rows.empty()) throw InvalidModel("feature table must be a nonempty array");
  const std::size_t dim = rows.front().size();
  Matrix table(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != dim) throw DimensionMismatch("feature row", dim, rows[i].size());
    for (std::size_t j = 0; j < dim; ++j) {
      table(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j].get<double>();
    }
  }
  return FeatureMap(n_states, n_actions, std::move(table));
}

void Approximator::check_params(const Vector& w) const {
  if (static_cast<std::size_t>(w.size()) != param_dim()) {
    throw DimensionMismatch("parameter vector", param_dim(), static_cast<std::size_t>(w.size()));
  }
}

double LinearApproximator::value(const Vector& w, std::size_t s, std::size_t a) const {
  check_params(w);
  return features_(s, a).dot(w);
}

Vector LinearApproximator::grad(const Vector& w, std::size_t s, std::size_t a) const {
  check_params(w);
  return features_(s, a);
}

Matrix LinearApproximator::hess(const Vector& w, std::size_t, std::size_t) const {
  check_params(w);
  const auto n = static_cast<Eigen::Index>(param_dim());
  return Matrix::Zero(n, n);
}

MlpApproximator::MlpApproximator(MlpSpec spec) : spec_(spec) {
  if (spec_.n_states == 0 || spec_.n_actions == 0 || spec_.hidden_width == 0) {
    throw InvalidModel("MLP spec needs positive sizes");
  }
}

double MlpApproximator::value(const Vector& w, std::size_t s, std::size_t a) const {
  check_params(w);
  const std::size_t col = s * spec_.n_actions + a;
  double q = w(static_cast<Eigen::Index>(index_b2()));
  for (std::size_t i = 0; i < spec_.hidden_width; ++i) {
    const double z = w(static_cast<Eigen::Index>(index_w(i, col))) + w(static_cast<Eigen::Index>(index_b1(i)));
    q += w(static_cast<Eigen::Index>(index_v(i))) * std::tanh(z);
  }
  return q;
}

Vector MlpApproximator::grad(const Vector& w, std::size_t s, std::size_t a) const {
  check_params(w);
  const std::size_t col = s * spec_.n_actions + a;
  Vector g = Vector::Zero(static_cast<Eigen::Index>(param_dim()));
  for (std::size_t i = 0; i < spec_.hidden_width; ++i) {
    const auto iw = static_cast<Eigen::Index>(index_w(i, col));
    const auto ib = static_cast<Eigen::Index>(index_b1(i));
    const auto iv = static_cast<Eigen::Index>(index_v(i));
    const double h = std::tanh(w(iw) + w(ib));
    const double dz = w(iv) * (1.0 - h * h);
    g(iw) = dz;
    g(ib) = dz;
    g(iv) = h;
  }
  g(static_cast<Eigen::Index>(index_b2())) = 1.0;
  return g;
}

Matrix MlpApproximator::hess(const Vector& w, std::size_t s, std::size_t a) const {
  check_params(w);
  const std::size_t col = s * spec_.n_actions + a;
  const auto n = static_cast<Eigen::Index>(param_dim());
  Matrix hm = Matrix::Zero(n, n);
  for (std::size_t i = 0; i < spec_.hidden_width; ++i) {
    const auto iw = static_cast<Eigen::Index>(index_w(i, col));
    const auto ib = static_cast<Eigen::Index>(index_b1(i));
    const auto iv = static_cast<Eigen::Index>(index_v(i));
    const double h = std::tanh(w(iw) + w(ib));
    const double g = 1.0 - h * h;
    const double zz = -2.0 * w(iv) * h * g;
    // W[i, col] and b1[i] enter only through z_i, so they share every second derivative.
    for (const auto p : {iw, ib}) {
      for (const auto q : {iw, ib}) hm(p, q) = zz;
      hm(p, iv) = g;
      hm(iv, p) = g;
    }
  }
  return hm;
}

Vector MlpApproximator::initial_params(Rng& rng) const {
  std::uniform_real_distribution<double> draw(-0.5, 0.5);
  Vector w(static_cast<Eigen::Index>(param_dim()));
  for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = draw(rng);
  return w;
}

Vector clip_vector(const Vector& v, double c_clip) {
  if (!(c_clip > 0.0)) throw std::invalid_argument("clip_vector: threshold must be positive");
  if (std::isinf(c_clip)) return v;
  const double norm = v.norm();
  if (norm <= c_clip) return v;
  return v * (c_clip / norm);
}

namespace fd {

Vector gradient(const Approximator& q, const Vector& w, std::size_t s, std::size_t a, double step) {
  Vector g(w.size());
  Vector probe = w;
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    probe(i) = w(i) + step;
    const double up = q.value(probe, s, a);
    probe(i) = w(i) - step;
    const double down = q.value(probe, s, a);
    probe(i) = w(i);
    g(i) = (up - down) / (2.0 * step);
  }
  return g;
}

Matrix hessian(const Approximator& q, const Vector& w, std::size_t s, std::size_t a, double step) {
  Matrix h(w.size(), w.size());
  Vector probe = w;
  for (Eigen::Index j = 0; j < w.size(); ++j) {
    probe(j) = w(j) + step;
    const Vector up = q.grad(probe, s, a);
    probe(j) = w(j) - step;
    const Vector down = q.grad(probe, s, a);
    probe(j) = w(j);
    h.col(j) = (up - down) / (2.0 * step);
  }
  return h;
}

double relative_error(const Matrix& approx, const Matrix& exact) {
  const double scale = std::max(exact.cwiseAbs().maxCoeff(), 1e-8);
  return linalg::max_abs_diff(approx, exact) / scale;
}

}  // namespace fd

BairdSetup build_baird(double gamma) {
  constexpr std::size_t n_s = 7;
  constexpr std::size_t n_a = 2;
  constexpr std::size_t n_upper = 6;

  std::vector<double> transition(n_s * n_a * n_s, 0.0);
  for (std::size_t s = 0; s < n_s; ++s) {
    for (std::size_t s2 = 0; s2 < n_upper; ++s2) {
      transition[(s * n_a + BairdSetup::kWavy) * n_s + s2] = 1.0 / static_cast<double>(n_upper);
    }
    transition[(s * n_a + BairdSetup::kSolid) * n_s + BairdSetup::kLower] = 1.0;
  }
  FiniteMdp mdp(n_s, n_a, std::move(transition), std::vector<double>(n_s * n_a, 0.0), 0.0, gamma, 1.0);

  // Classic state features: upper i -> 2 e_i + e_8, lower -> e_7 + 2 e_8.
  Matrix state_features = Matrix::Zero(n_s, 8);
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(n_upper); ++i) {
    state_features(i, i) = 2.0;
    state_features(i, 7) = 1.0;
  }
  state_features(6, 6) = 1.0;
  state_features(6, 7) = 2.0;
  const Eigen::RowVectorXd upper_mean = state_features.topRows(n_upper).colwise().mean();

  // The solid action carries the state's own features; the wavy action the
  // expected features of where it lands.
  Matrix table(static_cast<Eigen::Index>(n_s * n_a), 8);
  for (Eigen::Index s = 0; s < static_cast<Eigen::Index>(n_s); ++s) {
    table.row(s * n_a + BairdSetup::kWavy) = upper_mean;
    table.row(s * n_a + BairdSetup::kSolid) = state_features.row(s);
  }

  Matrix mu_probs(n_s, n_a);
  mu_probs.col(BairdSetup::kWavy).setConstant(6.0 / 7.0);
  mu_probs.col(BairdSetup::kSolid).setConstant(1.0 / 7.0);

  Vector w0 = Vector::Ones(8);
  w0(6) = 10.0;

  return BairdSetup{std::move(mdp),
                    FeatureMap(n_s, n_a, std::move(table)),
                    Policy::deterministic(n_s, n_a, BairdSetup::kSolid),
                    Policy(std::move(mu_probs)),
                    StateDistribution::uniform(n_s),
                    std::move(w0)};
}

}  // namespace pfpe
