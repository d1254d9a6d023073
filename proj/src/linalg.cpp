#include "pfpe/linalg.hpp"

#include "pfpe/errors.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pfpe::linalg {

namespace {

void require_square(const Matrix& a, const char* who) {
  if (a.rows() != a.cols()) {
    throw DimensionMismatch(who, static_cast<std::size_t>(a.rows()),
                            static_cast<std::size_t>(a.cols()));
  }
}

double sign_of(double magnitude, double sign_source) {
  return sign_source >= 0.0 ? std::abs(magnitude) : -std::abs(magnitude);
}

}  // namespace

Matrix hessenberg(const Matrix& a) {
  require_square(a, "hessenberg");
  Matrix h = a;
  const Eigen::Index n = h.rows();
  for (Eigen::Index k = 0; k + 2 < n; ++k) {
    const Eigen::Index m = n - k - 1;
    Vector x = h.block(k + 1, k, m, 1);
    const double norm_x = x.norm();
    if (norm_x == 0.0) continue;
    Vector v = x;
    v(0) += sign_of(norm_x, x(0));
    const double norm_v = v.norm();
    if (norm_v == 0.0) continue;
    v /= norm_v;
    // H <- (I - 2vv^T) H (I - 2vv^T), acting on rows/cols k+1..n-1
    Eigen::RowVectorXd row_proj = v.transpose() * h.bottomRows(m);
    h.bottomRows(m).noalias() -= 2.0 * v * row_proj;
    Vector col_proj = h.rightCols(m) * v;
    h.rightCols(m).noalias() -= 2.0 * col_proj * v.transpose();
    h.block(k + 2, k, m - 1, 1).setZero();
  }
  return h;
}

std::vector<std::complex<double>> general_eigenvalues(const Matrix& input) {
  require_square(input, "general_eigenvalues");
  const int n = static_cast<int>(input.rows());
  std::vector<std::complex<double>> out;
  if (n == 0) return out;
  if (!input.allFinite()) throw EigenSolverFailure("matrix has non-finite entries");

  // 1-based working copy keeps the deflation bookkeeping readable.
  const Matrix h0 = hessenberg(input);
  std::vector<double> buf(static_cast<std::size_t>((n + 1) * (n + 1)), 0.0);
  auto a = [&](int i, int j) -> double& { return buf[static_cast<std::size_t>(i * (n + 1) + j)]; };
  for (int i = 1; i <= n; ++i)
    for (int j = 1; j <= n; ++j) a(i, j) = h0(i - 1, j - 1);

  std::vector<double> wr(static_cast<std::size_t>(n + 1), 0.0);
  std::vector<double> wi(static_cast<std::size_t>(n + 1), 0.0);

  double anorm = 0.0;
  for (int i = 1; i <= n; ++i)
    for (int j = std::max(i - 1, 1); j <= n; ++j) anorm += std::abs(a(i, j));

  constexpr int kMaxIterations = 60;
  int nn = n;
  double t = 0.0;
  double p = 0.0, q = 0.0, r = 0.0, s = 0.0, w = 0.0, x = 0.0, y = 0.0, z = 0.0;
  while (nn >= 1) {
    int its = 0;
    int l = 0;
    do {
      for (l = nn; l >= 2; --l) {
        s = std::abs(a(l - 1, l - 1)) + std::abs(a(l, l));
        if (s == 0.0) s = anorm;
        if (std::abs(a(l, l - 1)) + s == s) {
          a(l, l - 1) = 0.0;
          break;
        }
      }
      x = a(nn, nn);
      if (l == nn) {
        // one root found
        wr[nn] = x + t;
        wi[nn] = 0.0;
        --nn;
      } else {
        y = a(nn - 1, nn - 1);
        w = a(nn, nn - 1) * a(nn - 1, nn);
        if (l == nn - 1) {
          // two roots found
          p = 0.5 * (y - x);
          q = p * p + w;
          z = std::sqrt(std::abs(q));
          x += t;
          if (q >= 0.0) {
            z = p + sign_of(z, p);
            wr[nn - 1] = wr[nn] = x + z;
            if (z != 0.0) wr[nn] = x - w / z;
            wi[nn - 1] = wi[nn] = 0.0;
          } else {
            wr[nn - 1] = wr[nn] = x + p;
            wi[nn - 1] = -z;
            wi[nn] = z;
          }
          nn -= 2;
        } else {
          if (its == kMaxIterations) {
            throw EigenSolverFailure("QR iteration did not converge");
          }
          if (its > 0 && its % 10 == 0) {
            // exceptional shift
            t += x;
            for (int i = 1; i <= nn; ++i) a(i, i) -= x;
            s = std::abs(a(nn, nn - 1)) + std::abs(a(nn - 1, nn - 2));
            y = x = 0.75 * s;
            w = -0.4375 * s * s;
          }
          ++its;
          int m = nn - 2;
          for (; m >= l; --m) {
            z = a(m, m);
            r = x - z;
            s = y - z;
            p = (r * s - w) / a(m + 1, m) + a(m, m + 1);
            q = a(m + 1, m + 1) - z - r - s;
            r = a(m + 2, m + 1);
            s = std::abs(p) + std::abs(q) + std::abs(r);
            p /= s;
            q /= s;
            r /= s;
            if (m == l) break;
            const double u = std::abs(a(m, m - 1)) * (std::abs(q) + std::abs(r));
            const double v =
                std::abs(p) * (std::abs(a(m - 1, m - 1)) + std::abs(z) + std::abs(a(m + 1, m + 1)));
            if (u + v == v) break;
          }
          for (int i = m + 2; i <= nn; ++i) {
            a(i, i - 2) = 0.0;
            if (i != m + 2) a(i, i - 3) = 0.0;
          }
          for (int k = m; k <= nn - 1; ++k) {
            if (k != m) {
              p = a(k, k - 1);
              q = a(k + 1, k - 1);
              r = 0.0;
              if (k != nn - 1) r = a(k + 2, k - 1);
              x = std::abs(p) + std::abs(q) + std::abs(r);
              if (x != 0.0) {
                p /= x;
                q /= x;
                r /= x;
              }
            }
            s = sign_of(std::sqrt(p * p + q * q + r * r), p);
            if (s != 0.0) {
              if (k == m) {
                if (l != m) a(k, k - 1) = -a(k, k - 1);
              } else {
                a(k, k - 1) = -s * x;
              }
              p += s;
              x = p / s;
              y = q / s;
              z = r / s;
              q /= p;
              r /= p;
              for (int j = k; j <= nn; ++j) {
                p = a(k, j) + q * a(k + 1, j);
                if (k != nn - 1) {
                  p += r * a(k + 2, j);
                  a(k + 2, j) -= p * z;
                }
                a(k + 1, j) -= p * y;
                a(k, j) -= p * x;
              }
              const int mmin = nn < k + 3 ? nn : k + 3;
              for (int i = l; i <= mmin; ++i) {
                p = x * a(i, k) + y * a(i, k + 1);
                if (k != nn - 1) {
                  p += z * a(i, k + 2);
                  a(i, k + 2) -= p * r;
                }
                a(i, k + 1) -= p * q;
                a(i, k) -= p;
              }
            }
          }
        }
      }
    } while (l < nn - 1);
  }

  out.reserve(static_cast<std::size_t>(n));
  for (int i = 1; i <= n; ++i) out.emplace_back(wr[i], wi[i]);
  return out;
}

double max_real_part(const std::vector<std::complex<double>>& eigenvalues) {
  if (eigenvalues.empty()) throw std::invalid_argument("max_real_part: empty spectrum");
  double best = eigenvalues.front().real();
  for (const auto& e : eigenvalues) best = std::max(best, e.real());
  return best;
}

double spectral_radius(const std::vector<std::complex<double>>& eigenvalues) {
  double best = 0.0;
  for (const auto& e : eigenvalues) best = std::max(best, std::abs(e));
  return best;
}

Vector symmetric_eigenvalues(const Matrix& a) {
  require_square(a, "symmetric_eigenvalues");
  Eigen::SelfAdjointEigenSolver<Matrix> solver(symmetrize(a), Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) throw EigenSolverFailure("symmetric eigensolve failed");
  return solver.eigenvalues();
}

Matrix symmetrize(const Matrix& a) {
  require_square(a, "symmetrize");
  return 0.5 * (a + a.transpose());
}

double spectral_norm(const Matrix& a) {
  if (a.size() == 0) return 0.0;
  const Matrix gram = a.transpose() * a;
  const Vector ev = symmetric_eigenvalues(gram);
  return std::sqrt(std::max(0.0, ev(ev.size() - 1)));
}

double smallest_singular_value(const Matrix& a) {
  if (a.size() == 0) return 0.0;
  Eigen::JacobiSVD<Matrix> svd(a);
  return svd.singularValues().minCoeff();
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionMismatch("max_abs_diff", static_cast<std::size_t>(a.size()),
                            static_cast<std::size_t>(b.size()));
  }
  if (a.size() == 0) return 0.0;
  return (a - b).cwiseAbs().maxCoeff();
}

}  // namespace pfpe::linalg
