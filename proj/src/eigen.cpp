#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Eigenvalues>

#include "hscp/error.hpp"
#include "hscp/spectral.hpp"

namespace hscp {
namespace {

constexpr int kMaxSweeps = 100;
constexpr double kRelativeOffDiagonal = 1e-12;

double frobenius(const Matrix& a) {
  double sum = 0.0;
  for (double v : a.data) sum += v * v;
  return std::sqrt(sum);
}

double off_diagonal(const Matrix& a) {
  double sum = 0.0;
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t j = 0; j < a.cols; ++j) {
      if (i != j) sum += a(i, j) * a(i, j);
    }
  }
  return std::sqrt(sum);
}

EigenDecomposition jacobi(Matrix a) {
  const std::size_t n = a.rows;
  Matrix v = Matrix::identity(n);
  const double tolerance = kRelativeOffDiagonal * frobenius(a);
  int sweep = 0;
  for (double off = off_diagonal(a); off >= tolerance && off > 0.0; off = off_diagonal(a)) {
    if (++sweep > kMaxSweeps) {
      throw NumericalError("Jacobi eigensolver did not converge after " + std::to_string(kMaxSweeps) +
                           " sweeps; off-diagonal residual " + std::to_string(off));
    }
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          if (k == p || k == q) continue;
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = a(p, k) = c * akp - s * akq;
          a(k, q) = a(q, k) = s * akp + c * akq;
        }
        a(p, p) -= t * apq;
        a(q, q) += t * apq;
        a(p, q) = a(q, p) = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  EigenDecomposition out;
  out.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.values[i] = a(i, i);
  out.vectors = std::move(v);
  return out;
}

EigenDecomposition tridiagonal(const Matrix& a) {
  const auto n = static_cast<Eigen::Index>(a.rows);
  Eigen::MatrixXd m(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) m(i, j) = a(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(m);
  if (solver.info() != Eigen::Success) throw NumericalError("tridiagonal QL eigensolver did not converge");
  EigenDecomposition out;
  out.values.assign(solver.eigenvalues().data(), solver.eigenvalues().data() + n);
  out.vectors = Matrix(a.rows, a.rows);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      out.vectors(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) = solver.eigenvectors()(i, j);
    }
  }
  return out;
}

/// Sorts ascending (stable) and flips each vector so its largest-magnitude entry is positive.
EigenDecomposition canonicalize(const EigenDecomposition& raw) {
  const std::size_t n = raw.values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return raw.values[x] < raw.values[y]; });
  EigenDecomposition out;
  out.values.resize(n);
  out.vectors = Matrix(n, n);
  for (std::size_t col = 0; col < n; ++col) {
    const std::size_t src = order[col];
    out.values[col] = raw.values[src];
    std::size_t peak = 0;
    for (std::size_t r = 1; r < n; ++r) {
      if (std::abs(raw.vectors(r, src)) > std::abs(raw.vectors(peak, src))) peak = r;
    }
    const double sign = raw.vectors(peak, src) < 0.0 ? -1.0 : 1.0;
    for (std::size_t r = 0; r < n; ++r) out.vectors(r, col) = sign * raw.vectors(r, src);
  }
  return out;
}

}  // namespace

EigenDecomposition eig_sym(const Matrix& a, EigenMethod method) {
  if (a.rows != a.cols) throw ValidationError("eigendecomposition needs a square matrix");
  const double scale = std::max(1.0, frobenius(a));
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t j = i + 1; j < a.cols; ++j) {
      if (std::abs(a(i, j) - a(j, i)) > 1e-10 * scale) {
        throw ValidationError("matrix is not symmetric at (" + std::to_string(i) + ", " + std::to_string(j) + ")");
      }
    }
  }
  if (a.rows == 0) return {};
  if (method == EigenMethod::automatic) {
    method = a.rows <= kJacobiLimit ? EigenMethod::jacobi : EigenMethod::tridiagonal;
  }
  return canonicalize(method == EigenMethod::jacobi ? jacobi(a) : tridiagonal(a));
}

}  // namespace hscp
