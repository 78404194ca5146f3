#include "iin/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "iin/errors.hpp"

namespace iin {

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw std::invalid_argument("transpose: rank-2 expected");
  const std::size_t m = a.rows(), n = a.cols();
  Tensor t(Shape{n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) t.at(j, i) = a.at(i, j);
  return t;
}

Tensor random_orthogonal(std::size_t n, Rng& rng) {
  // Householder QR of a Gaussian matrix; Q columns are accumulated explicitly.
  Tensor a(Shape{n, n});
  for (std::size_t i = 0; i < n * n; ++i) a.data()[i] = rng.normal();

  Tensor q(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i) q.at(i, i) = 1.0;

  std::vector<double> v(n);
  for (std::size_t k = 0; k < n; ++k) {
    double norm = 0.0;
    for (std::size_t i = k; i < n; ++i) norm += a.at(i, k) * a.at(i, k);
    norm = std::sqrt(norm);
    if (norm == 0.0) continue;
    const double alpha = a.at(k, k) >= 0.0 ? -norm : norm;
    double vnorm2 = 0.0;
    for (std::size_t i = k; i < n; ++i) {
      v[i] = a.at(i, k) - (i == k ? alpha : 0.0);
      vnorm2 += v[i] * v[i];
    }
    if (vnorm2 == 0.0) continue;
    // Apply H = I - 2 v v^T / (v^T v) to A (columns k..) and to Q (all columns).
    for (std::size_t j = k; j < n; ++j) {
      double dot = 0.0;
      for (std::size_t i = k; i < n; ++i) dot += v[i] * a.at(i, j);
      const double f = 2.0 * dot / vnorm2;
      for (std::size_t i = k; i < n; ++i) a.at(i, j) -= f * v[i];
    }
    for (std::size_t j = 0; j < n; ++j) {
      double dot = 0.0;
      for (std::size_t i = k; i < n; ++i) dot += v[i] * q.at(j, i);
      const double f = 2.0 * dot / vnorm2;
      for (std::size_t i = k; i < n; ++i) q.at(j, i) -= f * v[i];
    }
  }
  // Fix signs so the diagonal of R is positive (Haar measure).
  for (std::size_t j = 0; j < n; ++j) {
    if (a.at(j, j) < 0.0)
      for (std::size_t i = 0; i < n; ++i) q.at(i, j) = -q.at(i, j);
  }
  return q;
}

SymEig sym_eig(const Tensor& in) {
  if (in.rank() != 2 || in.rows() != in.cols())
    throw std::invalid_argument("sym_eig: square matrix expected");
  const std::size_t n = in.rows();
  Tensor a = in.clone();
  Tensor v(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i) v.at(i, i) = 1.0;

  const int max_sweeps = 100;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) off += a.at(i, j) * a.at(i, j);
    if (off < 1e-26 * static_cast<double>(n * n)) break;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a.at(p, q);
        if (std::abs(apq) < 1e-300) continue;
        const double app = a.at(p, p), aqq = a.at(q, q);
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a.at(k, p), akq = a.at(k, q);
          a.at(k, p) = c * akp - s * akq;
          a.at(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a.at(p, k), aqk = a.at(q, k);
          a.at(p, k) = c * apk - s * aqk;
          a.at(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v.at(k, p), vkq = v.at(k, q);
          v.at(k, p) = c * vkp - s * vkq;
          v.at(k, q) = s * vkp + c * vkq;
        }
      }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> diag(n);
  for (std::size_t i = 0; i < n; ++i) diag[i] = a.at(i, i);
  std::sort(order.begin(), order.end(),
            [&](std::size_t x, std::size_t y) { return diag[x] > diag[y]; });

  SymEig out;
  out.values.resize(n);
  out.vectors = Tensor(Shape{n, n});
  for (std::size_t j = 0; j < n; ++j) {
    out.values[j] = diag[order[j]];
    for (std::size_t i = 0; i < n; ++i) out.vectors.at(i, j) = v.at(i, order[j]);
  }
  return out;
}

double log_abs_det(const Tensor& in) {
  if (in.rank() != 2 || in.rows() != in.cols())
    throw std::invalid_argument("log_abs_det: square matrix expected");
  const std::size_t n = in.rows();
  Tensor a = in.clone();
  double log_det = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t pivot = k;
    double best = std::abs(a.at(k, k));
    for (std::size_t i = k + 1; i < n; ++i)
      if (std::abs(a.at(i, k)) > best) {
        best = std::abs(a.at(i, k));
        pivot = i;
      }
    if (best == 0.0) throw NumericError("log_abs_det: singular matrix");
    if (pivot != k)
      for (std::size_t j = 0; j < n; ++j) std::swap(a.at(k, j), a.at(pivot, j));
    log_det += std::log(std::abs(a.at(k, k)));
    for (std::size_t i = k + 1; i < n; ++i) {
      const double f = a.at(i, k) / a.at(k, k);
      for (std::size_t j = k; j < n; ++j) a.at(i, j) -= f * a.at(k, j);
    }
  }
  return log_det;
}

}  // namespace iin
