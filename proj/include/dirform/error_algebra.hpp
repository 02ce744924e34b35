#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dirform {

/// Error intrinsics attached to a finite-dimensional quantity: values x,
/// quadratic error form gamma (symmetric, row-major d x d), first-order bias.
struct ErrorVector {
  std::vector<double> values;
  std::vector<double> gamma;
  std::vector<double> bias;

  std::size_t dim() const { return values.size(); }
};

/// Eigenvalues of a symmetric matrix, ascending, by cyclic Jacobi rotations.
/// Intended for the small dimensions error vectors carry.
inline std::vector<double> symmetric_eigenvalues(std::vector<double> a, std::size_t dim) {
  if (a.size() != dim * dim) throw std::invalid_argument("symmetric_eigenvalues: bad size");
  const auto at = [&](std::size_t i, std::size_t j) -> double& { return a[i * dim + j]; };
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0, diag = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      diag += at(i, i) * at(i, i);
      for (std::size_t j = i + 1; j < dim; ++j) off += at(i, j) * at(i, j);
    }
    if (off <= 1e-32 * std::max(diag, 1e-300)) break;
    for (std::size_t p = 0; p < dim; ++p)
      for (std::size_t q = p + 1; q < dim; ++q) {
        if (at(p, q) == 0.0) continue;
        const double theta = (at(q, q) - at(p, p)) / (2.0 * at(p, q));
        const double t =
            (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < dim; ++k) {
          const double akp = at(k, p), akq = at(k, q);
          at(k, p) = c * akp - s * akq;
          at(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < dim; ++k) {
          const double apk = at(p, k), aqk = at(q, k);
          at(p, k) = c * apk - s * aqk;
          at(q, k) = s * apk + c * aqk;
        }
      }
  }
  std::vector<double> ev(dim);
  for (std::size_t i = 0; i < dim; ++i) ev[i] = at(i, i);
  std::sort(ev.begin(), ev.end());
  return ev;
}

/// Shape, symmetry, and positive semi-definiteness up to the tolerance
/// eigenvalue >= -1e-12 * trace.
inline void validate(const ErrorVector& e) {
  const std::size_t d = e.dim();
  if (d == 0) throw std::invalid_argument("ErrorVector: empty");
  if (e.gamma.size() != d * d || e.bias.size() != d)
    throw std::invalid_argument("ErrorVector: inconsistent sizes");
  double scale = 0.0, trace = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    trace += e.gamma[i * d + i];
    for (std::size_t j = 0; j < d; ++j) scale = std::max(scale, std::abs(e.gamma[i * d + j]));
  }
  for (double v : e.values)
    if (!std::isfinite(v)) throw std::invalid_argument("ErrorVector: non-finite value");
  for (double v : e.gamma)
    if (!std::isfinite(v)) throw std::invalid_argument("ErrorVector: non-finite gamma");
  for (double v : e.bias)
    if (!std::isfinite(v)) throw std::invalid_argument("ErrorVector: non-finite bias");
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i + 1; j < d; ++j)
      if (std::abs(e.gamma[i * d + j] - e.gamma[j * d + i]) > 1e-12 * std::max(scale, 1.0))
        throw std::invalid_argument("ErrorVector: gamma is not symmetric");
  const std::vector<double> ev = symmetric_eigenvalues(e.gamma, d);
  if (ev.front() < -1e-12 * std::max(trace, 1.0))
    throw std::invalid_argument("ErrorVector: gamma is not positive semi-definite");
}

/// Map R^d -> R^m with caller-supplied derivatives. jacobian is m x d
/// row-major, hessian is m blocks of d x d row-major.
struct SmoothMap {
  std::size_t dim_in = 0;
  std::size_t dim_out = 0;
  std::function<std::vector<double>(std::span<const double>)> value;
  std::function<std::vector<double>(std::span<const double>)> jacobian;
  std::function<std::vector<double>(std::span<const double>)> hessian;
};

namespace detail {

inline void check_close(double got, double fd, const char* what) {
  if (!std::isfinite(got) || !std::isfinite(fd) ||
      std::abs(got - fd) > 1e-5 * std::max({1.0, std::abs(got), std::abs(fd)}))
    throw std::invalid_argument(std::string("SmoothMap: ") + what +
                                " disagrees with finite differences");
}

}  // namespace detail

/// Checks the supplied jacobian and hessian against central differences at x.
inline void validate_map(const SmoothMap& map, std::span<const double> x) {
  if (!map.value || !map.jacobian || !map.hessian)
    throw std::invalid_argument("SmoothMap: value, jacobian and hessian are required");
  if (x.size() != map.dim_in) throw std::invalid_argument("SmoothMap: wrong input dimension");
  const std::size_t d = map.dim_in, m = map.dim_out;
  const std::vector<double> jac = map.jacobian(x);
  const std::vector<double> hess = map.hessian(x);
  if (map.value(x).size() != m || jac.size() != m * d || hess.size() != m * d * d)
    throw std::invalid_argument("SmoothMap: wrong output dimensions");
  std::vector<double> xp(x.begin(), x.end()), xm(x.begin(), x.end());
  for (std::size_t j = 0; j < d; ++j) {
    const double h = 6e-6 * std::max(1.0, std::abs(x[j]));
    xp[j] = x[j] + h;
    xm[j] = x[j] - h;
    const std::vector<double> vp = map.value(xp);
    const std::vector<double> vm = map.value(xm);
    const std::vector<double> jp = map.jacobian(xp);
    const std::vector<double> jm = map.jacobian(xm);
    for (std::size_t r = 0; r < m; ++r) {
      detail::check_close(jac[r * d + j], (vp[r] - vm[r]) / (2.0 * h), "jacobian");
      for (std::size_t i = 0; i < d; ++i)
        detail::check_close(hess[r * d * d + i * d + j], (jp[r * d + i] - jm[r * d + i]) / (2.0 * h),
                            "hessian");
    }
    xp[j] = x[j];
    xm[j] = x[j];
  }
}

/// Pushes an error vector through a smooth map:
///   gamma_out = J gamma J^T
///   bias_out[r] = sum_i J[r,i] bias[i] + 1/2 sum_ij H[r,i,j] gamma[i,j].
inline ErrorVector propagate(const ErrorVector& in, const SmoothMap& map) {
  validate(in);
  const std::size_t d = in.dim();
  if (map.dim_in != d) throw std::invalid_argument("propagate: dimension mismatch");
  validate_map(map, in.values);
  const std::size_t m = map.dim_out;
  const std::vector<double> jac = map.jacobian(in.values);
  const std::vector<double> hess = map.hessian(in.values);

  ErrorVector out;
  out.values = map.value(in.values);
  out.gamma.assign(m * m, 0.0);
  out.bias.assign(m, 0.0);
  std::vector<double> jg(m * d, 0.0);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t j = 0; j < d; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < d; ++i) s += jac[r * d + i] * in.gamma[i * d + j];
      jg[r * d + j] = s;
    }
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t q = 0; q < m; ++q) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += jg[r * d + j] * jac[q * d + j];
      out.gamma[r * m + q] = s;
    }
  // Exact symmetry regardless of rounding order.
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t q = r + 1; q < m; ++q) {
      const double v = 0.5 * (out.gamma[r * m + q] + out.gamma[q * m + r]);
      out.gamma[r * m + q] = v;
      out.gamma[q * m + r] = v;
    }
  for (std::size_t r = 0; r < m; ++r) {
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) s += jac[r * d + i] * in.bias[i];
    double curv = 0.0;
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) curv += hess[r * d * d + i * d + j] * in.gamma[i * d + j];
    out.bias[r] = s + 0.5 * curv;
  }
  return out;
}

/// A scalar C^2 function with explicit derivatives.
struct ScalarC2 {
  std::function<double(double)> value;
  std::function<double(double)> deriv;
  std::function<double(double)> second;
};

/// Generator of the scalar Ornstein-Uhlenbeck structure,
/// A f(x) = 1/2 f''(x) - 1/2 x f'(x). Derivatives are FD-checked at x.
inline double ou_generator(const ScalarC2& f, double x) {
  if (!f.value || !f.deriv || !f.second)
    throw std::invalid_argument("ou_generator: value, deriv and second are required");
  const double h = 6e-6 * std::max(1.0, std::abs(x));
  detail::check_close(f.deriv(x), (f.value(x + h) - f.value(x - h)) / (2.0 * h), "deriv");
  const double h2 = 1.5e-4 * std::max(1.0, std::abs(x));
  detail::check_close(f.second(x), (f.value(x + h2) - 2.0 * f.value(x) + f.value(x - h2)) / (h2 * h2),
                      "second");
  return 0.5 * f.second(x) - 0.5 * x * f.deriv(x);
}

/// One Mehler step of size eps: x -> e^{-eps/2} x + sqrt(1-e^{-eps}) noise.
/// Maps N(0,1) to N(0,1) exactly when x and noise are independent N(0,1).
inline double perturb_ou(double x, double eps, double noise) {
  if (!(eps >= 0.0) || !std::isfinite(eps))
    throw std::invalid_argument("perturb_ou: eps must be >= 0");
  return std::exp(-0.5 * eps) * x + std::sqrt(1.0 - std::exp(-eps)) * noise;
}

}  // namespace dirform
