#include "dyncap/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>

namespace dyncap {

namespace {

std::vector<double> mat_mul(const std::vector<double>& a, const std::vector<double>& b, std::int64_t n) {
  std::vector<double> c(static_cast<std::size_t>(n * n), 0.0);
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t k = 0; k < n; ++k) {
      const double aik = a[static_cast<std::size_t>(i * n + k)];
      if (aik == 0.0) continue;
      for (std::int64_t j = 0; j < n; ++j) {
        c[static_cast<std::size_t>(i * n + j)] += aik * b[static_cast<std::size_t>(k * n + j)];
      }
    }
  }
  return c;
}

void symmetrize(std::vector<double>& a, std::int64_t n) {
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = i + 1; j < n; ++j) {
      const double v = 0.5 * (a[static_cast<std::size_t>(i * n + j)] + a[static_cast<std::size_t>(j * n + i)]);
      a[static_cast<std::size_t>(i * n + j)] = v;
      a[static_cast<std::size_t>(j * n + i)] = v;
    }
  }
}

// V * diag(f(values)) * V^T for a SymEigen decomposition.
std::vector<double> reassemble(const SymEigen& e, std::int64_t n,
                               const std::function<double(double)>& f) {
  std::vector<double> out(static_cast<std::size_t>(n * n), 0.0);
  for (std::int64_t c = 0; c < n; ++c) {
    const double fv = f(e.values[static_cast<std::size_t>(c)]);
    if (fv == 0.0) continue;
    for (std::int64_t i = 0; i < n; ++i) {
      const double vic = e.vectors[static_cast<std::size_t>(i * n + c)];
      for (std::int64_t j = 0; j < n; ++j) {
        out[static_cast<std::size_t>(i * n + j)] += fv * vic * e.vectors[static_cast<std::size_t>(j * n + c)];
      }
    }
  }
  return out;
}

void check_rows_shape(const Tensor& samples, const char* who) {
  if (samples.rank() != 2) {
    throw std::invalid_argument(std::string(who) + ": expects [n,d] samples, got " + shape_str(samples.shape()));
  }
}

}  // namespace

SymEigen jacobi_eigen_sym(std::int64_t n, std::vector<double> a) {
  if (static_cast<std::int64_t>(a.size()) != n * n) {
    throw std::invalid_argument("jacobi_eigen_sym: matrix size mismatch");
  }
  SymEigen e;
  e.vectors.assign(static_cast<std::size_t>(n * n), 0.0);
  for (std::int64_t i = 0; i < n; ++i) e.vectors[static_cast<std::size_t>(i * n + i)] = 1.0;

  double scale = 0.0;
  for (std::int64_t i = 0; i < n; ++i) scale = std::max(scale, std::fabs(a[static_cast<std::size_t>(i * n + i)]));
  for (const double v : a) scale = std::max(scale, std::fabs(v));
  const double tol = (scale > 0.0 ? scale : 1.0) * 1e-15;

  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::int64_t p = 0; p < n; ++p) {
      for (std::int64_t q = p + 1; q < n; ++q) {
        off = std::max(off, std::fabs(a[static_cast<std::size_t>(p * n + q)]));
      }
    }
    if (off <= tol) break;

    for (std::int64_t p = 0; p < n; ++p) {
      for (std::int64_t q = p + 1; q < n; ++q) {
        const double apq = a[static_cast<std::size_t>(p * n + q)];
        if (std::fabs(apq) <= tol) continue;
        const double app = a[static_cast<std::size_t>(p * n + p)];
        const double aqq = a[static_cast<std::size_t>(q * n + q)];
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;

        for (std::int64_t k = 0; k < n; ++k) {
          const double akp = a[static_cast<std::size_t>(k * n + p)];
          const double akq = a[static_cast<std::size_t>(k * n + q)];
          a[static_cast<std::size_t>(k * n + p)] = c * akp - s * akq;
          a[static_cast<std::size_t>(k * n + q)] = s * akp + c * akq;
        }
        for (std::int64_t k = 0; k < n; ++k) {
          const double apk = a[static_cast<std::size_t>(p * n + k)];
          const double aqk = a[static_cast<std::size_t>(q * n + k)];
          a[static_cast<std::size_t>(p * n + k)] = c * apk - s * aqk;
          a[static_cast<std::size_t>(q * n + k)] = s * apk + c * aqk;
        }
        for (std::int64_t k = 0; k < n; ++k) {
          const double vkp = e.vectors[static_cast<std::size_t>(k * n + p)];
          const double vkq = e.vectors[static_cast<std::size_t>(k * n + q)];
          e.vectors[static_cast<std::size_t>(k * n + p)] = c * vkp - s * vkq;
          e.vectors[static_cast<std::size_t>(k * n + q)] = s * vkp + c * vkq;
        }
      }
    }
  }

  e.values.resize(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) e.values[static_cast<std::size_t>(i)] = a[static_cast<std::size_t>(i * n + i)];
  return e;
}

GaussianFit fit_gaussian(const std::vector<double>& rows, std::int64_t n, std::int64_t d) {
  if (n < d + 1) {
    throw std::invalid_argument("fit_gaussian: need at least d+1 = " + std::to_string(d + 1) +
                                " samples, got " + std::to_string(n));
  }
  GaussianFit fit;
  fit.dim = d;
  fit.mean.assign(static_cast<std::size_t>(d), 0.0);
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j < d; ++j) {
      fit.mean[static_cast<std::size_t>(j)] += rows[static_cast<std::size_t>(i * d + j)];
    }
  }
  for (auto& m : fit.mean) m /= static_cast<double>(n);

  fit.cov.assign(static_cast<std::size_t>(d * d), 0.0);
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t a = 0; a < d; ++a) {
      const double da = rows[static_cast<std::size_t>(i * d + a)] - fit.mean[static_cast<std::size_t>(a)];
      for (std::int64_t b = a; b < d; ++b) {
        const double db = rows[static_cast<std::size_t>(i * d + b)] - fit.mean[static_cast<std::size_t>(b)];
        fit.cov[static_cast<std::size_t>(a * d + b)] += da * db;
      }
    }
  }
  const double inv = 1.0 / static_cast<double>(n - 1);
  for (std::int64_t a = 0; a < d; ++a) {
    for (std::int64_t b = a; b < d; ++b) {
      const double v = fit.cov[static_cast<std::size_t>(a * d + b)] * inv;
      fit.cov[static_cast<std::size_t>(a * d + b)] = v;
      fit.cov[static_cast<std::size_t>(b * d + a)] = v;  // symmetric bitwise by construction
    }
  }
  for (std::int64_t a = 0; a < d; ++a) fit.cov[static_cast<std::size_t>(a * d + a)] += kCovRegularizer;
  return fit;
}

GaussianFit fit_gaussian(const Tensor& samples) {
  check_rows_shape(samples, "fit_gaussian");
  return fit_gaussian(samples.data(), samples.dim(0), samples.dim(1));
}

double frechet_distance(const GaussianFit& a, const GaussianFit& b) {
  if (a.dim != b.dim) {
    throw std::invalid_argument("frechet_distance: dimension mismatch " + std::to_string(a.dim) +
                                " vs " + std::to_string(b.dim));
  }
  const std::int64_t d = a.dim;

  auto check_psd = [d](const GaussianFit& g, const char* which) {
    SymEigen e = jacobi_eigen_sym(d, g.cov);
    double max_ev = 0.0;
    for (double v : e.values) max_ev = std::max(max_ev, std::fabs(v));
    const double floor = -1e-9 * std::max(1.0, max_ev);
    for (double v : e.values) {
      if (v < floor) {
        throw std::invalid_argument(std::string("frechet_distance: covariance ") + which +
                                    " is not positive semidefinite (eigenvalue " + std::to_string(v) + ")");
      }
    }
    return e;
  };

  SymEigen e1 = check_psd(a, "a");
  check_psd(b, "b");

  std::vector<double> sqrt1 = reassemble(e1, d, [](double v) { return std::sqrt(std::max(v, 0.0)); });
  std::vector<double> m = mat_mul(mat_mul(sqrt1, b.cov, d), sqrt1, d);
  symmetrize(m, d);
  SymEigen em = jacobi_eigen_sym(d, std::move(m));

  double tr_sqrt = 0.0;
  for (double v : em.values) tr_sqrt += std::sqrt(std::max(v, 0.0));

  double mean_term = 0.0;
  for (std::int64_t i = 0; i < d; ++i) {
    const double diff = a.mean[static_cast<std::size_t>(i)] - b.mean[static_cast<std::size_t>(i)];
    mean_term += diff * diff;
  }
  double trace_term = -2.0 * tr_sqrt;
  for (std::int64_t i = 0; i < d; ++i) {
    trace_term += a.cov[static_cast<std::size_t>(i * d + i)] + b.cov[static_cast<std::size_t>(i * d + i)];
  }
  const double d2 = mean_term + trace_term;
  return d2 > 0.0 ? d2 : 0.0;
}

double overfit_gap(const std::function<Tensor(const Tensor&)>& logit_fn,
                   const Tensor& train_samples, const Tensor& val_samples) {
  if (train_samples.numel() == 0 || val_samples.numel() == 0 ||
      train_samples.dim(0) == 0 || val_samples.dim(0) == 0) {
    throw std::invalid_argument("overfit_gap: empty split");
  }
  const double train_mean = mean(logit_fn(train_samples)).item();
  const double val_mean = mean(logit_fn(val_samples)).item();
  return train_mean - val_mean;
}

double overfit_gap(const Discriminator& discriminator, const Tensor& train_samples,
                   const Tensor& val_samples) {
  return overfit_gap([&](const Tensor& x) { return discriminator.forward_full(x); },
                     train_samples, val_samples);
}

int mode_coverage(const Tensor& samples, const std::vector<std::array<double, 2>>& centers,
                  double radius, double share_threshold) {
  if (radius <= 0.0) throw std::invalid_argument("mode_coverage: radius must be positive");
  check_rows_shape(samples, "mode_coverage");
  if (samples.dim(1) != 2) {
    throw std::invalid_argument("mode_coverage: expects 2-d samples, got " + shape_str(samples.shape()));
  }
  const std::int64_t n = samples.dim(0);
  const auto& rows = samples.data();
  const double r2 = radius * radius;
  int covered = 0;
  for (const auto& c : centers) {
    std::int64_t hits = 0;
    for (std::int64_t i = 0; i < n; ++i) {
      const double dx = rows[static_cast<std::size_t>(2 * i)] - c[0];
      const double dy = rows[static_cast<std::size_t>(2 * i + 1)] - c[1];
      if (dx * dx + dy * dy <= r2) ++hits;
    }
    if (static_cast<double>(hits) >= share_threshold * static_cast<double>(n)) ++covered;
  }
  return covered;
}

std::vector<double> PcaProjector::project_rows(const std::vector<double>& rows, std::int64_t n) const {
  std::vector<double> out(static_cast<std::size_t>(n * out_dim), 0.0);
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t c = 0; c < out_dim; ++c) {
      double acc = 0.0;
      for (std::int64_t j = 0; j < in_dim; ++j) {
        acc += (rows[static_cast<std::size_t>(i * in_dim + j)] - mean[static_cast<std::size_t>(j)]) *
               basis[static_cast<std::size_t>(c * in_dim + j)];
      }
      out[static_cast<std::size_t>(i * out_dim + c)] = acc;
    }
  }
  return out;
}

PcaProjector fit_pca(const Tensor& samples, std::int64_t out_dim) {
  check_rows_shape(samples, "fit_pca");
  const std::int64_t n = samples.dim(0);
  const std::int64_t d = samples.dim(1);
  if (out_dim < 1 || out_dim > d) throw std::invalid_argument("fit_pca: out_dim out of range");
  GaussianFit fit = fit_gaussian(samples.data(), n, d);
  SymEigen e = jacobi_eigen_sym(d, fit.cov);

  std::vector<std::int64_t> order(static_cast<std::size_t>(d));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::int64_t x, std::int64_t y) {
    return e.values[static_cast<std::size_t>(x)] > e.values[static_cast<std::size_t>(y)];
  });

  PcaProjector p;
  p.in_dim = d;
  p.out_dim = out_dim;
  p.mean = fit.mean;
  p.basis.resize(static_cast<std::size_t>(out_dim * d));
  for (std::int64_t c = 0; c < out_dim; ++c) {
    const std::int64_t col = order[static_cast<std::size_t>(c)];
    for (std::int64_t r = 0; r < d; ++r) {
      p.basis[static_cast<std::size_t>(c * d + r)] = e.vectors[static_cast<std::size_t>(r * d + col)];
    }
  }
  return p;
}

}  // namespace dyncap
