#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <utility>
#include <vector>

#include "dyncap/datasets.hpp"
#include "dyncap/metrics.hpp"
#include "dyncap/rng.hpp"

using namespace dyncap;

namespace {

// Extended-precision oracle for the trace of sqrt(S1*S2): long double
// Jacobi eigendecomposition of the symmetrized product form, written
// independently of the production path.
long double tr_sqrt_oracle(const std::vector<double>& s1, const std::vector<double>& s2,
                           std::int64_t n) {
  auto eig = [n](std::vector<long double> a) {
    for (int sweep = 0; sweep < 200; ++sweep) {
      long double off = 0.0L;
      for (std::int64_t p = 0; p < n; ++p)
        for (std::int64_t q = p + 1; q < n; ++q) off += fabsl(a[p * n + q]);
      if (off < 1e-30L) break;
      for (std::int64_t p = 0; p < n; ++p) {
        for (std::int64_t q = p + 1; q < n; ++q) {
          const long double apq = a[p * n + q];
          if (fabsl(apq) < 1e-32L) continue;
          const long double theta = (a[q * n + q] - a[p * n + p]) / (2.0L * apq);
          const long double t = (theta >= 0 ? 1.0L : -1.0L) / (fabsl(theta) + sqrtl(theta * theta + 1.0L));
          const long double c = 1.0L / sqrtl(t * t + 1.0L);
          const long double s = t * c;
          for (std::int64_t k = 0; k < n; ++k) {
            const long double akp = a[k * n + p], akq = a[k * n + q];
            a[k * n + p] = c * akp - s * akq;
            a[k * n + q] = s * akp + c * akq;
          }
          for (std::int64_t k = 0; k < n; ++k) {
            const long double apk = a[p * n + k], aqk = a[q * n + k];
            a[p * n + k] = c * apk - s * aqk;
            a[q * n + k] = s * apk + c * aqk;
          }
        }
      }
    }
    std::vector<long double> values(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) values[static_cast<std::size_t>(i)] = a[i * n + i];
    return values;
  };

  std::vector<long double> a1(s1.begin(), s1.end());
  // sqrt(S1) via its eigen system
  std::vector<long double> v(static_cast<std::size_t>(n * n), 0.0L);
  {
    std::vector<long double> work = a1;
    std::vector<long double> vect(static_cast<std::size_t>(n * n), 0.0L);
    for (std::int64_t i = 0; i < n; ++i) vect[i * n + i] = 1.0L;
    for (int sweep = 0; sweep < 200; ++sweep) {
      long double off = 0.0L;
      for (std::int64_t p = 0; p < n; ++p)
        for (std::int64_t q = p + 1; q < n; ++q) off += fabsl(work[p * n + q]);
      if (off < 1e-30L) break;
      for (std::int64_t p = 0; p < n; ++p) {
        for (std::int64_t q = p + 1; q < n; ++q) {
          const long double apq = work[p * n + q];
          if (fabsl(apq) < 1e-32L) continue;
          const long double theta = (work[q * n + q] - work[p * n + p]) / (2.0L * apq);
          const long double t = (theta >= 0 ? 1.0L : -1.0L) / (fabsl(theta) + sqrtl(theta * theta + 1.0L));
          const long double c = 1.0L / sqrtl(t * t + 1.0L);
          const long double s = t * c;
          for (std::int64_t k = 0; k < n; ++k) {
            const long double akp = work[k * n + p], akq = work[k * n + q];
            work[k * n + p] = c * akp - s * akq;
            work[k * n + q] = s * akp + c * akq;
          }
          for (std::int64_t k = 0; k < n; ++k) {
            const long double apk = work[p * n + k], aqk = work[q * n + k];
            work[p * n + k] = c * apk - s * aqk;
            work[q * n + k] = s * apk + c * aqk;
          }
          for (std::int64_t k = 0; k < n; ++k) {
            const long double vkp = vect[k * n + p], vkq = vect[k * n + q];
            vect[k * n + p] = c * vkp - s * vkq;
            vect[k * n + q] = s * vkp + c * vkq;
          }
        }
      }
    }
    for (std::int64_t i = 0; i < n; ++i) {
      for (std::int64_t j = 0; j < n; ++j) {
        long double acc = 0.0L;
        for (std::int64_t k = 0; k < n; ++k) {
          const long double lam = work[k * n + k];
          acc += sqrtl(lam > 0 ? lam : 0.0L) * vect[i * n + k] * vect[j * n + k];
        }
        v[i * n + j] = acc;
      }
    }
  }
  // M = sqrt(S1) * S2 * sqrt(S1)
  std::vector<long double> a2(s2.begin(), s2.end());
  std::vector<long double> tmp(static_cast<std::size_t>(n * n), 0.0L);
  std::vector<long double> m(static_cast<std::size_t>(n * n), 0.0L);
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < n; ++j) {
      long double acc = 0.0L;
      for (std::int64_t k = 0; k < n; ++k) acc += v[i * n + k] * a2[k * n + j];
      tmp[i * n + j] = acc;
    }
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < n; ++j) {
      long double acc = 0.0L;
      for (std::int64_t k = 0; k < n; ++k) acc += tmp[i * n + k] * v[k * n + j];
      m[i * n + j] = acc;
    }
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = i + 1; j < n; ++j) {
      const long double avg = 0.5L * (m[i * n + j] + m[j * n + i]);
      m[i * n + j] = avg;
      m[j * n + i] = avg;
    }
  const auto eigenvalues = eig(m);
  long double acc = 0.0L;
  for (auto lam : eigenvalues) acc += sqrtl(lam > 0 ? lam : 0.0L);
  return acc;
}

GaussianFit make_fit(std::vector<double> mean, std::vector<double> cov) {
  GaussianFit f;
  f.dim = static_cast<std::int64_t>(mean.size());
  f.mean = std::move(mean);
  f.cov = std::move(cov);
  return f;
}

}  // namespace

TEST_CASE("fit_gaussian moments") {
  // constant samples -> mean = constant, covariance ~ regularizer
  std::vector<double> rows;
  for (int i = 0; i < 10; ++i) {
    rows.push_back(1.5);
    rows.push_back(-0.5);
  }
  GaussianFit fit = fit_gaussian(rows, 10, 2);
  CHECK(fit.mean[0] == doctest::Approx(1.5).epsilon(1e-15));
  CHECK(fit.mean[1] == doctest::Approx(-0.5).epsilon(1e-15));
  CHECK(fit.cov[0] == doctest::Approx(kCovRegularizer).epsilon(1e-6));
  CHECK(fit.cov[1] == 0.0);
  CHECK(fit.cov[2] == 0.0);
  CHECK(fit.cov[3] == doctest::Approx(kCovRegularizer).epsilon(1e-6));

  CHECK_THROWS_AS(fit_gaussian(rows, 2, 2), std::invalid_argument);
}

TEST_CASE("fit_gaussian monte-carlo against the standard normal") {
  Rng rng(31415);
  const std::int64_t n = 1000000;
  std::vector<double> rows(static_cast<std::size_t>(2 * n));
  for (auto& v : rows) v = rng.gaussian();
  GaussianFit fit = fit_gaussian(rows, n, 2);
  CHECK(std::fabs(fit.mean[0]) < 0.005);
  CHECK(std::fabs(fit.mean[1]) < 0.005);
  CHECK(std::fabs(fit.cov[0] - 1.0) < 0.01);
  CHECK(std::fabs(fit.cov[3] - 1.0) < 0.01);
  CHECK(std::fabs(fit.cov[1]) < 0.01);
  // symmetric bitwise by construction
  CHECK(fit.cov[1] == fit.cov[2]);
}

TEST_CASE("frechet identity, symmetry, closed form") {
  GaussianFit a = make_fit({0.0, 0.0}, {1.0, 0.0, 0.0, 1.0});
  GaussianFit b = make_fit({3.0, 4.0}, {1.0, 0.0, 0.0, 1.0});
  CHECK(frechet_distance(a, a) <= 1e-9);
  CHECK(frechet_distance(a, b) == doctest::Approx(25.0).epsilon(1e-9));
  CHECK(std::fabs(frechet_distance(a, b) - frechet_distance(b, a)) < 1e-9);

  GaussianFit c3 = make_fit({0, 0, 0}, std::vector<double>(9, 0.0));
  CHECK_THROWS_AS(frechet_distance(a, c3), std::invalid_argument);

  GaussianFit bad = make_fit({0.0, 0.0}, {1.0, 0.0, 0.0, -1.0});
  CHECK_THROWS_AS(frechet_distance(a, bad), std::invalid_argument);
}

TEST_CASE("frechet matches the extended-precision oracle on random PSD pairs") {
  Rng rng(999);
  for (int trial = 0; trial < 40; ++trial) {
    // random PSD: A^T A + tiny ridge
    auto random_psd = [&](std::int64_t d) {
      std::vector<double> a(static_cast<std::size_t>(d * d));
      for (auto& v : a) v = -1.0 + 2.0 * rng.uniform();
      std::vector<double> s(static_cast<std::size_t>(d * d), 0.0);
      for (std::int64_t i = 0; i < d; ++i)
        for (std::int64_t j = 0; j < d; ++j) {
          double acc = 0.0;
          for (std::int64_t k = 0; k < d; ++k)
            acc += a[static_cast<std::size_t>(k * d + i)] * a[static_cast<std::size_t>(k * d + j)];
          s[static_cast<std::size_t>(i * d + j)] = acc;
        }
      for (std::int64_t i = 0; i < d; ++i) s[static_cast<std::size_t>(i * d + i)] += 1e-8;
      return s;
    };
    const std::int64_t d = 2 + (trial % 3);  // 2..4 dimensional
    GaussianFit a = make_fit(std::vector<double>(static_cast<std::size_t>(d), 0.0), random_psd(d));
    GaussianFit b = make_fit(std::vector<double>(static_cast<std::size_t>(d), 0.0), random_psd(d));
    for (auto& v : a.mean) v = -1.0 + 2.0 * rng.uniform();
    for (auto& v : b.mean) v = -1.0 + 2.0 * rng.uniform();

    long double expected = 0.0L;
    for (std::int64_t i = 0; i < d; ++i) {
      const long double diff = static_cast<long double>(a.mean[static_cast<std::size_t>(i)]) -
                               static_cast<long double>(b.mean[static_cast<std::size_t>(i)]);
      expected += diff * diff;
      expected += a.cov[static_cast<std::size_t>(i * d + i)] + b.cov[static_cast<std::size_t>(i * d + i)];
    }
    expected -= 2.0L * tr_sqrt_oracle(a.cov, b.cov, d);

    const double got = frechet_distance(a, b);
    CHECK(got == doctest::Approx(static_cast<double>(expected)).epsilon(1e-8));
  }
}

TEST_CASE("frechet noise floor between same-spec sample sets") {
  DatasetSpec s1{DatasetKind::kRing8, 50000, 0.15, 1};
  DatasetSpec s2{DatasetKind::kRing8, 50000, 0.15, 2};
  GaussianFit f1 = fit_gaussian(generate(s1).samples);
  GaussianFit f2 = fit_gaussian(generate(s2).samples);
  CHECK(frechet_distance(f1, f2) < 0.01);
}

TEST_CASE("overfit gap probe") {
  Rng rng(11);
  Discriminator d = Discriminator::make_point(2, {32, 32, 32}, 0.2, 1);

  // untrained networks show ~zero gap across 5 seeds
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Discriminator fresh = Discriminator::make_point(2, {32, 32, 32}, 0.2, seed);
    DatasetSpec spec{DatasetKind::kRing8, 2280, 0.15, seed};  // ~2052/228 split
    Dataset ds = generate(spec);
    std::vector<std::int64_t> train_rows(ds.train_idx.begin(), ds.train_idx.begin() + 1024);
    std::vector<std::int64_t> val_rows(ds.val_idx.begin(), ds.val_idx.end());
    const double gap = overfit_gap(fresh, ds.gather(train_rows), ds.gather(val_rows));
    CHECK(std::fabs(gap) < 0.1);
  }

  // a lookup-table stub that memorizes the train rows shows a large gap
  DatasetSpec spec{DatasetKind::kRing8, 64, 0.15, 3};
  Dataset ds = generate(spec);
  Tensor train = ds.train_split();
  Tensor val = ds.val_split();
  std::set<std::pair<double, double>> memorized;
  const auto& train_rows = train.data();
  for (std::int64_t i = 0; i < train.dim(0); ++i) {
    memorized.insert({train_rows[static_cast<std::size_t>(2 * i)],
                      train_rows[static_cast<std::size_t>(2 * i + 1)]});
  }
  auto lookup_stub = [&](const Tensor& x) {
    const auto& rows = x.data();
    std::vector<double> logits(static_cast<std::size_t>(x.dim(0)));
    for (std::int64_t i = 0; i < x.dim(0); ++i) {
      const bool seen = memorized.count({rows[static_cast<std::size_t>(2 * i)],
                                         rows[static_cast<std::size_t>(2 * i + 1)]}) > 0;
      logits[static_cast<std::size_t>(i)] = seen ? 5.0 : 0.0;
    }
    return Tensor::from_data({x.dim(0), 1}, std::move(logits));
  };
  CHECK(overfit_gap(lookup_stub, train, val) > 1.0);

  // gap is invariant to shuffling within each split
  std::vector<std::int64_t> shuffled = ds.train_idx;
  std::reverse(shuffled.begin(), shuffled.end());
  const double g1 = overfit_gap(d, ds.gather(ds.train_idx), val);
  const double g2 = overfit_gap(d, ds.gather(shuffled), val);
  CHECK(g1 == doctest::Approx(g2).epsilon(1e-12));

  CHECK_THROWS_AS(overfit_gap(d, ds.gather({}), val), std::invalid_argument);
}

TEST_CASE("mode coverage") {
  const auto centers = [] {
    std::vector<std::array<double, 2>> c;
    DatasetSpec spec{DatasetKind::kRing8, 16, 0.15, 1};
    return generate(spec).mode_centers;
  }();

  // samples exactly at all 8 centers
  std::vector<double> rows;
  for (int rep = 0; rep < 16; ++rep) {
    for (const auto& c : centers) {
      rows.push_back(c[0]);
      rows.push_back(c[1]);
    }
  }
  Tensor all = Tensor::from_data({128, 2}, rows);
  CHECK(mode_coverage(all, centers, 0.05) == 8);

  // collapse to one center
  std::vector<double> one;
  for (int rep = 0; rep < 128; ++rep) {
    one.push_back(centers[0][0]);
    one.push_back(centers[0][1]);
  }
  CHECK(mode_coverage(Tensor::from_data({128, 2}, one), centers, 0.05) == 1);

  CHECK_THROWS_AS(mode_coverage(all, centers, 0.0), std::invalid_argument);

  // ground-truth ring8 at noise 0.15 covers all modes on nearly every seed
  int full_cover = 0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    DatasetSpec spec{DatasetKind::kRing8, 4096, 0.15, seed};
    Dataset ds = generate(spec);
    const double radius = 3.0 * 0.15 / ds.norm_scale;
    if (mode_coverage(ds.samples, ds.mode_centers, radius) == 8) ++full_cover;
  }
  CHECK(full_cover >= 99);
}

TEST_CASE("pca projector reduces dimension deterministically") {
  Rng rng(55);
  const std::int64_t n = 200, d = 12;
  std::vector<double> rows(static_cast<std::size_t>(n * d));
  for (auto& v : rows) v = rng.gaussian();
  Tensor samples = Tensor::from_data({n, d}, rows);
  PcaProjector p = fit_pca(samples, 4);
  CHECK(p.in_dim == d);
  CHECK(p.out_dim == 4);
  auto proj = p.project_rows(rows, n);
  CHECK(proj.size() == static_cast<std::size_t>(n * 4));
  auto proj2 = p.project_rows(rows, n);
  CHECK(proj == proj2);
  CHECK_THROWS_AS(fit_pca(samples, 0), std::invalid_argument);
}
