#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "dyncap/networks.hpp"
#include "dyncap/tensor.hpp"

namespace dyncap {

// Moment-matched Gaussian: sample mean and unbiased covariance with a
// 1e-8 * I regularizer so square roots stay defined for collapsed inputs.
struct GaussianFit {
  std::int64_t dim = 0;
  std::vector<double> mean;  // [d]
  std::vector<double> cov;   // [d*d], row-major, symmetric
};

constexpr double kCovRegularizer = 1e-8;

// samples: [n, d] rows; n must be at least d+1.
GaussianFit fit_gaussian(const Tensor& samples);
GaussianFit fit_gaussian(const std::vector<double>& rows, std::int64_t n, std::int64_t d);

// Squared Frechet distance between Gaussians:
// |mu1-mu2|^2 + Tr(S1 + S2 - 2*(S1 S2)^(1/2)), the cross term evaluated
// through the symmetric form S1^(1/2) S2 S1^(1/2).
double frechet_distance(const GaussianFit& a, const GaussianFit& b);

// Cyclic Jacobi eigendecomposition of a symmetric matrix (row-major).
struct SymEigen {
  std::vector<double> values;   // [n], unordered
  std::vector<double> vectors;  // [n*n] row-major; column c (vectors[r*n+c]) pairs with values[c]
};
SymEigen jacobi_eigen_sym(std::int64_t n, std::vector<double> a);

// Mean logit on train minus on held-out samples. The Discriminator
// overload probes at full capacity with masks disabled.
double overfit_gap(const std::function<Tensor(const Tensor&)>& logit_fn,
                   const Tensor& train_samples, const Tensor& val_samples);
double overfit_gap(const Discriminator& discriminator, const Tensor& train_samples,
                   const Tensor& val_samples);

// Number of centers that receive at least share_threshold of the samples
// within `radius`.
int mode_coverage(const Tensor& samples, const std::vector<std::array<double, 2>>& centers,
                  double radius, double share_threshold = 0.01);

// Principal-component reduction fitted on reference rows; used to bring
// flattened sprites down to a small dimension before the Gaussian fit.
struct PcaProjector {
  std::int64_t in_dim = 0;
  std::int64_t out_dim = 0;
  std::vector<double> mean;   // [in_dim]
  std::vector<double> basis;  // [out_dim * in_dim], rows are components

  std::vector<double> project_rows(const std::vector<double>& rows, std::int64_t n) const;
};
PcaProjector fit_pca(const Tensor& samples, std::int64_t out_dim);

struct MetricReport {
  std::int64_t step = 0;
  double toy_frechet = 0.0;
  double overfit_gap = 0.0;
  int modes_covered = -1;  // -1 when the dataset has no mixture centers
  std::int64_t n_samples = 0;
};

}  // namespace dyncap
