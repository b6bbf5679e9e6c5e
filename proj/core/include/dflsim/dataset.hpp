#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

namespace dflsim {

struct Dataset {
  Eigen::MatrixXd features;  // n x d
  Eigen::VectorXi labels;    // values in [0, classes)
  int classes = 0;
  std::vector<int> train_indices;
  std::vector<int> test_indices;

  int n() const { return static_cast<int>(features.rows()); }
  int dim() const { return static_cast<int>(features.cols()); }
};

struct DatasetSpec {
  int n = 2048;
  int d = 2;
  int classes = 2;
  double sep = 3.0;

  void validate() const;  // throws ConfigError on degenerate arguments
};

// Gaussian class blobs: class c is centered at sep * u_c for unit vectors
// u_c spread on the sphere, unit covariance, labels balanced as evenly as n
// allows. 80/20 train/test split stratified by class. Deterministic in seed.
Dataset make_synthetic(int n, int d, int classes, double sep,
                       std::uint64_t seed);

inline Dataset make_synthetic(const DatasetSpec& spec, std::uint64_t seed) {
  return make_synthetic(spec.n, spec.d, spec.classes, spec.sep, seed);
}

}  // namespace dflsim
