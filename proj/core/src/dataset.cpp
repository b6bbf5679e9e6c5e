#include "dflsim/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "dflsim/errors.hpp"
#include "dflsim/rng.hpp"

namespace dflsim {

namespace {

// C unit directions spread on the sphere: equally spaced angles in 2-D,
// signed basis vectors (then seeded random directions) in higher dimensions.
std::vector<Eigen::VectorXd> class_directions(int classes, int d,
                                              std::mt19937_64& rng) {
  std::vector<Eigen::VectorXd> dirs;
  dirs.reserve(classes);
  if (d == 2) {
    for (int c = 0; c < classes; ++c) {
      double angle = 2.0 * M_PI * c / classes;
      Eigen::VectorXd u(2);
      u << std::cos(angle), std::sin(angle);
      dirs.push_back(u);
    }
    return dirs;
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int c = 0; c < classes; ++c) {
    Eigen::VectorXd u = Eigen::VectorXd::Zero(d);
    if (c < 2 * d) {
      u(c / 2) = (c % 2 == 0) ? 1.0 : -1.0;
    } else {
      do {
        for (int i = 0; i < d; ++i) u(i) = normal(rng);
      } while (u.norm() < 1e-8);
      u.normalize();
    }
    dirs.push_back(u);
  }
  return dirs;
}

}  // namespace

void DatasetSpec::validate() const {
  if (classes < 2) {
    throw ConfigError("dataset.classes must be >= 2, got " +
                      std::to_string(classes));
  }
  if (n < 10 * classes) {
    throw ConfigError("dataset.n must be >= 10*classes, got n=" +
                      std::to_string(n) + " with classes=" +
                      std::to_string(classes));
  }
  if (d < 2) {
    throw ConfigError("dataset.d must be >= 2, got " + std::to_string(d));
  }
  if (!(sep > 0)) {
    throw ConfigError("dataset.sep must be > 0");
  }
}

Dataset make_synthetic(int n, int d, int classes, double sep,
                       std::uint64_t seed) {
  DatasetSpec spec{n, d, classes, sep};
  spec.validate();

  auto rng = make_rng(seed, Stream::dataset);
  auto dirs = class_directions(classes, d, rng);

  Dataset ds;
  ds.classes = classes;
  ds.features.resize(n, d);
  ds.labels.resize(n);

  std::normal_distribution<double> normal(0.0, 1.0);
  for (int i = 0; i < n; ++i) {
    int label = i % classes;  // balanced up to the remainder
    ds.labels(i) = label;
    for (int j = 0; j < d; ++j) {
      ds.features(i, j) = sep * dirs[label](j) + normal(rng);
    }
  }

  // 80/20 split stratified by class.
  std::vector<std::vector<int>> by_class(classes);
  for (int i = 0; i < n; ++i) by_class[ds.labels(i)].push_back(i);
  for (int c = 0; c < classes; ++c) {
    auto& idx = by_class[c];
    for (int i = static_cast<int>(idx.size()) - 1; i > 0; --i) {
      std::uniform_int_distribution<int> pick(0, i);
      std::swap(idx[i], idx[pick(rng)]);
    }
    int n_train = static_cast<int>(std::lround(0.8 * idx.size()));
    n_train = std::max(1, std::min(n_train, static_cast<int>(idx.size()) - 1));
    for (int i = 0; i < static_cast<int>(idx.size()); ++i) {
      (i < n_train ? ds.train_indices : ds.test_indices).push_back(idx[i]);
    }
  }
  std::sort(ds.train_indices.begin(), ds.train_indices.end());
  std::sort(ds.test_indices.begin(), ds.test_indices.end());
  return ds;
}

}  // namespace dflsim
