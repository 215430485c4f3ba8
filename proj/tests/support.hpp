#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>

#include "oap/nn.hpp"

namespace oap::test {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("oap_test_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}); }

inline Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng) {
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index k = 0; k < m.size(); ++k) m(k) = rng.uniform(-1.0, 1.0);
  return m;
}

// Loss = sum(G .* f(X)); central differences with h = 1e-5.
inline double max_fd_error(MlpNet net, const Eigen::MatrixXd& x, const Eigen::MatrixXd& g) {
  net.forward(x, true);
  const Backprop bp = net.backward(g);
  std::vector<double> analytic;
  for (const auto& l : bp.params) {
    for (Eigen::Index i = 0; i < l.weight.rows(); ++i)
      for (Eigen::Index j = 0; j < l.weight.cols(); ++j) analytic.push_back(l.weight(i, j));
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) analytic.push_back(l.bias(i));
  }
  std::vector<double> theta = net.parameters();
  auto loss = [&](const std::vector<double>& p) {
    net.set_parameters(p);
    return (net.predict(x).array() * g.array()).sum();
  };
  const double h = 1e-5;
  double worst = 0.0;
  for (std::size_t k = 0; k < theta.size(); ++k) {
    auto up = theta, down = theta;
    up[k] += h;
    down[k] -= h;
    const double fd = (loss(up) - loss(down)) / (2.0 * h);
    worst = std::max(worst, rel_err(analytic[k], fd));
  }
  // Input gradient as well.
  net.set_parameters(theta);
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    Eigen::MatrixXd up = x, down = x;
    up(k) += h;
    down(k) -= h;
    const double fd =
        ((net.predict(up).array() * g.array()).sum() - (net.predict(down).array() * g.array()).sum()) / (2.0 * h);
    worst = std::max(worst, rel_err(bp.input(k), fd));
  }
  return worst;
}

}  // namespace oap::test
