#pragma once

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <string>

#include "dgs/case_store.hpp"
#include "dgs/mesh_graph.hpp"

namespace testutil {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("dgs_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

private:
  std::filesystem::path path_;
};

inline dgs::Matrix random_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  dgs::Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = d(rng);
  return m;
}

/// Minimal valid case on a structured grid with simple fields.
inline dgs::CaseTrajectory grid_case(std::size_t nx, std::size_t ny, std::size_t nz, std::size_t frames) {
  auto mesh = dgs::structured_hex_grid(nx, ny, nz);
  dgs::CaseTrajectory c;
  c.coords = mesh.coords;
  c.connectivity = mesh.connectivity;
  const auto n = c.coords.rows();
  const auto e = static_cast<Eigen::Index>(c.connectivity.size());
  const auto t = static_cast<Eigen::Index>(frames);
  c.frame_times = dgs::Vector::LinSpaced(t, 0.0, 1.0);
  c.u.assign(frames, dgs::Matrix::Zero(n, 3));
  c.s = dgs::Matrix::Zero(t, e);
  c.peeq = dgs::Matrix::Zero(t, e);
  c.rf2 = dgs::Vector::Zero(t);
  for (Eigen::Index f = 1; f < t; ++f) {
    const double p = c.frame_times[f];
    for (Eigen::Index i = 0; i < n; ++i) {
      c.u[static_cast<std::size_t>(f)](i, 0) = 0.01 * p * c.coords(i, 1);
      c.u[static_cast<std::size_t>(f)](i, 1) = -0.1 * p * std::sin(c.coords(i, 0));
    }
    for (Eigen::Index k = 0; k < e; ++k) {
      c.s(f, k) = p * (1.0 + 0.5 * static_cast<double>(k % 3));
      c.peeq(f, k) = p * p * 1e-3 * static_cast<double>(k % 2);
    }
    c.rf2[f] = 10.0 * p;
  }
  c.load_nodes = {static_cast<std::uint32_t>(n - 1)};
  c.load_positions = {0.5, 1.5};
  return c;
}

}  // namespace testutil
