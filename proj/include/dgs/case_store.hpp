#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace dgs {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using Hex = std::array<std::uint32_t, 8>;

/// Error raised for malformed case data. `kind` distinguishes the diagnostics
/// so callers (and the CLI exit-code mapping) can react without string matching.
class CaseError : public std::runtime_error {
public:
  enum class Kind {
    MissingBlob,
    ShapeMismatch,
    NonMonotoneTimes,
    IndexOutOfRange,
    InvalidField,
    BadManifest,
    InvalidInput,
  };

  CaseError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

private:
  Kind kind_;
};

const char* to_string(CaseError::Kind kind);

/// One simulation case. Displacements are stored frame-major: u[t] is N x 3.
struct CaseTrajectory {
  Matrix coords;                    // N x 3, mm
  std::vector<Hex> connectivity;    // E hexahedra
  std::vector<Matrix> u;            // T frames of N x 3, mm
  Matrix s;                         // T x E, MPa
  Matrix peeq;                      // T x E
  Vector rf2;                       // T, kN
  Vector frame_times;               // T
  std::vector<std::uint32_t> load_nodes;
  std::array<double, 2> load_positions{0.0, 0.0};

  std::size_t n_nodes() const { return static_cast<std::size_t>(coords.rows()); }
  std::size_t n_elems() const { return connectivity.size(); }
  std::size_t n_frames() const { return static_cast<std::size_t>(frame_times.size()); }
};

/// Throws CaseError if any structural or physical invariant of the case is violated.
void validate_case(const CaseTrajectory& c);

void save_case(const CaseTrajectory& c, const std::filesystem::path& dir);
CaseTrajectory load_case(const std::filesystem::path& dir);

Vector compute_alpha(const Vector& frame_times);

// ---------------------------------------------------------------------------
// Normalization

struct ChannelStats {
  double mean = 0.0;
  double std = 1.0;
};

/// Coordinates are normalized per axis; every response quantity has one
/// scalar channel shared by all of its components.
struct NormStats {
  std::array<ChannelStats, 3> coords;
  ChannelStats u;
  ChannelStats s;
  ChannelStats peeq;
  ChannelStats rf2;
};

/// Population mean/std over a flat set of samples. Std below 1e-12 becomes 1.
ChannelStats channel_stats(const double* data, std::size_t count);

NormStats compute_norm_stats(const std::vector<const CaseTrajectory*>& train_cases);
NormStats compute_norm_stats(const std::vector<CaseTrajectory>& train_cases);

Matrix apply_norm(const Matrix& x, const ChannelStats& stats);
Matrix invert_norm(const Matrix& x, const ChannelStats& stats);
/// Column-wise variant: x must have exactly one column per channel.
Matrix apply_norm(const Matrix& x, const std::array<ChannelStats, 3>& stats);
Matrix invert_norm(const Matrix& x, const std::array<ChannelStats, 3>& stats);

// ---------------------------------------------------------------------------
// Case-level splitting

struct SplitAssignment {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
  std::uint64_t seed = 0;
};

struct SplitRatios {
  double train = 0.70;
  double validation = 0.15;
  double test = 0.15;
};

SplitAssignment split_cases(std::size_t n_cases, const SplitRatios& ratios, std::uint64_t seed);

}  // namespace dgs
