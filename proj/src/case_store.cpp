#include "dgs/case_store.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "dgs/blob_io.hpp"

namespace dgs {

namespace fs = std::filesystem;
using nlohmann::json;

const char* to_string(CaseError::Kind kind) {
  switch (kind) {
    case CaseError::Kind::MissingBlob: return "missing_blob";
    case CaseError::Kind::ShapeMismatch: return "shape_mismatch";
    case CaseError::Kind::NonMonotoneTimes: return "non_monotone_times";
    case CaseError::Kind::IndexOutOfRange: return "index_out_of_range";
    case CaseError::Kind::InvalidField: return "invalid_field";
    case CaseError::Kind::BadManifest: return "bad_manifest";
    case CaseError::Kind::InvalidInput: return "invalid_input";
  }
  return "unknown";
}

namespace {

constexpr int kSchemaVersion = 1;
constexpr double kPeeqMonotoneTol = 1e-9;

[[noreturn]] void fail(CaseError::Kind kind, const std::string& msg) { throw CaseError(kind, msg); }

void check_rows(const Matrix& m, Eigen::Index rows, Eigen::Index cols, const char* name) {
  if (m.rows() != rows || m.cols() != cols) {
    fail(CaseError::Kind::ShapeMismatch, std::string(name) + " has shape " + std::to_string(m.rows()) + "x" +
                                             std::to_string(m.cols()) + ", expected " + std::to_string(rows) + "x" +
                                             std::to_string(cols));
  }
}

}  // namespace

void validate_case(const CaseTrajectory& c) {
  const auto n = static_cast<Eigen::Index>(c.n_nodes());
  const auto e = static_cast<Eigen::Index>(c.n_elems());
  const auto t = static_cast<Eigen::Index>(c.n_frames());
  if (n < 8) fail(CaseError::Kind::ShapeMismatch, "case needs at least 8 nodes");
  if (e < 1) fail(CaseError::Kind::ShapeMismatch, "case needs at least one element");
  if (t < 2) fail(CaseError::Kind::ShapeMismatch, "case needs at least two frames");
  check_rows(c.coords, n, 3, "coords");

  for (std::size_t k = 0; k < c.connectivity.size(); ++k) {
    for (auto idx : c.connectivity[k]) {
      if (idx >= static_cast<std::uint32_t>(n)) {
        fail(CaseError::Kind::IndexOutOfRange,
             "element " + std::to_string(k) + " references node " + std::to_string(idx) + " (N=" + std::to_string(n) + ")");
      }
    }
  }

  if (static_cast<Eigen::Index>(c.u.size()) != t) fail(CaseError::Kind::ShapeMismatch, "u frame count differs from T");
  for (const auto& f : c.u) check_rows(f, n, 3, "u");
  check_rows(c.s, t, e, "s");
  check_rows(c.peeq, t, e, "peeq");
  if (c.rf2.size() != t) fail(CaseError::Kind::ShapeMismatch, "rf2 length differs from T");

  for (Eigen::Index k = 1; k < t; ++k) {
    if (!(c.frame_times[k] > c.frame_times[k - 1])) {
      fail(CaseError::Kind::NonMonotoneTimes, "frame_times not strictly increasing at frame " + std::to_string(k));
    }
  }

  if (!c.u[0].isZero(0.0) || !c.peeq.row(0).isZero(0.0) || c.rf2[0] != 0.0) {
    fail(CaseError::Kind::InvalidField, "frame 0 must be the undeformed state");
  }
  if ((c.peeq.array() < 0.0).any()) fail(CaseError::Kind::InvalidField, "negative PEEQ");
  for (Eigen::Index k = 1; k < t; ++k) {
    if (((c.peeq.row(k) - c.peeq.row(k - 1)).array() < -kPeeqMonotoneTol).any()) {
      fail(CaseError::Kind::InvalidField, "PEEQ decreases at frame " + std::to_string(k));
    }
  }

  if (c.load_nodes.empty()) fail(CaseError::Kind::InvalidField, "load_nodes is empty");
  for (auto idx : c.load_nodes) {
    if (idx >= static_cast<std::uint32_t>(n)) {
      fail(CaseError::Kind::IndexOutOfRange, "load node " + std::to_string(idx) + " out of range");
    }
  }
}

void save_case(const CaseTrajectory& c, const fs::path& dir) {
  validate_case(c);
  fs::create_directories(dir);
  const std::size_t n = c.n_nodes(), e = c.n_elems(), t = c.n_frames();

  std::vector<double> u(t * n * 3);
  for (std::size_t k = 0; k < t; ++k) std::copy_n(c.u[k].data(), n * 3, u.begin() + static_cast<std::ptrdiff_t>(k * n * 3));

  std::vector<std::uint32_t> conn;
  conn.reserve(e * 8);
  for (const auto& h : c.connectivity) conn.insert(conn.end(), h.begin(), h.end());

  json blobs = json::array();
  blobs.push_back(blob::to_json(blob::write_f64(dir, "coords", {n, 3}, c.coords.data())));
  blobs.push_back(blob::to_json(blob::write_u32(dir, "connectivity", {e, 8}, conn.data())));
  blobs.push_back(blob::to_json(blob::write_f64(dir, "u", {t, n, 3}, u.data())));
  blobs.push_back(blob::to_json(blob::write_f64(dir, "s", {t, e}, c.s.data())));
  blobs.push_back(blob::to_json(blob::write_f64(dir, "peeq", {t, e}, c.peeq.data())));
  blobs.push_back(blob::to_json(blob::write_f64(dir, "rf2", {t}, c.rf2.data())));
  blobs.push_back(blob::to_json(blob::write_f64(dir, "frame_times", {t}, c.frame_times.data())));

  json manifest = {
      {"schema_version", kSchemaVersion},
      {"n_nodes", n},
      {"n_elems", e},
      {"n_frames", t},
      {"dtype", "f64"},
      {"endianness", "little"},
      {"blobs", blobs},
      {"load_positions", c.load_positions},
      {"load_nodes", c.load_nodes},
  };
  blob::write_json(dir / "manifest.json", manifest);
}

CaseTrajectory load_case(const fs::path& dir) {
  const json m = blob::read_json(dir / "manifest.json");
  std::size_t n = 0, e = 0, t = 0;
  std::vector<blob::Entry> entries;
  CaseTrajectory c;
  try {
    if (m.at("schema_version").get<int>() != kSchemaVersion) fail(CaseError::Kind::BadManifest, "unsupported schema_version");
    if (m.at("dtype").get<std::string>() != "f64" || m.at("endianness").get<std::string>() != "little") {
      fail(CaseError::Kind::BadManifest, "only little-endian f64 containers are supported");
    }
    n = m.at("n_nodes").get<std::size_t>();
    e = m.at("n_elems").get<std::size_t>();
    t = m.at("n_frames").get<std::size_t>();
    for (const auto& j : m.at("blobs")) entries.push_back(blob::entry_from_json(j));
    c.load_positions = m.at("load_positions").get<std::array<double, 2>>();
    c.load_nodes = m.at("load_nodes").get<std::vector<std::uint32_t>>();
  } catch (const json::exception& ex) {
    fail(CaseError::Kind::BadManifest, dir.string() + "/manifest.json: " + ex.what());
  }

  auto find = [&](const std::string& name, std::vector<std::size_t> shape) -> const blob::Entry& {
    auto it = std::find_if(entries.begin(), entries.end(), [&](const auto& en) { return en.name == name; });
    if (it == entries.end()) fail(CaseError::Kind::MissingBlob, "manifest lists no blob '" + name + "'");
    if (it->shape != shape) {
      std::string got, want;
      for (auto d : it->shape) got += std::to_string(d) + ",";
      for (auto d : shape) want += std::to_string(d) + ",";
      fail(CaseError::Kind::ShapeMismatch, "blob '" + name + "' shape [" + got + "] vs manifest dims [" + want + "]");
    }
    return *it;
  };

  auto coords = blob::read_f64(dir, find("coords", {n, 3}));
  auto conn = blob::read_u32(dir, find("connectivity", {e, 8}));
  auto u = blob::read_f64(dir, find("u", {t, n, 3}));
  auto s = blob::read_f64(dir, find("s", {t, e}));
  auto peeq = blob::read_f64(dir, find("peeq", {t, e}));
  auto rf2 = blob::read_f64(dir, find("rf2", {t}));
  auto times = blob::read_f64(dir, find("frame_times", {t}));

  c.coords = Eigen::Map<Matrix>(coords.data(), static_cast<Eigen::Index>(n), 3);
  c.connectivity.resize(e);
  for (std::size_t k = 0; k < e; ++k) std::copy_n(conn.begin() + static_cast<std::ptrdiff_t>(k * 8), 8, c.connectivity[k].begin());
  c.u.resize(t);
  for (std::size_t k = 0; k < t; ++k) {
    c.u[k] = Eigen::Map<Matrix>(u.data() + k * n * 3, static_cast<Eigen::Index>(n), 3);
  }
  c.s = Eigen::Map<Matrix>(s.data(), static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(e));
  c.peeq = Eigen::Map<Matrix>(peeq.data(), static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(e));
  c.rf2 = Eigen::Map<Vector>(rf2.data(), static_cast<Eigen::Index>(t));
  c.frame_times = Eigen::Map<Vector>(times.data(), static_cast<Eigen::Index>(t));
  validate_case(c);
  return c;
}

Vector compute_alpha(const Vector& frame_times) {
  const auto t = frame_times.size();
  if (t < 2) throw CaseError(CaseError::Kind::InvalidInput, "compute_alpha needs at least two frames");
  const double t0 = frame_times[0];
  const double span = frame_times[t - 1] - t0;
  if (!(span > 0.0)) throw CaseError(CaseError::Kind::InvalidInput, "compute_alpha: zero or negative time span");
  for (Eigen::Index k = 1; k < t; ++k) {
    if (!(frame_times[k] > frame_times[k - 1])) {
      throw CaseError(CaseError::Kind::NonMonotoneTimes, "compute_alpha: times not strictly increasing");
    }
  }
  Vector a(t);
  for (Eigen::Index k = 0; k < t; ++k) a[k] = (frame_times[k] - t0) / span;
  a[0] = 0.0;
  a[t - 1] = 1.0;
  return a;
}

// ---------------------------------------------------------------------------

ChannelStats channel_stats(const double* data, std::size_t count) {
  if (count == 0) throw CaseError(CaseError::Kind::InvalidInput, "channel_stats on empty data");
  long double sum = 0.0L;
  for (std::size_t i = 0; i < count; ++i) sum += data[i];
  const double mean = static_cast<double>(sum / static_cast<long double>(count));
  long double sq = 0.0L;
  for (std::size_t i = 0; i < count; ++i) {
    const long double d = data[i] - mean;
    sq += d * d;
  }
  double sd = std::sqrt(static_cast<double>(sq / static_cast<long double>(count)));
  if (!(sd >= 1e-12)) sd = 1.0;
  return {mean, sd};
}

NormStats compute_norm_stats(const std::vector<const CaseTrajectory*>& train_cases) {
  if (train_cases.empty()) throw CaseError(CaseError::Kind::InvalidInput, "normalization needs at least one training case");
  std::array<std::vector<double>, 3> xyz;
  std::vector<double> u, s, p, rf;
  for (const auto* c : train_cases) {
    for (Eigen::Index i = 0; i < c->coords.rows(); ++i) {
      for (int a = 0; a < 3; ++a) xyz[a].push_back(c->coords(i, a));
    }
    for (const auto& f : c->u) u.insert(u.end(), f.data(), f.data() + f.size());
    s.insert(s.end(), c->s.data(), c->s.data() + c->s.size());
    p.insert(p.end(), c->peeq.data(), c->peeq.data() + c->peeq.size());
    rf.insert(rf.end(), c->rf2.data(), c->rf2.data() + c->rf2.size());
  }
  NormStats st;
  for (int a = 0; a < 3; ++a) st.coords[a] = channel_stats(xyz[a].data(), xyz[a].size());
  st.u = channel_stats(u.data(), u.size());
  st.s = channel_stats(s.data(), s.size());
  st.peeq = channel_stats(p.data(), p.size());
  st.rf2 = channel_stats(rf.data(), rf.size());
  return st;
}

NormStats compute_norm_stats(const std::vector<CaseTrajectory>& train_cases) {
  std::vector<const CaseTrajectory*> ptrs;
  for (const auto& c : train_cases) ptrs.push_back(&c);
  return compute_norm_stats(ptrs);
}

Matrix apply_norm(const Matrix& x, const ChannelStats& st) { return (x.array() - st.mean) / st.std; }

Matrix invert_norm(const Matrix& x, const ChannelStats& st) { return x.array() * st.std + st.mean; }

Matrix apply_norm(const Matrix& x, const std::array<ChannelStats, 3>& st) {
  if (x.cols() != 3) throw CaseError(CaseError::Kind::ShapeMismatch, "apply_norm: expected 3 channels");
  Matrix out(x.rows(), 3);
  for (int a = 0; a < 3; ++a) out.col(a) = (x.col(a).array() - st[a].mean) / st[a].std;
  return out;
}

Matrix invert_norm(const Matrix& x, const std::array<ChannelStats, 3>& st) {
  if (x.cols() != 3) throw CaseError(CaseError::Kind::ShapeMismatch, "invert_norm: expected 3 channels");
  Matrix out(x.rows(), 3);
  for (int a = 0; a < 3; ++a) out.col(a) = x.col(a).array() * st[a].std + st[a].mean;
  return out;
}

// ---------------------------------------------------------------------------

SplitAssignment split_cases(std::size_t n_cases, const SplitRatios& r, std::uint64_t seed) {
  if (!(r.train > 0 && r.validation > 0 && r.test > 0)) {
    throw CaseError(CaseError::Kind::InvalidInput, "split ratios must be positive");
  }
  if (std::abs(r.train + r.validation + r.test - 1.0) > 1e-9) {
    throw CaseError(CaseError::Kind::InvalidInput, "split ratios must sum to 1");
  }
  if (n_cases < 3) throw CaseError(CaseError::Kind::InvalidInput, "need at least 3 cases for a three-way split");

  // Round half to even; the remainder goes to train.
  const auto n = static_cast<double>(n_cases);
  auto n_val = static_cast<std::size_t>(std::max(1.0, std::nearbyint(r.validation * n)));
  auto n_test = static_cast<std::size_t>(std::max(1.0, std::nearbyint(r.test * n)));
  if (n_val + n_test >= n_cases) {
    throw CaseError(CaseError::Kind::InvalidInput, "too few cases for the requested split");
  }

  std::vector<std::size_t> idx(n_cases);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  // Fisher-Yates with an explicit draw so the permutation does not depend on
  // the standard library's shuffle implementation.
  for (std::size_t i = n_cases - 1; i > 0; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % (i + 1));
    std::swap(idx[i], idx[j]);
  }

  SplitAssignment out;
  out.seed = seed;
  out.validation.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
  out.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.begin() + static_cast<std::ptrdiff_t>(n_val + n_test));
  out.train.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_val + n_test), idx.end());
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.validation.begin(), out.validation.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

}  // namespace dgs
