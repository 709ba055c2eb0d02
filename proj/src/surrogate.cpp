#include "dgs/surrogate.hpp"

#include <cmath>
#include <random>

#include "dgs/blob_io.hpp"
#include "dgs/projection.hpp"

namespace dgs {

namespace fs = std::filesystem;
using nlohmann::json;

const char* to_string(ModelVariant v) { return v == ModelVariant::Dual ? "dual" : "single"; }

ModelVariant variant_from_string(const std::string& s) {
  if (s == "dual") return ModelVariant::Dual;
  if (s == "single" || s == "baseline") return ModelVariant::SingleGraph;
  throw CaseError(CaseError::Kind::InvalidInput, "unknown model variant '" + s + "'");
}

json to_json(const ModelConfig& c) {
  return {{"variant", to_string(c.variant)},
          {"hidden", c.hidden},
          {"cheb_order", c.cheb_order},
          {"mlp_hidden", c.mlp_hidden},
          {"stress_feedback", c.stress_feedback},
          {"seed", c.seed}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  c.variant = variant_from_string(j.value("variant", std::string("dual")));
  c.hidden = j.value("hidden", c.hidden);
  c.cheb_order = j.value("cheb_order", c.cheb_order);
  c.mlp_hidden = j.value("mlp_hidden", c.mlp_hidden);
  c.stress_feedback = j.value("stress_feedback", c.stress_feedback);
  c.seed = j.value("seed", c.seed);
  return c;
}

// ---------------------------------------------------------------------------

namespace {

Matrix glorot(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double fan_in, double fan_out) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

GruCellLayout add_cell(ParamSet& ps, std::mt19937_64& rng, const std::string& prefix, std::size_t in_dim,
                       std::size_t hidden, std::size_t order) {
  GruCellLayout cell;
  cell.in_dim = in_dim;
  cell.hidden = hidden;
  const std::size_t k1 = order + 1;
  const char* gates[3] = {"z", "r", "h"};
  for (int g = 0; g < 3; ++g) {
    const std::string base = prefix + "." + gates[g];
    cell.wx[g] = ps.add(base + ".wx", glorot(rng, k1 * in_dim, hidden, double(k1 * in_dim), double(hidden)));
    cell.wh[g] = ps.add(base + ".wh", glorot(rng, k1 * hidden, hidden, double(k1 * hidden), double(hidden)));
    cell.bias[g] = ps.add(base + ".b", Matrix::Zero(1, static_cast<Eigen::Index>(hidden)));
  }
  return cell;
}

MlpLayout add_mlp(ParamSet& ps, std::mt19937_64& rng, const std::string& prefix, std::size_t in_dim,
                  std::size_t width, std::size_t out_dim) {
  MlpLayout m;
  m.hidden.weight = ps.add(prefix + ".l1.w", glorot(rng, in_dim, width, double(in_dim), double(width)));
  m.hidden.bias = ps.add(prefix + ".l1.b", Matrix::Zero(1, static_cast<Eigen::Index>(width)));
  m.out.weight = ps.add(prefix + ".l2.w", glorot(rng, width, out_dim, double(width), double(out_dim)));
  m.out.bias = ps.add(prefix + ".l2.b", Matrix::Zero(1, static_cast<Eigen::Index>(out_dim)));
  return m;
}

}  // namespace

SurrogateParams init_params(const ModelConfig& config) {
  if (config.hidden == 0 || config.mlp_hidden == 0) throw CaseError(CaseError::Kind::InvalidInput, "hidden sizes must be positive");
  SurrogateParams p;
  p.config = config;
  std::mt19937_64 rng(config.seed);
  const std::size_t d = config.hidden, w = config.mlp_hidden;
  p.node_cell = add_cell(p.params, rng, "node_cell", config.feature_count(), d, config.cheb_order);
  if (config.variant == ModelVariant::Dual) {
    p.elem_cell = add_cell(p.params, rng, "elem_cell", d, d, config.cheb_order);
  }
  p.head_u = add_mlp(p.params, rng, "head_u", d, w, 3);
  p.head_s = add_mlp(p.params, rng, "head_s", d, w, 1);
  p.head_p = add_mlp(p.params, rng, "head_p", d, w, 1);
  p.head_rf2 = add_mlp(p.params, rng, "head_rf2", d, w, 1);
  return p;
}

// ---------------------------------------------------------------------------

PreparedCase prepare_case(const CaseTrajectory& c, const NormStats& stats, LambdaMaxMode mode) {
  validate_case(c);
  PreparedCase pc;
  pc.graph = build_dual_graph(c.connectivity, c.n_nodes(), mode);
  pc.coords_norm = apply_norm(c.coords, stats.coords);
  pc.indicator = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(c.n_nodes()));
  for (auto i : c.load_nodes) pc.indicator[i] = 1.0;
  pc.alpha = compute_alpha(c.frame_times);
  pc.u.reserve(c.n_frames());
  for (const auto& f : c.u) pc.u.push_back(apply_norm(f, stats.u));
  pc.s = apply_norm(c.s, stats.s);
  pc.peeq = apply_norm(c.peeq, stats.peeq);
  pc.rf2 = apply_norm(Matrix(c.rf2), stats.rf2).col(0);

  // Node nearest the centre of the bounding box.
  const Eigen::RowVector3d centre = 0.5 * (c.coords.colwise().minCoeff() + c.coords.colwise().maxCoeff());
  Eigen::Index mid = 0;
  (c.coords.rowwise() - centre).rowwise().squaredNorm().minCoeff(&mid);
  pc.midspan = static_cast<std::size_t>(mid);
  return pc;
}

Batch make_batch(std::span<const PreparedCase* const> cases, const NormStats& stats) {
  if (cases.empty()) throw CaseError(CaseError::Kind::InvalidInput, "empty batch");
  const std::size_t t = cases[0]->n_frames();
  for (const auto* c : cases) {
    if (c->n_frames() != t) throw CaseError(CaseError::Kind::ShapeMismatch, "cases in one batch must share the frame count");
  }
  std::vector<const DualGraph*> graphs;
  for (const auto* c : cases) graphs.push_back(&c->graph);

  Batch b;
  b.graph = merge_batch(graphs);
  b.stats = stats;
  b.n_frames = t;
  const auto n = static_cast<Eigen::Index>(b.graph.node_offsets.back());
  const auto e = static_cast<Eigen::Index>(b.graph.elem_offsets.back());
  const auto nc = static_cast<Eigen::Index>(cases.size());
  b.e2n = element_to_node_operator(b.graph.merged.incidence);
  b.n2e = node_to_element_operator(b.graph.merged.incidence);
  b.residual = neighbor_residual_operator(b.graph.merged.nodes);
  b.coords_norm.resize(n, 3);
  b.indicator.resize(n, 1);
  b.alpha.resize(static_cast<Eigen::Index>(t), nc);
  b.u.assign(t, Matrix(n, 3));
  b.s.assign(t, Matrix(e, 1));
  b.peeq.assign(t, Matrix(e, 1));
  b.rf2.assign(t, Matrix(nc, 1));
  for (Eigen::Index c = 0; c < nc; ++c) {
    const auto& pc = *cases[static_cast<std::size_t>(c)];
    const auto n0 = static_cast<Eigen::Index>(b.graph.node_offsets[static_cast<std::size_t>(c)]);
    const auto e0 = static_cast<Eigen::Index>(b.graph.elem_offsets[static_cast<std::size_t>(c)]);
    const auto nn = static_cast<Eigen::Index>(pc.n_nodes());
    const auto ne = static_cast<Eigen::Index>(pc.n_elems());
    b.coords_norm.middleRows(n0, nn) = pc.coords_norm;
    b.indicator.middleRows(n0, nn) = pc.indicator;
    b.alpha.col(c) = pc.alpha;
    for (std::size_t f = 0; f < t; ++f) {
      const auto fi = static_cast<Eigen::Index>(f);
      b.u[f].middleRows(n0, nn) = pc.u[f];
      b.s[f].middleRows(e0, ne) = pc.s.row(fi).transpose();
      b.peeq[f].middleRows(e0, ne) = pc.peeq.row(fi).transpose();
      b.rf2[f](c, 0) = pc.rf2[fi];
    }
    b.node_case.insert(b.node_case.end(), static_cast<std::size_t>(nn), static_cast<std::uint32_t>(c));
    b.elem_case.insert(b.elem_case.end(), static_cast<std::size_t>(ne), static_cast<std::uint32_t>(c));
  }
  return b;
}

// ---------------------------------------------------------------------------

std::vector<ad::Var> bind_params(const ParamSet& params, ad::Tape& tape) {
  std::vector<ad::Var> w;
  w.reserve(params.size());
  for (const auto& v : params.values) w.push_back(tape.recording() ? tape.leaf(v) : tape.constant(v));
  return w;
}

ad::Var chebyshev_basis(const ad::Var& x, const SparseMatrix& lap, std::size_t order) {
  std::vector<ad::Var> terms{x};
  if (order >= 1) terms.push_back(ad::sparse_matmul(lap, x));
  for (std::size_t k = 2; k <= order; ++k) {
    terms.push_back(ad::sub(ad::scale(ad::sparse_matmul(lap, terms[k - 1]), 2.0), terms[k - 2]));
  }
  return ad::concat_columns(terms);
}

ad::Var gconv_gru_step(const ad::Var& x, const ad::Var& h_prev, const SparseMatrix& lap, const GruCellLayout& cell,
                       std::span<const ad::Var> w, std::size_t order) {
  const auto bx = chebyshev_basis(x, lap, order);
  const auto bh = chebyshev_basis(h_prev, lap, order);
  auto gate = [&](int g, const ad::Var& hidden_basis) {
    return ad::add_row(ad::add(ad::matmul(bx, w[cell.wx[g]]), ad::matmul(hidden_basis, w[cell.wh[g]])), w[cell.bias[g]]);
  };
  const auto z = ad::sigmoid(gate(0, bh));
  const auto r = ad::sigmoid(gate(1, bh));
  const auto candidate = ad::tanh(gate(2, chebyshev_basis(ad::mul(r, h_prev), lap, order)));
  // z * h_prev + (1 - z) * candidate
  return ad::add(candidate, ad::mul(z, ad::sub(h_prev, candidate)));
}

ad::Var mlp_forward(const ad::Var& x, const MlpLayout& m, std::span<const ad::Var> w) {
  const auto h = ad::tanh(ad::add_row(ad::matmul(x, w[m.hidden.weight]), w[m.hidden.bias]));
  return ad::add_row(ad::matmul(h, w[m.out.weight]), w[m.out.bias]);
}

ad::Var assemble_features(const Batch& b, std::size_t t, ad::Tape& tape, const ad::Var& prev_u,
                          const ad::Var& prev2_u, const ad::Var& prev_stress_nodes, bool stress_feedback) {
  if (t >= b.n_frames) throw CaseError(CaseError::Kind::InvalidInput, "frame index out of range");
  const auto n = static_cast<Eigen::Index>(b.n_nodes());
  Matrix alpha(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) alpha(i, 0) = b.alpha(static_cast<Eigen::Index>(t), b.node_case[static_cast<std::size_t>(i)]);

  std::vector<ad::Var> cols;
  cols.push_back(tape.constant(b.coords_norm));
  cols.push_back(prev_u ? prev_u : tape.constant(Matrix::Zero(n, 3)));
  if (prev_u && prev2_u) {
    cols.push_back(ad::sub(prev_u, prev2_u));
  } else if (prev_u) {
    cols.push_back(prev_u);  // u_{t-2} is the zero initial state
  } else {
    cols.push_back(tape.constant(Matrix::Zero(n, 3)));
  }
  cols.push_back(tape.constant(std::move(alpha)));
  cols.push_back(tape.constant(b.indicator));
  if (stress_feedback) cols.push_back(prev_stress_nodes ? prev_stress_nodes : tape.constant(Matrix::Zero(n, 1)));
  return ad::concat_columns(cols);
}

NodeStep node_branch_step(const SurrogateParams& p, std::span<const ad::Var> w, const ad::Var& x,
                          const ad::Var& h_prev, const Batch& b) {
  NodeStep out;
  out.hidden = gconv_gru_step(x, h_prev, b.graph.merged.node_laplacian.matrix, p.node_cell, w, p.config.cheb_order);
  out.u = mlp_forward(out.hidden, p.head_u, w);
  return out;
}

ElementStep element_branch_step(const SurrogateParams& p, std::span<const ad::Var> w, const ad::Var& h_nodes,
                                const ad::Var& h_prev, const Batch& b) {
  ElementStep out;
  const auto z = aggregate_node_hidden(h_nodes, b.graph.merged.incidence);
  out.hidden = gconv_gru_step(z, h_prev, b.graph.merged.element_laplacian.matrix, p.elem_cell, w, p.config.cheb_order);
  out.s = mlp_forward(out.hidden, p.head_s, w);
  out.p = ad::add_scalar(ad::softplus(mlp_forward(out.hidden, p.head_p, w)), -b.stats.peeq.mean / b.stats.peeq.std);
  return out;
}

ad::Var predict_rf2(const SurrogateParams& p, std::span<const ad::Var> w, const ad::Var& hidden,
                    std::span<const std::uint32_t> row_case, std::size_t n_cases) {
  if (hidden.rows() == 0) throw CaseError(CaseError::Kind::InvalidInput, "predict_rf2: no rows to pool");
  return mlp_forward(ad::scatter_mean(hidden, row_case, n_cases), p.head_rf2, w);
}

RolloutVars rollout(const SurrogateParams& p, std::span<const ad::Var> w, const Batch& b, ad::Tape& tape,
                    RolloutMode mode) {
  const std::size_t t_max = b.n_frames;
  const auto n = static_cast<Eigen::Index>(b.n_nodes());
  const auto e = static_cast<Eigen::Index>(b.n_elems());
  const auto d = static_cast<Eigen::Index>(p.config.hidden);
  const bool dual = p.config.variant == ModelVariant::Dual;
  const auto& st = b.stats;
  const double u_shift = st.u.mean / st.u.std;
  const double s_shift = st.s.mean / st.s.std;

  RolloutVars out;
  ad::Var h_n = tape.constant(Matrix::Zero(n, d));
  ad::Var h_e = dual ? tape.constant(Matrix::Zero(e, d)) : ad::Var{};
  // Feedback history: displacements and stresses in std-scaled physical units.
  ad::Var prev_u, prev2_u, prev_stress;

  for (std::size_t t = 0; t < t_max; ++t) {
    const auto x = assemble_features(b, t, tape, prev_u, prev2_u, prev_stress, p.config.stress_feedback);
    auto node = node_branch_step(p, w, x, h_n, b);
    h_n = node.hidden;

    ad::Var s_hat, p_hat, rf2_hat;
    if (dual) {
      auto elem = element_branch_step(p, w, h_n, h_e, b);
      h_e = elem.hidden;
      s_hat = elem.s;
      p_hat = elem.p;
      rf2_hat = predict_rf2(p, w, h_e, b.elem_case, b.n_cases());
    } else {
      s_hat = ad::sparse_matmul(b.n2e, mlp_forward(h_n, p.head_s, w));
      p_hat = ad::add_scalar(ad::sparse_matmul(b.n2e, ad::softplus(mlp_forward(h_n, p.head_p, w))), -st.peeq.mean / st.peeq.std);
      rf2_hat = predict_rf2(p, w, h_n, b.node_case, b.n_cases());
    }
    ad::Var u_hat = node.u;

    if (t == 0) {
      // The first frame is the known initial state, not a prediction.
      u_hat = tape.constant(b.u[0]);
      s_hat = tape.constant(b.s[0]);
      p_hat = tape.constant(b.peeq[0]);
      rf2_hat = tape.constant(b.rf2[0]);
    }
    for (const auto* v : {&u_hat, &s_hat, &p_hat, &rf2_hat}) {
      if (!v->value().allFinite()) throw DivergenceError("non-finite prediction at frame " + std::to_string(t));
    }
    out.u.push_back(u_hat);
    out.s.push_back(s_hat);
    out.p.push_back(p_hat);
    out.rf2.push_back(rf2_hat);

    prev2_u = prev_u;
    if (mode == RolloutMode::Teacher || t == 0) {
      prev_u = tape.constant(b.u[t].array() + u_shift);
      if (t == 0) prev_u = tape.constant(Matrix::Zero(n, 3));
      if (p.config.stress_feedback) prev_stress = tape.constant(b.e2n * Matrix(b.s[t].array() + s_shift));
    } else {
      prev_u = ad::add_scalar(u_hat, u_shift);
      if (p.config.stress_feedback) prev_stress = ad::sparse_matmul(b.e2n, ad::add_scalar(s_hat, s_shift));
    }
  }
  return out;
}

std::vector<RolloutResult> predict(const SurrogateParams& p, std::span<const PreparedCase* const> cases,
                                   const NormStats& stats, RolloutMode mode) {
  const Batch b = make_batch(cases, stats);
  ad::Tape tape(false);
  const auto w = bind_params(p.params, tape);
  const auto r = rollout(p, w, b, tape, mode);

  std::vector<RolloutResult> out(cases.size());
  const auto t = static_cast<Eigen::Index>(b.n_frames);
  for (std::size_t c = 0; c < cases.size(); ++c) {
    const auto n0 = static_cast<Eigen::Index>(b.graph.node_offsets[c]);
    const auto e0 = static_cast<Eigen::Index>(b.graph.elem_offsets[c]);
    const auto nn = static_cast<Eigen::Index>(b.graph.case_nodes(c));
    const auto ne = static_cast<Eigen::Index>(b.graph.case_elems(c));
    auto& res = out[c];
    res.s_norm.resize(t, ne);
    res.p_norm.resize(t, ne);
    res.rf2_norm.resize(t);
    for (Eigen::Index f = 0; f < t; ++f) {
      const auto fi = static_cast<std::size_t>(f);
      res.u_norm.push_back(r.u[fi].value().middleRows(n0, nn));
      res.u.push_back(invert_norm(res.u_norm.back(), stats.u));
      res.s_norm.row(f) = r.s[fi].value().middleRows(e0, ne).transpose();
      res.p_norm.row(f) = r.p[fi].value().middleRows(e0, ne).transpose();
      res.rf2_norm[f] = r.rf2[fi].value()(static_cast<Eigen::Index>(c), 0);
    }
    res.s = invert_norm(res.s_norm, stats.s);
    res.p = invert_norm(res.p_norm, stats.peeq);
    res.rf2 = invert_norm(Matrix(res.rf2_norm), stats.rf2).col(0);
  }
  return out;
}

// ---------------------------------------------------------------------------

json to_json(const NormStats& s) {
  auto ch = [](const ChannelStats& c) { return json{{"mean", c.mean}, {"std", c.std}}; };
  return {{"coords", {ch(s.coords[0]), ch(s.coords[1]), ch(s.coords[2])}},
          {"u", ch(s.u)},
          {"s", ch(s.s)},
          {"peeq", ch(s.peeq)},
          {"rf2", ch(s.rf2)}};
}

NormStats norm_stats_from_json(const json& j) {
  auto ch = [](const json& c) {
    ChannelStats out{c.at("mean").get<double>(), c.at("std").get<double>()};
    if (!(out.std > 0.0) || !std::isfinite(out.mean)) {
      throw CaseError(CaseError::Kind::BadManifest, "normalization statistics must have finite mean and positive std");
    }
    return out;
  };
  try {
    NormStats s;
    const auto& coords = j.at("coords");
    if (coords.size() != 3) throw CaseError(CaseError::Kind::BadManifest, "coordinate statistics need 3 channels");
    for (int a = 0; a < 3; ++a) s.coords[a] = ch(coords.at(a));
    s.u = ch(j.at("u"));
    s.s = ch(j.at("s"));
    s.peeq = ch(j.at("peeq"));
    s.rf2 = ch(j.at("rf2"));
    return s;
  } catch (const json::exception& ex) {
    throw CaseError(CaseError::Kind::BadManifest, std::string("malformed normalization statistics: ") + ex.what());
  }
}

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

void save_checkpoint(const Checkpoint& ck, const fs::path& dir) {
  fs::create_directories(dir);
  json params = json::array();
  const auto& ps = ck.model.params;
  for (std::size_t k = 0; k < ps.size(); ++k) {
    const auto& v = ps.values[k];
    params.push_back(blob::to_json(blob::write_f64(
        dir, ps.names[k], {static_cast<std::size_t>(v.rows()), static_cast<std::size_t>(v.cols())}, v.data())));
  }
  const json model = to_json(ck.model.config);
  char hash[17];
  std::snprintf(hash, sizeof(hash), "%016llx",
                static_cast<unsigned long long>(fnv1a(model.dump() + ck.train_config.dump())));
  json manifest = {{"schema_version", 1},
                   {"kind", "dgs-checkpoint"},
                   {"model", model},
                   {"seed", ck.seed},
                   {"config_hash", hash},
                   {"train_config", ck.train_config},
                   {"norm_stats", to_json(ck.stats)},
                   {"parameter_count", ps.scalar_count()},
                   {"params", params}};
  blob::write_json(dir / "checkpoint.json", manifest);
}

Checkpoint load_checkpoint(const fs::path& dir) {
  const auto path = dir / "checkpoint.json";
  if (!fs::exists(path)) throw CaseError(CaseError::Kind::MissingBlob, "no checkpoint at " + path.string());
  const json m = blob::read_json(path);
  Checkpoint ck;
  try {
    ck.model = init_params(model_config_from_json(m.at("model")));
    ck.seed = m.value("seed", std::uint64_t{0});
    ck.train_config = m.value("train_config", json::object());
    ck.stats = norm_stats_from_json(m.at("norm_stats"));
    const auto& entries = m.at("params");
    auto& ps = ck.model.params;
    if (entries.size() != ps.size()) throw CaseError(CaseError::Kind::ShapeMismatch, "checkpoint parameter count mismatch");
    for (std::size_t k = 0; k < ps.size(); ++k) {
      const auto e = blob::entry_from_json(entries.at(k));
      if (e.name != ps.names[k]) throw CaseError(CaseError::Kind::BadManifest, "unexpected parameter '" + e.name + "'");
      if (e.shape.size() != 2 || e.shape[0] != static_cast<std::size_t>(ps.values[k].rows()) ||
          e.shape[1] != static_cast<std::size_t>(ps.values[k].cols())) {
        throw CaseError(CaseError::Kind::ShapeMismatch, "parameter '" + e.name + "' has the wrong shape");
      }
      auto data = blob::read_f64(dir, e);
      ps.values[k] = Eigen::Map<Matrix>(data.data(), ps.values[k].rows(), ps.values[k].cols());
    }
  } catch (const json::exception& ex) {
    throw CaseError(CaseError::Kind::BadManifest, path.string() + ": " + ex.what());
  }
  return ck;
}

}  // namespace dgs
