#pragma once

// Dual-graph GConvGRU surrogate and its node-only baseline.
//
// Node features X_t (one row per node, columns in this order):
//   0-2   normalized coordinates
//   3-5   previous-step displacement, divided by the displacement std
//   6-8   displacement increment u_{t-1} - u_{t-2}, same scaling
//   9     loading progress alpha_t
//   10    load-surface indicator (0/1)
//   11    optional: previous-step stress averaged onto nodes, divided by the stress std
//
// History columns are zero at t = 0 (and the increment at t = 1).

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dgs/autodiff.hpp"
#include "dgs/case_store.hpp"
#include "dgs/mesh_graph.hpp"
#include "dgs/optim.hpp"

namespace dgs {

enum class ModelVariant { Dual, SingleGraph };
enum class RolloutMode { Free, Teacher };

const char* to_string(ModelVariant v);
ModelVariant variant_from_string(const std::string& s);

inline constexpr std::size_t kBaseFeatures = 11;

struct ModelConfig {
  ModelVariant variant = ModelVariant::Dual;
  std::size_t hidden = 256;
  std::size_t cheb_order = 2;  // K
  std::size_t mlp_hidden = 256;
  bool stress_feedback = false;
  std::uint64_t seed = 0;

  std::size_t feature_count() const { return stress_feedback ? kBaseFeatures + 1 : kBaseFeatures; }
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

struct LinearLayout {
  std::size_t weight = 0, bias = 0;
};

struct MlpLayout {
  LinearLayout hidden, out;
};

/// One GConvGRU cell: per gate (z, r, h) an input-path weight stacked over
/// Chebyshev orders [(K+1) F_in x D], a hidden-path weight [(K+1) D x D] and a bias.
struct GruCellLayout {
  std::array<std::size_t, 3> wx{}, wh{}, bias{};
  std::size_t in_dim = 0, hidden = 0;
};

struct SurrogateParams {
  ModelConfig config;
  ParamSet params;
  GruCellLayout node_cell;
  GruCellLayout elem_cell;  // dual only
  MlpLayout head_u, head_s, head_p, head_rf2;
};

/// Glorot-uniform weights, zero biases, drawn from `config.seed`.
SurrogateParams init_params(const ModelConfig& config);

// ---------------------------------------------------------------------------
// Model-space data

/// One case in normalized model space. Targets are present when the case
/// carries response fields (always, for the container format).
struct PreparedCase {
  DualGraph graph;
  Matrix coords_norm;          // N x 3
  Eigen::VectorXd indicator;   // N
  Eigen::VectorXd alpha;       // T
  std::vector<Matrix> u;       // T x (N x 3), normalized
  Matrix s, peeq;              // T x E, normalized
  Eigen::VectorXd rf2;         // T, normalized
  std::size_t midspan = 0;     // node index used for force-deflection curves

  std::size_t n_nodes() const { return static_cast<std::size_t>(coords_norm.rows()); }
  std::size_t n_elems() const { return graph.incidence.n_elems(); }
  std::size_t n_frames() const { return static_cast<std::size_t>(alpha.size()); }
};

PreparedCase prepare_case(const CaseTrajectory& c, const NormStats& stats,
                          LambdaMaxMode mode = LambdaMaxMode::Fixed);

/// Several prepared cases merged into one block-diagonal problem.
struct Batch {
  BatchedGraph graph;
  NormStats stats;
  SparseMatrix e2n, n2e, residual;
  Matrix coords_norm;   // N x 3
  Matrix indicator;     // N x 1
  Matrix alpha;         // T x C
  std::vector<std::uint32_t> node_case, elem_case;
  std::vector<Matrix> u, s, peeq, rf2;  // per frame: N x 3, E x 1, E x 1, C x 1
  std::size_t n_frames = 0;

  std::size_t n_cases() const { return graph.case_count(); }
  std::size_t n_nodes() const { return static_cast<std::size_t>(coords_norm.rows()); }
  std::size_t n_elems() const { return graph.merged.incidence.n_elems(); }
};

Batch make_batch(std::span<const PreparedCase* const> cases, const NormStats& stats);

// ---------------------------------------------------------------------------
// Building blocks

/// Registers every parameter tensor on the tape as a trainable leaf (or as a
/// constant when the tape is not recording).
std::vector<ad::Var> bind_params(const ParamSet& params, ad::Tape& tape);

/// [T_0 x | T_1 x | ... | T_K x] with the Chebyshev recurrence on L~.
ad::Var chebyshev_basis(const ad::Var& x, const SparseMatrix& lap, std::size_t order);

ad::Var gconv_gru_step(const ad::Var& x, const ad::Var& h_prev, const SparseMatrix& lap,
                       const GruCellLayout& cell, std::span<const ad::Var> w, std::size_t order);

ad::Var mlp_forward(const ad::Var& x, const MlpLayout& mlp, std::span<const ad::Var> w);

/// Assembles X_t. `prev_u`/`prev2_u` are displacement-std-scaled physical
/// displacements of the last two frames (empty Var = zeros); `prev_stress_nodes`
/// is the stress-std-scaled nodal stress feedback (empty Var = zeros).
ad::Var assemble_features(const Batch& batch, std::size_t t, ad::Tape& tape, const ad::Var& prev_u,
                          const ad::Var& prev2_u, const ad::Var& prev_stress_nodes, bool stress_feedback);

struct NodeStep {
  ad::Var hidden;
  ad::Var u;  // N x 3, normalized
};

NodeStep node_branch_step(const SurrogateParams& p, std::span<const ad::Var> w, const ad::Var& x,
                          const ad::Var& h_prev, const Batch& batch);

struct ElementStep {
  ad::Var hidden;
  ad::Var s;  // E x 1, normalized
  ad::Var p;  // E x 1, normalized (physical value is nonnegative)
};

ElementStep element_branch_step(const SurrogateParams& p, std::span<const ad::Var> w, const ad::Var& h_nodes,
                                const ad::Var& h_prev, const Batch& batch);

/// Mean-pools hidden rows per case and decodes RF2 (C x 1, normalized).
ad::Var predict_rf2(const SurrogateParams& p, std::span<const ad::Var> w, const ad::Var& hidden,
                    std::span<const std::uint32_t> row_case, std::size_t n_cases);

// ---------------------------------------------------------------------------
// Rollout

/// Per-frame normalized predictions; frame 0 holds the known initial state.
struct RolloutVars {
  std::vector<ad::Var> u, s, p, rf2;
};

RolloutVars rollout(const SurrogateParams& p, std::span<const ad::Var> w, const Batch& batch, ad::Tape& tape,
                    RolloutMode mode = RolloutMode::Free);

/// Plain-array rollout result for one case, normalized and physical.
struct RolloutResult {
  std::vector<Matrix> u_norm, u;  // T x (N x 3)
  Matrix s_norm, s;               // T x E
  Matrix p_norm, p;               // T x E
  Eigen::VectorXd rf2_norm, rf2;  // T
};

/// Inference without gradients over any number of cases; result per case.
std::vector<RolloutResult> predict(const SurrogateParams& p, std::span<const PreparedCase* const> cases,
                                   const NormStats& stats, RolloutMode mode = RolloutMode::Free);

// ---------------------------------------------------------------------------
// Checkpoints

struct Checkpoint {
  SurrogateParams model;
  NormStats stats;
  nlohmann::json train_config;  // resolved TrainConfig, for provenance
  std::uint64_t seed = 0;
};

nlohmann::json to_json(const NormStats& s);
NormStats norm_stats_from_json(const nlohmann::json& j);

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& dir);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace dgs
