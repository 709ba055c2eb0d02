#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dgs/surrogate.hpp"

namespace dgs {

struct LossWeights {
  double s = 1.0;
  double rf2 = 1.0;
  double p = 1.0;
  double lap = 0.01;
};

struct TrainConfig {
  std::size_t epochs = 1000;
  std::size_t batch_size = 8;  // cases
  double lr = 3e-3;
  double clip = 0.5;
  ModelConfig model;           // hidden width, Chebyshev order, variant, stress feedback
  std::uint64_t seed = 0;      // shuffling and parameter initialization
  LossWeights weights;
  SplitRatios split;
  PlateauConfig plateau;
  AdamConfig adam;
};

nlohmann::json to_json(const LossWeights& w);
nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);
/// Throws CaseError(InvalidInput) for nonpositive sizes, negative weights and similar.
void validate_train_config(const TrainConfig& c);

// ---------------------------------------------------------------------------
// Objective

struct LossTerms {
  double u = 0.0, s = 0.0, rf2 = 0.0, p = 0.0, lap = 0.0, total = 0.0;
};

/// Sum over nodes of ||u_i - mean of neighbours||^2 for one frame (unnormalized).
double laplacian_sum(const Matrix& u, const NodeGraph& g);

/// Laplacian penalty of a trajectory: frame sums added, then divided by T * N.
double laplacian_reg(std::span<const Matrix> u_frames, const NodeGraph& g);

/// Multi-task loss of one case in normalized space. Every MSE term averages over
/// frames, points and components, frame 0 included.
LossTerms multitask_loss(const RolloutResult& pred, const PreparedCase& target, const LossWeights& w);

/// Differentiable batch loss: the mean over cases of the per-case loss.
ad::Var batch_loss(const RolloutVars& pred, const Batch& batch, const LossWeights& w, LossTerms* terms = nullptr);

// ---------------------------------------------------------------------------
// Training

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;  // largest pre-clip norm seen during the epoch
  bool improved = false;
};

struct TrainResult {
  Checkpoint best;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val = 0.0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Loss with gradients disabled over `cases`, evaluated in batches of
/// `batch_size` and combined as a case-weighted mean.
double dataset_loss(const SurrogateParams& p, std::span<const PreparedCase* const> cases, const NormStats& stats,
                    const LossWeights& w, std::size_t batch_size);

/// Trains on `train_cases`, selects on `val_cases`. Normalization statistics come
/// from the training cases only.
TrainResult train(std::span<const CaseTrajectory> train_cases, std::span<const CaseTrajectory> val_cases,
                  const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Same, on cases already prepared with `stats`.
TrainResult train_prepared(std::span<const PreparedCase* const> train_cases,
                           std::span<const PreparedCase* const> val_cases, const NormStats& stats,
                           const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Parameter gradients of the batch loss (one matrix per parameter tensor).
std::vector<Matrix> loss_gradients(const SurrogateParams& p, const Batch& batch, const LossWeights& w,
                                   double* loss = nullptr);

struct GradCheckReport {
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
};

/// Compares loss_gradients against central differences with step h. Relative
/// error is |fd - ad| / max(|fd|, |ad|, floor). `per_tensor` = 0 checks every
/// scalar; otherwise that many seeded random entries per tensor.
GradCheckReport finite_difference_check(const SurrogateParams& p, const Batch& batch, const LossWeights& w,
                                        double h = 1e-6, std::size_t per_tensor = 0, std::uint64_t seed = 0,
                                        double floor = 1e-5);

// ---------------------------------------------------------------------------
// Metrics

/// Running sums for RMSE and R^2 pooled over every sample of one output.
class MetricAccumulator {
public:
  void add(const double* pred, const double* target, std::size_t count);
  void add(const Matrix& pred, const Matrix& target);

  std::size_t count() const { return n_; }
  double rmse() const;
  /// 1 - SS_res / SS_tot; for a constant target this is 1 when SS_res = 0 and
  /// -infinity otherwise.
  double r2() const;

private:
  long double sse_ = 0.0L, sum_ = 0.0L, sumsq_ = 0.0L;
  std::size_t n_ = 0;
};

struct FieldMetrics {
  double rmse_norm = 0.0;
  double rmse_phys = 0.0;
  double r2 = 0.0;
};

struct Metrics {
  FieldMetrics u, s, peeq, rf2;
  std::size_t n_cases = 0;
};

nlohmann::json to_json(const FieldMetrics& m);
nlohmann::json to_json(const Metrics& m);

/// Builds metrics from accumulators fed with normalized values.
FieldMetrics finalize_metric(const MetricAccumulator& acc, double channel_std);

/// Free rollout of every case with the checkpoint's statistics.
Metrics evaluate(const Checkpoint& ck, std::span<const CaseTrajectory> cases, std::size_t batch_size = 8);

/// Same, on prepared cases; throws CaseError(InvalidInput) if `stats` differ from
/// the checkpoint's.
Metrics evaluate_prepared(const Checkpoint& ck, std::span<const PreparedCase* const> cases, const NormStats& stats,
                          std::size_t batch_size = 8);

// ---------------------------------------------------------------------------
// Ablation

struct AblationRun {
  std::uint64_t seed = 0;
  Metrics dual, single;
};

struct AblationSummary {
  std::vector<AblationRun> runs;
  // Medians over seeds of physical-unit element RMSE.
  double stress_dual = 0.0, stress_single = 0.0;
  double peeq_dual = 0.0, peeq_single = 0.0;
  double stress_reduction_percent = 0.0;  // (1 - dual / single) * 100
  double peeq_reduction_percent = 0.0;
};

double median(std::vector<double> v);
double relative_reduction_percent(double ours, double reference);

/// Trains both variants per seed with identical settings and split; metrics on `test_cases`.
AblationSummary ablate(std::span<const CaseTrajectory> train_cases, std::span<const CaseTrajectory> val_cases,
                       std::span<const CaseTrajectory> test_cases, const TrainConfig& config,
                       std::span<const std::uint64_t> seeds,
                       const std::function<void(const std::string&)>& log = {});

/// Table rows: Model, stress RMSE, PEEQ RMSE (physical), then the reduction row.
std::string ablation_csv(const AblationSummary& s);

}  // namespace dgs
