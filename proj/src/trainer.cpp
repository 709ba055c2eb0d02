#include "dgs/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

namespace dgs {

using nlohmann::json;

namespace {

[[noreturn]] void invalid(const std::string& msg) { throw CaseError(CaseError::Kind::InvalidInput, msg); }

std::vector<const PreparedCase*> pointers(const std::vector<PreparedCase>& v) {
  std::vector<const PreparedCase*> out;
  out.reserve(v.size());
  for (const auto& c : v) out.push_back(&c);
  return out;
}

}  // namespace

json to_json(const LossWeights& w) {
  return {{"lambda_s", w.s}, {"lambda_rf2", w.rf2}, {"lambda_p", w.p}, {"lambda_lap", w.lap}};
}

json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"clip", c.clip},
          {"model", to_json(c.model)},
          {"seed", c.seed},
          {"loss_weights", to_json(c.weights)},
          {"split", {{"train", c.split.train}, {"validation", c.split.validation}, {"test", c.split.test}}},
          {"plateau",
           {{"patience", c.plateau.patience},
            {"factor", c.plateau.factor},
            {"threshold", c.plateau.threshold},
            {"min_lr", c.plateau.min_lr}}},
          {"adam", {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}}}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  try {
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    c.clip = j.value("clip", c.clip);
    if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
    c.seed = j.value("seed", c.seed);
    if (j.contains("loss_weights")) {
      const auto& w = j.at("loss_weights");
      c.weights.s = w.value("lambda_s", c.weights.s);
      c.weights.rf2 = w.value("lambda_rf2", c.weights.rf2);
      c.weights.p = w.value("lambda_p", c.weights.p);
      c.weights.lap = w.value("lambda_lap", c.weights.lap);
    }
    if (j.contains("split")) {
      const auto& s = j.at("split");
      c.split.train = s.value("train", c.split.train);
      c.split.validation = s.value("validation", c.split.validation);
      c.split.test = s.value("test", c.split.test);
    }
    if (j.contains("plateau")) {
      const auto& p = j.at("plateau");
      c.plateau.patience = p.value("patience", c.plateau.patience);
      c.plateau.factor = p.value("factor", c.plateau.factor);
      c.plateau.threshold = p.value("threshold", c.plateau.threshold);
      c.plateau.min_lr = p.value("min_lr", c.plateau.min_lr);
    }
    if (j.contains("adam")) {
      const auto& a = j.at("adam");
      c.adam.beta1 = a.value("beta1", c.adam.beta1);
      c.adam.beta2 = a.value("beta2", c.adam.beta2);
      c.adam.eps = a.value("eps", c.adam.eps);
    }
  } catch (const json::exception& ex) {
    throw CaseError(CaseError::Kind::BadManifest, std::string("malformed training config: ") + ex.what());
  }
  validate_train_config(c);
  return c;
}

void validate_train_config(const TrainConfig& c) {
  if (c.batch_size == 0) invalid("batch_size must be positive");
  if (!(c.lr > 0.0) || !std::isfinite(c.lr)) invalid("lr must be positive");
  if (!(c.clip > 0.0)) invalid("clip must be positive");
  if (c.model.hidden == 0 || c.model.mlp_hidden == 0) invalid("hidden sizes must be positive");
  if (c.model.cheb_order == 0) invalid("Chebyshev order must be at least 1");
  for (double w : {c.weights.s, c.weights.rf2, c.weights.p, c.weights.lap}) {
    if (!(w >= 0.0) || !std::isfinite(w)) invalid("loss weights must be finite and nonnegative");
  }
  if (c.plateau.patience < 0 || !(c.plateau.factor > 0.0 && c.plateau.factor < 1.0)) {
    invalid("plateau factor must lie in (0, 1) and patience must be nonnegative");
  }
}

// ---------------------------------------------------------------------------

double laplacian_sum(const Matrix& u, const NodeGraph& g) {
  if (static_cast<std::size_t>(u.rows()) != g.size) {
    throw CaseError(CaseError::Kind::ShapeMismatch, "laplacian_sum: field rows differ from the node count");
  }
  double total = 0.0;
  Eigen::RowVectorXd mean(u.cols());
  for (std::size_t i = 0; i < g.size; ++i) {
    const auto nb = g.neighbors(i);
    if (nb.empty()) throw MeshError(CaseError::Kind::InvalidInput, "node " + std::to_string(i) + " is isolated");
    mean.setZero();
    for (auto j : nb) mean += u.row(j);
    mean /= static_cast<double>(nb.size());
    total += (u.row(static_cast<Eigen::Index>(i)) - mean).squaredNorm();
  }
  return total;
}

double laplacian_reg(std::span<const Matrix> u_frames, const NodeGraph& g) {
  if (u_frames.empty()) invalid("laplacian_reg: no frames");
  double total = 0.0;
  for (const auto& f : u_frames) total += laplacian_sum(f, g);
  return total / (static_cast<double>(u_frames.size()) * static_cast<double>(g.size));
}

LossTerms multitask_loss(const RolloutResult& pred, const PreparedCase& target, const LossWeights& w) {
  const std::size_t t = target.n_frames();
  if (pred.u_norm.size() != t || pred.s_norm.rows() != target.s.rows() || pred.s_norm.cols() != target.s.cols() ||
      pred.p_norm.rows() != target.peeq.rows() || pred.p_norm.cols() != target.peeq.cols() ||
      pred.rf2_norm.size() != target.rf2.size()) {
    throw CaseError(CaseError::Kind::ShapeMismatch, "multitask_loss: prediction and target shapes differ");
  }
  LossTerms out;
  double su = 0.0;
  for (std::size_t f = 0; f < t; ++f) {
    if (pred.u_norm[f].rows() != target.u[f].rows() || pred.u_norm[f].cols() != 3) {
      throw CaseError(CaseError::Kind::ShapeMismatch, "multitask_loss: displacement shape differs");
    }
    su += (pred.u_norm[f] - target.u[f]).squaredNorm();
  }
  out.u = su / static_cast<double>(t * target.n_nodes() * 3);
  out.s = (pred.s_norm - target.s).squaredNorm() / static_cast<double>(target.s.size());
  out.p = (pred.p_norm - target.peeq).squaredNorm() / static_cast<double>(target.peeq.size());
  out.rf2 = (pred.rf2_norm - target.rf2).squaredNorm() / static_cast<double>(target.rf2.size());
  out.lap = laplacian_reg(pred.u_norm, target.graph.nodes);
  out.total = out.u + w.s * out.s + w.rf2 * out.rf2 + w.p * out.p + w.lap * out.lap;
  return out;
}

ad::Var batch_loss(const RolloutVars& pred, const Batch& b, const LossWeights& w, LossTerms* terms) {
  const std::size_t t = b.n_frames;
  if (pred.u.size() != t || pred.s.size() != t || pred.p.size() != t || pred.rf2.size() != t) {
    throw CaseError(CaseError::Kind::ShapeMismatch, "batch_loss: frame count differs");
  }
  auto& tape = pred.u[0].tape();
  const double c = static_cast<double>(b.n_cases());
  const double tf = static_cast<double>(t);

  // Row weights turning a plain weighted sum into the mean of per-case means.
  std::vector<double> wu(b.n_nodes()), wlap(b.n_nodes()), we(b.n_elems()), wc(b.n_cases(), 1.0 / (c * tf));
  for (std::size_t i = 0; i < wu.size(); ++i) {
    const double nc = static_cast<double>(b.graph.case_nodes(b.node_case[i]));
    wu[i] = 1.0 / (c * tf * nc * 3.0);
    wlap[i] = 1.0 / (c * tf * nc);
  }
  for (std::size_t e = 0; e < we.size(); ++e) {
    we[e] = 1.0 / (c * tf * static_cast<double>(b.graph.case_elems(b.elem_case[e])));
  }
  const auto zeros_u = tape.constant(Matrix::Zero(static_cast<Eigen::Index>(b.n_nodes()), 3));

  std::vector<ad::Var> lu, ls, lp, lr, ll;
  for (std::size_t f = 0; f < t; ++f) {
    lu.push_back(ad::weighted_sse(pred.u[f], tape.constant(b.u[f]), wu));
    ls.push_back(ad::weighted_sse(pred.s[f], tape.constant(b.s[f]), we));
    lp.push_back(ad::weighted_sse(pred.p[f], tape.constant(b.peeq[f]), we));
    lr.push_back(ad::weighted_sse(pred.rf2[f], tape.constant(b.rf2[f]), wc));
    ll.push_back(ad::weighted_sse(ad::sparse_matmul(b.residual, pred.u[f]), zeros_u, wlap));
  }
  auto total_of = [](const std::vector<ad::Var>& parts) { return ad::sum_all(ad::concat_columns(parts)); };
  const auto u = total_of(lu), s = total_of(ls), p = total_of(lp), r = total_of(lr), l = total_of(ll);
  const auto total = ad::add(ad::add(ad::add(u, ad::scale(s, w.s)), ad::add(ad::scale(r, w.rf2), ad::scale(p, w.p))),
                             ad::scale(l, w.lap));
  if (terms) *terms = {u.scalar(), s.scalar(), r.scalar(), p.scalar(), l.scalar(), total.scalar()};
  return total;
}

// ---------------------------------------------------------------------------

std::vector<Matrix> loss_gradients(const SurrogateParams& p, const Batch& batch, const LossWeights& w, double* loss) {
  ad::Tape tape(true);
  const auto vars = bind_params(p.params, tape);
  const auto pred = rollout(p, vars, batch, tape, RolloutMode::Free);
  const auto l = batch_loss(pred, batch, w);
  if (!std::isfinite(l.scalar())) throw DivergenceError("non-finite loss");
  tape.backward(l);
  std::vector<Matrix> grads;
  grads.reserve(vars.size());
  for (const auto& v : vars) {
    grads.push_back(v.grad().size() ? v.grad() : Matrix::Zero(v.rows(), v.cols()));
  }
  if (loss) *loss = l.scalar();
  return grads;
}

double dataset_loss(const SurrogateParams& p, std::span<const PreparedCase* const> cases, const NormStats& stats,
                    const LossWeights& w, std::size_t batch_size) {
  if (cases.empty()) invalid("dataset_loss: no cases");
  double total = 0.0;
  for (std::size_t i = 0; i < cases.size(); i += batch_size) {
    const std::size_t n = std::min(batch_size, cases.size() - i);
    const auto batch = make_batch(cases.subspan(i, n), stats);
    ad::Tape tape(false);
    const auto vars = bind_params(p.params, tape);
    const auto pred = rollout(p, vars, batch, tape, RolloutMode::Free);
    total += batch_loss(pred, batch, w).scalar() * static_cast<double>(n);
  }
  return total / static_cast<double>(cases.size());
}

TrainResult train_prepared(std::span<const PreparedCase* const> train_cases,
                           std::span<const PreparedCase* const> val_cases, const NormStats& stats,
                           const TrainConfig& config, const EpochCallback& on_epoch) {
  validate_train_config(config);
  if (train_cases.empty()) invalid("training split is empty");
  if (val_cases.empty()) invalid("validation split is empty");

  ModelConfig mc = config.model;
  mc.seed = config.seed;
  SurrogateParams model = init_params(mc);
  OptimizerState opt = make_optimizer_state(model.params, config.lr);
  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);

  TrainResult result;
  result.best.model = model;
  result.best.stats = stats;
  result.best.train_config = to_json(config);
  result.best.seed = config.seed;
  result.best_val = std::numeric_limits<double>::infinity();

  std::vector<std::size_t> order(train_cases.size());
  std::vector<const PreparedCase*> batch_cases;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i - 1);
      std::swap(order[i - 1], order[pick(rng)]);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = opt.lr;
    double weighted = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t i = 0; i < order.size(); i += config.batch_size, ++batch_index) {
      batch_cases.clear();
      for (std::size_t k = i; k < std::min(i + config.batch_size, order.size()); ++k) {
        batch_cases.push_back(train_cases[order[k]]);
      }
      try {
        const auto batch = make_batch(batch_cases, stats);
        double loss = 0.0;
        auto grads = loss_gradients(model, batch, config.weights, &loss);
        rec.grad_norm = std::max(rec.grad_norm, clip_global_norm(grads, config.clip));
        adam_step(model.params, grads, opt, config.adam);
        weighted += loss * static_cast<double>(batch_cases.size());
      } catch (const DivergenceError& ex) {
        throw DivergenceError("epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_index) + ": " +
                              ex.what());
      }
    }
    rec.train_loss = weighted / static_cast<double>(order.size());
    try {
      rec.val_loss = dataset_loss(model, val_cases, stats, config.weights, config.batch_size);
    } catch (const DivergenceError& ex) {
      throw DivergenceError("epoch " + std::to_string(epoch) + ", validation: " + ex.what());
    }
    if (!std::isfinite(rec.val_loss)) throw DivergenceError("epoch " + std::to_string(epoch) + ": non-finite validation loss");
    if (rec.val_loss < result.best_val) {
      rec.improved = true;
      result.best_val = rec.val_loss;
      result.best_epoch = epoch;
      result.best.model = model;
    }
    plateau_step(opt, rec.val_loss, config.plateau);
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

TrainResult train(std::span<const CaseTrajectory> train_cases, std::span<const CaseTrajectory> val_cases,
                  const TrainConfig& config, const EpochCallback& on_epoch) {
  if (train_cases.empty()) invalid("training split is empty");
  if (val_cases.empty()) invalid("validation split is empty");
  std::vector<const CaseTrajectory*> raw;
  for (const auto& c : train_cases) raw.push_back(&c);
  const NormStats stats = compute_norm_stats(raw);
  std::vector<PreparedCase> tr, va;
  for (const auto& c : train_cases) tr.push_back(prepare_case(c, stats));
  for (const auto& c : val_cases) va.push_back(prepare_case(c, stats));
  return train_prepared(pointers(tr), pointers(va), stats, config, on_epoch);
}

GradCheckReport finite_difference_check(const SurrogateParams& p, const Batch& batch, const LossWeights& w,
                                        double h, std::size_t per_tensor, std::uint64_t seed, double floor) {
  if (!(h > 0.0)) invalid("finite-difference step must be positive");
  const auto grads = loss_gradients(p, batch, w);
  SurrogateParams probe = p;
  auto loss_at = [&]() {
    ad::Tape tape(false);
    const auto vars = bind_params(probe.params, tape);
    return batch_loss(rollout(probe, vars, batch, tape, RolloutMode::Free), batch, w).scalar();
  };
  std::mt19937_64 rng(seed);
  GradCheckReport r;
  for (std::size_t k = 0; k < probe.params.size(); ++k) {
    auto& v = probe.params.values[k];
    const auto n = static_cast<std::size_t>(v.size());
    std::vector<std::size_t> idx;
    if (per_tensor == 0 || per_tensor >= n) {
      idx.resize(n);
      std::iota(idx.begin(), idx.end(), std::size_t{0});
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, n - 1);
      for (std::size_t i = 0; i < per_tensor; ++i) idx.push_back(pick(rng));
    }
    for (auto i : idx) {
      const double orig = v.data()[i];
      v.data()[i] = orig + h;
      const double plus = loss_at();
      v.data()[i] = orig - h;
      const double minus = loss_at();
      v.data()[i] = orig;
      const double fd = (plus - minus) / (2.0 * h);
      const double an = grads[k].data()[i];
      const double abs_err = std::abs(fd - an);
      const double rel = abs_err / std::max({std::abs(fd), std::abs(an), floor});
      r.max_abs_error = std::max(r.max_abs_error, abs_err);
      if (rel > r.max_rel_error || r.checked == 0) {
        r.max_rel_error = std::max(r.max_rel_error, rel);
        r.worst_param = probe.params.names[k];
        r.worst_index = i;
      }
      ++r.checked;
    }
  }
  return r;
}

// ---------------------------------------------------------------------------

void MetricAccumulator::add(const double* pred, const double* target, std::size_t count) {
  for (std::size_t i = 0; i < count; ++i) {
    const long double d = static_cast<long double>(pred[i]) - target[i];
    sse_ += d * d;
    sum_ += target[i];
    sumsq_ += static_cast<long double>(target[i]) * target[i];
  }
  n_ += count;
}

void MetricAccumulator::add(const Matrix& pred, const Matrix& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
    throw CaseError(CaseError::Kind::ShapeMismatch, "metric: prediction and target shapes differ");
  }
  add(pred.data(), target.data(), static_cast<std::size_t>(pred.size()));
}

double MetricAccumulator::rmse() const {
  if (n_ == 0) invalid("metric over zero samples");
  return static_cast<double>(std::sqrt(sse_ / static_cast<long double>(n_)));
}

double MetricAccumulator::r2() const {
  if (n_ == 0) invalid("metric over zero samples");
  const long double mean = sum_ / static_cast<long double>(n_);
  const long double ss_tot = std::max(0.0L, sumsq_ - static_cast<long double>(n_) * mean * mean);
  if (ss_tot <= 0.0L) return sse_ == 0.0L ? 1.0 : -std::numeric_limits<double>::infinity();
  return static_cast<double>(1.0L - sse_ / ss_tot);
}

FieldMetrics finalize_metric(const MetricAccumulator& acc, double channel_std) {
  FieldMetrics m;
  m.rmse_norm = acc.rmse();
  m.rmse_phys = m.rmse_norm * channel_std;
  m.r2 = acc.r2();
  return m;
}

json to_json(const FieldMetrics& m) {
  return {{"rmse_normalized", m.rmse_norm}, {"rmse_physical", m.rmse_phys}, {"r2", m.r2}};
}

json to_json(const Metrics& m) {
  return {{"n_cases", m.n_cases},
          {"u", to_json(m.u)},
          {"s", to_json(m.s)},
          {"peeq", to_json(m.peeq)},
          {"rf2", to_json(m.rf2)}};
}

namespace {

bool same_stats(const NormStats& a, const NormStats& b) {
  auto eq = [](const ChannelStats& x, const ChannelStats& y) { return x.mean == y.mean && x.std == y.std; };
  return eq(a.coords[0], b.coords[0]) && eq(a.coords[1], b.coords[1]) && eq(a.coords[2], b.coords[2]) &&
         eq(a.u, b.u) && eq(a.s, b.s) && eq(a.peeq, b.peeq) && eq(a.rf2, b.rf2);
}

}  // namespace

Metrics evaluate_prepared(const Checkpoint& ck, std::span<const PreparedCase* const> cases, const NormStats& stats,
                          std::size_t batch_size) {
  if (!same_stats(ck.stats, stats)) invalid("normalization statistics differ from the checkpoint's");
  if (cases.empty()) invalid("evaluate: no cases");
  if (batch_size == 0) invalid("evaluate: batch size must be positive");
  MetricAccumulator au, as, ap, ar;
  for (std::size_t i = 0; i < cases.size(); i += batch_size) {
    const auto part = cases.subspan(i, std::min(batch_size, cases.size() - i));
    const auto results = predict(ck.model, part, stats, RolloutMode::Free);
    for (std::size_t c = 0; c < part.size(); ++c) {
      const auto& r = results[c];
      const auto& t = *part[c];
      for (std::size_t f = 0; f < t.n_frames(); ++f) au.add(r.u_norm[f], t.u[f]);
      as.add(r.s_norm, t.s);
      ap.add(r.p_norm, t.peeq);
      ar.add(Matrix(r.rf2_norm), Matrix(t.rf2));
    }
  }
  Metrics m;
  m.n_cases = cases.size();
  m.u = finalize_metric(au, stats.u.std);
  m.s = finalize_metric(as, stats.s.std);
  m.peeq = finalize_metric(ap, stats.peeq.std);
  m.rf2 = finalize_metric(ar, stats.rf2.std);
  return m;
}

Metrics evaluate(const Checkpoint& ck, std::span<const CaseTrajectory> cases, std::size_t batch_size) {
  std::vector<PreparedCase> prepared;
  for (const auto& c : cases) prepared.push_back(prepare_case(c, ck.stats));
  return evaluate_prepared(ck, pointers(prepared), ck.stats, batch_size);
}

// ---------------------------------------------------------------------------

double median(std::vector<double> v) {
  if (v.empty()) invalid("median of an empty list");
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

double relative_reduction_percent(double ours, double reference) {
  if (!(reference > 0.0)) invalid("relative reduction needs a positive reference");
  return (1.0 - ours / reference) * 100.0;
}

AblationSummary ablate(std::span<const CaseTrajectory> train_cases, std::span<const CaseTrajectory> val_cases,
                       std::span<const CaseTrajectory> test_cases, const TrainConfig& config,
                       std::span<const std::uint64_t> seeds, const std::function<void(const std::string&)>& log) {
  if (seeds.empty()) invalid("ablation needs at least one seed");
  if (test_cases.empty()) invalid("test split is empty");
  std::vector<const CaseTrajectory*> raw;
  for (const auto& c : train_cases) raw.push_back(&c);
  if (raw.empty()) invalid("training split is empty");
  const NormStats stats = compute_norm_stats(raw);
  std::vector<PreparedCase> tr, va, te;
  for (const auto& c : train_cases) tr.push_back(prepare_case(c, stats));
  for (const auto& c : val_cases) va.push_back(prepare_case(c, stats));
  for (const auto& c : test_cases) te.push_back(prepare_case(c, stats));
  const auto ptr = pointers(tr), pva = pointers(va), pte = pointers(te);

  AblationSummary out;
  std::vector<double> sd, ss, pd, ps;
  for (auto seed : seeds) {
    AblationRun run;
    run.seed = seed;
    for (auto variant : {ModelVariant::Dual, ModelVariant::SingleGraph}) {
      TrainConfig cfg = config;
      cfg.seed = seed;
      cfg.model.variant = variant;
      const auto res = train_prepared(ptr, pva, stats, cfg);
      const auto m = evaluate_prepared(res.best, pte, stats, cfg.batch_size);
      (variant == ModelVariant::Dual ? run.dual : run.single) = m;
      if (log) {
        std::ostringstream os;
        os << "seed " << seed << " " << to_string(variant) << ": best epoch " << res.best_epoch << ", val "
           << res.best_val << ", stress RMSE " << m.s.rmse_phys << ", PEEQ RMSE " << m.peeq.rmse_phys;
        log(os.str());
      }
    }
    sd.push_back(run.dual.s.rmse_phys);
    ss.push_back(run.single.s.rmse_phys);
    pd.push_back(run.dual.peeq.rmse_phys);
    ps.push_back(run.single.peeq.rmse_phys);
    out.runs.push_back(run);
  }
  out.stress_dual = median(sd);
  out.stress_single = median(ss);
  out.peeq_dual = median(pd);
  out.peeq_single = median(ps);
  out.stress_reduction_percent = relative_reduction_percent(out.stress_dual, out.stress_single);
  out.peeq_reduction_percent = relative_reduction_percent(out.peeq_dual, out.peeq_single);
  return out;
}

std::string ablation_csv(const AblationSummary& s) {
  std::ostringstream os;
  os.precision(10);
  os << "Model,Stress RMSE (MPa),PEEQ RMSE\n";
  os << "Single-graph baseline," << s.stress_single << "," << s.peeq_single << "\n";
  os << "Dual-graph," << s.stress_dual << "," << s.peeq_dual << "\n";
  os << "Relative reduction (%)," << s.stress_reduction_percent << "," << s.peeq_reduction_percent << "\n";
  return os.str();
}

}  // namespace dgs
