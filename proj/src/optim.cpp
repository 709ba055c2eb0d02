#include "dgs/optim.hpp"

#include <cmath>

namespace dgs {

double global_norm(const std::vector<Matrix>& grads) {
  long double sq = 0.0L;
  for (const auto& g : grads) {
    for (Eigen::Index i = 0; i < g.size(); ++i) {
      const double v = g.data()[i];
      sq += static_cast<long double>(v) * v;
    }
  }
  return std::sqrt(static_cast<double>(sq));
}

double clip_global_norm(std::vector<Matrix>& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (!std::isfinite(norm)) throw DivergenceError("non-finite gradient norm");
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& g : grads) g *= s;
  }
  return norm;
}

OptimizerState make_optimizer_state(const ParamSet& params, double lr) {
  OptimizerState st;
  st.lr = lr;
  for (const auto& p : params.values) {
    st.m.push_back(Matrix::Zero(p.rows(), p.cols()));
    st.v.push_back(Matrix::Zero(p.rows(), p.cols()));
  }
  return st;
}

void adam_step(ParamSet& params, const std::vector<Matrix>& grads, OptimizerState& st, const AdamConfig& cfg) {
  if (grads.size() != params.size() || st.m.size() != params.size()) {
    throw std::invalid_argument("adam_step: parameter/gradient/state count mismatch");
  }
  ++st.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& m = st.m[k];
    auto& v = st.v[k];
    const auto& g = grads[k];
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseAbs2();
    params.values[k].array() -= st.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg.eps);
    if (!params.values[k].allFinite()) {
      throw DivergenceError("non-finite parameter '" + params.names[k] + "' after Adam step " + std::to_string(st.step));
    }
  }
}

bool plateau_step(OptimizerState& st, double val_loss, const PlateauConfig& cfg) {
  if (!std::isfinite(val_loss)) throw DivergenceError("non-finite validation loss");
  if (!st.has_best || val_loss < st.best_val * (1.0 - cfg.threshold)) {
    st.best_val = val_loss;
    st.has_best = true;
    st.bad_epochs = 0;
    return false;
  }
  ++st.bad_epochs;
  if (st.bad_epochs > cfg.patience) {
    const double next = std::max(st.lr * cfg.factor, cfg.min_lr);
    const bool reduced = next < st.lr;
    st.lr = next;
    st.bad_epochs = 0;
    if (reduced) ++st.reductions;
    return reduced;
  }
  return false;
}

}  // namespace dgs
