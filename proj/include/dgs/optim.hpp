#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "dgs/case_store.hpp"

namespace dgs {

/// Raised when a gradient or parameter update turns non-finite.
class DivergenceError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Named trainable tensors in a fixed order.
struct ParamSet {
  std::vector<std::string> names;
  std::vector<Matrix> values;

  std::size_t add(std::string name, Matrix value) {
    names.push_back(std::move(name));
    values.push_back(std::move(value));
    return values.size() - 1;
  }
  std::size_t size() const { return values.size(); }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& v : values) n += static_cast<std::size_t>(v.size());
    return n;
  }
};

double global_norm(const std::vector<Matrix>& grads);

/// Rescales all gradients by max_norm / g when their global L2 norm g exceeds
/// max_norm. Returns the pre-clipping norm.
double clip_global_norm(std::vector<Matrix>& grads, double max_norm = 0.5);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct OptimizerState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  std::uint64_t step = 0;
  double lr = 3e-3;

  // Plateau scheduler bookkeeping.
  double best_val = 0.0;
  bool has_best = false;
  int bad_epochs = 0;
  int reductions = 0;
};

OptimizerState make_optimizer_state(const ParamSet& params, double lr);

void adam_step(ParamSet& params, const std::vector<Matrix>& grads, OptimizerState& state,
               const AdamConfig& cfg = {});

struct PlateauConfig {
  int patience = 3;
  double factor = 0.5;
  double threshold = 1e-4;  // relative, mode "min"
  double min_lr = 0.0;
};

/// Returns true when the learning rate was reduced.
bool plateau_step(OptimizerState& state, double val_loss, const PlateauConfig& cfg = {});

}  // namespace dgs
