#pragma once

// Reverse-mode automatic differentiation over dense row-major matrices.
//
// A Tape records operations while `recording()` is true. Each operation
// produces a node holding its value and, when any input needs a gradient, an
// adjoint rule that pushes the node's gradient into its inputs. backward()
// walks the recorded nodes once, in reverse order of creation.
//
// With recording disabled, nodes are not retained by the tape and are freed
// as soon as the last Var referencing them goes away, which keeps inference
// memory bounded by the live working set.

#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dgs/case_store.hpp"
#include "dgs/mesh_graph.hpp"

namespace dgs::ad {

class ShapeError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

class Tape;

struct Node {
  Matrix value;
  Matrix grad;  // empty until something flows into it
  bool requires_grad = false;
  std::function<void(Node&)> backward;
  std::vector<std::shared_ptr<Node>> inputs;  // keeps operands alive for the adjoint

  /// Gradient buffer, zero-initialized on first access.
  Matrix& grad_buffer() {
    if (grad.size() == 0) grad = Matrix::Zero(value.rows(), value.cols());
    return grad;
  }
};

class Var {
public:
  Var() = default;
  Var(std::shared_ptr<Node> node, Tape* tape) : node_(std::move(node)), tape_(tape) {}

  const Matrix& value() const { return node_->value; }
  const Matrix& grad() const { return node_->grad; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  bool requires_grad() const { return node_->requires_grad; }
  double scalar() const { return node_->value(0, 0); }

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& shared() const { return node_; }
  Tape& tape() const { return *tape_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

private:
  std::shared_ptr<Node> node_;
  Tape* tape_ = nullptr;
};

class Tape {
public:
  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }

  /// Trainable leaf (gradient accumulated when recording).
  Var leaf(Matrix value);
  Var constant(Matrix value);

  /// Registers an operation. `inputs` are the operands; `rule` receives the
  /// output node and must accumulate into the inputs that require gradients.
  Var record(Matrix value, std::initializer_list<const Var*> inputs, std::function<void(Node&)> rule);
  Var record(Matrix value, std::span<const Var> inputs, std::function<void(Node&)> rule);

  /// Seeds d(loss)/d(loss) = 1 and runs every adjoint rule in reverse order.
  void backward(const Var& loss);

  void clear() { nodes_.clear(); }

private:
  Var make(Matrix value, bool requires_grad, std::function<void(Node&)> rule,
           std::vector<std::shared_ptr<Node>> inputs = {});

  bool recording_;
  std::vector<std::shared_ptr<Node>> nodes_;
};

// Primitives. Shapes are checked eagerly and mismatches throw ShapeError.
Var matmul(const Var& a, const Var& b);
/// S * X for a sparse S that must outlive the tape. The adjoint is S^T * G.
Var sparse_matmul(const SparseMatrix& s, const Var& x);
Var add(const Var& a, const Var& b);
/// Adds a 1 x C row vector to every row of `a`.
Var add_row(const Var& a, const Var& row);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);
Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var relu(const Var& a);
Var softplus(const Var& a);
Var concat_columns(std::span<const Var> parts);
/// out[i] = x[index[i]].
Var row_gather(const Var& x, std::span<const std::uint32_t> index);
/// out[s] = mean of x rows with segment[i] == s; empty segments yield zeros.
Var scatter_mean(const Var& x, std::span<const std::uint32_t> segment, std::size_t n_segments);
Var mean_all(const Var& a);
Var sum_all(const Var& a);
Var mse(const Var& pred, const Var& target);
/// Sum over rows i of w[i] * ||pred_i - target_i||^2.
Var weighted_sse(const Var& pred, const Var& target, std::span<const double> row_weights);

}  // namespace dgs::ad
