#include "dgs/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dgs::ad {
namespace {

void require(bool ok, const char* what) {
  if (!ok) throw ShapeError(what);
}

// Message built only on failure.
template <typename F>
void require(bool ok, F&& what) {
  if (!ok) throw ShapeError(what());
}

std::string shape(const Var& v) { return std::to_string(v.rows()) + "x" + std::to_string(v.cols()); }

void same_shape(const Var& a, const Var& b, const char* op) {
  require(a.rows() == b.rows() && a.cols() == b.cols(),
          [&] { return std::string(op) + ": shape mismatch " + shape(a) + " vs " + shape(b); });
}

Matrix softplus_value(const Matrix& x) {
  // log(1 + e^x) without overflow.
  return x.unaryExpr([](double v) { return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); });
}

}  // namespace

Var Tape::make(Matrix value, bool requires_grad, std::function<void(Node&)> rule,
               std::vector<std::shared_ptr<Node>> inputs) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = requires_grad && recording_;
  if (node->requires_grad) {
    node->backward = std::move(rule);
    node->inputs = std::move(inputs);
    nodes_.push_back(node);
  }
  return Var(std::move(node), this);
}

Var Tape::leaf(Matrix value) { return make(std::move(value), true, nullptr); }

Var Tape::constant(Matrix value) { return make(std::move(value), false, nullptr); }

Var Tape::record(Matrix value, std::initializer_list<const Var*> inputs, std::function<void(Node&)> rule) {
  bool needs = false;
  std::vector<std::shared_ptr<Node>> keep;
  for (const auto* v : inputs) {
    needs = needs || v->requires_grad();
    keep.push_back(v->shared());
  }
  return make(std::move(value), needs, needs ? std::move(rule) : nullptr, needs ? std::move(keep) : decltype(keep){});
}

Var Tape::record(Matrix value, std::span<const Var> inputs, std::function<void(Node&)> rule) {
  bool needs = false;
  std::vector<std::shared_ptr<Node>> keep;
  for (const auto& v : inputs) {
    needs = needs || v.requires_grad();
    keep.push_back(v.shared());
  }
  return make(std::move(value), needs, needs ? std::move(rule) : nullptr, needs ? std::move(keep) : decltype(keep){});
}

void Tape::backward(const Var& loss) {
  if (loss.rows() != 1 || loss.cols() != 1) throw ShapeError("backward: loss must be 1x1, got " + shape(loss));
  if (!loss.requires_grad()) return;
  loss.node()->grad_buffer()(0, 0) += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node& n = **it;
    if (n.backward && n.grad.size() != 0) n.backward(n);
  }
}

// ---------------------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  require(a.cols() == b.rows(), [&] { return "matmul: inner dimension mismatch " + shape(a) + " * " + shape(b); });
  Matrix out(a.rows(), b.cols());
  out.noalias() = a.value() * b.value();
  Node* na = a.node();
  Node* nb = b.node();
  return a.tape().record(std::move(out), {&a, &b}, [na, nb](Node& self) {
    if (na->requires_grad) na->grad_buffer().noalias() += self.grad * nb->value.transpose();
    if (nb->requires_grad) nb->grad_buffer().noalias() += na->value.transpose() * self.grad;
  });
}

Var sparse_matmul(const SparseMatrix& s, const Var& x) {
  require(s.cols() == x.rows(), "sparse_matmul: dimension mismatch");
  Matrix out(s.rows(), x.cols());
  out.noalias() = s * x.value();
  Node* nx = x.node();
  const SparseMatrix* sp = &s;
  return x.tape().record(std::move(out), {&x}, [nx, sp](Node& self) {
    nx->grad_buffer().noalias() += sp->transpose() * self.grad;
  });
}

Var add(const Var& a, const Var& b) {
  same_shape(a, b, "add");
  Node* na = a.node();
  Node* nb = b.node();
  return a.tape().record(a.value() + b.value(), {&a, &b}, [na, nb](Node& self) {
    if (na->requires_grad) na->grad_buffer() += self.grad;
    if (nb->requires_grad) nb->grad_buffer() += self.grad;
  });
}

Var add_row(const Var& a, const Var& row) {
  require(row.rows() == 1 && row.cols() == a.cols(), [&] { return "add_row: expected 1x" + std::to_string(a.cols()) + " row, got " + shape(row); });
  Matrix out = a.value();
  out.rowwise() += row.value().row(0);
  Node* na = a.node();
  Node* nr = row.node();
  return a.tape().record(std::move(out), {&a, &row}, [na, nr](Node& self) {
    if (na->requires_grad) na->grad_buffer() += self.grad;
    if (nr->requires_grad) nr->grad_buffer() += self.grad.colwise().sum();
  });
}

Var sub(const Var& a, const Var& b) {
  same_shape(a, b, "sub");
  Node* na = a.node();
  Node* nb = b.node();
  return a.tape().record(a.value() - b.value(), {&a, &b}, [na, nb](Node& self) {
    if (na->requires_grad) na->grad_buffer() += self.grad;
    if (nb->requires_grad) nb->grad_buffer() -= self.grad;
  });
}

Var mul(const Var& a, const Var& b) {
  same_shape(a, b, "mul");
  Node* na = a.node();
  Node* nb = b.node();
  return a.tape().record(a.value().cwiseProduct(b.value()), {&a, &b}, [na, nb](Node& self) {
    if (na->requires_grad) na->grad_buffer() += self.grad.cwiseProduct(nb->value);
    if (nb->requires_grad) nb->grad_buffer() += self.grad.cwiseProduct(na->value);
  });
}

Var scale(const Var& a, double c) {
  Node* na = a.node();
  return a.tape().record(a.value() * c, {&a}, [na, c](Node& self) { na->grad_buffer() += self.grad * c; });
}

Var add_scalar(const Var& a, double c) {
  Node* na = a.node();
  return a.tape().record(a.value().array() + c, {&a}, [na](Node& self) { na->grad_buffer() += self.grad; });
}

Var sigmoid(const Var& a) {
  // 1 / (1 + e^-x) = (1 + tanh(x / 2)) / 2, stable for any x and vectorized.
  Matrix y = ((a.value().array() * 0.5).tanh() + 1.0) * 0.5;
  Node* na = a.node();
  return a.tape().record(std::move(y), {&a}, [na](Node& self) {
    na->grad_buffer().array() += self.grad.array() * self.value.array() * (1.0 - self.value.array());
  });
}

Var tanh(const Var& a) {
  Matrix y = a.value().array().tanh();
  Node* na = a.node();
  return a.tape().record(std::move(y), {&a}, [na](Node& self) {
    na->grad_buffer().array() += self.grad.array() * (1.0 - self.value.array().square());
  });
}

Var relu(const Var& a) {
  Matrix y = a.value().cwiseMax(0.0);
  Node* na = a.node();
  return a.tape().record(std::move(y), {&a}, [na](Node& self) {
    na->grad_buffer().array() += (na->value.array() > 0.0).select(self.grad.array(), 0.0);
  });
}

Var softplus(const Var& a) {
  Node* na = a.node();
  return a.tape().record(softplus_value(a.value()), {&a}, [na](Node& self) {
    // d/dx log(1+e^x) = sigmoid(x) = 1 - exp(-softplus(x))
    na->grad_buffer().array() += self.grad.array() * (1.0 - (-self.value.array()).exp());
  });
}

Var concat_columns(std::span<const Var> parts) {
  require(!parts.empty(), "concat_columns: no operands");
  const auto rows = parts[0].rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    require(p.rows() == rows, "concat_columns: row mismatch");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<Node*> nodes;
  std::vector<Eigen::Index> starts;
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    nodes.push_back(p.node());
    starts.push_back(c);
    c += p.cols();
  }
  return parts[0].tape().record(std::move(out), parts, [nodes, starts](Node& self) {
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      if (nodes[k]->requires_grad) {
        nodes[k]->grad_buffer() += self.grad.middleCols(starts[k], nodes[k]->value.cols());
      }
    }
  });
}

Var row_gather(const Var& x, std::span<const std::uint32_t> index) {
  Matrix out(static_cast<Eigen::Index>(index.size()), x.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    require(index[i] < static_cast<std::uint32_t>(x.rows()), "row_gather: index out of range");
    out.row(static_cast<Eigen::Index>(i)) = x.value().row(index[i]);
  }
  Node* nx = x.node();
  std::vector<std::uint32_t> idx(index.begin(), index.end());
  return x.tape().record(std::move(out), {&x}, [nx, idx = std::move(idx)](Node& self) {
    auto& g = nx->grad_buffer();
    for (std::size_t i = 0; i < idx.size(); ++i) g.row(idx[i]) += self.grad.row(static_cast<Eigen::Index>(i));
  });
}

Var scatter_mean(const Var& x, std::span<const std::uint32_t> segment, std::size_t n_segments) {
  require(segment.size() == static_cast<std::size_t>(x.rows()), "scatter_mean: one segment id per row required");
  std::vector<double> count(n_segments, 0.0);
  for (auto s : segment) {
    require(s < n_segments, "scatter_mean: segment id out of range");
    count[s] += 1.0;
  }
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(n_segments), x.cols());
  for (std::size_t i = 0; i < segment.size(); ++i) out.row(segment[i]) += x.value().row(static_cast<Eigen::Index>(i));
  for (std::size_t s = 0; s < n_segments; ++s) {
    if (count[s] > 0.0) out.row(static_cast<Eigen::Index>(s)) /= count[s];
  }
  Node* nx = x.node();
  std::vector<std::uint32_t> seg(segment.begin(), segment.end());
  return x.tape().record(std::move(out), {&x}, [nx, seg = std::move(seg), count = std::move(count)](Node& self) {
    auto& g = nx->grad_buffer();
    for (std::size_t i = 0; i < seg.size(); ++i) g.row(static_cast<Eigen::Index>(i)) += self.grad.row(seg[i]) / count[seg[i]];
  });
}

Var mean_all(const Var& a) {
  require(a.value().size() > 0, "mean_all: empty operand");
  const double n = static_cast<double>(a.value().size());
  Matrix out(1, 1);
  out(0, 0) = a.value().sum() / n;
  Node* na = a.node();
  return a.tape().record(std::move(out), {&a}, [na, n](Node& self) { na->grad_buffer().array() += self.grad(0, 0) / n; });
}

Var sum_all(const Var& a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  Node* na = a.node();
  return a.tape().record(std::move(out), {&a}, [na](Node& self) { na->grad_buffer().array() += self.grad(0, 0); });
}

Var mse(const Var& pred, const Var& target) {
  same_shape(pred, target, "mse");
  require(pred.value().size() > 0, "mse: empty operand");
  const double n = static_cast<double>(pred.value().size());
  Matrix out(1, 1);
  out(0, 0) = (pred.value() - target.value()).squaredNorm() / n;
  Node* np = pred.node();
  Node* nt = target.node();
  return pred.tape().record(std::move(out), {&pred, &target}, [np, nt, n](Node& self) {
    const double g = self.grad(0, 0) * 2.0 / n;
    if (np->requires_grad) np->grad_buffer() += g * (np->value - nt->value);
    if (nt->requires_grad) nt->grad_buffer() -= g * (np->value - nt->value);
  });
}

Var weighted_sse(const Var& pred, const Var& target, std::span<const double> row_weights) {
  same_shape(pred, target, "weighted_sse");
  require(row_weights.size() == static_cast<std::size_t>(pred.rows()), "weighted_sse: one weight per row required");
  Eigen::Map<const Eigen::VectorXd> w(row_weights.data(), static_cast<Eigen::Index>(row_weights.size()));
  Matrix out(1, 1);
  out(0, 0) = w.dot((pred.value() - target.value()).rowwise().squaredNorm());
  Node* np = pred.node();
  Node* nt = target.node();
  Eigen::VectorXd wv = w;
  return pred.tape().record(std::move(out), {&pred, &target}, [np, nt, wv = std::move(wv)](Node& self) {
    Matrix d = (np->value - nt->value);
    d.array().colwise() *= (2.0 * self.grad(0, 0) * wv).array();
    if (np->requires_grad) np->grad_buffer() += d;
    if (nt->requires_grad) nt->grad_buffer() -= d;
  });
}

}  // namespace dgs::ad
