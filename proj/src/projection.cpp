#include "dgs/projection.hpp"

#include <iterator>

namespace dgs {
namespace {

void check_rows(const Matrix& f, std::size_t rows, const char* what) {
  if (static_cast<std::size_t>(f.rows()) != rows) {
    throw ad::ShapeError(std::string(what) + ": field has " + std::to_string(f.rows()) + " rows, expected " +
                         std::to_string(rows));
  }
}

// Mean of the selected rows, computed as lo + mean(x - lo) with lo the column
// minimum. Constants come out bit-exact, and the clamp keeps rounding from
// pushing the result outside [min, max] of the inputs.
template <typename Rows>
void convex_mean(const Matrix& f, const Rows& rows, Eigen::Ref<Eigen::RowVectorXd> out) {
  const auto cols = f.cols();
  Eigen::RowVectorXd lo = f.row(rows[0]);
  Eigen::RowVectorXd hi = lo;
  for (auto r : rows) {
    lo = lo.cwiseMin(f.row(r));
    hi = hi.cwiseMax(f.row(r));
  }
  Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(cols);
  for (auto r : rows) acc += f.row(r) - lo;
  out = (lo + acc / static_cast<double>(std::size(rows))).cwiseMax(lo).cwiseMin(hi);
}

}  // namespace

Matrix element_to_node(const Matrix& f_e, const Incidence& inc) {
  check_rows(f_e, inc.n_elems(), "element_to_node");
  Matrix out(static_cast<Eigen::Index>(inc.n_nodes()), f_e.cols());
  for (std::size_t n = 0; n < inc.n_nodes(); ++n) {
    const auto elems = inc.elems_of(n);
    if (elems.empty()) {
      throw MeshError(CaseError::Kind::InvalidInput, "element_to_node: node " + std::to_string(n) + " has no incident element");
    }
    convex_mean(f_e, elems, out.row(static_cast<Eigen::Index>(n)));
  }
  return out;
}

Matrix node_to_element(const Matrix& f_n, const Incidence& inc) {
  check_rows(f_n, inc.n_nodes(), "node_to_element");
  Matrix out(static_cast<Eigen::Index>(inc.n_elems()), f_n.cols());
  for (std::size_t e = 0; e < inc.n_elems(); ++e) {
    convex_mean(f_n, inc.elem_nodes[e], out.row(static_cast<Eigen::Index>(e)));
  }
  return out;
}

SparseMatrix element_to_node_operator(const Incidence& inc) {
  std::vector<Eigen::Triplet<double, int>> trip;
  trip.reserve(inc.node_elems.size());
  for (std::size_t n = 0; n < inc.n_nodes(); ++n) {
    const auto elems = inc.elems_of(n);
    if (elems.empty()) {
      throw MeshError(CaseError::Kind::InvalidInput, "element_to_node: node " + std::to_string(n) + " has no incident element");
    }
    const double w = 1.0 / static_cast<double>(elems.size());
    for (auto e : elems) trip.emplace_back(static_cast<int>(n), static_cast<int>(e), w);
  }
  SparseMatrix m(static_cast<int>(inc.n_nodes()), static_cast<int>(inc.n_elems()));
  m.setFromTriplets(trip.begin(), trip.end());
  return m;
}

SparseMatrix node_to_element_operator(const Incidence& inc) {
  std::vector<Eigen::Triplet<double, int>> trip;
  trip.reserve(inc.n_elems() * 8);
  for (std::size_t e = 0; e < inc.n_elems(); ++e) {
    for (auto n : inc.elem_nodes[e]) trip.emplace_back(static_cast<int>(e), static_cast<int>(n), 0.125);
  }
  SparseMatrix m(static_cast<int>(inc.n_elems()), static_cast<int>(inc.n_nodes()));
  m.setFromTriplets(trip.begin(), trip.end());
  return m;
}

ad::Var aggregate_node_hidden(const ad::Var& h_nodes, const Incidence& inc) {
  check_rows(h_nodes.value(), inc.n_nodes(), "aggregate_node_hidden");
  Matrix out = node_to_element(h_nodes.value(), inc);
  ad::Node* nh = h_nodes.node();
  const Incidence* ip = &inc;
  return h_nodes.tape().record(std::move(out), {&h_nodes}, [nh, ip](ad::Node& self) {
    auto& g = nh->grad_buffer();
    for (std::size_t e = 0; e < ip->n_elems(); ++e) {
      const auto ge = self.grad.row(static_cast<Eigen::Index>(e)) * 0.125;
      for (auto n : ip->elem_nodes[e]) g.row(n) += ge;
    }
  });
}

AttenuationReport attenuation_report(const Eigen::VectorXd& f_e, const Incidence& inc) {
  Matrix field = f_e;
  const Matrix projected = node_to_element(element_to_node(field, inc), inc);

  AttenuationReport r;
  Eigen::Index imax = 0, jmax = 0;
  r.original_peak = field.col(0).maxCoeff(&imax);
  r.projected_peak = projected.col(0).maxCoeff(&jmax);
  r.original_peak_index = static_cast<std::size_t>(imax);
  r.projected_peak_index = static_cast<std::size_t>(jmax);
  r.abs_difference.resize(static_cast<std::size_t>(field.rows()));
  for (Eigen::Index i = 0; i < field.rows(); ++i) {
    r.abs_difference[static_cast<std::size_t>(i)] = std::abs(field(i, 0) - projected(i, 0));
  }
  if (r.original_peak > 0.0) {
    r.reduction_percent = (1.0 - r.projected_peak / r.original_peak) * 100.0;
  } else {
    r.reduction_percent = 0.0;
    r.zero_peak = true;
  }
  return r;
}

}  // namespace dgs
