#pragma once

// Cross-scale maps between element and node resolution.
//
//   element_to_node:  f_n(n) = mean over e in E(n) of f_e(e)
//   node_to_element:  f_e(e) = 1/8 * sum over n in V(e) of f_n(n)
//
// Both are convex averages, so they preserve constants and never leave the
// [min, max] range of their input. Composed (E->N->E) they act as a smoothing
// operator that attenuates isolated peaks.

#include <cstdint>
#include <string>
#include <vector>

#include "dgs/autodiff.hpp"
#include "dgs/mesh_graph.hpp"

namespace dgs {

Matrix element_to_node(const Matrix& f_e, const Incidence& inc);
Matrix node_to_element(const Matrix& f_n, const Incidence& inc);

/// E->N averaging operator as an N x E sparse matrix.
SparseMatrix element_to_node_operator(const Incidence& inc);
/// N->E averaging operator as an E x N sparse matrix (weights 1/8).
SparseMatrix node_to_element_operator(const Incidence& inc);

/// Differentiable mean of the eight corner-node rows of H_n for every element.
/// The adjoint hands each corner node 1/8 of its elements' output gradients,
/// accumulated in element order.
ad::Var aggregate_node_hidden(const ad::Var& h_nodes, const Incidence& inc);

struct AttenuationReport {
  double original_peak = 0.0;
  double projected_peak = 0.0;
  double reduction_percent = 0.0;
  std::size_t original_peak_index = 0;
  std::size_t projected_peak_index = 0;
  bool zero_peak = false;
  std::vector<double> abs_difference;  // |f - E->N->E(f)| per element
};

/// Applies E->N then N->E to a single-channel element field and compares the
/// global maxima.
AttenuationReport attenuation_report(const Eigen::VectorXd& f_e, const Incidence& inc);

}  // namespace dgs
