#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/SparseCore>

#include "dgs/case_store.hpp"

namespace dgs {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor, int>;

/// Corner pairs forming the 12 edges of a hexahedron (0-3 one face, 4-7 the
/// opposite face, i and i+4 connected).
inline constexpr std::array<std::array<int, 2>, 12> kHexEdges{{
    {0, 1}, {1, 2}, {2, 3}, {3, 0},
    {4, 5}, {5, 6}, {6, 7}, {7, 4},
    {0, 4}, {1, 5}, {2, 6}, {3, 7},
}};

inline constexpr std::array<std::array<int, 4>, 6> kHexFaces{{
    {0, 1, 2, 3}, {4, 5, 6, 7}, {0, 1, 5, 4},
    {1, 2, 6, 5}, {2, 3, 7, 6}, {3, 0, 4, 7},
}};

class MeshError : public CaseError {
public:
  using CaseError::CaseError;
};

/// Undirected graph in CSR form: both directions stored, rows sorted, no
/// self-loops or duplicates. The tag keeps node and element graphs apart.
template <typename Tag>
struct Graph {
  std::size_t size = 0;
  std::vector<std::uint32_t> offsets{0};
  std::vector<std::uint32_t> adjacency;

  std::size_t degree(std::size_t i) const { return offsets[i + 1] - offsets[i]; }
  std::span<const std::uint32_t> neighbors(std::size_t i) const {
    return {adjacency.data() + offsets[i], degree(i)};
  }
  std::size_t directed_edge_count() const { return adjacency.size(); }
  std::size_t undirected_edge_count() const { return adjacency.size() / 2; }
  std::vector<std::uint32_t> degrees() const {
    std::vector<std::uint32_t> d(size);
    for (std::size_t i = 0; i < size; ++i) d[i] = static_cast<std::uint32_t>(degree(i));
    return d;
  }
  /// Undirected edges as (i, j) with i < j, lexicographically sorted.
  std::vector<std::pair<std::uint32_t, std::uint32_t>> edge_list() const {
    std::vector<std::pair<std::uint32_t, std::uint32_t>> out;
    for (std::size_t i = 0; i < size; ++i) {
      for (auto j : neighbors(i)) {
        if (i < j) out.emplace_back(static_cast<std::uint32_t>(i), j);
      }
    }
    return out;
  }
  bool operator==(const Graph&) const = default;
};

struct NodeTag {};
struct ElementTag {};
using NodeGraph = Graph<NodeTag>;
using ElementGraph = Graph<ElementTag>;

/// Builds a symmetric CSR graph from an unordered list of undirected pairs.
template <typename Tag>
Graph<Tag> graph_from_pairs(std::size_t size, std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs);

struct Incidence {
  std::vector<Hex> elem_nodes;              // V(e)
  std::vector<std::uint32_t> node_offsets;  // E(n) in CSR form, size N + 1
  std::vector<std::uint32_t> node_elems;

  std::size_t n_nodes() const { return node_offsets.size() - 1; }
  std::size_t n_elems() const { return elem_nodes.size(); }
  std::span<const std::uint32_t> elems_of(std::size_t n) const {
    return {node_elems.data() + node_offsets[n], node_offsets[n + 1] - node_offsets[n]};
  }
};

enum class LambdaMaxMode { Fixed, PowerIteration };

struct ScaledLaplacian {
  SparseMatrix matrix;
  double lambda_max = 2.0;
};

struct DualGraph {
  NodeGraph nodes;
  ElementGraph elements;
  Incidence incidence;
  ScaledLaplacian node_laplacian;
  ScaledLaplacian element_laplacian;
};

struct BatchedGraph {
  DualGraph merged;
  std::vector<std::size_t> node_offsets;  // size C + 1
  std::vector<std::size_t> elem_offsets;  // size C + 1

  std::size_t case_count() const { return node_offsets.size() - 1; }
  std::size_t case_nodes(std::size_t c) const { return node_offsets[c + 1] - node_offsets[c]; }
  std::size_t case_elems(std::size_t c) const { return elem_offsets[c + 1] - elem_offsets[c]; }
};

/// Rejects repeated corners and out-of-range indices.
void validate_connectivity(std::span<const Hex> connectivity, std::size_t n_nodes);

NodeGraph build_node_graph(std::span<const Hex> connectivity, std::size_t n_nodes);
ElementGraph build_element_graph(std::span<const Hex> connectivity, std::size_t n_nodes);
Incidence build_incidence(std::span<const Hex> connectivity, std::size_t n_nodes);

/// L~ = 2 L / lambda_max - I with L = I - D^-1/2 A D^-1/2 (isolated rows: L = I).
template <typename Tag>
ScaledLaplacian scaled_laplacian(const Graph<Tag>& g, LambdaMaxMode mode = LambdaMaxMode::Fixed);

/// Unscaled normalized Laplacian, used by tests and the power iteration.
template <typename Tag>
SparseMatrix normalized_laplacian(const Graph<Tag>& g);

double estimate_lambda_max(const SparseMatrix& laplacian, int iterations = 500);

DualGraph build_dual_graph(std::span<const Hex> connectivity, std::size_t n_nodes,
                           LambdaMaxMode mode = LambdaMaxMode::Fixed);

BatchedGraph merge_batch(std::span<const DualGraph* const> cases);
DualGraph extract_case(const BatchedGraph& batch, std::size_t c);

/// Sparse operator R = I - D^-1 A; row i of R*U is u_i minus the mean of its
/// node-graph neighbours. Throws for isolated nodes.
SparseMatrix neighbor_residual_operator(const NodeGraph& g);

struct StructuredMesh {
  Matrix coords;
  std::vector<Hex> connectivity;
  std::array<std::size_t, 3> cells{};  // along x, y, z
};

/// Axis-aligned structured hex grid with node index i + (nx+1)(j + (ny+1)k).
StructuredMesh structured_hex_grid(std::size_t nx, std::size_t ny, std::size_t nz, double dx = 1.0,
                                   double dy = 1.0, double dz = 1.0);

}  // namespace dgs
