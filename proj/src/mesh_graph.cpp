#include "dgs/mesh_graph.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

namespace dgs {

template <typename Tag>
Graph<Tag> graph_from_pairs(std::size_t size, std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs) {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> directed;
  directed.reserve(pairs.size() * 2);
  for (auto [a, b] : pairs) {
    if (a == b) continue;
    directed.emplace_back(a, b);
    directed.emplace_back(b, a);
  }
  std::sort(directed.begin(), directed.end());
  directed.erase(std::unique(directed.begin(), directed.end()), directed.end());

  Graph<Tag> g;
  g.size = size;
  g.offsets.assign(size + 1, 0);
  g.adjacency.reserve(directed.size());
  for (auto [a, b] : directed) {
    ++g.offsets[a + 1];
    g.adjacency.push_back(b);
  }
  for (std::size_t i = 0; i < size; ++i) g.offsets[i + 1] += g.offsets[i];
  return g;
}

template NodeGraph graph_from_pairs<NodeTag>(std::size_t, std::vector<std::pair<std::uint32_t, std::uint32_t>>);
template ElementGraph graph_from_pairs<ElementTag>(std::size_t, std::vector<std::pair<std::uint32_t, std::uint32_t>>);

void validate_connectivity(std::span<const Hex> connectivity, std::size_t n_nodes) {
  for (std::size_t e = 0; e < connectivity.size(); ++e) {
    auto h = connectivity[e];
    for (auto idx : h) {
      if (idx >= n_nodes) {
        throw MeshError(CaseError::Kind::IndexOutOfRange,
                        "element " + std::to_string(e) + " references node " + std::to_string(idx));
      }
    }
    std::sort(h.begin(), h.end());
    if (std::adjacent_find(h.begin(), h.end()) != h.end()) {
      throw MeshError(CaseError::Kind::InvalidInput, "element " + std::to_string(e) + " repeats a corner node");
    }
  }
}

NodeGraph build_node_graph(std::span<const Hex> connectivity, std::size_t n_nodes) {
  validate_connectivity(connectivity, n_nodes);
  std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
  pairs.reserve(connectivity.size() * 12);
  for (const auto& h : connectivity) {
    for (const auto& [a, b] : kHexEdges) pairs.emplace_back(h[a], h[b]);
  }
  return graph_from_pairs<NodeTag>(n_nodes, std::move(pairs));
}

ElementGraph build_element_graph(std::span<const Hex> connectivity, std::size_t n_nodes) {
  validate_connectivity(connectivity, n_nodes);
  struct FaceRef {
    std::array<std::uint32_t, 4> key;
    std::uint32_t elem;
  };
  std::vector<FaceRef> faces;
  faces.reserve(connectivity.size() * 6);
  for (std::size_t e = 0; e < connectivity.size(); ++e) {
    for (const auto& f : kHexFaces) {
      std::array<std::uint32_t, 4> key{connectivity[e][f[0]], connectivity[e][f[1]], connectivity[e][f[2]],
                                       connectivity[e][f[3]]};
      std::sort(key.begin(), key.end());
      faces.push_back({key, static_cast<std::uint32_t>(e)});
    }
  }
  std::sort(faces.begin(), faces.end(), [](const FaceRef& a, const FaceRef& b) {
    return a.key != b.key ? a.key < b.key : a.elem < b.elem;
  });

  std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
  for (std::size_t i = 0; i < faces.size();) {
    std::size_t j = i + 1;
    while (j < faces.size() && faces[j].key == faces[i].key) ++j;
    if (j - i > 2) {
      throw MeshError(CaseError::Kind::InvalidInput,
                      "non-manifold mesh: " + std::to_string(j - i) + " elements share face at node " +
                          std::to_string(faces[i].key[0]));
    }
    if (j - i == 2) {
      if (faces[i].elem == faces[i + 1].elem) {
        throw MeshError(CaseError::Kind::InvalidInput, "element " + std::to_string(faces[i].elem) + " has a repeated face");
      }
      pairs.emplace_back(faces[i].elem, faces[i + 1].elem);
    }
    i = j;
  }
  return graph_from_pairs<ElementTag>(connectivity.size(), std::move(pairs));
}

Incidence build_incidence(std::span<const Hex> connectivity, std::size_t n_nodes) {
  validate_connectivity(connectivity, n_nodes);
  Incidence inc;
  inc.elem_nodes.assign(connectivity.begin(), connectivity.end());
  inc.node_offsets.assign(n_nodes + 1, 0);
  for (const auto& h : connectivity) {
    for (auto n : h) ++inc.node_offsets[n + 1];
  }
  for (std::size_t i = 0; i < n_nodes; ++i) inc.node_offsets[i + 1] += inc.node_offsets[i];
  inc.node_elems.resize(inc.node_offsets.back());
  std::vector<std::uint32_t> cursor(inc.node_offsets.begin(), inc.node_offsets.end() - 1);
  // Elements are visited in increasing order, so every E(n) list is sorted.
  for (std::size_t e = 0; e < connectivity.size(); ++e) {
    for (auto n : connectivity[e]) inc.node_elems[cursor[n]++] = static_cast<std::uint32_t>(e);
  }
  return inc;
}

template <typename Tag>
SparseMatrix normalized_laplacian(const Graph<Tag>& g) {
  const auto n = static_cast<int>(g.size);
  std::vector<Eigen::Triplet<double, int>> trip;
  trip.reserve(g.size + g.adjacency.size());
  std::vector<double> inv_sqrt(g.size, 0.0);
  for (std::size_t i = 0; i < g.size; ++i) {
    if (g.degree(i) > 0) inv_sqrt[i] = 1.0 / std::sqrt(static_cast<double>(g.degree(i)));
  }
  for (std::size_t i = 0; i < g.size; ++i) {
    trip.emplace_back(static_cast<int>(i), static_cast<int>(i), 1.0);
    for (auto j : g.neighbors(i)) {
      trip.emplace_back(static_cast<int>(i), static_cast<int>(j), -inv_sqrt[i] * inv_sqrt[j]);
    }
  }
  SparseMatrix L(n, n);
  L.setFromTriplets(trip.begin(), trip.end());
  return L;
}

template SparseMatrix normalized_laplacian(const NodeGraph&);
template SparseMatrix normalized_laplacian(const ElementGraph&);

double estimate_lambda_max(const SparseMatrix& laplacian, int iterations) {
  const auto n = laplacian.rows();
  if (n == 0) return 2.0;
  std::mt19937_64 rng(0x5eed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = dist(rng);
  v.normalize();
  double lambda = 0.0;
  for (int it = 0; it < iterations; ++it) {
    Eigen::VectorXd w = laplacian * v;
    const double next = v.dot(w);
    const double norm = w.norm();
    if (norm == 0.0) return 2.0;
    v = w / norm;
    if (std::abs(next - lambda) < 1e-12 * std::max(1.0, std::abs(next))) {
      lambda = next;
      break;
    }
    lambda = next;
  }
  return lambda > 0.0 ? lambda : 2.0;
}

template <typename Tag>
ScaledLaplacian scaled_laplacian(const Graph<Tag>& g, LambdaMaxMode mode) {
  SparseMatrix L = normalized_laplacian(g);
  ScaledLaplacian out;
  out.lambda_max = mode == LambdaMaxMode::Fixed ? 2.0 : estimate_lambda_max(L);
  const double scale = 2.0 / out.lambda_max;
  // Diagonal entries are stored for every row (possibly as explicit zeros).
  for (int r = 0; r < L.outerSize(); ++r) {
    for (SparseMatrix::InnerIterator it(L, r); it; ++it) {
      it.valueRef() *= scale;
      if (it.col() == r) it.valueRef() -= 1.0;
    }
  }
  out.matrix = std::move(L);
  return out;
}

template ScaledLaplacian scaled_laplacian(const NodeGraph&, LambdaMaxMode);
template ScaledLaplacian scaled_laplacian(const ElementGraph&, LambdaMaxMode);

DualGraph build_dual_graph(std::span<const Hex> connectivity, std::size_t n_nodes, LambdaMaxMode mode) {
  DualGraph g;
  g.nodes = build_node_graph(connectivity, n_nodes);
  g.elements = build_element_graph(connectivity, n_nodes);
  g.incidence = build_incidence(connectivity, n_nodes);
  g.node_laplacian = scaled_laplacian(g.nodes, mode);
  g.element_laplacian = scaled_laplacian(g.elements, mode);
  return g;
}

namespace {

template <typename Tag>
Graph<Tag> concat_graphs(std::span<const Graph<Tag>* const> parts) {
  Graph<Tag> out;
  out.offsets.assign(1, 0);
  std::uint32_t base = 0;
  for (const auto* g : parts) {
    const auto edge_base = static_cast<std::uint32_t>(out.adjacency.size());
    for (std::size_t i = 0; i < g->size; ++i) out.offsets.push_back(edge_base + g->offsets[i + 1]);
    for (auto j : g->adjacency) out.adjacency.push_back(j + base);
    base += static_cast<std::uint32_t>(g->size);
    out.size += g->size;
  }
  return out;
}

template <typename Tag>
Graph<Tag> slice_graph(const Graph<Tag>& g, std::size_t begin, std::size_t end) {
  Graph<Tag> out;
  out.size = end - begin;
  out.offsets.assign(1, 0);
  const auto edge_base = g.offsets[begin];
  for (std::size_t i = begin; i < end; ++i) out.offsets.push_back(g.offsets[i + 1] - edge_base);
  for (auto k = g.offsets[begin]; k < g.offsets[end]; ++k) {
    out.adjacency.push_back(g.adjacency[k] - static_cast<std::uint32_t>(begin));
  }
  return out;
}

ScaledLaplacian block_diagonal(std::span<const ScaledLaplacian* const> parts) {
  Eigen::Index rows = 0;
  std::size_t nnz = 0;
  for (const auto* p : parts) {
    rows += p->matrix.rows();
    nnz += static_cast<std::size_t>(p->matrix.nonZeros());
  }
  std::vector<Eigen::Triplet<double, int>> trip;
  trip.reserve(nnz);
  int base = 0;
  double lmax = 0.0;
  for (const auto* p : parts) {
    for (int r = 0; r < p->matrix.outerSize(); ++r) {
      for (SparseMatrix::InnerIterator it(p->matrix, r); it; ++it) {
        trip.emplace_back(base + r, base + static_cast<int>(it.col()), it.value());
      }
    }
    base += static_cast<int>(p->matrix.rows());
    lmax = std::max(lmax, p->lambda_max);
  }
  ScaledLaplacian out;
  out.matrix.resize(rows, rows);
  out.matrix.setFromTriplets(trip.begin(), trip.end());
  out.lambda_max = lmax;
  return out;
}

ScaledLaplacian slice_block(const ScaledLaplacian& m, std::size_t begin, std::size_t end) {
  ScaledLaplacian out;
  out.matrix = m.matrix.block(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(begin),
                              static_cast<Eigen::Index>(end - begin), static_cast<Eigen::Index>(end - begin));
  out.lambda_max = m.lambda_max;
  return out;
}

}  // namespace

BatchedGraph merge_batch(std::span<const DualGraph* const> cases) {
  if (cases.empty()) throw MeshError(CaseError::Kind::InvalidInput, "merge_batch needs at least one case");
  BatchedGraph b;
  b.node_offsets.push_back(0);
  b.elem_offsets.push_back(0);
  std::vector<const NodeGraph*> ng;
  std::vector<const ElementGraph*> eg;
  std::vector<const ScaledLaplacian*> nl, el;
  auto& inc = b.merged.incidence;
  inc.node_offsets.assign(1, 0);
  for (const auto* c : cases) {
    const auto node_base = static_cast<std::uint32_t>(b.node_offsets.back());
    const auto elem_base = static_cast<std::uint32_t>(b.elem_offsets.back());
    for (auto h : c->incidence.elem_nodes) {
      for (auto& n : h) n += node_base;
      inc.elem_nodes.push_back(h);
    }
    const auto list_base = static_cast<std::uint32_t>(inc.node_elems.size());
    for (std::size_t n = 0; n < c->incidence.n_nodes(); ++n) {
      inc.node_offsets.push_back(list_base + c->incidence.node_offsets[n + 1]);
    }
    for (auto e : c->incidence.node_elems) inc.node_elems.push_back(e + elem_base);

    b.node_offsets.push_back(b.node_offsets.back() + c->nodes.size);
    b.elem_offsets.push_back(b.elem_offsets.back() + c->elements.size);
    ng.push_back(&c->nodes);
    eg.push_back(&c->elements);
    nl.push_back(&c->node_laplacian);
    el.push_back(&c->element_laplacian);
  }
  b.merged.nodes = concat_graphs<NodeTag>(ng);
  b.merged.elements = concat_graphs<ElementTag>(eg);
  b.merged.node_laplacian = block_diagonal(nl);
  b.merged.element_laplacian = block_diagonal(el);
  return b;
}

DualGraph extract_case(const BatchedGraph& b, std::size_t c) {
  const auto n0 = b.node_offsets[c], n1 = b.node_offsets[c + 1];
  const auto e0 = b.elem_offsets[c], e1 = b.elem_offsets[c + 1];
  DualGraph g;
  g.nodes = slice_graph(b.merged.nodes, n0, n1);
  g.elements = slice_graph(b.merged.elements, e0, e1);
  g.node_laplacian = slice_block(b.merged.node_laplacian, n0, n1);
  g.element_laplacian = slice_block(b.merged.element_laplacian, e0, e1);
  const auto& src = b.merged.incidence;
  for (auto e = e0; e < e1; ++e) {
    auto h = src.elem_nodes[e];
    for (auto& n : h) n -= static_cast<std::uint32_t>(n0);
    g.incidence.elem_nodes.push_back(h);
  }
  g.incidence.node_offsets.assign(1, 0);
  const auto list_base = src.node_offsets[n0];
  for (auto n = n0; n < n1; ++n) g.incidence.node_offsets.push_back(src.node_offsets[n + 1] - list_base);
  for (auto k = src.node_offsets[n0]; k < src.node_offsets[n1]; ++k) {
    g.incidence.node_elems.push_back(src.node_elems[k] - static_cast<std::uint32_t>(e0));
  }
  return g;
}

SparseMatrix neighbor_residual_operator(const NodeGraph& g) {
  std::vector<Eigen::Triplet<double, int>> trip;
  trip.reserve(g.size + g.adjacency.size());
  for (std::size_t i = 0; i < g.size; ++i) {
    const auto d = g.degree(i);
    if (d == 0) throw MeshError(CaseError::Kind::InvalidInput, "node " + std::to_string(i) + " is isolated in the node graph");
    trip.emplace_back(static_cast<int>(i), static_cast<int>(i), 1.0);
    const double w = 1.0 / static_cast<double>(d);
    for (auto j : g.neighbors(i)) trip.emplace_back(static_cast<int>(i), static_cast<int>(j), -w);
  }
  SparseMatrix R(static_cast<int>(g.size), static_cast<int>(g.size));
  R.setFromTriplets(trip.begin(), trip.end());
  return R;
}

StructuredMesh structured_hex_grid(std::size_t nx, std::size_t ny, std::size_t nz, double dx, double dy, double dz) {
  if (nx == 0 || ny == 0 || nz == 0) throw MeshError(CaseError::Kind::InvalidInput, "grid needs at least one cell per axis");
  StructuredMesh m;
  m.cells = {nx, ny, nz};
  const std::size_t px = nx + 1, py = ny + 1, pz = nz + 1;
  m.coords.resize(static_cast<Eigen::Index>(px * py * pz), 3);
  auto id = [&](std::size_t i, std::size_t j, std::size_t k) { return static_cast<std::uint32_t>(i + px * (j + py * k)); };
  for (std::size_t k = 0; k < pz; ++k) {
    for (std::size_t j = 0; j < py; ++j) {
      for (std::size_t i = 0; i < px; ++i) {
        const auto r = static_cast<Eigen::Index>(id(i, j, k));
        m.coords(r, 0) = static_cast<double>(i) * dx;
        m.coords(r, 1) = static_cast<double>(j) * dy;
        m.coords(r, 2) = static_cast<double>(k) * dz;
      }
    }
  }
  m.connectivity.reserve(nx * ny * nz);
  for (std::size_t k = 0; k < nz; ++k) {
    for (std::size_t j = 0; j < ny; ++j) {
      for (std::size_t i = 0; i < nx; ++i) {
        m.connectivity.push_back({id(i, j, k), id(i + 1, j, k), id(i + 1, j + 1, k), id(i, j + 1, k),
                                  id(i, j, k + 1), id(i + 1, j, k + 1), id(i + 1, j + 1, k + 1), id(i, j + 1, k + 1)});
      }
    }
  }
  return m;
}

}  // namespace dgs
