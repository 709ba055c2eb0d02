#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include <Eigen/Eigenvalues>

#include "dgs/mesh_graph.hpp"
#include "../common/oracles.hpp"
#include "helpers.hpp"

using namespace dgs;

namespace {

Eigen::MatrixXd dense(const SparseMatrix& s) { return Eigen::MatrixXd(s); }

oracle::EdgeSet as_set(const std::vector<std::pair<std::uint32_t, std::uint32_t>>& v) { return {v.begin(), v.end()}; }

template <typename Tag>
Graph<Tag> random_graph(std::mt19937_64& rng, std::size_t n, double density) {
  std::bernoulli_distribution keep(density);
  std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
  for (std::uint32_t i = 0; i < n; ++i) {
    for (std::uint32_t j = i + 1; j < n; ++j) {
      if (keep(rng)) pairs.emplace_back(j, i);  // reversed on purpose
    }
  }
  return graph_from_pairs<Tag>(n, pairs);
}

}  // namespace

TEST_SUITE("mesh_graph") {
  TEST_CASE("single hex node graph has 12 edges and degree 3 everywhere") {
    const auto m = structured_hex_grid(1, 1, 1);
    const auto g = build_node_graph(m.connectivity, 8);
    CHECK(g.undirected_edge_count() == 12);
    CHECK(g.directed_edge_count() == 24);
    for (auto d : g.degrees()) CHECK(d == 3);
  }

  TEST_CASE("2x1x1 grid node graph has 20 edges") {
    const auto m = structured_hex_grid(2, 1, 1);
    const auto g = build_node_graph(m.connectivity, 12);
    CHECK(g.undirected_edge_count() == 20);
    CHECK(as_set(g.edge_list()) == oracle::node_edges(m.coords, m.connectivity));
  }

  TEST_CASE("3x3x3 grid interior nodes have degree 6") {
    const auto m = structured_hex_grid(3, 3, 3);
    const auto g = build_node_graph(m.connectivity, 64);
    for (std::size_t k = 1; k <= 2; ++k)
      for (std::size_t j = 1; j <= 2; ++j)
        for (std::size_t i = 1; i <= 2; ++i) CHECK(g.degree(i + 4 * (j + 4 * k)) == 6);
  }

  TEST_CASE("element graph examples") {
    const auto one = structured_hex_grid(1, 1, 1);
    CHECK(build_element_graph(one.connectivity, 8).undirected_edge_count() == 0);
    const auto two = structured_hex_grid(2, 1, 1);
    const auto g2 = build_element_graph(two.connectivity, 12);
    CHECK(g2.undirected_edge_count() == 1);
    CHECK(g2.edge_list() == std::vector<std::pair<std::uint32_t, std::uint32_t>>{{0, 1}});
    const auto cube = structured_hex_grid(2, 2, 2);
    CHECK(build_element_graph(cube.connectivity, 27).undirected_edge_count() == 12);
  }

  TEST_CASE("graphs match brute-force oracles and lattice counts on small grids") {
    for (std::size_t w = 1; w <= 3; ++w) {
      for (std::size_t h = 1; h <= 3; ++h) {
        for (std::size_t l = 1; l <= 3; ++l) {
          CAPTURE(w);
          CAPTURE(h);
          CAPTURE(l);
          const auto m = structured_hex_grid(w, h, l);
          const auto n = static_cast<std::size_t>(m.coords.rows());
          const auto ng = build_node_graph(m.connectivity, n);
          const auto eg = build_element_graph(m.connectivity, n);
          CHECK(as_set(ng.edge_list()) == oracle::node_edges(m.coords, m.connectivity));
          CHECK(as_set(eg.edge_list()) == oracle::element_edges(m.connectivity));
          CHECK(ng.undirected_edge_count() == oracle::lattice_node_edges(w, h, l));
          CHECK(eg.undirected_edge_count() == oracle::lattice_element_edges(w, h, l));
          for (auto d : ng.degrees()) CHECK(d <= 6);
          for (auto d : eg.degrees()) CHECK(d <= 6);
        }
      }
    }
  }

  TEST_CASE("CSR storage is symmetric, sorted and free of self-loops") {
    const auto m = structured_hex_grid(3, 2, 2);
    const auto g = build_node_graph(m.connectivity, static_cast<std::size_t>(m.coords.rows()));
    for (std::size_t i = 0; i < g.size; ++i) {
      const auto nb = g.neighbors(i);
      CHECK(std::is_sorted(nb.begin(), nb.end()));
      CHECK(std::adjacent_find(nb.begin(), nb.end()) == nb.end());
      for (auto j : nb) {
        CHECK(j != i);
        const auto back = g.neighbors(j);
        CHECK(std::binary_search(back.begin(), back.end(), static_cast<std::uint32_t>(i)));
      }
    }
    const auto from_dups = graph_from_pairs<NodeTag>(3, {{0, 1}, {1, 0}, {0, 1}, {2, 1}});
    CHECK(from_dups.undirected_edge_count() == 2);
  }

  TEST_CASE("every node edge is one of the 12 corner pairs of some element") {
    const auto m = structured_hex_grid(2, 3, 1);
    const auto g = build_node_graph(m.connectivity, static_cast<std::size_t>(m.coords.rows()));
    oracle::EdgeSet table;
    for (const auto& h : m.connectivity) {
      for (const auto& e : kHexEdges) table.emplace(std::min(h[e[0]], h[e[1]]), std::max(h[e[0]], h[e[1]]));
    }
    CHECK(as_set(g.edge_list()) == table);
  }

  TEST_CASE("connectivity errors") {
    std::vector<Hex> repeated{{0, 1, 2, 3, 4, 5, 6, 6}};
    CHECK_THROWS_AS(build_node_graph(repeated, 8), MeshError);
    std::vector<Hex> out_of_range{{0, 1, 2, 3, 4, 5, 6, 8}};
    CHECK_THROWS_AS(build_node_graph(out_of_range, 8), MeshError);
    CHECK_THROWS_AS(build_incidence(out_of_range, 8), MeshError);

    std::vector<Hex> fan{{0, 1, 2, 3, 4, 5, 6, 7}, {0, 1, 2, 3, 8, 9, 10, 11}, {0, 1, 2, 3, 12, 13, 14, 15}};
    CHECK_THROWS_AS(build_element_graph(fan, 16), MeshError);
    fan.pop_back();
    CHECK(build_element_graph(fan, 16).undirected_edge_count() == 1);
  }

  TEST_CASE("incidence examples") {
    const auto one = structured_hex_grid(1, 1, 1);
    const auto i1 = build_incidence(one.connectivity, 8);
    for (std::size_t n = 0; n < 8; ++n) CHECK(i1.elems_of(n).size() == 1);

    const auto two = structured_hex_grid(2, 1, 1);
    const auto i2 = build_incidence(two.connectivity, 12);
    int shared = 0, single = 0;
    for (std::size_t n = 0; n < 12; ++n) {
      const auto k = i2.elems_of(n).size();
      shared += k == 2;
      single += k == 1;
      // Shared-face nodes sit at x = 1.
      CHECK((k == 2) == (two.coords(static_cast<Eigen::Index>(n), 0) == 1.0));
    }
    CHECK(shared == 4);
    CHECK(single == 8);

    const auto m = structured_hex_grid(3, 2, 4);
    const auto n_nodes = static_cast<std::size_t>(m.coords.rows());
    const auto inc = build_incidence(m.connectivity, n_nodes);
    CHECK(inc.node_elems.size() == 8 * m.connectivity.size());
    for (std::size_t e = 0; e < inc.n_elems(); ++e) {
      CHECK(inc.elem_nodes[e] == m.connectivity[e]);
      for (auto n : inc.elem_nodes[e]) {
        const auto es = inc.elems_of(n);
        CHECK(std::find(es.begin(), es.end(), e) != es.end());
      }
    }
    for (std::size_t n = 0; n < n_nodes; ++n) {
      for (auto e : inc.elems_of(n)) {
        const auto& h = inc.elem_nodes[e];
        CHECK(std::find(h.begin(), h.end(), n) != h.end());
      }
    }
  }

  TEST_CASE("scaled Laplacian of a single edge") {
    const auto g = graph_from_pairs<NodeTag>(2, {{0, 1}});
    const auto L = scaled_laplacian(g);
    CHECK(L.lambda_max == 2.0);
    Eigen::Matrix2d want;
    want << 0.0, -1.0, -1.0, 0.0;
    CHECK((dense(L.matrix) - want).cwiseAbs().maxCoeff() < 1e-15);
  }

  TEST_CASE("scaled Laplacian of an edgeless graph is zero") {
    const auto g = graph_from_pairs<ElementTag>(4, {});
    CHECK(dense(scaled_laplacian(g).matrix).cwiseAbs().maxCoeff() == 0.0);
    CHECK((dense(normalized_laplacian(g)) - Eigen::MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff() == 0.0);
  }

  TEST_CASE("random graphs: symmetry, spectrum, null vector and pattern") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 25; ++trial) {
      const auto g = random_graph<NodeTag>(rng, 3 + static_cast<std::size_t>(trial % 9), 0.4);
      const auto L = dense(normalized_laplacian(g));
      const auto S = scaled_laplacian(g);
      const auto Ls = dense(S.matrix);
      CHECK((Ls - Ls.transpose()).cwiseAbs().maxCoeff() < 1e-12);

      // L annihilates D^(1/2) 1 on every non-isolated component.
      Eigen::VectorXd sqrt_d(static_cast<Eigen::Index>(g.size));
      for (std::size_t i = 0; i < g.size; ++i) sqrt_d[static_cast<Eigen::Index>(i)] = std::sqrt(static_cast<double>(g.degree(i)));
      const Eigen::VectorXd r = L * sqrt_d;
      CHECK(r.cwiseAbs().maxCoeff() < 1e-12);

      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Ls);
      CHECK(es.eigenvalues().minCoeff() >= -1.0 - 1e-12);
      CHECK(es.eigenvalues().maxCoeff() <= 1.0 + 1e-12);

      // Off-diagonal pattern equals the adjacency.
      for (std::size_t i = 0; i < g.size; ++i) {
        for (std::size_t j = 0; j < g.size; ++j) {
          if (i == j) continue;
          const auto nb = g.neighbors(i);
          const bool adj = std::binary_search(nb.begin(), nb.end(), static_cast<std::uint32_t>(j));
          CHECK((Ls(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) != 0.0) == adj);
        }
      }

      const auto P = scaled_laplacian(g, LambdaMaxMode::PowerIteration);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> el(L);
      CHECK(P.lambda_max == doctest::Approx(el.eigenvalues().maxCoeff()).epsilon(1e-3));
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ep(dense(P.matrix));
      CHECK(ep.eigenvalues().maxCoeff() <= 1.0 + 1e-3);
    }
  }

  TEST_CASE("neighbour residual rows sum to zero and isolated nodes are rejected") {
    const auto m = structured_hex_grid(2, 2, 3);
    const auto g = build_node_graph(m.connectivity, static_cast<std::size_t>(m.coords.rows()));
    const auto R = dense(neighbor_residual_operator(g));
    CHECK(R.rowwise().sum().cwiseAbs().maxCoeff() < 1e-12);
    CHECK_THROWS_AS(neighbor_residual_operator(graph_from_pairs<NodeTag>(3, {{0, 1}})), MeshError);
  }

  TEST_CASE("merge of one case is the identity; extraction recovers every case") {
    const auto a = structured_hex_grid(2, 1, 1);
    const auto b = structured_hex_grid(1, 1, 1);
    const auto c = structured_hex_grid(1, 2, 3);
    const auto da = build_dual_graph(a.connectivity, 12);
    const auto db = build_dual_graph(b.connectivity, 8);
    const auto dc = build_dual_graph(c.connectivity, static_cast<std::size_t>(c.coords.rows()));

    auto same = [](const DualGraph& x, const DualGraph& y) {
      CHECK(x.nodes == y.nodes);
      CHECK(x.elements == y.elements);
      CHECK(x.incidence.elem_nodes == y.incidence.elem_nodes);
      CHECK(x.incidence.node_offsets == y.incidence.node_offsets);
      CHECK(x.incidence.node_elems == y.incidence.node_elems);
      CHECK((dense(x.node_laplacian.matrix) - dense(y.node_laplacian.matrix)).cwiseAbs().maxCoeff() == 0.0);
      CHECK((dense(x.element_laplacian.matrix) - dense(y.element_laplacian.matrix)).cwiseAbs().maxCoeff() == 0.0);
    };

    const DualGraph* single[] = {&da};
    const auto m1 = merge_batch(single);
    same(m1.merged, da);

    const DualGraph* three[] = {&da, &db, &dc};
    const auto m3 = merge_batch(three);
    CHECK(m3.case_count() == 3);
    same(extract_case(m3, 0), da);
    same(extract_case(m3, 1), db);
    same(extract_case(m3, 2), dc);
    CHECK_THROWS_AS(merge_batch(std::span<const DualGraph* const>{}), MeshError);
  }

  TEST_CASE("two single-hex cases merge block-diagonally") {
    const auto b = structured_hex_grid(1, 1, 1);
    const auto d = build_dual_graph(b.connectivity, 8);
    const DualGraph* two[] = {&d, &d};
    const auto m = merge_batch(two);
    CHECK(m.merged.nodes.size == 16);
    CHECK(m.merged.nodes.undirected_edge_count() == 24);
    for (auto [i, j] : m.merged.nodes.edge_list()) CHECK((i < 8) == (j < 8));
    CHECK(m.merged.elements.undirected_edge_count() == 0);
    CHECK(m.merged.incidence.n_elems() == 2);
    const auto L = dense(m.merged.node_laplacian.matrix);
    CHECK(L.block(0, 8, 8, 8).cwiseAbs().maxCoeff() == 0.0);
    CHECK(L.block(8, 0, 8, 8).cwiseAbs().maxCoeff() == 0.0);
  }

  TEST_CASE("relabelling nodes conjugates the node graph and leaves the element graph unchanged") {
    const auto m = structured_hex_grid(3, 2, 2);
    const auto n = static_cast<std::size_t>(m.coords.rows());
    std::vector<std::uint32_t> pi(n);
    std::iota(pi.begin(), pi.end(), 0u);
    std::mt19937_64 rng(3);
    std::shuffle(pi.begin(), pi.end(), rng);
    auto permuted = m.connectivity;
    for (auto& h : permuted)
      for (auto& v : h) v = pi[v];

    const auto g = build_node_graph(m.connectivity, n);
    const auto gp = build_node_graph(permuted, n);
    oracle::EdgeSet mapped;
    for (auto [i, j] : g.edge_list()) mapped.emplace(std::min(pi[i], pi[j]), std::max(pi[i], pi[j]));
    CHECK(as_set(gp.edge_list()) == mapped);
    CHECK(build_element_graph(permuted, n) == build_element_graph(m.connectivity, n));
  }
}
