#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <tuple>

#include "dgs/synth_bench.hpp"
#include "helpers.hpp"

using namespace dgs;
using namespace dgs::synth;

namespace {

bool same_case(const CaseTrajectory& a, const CaseTrajectory& b) {
  if (a.u.size() != b.u.size()) return false;
  for (std::size_t t = 0; t < a.u.size(); ++t) {
    if (a.u[t] != b.u[t]) return false;
  }
  return a.coords == b.coords && a.connectivity == b.connectivity && a.s == b.s && a.peeq == b.peeq &&
         a.rf2 == b.rf2 && a.frame_times == b.frame_times && a.load_nodes == b.load_nodes &&
         a.load_positions == b.load_positions;
}

using Key = std::tuple<long, long, long>;

Key key(double x, double y, double z) { return {std::lround(x * 1000.0), std::lround(y * 1000.0), std::lround(z * 1000.0)}; }

Matrix centroids(const CaseTrajectory& c) {
  Matrix out(static_cast<Eigen::Index>(c.connectivity.size()), 3);
  for (std::size_t k = 0; k < c.connectivity.size(); ++k) {
    Eigen::RowVector3d acc = Eigen::RowVector3d::Zero();
    for (auto v : c.connectivity[k]) acc += c.coords.row(v);
    out.row(static_cast<Eigen::Index>(k)) = acc / 8.0;
  }
  return out;
}

/// For each point, the index of its mirror image through x = length / 2.
std::vector<Eigen::Index> mirror_map(const Matrix& pts, double length) {
  std::map<Key, Eigen::Index> index;
  for (Eigen::Index i = 0; i < pts.rows(); ++i) index[key(pts(i, 0), pts(i, 1), pts(i, 2))] = i;
  std::vector<Eigen::Index> out(static_cast<std::size_t>(pts.rows()));
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    out[static_cast<std::size_t>(i)] = index.at(key(length - pts(i, 0), pts(i, 1), pts(i, 2)));
  }
  return out;
}

}  // namespace

TEST_SUITE("synth_bench") {
  TEST_CASE("reference beam geometry and mesh") {
    const auto spec = beam_for_scale("full");
    CHECK(spec.resolved_cells() == std::array<std::size_t, 3>{108, 10, 6});
    CHECK(spec.support_left() == 150.0);
    CHECK(spec.support_right() == 2550.0);
    const auto tiny = beam_for_scale("tiny");
    CHECK(tiny.resolved_cells() == std::array<std::size_t, 3>{12, 2, 2});
    CHECK_THROWS_AS(beam_for_scale("huge"), CaseError);

    auto bad = spec;
    bad.mesh_size = 40.0;
    CHECK_THROWS_AS(validate_beam(bad), CaseError);
    bad = spec;
    bad.span = 3000.0;
    CHECK_THROWS_AS(validate_beam(bad), CaseError);
  }

  TEST_CASE("force law passes through the anchor points") {
    const auto spec = beam_for_scale("full");
    CHECK(force_at(spec, 0.0) == 0.0);
    CHECK(force_at(spec, 10.02) == doctest::Approx(85.0).epsilon(1e-14));
    CHECK(force_at(spec, 33.4) == doctest::Approx(102.0).epsilon(1e-14));
    CHECK(force_at(spec, 5.01) == doctest::Approx(42.5).epsilon(1e-14));
    const double slope = (102.0 - 85.0) / (33.4 - 10.02);
    CHECK(force_at(spec, 40.0) == doctest::Approx(102.0 + slope * 6.6).epsilon(1e-12));
  }

  TEST_CASE("statics: equilibrium and the moment diagram") {
    const auto spec = beam_for_scale("full");
    for (auto [x1, x2] : {std::pair{950.0, 1750.0}, std::pair{750.0, 1900.0}, std::pair{400.0, 500.0}}) {
      const double p = 12345.0;
      const auto r = support_reactions(spec, x1, x2, p);
      CHECK(std::abs(r.left + r.right - 2.0 * p) < 1e-9 * p);
      const double moment = r.right * spec.span - p * ((x1 - 150.0) + (x2 - 150.0));
      CHECK(std::abs(moment) < 1e-9 * p * spec.span);
      CHECK(bending_moment(spec, x1, x2, p, 150.0) == 0.0);
      CHECK(bending_moment(spec, x1, x2, p, 2550.0) == 0.0);
      CHECK(bending_moment(spec, x1, x2, p, 50.0) == 0.0);
      const double left = bending_moment(spec, x1, x2, p, x1 - 1e-6);
      const double right = bending_moment(spec, x1, x2, p, x1 + 1e-6);
      CHECK(std::abs(left - right) < 1e-3 * std::abs(left));
    }
    // Symmetric loading gives a constant-moment region equal to P a.
    for (double x : {950.0, 1100.0, 1350.0, 1600.0, 1750.0}) {
      CHECK(bending_moment(spec, 950.0, 1750.0, 1.0, x) == doctest::Approx(800.0).epsilon(1e-12));
    }
    CHECK(max_moment_per_unit_force(spec, 950.0, 1750.0) == doctest::Approx(400.0).epsilon(1e-12));
  }

  TEST_CASE("deflection shape vanishes at supports and its slope is consistent") {
    const auto spec = beam_for_scale("full");
    for (auto [x1, x2] : {std::pair{950.0, 1750.0}, std::pair{800.0, 1700.0}}) {
      CHECK(std::abs(deflection_shape(spec, x1, x2, 150.0).first) < 1e-6);
      CHECK(std::abs(deflection_shape(spec, x1, x2, 2550.0).first) < 1e-6);
      CHECK(deflection_shape(spec, x1, x2, 1350.0).first > 0.0);
      for (double x : {20.0, 400.0, 1000.0, 1360.0, 2000.0, 2650.0}) {
        const double h = 1e-3;
        const double fd =
            (deflection_shape(spec, x1, x2, x + h).first - deflection_shape(spec, x1, x2, x - h).first) / (2.0 * h);
        const double slope = deflection_shape(spec, x1, x2, x).second;
        CHECK(std::abs(fd - slope) < 1e-6 * std::max(1.0, std::abs(slope)));
      }
    }
  }

  TEST_CASE("reference case: frame 0, global response and knee") {
    const auto spec = beam_for_scale("full");
    const auto c = generate_case(spec, {0, 0});
    CHECK(c.coords.rows() == 8393);
    CHECK(c.connectivity.size() == 6480);
    CHECK(c.u.size() == 21);
    CHECK(c.u[0].isZero(0.0));
    CHECK(c.s.row(0).isZero(0.0));
    CHECK(c.peeq.row(0).isZero(0.0));
    CHECK(c.rf2[0] == 0.0);
    CHECK(c.rf2[6] == doctest::Approx(85.0).epsilon(1e-12));
    CHECK(c.rf2[20] == doctest::Approx(102.0).epsilon(1e-12));
    CHECK(c.frame_times[0] == 0.0);
    CHECK(c.frame_times[20] == 1.0);

    const auto mid = midspan_node(c.coords, spec);
    CHECK(c.coords(static_cast<Eigen::Index>(mid), 0) == 1350.0);
    CHECK(c.u[20](static_cast<Eigen::Index>(mid), 1) == doctest::Approx(-33.4).epsilon(1e-12));
    CHECK(c.u[6](static_cast<Eigen::Index>(mid), 1) == doctest::Approx(-10.02).epsilon(1e-12));
    CHECK(c.load_positions == std::array<double, 2>{950.0, 1750.0});
    for (auto n : c.load_nodes) CHECK(c.coords(n, 1) == 250.0);
  }

  TEST_CASE("symmetric loading gives mirror-symmetric fields") {
    const auto spec = beam_for_scale("full");
    const auto c = generate_case(spec, {0, 0});
    const auto nodes = mirror_map(c.coords, spec.length);
    const auto elems = mirror_map(centroids(c), spec.length);
    double err_u = 0.0, err_s = 0.0, err_p = 0.0;
    for (std::size_t t = 0; t < c.u.size(); ++t) {
      const auto& u = c.u[t];
      for (Eigen::Index i = 0; i < u.rows(); ++i) {
        const auto j = nodes[static_cast<std::size_t>(i)];
        err_u = std::max(err_u, std::abs(u(i, 0) + u(j, 0)));
        err_u = std::max(err_u, std::abs(u(i, 1) - u(j, 1)));
        err_u = std::max(err_u, std::abs(u(i, 2) - u(j, 2)));
      }
      for (Eigen::Index k = 0; k < c.s.cols(); ++k) {
        const auto m = elems[static_cast<std::size_t>(k)];
        const auto f = static_cast<Eigen::Index>(t);
        err_s = std::max(err_s, std::abs(c.s(f, k) - c.s(f, m)));
        err_p = std::max(err_p, std::abs(c.peeq(f, k) - c.peeq(f, m)));
      }
    }
    CHECK(err_u < 1e-10);
    CHECK(err_s < 1e-10);
    CHECK(err_p < 1e-10);
  }

  TEST_CASE("asymmetric loading breaks the symmetry of the stress peaks") {
    const auto spec = beam_for_scale("full");
    const auto c = generate_case(spec, {-200, 0});
    const Matrix cen = centroids(c);
    double left = 0.0, right = 0.0;
    for (Eigen::Index k = 0; k < c.s.cols(); ++k) {
      auto& side = cen(k, 0) < 1350.0 ? left : right;
      side = std::max(side, c.s(20, k));
    }
    CHECK(std::abs(left - right) > 1e-3 * std::max(left, right));
    // Loads farther apart carry more force for the same deflection.
    CHECK(c.rf2[20] == doctest::Approx(102.0 * 400.0 / max_moment_per_unit_force(spec, 750.0, 1750.0)).epsilon(1e-12));
    CHECK(c.rf2[20] > 102.0);
  }

  TEST_CASE("plasticity is localized and PEEQ never decreases") {
    const auto spec = beam_for_scale("full");
    for (auto offsets : {OffsetPair{0, 0}, OffsetPair{-200, 200}, OffsetPair{125, -75}}) {
      const auto c = generate_case(spec, offsets);
      const auto e = c.peeq.cols();
      const double peak = c.s.row(20).maxCoeff();
      Eigen::Index high = 0, plastic = 0;
      for (Eigen::Index k = 0; k < e; ++k) {
        high += c.s(20, k) > 0.5 * peak;
        plastic += c.peeq(20, k) > 0.0;
      }
      CHECK(static_cast<double>(high) < 0.2 * static_cast<double>(e));
      CHECK(plastic > 0);
      CHECK(plastic < e);
      CHECK(c.peeq.minCoeff() >= 0.0);
      for (Eigen::Index t = 1; t < c.peeq.rows(); ++t) {
        CHECK((c.peeq.row(t).array() >= c.peeq.row(t - 1).array()).all());
      }
      // Some elements reach the plastic branch.
      CHECK(c.s.maxCoeff() > spec.stress.stress_cap);
    }
  }

  TEST_CASE("generation is deterministic") {
    const auto spec = beam_for_scale("tiny");
    CHECK(same_case(generate_case(spec, {25, -50}), generate_case(spec, {25, -50})));
    CHECK_FALSE(same_case(generate_case(spec, {25, -50}), generate_case(spec, {-50, 25})));
    CHECK(same_case(single_hex_case(5, 3), single_hex_case(5, 3)));
  }

  TEST_CASE("offset grid and campaign sampling") {
    CampaignSpec cs;
    const auto grid = offset_grid(cs);
    CHECK(grid.size() == 289);
    CHECK(grid.front() == OffsetPair{-200, -200});
    CHECK(grid.back() == OffsetPair{200, 200});
    CHECK(grid[1] == OffsetPair{-200, -175});

    const auto pairs = campaign_pairs(cs);
    CHECK(pairs.size() == 190);
    const std::set<OffsetPair> unique(pairs.begin(), pairs.end());
    CHECK(unique.size() == 190);
    const std::set<OffsetPair> all(grid.begin(), grid.end());
    for (const auto& p : pairs) CHECK(all.count(p) == 1);
    CHECK(campaign_pairs(cs) == pairs);
    cs.seed = 1;
    CHECK(campaign_pairs(cs) != pairs);

    cs.count = 290;
    CHECK_THROWS_AS(campaign_pairs(cs), CaseError);
    cs.pairs = {{0, 0}, {25, 0}, {0, 0}};
    CHECK_THROWS_AS(campaign_pairs(cs), CaseError);
  }

  TEST_CASE("offset validation") {
    const auto spec = beam_for_scale("full");
    const CampaignSpec cs;
    CHECK_NOTHROW(validate_offsets(spec, cs, {-200, 200}));
    CHECK_THROWS_AS(validate_offsets(spec, cs, {10, 0}), CaseError);
    CHECK_THROWS_AS(validate_offsets(spec, cs, {225, 0}), CaseError);
    CHECK_THROWS_AS(generate_case(spec, {0, 30}), CaseError);
    auto close = spec;
    close.baseline_positions = {1300.0, 1350.0};
    CHECK_THROWS_AS(validate_offsets(close, cs, {0, 0}), CaseError);
    auto edge = spec;
    edge.baseline_positions = {250.0, 1750.0};
    CHECK_THROWS_AS(validate_offsets(edge, cs, {-100, 0}), CaseError);
    CHECK_THROWS_AS(generate_case(spec, {0, 0}, 1), CaseError);
  }

  TEST_CASE("campaign on disk matches in-memory generation") {
    testutil::TempDir dir("campaign");
    const auto spec = beam_for_scale("tiny");
    CampaignSpec cs;
    cs.pairs = {{0, 0}, {-100, 75}};
    cs.n_frames = 5;
    const auto index = generate_campaign(spec, cs, dir.path());
    REQUIRE(index.at("cases").size() == 2);
    CHECK(index.at("cases")[1].at("dir") == "case_001");
    CHECK(std::filesystem::exists(dir.path() / "campaign.json"));
    const auto loaded = load_case(dir.path() / "case_001");
    CHECK(same_case(loaded, generate_case(spec, {-100, 75}, 5)));
    const auto beam = beam_from_json(index.at("generator").at("beam"));
    CHECK(beam.resolved_cells() == spec.resolved_cells());
    CHECK(beam.stress.peeq_gain == spec.stress.peeq_gain);
  }

  TEST_CASE("beam JSON round trip") {
    auto spec = beam_for_scale("full");
    spec.stress.concentration = 2.25;
    spec.baseline_positions = {900.0, 1800.0};
    const auto back = beam_from_json(beam_to_json(spec));
    CHECK(beam_to_json(back) == beam_to_json(spec));
    CHECK(back.stress.concentration == 2.25);
    CHECK(back.baseline_positions[1] == 1800.0);
  }

  TEST_CASE("single-hex case is valid with monotone PEEQ") {
    const auto c = single_hex_case(6, 9);
    CHECK_NOTHROW(validate_case(c));
    CHECK(c.coords.rows() == 8);
    CHECK(c.s.cols() == 1);
    for (Eigen::Index t = 1; t < 6; ++t) CHECK(c.peeq(t, 0) >= c.peeq(t - 1, 0));
    CHECK(c.u[0].isZero(0.0));
    CHECK_THROWS_AS(single_hex_case(1, 0), CaseError);
  }
}
