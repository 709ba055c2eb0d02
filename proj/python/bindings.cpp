#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "dgs/campaign.hpp"
#include "dgs/projection.hpp"
#include "dgs/synth_bench.hpp"
#include "dgs/trainer.hpp"

namespace py = pybind11;
using namespace dgs;
using nlohmann::json;

namespace {

using U32Array = py::array_t<std::uint32_t, py::array::c_style | py::array::forcecast>;
using F64Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

py::array_t<std::uint32_t> connectivity_array(const std::vector<Hex>& conn) {
  py::array_t<std::uint32_t> out({conn.size(), std::size_t{8}});
  auto v = out.mutable_unchecked<2>();
  for (std::size_t e = 0; e < conn.size(); ++e)
    for (std::size_t k = 0; k < 8; ++k) v(e, k) = conn[e][k];
  return out;
}

std::vector<Hex> connectivity_from(const U32Array& a) {
  if (a.ndim() != 2 || a.shape(1) != 8) throw CaseError(CaseError::Kind::ShapeMismatch, "connectivity must be E x 8");
  auto v = a.unchecked<2>();
  std::vector<Hex> out(static_cast<std::size_t>(a.shape(0)));
  for (std::size_t e = 0; e < out.size(); ++e)
    for (std::size_t k = 0; k < 8; ++k) out[e][k] = v(e, k);
  return out;
}

py::array_t<double> stack_frames(const std::vector<Matrix>& frames) {
  const std::size_t t = frames.size();
  const std::size_t n = t ? static_cast<std::size_t>(frames[0].rows()) : 0;
  py::array_t<double> out({t, n, std::size_t{3}});
  double* dst = out.mutable_data();
  for (const auto& f : frames) dst = std::copy(f.data(), f.data() + f.size(), dst);
  return out;
}

std::vector<Matrix> unstack_frames(const F64Array& a) {
  if (a.ndim() != 3 || a.shape(2) != 3) throw CaseError(CaseError::Kind::ShapeMismatch, "u must be T x N x 3");
  std::vector<Matrix> out;
  const double* src = a.data();
  for (py::ssize_t t = 0; t < a.shape(0); ++t) {
    Matrix f(a.shape(1), 3);
    std::copy(src, src + f.size(), f.data());
    src += f.size();
    out.push_back(std::move(f));
  }
  return out;
}

py::dict case_to_dict(const CaseTrajectory& c) {
  py::dict d;
  d["coords"] = c.coords;
  d["connectivity"] = connectivity_array(c.connectivity);
  d["u"] = stack_frames(c.u);
  d["s"] = c.s;
  d["peeq"] = c.peeq;
  d["rf2"] = c.rf2;
  d["frame_times"] = c.frame_times;
  d["load_nodes"] = py::array_t<std::uint32_t>(c.load_nodes.size(), c.load_nodes.data());
  d["load_positions"] = py::make_tuple(c.load_positions[0], c.load_positions[1]);
  return d;
}

CaseTrajectory case_from_dict(const py::dict& d) {
  CaseTrajectory c;
  c.coords = d["coords"].cast<Matrix>();
  c.connectivity = connectivity_from(d["connectivity"].cast<U32Array>());
  c.u = unstack_frames(d["u"].cast<F64Array>());
  c.s = d["s"].cast<Matrix>();
  c.peeq = d["peeq"].cast<Matrix>();
  c.rf2 = d["rf2"].cast<Vector>();
  c.frame_times = d["frame_times"].cast<Vector>();
  c.load_nodes = d["load_nodes"].cast<std::vector<std::uint32_t>>();
  c.load_positions = d["load_positions"].cast<std::array<double, 2>>();
  validate_case(c);
  return c;
}

py::dict rollout_to_dict(const RolloutResult& r) {
  py::dict d;
  d["u"] = stack_frames(r.u);
  d["s"] = r.s;
  d["peeq"] = r.p;
  d["rf2"] = r.rf2;
  return d;
}

py::tuple edge_arrays(const std::vector<Hex>& conn, std::size_t n_nodes) {
  const auto g = build_dual_graph(conn, n_nodes);
  auto to_array = [](const std::vector<std::pair<std::uint32_t, std::uint32_t>>& e) {
    py::array_t<std::uint32_t> out({e.size(), std::size_t{2}});
    auto v = out.mutable_unchecked<2>();
    for (std::size_t i = 0; i < e.size(); ++i) {
      v(i, 0) = e[i].first;
      v(i, 1) = e[i].second;
    }
    return out;
  };
  return py::make_tuple(to_array(g.nodes.edge_list()), to_array(g.elements.edge_list()));
}

Incidence incidence(const U32Array& conn, std::size_t n_nodes) { return build_incidence(connectivity_from(conn), n_nodes); }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Dual-graph surrogate core";

  auto case_error = py::register_exception<CaseError>(m, "CaseError", PyExc_ValueError);
  py::register_exception<DivergenceError>(m, "DivergenceError", PyExc_ArithmeticError);
  py::register_exception<ad::ShapeError>(m, "ShapeError", PyExc_ValueError);
  (void)case_error;

  m.def("load_case", [](const std::filesystem::path& p) { return case_to_dict(load_case(p)); }, py::arg("path"));
  m.def("save_case", [](const py::dict& d, const std::filesystem::path& p) { save_case(case_from_dict(d), p); },
        py::arg("case"), py::arg("path"));
  m.def("validate_case", [](const py::dict& d) { case_from_dict(d); }, py::arg("case"));
  m.def("compute_alpha", &compute_alpha, py::arg("frame_times"));
  m.def(
      "split_cases",
      [](std::size_t n, double train, double validation, double test, std::uint64_t seed) {
        const auto s = split_cases(n, SplitRatios{train, validation, test}, seed);
        return py::dict(py::arg("train") = s.train, py::arg("validation") = s.validation, py::arg("test") = s.test);
      },
      py::arg("n"), py::arg("train") = 0.70, py::arg("validation") = 0.15, py::arg("test") = 0.15, py::arg("seed") = 0);

  m.def(
      "structured_grid",
      [](std::size_t nx, std::size_t ny, std::size_t nz) {
        const auto g = structured_hex_grid(nx, ny, nz);
        return py::make_tuple(g.coords, connectivity_array(g.connectivity));
      },
      py::arg("nx"), py::arg("ny"), py::arg("nz"));
  m.def("graph_edges", [](const U32Array& conn, std::size_t n) { return edge_arrays(connectivity_from(conn), n); },
        py::arg("connectivity"), py::arg("n_nodes"), "Undirected (node_edges, element_edges), each K x 2 with i < j.");

  m.def("element_to_node", [](const Matrix& f, const U32Array& conn, std::size_t n) { return element_to_node(f, incidence(conn, n)); },
        py::arg("values"), py::arg("connectivity"), py::arg("n_nodes"));
  m.def("node_to_element", [](const Matrix& f, const U32Array& conn, std::size_t n) { return node_to_element(f, incidence(conn, n)); },
        py::arg("values"), py::arg("connectivity"), py::arg("n_nodes"));
  m.def(
      "attenuation",
      [](const Vector& f, const U32Array& conn, std::size_t n) {
        const auto r = attenuation_report(f, incidence(conn, n));
        return py::dict(py::arg("original_peak") = r.original_peak, py::arg("projected_peak") = r.projected_peak,
                        py::arg("reduction_percent") = r.reduction_percent, py::arg("zero_peak") = r.zero_peak,
                        py::arg("abs_difference") = py::array_t<double>(r.abs_difference.size(), r.abs_difference.data()));
      },
      py::arg("values"), py::arg("connectivity"), py::arg("n_nodes"));

  m.def(
      "generate_case",
      [](const std::string& scale, std::pair<int, int> offsets, std::size_t n_frames) {
        return case_to_dict(synth::generate_case(synth::beam_for_scale(scale), offsets, n_frames));
      },
      py::arg("scale") = "tiny", py::arg("offsets") = std::pair<int, int>{0, 0}, py::arg("n_frames") = 21);
  m.def(
      "generate_campaign",
      [](const std::filesystem::path& out, const std::string& scale, std::size_t count, std::uint64_t seed,
         std::size_t n_frames) {
        synth::CampaignSpec cs;
        cs.count = count;
        cs.seed = seed;
        cs.n_frames = n_frames;
        return synth::generate_campaign(synth::beam_for_scale(scale), cs, out).dump();
      },
      py::arg("out"), py::arg("scale") = "tiny", py::arg("count") = 190, py::arg("seed") = 0, py::arg("n_frames") = 21,
      "Writes a campaign and returns its index as a JSON string.");

  m.def(
      "train",
      [](const std::filesystem::path& campaign, const std::string& config_json, const std::filesystem::path& out) {
        TrainConfig cfg = train_config_from_json(json::parse(config_json));
        cfg.model.seed = cfg.seed;
        validate_train_config(cfg);
        const auto idx = load_campaign(campaign);
        const auto split = idx.split ? *idx.split : split_cases(idx.size(), cfg.split, cfg.seed);
        const auto tr = load_cases(idx, split.train);
        const auto va = load_cases(idx, split.validation);
        TrainResult res;
        {
          py::gil_scoped_release release;
          res = train(tr, va, cfg);
        }
        save_checkpoint(res.best, out);
        py::list history;
        for (const auto& r : res.history) {
          history.append(py::dict(py::arg("epoch") = r.epoch, py::arg("train_loss") = r.train_loss,
                                  py::arg("val_loss") = r.val_loss, py::arg("lr") = r.lr));
        }
        return py::dict(py::arg("best_epoch") = res.best_epoch, py::arg("best_val") = res.best_val,
                        py::arg("history") = history);
      },
      py::arg("campaign"), py::arg("config_json"), py::arg("checkpoint_out"));
  m.def(
      "evaluate",
      [](const std::filesystem::path& checkpoint, const std::vector<std::filesystem::path>& case_dirs) {
        const auto ck = load_checkpoint(checkpoint);
        std::vector<CaseTrajectory> cases;
        for (const auto& p : case_dirs) cases.push_back(load_case(p));
        Metrics m;
        {
          py::gil_scoped_release release;
          m = evaluate(ck, cases);
        }
        return to_json(m).dump();
      },
      py::arg("checkpoint"), py::arg("cases"), "Returns metrics as a JSON string.");
  m.def(
      "rollout",
      [](const std::filesystem::path& checkpoint, const std::filesystem::path& case_dir, bool teacher) {
        const auto ck = load_checkpoint(checkpoint);
        const auto pc = prepare_case(load_case(case_dir), ck.stats);
        const PreparedCase* ptr = &pc;
        return rollout_to_dict(predict(ck.model, std::span<const PreparedCase* const>(&ptr, 1), ck.stats,
                                       teacher ? RolloutMode::Teacher : RolloutMode::Free)
                                   .front());
      },
      py::arg("checkpoint"), py::arg("case"), py::arg("teacher") = false);
  m.def(
      "grad_check",
      [](std::size_t hidden, std::size_t frames, const std::string& variant, std::uint64_t seed) {
        const auto c = synth::single_hex_case(frames, seed);
        const auto stats = compute_norm_stats(std::vector<CaseTrajectory>{c});
        const auto pc = prepare_case(c, stats);
        const PreparedCase* ptr = &pc;
        const auto batch = make_batch(std::span<const PreparedCase* const>(&ptr, 1), stats);
        ModelConfig mc;
        mc.hidden = hidden;
        mc.mlp_hidden = hidden;
        mc.seed = seed;
        mc.variant = variant_from_string(variant);
        const auto r = finite_difference_check(init_params(mc), batch, LossWeights{});
        return py::dict(py::arg("checked") = r.checked, py::arg("max_rel_error") = r.max_rel_error,
                        py::arg("worst_param") = r.worst_param);
      },
      py::arg("hidden") = 4, py::arg("frames") = 3, py::arg("variant") = "dual", py::arg("seed") = 0);
}
