// Searches the synthetic stress-model constants so that the E->N->E peak
// reduction at the ultimate frame of the baseline case lands on the target
// for both stress and PEEQ on the full mesh, while the tiny mesh still yields
// plastic strain and the stress field stays localized.

#include <cmath>
#include <cstdio>
#include <iostream>
#include <limits>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dgs/mesh_graph.hpp"
#include "dgs/projection.hpp"
#include "dgs/synth_bench.hpp"

using namespace dgs;

namespace {

struct Probe {
  double stress_reduction = 0.0;
  double peeq_reduction = 0.0;
  double tiny_peeq_max = 0.0;
  double localized_fraction = 0.0;  // elements above half the peak stress
  double stress_peak = 0.0;
  double peeq_peak = 0.0;
};

Probe probe(const synth::StressModel& model) {
  Probe out;
  for (const char* scale : {"full", "tiny"}) {
    auto spec = synth::beam_for_scale(scale);
    spec.stress = model;
    const auto c = synth::generate_case(spec, {0, 0}, 2);
    const Eigen::VectorXd s = c.s.row(1).transpose();
    const Eigen::VectorXd p = c.peeq.row(1).transpose();
    if (std::string(scale) == "tiny") {
      out.tiny_peeq_max = p.maxCoeff();
      continue;
    }
    const auto inc = build_incidence(c.connectivity, c.n_nodes());
    out.stress_reduction = attenuation_report(s, inc).reduction_percent;
    out.peeq_reduction = attenuation_report(p, inc).reduction_percent;
    out.stress_peak = s.maxCoeff();
    out.peeq_peak = p.maxCoeff();
    out.localized_fraction = static_cast<double>((s.array() > 0.5 * out.stress_peak).count()) / static_cast<double>(s.size());
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Calibrate the synthetic stress model against a target E->N->E attenuation"};
  double target_s = 20.1, target_p = 20.3, peeq_peak = 2e-3;
  double max_peak = 60.0, max_hardening = 1.0;
  bool check_only = false;
  synth::StressModel given;
  app.add_option("--target-stress", target_s, "Target stress peak reduction (%)")->capture_default_str();
  app.add_option("--target-peeq", target_p, "Target PEEQ peak reduction (%)")->capture_default_str();
  app.add_option("--peeq-peak", peeq_peak, "PEEQ peak the gain is scaled to")->capture_default_str();
  app.add_option("--max-stress-peak", max_peak, "Largest admissible stress peak (MPa)")->capture_default_str();
  app.add_option("--max-hardening", max_hardening, "Largest admissible post-cap slope")->capture_default_str();
  app.add_flag("--check", check_only, "Only report the values for the committed constants");
  CLI11_PARSE(app, argc, argv);

  auto report = [](const synth::StressModel& m, const Probe& r) {
    nlohmann::json j = {{"stress_cap", m.stress_cap},       {"hardening", m.hardening},
                        {"peeq_gain", m.peeq_gain},         {"concentration", m.concentration},
                        {"band_width", m.band_width},       {"stress_reduction", r.stress_reduction},
                        {"peeq_reduction", r.peeq_reduction}, {"tiny_peeq_max", r.tiny_peeq_max},
                        {"localized_fraction", r.localized_fraction}, {"stress_peak", r.stress_peak},
                        {"peeq_peak", r.peeq_peak}};
    std::cout << j.dump(2) << "\n";
  };
  if (check_only) {
    report(given, probe(given));
    return 0;
  }

  synth::StressModel best = given;
  double best_err = std::numeric_limits<double>::infinity();
  for (double conc = 0.5; conc <= 3.001; conc += 0.25) {
    for (double band = 0.6; band <= 2.001; band += 0.1) {
      for (double cap = 10.0; cap <= 30.0; cap += 2.0) {
        for (double hard : {0.1, 0.2, 0.3, 0.5, 0.7, 1.0}) {
          if (hard > max_hardening) continue;
          synth::StressModel m{cap, hard, 1.0, conc, band};
          const auto r = probe(m);
          if (!(r.tiny_peeq_max > 0.0) || !(r.localized_fraction < 0.2) || r.stress_peak > max_peak) continue;
          const double err = std::hypot(r.stress_reduction - target_s, r.peeq_reduction - target_p);
          if (err < best_err) {
            best_err = err;
            best = m;
          }
        }
      }
    }
  }
  if (!std::isfinite(best_err)) {
    std::cerr << "no admissible constants found\n";
    return 1;
  }
  // PEEQ is linear in the gain, so scale it to the requested peak.
  best.peeq_gain = peeq_peak / probe(best).peeq_peak;
  report(best, probe(best));
  return 0;
}
