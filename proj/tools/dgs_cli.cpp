#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dgs/blob_io.hpp"
#include "dgs/campaign.hpp"
#include "dgs/mesh_graph.hpp"
#include "dgs/projection.hpp"
#include "dgs/synth_bench.hpp"
#include "dgs/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dgs;

namespace {

constexpr const char* kEngineVersion = "0.1.0";

enum ExitCode { kOk = 0, kFailure = 1, kUsage = 2, kData = 3, kDivergence = 4 };

fs::path output_root() {
  if (const char* env = std::getenv("DGS_OUTPUT_ROOT"); env && *env) return env;
  return ".";
}

fs::path resolve_out(const std::string& given, const std::string& fallback) {
  return given.empty() ? output_root() / fallback : fs::path(given);
}

struct Manifest {
  std::string subcommand;
  json config = json::object();
  json seeds = json::array();
  json inputs = json::object();
  json outputs = json::object();
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  void write(const fs::path& dir) const {
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    fs::create_directories(dir);
    blob::write_json(dir / "run_manifest.json", {{"subcommand", subcommand},
                                                 {"config", config},
                                                 {"seeds", seeds},
                                                 {"inputs", inputs},
                                                 {"outputs", outputs},
                                                 {"engine_version", kEngineVersion},
                                                 {"timing", {{"wall_seconds", seconds}}}});
  }
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

// Training flags shared by train and ablate; unset flags keep the config file or defaults.
struct TrainFlags {
  std::string config_file;
  std::optional<std::size_t> epochs, batch_size, hidden, cheb_order, mlp_hidden;
  std::optional<double> lr, clip, lambda_s, lambda_rf2, lambda_p, lambda_lap;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> variant;
  bool stress_feedback = false;

  void attach(CLI::App* app, bool with_variant) {
    app->add_option("--config", config_file, "JSON file mirroring the training config");
    app->add_option("--epochs", epochs, "Training epochs [1000]");
    app->add_option("--batch-size", batch_size, "Cases per batch [8]");
    app->add_option("--lr", lr, "Initial Adam learning rate [0.003]");
    app->add_option("--clip", clip, "Global gradient-norm clip [0.5]");
    app->add_option("--hidden", hidden, "GConvGRU hidden width [256]");
    app->add_option("--cheb-order", cheb_order, "Chebyshev filter order K [2]");
    app->add_option("--mlp-hidden", mlp_hidden, "Decoder hidden width [256]");
    app->add_option("--seed", seed, "Initialization and shuffling seed [0]");
    app->add_option("--lambda-s", lambda_s, "Stress loss weight [1]");
    app->add_option("--lambda-rf2", lambda_rf2, "Reaction-force loss weight [1]");
    app->add_option("--lambda-p", lambda_p, "PEEQ loss weight [1]");
    app->add_option("--lambda-lap", lambda_lap, "Laplacian regularizer weight [0.01]");
    app->add_flag("--stress-feedback", stress_feedback, "Feed back the previous stress averaged onto nodes");
    if (with_variant) app->add_option("--variant", variant, "Model variant: dual or single [dual]");
  }

  TrainConfig resolve() const {
    TrainConfig c = config_file.empty() ? TrainConfig{} : train_config_from_json(blob::read_json(config_file));
    if (epochs) c.epochs = *epochs;
    if (batch_size) c.batch_size = *batch_size;
    if (lr) c.lr = *lr;
    if (clip) c.clip = *clip;
    if (hidden) c.model.hidden = *hidden;
    if (cheb_order) c.model.cheb_order = *cheb_order;
    if (mlp_hidden) c.model.mlp_hidden = *mlp_hidden;
    if (seed) c.seed = *seed;
    if (lambda_s) c.weights.s = *lambda_s;
    if (lambda_rf2) c.weights.rf2 = *lambda_rf2;
    if (lambda_p) c.weights.p = *lambda_p;
    if (lambda_lap) c.weights.lap = *lambda_lap;
    if (stress_feedback) c.model.stress_feedback = true;
    if (variant) c.model.variant = variant_from_string(*variant);
    c.model.seed = c.seed;
    validate_train_config(c);
    return c;
  }
};

SplitAssignment campaign_split(const CampaignIndex& idx, const TrainConfig& cfg) {
  if (idx.split) return *idx.split;
  return split_cases(idx.size(), cfg.split, cfg.seed);
}

json split_json(const SplitAssignment& s) {
  return {{"seed", s.seed}, {"train", s.train}, {"validation", s.validation}, {"test", s.test}};
}

std::string history_csv(const std::vector<EpochRecord>& history) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "epoch,train_loss,val_loss,lr\n";
  for (const auto& r : history) os << r.epoch << "," << r.train_loss << "," << r.val_loss << "," << r.lr << "\n";
  return os.str();
}

std::vector<std::size_t> subset_indices(const CampaignIndex& idx, const SplitAssignment& split, const std::string& which) {
  if (which == "train") return split.train;
  if (which == "validation") return split.validation;
  if (which == "test") return split.test;
  if (which == "all") {
    std::vector<std::size_t> all(idx.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return all;
  }
  throw CaseError(CaseError::Kind::InvalidInput, "unknown subset '" + which + "'");
}

// ---------------------------------------------------------------------------

int run_gen(const std::string& out_arg, const std::string& scale, std::size_t count, std::uint64_t seed,
            std::size_t frames, int max_offset, int step, const std::vector<std::string>& offsets) {
  const fs::path out = resolve_out(out_arg, "campaign");
  auto spec = synth::beam_for_scale(scale);
  synth::CampaignSpec cs;
  cs.count = count;
  cs.seed = seed;
  cs.n_frames = frames;
  cs.max_offset = max_offset;
  cs.step = step;
  for (const auto& o : offsets) {
    int a = 0, b = 0;
    char comma = 0;
    std::istringstream is(o);
    if (!(is >> a >> comma >> b) || comma != ',' || !is.eof()) {
      throw CaseError(CaseError::Kind::InvalidInput, "offset pair '" + o + "' is not of the form o1,o2");
    }
    cs.pairs.emplace_back(a, b);
  }
  Manifest m{"gen"};
  const auto index = synth::generate_campaign(spec, cs, out);
  m.config = index.at("generator");
  m.seeds = {seed};
  m.outputs = {{"campaign", (out / "campaign.json").string()}, {"cases", index.at("cases").size()}};
  m.write(out);
  std::cout << json{{"campaign", (out / "campaign.json").string()}, {"cases", index.at("cases").size()}}.dump() << "\n";
  return kOk;
}

int run_split(const std::string& campaign, std::uint64_t seed, const std::vector<double>& ratios) {
  auto idx = load_campaign(campaign);
  SplitRatios r;
  if (!ratios.empty()) {
    if (ratios.size() != 3) throw CaseError(CaseError::Kind::InvalidInput, "--ratios takes three values");
    r = {ratios[0], ratios[1], ratios[2]};
  }
  const auto split = split_cases(idx.size(), r, seed);
  write_split(idx, split, r);
  Manifest m{"split"};
  m.config = {{"ratios", {r.train, r.validation, r.test}}};
  m.seeds = {seed};
  m.inputs = {{"campaign", idx.root.string()}};
  m.outputs = split_json(split);
  m.write(idx.root / "split");
  std::cout << json{{"train", split.train.size()}, {"validation", split.validation.size()}, {"test", split.test.size()}}.dump()
            << "\n";
  return kOk;
}

int run_train(const std::string& campaign, const std::string& out_arg, const TrainFlags& flags, bool quiet) {
  const TrainConfig cfg = flags.resolve();
  const auto idx = load_campaign(campaign);
  const auto split = campaign_split(idx, cfg);
  const auto tr = load_cases(idx, split.train);
  const auto va = load_cases(idx, split.validation);
  const fs::path out = resolve_out(out_arg, "run");
  fs::create_directories(out);

  std::ofstream log(out / "history.csv");
  auto res = train(tr, va, cfg, [&](const EpochRecord& r) {
    if (!quiet) {
      std::cerr << "epoch " << r.epoch << " train " << r.train_loss << " val " << r.val_loss << " lr " << r.lr
                << (r.improved ? " *" : "") << "\n";
    }
  });
  log << history_csv(res.history);
  log.close();
  save_checkpoint(res.best, out / "checkpoint");

  Manifest m{"train"};
  m.config = to_json(cfg);
  m.seeds = {cfg.seed};
  m.inputs = {{"campaign", idx.root.string()}, {"split", split_json(split)}};
  m.outputs = {{"checkpoint", (out / "checkpoint").string()},
               {"history", (out / "history.csv").string()},
               {"best_epoch", res.best_epoch},
               {"best_val_loss", res.best_val}};
  m.write(out);
  std::cout << m.outputs.dump() << "\n";
  return kOk;
}

int run_eval(const std::string& checkpoint, const std::string& campaign, const std::string& subset,
             const std::string& out_arg) {
  const auto ck = load_checkpoint(checkpoint);
  const auto idx = load_campaign(campaign);
  const TrainConfig cfg = train_config_from_json(ck.train_config);
  const auto split = campaign_split(idx, cfg);
  const auto cases = load_cases(idx, subset_indices(idx, split, subset));
  const auto metrics = evaluate(ck, cases);
  const json j = to_json(metrics);
  const fs::path out = resolve_out(out_arg, "eval");
  blob::write_json(out / "metrics.json", j);
  Manifest m{"eval"};
  m.config = {{"subset", subset}};
  m.seeds = {ck.seed};
  m.inputs = {{"checkpoint", checkpoint}, {"campaign", idx.root.string()}};
  m.outputs = {{"metrics", (out / "metrics.json").string()}};
  m.write(out);
  std::cout << j.dump(2) << "\n";
  return kOk;
}

int run_rollout(const std::string& checkpoint, const std::string& case_dir, const std::string& out_arg, bool teacher) {
  const auto ck = load_checkpoint(checkpoint);
  const auto c = load_case(case_dir);
  const auto prepared = prepare_case(c, ck.stats);
  const PreparedCase* ptr = &prepared;
  const auto r = predict(ck.model, std::span<const PreparedCase* const>(&ptr, 1), ck.stats,
                         teacher ? RolloutMode::Teacher : RolloutMode::Free)
                     .front();
  const fs::path out = resolve_out(out_arg, "rollout");
  fs::create_directories(out);

  const auto t = c.n_frames(), n = c.n_nodes(), e = c.n_elems();
  std::vector<double> u;
  u.reserve(t * n * 3);
  for (const auto& f : r.u) u.insert(u.end(), f.data(), f.data() + f.size());
  json blobs = json::array();
  blobs.push_back(blob::to_json(blob::write_f64(out, "u", {t, n, 3}, u.data())));
  blobs.push_back(blob::to_json(blob::write_f64(out, "s", {t, e}, r.s.data())));
  blobs.push_back(blob::to_json(blob::write_f64(out, "peeq", {t, e}, r.p.data())));
  blobs.push_back(blob::to_json(blob::write_f64(out, "rf2", {t}, r.rf2.data())));
  blobs.push_back(blob::to_json(blob::write_f64(out, "frame_times", {t}, c.frame_times.data())));
  blob::write_json(out / "manifest.json", {{"schema_version", 1},
                                           {"kind", "prediction"},
                                           {"source_case", case_dir},
                                           {"mode", teacher ? "teacher" : "free"},
                                           {"n_nodes", n},
                                           {"n_elems", e},
                                           {"n_frames", t},
                                           {"dtype", "f64"},
                                           {"endianness", "little"},
                                           {"blobs", blobs}});

  const auto mid = static_cast<Eigen::Index>(prepared.midspan);
  std::ostringstream csv;
  csv << std::setprecision(12) << "frame,alpha,deflection_true,deflection_pred,rf2_true,rf2_pred\n";
  for (std::size_t f = 0; f < t; ++f) {
    const auto fi = static_cast<Eigen::Index>(f);
    csv << f << "," << prepared.alpha[fi] << "," << -c.u[f](mid, 1) << "," << -r.u[f](mid, 1) << "," << c.rf2[fi]
        << "," << r.rf2[fi] << "\n";
  }
  write_text(out / "force_deflection.csv", csv.str());

  Manifest m{"rollout"};
  m.config = {{"mode", teacher ? "teacher" : "free"}};
  m.seeds = {ck.seed};
  m.inputs = {{"checkpoint", checkpoint}, {"case", case_dir}};
  m.outputs = {{"prediction", out.string()}, {"force_deflection", (out / "force_deflection.csv").string()}};
  m.write(out);
  std::cout << m.outputs.dump() << "\n";
  return kOk;
}

int run_ablate(const std::string& campaign, const std::string& out_arg, const TrainFlags& flags,
               const std::vector<std::uint64_t>& seeds, bool quiet) {
  const TrainConfig cfg = flags.resolve();
  const auto idx = load_campaign(campaign);
  const auto split = campaign_split(idx, cfg);
  const auto tr = load_cases(idx, split.train);
  const auto va = load_cases(idx, split.validation);
  const auto te = load_cases(idx, split.test);
  const auto summary = ablate(tr, va, te, cfg, seeds, [&](const std::string& line) {
    if (!quiet) std::cerr << line << "\n";
  });
  const fs::path out = resolve_out(out_arg, "ablation");
  write_text(out / "ablation.csv", ablation_csv(summary));
  json runs = json::array();
  for (const auto& r : summary.runs) runs.push_back({{"seed", r.seed}, {"dual", to_json(r.dual)}, {"single", to_json(r.single)}});
  const json j = {{"runs", runs},
                  {"median",
                   {{"stress_dual", summary.stress_dual},
                    {"stress_single", summary.stress_single},
                    {"peeq_dual", summary.peeq_dual},
                    {"peeq_single", summary.peeq_single}}},
                  {"stress_reduction_percent", summary.stress_reduction_percent},
                  {"peeq_reduction_percent", summary.peeq_reduction_percent}};
  blob::write_json(out / "ablation.json", j);
  Manifest m{"ablate"};
  m.config = to_json(cfg);
  m.seeds = seeds;
  m.inputs = {{"campaign", idx.root.string()}, {"split", split_json(split)}};
  m.outputs = {{"table", (out / "ablation.csv").string()}, {"details", (out / "ablation.json").string()}};
  m.write(out);
  std::cout << ablation_csv(summary);
  return kOk;
}

json attenuation_json(const AttenuationReport& r) {
  return {{"original_peak", r.original_peak},
          {"projected_peak", r.projected_peak},
          {"reduction_percent", r.reduction_percent},
          {"original_peak_element", r.original_peak_index},
          {"projected_peak_element", r.projected_peak_index},
          {"zero_peak", r.zero_peak}};
}

int run_project_study(const std::string& case_dir, std::optional<std::size_t> frame, const std::string& out_arg) {
  const auto c = load_case(case_dir);
  const std::size_t f = frame.value_or(c.n_frames() - 1);
  if (f >= c.n_frames()) {
    throw CaseError(CaseError::Kind::IndexOutOfRange,
                    "frame " + std::to_string(f) + " out of range (case has " + std::to_string(c.n_frames()) + ")");
  }
  const auto inc = build_incidence(c.connectivity, c.n_nodes());
  const auto fi = static_cast<Eigen::Index>(f);
  const auto rs = attenuation_report(c.s.row(fi).transpose(), inc);
  const auto rp = attenuation_report(c.peeq.row(fi).transpose(), inc);
  const json j = {{"case", case_dir}, {"frame", f}, {"s", attenuation_json(rs)}, {"peeq", attenuation_json(rp)}};
  if (!out_arg.empty()) {
    const fs::path out(out_arg);
    fs::create_directories(out);
    blob::write_json(out / "projection_study.json", j);
    const auto e = c.n_elems();
    json blobs = json::array();
    blobs.push_back(blob::to_json(blob::write_f64(out, "difference_s", {e}, rs.abs_difference.data())));
    blobs.push_back(blob::to_json(blob::write_f64(out, "difference_peeq", {e}, rp.abs_difference.data())));
    blob::write_json(out / "manifest.json", {{"schema_version", 1},
                                             {"kind", "projection_difference"},
                                             {"source_case", case_dir},
                                             {"frame", f},
                                             {"n_elems", e},
                                             {"dtype", "f64"},
                                             {"endianness", "little"},
                                             {"blobs", blobs}});
    Manifest m{"project-study"};
    m.config = {{"frame", f}};
    m.inputs = {{"case", case_dir}};
    m.outputs = {{"report", (out / "projection_study.json").string()},
                 {"difference_s", (out / "difference_s.bin").string()},
                 {"difference_peeq", (out / "difference_peeq.bin").string()}};
    m.write(out);
  }
  std::cout << j.dump(2) << "\n";
  return kOk;
}

int run_graph_stats(const std::string& case_dir, const std::vector<std::size_t>& grid, bool power) {
  std::vector<Hex> conn;
  std::size_t n_nodes = 0;
  if (!case_dir.empty()) {
    const auto c = load_case(case_dir);
    conn = c.connectivity;
    n_nodes = c.n_nodes();
  } else if (grid.size() == 3) {
    auto m = structured_hex_grid(grid[0], grid[1], grid[2]);
    conn = std::move(m.connectivity);
    n_nodes = static_cast<std::size_t>(m.coords.rows());
  } else {
    throw CaseError(CaseError::Kind::InvalidInput, "give --case or --grid nx ny nz");
  }
  const auto g = build_dual_graph(conn, n_nodes, power ? LambdaMaxMode::PowerIteration : LambdaMaxMode::Fixed);
  auto histogram = [](const std::vector<std::uint32_t>& d) {
    std::map<std::uint32_t, std::size_t> h;
    for (auto v : d) ++h[v];
    json j = json::object();
    for (auto [k, v] : h) j[std::to_string(k)] = v;
    return j;
  };
  const json j = {{"nodes", n_nodes},
                  {"elements", conn.size()},
                  {"node_edges", g.nodes.undirected_edge_count()},
                  {"element_edges", g.elements.undirected_edge_count()},
                  {"node_degree_histogram", histogram(g.nodes.degrees())},
                  {"element_degree_histogram", histogram(g.elements.degrees())},
                  {"node_lambda_max", g.node_laplacian.lambda_max},
                  {"element_lambda_max", g.element_laplacian.lambda_max}};
  std::cout << j.dump(2) << "\n";
  return kOk;
}

int run_grad_check(std::size_t hidden, std::size_t frames, double h, std::size_t per_tensor, double tol,
                   std::uint64_t seed, const std::string& variant) {
  const auto c = synth::single_hex_case(frames, seed);
  std::vector<CaseTrajectory> cases{c};
  const auto stats = compute_norm_stats(cases);
  const auto prepared = prepare_case(c, stats);
  const PreparedCase* ptr = &prepared;
  const auto batch = make_batch(std::span<const PreparedCase* const>(&ptr, 1), stats);
  ModelConfig mc;
  mc.hidden = hidden;
  mc.mlp_hidden = hidden;
  mc.seed = seed;
  mc.variant = variant_from_string(variant);
  const auto p = init_params(mc);
  const auto r = finite_difference_check(p, batch, LossWeights{}, h, per_tensor, seed);
  const bool pass = r.max_rel_error <= tol;
  std::cout << json{{"checked", r.checked},
                    {"max_rel_error", r.max_rel_error},
                    {"max_abs_error", r.max_abs_error},
                    {"worst_param", r.worst_param},
                    {"worst_index", r.worst_index},
                    {"tolerance", tol},
                    {"pass", pass}}
                   .dump(2)
            << "\n";
  return pass ? kOk : kDivergence;
}

int report_error(const std::string& kind, const std::string& message, int code) {
  std::cerr << json{{"error", {{"kind", kind}, {"message", message}, {"exit_code", code}}}}.dump() << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-graph surrogate for four-point bending: data generation, training and evaluation"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Suppress per-epoch progress on stderr");

  // gen
  std::string gen_out, gen_scale = "full";
  std::size_t gen_count = 190, gen_frames = 21;
  std::uint64_t gen_seed = 0;
  int gen_max = 200, gen_step = 25;
  std::vector<std::string> gen_offsets;
  auto* gen = app.add_subcommand("gen", "Generate a synthetic campaign");
  gen->add_option("-o,--out", gen_out, "Output directory [$DGS_OUTPUT_ROOT/campaign]");
  gen->add_option("--mesh-scale", gen_scale, "full (25 mm mesh) or tiny (12 x 2 x 2 cells)")
      ->check(CLI::IsMember({"full", "tiny"}))
      ->capture_default_str();
  gen->add_option("--count", gen_count, "Number of sampled offset pairs")->capture_default_str();
  gen->add_option("--seed", gen_seed, "Sampling seed")->capture_default_str();
  gen->add_option("--frames", gen_frames, "Frames per case")->capture_default_str();
  gen->add_option("--max-offset", gen_max, "Largest block relocation (mm)")->capture_default_str();
  gen->add_option("--step", gen_step, "Offset grid step (mm)")->capture_default_str();
  gen->add_option("--offsets", gen_offsets, "Explicit offset pairs o1,o2 (overrides sampling)");

  // split
  std::string split_campaign;
  std::uint64_t split_seed = 0;
  std::vector<double> split_ratios;
  auto* split = app.add_subcommand("split", "Assign a case-level train/validation/test split");
  split->add_option("--campaign", split_campaign, "Campaign directory or campaign.json")->required();
  split->add_option("--seed", split_seed, "Shuffle seed")->capture_default_str();
  split->add_option("--ratios", split_ratios, "Train, validation and test fractions [0.7 0.15 0.15]")->expected(3);

  // train
  std::string train_campaign, train_out;
  TrainFlags train_flags;
  auto* trn = app.add_subcommand("train", "Train a model; writes checkpoint/, history.csv and run_manifest.json");
  trn->add_option("--campaign", train_campaign, "Campaign directory")->required();
  trn->add_option("-o,--out", train_out, "Run directory [$DGS_OUTPUT_ROOT/run]");
  train_flags.attach(trn, true);

  // eval
  std::string eval_ck, eval_campaign, eval_subset = "test", eval_out;
  auto* ev = app.add_subcommand("eval", "Free-rollout metrics of a checkpoint");
  ev->add_option("--checkpoint", eval_ck, "Checkpoint directory")->required();
  ev->add_option("--campaign", eval_campaign, "Campaign directory")->required();
  ev->add_option("--subset", eval_subset, "train, validation, test or all")
      ->check(CLI::IsMember({"train", "validation", "test", "all"}))
      ->capture_default_str();
  ev->add_option("-o,--out", eval_out, "Output directory [$DGS_OUTPUT_ROOT/eval]");

  // rollout
  std::string ro_ck, ro_case, ro_out;
  bool ro_teacher = false;
  auto* ro = app.add_subcommand("rollout", "Predict one case; writes fields and force_deflection.csv");
  ro->add_option("--checkpoint", ro_ck, "Checkpoint directory")->required();
  ro->add_option("--case", ro_case, "Case directory")->required();
  ro->add_option("-o,--out", ro_out, "Output directory [$DGS_OUTPUT_ROOT/rollout]");
  ro->add_flag("--teacher", ro_teacher, "Feed back ground-truth history instead of predictions");

  // ablate
  std::string ab_campaign, ab_out;
  std::vector<std::uint64_t> ab_seeds{0, 1, 2};
  TrainFlags ab_flags;
  auto* ab = app.add_subcommand("ablate", "Train dual and single-graph models per seed and compare element RMSE");
  ab->add_option("--campaign", ab_campaign, "Campaign directory")->required();
  ab->add_option("-o,--out", ab_out, "Output directory [$DGS_OUTPUT_ROOT/ablation]");
  ab->add_option("--seeds", ab_seeds, "Seeds")->capture_default_str();
  ab_flags.attach(ab, false);

  // project-study
  std::string ps_case, ps_out;
  std::optional<std::size_t> ps_frame;
  auto* ps = app.add_subcommand("project-study", "E->N->E peak attenuation of a stored case");
  ps->add_option("--case", ps_case, "Case directory")->required();
  ps->add_option("--frame", ps_frame, "Frame index [last]");
  ps->add_option("-o,--out", ps_out, "Also write projection_study.json here");

  // graph-stats
  std::string gs_case;
  std::vector<std::size_t> gs_grid;
  bool gs_power = false;
  auto* gs = app.add_subcommand("graph-stats", "Node/element graph counts and degree histograms");
  gs->add_option("--case", gs_case, "Case directory");
  gs->add_option("--grid", gs_grid, "Structured grid cells nx ny nz")->expected(3);
  gs->add_flag("--power-iteration", gs_power, "Estimate lambda_max instead of using 2");

  // grad-check
  std::size_t gc_hidden = 16, gc_frames = 3, gc_per_tensor = 0;
  double gc_h = 1e-6, gc_tol = 1e-4;
  std::uint64_t gc_seed = 0;
  std::string gc_variant = "dual";
  auto* gc = app.add_subcommand("grad-check", "Finite-difference audit of the full-model loss gradient");
  gc->add_option("--hidden", gc_hidden, "Hidden width")->capture_default_str();
  gc->add_option("--frames", gc_frames, "Frames")->capture_default_str();
  gc->add_option("--step", gc_h, "Central-difference step")->capture_default_str();
  gc->add_option("--per-tensor", gc_per_tensor, "Entries sampled per tensor (0 = all)")->capture_default_str();
  gc->add_option("--tolerance", gc_tol, "Largest admissible relative error")->capture_default_str();
  gc->add_option("--seed", gc_seed, "Seed")->capture_default_str();
  gc->add_option("--variant", gc_variant, "dual or single")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("usage", e.what(), kUsage);
  }

  try {
    if (*gen) return run_gen(gen_out, gen_scale, gen_count, gen_seed, gen_frames, gen_max, gen_step, gen_offsets);
    if (*split) return run_split(split_campaign, split_seed, split_ratios);
    if (*trn) return run_train(train_campaign, train_out, train_flags, quiet);
    if (*ev) return run_eval(eval_ck, eval_campaign, eval_subset, eval_out);
    if (*ro) return run_rollout(ro_ck, ro_case, ro_out, ro_teacher);
    if (*ab) return run_ablate(ab_campaign, ab_out, ab_flags, ab_seeds, quiet);
    if (*ps) return run_project_study(ps_case, ps_frame, ps_out);
    if (*gs) return run_graph_stats(gs_case, gs_grid, gs_power);
    if (*gc) return run_grad_check(gc_hidden, gc_frames, gc_h, gc_per_tensor, gc_tol, gc_seed, gc_variant);
  } catch (const DivergenceError& e) {
    return report_error("divergence", e.what(), kDivergence);
  } catch (const CaseError& e) {
    return report_error(to_string(e.kind()), e.what(), kData);
  } catch (const ad::ShapeError& e) {
    return report_error("shape", e.what(), kData);
  } catch (const json::exception& e) {
    return report_error("json", e.what(), kData);
  } catch (const fs::filesystem_error& e) {
    return report_error("io", e.what(), kData);
  } catch (const std::exception& e) {
    return report_error("internal", e.what(), kFailure);
  }
  return kUsage;
}
