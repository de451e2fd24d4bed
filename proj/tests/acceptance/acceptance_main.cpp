// Acceptance suite: one pass/fail line per criterion, shared trained models
// where criteria overlap, non-zero exit code on any failure.
//
// Budgets are desk-scale; every tolerance is pinned here in code. Long
// criteria print progress to stderr. Run with --only N[,M...] to restrict.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <vector>

#include "hemoflow/autodiff.hpp"
#include "hemoflow/eval.hpp"
#include "hemoflow/geometry.hpp"
#include "hemoflow/nn.hpp"
#include "hemoflow/operators.hpp"
#include "hemoflow/parallel.hpp"
#include "hemoflow/physics.hpp"
#include "hemoflow/training.hpp"

using namespace hemoflow;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int id;
  std::string name;
  bool pass;
  std::string detail;
};

std::vector<Outcome> g_outcomes;

void report(int id, const std::string& name, bool pass,
            const std::string& detail) {
  g_outcomes.push_back({id, name, pass, detail});
  std::cout << (pass ? "[PASS] " : "[FAIL] ") << "criterion " << id << " ("
            << name << "): " << detail << std::endl;
}

double now_s() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream ss;
  ss.precision(prec);
  ss << v;
  return ss.str();
}

// --- shared experiment fabric -------------------------------------------------

constexpr double kPipeRadius = 0.010065;
constexpr double kPipeLength = 0.26009;
const std::vector<std::uint64_t> kSeeds = {0, 1, 2};

geom::DomainSpec pipe_domain() {
  geom::DomainSpec d;
  d.kind = geom::DomainKind::kStraightPipe;
  d.radius = kPipeRadius;
  d.length = kPipeLength;
  return d;
}

physics::FluidParams fluid_at(double v) {
  physics::FluidParams f;
  f.rho = 1060.0;
  f.mu = 0.00399;
  f.v_max = v;
  f.radius = kPipeRadius;
  f.length = kPipeLength;
  return f;
}

// All-techniques-on desk network (criterion 3 settings).
nn::NetworkSpec all_on_spec() {
  nn::NetworkSpec spec;
  spec.input_dim = 3;
  spec.output_dim = 4;
  spec.hidden_layers = 4;
  spec.hidden_width = 64;
  spec.kind = nn::ArchKind::kModifiedMlp;
  spec.fourier = nn::FourierOptions{16, 1.0};
  spec.rwf = nn::RwfOptions{0.5, 0.1};
  return spec;
}

nn::NetworkSpec all_off_spec() {
  nn::NetworkSpec spec = all_on_spec();
  spec.kind = nn::ArchKind::kMlp;
  spec.fourier.reset();
  spec.rwf.reset();
  return spec;
}

train::TrainConfig all_on_config(std::uint64_t seed, long iterations) {
  train::TrainConfig cfg;
  cfg.kind = train::ModelKind::kPinn;
  cfg.iterations = iterations;
  cfg.batch_size = 64;
  cfg.nondimensional = true;
  cfg.grad_norm.enabled = true;
  cfg.adam.lr_decay = true;
  cfg.seed = seed;
  cfg.log_every = 250;
  return cfg;
}

train::TrainConfig all_off_config(std::uint64_t seed, long iterations) {
  train::TrainConfig cfg = all_on_config(seed, iterations);
  cfg.nondimensional = false;
  cfg.grad_norm.enabled = false;
  cfg.adam.lr_decay = false;
  return cfg;
}

geom::SplitClouds make_dataset(double v, std::uint64_t seed,
                               const geom::DataScenario* scenario,
                               double noise_level) {
  geom::StratumCounts counts;
  counts.inlet = counts.wall = counts.outlet = 2000;
  counts.volume = 20000;
  auto cloud = geom::sample_domain(pipe_domain(), counts, v, seed);
  const physics::PoiseuilleFlow oracle{fluid_at(v), 0.0};
  geom::apply_oracle_labels(cloud, oracle);
  auto parts = geom::split(cloud, {0.68, 0.02, 0.30}, seed + 1);
  if (scenario && scenario->kind != geom::DataScenario::Kind::kNone) {
    geom::extract_data_scenario(parts.train, pipe_domain(), *scenario, oracle,
                                seed + 2);
    if (noise_level > 0.0)
      geom::inject_noise(parts.train, noise_level, v, seed + 3);
  }
  return parts;
}

std::vector<Vec3> interior_points(double v, std::size_t n,
                                  std::uint64_t seed) {
  geom::StratumCounts counts;
  counts.volume = n;
  return geom::sample_domain(pipe_domain(), counts, v, seed).volume.points;
}

const fs::path kWorkDir = fs::temp_directory_path() / "hemoflow_acceptance";

// Trained PINN cache shared across criteria 3, 4, 6 and 11.
struct TrainedPinn {
  train::PinnRun run;
  eval::FieldErrors errors;
};

std::map<std::string, TrainedPinn> g_pinn_cache;

const TrainedPinn& train_and_eval(const std::string& tag,
                                  const train::TrainConfig& cfg,
                                  const nn::NetworkSpec& spec,
                                  const geom::SplitClouds& clouds,
                                  double v, bool shift_correct) {
  auto it = g_pinn_cache.find(tag);
  if (it != g_pinn_cache.end()) return it->second;
  std::cerr << "  [train " << tag << "] " << cfg.iterations
            << " iterations...\n";
  const std::string metrics = (kWorkDir / (tag + ".csv")).string();
  TrainedPinn entry;
  entry.run = cfg.kind == train::ModelKind::kWuPinn
                  ? train::warmup_train(cfg, spec, clouds, fluid_at(v), metrics)
                  : train::train_pinn(cfg, spec, clouds, fluid_at(v), metrics);
  entry.errors = eval::evaluate_network(
      entry.run.best_params, {fluid_at(v), 0.0}, clouds.test.volume.points,
      cfg.nondimensional, shift_correct);
  std::cerr << "  [train " << tag << "] wall " << fmt(entry.run.stats.wall_seconds)
            << " s, vel err " << fmt(entry.errors.velocity) << ", pres err "
            << fmt(entry.errors.pressure) << "\n";
  return g_pinn_cache.emplace(tag, std::move(entry)).first->second;
}

// Trained operator cache shared across criteria 8, 9 and 10.
struct TrainedOperators {
  std::vector<train::OperatorRun> pi, plain;  // one per seed
  operators::SensorLayout sensors;
  std::vector<double> train_v, test_v;
  double ref_v = 0.15;
};

std::optional<TrainedOperators> g_operators;

const TrainedOperators& trained_operators() {
  if (g_operators) return *g_operators;
  TrainedOperators t;
  t.train_v = {0.04, 0.06, 0.10, 0.12, 0.15};
  t.test_v = {0.05, 0.08, 0.13};
  const auto domain = pipe_domain();
  const auto spec = operators::OperatorSpec::standard(64, 64, 64, 3, 64, 4,
                                                      128, 0);
  t.sensors = operators::SensorLayout::make(domain, 64, 64);

  std::vector<geom::StratifiedPointCloud> train_clouds, val_clouds;
  geom::DataScenario sc;
  sc.kind = geom::DataScenario::Kind::kRandom;
  sc.fraction = 0.01;
  for (std::size_t i = 0; i < t.train_v.size(); ++i) {
    auto parts = make_dataset(t.train_v[i], 900 + 50 * i, &sc, 0.0);
    train_clouds.push_back(std::move(parts.train));
    val_clouds.push_back(std::move(parts.val));
  }
  const auto train_bundle =
      operators::build_triplets(train_clouds, t.sensors, domain, 0.0);
  const auto val_bundle =
      operators::build_triplets(val_clouds, t.sensors, domain, 0.0);

  for (std::uint64_t seed : kSeeds) {
    for (const bool pi : {true, false}) {
      train::TrainConfig cfg;
      cfg.kind =
          pi ? train::ModelKind::kPiDeepONet : train::ModelKind::kDeepONet;
      cfg.iterations = 6000;
      cfg.batch_size = 64;
      cfg.nondimensional = true;
      cfg.grad_norm.enabled = true;
      cfg.seed = seed;
      cfg.log_every = 250;
      std::cerr << "  [train operator " << (pi ? "pi" : "data") << " seed "
                << seed << "] 6000 iterations...\n";
      auto run = train::train_operator(cfg, spec, train_bundle, val_bundle,
                                       fluid_at(t.ref_v));
      std::cerr << "    wall " << fmt(run.stats.wall_seconds) << " s, final "
                << fmt(run.stats.final_total_loss, 6) << "\n";
      (pi ? t.pi : t.plain).push_back(std::move(run));
    }
  }
  g_operators = std::move(t);
  return *g_operators;
}

std::vector<double> inlet_sensor_row(const operators::SensorLayout& sensors,
                                     double v) {
  std::vector<double> s1(sensors.inlet.size());
  for (std::size_t k = 0; k < s1.size(); ++k)
    s1[k] = physics::parabolic_inlet(sensors.inlet[k], v, kPipeRadius)[1];
  return s1;
}

// --- criteria ------------------------------------------------------------------

void criterion_1() {
  const double t0 = now_s();
  nn::NetworkSpec spec;
  spec.input_dim = 3;
  spec.output_dim = 1;
  spec.hidden_layers = 3;
  spec.hidden_width = 32;
  spec.init_seed = 7;
  const nn::ParamStore store = nn::ParamStore::init(spec);

  ad::Tape tape;
  const auto graph = nn::build_network_graph(tape, spec, store.fourier_b());
  tape.set_root(graph.outputs[0]);
  ad::Workspace ws(tape);
  ws.bind_range(graph.param_base, store.values());

  nn::FieldEvaluator fd_eval(store);
  auto net_fast = [&](std::vector<double> x) { return fd_eval(x)[0]; };

  Rng rng(42);
  int first_fail = 0, second_fail = 0;
  double max_first_rel = 0.0, max_second_rel = 0.0;
  for (int p = 0; p < 100; ++p) {
    std::vector<double> x = {rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5),
                             rng.uniform(-1.5, 1.5)};
    for (int i = 0; i < 3; ++i) ws.bind(graph.x[i], x[i]);
    ws.forward();
    ws.reverse(graph.outputs[0]);
    for (int j = 0; j < 3; ++j) {
      const double ad_g = ws.adjoint(graph.x[j]);
      auto slice = [&](double t) {
        std::vector<double> p2 = x;
        p2[j] = t;
        return net_fast(p2);
      };
      const double fd = (slice(x[j] + 1e-4) - slice(x[j] - 1e-4)) / 2e-4;
      const double rel = std::abs(ad_g - fd) / (std::abs(fd) + 1e-12);
      max_first_rel = std::max(max_first_rel, rel);
      if (std::abs(ad_g - fd) > 1e-9 + 1e-5 * std::abs(fd)) ++first_fail;

      const double h2 =
          ad::input_hessian_diag(tape, ws, graph.outputs[0], graph.x[j]);
      const double fd2 =
          (slice(x[j] + 1e-3) - 2.0 * slice(x[j]) + slice(x[j] - 1e-3)) / 1e-6;
      const double rel2 = std::abs(h2 - fd2) / (std::abs(fd2) + 1e-9);
      max_second_rel = std::max(max_second_rel, rel2);
      if (std::abs(h2 - fd2) > 1e-8 + 1e-4 * std::abs(fd2)) ++second_fail;
    }
  }
  const double elapsed = now_s() - t0;
  const bool pass =
      first_fail == 0 && second_fail == 0 && elapsed < 10.0;
  report(1, "autodiff vs finite differences", pass,
         "max first rel " + fmt(max_first_rel) + ", max second rel " +
             fmt(max_second_rel) + ", runtime " + fmt(elapsed) + " s");
}

void criterion_2() {
  const double t0 = now_s();
  const physics::PoiseuilleFlow flow{fluid_at(0.1), 0.0};
  const auto field =
      physics::poiseuille_field(flow, physics::Frame::kDimensionless);
  Rng rng(11);
  double max_res = 0.0;
  const double d = flow.fluid.diameter();
  for (int i = 0; i < 1000; ++i) {
    double x1, x3;
    do {
      x1 = rng.uniform(-kPipeRadius, kPipeRadius);
      x3 = rng.uniform(-kPipeRadius, kPipeRadius);
    } while (x1 * x1 + x3 * x3 >= kPipeRadius * kPipeRadius);
    const double x2 = rng.uniform(0.0, kPipeLength);
    const auto res = physics::nse_residual(
        field, {x1 / d, x2 / d, x3 / d}, flow.fluid,
        physics::Frame::kDimensionless);
    for (double r : res) max_res = std::max(max_res, std::abs(r));
  }
  const double elapsed = now_s() - t0;
  const bool pass = max_res <= 1e-9 && elapsed < 5.0;
  report(2, "oracle residual", pass,
         "max |residual| " + fmt(max_res, 3) + " over 1000 points, runtime " +
             fmt(elapsed) + " s");
}

void criterion_3() {
  int ok = 0;
  std::string detail;
  for (std::uint64_t seed : kSeeds) {
    const auto clouds = make_dataset(0.1, 10 + seed, nullptr, 0.0);
    const auto& model =
        train_and_eval("c3-seed" + std::to_string(seed),
                       all_on_config(seed, 20000), all_on_spec(), clouds, 0.1,
                       /*shift_correct=*/true);
    const bool seed_ok =
        model.errors.velocity < 0.05 && model.errors.pressure < 0.10;
    ok += seed_ok ? 1 : 0;
    detail += "seed" + std::to_string(seed) + ": vel " +
              fmt(model.errors.velocity) + " pres " +
              fmt(model.errors.pressure) + " wall " +
              fmt(model.run.stats.wall_seconds / 60.0) + " min; ";
  }
  report(3, "data-free pinn accuracy", ok >= 2,
         detail + std::to_string(ok) + "/3 seeds under 5%/10%");
}

void criterion_4() {
  int ok = 0;
  std::string detail;
  for (std::uint64_t seed : kSeeds) {
    const auto clouds = make_dataset(0.1, 10 + seed, nullptr, 0.0);
    const auto& on =
        train_and_eval("c3-seed" + std::to_string(seed),
                       all_on_config(seed, 20000), all_on_spec(), clouds, 0.1,
                       true);
    const auto& off =
        train_and_eval("c4off-seed" + std::to_string(seed),
                       all_off_config(seed, 20000), all_off_spec(), clouds,
                       0.1, true);
    const bool seed_ok = on.errors.velocity <= off.errors.velocity;
    ok += seed_ok ? 1 : 0;
    detail += "seed" + std::to_string(seed) + ": on " +
              fmt(on.errors.velocity) + " vs off " +
              fmt(off.errors.velocity) + "; ";
  }
  report(4, "ablation ordering", ok >= 2,
         detail + std::to_string(ok) + "/3 seeds ordered");
}

void criterion_5() {
  // Noise study settings mirror the data-driven comparison: plain MLP,
  // non-dimensional, grad-norm, lr decay; random data scenario with 10%
  // noise; identical budget for both models.
  geom::DataScenario sc;
  sc.kind = geom::DataScenario::Kind::kRandom;
  sc.fraction = 0.003;
  int ok = 0;
  std::string detail;
  for (std::uint64_t seed : kSeeds) {
    const auto clouds = make_dataset(0.1, 50 + seed, &sc, 0.10);
    train::TrainConfig cfg = all_on_config(seed, 8000);
    nn::NetworkSpec spec = all_off_spec();  // plain MLP width 64

    train::TrainConfig pinn_cfg = cfg;
    pinn_cfg.kind = train::ModelKind::kPinn;
    const auto& pinn =
        train_and_eval("c5pinn-seed" + std::to_string(seed), pinn_cfg, spec,
                       clouds, 0.1, false);
    train::TrainConfig nn_cfg = cfg;
    nn_cfg.kind = train::ModelKind::kDeepNN;
    const auto& deepnn =
        train_and_eval("c5nn-seed" + std::to_string(seed), nn_cfg, spec,
                       clouds, 0.1, false);
    const bool seed_ok = pinn.errors.velocity <= deepnn.errors.velocity;
    ok += seed_ok ? 1 : 0;
    detail += "seed" + std::to_string(seed) + ": pinn " +
              fmt(pinn.errors.velocity) + " vs deepnn " +
              fmt(deepnn.errors.velocity) + "; ";
  }
  report(5, "pinn vs deepnn under noise", ok >= 2,
         detail + std::to_string(ok) + "/3 seeds ordered");
}

void criterion_6() {
  geom::DataScenario sc;
  sc.kind = geom::DataScenario::Kind::kRandom;
  sc.fraction = 0.003;
  int accuracy_ok = 0, time_ok = 0;
  std::string detail;
  for (std::uint64_t seed : kSeeds) {
    const auto clouds = make_dataset(0.1, 70 + seed, &sc, 0.0);
    const nn::NetworkSpec spec = all_off_spec();

    train::TrainConfig full_cfg = all_on_config(seed, 20000);
    full_cfg.nondimensional = true;
    const auto& full =
        train_and_eval("c6full-seed" + std::to_string(seed), full_cfg, spec,
                       clouds, 0.1, false);

    train::TrainConfig wu_cfg = full_cfg;
    wu_cfg.kind = train::ModelKind::kWuPinn;
    wu_cfg.warmup_iterations = 15000;
    const auto& wu = train_and_eval("c6wu-seed" + std::to_string(seed),
                                    wu_cfg, spec, clouds, 0.1, false);

    const double phase2_wall =
        wu.run.stats.wall_seconds - wu.run.stats.warmup_wall_seconds;
    const bool acc = wu.errors.velocity <= 2.0 * full.errors.velocity;
    const bool fast = phase2_wall < 0.40 * full.run.stats.wall_seconds;
    accuracy_ok += acc ? 1 : 0;
    time_ok += fast ? 1 : 0;
    detail += "seed" + std::to_string(seed) + ": wu " +
              fmt(wu.errors.velocity) + " vs full " +
              fmt(full.errors.velocity) + ", phase2 " + fmt(phase2_wall) +
              "s vs full " + fmt(full.run.stats.wall_seconds) + "s; ";
  }
  report(6, "wu-pinn budget equivalence", accuracy_ok >= 2 && time_ok >= 2,
         detail + std::to_string(accuracy_ok) + "/3 accuracy, " +
             std::to_string(time_ok) + "/3 phase-2 wall");
}

void criterion_7() {
  const auto clouds = make_dataset(0.1, 90, nullptr, 0.0);
  geom::StratifiedPointCloud cloud = clouds.train;
  train::nondimensionalize_cloud(cloud, fluid_at(0.1));
  nn::NetworkSpec spec = all_on_spec();
  spec.init_seed = 4;
  const nn::ParamStore params = nn::ParamStore::init(spec);
  train::PinnLossEvaluator evaluator(
      spec, params.fourier_b(),
      physics::ResidualCoeffs::from(fluid_at(0.1),
                                    physics::Frame::kDimensionless),
      true);
  Rng rng(5);
  const auto batch = train::sample_batch(cloud, 64, rng);
  const auto ev = evaluator.evaluate(params.values(), batch, true);

  std::array<double, train::kTermCount> norms{};
  for (int i = 0; i < train::kTermCount; ++i) {
    if (!ev.losses.active[i]) continue;
    double s = 0.0;
    for (double g : ev.grads[i]) s += g * g;
    norms[i] = std::sqrt(s);
  }
  std::array<double, train::kTermCount> lambda;
  lambda.fill(1.0);
  const auto next =
      train::grad_norm_update(lambda, norms, ev.losses.active, 0.0);
  double mean = 0.0;
  int card = 0;
  for (int i = 0; i < train::kTermCount; ++i) {
    if (!ev.losses.active[i] || norms[i] == 0.0) continue;
    mean += next[i] * norms[i];
    ++card;
  }
  mean /= card;
  double max_rel = 0.0;
  for (int i = 0; i < train::kTermCount; ++i) {
    if (!ev.losses.active[i] || norms[i] == 0.0) continue;
    max_rel = std::max(max_rel, std::abs(next[i] * norms[i] - mean) / mean);
  }
  report(7, "grad-norm equality", max_rel <= 1e-10,
         "max relative deviation " + fmt(max_rel, 3) + " across " +
             std::to_string(card) + " active terms");
}

void criterion_8() {
  const auto& ops = trained_operators();
  const auto& model = ops.pi.front().best_params;  // first seed
  std::string detail;
  bool pass = true;
  for (double v : ops.test_v) {
    const auto s1 = inlet_sensor_row(ops.sensors, v);
    const std::vector<double> s2(ops.sensors.outlet.size(), 0.0);
    const auto points = interior_points(v, 4096, 12345);
    // The model was trained in the reference scaling of the largest
    // training velocity; evaluate in that scaling against this V's oracle.
    const physics::FluidParams ref = fluid_at(ops.ref_v);
    const auto err = eval::evaluate_operator(
        model, {fluid_at(v), 0.0}, s1, s2, points,
        /*dimensionless=*/true, /*shift=*/false, &ref);
    pass = pass && err.velocity < 0.05 && err.pressure < 0.10;
    detail += "V=" + fmt(v, 3) + ": vel " + fmt(err.velocity) + " pres " +
              fmt(err.pressure) + "; ";
  }
  report(8, "operator generalization", pass, detail);
}

void criterion_9() {
  const auto& ops = trained_operators();
  int ok = 0;
  std::string detail;
  for (std::size_t s = 0; s < kSeeds.size(); ++s) {
    double pi_res = 0.0, plain_res = 0.0;
    for (double v : ops.test_v) {
      const auto s1 = inlet_sensor_row(ops.sensors, v);
      const std::vector<double> s2(ops.sensors.outlet.size(), 0.0);
      const auto points = interior_points(v, 10000, 777 + 13 * s);
      pi_res += eval::operator_mean_residual(ops.pi[s].best_params, s1, s2,
                                             points, fluid_at(ops.ref_v),
                                             true);
      plain_res += eval::operator_mean_residual(ops.plain[s].best_params, s1,
                                                s2, points,
                                                fluid_at(ops.ref_v), true);
    }
    pi_res /= ops.test_v.size();
    plain_res /= ops.test_v.size();
    const bool seed_ok = pi_res < plain_res;
    ok += seed_ok ? 1 : 0;
    detail += "seed" + std::to_string(s) + ": pi " + fmt(pi_res, 3) +
              " vs data-only " + fmt(plain_res, 3) + "; ";
  }
  report(9, "pi-deeponet physics consistency", ok >= 2,
         detail + std::to_string(ok) + "/3 seeds ordered");
}

void criterion_10() {
  const auto& ops = trained_operators();
  const double t0 = now_s();
  const double v = 0.08;
  const auto s1_dim = inlet_sensor_row(ops.sensors, v);
  const std::vector<double> s2_dim(ops.sensors.outlet.size(), 0.0);

  // 10^6 query points on a cylindrical lattice (generation included in the
  // end-to-end pipeline timing).
  const std::size_t n = 1000000;
  std::vector<Vec3> points;
  points.reserve(n);
  Rng rng(31);
  for (std::size_t i = 0; i < n; ++i) {
    const double r = kPipeRadius * std::sqrt(rng.uniform());
    const double phi = 6.283185307179586 * rng.uniform();
    points.push_back({r * std::cos(phi), rng.uniform(0.0, kPipeLength),
                      r * std::sin(phi)});
  }

  const double t_infer0 = now_s();
  const auto field =
      eval::predict_field(ops.pi.front().best_params, s1_dim, s2_dim, points,
                          fluid_at(ops.ref_v), true);
  const double infer_s = now_s() - t_infer0;
  const double total_s = now_s() - t0;
  const double pts_per_s = static_cast<double>(n) / infer_s;
  const bool pass = total_s < 300.0 && field.size() == n;
  report(10, "inference throughput", pass,
         fmt(pts_per_s / 1e3, 4) + "k points/s (" + fmt(infer_s) +
             " s for 1e6 points, pipeline " + fmt(total_s) + " s)");

  // Record the measurement in the report CSV next to the work dir.
  std::vector<eval::EvalReport> rows;
  eval::EvalReport r;
  r.model = "pi-deeponet";
  r.v_tag = v;
  r.split = "inference";
  r.infer_seconds = infer_s;
  r.stop_iter = static_cast<long>(pts_per_s);
  rows.push_back(r);
  eval::write_report_csv(rows, (kWorkDir / "inference_report.csv").string());
}

void criterion_11() {
  // Baseline: the criterion-3 seed-0 model (V = 0.10, data-free, all on).
  const auto base_clouds = make_dataset(0.1, 10, nullptr, 0.0);
  const auto& baseline =
      train_and_eval("c3-seed0", all_on_config(0, 20000), all_on_spec(),
                     base_clouds, 0.1, true);

  const long budget = 6000;
  int ok = 0;
  std::string detail;
  for (std::uint64_t seed : kSeeds) {
    const auto clouds = make_dataset(0.12, 110 + seed, nullptr, 0.0);
    train::TrainConfig cold_cfg = all_on_config(seed, budget);
    const auto& cold =
        train_and_eval("c11cold-seed" + std::to_string(seed), cold_cfg,
                       all_on_spec(), clouds, 0.12, true);

    train::TrainConfig warm_cfg = all_on_config(seed, budget);
    warm_cfg.target_total_loss = cold.run.stats.min_total_loss;
    std::cerr << "  [transfer seed " << seed << "] target loss "
              << fmt(cold.run.stats.min_total_loss, 6) << "\n";
    const auto warm = train::transfer_train(
        warm_cfg, baseline.run.best_params.spec(), baseline.run.best_params,
        clouds, fluid_at(0.12),
        (kWorkDir / ("c11warm" + std::to_string(seed) + ".csv")).string());
    const bool seed_ok = warm.stats.stop_iter < budget;
    ok += seed_ok ? 1 : 0;
    detail += "seed" + std::to_string(seed) + ": stop " +
              std::to_string(warm.stats.stop_iter) + "/" +
              std::to_string(budget) + "; ";
  }
  report(11, "transfer-learning speedup", ok >= 2,
         detail + std::to_string(ok) + "/3 seeds stopped early");
}

void criterion_12() {
  bool pass = true;
  std::string detail;
  for (int n : {1, 2, 8}) {
    for (int p : {1, 5, 100}) {
      std::vector<geom::StratifiedPointCloud> clouds;
      for (int i = 0; i < n; ++i) {
        geom::StratumCounts counts;
        counts.inlet = counts.wall = counts.outlet = p;
        counts.volume = p;
        auto cloud = geom::sample_domain(pipe_domain(), counts,
                                         0.04 + 0.01 * i, 500 + i);
        geom::apply_oracle_labels(cloud,
                                  {fluid_at(0.04 + 0.01 * i), 0.0});
        clouds.push_back(std::move(cloud));
      }
      const auto sensors = operators::SensorLayout::make(pipe_domain(), 9, 4);
      const auto bundle =
          operators::build_triplets(clouds, sensors, pipe_domain(), 0.0);
      const auto& vol = bundle.stratum(geom::StratumKind::kVolume);
      const std::size_t rows = static_cast<std::size_t>(n) * p;
      bool shape_ok = vol.rows() == rows &&
                      vol.sensors1.size() == rows * 9 &&
                      vol.sensors2.size() == rows * 4 &&
                      vol.targets.size() == rows;
      bool repeat_ok = true;
      for (std::size_t r = 0; r < rows && repeat_ok; ++r) {
        const std::size_t first = vol.sample_index[r] *
                                  static_cast<std::size_t>(p);
        for (int k = 0; k < 9; ++k)
          repeat_ok = repeat_ok &&
                      vol.sensors1[r * 9 + k] == vol.sensors1[first * 9 + k];
      }
      if (!(shape_ok && repeat_ok)) {
        pass = false;
        detail += "N=" + std::to_string(n) + ",P=" + std::to_string(p) +
                  " violated; ";
      }
    }
  }
  report(12, "triplet layout conformance", pass,
         pass ? "dimension and repetition rules hold for N in {1,2,8}, P in "
                "{1,5,100}"
              : detail);
}

void criterion_13() {
  const auto clouds = make_dataset(0.1, 130, nullptr, 0.0);
  const nn::NetworkSpec spec = all_on_spec();
  train::TrainConfig cfg = all_on_config(3, 300);
  cfg.log_every = 50;

  auto run_with_threads = [&](int threads, const std::string& name) {
    set_thread_count(threads);
    const std::string path = (kWorkDir / name).string();
    train::train_pinn(cfg, spec, clouds, fluid_at(0.1), path);
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    // Strip the wall-clock column (the last one) from every row.
    std::string line, out;
    std::stringstream rows(ss.str());
    while (std::getline(rows, line))
      out += line.substr(0, line.rfind(',')) + "\n";
    return out;
  };

  const int saved = thread_count();
  const std::string a = run_with_threads(1, "c13_t1.csv");
  const std::string b = run_with_threads(3, "c13_t3.csv");
  const std::string c = run_with_threads(1, "c13_t1_again.csv");
  set_thread_count(saved);
  const bool pass = a == b && a == c;
  report(13, "seeded determinism across thread counts", pass,
         pass ? "metrics byte-identical for 1 and 3 threads and a rerun"
              : "metrics differ between runs");
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<int> only;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      std::string tok;
      while (std::getline(ss, tok, ',')) only.push_back(std::stoi(tok));
    }
  }
  auto wanted = [&](int id) {
    return only.empty() ||
           std::find(only.begin(), only.end(), id) != only.end();
  };

  fs::create_directories(kWorkDir);
  const double t0 = now_s();

  if (wanted(1)) criterion_1();
  if (wanted(2)) criterion_2();
  if (wanted(7)) criterion_7();
  if (wanted(12)) criterion_12();
  if (wanted(13)) criterion_13();
  if (wanted(8)) criterion_8();
  if (wanted(9)) criterion_9();
  if (wanted(10)) criterion_10();
  if (wanted(3)) criterion_3();
  if (wanted(4)) criterion_4();
  if (wanted(5)) criterion_5();
  if (wanted(6)) criterion_6();
  if (wanted(11)) criterion_11();

  int failures = 0;
  for (const auto& o : g_outcomes) failures += o.pass ? 0 : 1;
  std::cout << "SUMMARY: " << (g_outcomes.size() - failures) << "/"
            << g_outcomes.size() << " criteria passed, total wall "
            << fmt((now_s() - t0) / 60.0) << " min" << std::endl;
  return failures;
}
