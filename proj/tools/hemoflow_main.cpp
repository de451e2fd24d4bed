// hemoflow: configuration-driven experiment runner for PINN and
// (PI-)DeepONet pipe/aneurysm flow studies.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "hemoflow/checkpoint.hpp"
#include "hemoflow/config.hpp"
#include "hemoflow/eval.hpp"
#include "hemoflow/geometry.hpp"
#include "hemoflow/nn.hpp"
#include "hemoflow/operators.hpp"
#include "hemoflow/parallel.hpp"
#include "hemoflow/physics.hpp"
#include "hemoflow/training.hpp"

namespace fs = std::filesystem;
using namespace hemoflow;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string output_dir = "runs";
  long seed_override = -1;
  std::string run_id;
};

geom::DomainSpec domain_from(const config::Config& cfg) {
  geom::DomainSpec spec;
  const std::string kind = cfg.get_string("domain.kind", "straight-pipe");
  if (kind == "straight-pipe") {
    spec.kind = geom::DomainKind::kStraightPipe;
  } else if (kind == "aaa-idealized") {
    spec.kind = geom::DomainKind::kAaaIdealized;
  } else {
    throw ConfigError("domain.kind must be straight-pipe or aaa-idealized");
  }
  spec.radius = cfg.get_double("domain.radius", 0.010065);
  spec.length = cfg.get_double("domain.length", 0.26009);
  spec.bulge.center_fraction =
      cfg.get_double("domain.bulge_center_fraction", 0.5);
  spec.bulge.max_radius_ratio = cfg.get_double("domain.bulge_ratio", 2.0);
  spec.bulge.shape_width = cfg.get_double("domain.bulge_width", 0.0);
  spec.validate();
  return spec;
}

physics::FluidParams fluid_from(const config::Config& cfg,
                                const geom::DomainSpec& domain, double v) {
  physics::FluidParams fluid;
  fluid.rho = cfg.get_double("fluid.rho", 1060.0);
  fluid.mu = cfg.get_double("fluid.mu", 0.00399);
  fluid.v_max = v;
  fluid.radius = domain.radius;
  fluid.length = domain.length;
  fluid.validate();
  return fluid;
}

std::vector<double> v_list_from(const config::Config& cfg) {
  if (cfg.has("fluid.v_list")) return cfg.get_double_list("fluid.v_list");
  return {cfg.get_double("fluid.v", 0.1)};
}

nn::NetworkSpec network_from(const config::Config& cfg) {
  nn::NetworkSpec spec;
  spec.input_dim = 3;
  spec.output_dim = 4;
  spec.hidden_width = static_cast<int>(cfg.get_int("model.width", 64));
  spec.hidden_layers = static_cast<int>(cfg.get_int("model.depth", 4));
  const std::string arch = cfg.get_string("model.arch", "modified-mlp");
  if (arch == "mlp") {
    spec.kind = nn::ArchKind::kMlp;
  } else if (arch == "modified-mlp") {
    spec.kind = nn::ArchKind::kModifiedMlp;
  } else {
    throw ConfigError("model.arch must be mlp or modified-mlp");
  }
  if (cfg.get_bool("model.fourier", true)) {
    spec.fourier = nn::FourierOptions{
        static_cast<int>(cfg.get_int("model.fourier_e", 16)),
        cfg.get_double("model.fourier_sigma", 1.0)};
  }
  if (cfg.get_bool("model.rwf", true)) {
    spec.rwf = nn::RwfOptions{cfg.get_double("model.rwf_mu", 0.5),
                              cfg.get_double("model.rwf_sigma", 0.1)};
  }
  return spec;
}

operators::OperatorSpec operator_from(const config::Config& cfg,
                                      std::uint64_t seed) {
  return operators::OperatorSpec::standard(
      static_cast<int>(cfg.get_int("operator.m1", 64)),
      static_cast<int>(cfg.get_int("operator.m2", 64)),
      static_cast<int>(cfg.get_int("operator.branch_width", 64)),
      static_cast<int>(cfg.get_int("operator.branch_depth", 3)),
      static_cast<int>(cfg.get_int("operator.trunk_width", 64)),
      static_cast<int>(cfg.get_int("operator.trunk_depth", 4)),
      static_cast<int>(cfg.get_int("operator.q", 128)), seed);
}

train::TrainConfig train_from(const config::Config& cfg) {
  train::TrainConfig out;
  out.kind = train::model_kind_from_name(cfg.get_string("train.kind", "pinn"));
  out.iterations = cfg.get_int("train.iterations", 20000);
  out.warmup_iterations = cfg.get_int("train.warmup_iterations", 15000);
  out.batch_size = static_cast<int>(cfg.get_int("train.batch", 256));
  out.nondimensional = cfg.get_bool("train.nondimensional", true);
  out.grad_norm.enabled = cfg.get_bool("train.grad_norm", true);
  out.grad_norm.momentum = cfg.get_double("train.grad_norm_momentum", 0.9);
  out.grad_norm.update_every = cfg.get_int("train.grad_norm_every", 1000);
  out.adam.alpha0 = cfg.get_double("train.lr", 1e-3);
  out.adam.beta1 = cfg.get_double("train.beta1", 0.9);
  out.adam.beta2 = cfg.get_double("train.beta2", 0.999);
  out.adam.epsilon = cfg.get_double("train.epsilon", 1e-8);
  out.adam.lr_decay = cfg.get_bool("train.lr_decay", true);
  out.adam.decay_rate = cfg.get_double("train.decay_rate", 0.95);
  out.adam.decay_steps = cfg.get_int("train.decay_steps", 3000);
  out.seed = cfg.get_u64("train.seed", 0);
  if (cfg.has("train.target_total_loss"))
    out.target_total_loss = cfg.get_double("train.target_total_loss");
  out.log_every = cfg.get_int("train.log_every", 100);
  out.checkpoint_every = cfg.get_int("train.checkpoint_every", 0);
  out.val_cap = static_cast<std::size_t>(cfg.get_int("train.val_cap", 512));
  return out;
}

geom::StratumCounts counts_from(const config::Config& cfg) {
  geom::StratumCounts counts;
  counts.inlet = static_cast<std::size_t>(cfg.get_int("sampling.inlet", 2000));
  counts.wall = static_cast<std::size_t>(cfg.get_int("sampling.wall", 2000));
  counts.outlet =
      static_cast<std::size_t>(cfg.get_int("sampling.outlet", 2000));
  counts.volume =
      static_cast<std::size_t>(cfg.get_int("sampling.volume", 20000));
  return counts;
}

geom::DataScenario scenario_from(const config::Config& cfg) {
  geom::DataScenario sc;
  const std::string kind = cfg.get_string("data.scenario", "none");
  if (kind == "none") {
    sc.kind = geom::DataScenario::Kind::kNone;
  } else if (kind == "cross-section") {
    sc.kind = geom::DataScenario::Kind::kCrossSection;
  } else if (kind == "longitudinal") {
    sc.kind = geom::DataScenario::Kind::kLongitudinal;
  } else if (kind == "random") {
    sc.kind = geom::DataScenario::Kind::kRandom;
  } else {
    throw ConfigError("data.scenario must be one of none, cross-section, "
                      "longitudinal, random");
  }
  sc.slices = static_cast<int>(cfg.get_int("data.slices", 5));
  sc.fraction = cfg.get_double("data.fraction", 0.003);
  sc.tolerance = cfg.get_double("data.tolerance", 0.0);
  return sc;
}

geom::SplitFractions split_from(const config::Config& cfg) {
  geom::SplitFractions f;
  f.train = cfg.get_double("sampling.split_train", 0.68);
  f.val = cfg.get_double("sampling.split_val", 0.02);
  f.test = cfg.get_double("sampling.split_test", 0.30);
  return f;
}

// One V-dependent dataset: sampled (or ingested), labeled, split, with the
// data scenario extracted from the training volume and noise applied.
geom::SplitClouds prepare_dataset(const config::Config& cfg,
                                  const geom::DomainSpec& domain,
                                  const physics::PoiseuilleFlow& oracle,
                                  double v, std::uint64_t seed) {
  geom::StratifiedPointCloud cloud;
  if (cfg.has("data.cloud_file")) {
    cloud = geom::ingest_point_cloud(cfg.get_string("data.cloud_file"));
  } else {
    cloud = geom::sample_domain(domain, counts_from(cfg), v, seed);
    if (domain.kind == geom::DomainKind::kStraightPipe)
      geom::apply_oracle_labels(cloud, oracle);
  }
  auto parts = geom::split(cloud, split_from(cfg), seed + 1);

  const geom::DataScenario sc = scenario_from(cfg);
  if (sc.kind != geom::DataScenario::Kind::kNone && cloud.data.size() == 0) {
    if (domain.kind != geom::DomainKind::kStraightPipe)
      throw ConfigError(
          "data scenarios need oracle labels; ingest a labeled cloud for "
          "aaa domains");
    geom::extract_data_scenario(parts.train, domain, sc, oracle, seed + 2);
    const double noise = cfg.get_double("data.noise_level", 0.0);
    if (noise > 0.0) geom::inject_noise(parts.train, noise, v, seed + 3);
  }
  return parts;
}

fs::path run_dir(const CommonArgs& args, const config::Config& cfg,
                 const std::string& command, std::uint64_t seed) {
  std::string id = args.run_id;
  if (id.empty())
    id = cfg.get_string("output.run_id",
                        command + "-s" + std::to_string(seed));
  fs::path dir = fs::path(args.output_dir) / id;
  fs::create_directories(dir);
  return dir;
}

config::Config load_config(const CommonArgs& args) {
  if (args.config_path.empty())
    throw ConfigError("a --config file is required for this command");
  config::Config cfg = config::Config::parse_file(args.config_path);
  if (args.seed_override >= 0)
    cfg.set_int("train.seed", args.seed_override);
  return cfg;
}

void echo_config(const config::Config& cfg, const fs::path& dir) {
  cfg.write_file((dir / "config.echo").string());
  const auto unused = cfg.unused_keys();
  for (const auto& key : unused)
    std::cerr << "warning: config key '" << key << "' was never used\n";
}

std::vector<Vec3> sample_eval_points(const geom::DomainSpec& domain,
                                     std::size_t n, std::uint64_t seed) {
  geom::StratumCounts counts;
  counts.volume = n;
  return geom::sample_domain(domain, counts, 1.0, seed).volume.points;
}

eval::EvalReport report_from_errors(const std::string& model, double v,
                                    const std::string& split,
                                    const eval::FieldErrors& err,
                                    double train_s, long stop_iter) {
  eval::EvalReport r;
  r.model = model;
  r.v_tag = v;
  r.split = split;
  r.vel_l2_rel = err.velocity;
  r.pres_l2_rel = err.pressure;
  r.train_seconds = train_s;
  r.infer_seconds = err.infer_seconds;
  r.stop_iter = stop_iter;
  return r;
}

// --- commands -----------------------------------------------------------------

int cmd_generate(const CommonArgs& args) {
  const config::Config cfg = load_config(args);
  const geom::DomainSpec domain = domain_from(cfg);
  const std::uint64_t seed = cfg.get_u64("train.seed", 0);
  const fs::path dir = run_dir(args, cfg, "generate", seed);

  const auto vs = v_list_from(cfg);
  const double p_out = cfg.get_double("fluid.p_outlet", 0.0);
  for (std::size_t i = 0; i < vs.size(); ++i) {
    const physics::FluidParams fluid = fluid_from(cfg, domain, vs[i]);
    auto cloud = geom::sample_domain(domain, counts_from(cfg), vs[i],
                                     seed + 17 * i);
    if (domain.kind == geom::DomainKind::kStraightPipe) {
      const physics::PoiseuilleFlow oracle{fluid, p_out};
      geom::apply_oracle_labels(cloud, oracle);
      const geom::DataScenario sc = scenario_from(cfg);
      if (sc.kind != geom::DataScenario::Kind::kNone)
        geom::extract_data_scenario(cloud, domain, sc, oracle,
                                    seed + 17 * i + 5);
    }
    char name[64];
    std::snprintf(name, sizeof name, "cloud_v%04.0f.csv", vs[i] * 1000);
    geom::export_point_cloud(cloud, (dir / name).string());
    std::cout << "wrote " << (dir / name).string() << " ("
              << cloud.total_points() << " points)\n";
  }
  echo_config(cfg, dir);
  return 0;
}

int cmd_train(const CommonArgs& args) {
  const config::Config cfg = load_config(args);
  const geom::DomainSpec domain = domain_from(cfg);
  train::TrainConfig tcfg = train_from(cfg);
  const fs::path dir = run_dir(args, cfg, "train", tcfg.seed);
  const double p_out = cfg.get_double("fluid.p_outlet", 0.0);
  const std::string metrics = (dir / "metrics.csv").string();
  const std::string ckpt = (dir / "checkpoint.bin").string();

  std::vector<eval::EvalReport> reports;

  if (tcfg.kind == train::ModelKind::kDeepONet ||
      tcfg.kind == train::ModelKind::kPiDeepONet) {
    const auto vs = v_list_from(cfg);
    if (vs.empty()) throw ConfigError("operator training needs fluid.v_list");
    const auto spec = operator_from(cfg, tcfg.seed);
    const auto sensors = operators::SensorLayout::make(
        domain, spec.branch1.input_dim, spec.branch2.input_dim);

    std::vector<geom::StratifiedPointCloud> train_clouds, val_clouds;
    for (std::size_t i = 0; i < vs.size(); ++i) {
      const physics::FluidParams fluid = fluid_from(cfg, domain, vs[i]);
      const physics::PoiseuilleFlow oracle{fluid, p_out};
      auto parts =
          prepare_dataset(cfg, domain, oracle, vs[i], tcfg.seed + 100 * i);
      train_clouds.push_back(std::move(parts.train));
      val_clouds.push_back(std::move(parts.val));
    }
    const auto train_bundle =
        operators::build_triplets(train_clouds, sensors, domain, p_out);
    const auto val_bundle =
        operators::build_triplets(val_clouds, sensors, domain, p_out);

    physics::FluidParams ref = fluid_from(
        cfg, domain, *std::max_element(vs.begin(), vs.end()));
    const auto run = train::train_operator(tcfg, spec, train_bundle,
                                           val_bundle, ref, metrics, ckpt);
    std::cout << "trained " << train::model_kind_name(tcfg.kind) << ": best "
              << run.stats.best_val_metric << " @ iter "
              << run.stats.best_iter << ", wall "
              << run.stats.wall_seconds << " s\n";

    if (domain.kind == geom::DomainKind::kStraightPipe) {
      const auto points = sample_eval_points(domain, 4096, tcfg.seed + 999);
      for (double v : vs) {
        const physics::FluidParams fluid = fluid_from(cfg, domain, v);
        const physics::PoiseuilleFlow oracle{fluid, p_out};
        std::vector<double> s1(sensors.inlet.size());
        for (std::size_t k = 0; k < s1.size(); ++k)
          s1[k] = physics::parabolic_inlet(sensors.inlet[k], v,
                                           domain.radius)[1];
        const std::vector<double> s2(sensors.outlet.size(), p_out);
        const auto err = eval::evaluate_operator(
            run.best_params, oracle, s1, s2, points, tcfg.nondimensional,
            false);
        reports.push_back(report_from_errors(
            train::model_kind_name(tcfg.kind), v, "train", err,
            run.stats.wall_seconds, run.stats.stop_iter));
      }
    }
  } else {
    const double v = v_list_from(cfg).front();
    const physics::FluidParams fluid = fluid_from(cfg, domain, v);
    const physics::PoiseuilleFlow oracle{fluid, p_out};
    const auto clouds = prepare_dataset(cfg, domain, oracle, v, tcfg.seed);
    const nn::NetworkSpec spec = network_from(cfg);

    train::PinnRun run;
    if (tcfg.kind == train::ModelKind::kWuPinn) {
      run = train::warmup_train(tcfg, spec, clouds, fluid, metrics, ckpt);
    } else {
      run = train::train_pinn(tcfg, spec, clouds, fluid, metrics, nullptr,
                              ckpt);
    }
    std::cout << "trained " << train::model_kind_name(tcfg.kind) << ": best "
              << run.stats.best_val_metric << " @ iter "
              << run.stats.best_iter << ", wall " << run.stats.wall_seconds
              << " s\n";

    if (domain.kind == geom::DomainKind::kStraightPipe) {
      std::vector<Vec3> points;
      for (const Vec3& x : clouds.test.volume.points) points.push_back(x);
      const bool data_free = clouds.train.data.size() == 0;
      const auto err = eval::evaluate_network(run.best_params, oracle, points,
                                              tcfg.nondimensional, data_free);
      reports.push_back(report_from_errors(train::model_kind_name(tcfg.kind),
                                           v, "test", err,
                                           run.stats.wall_seconds,
                                           run.stats.stop_iter));
    }
  }

  if (!reports.empty())
    eval::write_report_csv(reports, (dir / "report.csv").string());
  echo_config(cfg, dir);
  return 0;
}

int cmd_eval(const CommonArgs& args, const std::string& checkpoint_path) {
  const config::Config cfg = load_config(args);
  const geom::DomainSpec domain = domain_from(cfg);
  if (domain.kind != geom::DomainKind::kStraightPipe)
    throw ConfigError("eval compares against the pipe oracle; aaa domains "
                      "need an ingested truth cloud");
  const std::uint64_t seed = cfg.get_u64("train.seed", 0);
  const fs::path dir = run_dir(args, cfg, "eval", seed);
  const double p_out = cfg.get_double("fluid.p_outlet", 0.0);
  const bool nondim = cfg.get_bool("train.nondimensional", true);
  const auto points = sample_eval_points(
      domain, static_cast<std::size_t>(cfg.get_int("eval.points", 10000)),
      seed + 4242);

  std::vector<eval::EvalReport> reports;
  if (checkpoint::peek_kind(checkpoint_path) == checkpoint::Kind::kNetwork) {
    const auto ckpt = checkpoint::load_network(checkpoint_path);
    const double v = v_list_from(cfg).front();
    const physics::FluidParams fluid = fluid_from(cfg, domain, v);
    const physics::PoiseuilleFlow oracle{fluid, p_out};
    const auto err =
        eval::evaluate_network(ckpt.params, oracle, points, nondim,
                               cfg.get_bool("eval.shift_correct", false));
    reports.push_back(report_from_errors("network", v, "eval", err, 0.0, 0));
  } else {
    const auto ckpt = checkpoint::load_operator(checkpoint_path);
    const auto sensors = operators::SensorLayout::make(
        domain, ckpt.params.spec.branch1.input_dim,
        ckpt.params.spec.branch2.input_dim);
    for (double v : v_list_from(cfg)) {
      const physics::FluidParams fluid = fluid_from(cfg, domain, v);
      const physics::PoiseuilleFlow oracle{fluid, p_out};
      std::vector<double> s1(sensors.inlet.size());
      for (std::size_t k = 0; k < s1.size(); ++k)
        s1[k] =
            physics::parabolic_inlet(sensors.inlet[k], v, domain.radius)[1];
      const std::vector<double> s2(sensors.outlet.size(), p_out);
      const auto err = eval::evaluate_operator(ckpt.params, oracle, s1, s2,
                                               points, nondim, false);
      reports.push_back(report_from_errors("operator", v, "eval", err, 0.0, 0));
    }
  }
  eval::write_report_csv(reports, (dir / "report.csv").string());
  std::cout << "wrote " << (dir / "report.csv").string() << "\n";
  echo_config(cfg, dir);
  return 0;
}

int cmd_ablate(const CommonArgs& args) {
  const config::Config cfg = load_config(args);
  const geom::DomainSpec domain = domain_from(cfg);
  const std::uint64_t seed = cfg.get_u64("train.seed", 0);
  const fs::path dir = run_dir(args, cfg, "ablate", seed);
  const double p_out = cfg.get_double("fluid.p_outlet", 0.0);

  eval::AblationSettings settings;
  settings.base_spec = network_from(cfg);
  settings.base_config = train_from(cfg);
  const double v = v_list_from(cfg).front();
  settings.fluid = fluid_from(cfg, domain, v);
  settings.oracle = {settings.fluid, p_out};
  settings.clouds =
      prepare_dataset(cfg, domain, settings.oracle, v, seed + 7);
  if (cfg.has("ablate.seeds")) {
    for (double s : cfg.get_double_list("ablate.seeds"))
      settings.seeds.push_back(static_cast<std::uint64_t>(s));
  } else {
    settings.seeds = {seed, seed + 1, seed + 2};
  }
  settings.eval_points = sample_eval_points(
      domain, static_cast<std::size_t>(cfg.get_int("eval.points", 4096)),
      seed + 4242);

  // Rows mirror the progressive-deactivation study: everything on, one
  // technique off at a time, everything off.
  std::vector<eval::AblationRow> rows;
  rows.push_back({"all-on", true, true, true, true, true, true});
  rows.push_back({"no-rwf", true, false, true, true, true, true});
  rows.push_back({"no-lr-decay", true, true, true, true, false, true});
  rows.push_back({"no-fourier", false, true, true, true, true, true});
  rows.push_back({"no-grad-norm", true, true, true, false, true, true});
  rows.push_back({"no-modified-mlp", true, true, false, true, true, true});
  rows.push_back({"all-off", false, false, false, false, false, false});

  const auto reports = eval::ablation_run(settings, rows);
  eval::write_report_csv(reports, (dir / "report.csv").string());
  std::cout << "wrote " << (dir / "report.csv").string() << " ("
            << reports.size() << " rows)\n";
  echo_config(cfg, dir);
  return 0;
}

int cmd_split_study(const CommonArgs& args) {
  const config::Config cfg = load_config(args);
  const std::uint64_t seed = cfg.get_u64("train.seed", 0);
  const fs::path dir = run_dir(args, cfg, "split-study", seed);

  eval::SplitStudySettings settings;
  settings.domain = domain_from(cfg);
  settings.fluid_proto = fluid_from(cfg, settings.domain, 0.1);
  settings.op_spec = operator_from(cfg, seed);
  settings.config = train_from(cfg);
  settings.points_per_cloud =
      static_cast<int>(cfg.get_int("split.points_per_cloud", 4000));
  settings.data_scenario = scenario_from(cfg);
  settings.p_outlet = cfg.get_double("fluid.p_outlet", 0.0);
  settings.seed = seed;

  std::vector<eval::SplitScenario> scenarios;
  for (int i = 1; cfg.has("split.scenario_" + std::to_string(i) + "_train");
       ++i) {
    eval::SplitScenario sc;
    sc.train_v =
        cfg.get_double_list("split.scenario_" + std::to_string(i) + "_train");
    sc.test_v =
        cfg.get_double_list("split.scenario_" + std::to_string(i) + "_test");
    sc.name = std::to_string(sc.train_v.size()) + "-" +
              std::to_string(sc.test_v.size());
    scenarios.push_back(std::move(sc));
  }
  if (scenarios.empty()) {
    // The 5-3 arrangement studied in the comparison section.
    scenarios.push_back({"5-3",
                         {0.04, 0.06, 0.1, 0.12, 0.15},
                         {0.05, 0.08, 0.13}});
  }

  const auto reports = eval::split_study(settings, scenarios);
  eval::write_report_csv(reports, (dir / "report.csv").string());
  std::cout << "wrote " << (dir / "report.csv").string() << " ("
            << reports.size() << " rows)\n";
  echo_config(cfg, dir);
  return 0;
}

int cmd_transfer(const CommonArgs& args, const std::string& baseline_path) {
  const config::Config cfg = load_config(args);
  const geom::DomainSpec domain = domain_from(cfg);
  train::TrainConfig tcfg = train_from(cfg);
  const fs::path dir = run_dir(args, cfg, "transfer", tcfg.seed);
  const double p_out = cfg.get_double("fluid.p_outlet", 0.0);

  const auto baseline = checkpoint::load_network(baseline_path);
  const nn::NetworkSpec target_spec = network_from(cfg);

  const auto targets = cfg.get_double_list("transfer.targets");
  std::vector<double> stop_losses;
  if (cfg.has("transfer.stop_losses"))
    stop_losses = cfg.get_double_list("transfer.stop_losses");
  if (!stop_losses.empty() && stop_losses.size() != targets.size())
    throw ConfigError("transfer.stop_losses must match transfer.targets");

  std::vector<eval::EvalReport> reports;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const double v = targets[i];
    const physics::FluidParams fluid = fluid_from(cfg, domain, v);
    const physics::PoiseuilleFlow oracle{fluid, p_out};
    const auto clouds =
        prepare_dataset(cfg, domain, oracle, v, tcfg.seed + 31 * i);

    double stop_loss;
    double bench_wall = 0.0;
    if (!stop_losses.empty()) {
      stop_loss = stop_losses[i];
    } else {
      // Cold-start benchmark supplies the reference minimum total loss.
      train::TrainConfig bench = tcfg;
      char name[64];
      std::snprintf(name, sizeof name, "benchmark_v%04.0f.csv", v * 1000);
      const auto run = train::train_pinn(bench, target_spec, clouds, fluid,
                                         (dir / name).string());
      stop_loss = run.stats.min_total_loss;
      bench_wall = run.stats.wall_seconds;
      if (domain.kind == geom::DomainKind::kStraightPipe) {
        const auto err = eval::evaluate_network(
            run.best_params, oracle,
            clouds.test.volume.points, tcfg.nondimensional, true);
        reports.push_back(report_from_errors("pinn-benchmark", v, "test", err,
                                             run.stats.wall_seconds,
                                             run.stats.stop_iter));
      }
    }

    train::TrainConfig warm = tcfg;
    warm.target_total_loss = stop_loss;
    char name[64];
    std::snprintf(name, sizeof name, "transfer_v%04.0f.csv", v * 1000);
    const auto run =
        train::transfer_train(warm, target_spec, baseline.params, clouds,
                              fluid, (dir / name).string());
    std::cout << "transfer to V=" << v << ": stop iter "
              << run.stats.stop_iter << " (target loss " << stop_loss
              << ", benchmark wall " << bench_wall << " s)\n";
    if (domain.kind == geom::DomainKind::kStraightPipe) {
      const auto err = eval::evaluate_network(
          run.best_params, oracle, clouds.test.volume.points,
          tcfg.nondimensional, true);
      reports.push_back(report_from_errors("pinn-transfer", v, "test", err,
                                           run.stats.wall_seconds,
                                           run.stats.stop_iter));
    }
  }
  eval::write_report_csv(reports, (dir / "report.csv").string());
  echo_config(cfg, dir);
  return 0;
}

int cmd_export_field(const CommonArgs& args, const std::string& checkpoint_path,
                     const std::string& format_name) {
  const config::Config cfg = load_config(args);
  const geom::DomainSpec domain = domain_from(cfg);
  const std::uint64_t seed = cfg.get_u64("train.seed", 0);
  const fs::path dir = run_dir(args, cfg, "export-field", seed);
  fs::create_directories(dir / "fields");
  const double p_out = cfg.get_double("fluid.p_outlet", 0.0);
  const bool nondim = cfg.get_bool("train.nondimensional", true);
  const double v = v_list_from(cfg).front();
  const physics::FluidParams fluid = fluid_from(cfg, domain, v);

  const auto points = sample_eval_points(
      domain, static_cast<std::size_t>(cfg.get_int("eval.points", 10000)),
      seed + 777);

  physics::FlowField predicted;
  if (checkpoint::peek_kind(checkpoint_path) == checkpoint::Kind::kNetwork) {
    const auto ckpt = checkpoint::load_network(checkpoint_path);
    predicted = eval::predict_field(ckpt.params, points, fluid, nondim);
  } else {
    const auto ckpt = checkpoint::load_operator(checkpoint_path);
    const auto sensors = operators::SensorLayout::make(
        domain, ckpt.params.spec.branch1.input_dim,
        ckpt.params.spec.branch2.input_dim);
    std::vector<double> s1(sensors.inlet.size());
    for (std::size_t k = 0; k < s1.size(); ++k)
      s1[k] = physics::parabolic_inlet(sensors.inlet[k], v, domain.radius)[1];
    const std::vector<double> s2(sensors.outlet.size(), p_out);
    predicted = eval::predict_field(ckpt.params, s1, s2, points, fluid, nondim);
  }

  std::optional<physics::FlowField> truth;
  if (domain.kind == geom::DomainKind::kStraightPipe) {
    const physics::PoiseuilleFlow oracle{fluid, p_out};
    physics::FlowField t;
    t.points = predicted.points;
    for (const Vec3& x : t.points) {
      t.velocity.push_back(oracle.velocity(x));
      t.pressure.push_back(oracle.pressure(x));
    }
    truth = std::move(t);
  }

  const eval::ExportFormat format = format_name == "vtk-legacy"
                                        ? eval::ExportFormat::kVtkLegacy
                                        : eval::ExportFormat::kCsv;
  const std::string ext = format == eval::ExportFormat::kCsv ? "csv" : "vtk";
  const std::string path = (dir / "fields" / ("field." + ext)).string();
  eval::export_field(predicted, truth ? &*truth : nullptr, format, path);
  std::cout << "wrote " << path << "\n";
  echo_config(cfg, dir);
  return 0;
}

int cmd_ingest(const CommonArgs& args, const std::string& file) {
  const auto cloud = geom::ingest_point_cloud(file);
  std::cout << "ingested " << file << ": " << cloud.total_points()
            << " points (inlet " << cloud.inlet.size() << ", wall "
            << cloud.wall.size() << ", outlet " << cloud.outlet.size()
            << ", volume " << cloud.volume.size() << ", data "
            << cloud.data.size() << ")\n";
  if (!args.output_dir.empty() && !args.run_id.empty()) {
    const fs::path dir = fs::path(args.output_dir) / args.run_id;
    fs::create_directories(dir);
    geom::export_point_cloud(cloud, (dir / "cloud.csv").string());
    std::cout << "re-exported to " << (dir / "cloud.csv").string() << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hemoflow: PINN and (PI-)DeepONet pipe/aneurysm flow studies"};
  app.require_subcommand(1);
  app.fallthrough();  // common flags may follow the subcommand

  CommonArgs common;
  app.add_option("--config", common.config_path, "key=value config file")
      ->envname("HEMOFLOW_CONFIG");
  app.add_option("--seed", common.seed_override, "override train.seed");
  app.add_option("--output", common.output_dir, "output directory root");
  app.add_option("--run-id", common.run_id, "run directory name");

  std::string checkpoint_path, format_name = "csv", ingest_file;

  app.add_subcommand("generate", "sample stratified point clouds per V");
  app.add_subcommand("train", "train a deepnn/pinn/wu-pinn/(pi-)deeponet");
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", checkpoint_path)->required();
  app.add_subcommand("ablate", "technique ablation study");
  app.add_subcommand("split-study", "train/test V-split study");
  auto* transfer_cmd =
      app.add_subcommand("transfer", "warm-started runs from a baseline");
  transfer_cmd->add_option("--baseline", checkpoint_path)->required();
  auto* export_cmd =
      app.add_subcommand("export-field", "predict and export a field");
  export_cmd->add_option("--checkpoint", checkpoint_path)->required();
  export_cmd->add_option("--format", format_name)
      ->check(CLI::IsMember({"csv", "vtk-legacy"}));
  auto* ingest_cmd =
      app.add_subcommand("ingest", "validate an external point cloud");
  ingest_cmd->add_option("file", ingest_file)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand("generate")) return cmd_generate(common);
    if (app.got_subcommand("train")) return cmd_train(common);
    if (app.got_subcommand("eval")) return cmd_eval(common, checkpoint_path);
    if (app.got_subcommand("ablate")) return cmd_ablate(common);
    if (app.got_subcommand("split-study")) return cmd_split_study(common);
    if (app.got_subcommand("transfer"))
      return cmd_transfer(common, checkpoint_path);
    if (app.got_subcommand("export-field"))
      return cmd_export_field(common, checkpoint_path, format_name);
    if (app.got_subcommand("ingest")) return cmd_ingest(common, ingest_file);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
