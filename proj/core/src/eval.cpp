#include "hemoflow/eval.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>

namespace hemoflow::eval {

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double now_seconds() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

}  // namespace

double l2_relative_error(std::span<const double> predicted,
                         std::span<const double> truth,
                         std::size_t batch_size) {
  if (predicted.size() != truth.size())
    throw UsageError("l2_relative_error: length mismatch");
  if (predicted.empty())
    throw UsageError("l2_relative_error: empty input");
  if (batch_size == 0)
    throw UsageError("l2_relative_error: batch size must be positive");

  double sum = 0.0;
  std::size_t batches = 0, skipped = 0;
  for (std::size_t lo = 0; lo < truth.size(); lo += batch_size) {
    const std::size_t hi = std::min(truth.size(), lo + batch_size);
    double num = 0.0, den = 0.0;
    for (std::size_t i = lo; i < hi; ++i) {
      const double d = predicted[i] - truth[i];
      num += d * d;
      den += truth[i] * truth[i];
    }
    if (den == 0.0) {
      ++skipped;
      continue;
    }
    sum += std::sqrt(num) / std::sqrt(den);
    ++batches;
  }
  if (skipped > 0)
    std::cerr << "warning: l2_relative_error skipped " << skipped
              << " zero-norm truth batch(es)\n";
  if (batches == 0)
    throw UsageError("l2_relative_error: every truth batch had zero norm");
  return sum / static_cast<double>(batches);
}

std::vector<double> velocity_magnitude(const physics::FlowField& field) {
  field.validate();
  std::vector<double> out;
  out.reserve(field.size());
  for (const Vec3& v : field.velocity) out.push_back(norm3(v));
  return out;
}

ShiftCorrection pressure_shift_correct(std::span<const double> predicted,
                                       std::span<const double> truth) {
  if (predicted.size() != truth.size())
    throw UsageError("pressure_shift_correct: length mismatch");
  ShiftCorrection out;
  double shift = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i)
    shift += predicted[i] - truth[i];
  shift /= static_cast<double>(truth.size());
  out.shift = shift;
  out.corrected.reserve(predicted.size());
  for (double p : predicted) out.corrected.push_back(p - shift);
  return out;
}

void write_report_csv(const std::vector<EvalReport>& rows,
                      const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("report: cannot open '" + path + "'");
  out << "model,V,split,vel_l2_rel,pres_l2_rel,train_s,infer_s,stop_iter\n";
  for (const auto& r : rows) {
    out << r.model << ',' << fmt(r.v_tag) << ',' << r.split << ','
        << fmt(r.vel_l2_rel) << ',' << fmt(r.pres_l2_rel) << ','
        << fmt(r.train_seconds) << ',' << fmt(r.infer_seconds) << ','
        << r.stop_iter << "\n";
  }
}

physics::FlowField predict_field(const nn::ParamStore& params,
                                 std::span<const Vec3> points,
                                 const physics::FluidParams& fluid,
                                 bool dimensionless) {
  nn::FieldEvaluator evaluator(params);
  physics::FlowField out;
  out.frame = physics::Frame::kDimensional;
  out.points.assign(points.begin(), points.end());
  out.velocity.resize(points.size());
  out.pressure.resize(points.size());
  const double d = fluid.diameter();
  const double pref = fluid.rho * fluid.v_max * fluid.v_max;
  std::array<double, 4> y{};
  for (std::size_t i = 0; i < points.size(); ++i) {
    Vec3 x = points[i];
    if (dimensionless)
      for (int c = 0; c < 3; ++c) x[c] /= d;
    evaluator.eval_into(x, y);
    if (dimensionless) {
      out.velocity[i] = {y[0] * fluid.v_max, y[1] * fluid.v_max,
                         y[2] * fluid.v_max};
      out.pressure[i] = y[3] * pref;
    } else {
      out.velocity[i] = {y[0], y[1], y[2]};
      out.pressure[i] = y[3];
    }
  }
  return out;
}

physics::FlowField predict_field(const operators::OperatorParams& params,
                                 std::span<const double> sensors1,
                                 std::span<const double> sensors2,
                                 std::span<const Vec3> points,
                                 const physics::FluidParams& fluid,
                                 bool dimensionless) {
  operators::OperatorEvaluator evaluator(params);
  const double d = fluid.diameter();
  const double pref = fluid.rho * fluid.v_max * fluid.v_max;
  std::vector<double> s1(sensors1.begin(), sensors1.end());
  std::vector<double> s2(sensors2.begin(), sensors2.end());
  if (dimensionless) {
    for (double& s : s1) s /= fluid.v_max;
    for (double& s : s2) s /= pref;
  }
  evaluator.set_sensors(s1, s2);

  physics::FlowField out;
  out.frame = physics::Frame::kDimensional;
  out.points.assign(points.begin(), points.end());
  out.velocity.resize(points.size());
  out.pressure.resize(points.size());
  std::array<double, 4> y{};
  for (std::size_t i = 0; i < points.size(); ++i) {
    Vec3 x = points[i];
    if (dimensionless)
      for (int c = 0; c < 3; ++c) x[c] /= d;
    evaluator.eval_into(x, y);
    if (dimensionless) {
      out.velocity[i] = {y[0] * fluid.v_max, y[1] * fluid.v_max,
                         y[2] * fluid.v_max};
      out.pressure[i] = y[3] * pref;
    } else {
      out.velocity[i] = {y[0], y[1], y[2]};
      out.pressure[i] = y[3];
    }
  }
  return out;
}

namespace {

FieldErrors field_errors_against_oracle(const physics::FlowField& predicted,
                                        const physics::PoiseuilleFlow& oracle,
                                        bool shift_correct_pressure) {
  physics::FlowField truth;
  truth.frame = physics::Frame::kDimensional;
  truth.points = predicted.points;
  truth.velocity.reserve(predicted.size());
  truth.pressure.reserve(predicted.size());
  for (const Vec3& x : predicted.points) {
    truth.velocity.push_back(oracle.velocity(x));
    truth.pressure.push_back(oracle.pressure(x));
  }

  FieldErrors out;
  const auto pred_mag = velocity_magnitude(predicted);
  const auto truth_mag = velocity_magnitude(truth);
  out.velocity = l2_relative_error(pred_mag, truth_mag);
  if (shift_correct_pressure) {
    const auto corr = pressure_shift_correct(predicted.pressure, truth.pressure);
    out.pressure_shift = corr.shift;
    out.pressure = l2_relative_error(corr.corrected, truth.pressure);
  } else {
    out.pressure = l2_relative_error(predicted.pressure, truth.pressure);
  }
  return out;
}

}  // namespace

FieldErrors evaluate_network(const nn::ParamStore& params,
                             const physics::PoiseuilleFlow& oracle,
                             std::span<const Vec3> points, bool dimensionless,
                             bool shift_correct_pressure) {
  const double t0 = now_seconds();
  const physics::FlowField predicted =
      predict_field(params, points, oracle.fluid, dimensionless);
  FieldErrors out =
      field_errors_against_oracle(predicted, oracle, shift_correct_pressure);
  out.infer_seconds = now_seconds() - t0;
  return out;
}

FieldErrors evaluate_operator(const operators::OperatorParams& params,
                              const physics::PoiseuilleFlow& oracle,
                              std::span<const double> sensors1,
                              std::span<const double> sensors2,
                              std::span<const Vec3> points, bool dimensionless,
                              bool shift_correct_pressure,
                              const physics::FluidParams* scale) {
  const double t0 = now_seconds();
  const physics::FlowField predicted =
      predict_field(params, sensors1, sensors2, points,
                    scale ? *scale : oracle.fluid, dimensionless);
  FieldErrors out =
      field_errors_against_oracle(predicted, oracle, shift_correct_pressure);
  out.infer_seconds = now_seconds() - t0;
  return out;
}

double operator_mean_residual(const operators::OperatorParams& params,
                              std::span<const double> sensors1,
                              std::span<const double> sensors2,
                              std::span<const Vec3> points,
                              const physics::FluidParams& fluid,
                              bool dimensionless) {
  const double d = fluid.diameter();
  const double pref = fluid.rho * fluid.v_max * fluid.v_max;
  std::vector<double> s1(sensors1.begin(), sensors1.end());
  std::vector<double> s2(sensors2.begin(), sensors2.end());
  const physics::Frame frame = dimensionless
                                   ? physics::Frame::kDimensionless
                                   : physics::Frame::kDimensional;
  if (dimensionless) {
    for (double& s : s1) s /= fluid.v_max;
    for (double& s : s2) s /= pref;
  }

  // One residual template, re-evaluated per point.
  ad::Tape tape;
  const operators::OperatorGraph g =
      operators::build_operator_graph(tape, params.spec, params);
  const std::array<ad::NodeId, 4> outs = {g.outputs[0], g.outputs[1],
                                          g.outputs[2], g.outputs[3]};
  const auto res = physics::build_nse_residual(
      tape, std::span<const ad::NodeId, 3>(g.x), outs,
      physics::ResidualCoeffs::from(fluid, frame));
  ad::NodeId root = tape.mul(res[0], res[0]);
  for (int i = 1; i < 4; ++i) root = tape.add(root, tape.mul(res[i], res[i]));
  tape.set_root(root);

  ad::Workspace ws(tape);
  ad::NodeId base = g.param_base;
  ws.bind_range(base, params.branch1.values());
  base += static_cast<ad::NodeId>(params.branch1.size());
  ws.bind_range(base, params.branch2.values());
  base += static_cast<ad::NodeId>(params.branch2.size());
  ws.bind_range(base, params.trunk.values());
  for (std::size_t i = 0; i < s1.size(); ++i) ws.bind(g.sensors1[i], s1[i]);
  for (std::size_t i = 0; i < s2.size(); ++i) ws.bind(g.sensors2[i], s2[i]);

  double sum = 0.0;
  bool first = true;
  for (const Vec3& xp : points) {
    Vec3 x = xp;
    if (dimensionless)
      for (int c = 0; c < 3; ++c) x[c] /= d;
    for (int c = 0; c < 3; ++c) ws.bind(g.x[c], x[c]);
    if (first) {
      ws.forward();
      first = false;
    } else {
      ws.forward_from(g.x[0]);
    }
    sum += ws.value(root);
  }
  return sum / static_cast<double>(points.size());
}

// --- ablation ------------------------------------------------------------------

void apply_toggles(const AblationRow& row, nn::NetworkSpec& spec,
                   train::TrainConfig& cfg) {
  if (!row.fourier) spec.fourier.reset();
  if (!row.rwf) spec.rwf.reset();
  spec.kind = row.modified_mlp ? nn::ArchKind::kModifiedMlp
                               : nn::ArchKind::kMlp;
  cfg.grad_norm.enabled = row.grad_norm;
  cfg.adam.lr_decay = row.lr_decay;
  cfg.nondimensional = row.nondimensional;
}

std::vector<EvalReport> ablation_run(const AblationSettings& settings,
                                     const std::vector<AblationRow>& rows) {
  std::vector<EvalReport> reports;
  for (const auto& row : rows) {
    for (std::uint64_t seed : settings.seeds) {
      nn::NetworkSpec spec = settings.base_spec;
      train::TrainConfig cfg = settings.base_config;
      apply_toggles(row, spec, cfg);
      cfg.seed = seed;

      const auto run = train::train_pinn(cfg, spec, settings.clouds,
                                         settings.fluid);
      const FieldErrors err = evaluate_network(
          run.best_params, settings.oracle, settings.eval_points,
          cfg.nondimensional, /*shift_correct_pressure=*/true);

      EvalReport report;
      report.model = row.name + "/seed" + std::to_string(seed);
      report.v_tag = settings.fluid.v_max;
      report.split = "test";
      report.vel_l2_rel = err.velocity;
      report.pres_l2_rel = err.pressure;
      report.train_seconds = run.stats.wall_seconds;
      report.infer_seconds = err.infer_seconds;
      report.stop_iter = run.stats.stop_iter;
      reports.push_back(report);
    }
  }
  return reports;
}

// --- split study ------------------------------------------------------------------

void validate_scenario(const SplitScenario& scenario,
                       std::span<const double> all_v) {
  if (scenario.train_v.empty())
    throw ConfigError("split study: scenario '" + scenario.name +
                      "' has an empty training set");
  double vmin = all_v[0], vmax = all_v[0];
  for (double v : all_v) {
    vmin = std::min(vmin, v);
    vmax = std::max(vmax, v);
  }
  auto contains = [&](double v) {
    for (double t : scenario.train_v)
      if (t == v) return true;
    return false;
  };
  if (!contains(vmin) || !contains(vmax))
    throw ConfigError("split study: scenario '" + scenario.name +
                      "' must train on the extreme velocity values");
}

std::vector<EvalReport> split_study(
    const SplitStudySettings& settings,
    const std::vector<SplitScenario>& scenarios) {
  std::vector<EvalReport> reports;
  std::vector<double> all_v;
  for (const auto& sc : scenarios) {
    all_v.clear();
    all_v.insert(all_v.end(), sc.train_v.begin(), sc.train_v.end());
    all_v.insert(all_v.end(), sc.test_v.begin(), sc.test_v.end());
    validate_scenario(sc, all_v);

    const geom::DomainSpec& domain = settings.domain;
    const auto sensors = operators::SensorLayout::make(
        domain, settings.op_spec.branch1.input_dim,
        settings.op_spec.branch2.input_dim);

    auto make_clouds = [&](const std::vector<double>& vs, std::uint64_t salt) {
      std::vector<geom::StratifiedPointCloud> clouds;
      for (std::size_t i = 0; i < vs.size(); ++i) {
        physics::FluidParams fluid = settings.fluid_proto;
        fluid.v_max = vs[i];
        physics::PoiseuilleFlow oracle{fluid, settings.p_outlet};
        geom::StratumCounts counts;
        counts.volume = settings.points_per_cloud;
        counts.inlet = counts.wall = counts.outlet =
            settings.points_per_cloud / 4;
        auto cloud = geom::sample_domain(domain, counts, vs[i],
                                         settings.seed + salt + i);
        geom::apply_oracle_labels(cloud, oracle);
        geom::extract_data_scenario(cloud, domain, settings.data_scenario,
                                    oracle, settings.seed + salt + 31 * i);
        clouds.push_back(std::move(cloud));
      }
      return clouds;
    };

    const auto train_clouds = make_clouds(sc.train_v, 1000);
    const auto val_clouds = make_clouds(sc.train_v, 2000);

    // The reference scaling uses the largest training velocity.
    physics::FluidParams ref = settings.fluid_proto;
    for (double v : sc.train_v) ref.v_max = std::max(ref.v_max, v);

    const auto train_bundle = operators::build_triplets(
        train_clouds, sensors, domain, settings.p_outlet);
    const auto val_bundle = operators::build_triplets(val_clouds, sensors,
                                                      domain,
                                                      settings.p_outlet);

    const auto run =
        train::train_operator(settings.config, settings.op_spec, train_bundle,
                              val_bundle, ref);

    auto report_instance = [&](double v, const char* split) {
      physics::FluidParams fluid = settings.fluid_proto;
      fluid.v_max = v;
      physics::PoiseuilleFlow oracle{fluid, settings.p_outlet};
      std::vector<double> s1(sensors.inlet.size());
      for (std::size_t k = 0; k < sensors.inlet.size(); ++k)
        s1[k] = physics::parabolic_inlet(sensors.inlet[k], v, domain.radius)[1];
      std::vector<double> s2(sensors.outlet.size(), settings.p_outlet);

      // Fresh evaluation points, never part of training.
      auto cloud = geom::sample_domain(
          domain, {0, 0, 0, static_cast<std::size_t>(settings.points_per_cloud)},
          v, settings.seed + 777);
      std::vector<Vec3> points = cloud.volume.points;

      // Errors are computed in the reference scaling the model was trained
      // in; velocity magnitude and pressure errors are scale-invariant.
      physics::FluidParams scale = ref;
      FieldErrors err = [&] {
        const double t0 = now_seconds();
        physics::FlowField predicted = predict_field(
            run.best_params, s1, s2, points, scale,
            settings.config.nondimensional);
        FieldErrors e = field_errors_against_oracle(predicted, oracle, false);
        e.infer_seconds = now_seconds() - t0;
        return e;
      }();

      EvalReport report;
      report.model = "pi-deeponet/" + sc.name;
      report.v_tag = v;
      report.split = split;
      report.vel_l2_rel = err.velocity;
      report.pres_l2_rel = err.pressure;
      report.train_seconds = run.stats.wall_seconds;
      report.infer_seconds = err.infer_seconds;
      report.stop_iter = run.stats.stop_iter;
      reports.push_back(report);
    };

    for (double v : sc.train_v) report_instance(v, "train");
    for (double v : sc.test_v) report_instance(v, "test");
  }
  return reports;
}

// --- field export --------------------------------------------------------------

void export_field(const physics::FlowField& predicted,
                  const physics::FlowField* truth, ExportFormat format,
                  const std::string& path) {
  predicted.validate();
  if (truth && truth->size() != predicted.size())
    throw UsageError("export_field: truth size mismatch");
  std::ofstream out(path);
  if (!out) throw ConfigError("export_field: cannot open '" + path + "'");

  if (format == ExportFormat::kCsv) {
    out << "x1,x2,x3,v1,v2,v3,p";
    if (truth) out << ",err_v1,err_v2,err_v3,err_p";
    out << "\n";
    for (std::size_t i = 0; i < predicted.size(); ++i) {
      out << fmt(predicted.points[i][0]) << ',' << fmt(predicted.points[i][1])
          << ',' << fmt(predicted.points[i][2]);
      for (int c = 0; c < 3; ++c) out << ',' << fmt(predicted.velocity[i][c]);
      out << ',' << fmt(predicted.pressure[i]);
      if (truth) {
        for (int c = 0; c < 3; ++c)
          out << ','
              << fmt(std::abs(predicted.velocity[i][c] -
                              truth->velocity[i][c]));
        out << ',' << fmt(std::abs(predicted.pressure[i] - truth->pressure[i]));
      }
      out << "\n";
    }
    return;
  }

  // Legacy ASCII VTK polydata with point vectors/scalars.
  const std::size_t n = predicted.size();
  out << "# vtk DataFile Version 3.0\n";
  out << "hemoflow predicted field\n";
  out << "ASCII\n";
  out << "DATASET POLYDATA\n";
  out << "POINTS " << n << " double\n";
  for (const Vec3& x : predicted.points)
    out << fmt(x[0]) << ' ' << fmt(x[1]) << ' ' << fmt(x[2]) << "\n";
  out << "POINT_DATA " << n << "\n";
  out << "VECTORS velocity double\n";
  for (const Vec3& v : predicted.velocity)
    out << fmt(v[0]) << ' ' << fmt(v[1]) << ' ' << fmt(v[2]) << "\n";
  out << "SCALARS pressure double 1\n";
  out << "LOOKUP_TABLE default\n";
  for (double p : predicted.pressure) out << fmt(p) << "\n";
  if (truth) {
    out << "SCALARS abs_error_velocity double 1\n";
    out << "LOOKUP_TABLE default\n";
    for (std::size_t i = 0; i < n; ++i) {
      const Vec3 d = {predicted.velocity[i][0] - truth->velocity[i][0],
                      predicted.velocity[i][1] - truth->velocity[i][1],
                      predicted.velocity[i][2] - truth->velocity[i][2]};
      out << fmt(norm3(d)) << "\n";
    }
    out << "SCALARS abs_error_pressure double 1\n";
    out << "LOOKUP_TABLE default\n";
    for (std::size_t i = 0; i < n; ++i)
      out << fmt(std::abs(predicted.pressure[i] - truth->pressure[i])) << "\n";
  }
}

}  // namespace hemoflow::eval
