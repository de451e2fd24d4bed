#pragma once

#include <optional>
#include <string>
#include <vector>

#include "hemoflow/geometry.hpp"
#include "hemoflow/nn.hpp"
#include "hemoflow/operators.hpp"
#include "hemoflow/physics.hpp"
#include "hemoflow/training.hpp"

namespace hemoflow::eval {

// Mean of per-batch relative L2 errors over consecutive batches of at most
// `batch_size` points. Zero-norm truth batches are excluded with a warning.
double l2_relative_error(std::span<const double> predicted,
                         std::span<const double> truth,
                         std::size_t batch_size = 10000);

std::vector<double> velocity_magnitude(const physics::FlowField& field);

struct ShiftCorrection {
  std::vector<double> corrected;
  double shift = 0.0;
};

// Removes the quasi-constant offset of pressures learned only through the
// physics term: shift = mean(predicted - truth).
ShiftCorrection pressure_shift_correct(std::span<const double> predicted,
                                       std::span<const double> truth);

// One line of the report CSV.
struct EvalReport {
  std::string model;
  double v_tag = 0.0;
  std::string split;
  double vel_l2_rel = 0.0;
  double pres_l2_rel = 0.0;
  double train_seconds = 0.0;
  double infer_seconds = 0.0;
  long stop_iter = 0;
};

void write_report_csv(const std::vector<EvalReport>& rows,
                      const std::string& path);

// Evaluates a trained network against the analytic pipe solution on a point
// set. Handles the dimensionless frame internally; errors are reported on
// velocity magnitude and (optionally shift-corrected) pressure.
struct FieldErrors {
  double velocity = 0.0;
  double pressure = 0.0;
  double pressure_shift = 0.0;  // applied shift (0 when not corrected)
  double infer_seconds = 0.0;
};

FieldErrors evaluate_network(const nn::ParamStore& params,
                             const physics::PoiseuilleFlow& oracle,
                             std::span<const Vec3> points, bool dimensionless,
                             bool shift_correct_pressure);

// `scale` overrides the normalization used by the model (multi-V operator
// models share one reference scaling); defaults to the oracle's fluid.
FieldErrors evaluate_operator(const operators::OperatorParams& params,
                              const physics::PoiseuilleFlow& oracle,
                              std::span<const double> sensors1,
                              std::span<const double> sensors2,
                              std::span<const Vec3> points, bool dimensionless,
                              bool shift_correct_pressure,
                              const physics::FluidParams* scale = nullptr);

// Mean squared NSE residual of an operator model at collocation points.
double operator_mean_residual(const operators::OperatorParams& params,
                              std::span<const double> sensors1,
                              std::span<const double> sensors2,
                              std::span<const Vec3> points,
                              const physics::FluidParams& fluid,
                              bool dimensionless);

// --- experiment shapes -------------------------------------------------------

struct AblationRow {
  std::string name;
  bool fourier = true, rwf = true, modified_mlp = true, grad_norm = true,
       lr_decay = true, nondimensional = true;
};

struct AblationSettings {
  nn::NetworkSpec base_spec;         // fourier/rwf/arch toggled per row
  train::TrainConfig base_config;    // grad-norm/lr-decay/nondim toggled
  geom::SplitClouds clouds;          // dimensional
  physics::FluidParams fluid;
  std::vector<std::uint64_t> seeds;
  std::vector<Vec3> eval_points;     // dimensional test points
  physics::PoiseuilleFlow oracle;
};

// Trains one model per (row, seed) with shared seeds across rows and
// reports test errors; rows keep their given order.
std::vector<EvalReport> ablation_run(const AblationSettings& settings,
                                     const std::vector<AblationRow>& rows);

// Applies a toggle row to spec/config copies.
void apply_toggles(const AblationRow& row, nn::NetworkSpec& spec,
                   train::TrainConfig& cfg);

struct SplitScenario {
  std::string name;       // e.g. "5-3"
  std::vector<double> train_v;
  std::vector<double> test_v;
};

struct SplitStudySettings {
  geom::DomainSpec domain;
  physics::FluidParams fluid_proto;  // v_max replaced per instance
  operators::OperatorSpec op_spec;
  train::TrainConfig config;
  int points_per_cloud = 4000;       // volume points per instance
  geom::DataScenario data_scenario;
  double p_outlet = 0.0;
  std::uint64_t seed = 0;
};

// Trains one operator model per scenario and reports per-V train/test
// errors. Scenarios must contain the extreme velocities in their train set.
std::vector<EvalReport> split_study(const SplitStudySettings& settings,
                                    const std::vector<SplitScenario>& scenarios);

void validate_scenario(const SplitScenario& scenario,
                       std::span<const double> all_v);

// --- field export --------------------------------------------------------------

enum class ExportFormat { kCsv, kVtkLegacy };

// Writes predicted fields at the query points, with absolute error columns
// when truth values are supplied.
void export_field(const physics::FlowField& predicted,
                  const physics::FlowField* truth, ExportFormat format,
                  const std::string& path);

// Predicts a flow field with a trained network (redimensionalizes when the
// model was trained on scaled data).
physics::FlowField predict_field(const nn::ParamStore& params,
                                 std::span<const Vec3> points,
                                 const physics::FluidParams& fluid,
                                 bool dimensionless);

physics::FlowField predict_field(const operators::OperatorParams& params,
                                 std::span<const double> sensors1,
                                 std::span<const double> sensors2,
                                 std::span<const Vec3> points,
                                 const physics::FluidParams& fluid,
                                 bool dimensionless);

}  // namespace hemoflow::eval
