#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hemoflow/checkpoint.hpp"
#include "hemoflow/geometry.hpp"
#include "hemoflow/nn.hpp"
#include "hemoflow/operators.hpp"
#include "hemoflow/physics.hpp"

namespace hemoflow::train {

// Loss terms in reporting order.
enum LossTerm : int { kData = 0, kInlet, kWall, kOutlet, kPhy };
inline constexpr int kTermCount = 5;
const char* term_name(int term);

struct LossBreakdown {
  std::array<double, kTermCount> value{};   // unweighted per-term means
  std::array<double, kTermCount> lambda{};  // balancing weights
  std::array<bool, kTermCount> active{};
  double total = 0.0;  // sum of lambda_i * value_i over active terms

  void finalize();
};

// --- Grad Norm ---------------------------------------------------------------

// One balancing update: target weights make every lambda_i * |grad_i| equal
// to the mean gradient norm, then blend with the previous weights using the
// given momentum. Terms with zero norm (or inactive ones) keep their weight;
// an all-zero update is a warning no-op.
std::array<double, kTermCount> grad_norm_update(
    const std::array<double, kTermCount>& lambda,
    const std::array<double, kTermCount>& grad_norms,
    const std::array<bool, kTermCount>& active, double momentum);

// --- Adam ---------------------------------------------------------------------

struct AdamHyper {
  double alpha0 = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double decay_rate = 0.95;
  long decay_steps = 3000;
  bool lr_decay = true;
};

class Adam {
 public:
  Adam(std::size_t param_count, AdamHyper hyper);

  // alpha_t = alpha0 * r^(t/s), times the divergence-guard multiplier.
  double learning_rate() const;
  std::uint64_t step_count() const { return t_; }

  // Standard bias-corrected update; throws UsageError on non-finite input.
  void step(std::vector<double>& params, std::span<const double> grad);

  void halve_learning_rate() { lr_multiplier_ *= 0.5; }
  double lr_multiplier() const { return lr_multiplier_; }

  checkpoint::AdamSnapshot snapshot() const;
  void restore(const checkpoint::AdamSnapshot& snap);

  const AdamHyper& hyper() const { return hyper_; }

 private:
  AdamHyper hyper_;
  std::uint64_t t_ = 0;
  double lr_multiplier_ = 1.0;
  std::vector<double> m_, v_;
};

// --- batches ------------------------------------------------------------------

struct StratumBatch {
  std::vector<Vec3> points;
  std::vector<Vec3> vel_targets;   // boundary + data terms
  std::vector<double> p_targets;   // data term only
  std::size_t size() const { return points.size(); }
};

struct BatchSet {
  StratumBatch data, inlet, wall, outlet;
  std::vector<Vec3> collocation;  // physics residual points
};

// Draws one training batch: `batch` points per stratum without replacement
// (clamped to the stratum size), collocation from the combined coordinate
// set of inlet, wall, outlet and volume.
BatchSet sample_batch(const geom::StratifiedPointCloud& cloud, int batch,
                      Rng& rng);
// Deterministic batch of (up to) `cap` leading points per stratum.
BatchSet full_batch(const geom::StratifiedPointCloud& cloud, std::size_t cap);

struct TripletRows {
  std::vector<Vec3> x;
  std::vector<double> sensors1, sensors2;  // row-major
  std::vector<std::array<double, 4>> targets;
  int m1 = 0, m2 = 0;
  std::size_t size() const { return x.size(); }
};

struct OperatorBatchSet {
  TripletRows data, inlet, wall, outlet;
  TripletRows collocation;
};

OperatorBatchSet sample_operator_batch(const operators::TripletBundle& bundle,
                                       int batch, Rng& rng);
OperatorBatchSet full_operator_batch(const operators::TripletBundle& bundle,
                                     std::size_t cap);

// --- loss evaluation -----------------------------------------------------------

struct TermEvaluation {
  LossBreakdown losses;  // lambdas all 1, totals unweighted
  std::array<std::vector<double>, kTermCount> grads;  // d term / d theta
};

// Assembles the DeepNN / PINN loss terms on freshly built tapes and
// evaluates them over a batch; optionally also the per-term parameter
// gradients (deterministic fixed-chunk reduction, any thread count).
class PinnLossEvaluator {
 public:
  PinnLossEvaluator(const nn::NetworkSpec& spec,
                    const std::vector<double>& fourier_b,
                    physics::ResidualCoeffs coeffs, bool physics_enabled);

  TermEvaluation evaluate(std::span<const double> theta, const BatchSet& batch,
                          bool want_gradients);

  std::size_t param_count() const { return param_count_; }

 private:
  struct Template;
  nn::NetworkSpec spec_;
  std::vector<double> fourier_b_;
  physics::ResidualCoeffs coeffs_;
  bool physics_enabled_;
  std::size_t param_count_;
};

class OperatorLossEvaluator {
 public:
  OperatorLossEvaluator(const operators::OperatorSpec& spec,
                        const operators::OperatorParams& proto,
                        physics::ResidualCoeffs coeffs, bool physics_enabled);

  TermEvaluation evaluate(std::span<const double> theta,
                          const OperatorBatchSet& batch, bool want_gradients);

  std::size_t param_count() const { return param_count_; }

  // Concatenated theta <-> per-net stores.
  static std::vector<double> pack(const operators::OperatorParams& p);
  static void unpack(std::span<const double> theta,
                     operators::OperatorParams& p);

 private:
  operators::OperatorSpec spec_;
  operators::OperatorParams proto_;  // carries frozen matrices
  physics::ResidualCoeffs coeffs_;
  bool physics_enabled_;
  std::size_t param_count_;
};

// Spec-facing one-shot loss assemblies (no gradients).
LossBreakdown pinn_losses(const nn::ParamStore& params, const BatchSet& batch,
                          const physics::FluidParams& fluid,
                          physics::Frame frame, bool include_physics,
                          const std::array<double, kTermCount>* lambda = nullptr);

LossBreakdown pideeponet_losses(const operators::OperatorParams& params,
                                const OperatorBatchSet& batch,
                                const physics::FluidParams& fluid,
                                physics::Frame frame, bool include_physics,
                                const std::array<double, kTermCount>* lambda =
                                    nullptr);

// --- training loops -------------------------------------------------------------

enum class ModelKind { kDeepNN, kPinn, kWuPinn, kDeepONet, kPiDeepONet };
ModelKind model_kind_from_name(const std::string& name);
const char* model_kind_name(ModelKind kind);

struct GradNormOptions {
  bool enabled = true;
  double momentum = 0.9;
  long update_every = 1000;
};

struct TrainConfig {
  ModelKind kind = ModelKind::kPinn;
  long iterations = 20000;
  long warmup_iterations = 15000;  // wu-pinn phase 1
  int batch_size = 256;
  bool nondimensional = true;
  GradNormOptions grad_norm;
  AdamHyper adam;
  std::uint64_t seed = 0;
  double target_total_loss = std::numeric_limits<double>::infinity();
  long log_every = 100;
  long checkpoint_every = 0;  // 0 = only final
  std::size_t val_cap = 512;
  double divergence_threshold = 1e6;

  void validate() const;
};

struct RunArtifacts {
  double best_val_metric = 0.0;
  long best_iter = 0;
  double min_total_loss = 0.0;
  long min_total_iter = 0;
  double final_total_loss = 0.0;
  long stop_iter = 0;  // iterations executed
  std::array<double, kTermCount> final_lambda{};
  double wall_seconds = 0.0;
  double warmup_wall_seconds = 0.0;  // wu-pinn phase 1 share
  std::string metrics_path;
};

struct PinnRun {
  nn::ParamStore best_params;
  nn::ParamStore final_params;
  RunArtifacts stats;
};

struct OperatorRun {
  operators::OperatorParams best_params;
  operators::OperatorParams final_params;
  RunArtifacts stats;
};

// Trains a DeepNN or PINN on pre-split clouds (dimensional; the loop applies
// non-dimensionalization itself when configured). `initial` overrides the
// seed-based Xavier init, e.g. for warm starts.
PinnRun train_pinn(const TrainConfig& cfg, const nn::NetworkSpec& spec,
                   const geom::SplitClouds& clouds,
                   const physics::FluidParams& fluid,
                   const std::string& metrics_path = "",
                   const nn::ParamStore* initial = nullptr,
                   const std::string& checkpoint_path = "");

// Two-phase schedule: a data-only warm-up followed by physics-augmented
// fine-tuning from the warm-up's best checkpoint, on one iteration budget.
PinnRun warmup_train(const TrainConfig& cfg, const nn::NetworkSpec& spec,
                     const geom::SplitClouds& clouds,
                     const physics::FluidParams& fluid,
                     const std::string& metrics_path = "",
                     const std::string& checkpoint_path = "");

// Warm-started run from a baseline checkpoint; refuses to load when the
// baseline architecture differs from the target spec (init seeds aside).
// Stops once the total loss reaches cfg.target_total_loss.
PinnRun transfer_train(const TrainConfig& cfg, const nn::NetworkSpec& target_spec,
                       const nn::ParamStore& baseline,
                       const geom::SplitClouds& clouds,
                       const physics::FluidParams& fluid,
                       const std::string& metrics_path = "",
                       const std::string& checkpoint_path = "");

// DeepONet / PI-DeepONet over triplet bundles built per training cloud.
// `fluid_by_instance` supplies the Reynolds scaling per instance; with the
// shared-geometry datasets used here the residual coefficients depend only
// on the frame and the per-instance V carried by the sensors, so one
// representative FluidParams is taken for the dimensionless scaling.
OperatorRun train_operator(const TrainConfig& cfg,
                           const operators::OperatorSpec& spec,
                           const operators::TripletBundle& train_bundle,
                           const operators::TripletBundle& val_bundle,
                           const physics::FluidParams& fluid,
                           const std::string& metrics_path = "",
                           const std::string& checkpoint_path = "");

// Non-dimensionalizes every stratum of a cloud in place (coordinates by the
// inlet diameter, velocities by V, pressures by rho V^2).
void nondimensionalize_cloud(geom::StratifiedPointCloud& cloud,
                             const physics::FluidParams& fluid);
void nondimensionalize_bundle(operators::TripletBundle& bundle,
                              const physics::FluidParams& fluid);

inline constexpr const char* kMetricsHeader =
    "iter,loss_total,loss_data,loss_inlet,loss_wall,loss_outlet,loss_phy,"
    "lambda_data,lambda_inlet,lambda_wall,lambda_outlet,lambda_phy,lr,"
    "val_metric,wall_clock_s";

}  // namespace hemoflow::train
