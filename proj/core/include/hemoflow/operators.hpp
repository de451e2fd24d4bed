#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hemoflow/autodiff.hpp"
#include "hemoflow/geometry.hpp"
#include "hemoflow/nn.hpp"
#include "hemoflow/physics.hpp"

namespace hemoflow::operators {

// Two branch nets (inlet-velocity and outlet-pressure functions), one trunk,
// merged by elementwise product and read out through disjoint index ranges.
struct OperatorSpec {
  nn::NetworkSpec branch1;  // input m1 inlet sensors
  nn::NetworkSpec branch2;  // input m2 outlet sensors
  nn::NetworkSpec trunk;    // input 3 coordinates
  int q = 400;              // merged feature width
  struct Partition {
    std::string name;
    int lo, hi;  // half-open [lo, hi) into the merged features
  };
  std::vector<Partition> partition;  // ordered v1, v2, v3, p

  void validate() const;
  int output_count() const { return static_cast<int>(partition.size()); }

  // Equal split of q over (v1, v2, v3, p).
  static OperatorSpec standard(int m1, int m2, int branch_width,
                               int branch_depth, int trunk_width,
                               int trunk_depth, int q, std::uint64_t seed);
};

struct OperatorParams {
  OperatorSpec spec;
  nn::ParamStore branch1, branch2, trunk;
  std::size_t total_size() const {
    return branch1.size() + branch2.size() + trunk.size();
  }
  static OperatorParams init(const OperatorSpec& spec);
};

// Fixed sensor locations shared by every function instance. Deterministic
// sunflower layout over each disc (no seed needed).
struct SensorLayout {
  std::vector<Vec3> inlet;   // m1 points on the inlet disc (x2 = 0)
  std::vector<Vec3> outlet;  // m2 points on the outlet disc (x2 = length)
  static SensorLayout make(const geom::DomainSpec& domain, int m1, int m2);
};

// Appendix-style triplet rows for one stratum: coordinates, repeated sensor
// evaluations of both input functions, targets with a presence mask, and the
// row -> function-instance map.
struct OperatorTriplet {
  std::vector<Vec3> coordinates;           // N*P rows
  std::vector<double> sensors1;            // row-major (N*P) x m1
  std::vector<double> sensors2;            // row-major (N*P) x m2
  std::vector<std::array<double, 4>> targets;
  std::vector<std::array<std::uint8_t, 4>> target_mask;
  std::vector<std::uint32_t> sample_index;  // row -> instance i
  int m1 = 0, m2 = 0;

  std::size_t rows() const { return coordinates.size(); }
  void validate() const;
};

struct TripletBundle {
  std::array<OperatorTriplet, geom::kStratumCount> strata;
  OperatorTriplet& stratum(geom::StratumKind s) {
    return strata[static_cast<int>(s)];
  }
  const OperatorTriplet& stratum(geom::StratumKind s) const {
    return strata[static_cast<int>(s)];
  }
};

// Builds per-stratum triplets from one cloud per inlet velocity V. The
// inlet input function is the parabolic profile at that V; the outlet
// pressure function is read from outlet pressure labels when present and
// falls back to the constant outlet gauge pressure otherwise.
TripletBundle build_triplets(std::span<const geom::StratifiedPointCloud> clouds,
                             const SensorLayout& sensors,
                             const geom::DomainSpec& domain,
                             double p_outlet = 0.0);

// Directory export/import: coordinates.csv, sensors1.csv, sensors2.csv,
// targets.csv, index.csv (row counts validated on load).
void export_triplet(const OperatorTriplet& t, const std::string& dir);
OperatorTriplet import_triplet(const std::string& dir);

// Tape construction ----------------------------------------------------------

struct OperatorGraph {
  std::vector<ad::NodeId> params;  // branch1 | branch2 | trunk, layout order
  ad::NodeId param_base = 0;
  std::vector<ad::NodeId> sensors1, sensors2;  // input nodes
  std::array<ad::NodeId, 3> x{};               // coordinate inputs
  std::vector<ad::NodeId> outputs;             // one per partition
};

OperatorGraph build_operator_graph(ad::Tape& tape, const OperatorSpec& spec,
                                   const OperatorParams& params);

// One-shot evaluation at a coordinate for given sensor rows.
std::array<double, 4> deeponet_forward(const OperatorParams& params,
                                       std::span<const double> sensors1,
                                       std::span<const double> sensors2,
                                       const Vec3& x);

struct OperatorDerivatives {
  std::array<double, 4> value;
  std::array<std::array<double, 3>, 4> first;   // d out_i / d x_j
  std::array<std::array<double, 3>, 4> second;  // d^2 out_i / d x_j^2
};

// First and second coordinate derivatives of every output; sensor inputs are
// constants of the differentiation, so everything flows through the trunk.
OperatorDerivatives operator_input_derivatives(const OperatorParams& params,
                                               std::span<const double> sensors1,
                                               std::span<const double> sensors2,
                                               const Vec3& x);

// Re-usable evaluator for inference over many points with fixed sensors.
class OperatorEvaluator {
 public:
  explicit OperatorEvaluator(const OperatorParams& params);

  void set_sensors(std::span<const double> sensors1,
                   std::span<const double> sensors2);
  void eval_into(const Vec3& x, std::span<double> out);

 private:
  ad::Tape tape_;
  OperatorGraph graph_;
  ad::Workspace ws_;
  bool sensors_set_ = false;
  bool first_ = true;
};

}  // namespace hemoflow::operators
