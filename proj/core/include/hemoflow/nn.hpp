#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hemoflow/autodiff.hpp"
#include "hemoflow/common.hpp"

namespace hemoflow::nn {

struct FourierOptions {
  int e = 128;         // embedding rows; the first affine layer consumes 2e
  double sigma = 1.0;  // stddev of the frozen projection entries
  bool operator==(const FourierOptions&) const = default;
};

struct RwfOptions {
  double mu = 0.5;  // scale factor is exp(N(mu, sigma^2)) per neuron
  double sigma = 0.1;
  bool operator==(const RwfOptions&) const = default;
};

enum class ArchKind { kMlp, kModifiedMlp };

// Architecture descriptor. Activation is tanh throughout.
struct NetworkSpec {
  int input_dim = 3;
  int output_dim = 4;
  int hidden_layers = 4;
  int hidden_width = 256;
  ArchKind kind = ArchKind::kMlp;
  std::optional<FourierOptions> fourier;
  std::optional<RwfOptions> rwf;
  std::uint64_t init_seed = 0;

  void validate() const;
  // Width of the vector entering the first affine layer (2e with Fourier).
  int embedded_dim() const {
    return fourier ? 2 * fourier->e : input_dim;
  }
  std::size_t param_count() const;
  bool operator==(const NetworkSpec&) const = default;
};

enum class TensorRole : std::uint8_t { kWeight, kBias, kScale, kDirection };
enum class BlockKind : std::uint8_t {
  kEncoderU,
  kEncoderV,
  kHidden,
  kOutput
};

struct LayoutEntry {
  BlockKind block;
  int layer;  // hidden layer index, 0-based; unused otherwise
  TensorRole role;
  std::size_t offset;
  int rows, cols;  // bias/scale: cols == 1
  std::size_t count() const {
    return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
  }
};

struct Matrix {
  int rows = 0, cols = 0;
  std::vector<double> data;  // row-major
  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const {
    return data[static_cast<std::size_t>(r) * cols + c];
  }
};

// Flat trainable parameter vector plus the layout table mapping
// (block, role) slices into it. The frozen Fourier matrix lives outside the
// trainable vector.
class ParamStore {
 public:
  ParamStore() = default;

  static ParamStore init(const NetworkSpec& spec);

  const NetworkSpec& spec() const { return spec_; }
  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }
  std::size_t size() const { return values_.size(); }

  const std::vector<LayoutEntry>& layout() const { return layout_; }
  const LayoutEntry& entry(BlockKind block, int layer, TensorRole role) const;

  const std::vector<double>& fourier_b() const { return fourier_b_; }
  std::vector<double>& fourier_b() { return fourier_b_; }

  // Materializes w = s .* v per neuron row for every affine block.
  // UsageError unless the spec uses RWF.
  std::vector<Matrix> effective_weights() const;

  // Test/interop hook: assembles parameters with the given spec and raw
  // storage (sizes must match the layout).
  static ParamStore assemble(const NetworkSpec& spec,
                             std::vector<double> values,
                             std::vector<double> fourier_b);

 private:
  NetworkSpec spec_;
  std::vector<double> values_;
  std::vector<double> fourier_b_;  // row-major e x input_dim
  std::vector<LayoutEntry> layout_;
};

// gamma(x) = [cos(2 pi B x), sin(2 pi B x)]; b is row-major e x d.
std::vector<double> fourier_embed(std::span<const double> x,
                                  std::span<const double> b, int e, int d);

// Tape construction ----------------------------------------------------------

struct NetworkGraph {
  std::vector<ad::NodeId> x;        // input nodes, size input_dim
  std::vector<ad::NodeId> params;   // input nodes, one per theta entry
  std::vector<ad::NodeId> outputs;  // size output_dim
  ad::NodeId param_base = 0;        // params occupy [param_base, +size)
};

// Appends the network to the tape using caller-provided input nodes.
// `param_nodes` must hold one node per parameter in layout order and be
// id-contiguous (create them back-to-back) so weight rows stay vectorized.
std::vector<ad::NodeId> build_network(ad::Tape& tape, const NetworkSpec& spec,
                                      std::span<const double> fourier_b,
                                      std::span<const ad::NodeId> x_nodes,
                                      std::span<const ad::NodeId> param_nodes);

// Convenience wrapper creating parameter and coordinate inputs itself
// (params first, then x).
NetworkGraph build_network_graph(ad::Tape& tape, const NetworkSpec& spec,
                                 std::span<const double> fourier_b);

// One-shot tape-backed evaluation.
std::vector<double> mlp_forward(const ParamStore& params,
                                std::span<const double> x);
std::vector<double> modified_mlp_forward(const ParamStore& params,
                                         std::span<const double> x);

// Builds the graph once and re-evaluates it per query point; parameters are
// bound up front. The cheap way to run one network at many points.
class FieldEvaluator {
 public:
  explicit FieldEvaluator(const ParamStore& params);

  std::vector<double> operator()(std::span<const double> x);
  // Reuses an output buffer to avoid per-point allocation.
  void eval_into(std::span<const double> x, std::span<double> out);

  const ad::Tape& tape() const { return tape_; }

 private:
  ad::Tape tape_;
  NetworkGraph graph_;
  ad::Workspace ws_;
  bool first_ = true;
};

}  // namespace hemoflow::nn
