#pragma once

#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "hemoflow/common.hpp"

namespace hemoflow::ad {

using NodeId = std::uint32_t;
inline constexpr NodeId kNoNode = 0xffffffffu;

enum class Op : std::uint8_t {
  kConst,
  kInput,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kNeg,
  kTanh,
  kSin,
  kCos,
  kExp,
  kPowInt,
  // Fused linear combination sum_i a_i * b_i over an operand-pair range.
  // One affine layer row is a single kDot node; keeps tapes layer-sized
  // instead of weight-sized without changing the scalar-node contract.
  kDot,
};

struct Node {
  Op op;
  std::uint8_t flags;  // kDot: bit0 / bit1 set when the a / b ids are a
                       // stride-1 range (vectorized evaluation path)
  std::int16_t ipow;   // kPowInt exponent
  NodeId a;            // operand; kConst: constant-pool index;
                       // kDot: offset into the pair arrays
  NodeId b;            // operand; kDot: pair count
};
static_assert(sizeof(Node) == 12);

inline constexpr std::uint8_t kDotContigA = 1;
inline constexpr std::uint8_t kDotContigB = 2;

// Append-only scalar computation graph. Operand ids strictly precede the
// node id, so the node list is already a topological order. Values live in
// Workspace objects; several workspaces may evaluate one tape concurrently.
class Tape {
 public:
  Tape();

  NodeId constant(double v);
  NodeId zero() const { return zero_; }
  NodeId one() const { return one_; }

  NodeId input();

  NodeId add(NodeId a, NodeId b) { return binary(Op::kAdd, a, b); }
  NodeId sub(NodeId a, NodeId b) { return binary(Op::kSub, a, b); }
  NodeId mul(NodeId a, NodeId b) { return binary(Op::kMul, a, b); }
  NodeId div(NodeId a, NodeId b) { return binary(Op::kDiv, a, b); }
  NodeId neg(NodeId a) { return unary(Op::kNeg, a); }
  NodeId tanh(NodeId a) { return unary(Op::kTanh, a); }
  NodeId sin(NodeId a) { return unary(Op::kSin, a); }
  NodeId cos(NodeId a) { return unary(Op::kCos, a); }
  NodeId exp(NodeId a) { return unary(Op::kExp, a); }
  NodeId pow_int(NodeId a, int n);

  NodeId dot(std::span<const NodeId> a, std::span<const NodeId> b);

  // Convenience: bias + dot(w, x).
  NodeId affine(NodeId bias, std::span<const NodeId> w,
                std::span<const NodeId> x) {
    return add(bias, dot(w, x));
  }

  std::size_t size() const { return nodes_.size(); }
  const Node& node(NodeId id) const { return nodes_[id]; }
  double constant_value(NodeId id) const { return const_pool_[nodes_[id].a]; }
  std::span<const NodeId> pair_a(const Node& n) const {
    return {pair_a_.data() + n.a, static_cast<std::size_t>(n.b)};
  }
  std::span<const NodeId> pair_b(const Node& n) const {
    return {pair_b_.data() + n.a, static_cast<std::size_t>(n.b)};
  }

  const std::vector<NodeId>& inputs() const { return inputs_; }

  NodeId root() const;
  void set_root(NodeId id);

  // Checkpoint marker: rewinding drops every node appended after mark().
  // Used to reset graphs between iterations and to roll back scratch
  // differentiation subgraphs.
  struct Mark {
    std::size_t nodes, pairs, inputs;
  };
  Mark mark() const { return {nodes_.size(), pair_a_.size(), inputs_.size()}; }
  void rewind(const Mark& m);

 private:
  friend class Workspace;

  NodeId append(Node n) {
    nodes_.push_back(n);
    return static_cast<NodeId>(nodes_.size() - 1);
  }
  NodeId unary(Op op, NodeId a) {
    check(a);
    return append({op, 0, 0, a, 0});
  }
  NodeId binary(Op op, NodeId a, NodeId b) {
    check(a);
    check(b);
    return append({op, 0, 0, a, b});
  }
  void check(NodeId id) const {
    if (id >= nodes_.size())
      throw UsageError("tape: operand id out of range");
  }

  std::vector<Node> nodes_;
  std::vector<double> const_pool_;
  std::vector<NodeId> pair_a_, pair_b_;
  std::vector<NodeId> inputs_;
  std::unordered_map<std::uint64_t, NodeId> const_cache_;
  NodeId zero_ = 0, one_ = 0;
  NodeId root_ = kNoNode;
};

// Per-evaluation state: primal values and adjoint slots for one tape.
class Workspace {
 public:
  explicit Workspace(const Tape& tape);

  void attach(const Tape& tape);  // full reset, drops bindings
  void sync();                    // follow tape growth/rewind, keep bindings

  void bind(NodeId input, double v);
  // Binds consecutive input nodes starting at `first` (inputs created
  // back-to-back occupy consecutive ids).
  void bind_range(NodeId first, std::span<const double> values);

  // Evaluates every node; returns the root value. Throws ConfigError when a
  // registered input was never bound.
  double forward();
  // Re-evaluates nodes with id >= from (inputs keep their bound values).
  void forward_from(NodeId from);

  double value(NodeId id) const { return values_[id]; }

  // Reverse sweep from `root`; afterwards adjoint(root) == 1 and
  // adjoint(n) == d root / d n for every node n. Nodes below `stop` still
  // receive adjoint but are not processed; pass the end of a leading
  // input-only block to skip iterating it.
  void reverse(NodeId root, NodeId stop = 0);
  double adjoint(NodeId id) const { return adjoints_[id]; }

  const Tape& tape() const { return *tape_; }

 private:
  void eval_node(NodeId i);

  const Tape* tape_;
  std::vector<double> values_;
  std::vector<double> adjoints_;
  std::vector<std::uint8_t> bound_;
  bool inputs_checked_ = false;
};

// --- spec-facing operations -------------------------------------------------

// Runs a forward pass binding `inputs` in registration order.
double forward(const Tape& tape, Workspace& ws, std::span<const double> inputs);

// d root / d wrt_k via one numeric reverse sweep. Requires a prior forward.
std::vector<double> gradient(const Tape& tape, Workspace& ws, NodeId root,
                             std::span<const NodeId> wrt);

// d^2 root / d wrt^2 by building the gradient as a differentiable graph and
// differentiating it again (reverse-over-reverse). The scratch subgraph is
// rolled back before returning; `wrt` must be a registered input.
double input_hessian_diag(Tape& tape, Workspace& ws, NodeId root, NodeId wrt);

// Symbolic reverse-mode differentiation: appends nodes computing
// d root / d wrt_k and returns their ids (kNoNode for identically-zero
// entries). The appended subgraph is itself differentiable, which is how
// second derivatives and parameter gradients of residual losses are formed.
// Derivative-factor caches persist across calls on the same tape, so reuse
// one builder while assembling a template.
class GradientBuilder {
 public:
  explicit GradientBuilder(Tape& tape) : tape_(&tape) {}

  std::vector<NodeId> derive(NodeId root, std::span<const NodeId> wrt);

  // derive() result with zeros materialized as constant nodes.
  std::vector<NodeId> derive_or_zero(NodeId root, std::span<const NodeId> wrt);

  Tape& tape() { return *tape_; }

 private:
  NodeId factor(NodeId id);  // cached local-derivative factor for unary ops
  NodeId emit_product(NodeId m, NodeId f);

  Tape* tape_;
  std::vector<std::uint8_t> depends_;
  std::unordered_map<NodeId, NodeId> factor_cache_;
  std::unordered_map<NodeId, NodeId> div_recip_cache_;
  std::unordered_map<NodeId, NodeId> div_b_factor_cache_;

  struct Term {
    NodeId m, f;  // contribution m * f; f == kNoNode means factor 1
    std::uint32_t next;
  };
  std::vector<Term> term_pool_;
  std::vector<std::uint32_t> term_head_;
  std::vector<NodeId> scratch_a_, scratch_b_;
};

// Symbolic forward-mode differentiation w.r.t. one input: appends tangent
// nodes for the part of the tape that both depends on `wrt` and feeds one of
// the `targets`, in a single topological pass. Tangent graphs are ordinary
// differentiable nodes, so sweeping twice yields second derivatives; the
// residual assembly uses this because one sweep serves every output at
// once, where reverse mode would need a sweep per (output, coordinate).
class TangentBuilder {
 public:
  explicit TangentBuilder(Tape& tape) : tape_(&tape) {}

  // Returns d target_k / d wrt as node ids (kNoNode when identically zero).
  std::vector<NodeId> sweep(NodeId wrt, std::span<const NodeId> targets);

  Tape& tape() { return *tape_; }

 private:
  NodeId factor(NodeId id);  // cached local-derivative factor for unary ops

  Tape* tape_;
  std::unordered_map<NodeId, NodeId> factor_cache_;
  // Tangents already materialized per wrt input; repeated sweeps w.r.t. the
  // same coordinate (first then second derivatives) reuse them instead of
  // duplicating the subgraph. Identically-zero tangents are stored as the
  // interned zero constant; kNoNode marks "not computed yet".
  std::unordered_map<NodeId, std::vector<NodeId>> tangent_cache_;
  std::vector<std::uint8_t> wanted_;
  std::vector<NodeId> dot_scratch_a_, dot_scratch_b_;
};

}  // namespace hemoflow::ad
