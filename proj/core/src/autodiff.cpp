#include "hemoflow/autodiff.hpp"

#include <cmath>
#include <cstring>
#include <string>

namespace hemoflow::ad {

namespace {

std::uint64_t bits_of(double v) {
  std::uint64_t b;
  std::memcpy(&b, &v, sizeof b);
  return b;
}

}  // namespace

Tape::Tape() {
  zero_ = constant(0.0);
  one_ = constant(1.0);
}

NodeId Tape::constant(double v) {
  const std::uint64_t key = bits_of(v);
  if (auto it = const_cache_.find(key); it != const_cache_.end())
    return it->second;
  const_pool_.push_back(v);
  const NodeId id =
      append({Op::kConst, 0, 0,
              static_cast<NodeId>(const_pool_.size() - 1), 0});
  const_cache_.emplace(key, id);
  return id;
}

NodeId Tape::input() {
  const NodeId id = append({Op::kInput, 0, 0, 0, 0});
  inputs_.push_back(id);
  return id;
}

NodeId Tape::pow_int(NodeId a, int n) {
  check(a);
  if (n < -32 || n > 32)
    throw UsageError("tape: pow_int exponent out of supported range");
  Node node{Op::kPowInt, 0, static_cast<std::int16_t>(n), a, 0};
  return append(node);
}

NodeId Tape::dot(std::span<const NodeId> a, std::span<const NodeId> b) {
  if (a.size() != b.size())
    throw UsageError("tape: dot operand lists differ in length");
  if (a.empty()) return zero_;
  std::uint8_t flags = kDotContigA | kDotContigB;
  for (std::size_t i = 0; i < a.size(); ++i) {
    check(a[i]);
    check(b[i]);
    if (i > 0 && a[i] != a[i - 1] + 1) flags &= ~kDotContigA;
    if (i > 0 && b[i] != b[i - 1] + 1) flags &= ~kDotContigB;
  }
  const NodeId off = static_cast<NodeId>(pair_a_.size());
  pair_a_.insert(pair_a_.end(), a.begin(), a.end());
  pair_b_.insert(pair_b_.end(), b.begin(), b.end());
  return append({Op::kDot, flags, 0, off, static_cast<NodeId>(a.size())});
}

NodeId Tape::root() const {
  if (root_ != kNoNode) return root_;
  if (nodes_.empty()) throw UsageError("tape: empty tape has no root");
  return static_cast<NodeId>(nodes_.size() - 1);
}

void Tape::set_root(NodeId id) {
  check(id);
  root_ = id;
}

void Tape::rewind(const Mark& m) {
  if (m.nodes > nodes_.size())
    throw UsageError("tape: rewind mark is ahead of the tape");
  for (std::size_t i = m.nodes; i < nodes_.size(); ++i) {
    if (nodes_[i].op == Op::kConst)
      const_cache_.erase(bits_of(const_pool_[nodes_[i].a]));
  }
  // Constant pool entries past the mark belong to dropped nodes only.
  std::size_t pool_keep = const_pool_.size();
  for (std::size_t i = m.nodes; i < nodes_.size(); ++i) {
    if (nodes_[i].op == Op::kConst)
      pool_keep = std::min(pool_keep, static_cast<std::size_t>(nodes_[i].a));
  }
  nodes_.resize(m.nodes);
  const_pool_.resize(pool_keep);
  pair_a_.resize(m.pairs);
  pair_b_.resize(m.pairs);
  inputs_.resize(m.inputs);
  if (root_ != kNoNode && root_ >= nodes_.size()) root_ = kNoNode;
}

// ---------------------------------------------------------------------------

Workspace::Workspace(const Tape& tape) { attach(tape); }

void Workspace::attach(const Tape& tape) {
  tape_ = &tape;
  values_.assign(tape.size(), 0.0);
  adjoints_.assign(tape.size(), 0.0);
  bound_.assign(tape.size(), 0);
  inputs_checked_ = false;
}

void Workspace::sync() {
  const std::size_t n = tape_->size();
  if (values_.size() == n) return;
  values_.resize(n, 0.0);
  adjoints_.resize(n, 0.0);
  bound_.resize(n, 0);
  inputs_checked_ = false;
}

void Workspace::bind(NodeId input, double v) {
  if (input >= tape_->size() || tape_->node(input).op != Op::kInput)
    throw UsageError("workspace: bind target is not an input node");
  values_[input] = v;
  bound_[input] = 1;
}

void Workspace::bind_range(NodeId first, std::span<const double> values) {
  if (first + values.size() > tape_->size())
    throw UsageError("workspace: bind range exceeds tape");
  for (std::size_t i = 0; i < values.size(); ++i) {
    const NodeId id = first + static_cast<NodeId>(i);
    if (tape_->node(id).op != Op::kInput)
      throw UsageError("workspace: bind range crosses a non-input node");
    values_[id] = values[i];
    bound_[id] = 1;
  }
}

void Workspace::eval_node(NodeId i) {
  const Node& n = tape_->nodes_[i];
  double* v = values_.data();
  switch (n.op) {
    case Op::kConst:
      v[i] = tape_->const_pool_[n.a];
      break;
    case Op::kInput:
      break;  // keeps its bound value
    case Op::kAdd:
      v[i] = v[n.a] + v[n.b];
      break;
    case Op::kSub:
      v[i] = v[n.a] - v[n.b];
      break;
    case Op::kMul:
      v[i] = v[n.a] * v[n.b];
      break;
    case Op::kDiv:
      v[i] = v[n.a] / v[n.b];
      break;
    case Op::kNeg:
      v[i] = -v[n.a];
      break;
    case Op::kTanh:
      v[i] = std::tanh(v[n.a]);
      break;
    case Op::kSin:
      v[i] = std::sin(v[n.a]);
      break;
    case Op::kCos:
      v[i] = std::cos(v[n.a]);
      break;
    case Op::kExp:
      v[i] = std::exp(v[n.a]);
      break;
    case Op::kPowInt: {
      // Exponentiation by squaring; exponents are small integers.
      int e = n.ipow;
      double base = v[n.a];
      if (e < 0) {
        base = 1.0 / base;
        e = -e;
      }
      double r = 1.0;
      while (e > 0) {
        if (e & 1) r *= base;
        base *= base;
        e >>= 1;
      }
      v[i] = r;
      break;
    }
    case Op::kDot: {
      const std::size_t len = n.b;
      const NodeId* pa = tape_->pair_a_.data() + n.a;
      const NodeId* pb = tape_->pair_b_.data() + n.a;
      double acc = 0.0;
      if ((n.flags & kDotContigA) && (n.flags & kDotContigB)) {
        const double* x = v + pa[0];
        const double* y = v + pb[0];
        // Fixed four-lane unroll: breaks the serial reduction dependency
        // with a deterministic summation order.
        double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
        std::size_t k = 0;
        for (; k + 4 <= len; k += 4) {
          a0 += x[k] * y[k];
          a1 += x[k + 1] * y[k + 1];
          a2 += x[k + 2] * y[k + 2];
          a3 += x[k + 3] * y[k + 3];
        }
        acc = (a0 + a1) + (a2 + a3);
        for (; k < len; ++k) acc += x[k] * y[k];
      } else if (n.flags & kDotContigA) {
        const double* x = v + pa[0];
        for (std::size_t k = 0; k < len; ++k) acc += x[k] * v[pb[k]];
      } else if (n.flags & kDotContigB) {
        const double* y = v + pb[0];
        for (std::size_t k = 0; k < len; ++k) acc += v[pa[k]] * y[k];
      } else {
        for (std::size_t k = 0; k < len; ++k) acc += v[pa[k]] * v[pb[k]];
      }
      v[i] = acc;
      break;
    }
  }
}

double Workspace::forward() {
  sync();
  if (!inputs_checked_) {
    for (NodeId id : tape_->inputs_) {
      if (!bound_[id])
        throw ConfigError("forward: input node " + std::to_string(id) +
                          " was never bound");
    }
    inputs_checked_ = true;
  }
  const std::size_t n = tape_->size();
  for (NodeId i = 0; i < n; ++i) eval_node(i);
  return values_[tape_->root()];
}

void Workspace::forward_from(NodeId from) {
  const std::size_t n = tape_->size();
  for (NodeId i = from; i < n; ++i) eval_node(i);
}

void Workspace::reverse(NodeId root, NodeId stop) {
  if (root >= tape_->size()) throw UsageError("reverse: root out of range");
  std::fill(adjoints_.begin(), adjoints_.begin() + root + 1, 0.0);
  adjoints_[root] = 1.0;
  const double* v = values_.data();
  double* adj = adjoints_.data();
  for (NodeId i = root + 1; i-- > stop;) {
    const double g = adj[i];
    if (g == 0.0) continue;
    const Node& n = tape_->nodes_[i];
    switch (n.op) {
      case Op::kConst:
      case Op::kInput:
        break;
      case Op::kAdd:
        adj[n.a] += g;
        adj[n.b] += g;
        break;
      case Op::kSub:
        adj[n.a] += g;
        adj[n.b] -= g;
        break;
      case Op::kMul:
        adj[n.a] += g * v[n.b];
        adj[n.b] += g * v[n.a];
        break;
      case Op::kDiv:
        adj[n.a] += g / v[n.b];
        adj[n.b] -= g * v[i] / v[n.b];
        break;
      case Op::kNeg:
        adj[n.a] -= g;
        break;
      case Op::kTanh:
        adj[n.a] += g * (1.0 - v[i] * v[i]);
        break;
      case Op::kSin:
        adj[n.a] += g * std::cos(v[n.a]);
        break;
      case Op::kCos:
        adj[n.a] -= g * std::sin(v[n.a]);
        break;
      case Op::kExp:
        adj[n.a] += g * v[i];
        break;
      case Op::kPowInt: {
        const int e = n.ipow;
        if (e != 0) {
          double p;  // v[n.a]^(e-1)
          if (e == 1) {
            p = 1.0;
          } else {
            int k = e - 1;
            double base = v[n.a];
            if (k < 0) {
              base = 1.0 / base;
              k = -k;
            }
            p = 1.0;
            while (k > 0) {
              if (k & 1) p *= base;
              base *= base;
              k >>= 1;
            }
          }
          adj[n.a] += g * static_cast<double>(e) * p;
        }
        break;
      }
      case Op::kDot: {
        const std::size_t len = n.b;
        const NodeId* pa = tape_->pair_a_.data() + n.a;
        const NodeId* pb = tape_->pair_b_.data() + n.a;
        if ((n.flags & kDotContigA) && (n.flags & kDotContigB)) {
          double* aa = adj + pa[0];
          double* ab = adj + pb[0];
          const double* va = v + pa[0];
          const double* vb = v + pb[0];
          for (std::size_t k = 0; k < len; ++k) {
            aa[k] += g * vb[k];
            ab[k] += g * va[k];
          }
        } else {
          for (std::size_t k = 0; k < len; ++k) {
            adj[pa[k]] += g * v[pb[k]];
            adj[pb[k]] += g * v[pa[k]];
          }
        }
        break;
      }
    }
  }
}

// ---------------------------------------------------------------------------

double forward(const Tape& tape, Workspace& ws,
               std::span<const double> inputs) {
  const auto& ids = tape.inputs();
  if (inputs.size() != ids.size())
    throw ConfigError("forward: expected " + std::to_string(ids.size()) +
                      " input values, got " + std::to_string(inputs.size()));
  for (std::size_t i = 0; i < ids.size(); ++i) ws.bind(ids[i], inputs[i]);
  return ws.forward();
}

std::vector<double> gradient(const Tape& tape, Workspace& ws, NodeId root,
                             std::span<const NodeId> wrt) {
  if (root >= tape.size()) throw UsageError("gradient: root out of range");
  ws.reverse(root);
  std::vector<double> out(wrt.size());
  for (std::size_t i = 0; i < wrt.size(); ++i) out[i] = ws.adjoint(wrt[i]);
  return out;
}

double input_hessian_diag(Tape& tape, Workspace& ws, NodeId root, NodeId wrt) {
  if (wrt >= tape.size() || tape.node(wrt).op != Op::kInput)
    throw UsageError("input_hessian_diag: wrt is not an input node");
  const Tape::Mark m = tape.mark();
  const NodeId watermark = static_cast<NodeId>(tape.size());
  GradientBuilder gb(tape);
  const NodeId wrt_ids[1] = {wrt};
  const NodeId g = gb.derive(root, wrt_ids)[0];
  if (g == kNoNode) {
    tape.rewind(m);
    return 0.0;
  }
  const NodeId h = gb.derive(g, wrt_ids)[0];
  double result = 0.0;
  if (h != kNoNode) {
    ws.sync();
    ws.forward_from(watermark);  // primal prefix is already evaluated
    result = ws.value(h);
  }
  tape.rewind(m);
  ws.sync();
  return result;
}

// ---------------------------------------------------------------------------

NodeId GradientBuilder::factor(NodeId id) {
  if (auto it = factor_cache_.find(id); it != factor_cache_.end())
    return it->second;
  const Node& n = tape_->node(id);
  NodeId f = kNoNode;
  switch (n.op) {
    case Op::kTanh:
      f = tape_->sub(tape_->one(), tape_->mul(id, id));
      break;
    case Op::kSin:
      f = tape_->cos(n.a);
      break;
    case Op::kCos:
      f = tape_->neg(tape_->sin(n.a));
      break;
    case Op::kExp:
      f = id;
      break;
    case Op::kPowInt: {
      const int e = n.ipow;
      if (e == 0) {
        f = tape_->zero();
      } else if (e == 1) {
        f = tape_->one();
      } else if (e == 2) {
        f = tape_->mul(tape_->constant(2.0), n.a);
      } else {
        f = tape_->mul(tape_->constant(static_cast<double>(e)),
                       tape_->pow_int(n.a, e - 1));
      }
      break;
    }
    default:
      throw UsageError("gradient builder: no unary factor for this op");
  }
  factor_cache_.emplace(id, f);
  return f;
}

NodeId GradientBuilder::emit_product(NodeId m, NodeId f) {
  if (f == kNoNode || f == tape_->one()) return m;
  if (m == tape_->one()) return f;
  return tape_->mul(m, f);
}

std::vector<NodeId> GradientBuilder::derive(NodeId root,
                                            std::span<const NodeId> wrt) {
  Tape& t = *tape_;
  if (root >= t.size()) throw UsageError("derive: root out of range");

  // Dependence marking confines the sweep to the cone between wrt and root;
  // everything else is a constant of the differentiation.
  depends_.assign(root + 1, 0);
  for (NodeId w : wrt) {
    if (w >= t.size()) throw UsageError("derive: wrt id out of range");
    if (w <= root) depends_[w] = 1;
  }
  for (NodeId i = 0; i <= root; ++i) {
    if (depends_[i]) continue;
    const Node& n = t.node(i);
    switch (n.op) {
      case Op::kConst:
      case Op::kInput:
        break;
      case Op::kDot: {
        const auto pa = t.pair_a(n);
        const auto pb = t.pair_b(n);
        for (std::size_t k = 0; k < pa.size() && !depends_[i]; ++k)
          if (depends_[pa[k]] || depends_[pb[k]]) depends_[i] = 1;
        break;
      }
      case Op::kNeg:
      case Op::kTanh:
      case Op::kSin:
      case Op::kCos:
      case Op::kExp:
      case Op::kPowInt:
        depends_[i] = depends_[n.a];
        break;
      default:
        depends_[i] = depends_[n.a] | depends_[n.b];
        break;
    }
  }

  std::vector<NodeId> result(wrt.size(), kNoNode);
  if (!depends_[root]) return result;

  term_pool_.clear();
  term_head_.assign(root + 1, 0xffffffffu);
  auto push_term = [&](NodeId target, NodeId m, NodeId f) {
    if (!depends_[target]) return;
    term_pool_.push_back({m, f, term_head_[target]});
    term_head_[target] = static_cast<std::uint32_t>(term_pool_.size() - 1);
  };

  std::vector<NodeId> adj(root + 1, kNoNode);
  adj[root] = t.one();

  for (NodeId i = root + 1; i-- > 0;) {
    if (!depends_[i]) continue;
    NodeId a_i;
    if (i == root) {
      a_i = adj[root];
    } else {
      std::uint32_t head = term_head_[i];
      if (head == 0xffffffffu) continue;  // not on a path to root
      // Materialize the adjoint expression: a dot over the product terms
      // plus plain additions for unit-factor terms.
      scratch_a_.clear();
      scratch_b_.clear();
      NodeId bare_sum = kNoNode;
      NodeId single_m = kNoNode, single_f = kNoNode;
      std::size_t count = 0;
      for (std::uint32_t it = head; it != 0xffffffffu;
           it = term_pool_[it].next) {
        ++count;
        single_m = term_pool_[it].m;
        single_f = term_pool_[it].f;
      }
      if (count == 1) {
        a_i = emit_product(single_m, single_f);
      } else {
        for (std::uint32_t it = head; it != 0xffffffffu;
             it = term_pool_[it].next) {
          const Term& term = term_pool_[it];
          if (term.f == kNoNode) {
            bare_sum = bare_sum == kNoNode ? term.m : t.add(bare_sum, term.m);
          } else {
            scratch_a_.push_back(term.m);
            scratch_b_.push_back(term.f);
          }
        }
        NodeId dot_part = kNoNode;
        if (scratch_a_.size() == 1) {
          dot_part = t.mul(scratch_a_[0], scratch_b_[0]);
        } else if (!scratch_a_.empty()) {
          dot_part = t.dot(scratch_a_, scratch_b_);
        }
        if (dot_part == kNoNode)
          a_i = bare_sum;
        else if (bare_sum == kNoNode)
          a_i = dot_part;
        else
          a_i = t.add(dot_part, bare_sum);
      }
      adj[i] = a_i;
    }

    const Node& n = t.node(i);
    switch (n.op) {
      case Op::kConst:
        break;
      case Op::kInput:
        break;
      case Op::kAdd:
        push_term(n.a, a_i, kNoNode);
        push_term(n.b, a_i, kNoNode);
        break;
      case Op::kSub:
        push_term(n.a, a_i, kNoNode);
        push_term(n.b, a_i, t.constant(-1.0));
        break;
      case Op::kMul:
        push_term(n.a, a_i, n.b);
        push_term(n.b, a_i, n.a);
        break;
      case Op::kDiv: {
        NodeId recip;
        if (auto it = div_recip_cache_.find(i); it != div_recip_cache_.end()) {
          recip = it->second;
        } else {
          recip = t.div(t.one(), n.b);
          div_recip_cache_.emplace(i, recip);
        }
        push_term(n.a, a_i, recip);
        if (depends_[n.b]) {
          NodeId fb;
          if (auto it = div_b_factor_cache_.find(i);
              it != div_b_factor_cache_.end()) {
            fb = it->second;
          } else {
            fb = t.neg(t.mul(i, recip));  // -(a/b)/b
            div_b_factor_cache_.emplace(i, fb);
          }
          push_term(n.b, a_i, fb);
        }
        break;
      }
      case Op::kNeg:
        push_term(n.a, a_i, t.constant(-1.0));
        break;
      case Op::kTanh:
      case Op::kSin:
      case Op::kCos:
      case Op::kExp:
      case Op::kPowInt:
        push_term(n.a, a_i, factor(i));
        break;
      case Op::kDot: {
        const auto pa = t.pair_a(n);
        const auto pb = t.pair_b(n);
        for (std::size_t k = 0; k < pa.size(); ++k) {
          push_term(pa[k], a_i, pb[k]);
          push_term(pb[k], a_i, pa[k]);
        }
        break;
      }
    }
  }

  for (std::size_t k = 0; k < wrt.size(); ++k) {
    if (wrt[k] <= root) result[k] = adj[wrt[k]];
  }
  return result;
}

std::vector<NodeId> GradientBuilder::derive_or_zero(
    NodeId root, std::span<const NodeId> wrt) {
  auto ids = derive(root, wrt);
  for (auto& id : ids)
    if (id == kNoNode) id = tape_->zero();
  return ids;
}

// ---------------------------------------------------------------------------

NodeId TangentBuilder::factor(NodeId id) {
  if (auto it = factor_cache_.find(id); it != factor_cache_.end())
    return it->second;
  const Node& n = tape_->node(id);
  NodeId f = kNoNode;
  switch (n.op) {
    case Op::kTanh:
      f = tape_->sub(tape_->one(), tape_->mul(id, id));
      break;
    case Op::kSin:
      f = tape_->cos(n.a);
      break;
    case Op::kCos:
      f = tape_->neg(tape_->sin(n.a));
      break;
    case Op::kExp:
      f = id;
      break;
    case Op::kPowInt: {
      const int e = n.ipow;
      if (e == 0)
        f = tape_->zero();
      else if (e == 1)
        f = tape_->one();
      else if (e == 2)
        f = tape_->mul(tape_->constant(2.0), n.a);
      else
        f = tape_->mul(tape_->constant(static_cast<double>(e)),
                       tape_->pow_int(n.a, e - 1));
      break;
    }
    default:
      throw UsageError("tangent builder: no unary factor for this op");
  }
  factor_cache_.emplace(id, f);
  return f;
}

std::vector<NodeId> TangentBuilder::sweep(NodeId wrt,
                                          std::span<const NodeId> targets) {
  Tape& t = *tape_;
  if (wrt >= t.size() || t.node(wrt).op != Op::kInput)
    throw UsageError("tangent sweep: wrt must be an input node");
  NodeId hi = wrt;
  for (NodeId id : targets) {
    if (id >= t.size()) throw UsageError("tangent sweep: target out of range");
    hi = std::max(hi, id);
  }
  const std::size_t n = static_cast<std::size_t>(hi) + 1;
  const NodeId zero = t.zero();
  const NodeId one = t.one();

  std::vector<NodeId>& tan = tangent_cache_[wrt];
  if (tan.size() < n) tan.resize(n, kNoNode);
  tan[wrt] = one;
  auto tangent_of = [&](NodeId id) {
    if (id < wrt) return zero;  // precedes the seed, cannot depend on it
    return tan[id];
  };

  // Relevance marking: ancestors of the targets, walked once backwards.
  wanted_.assign(n, 0);
  for (NodeId id : targets) wanted_[id] = 1;
  for (NodeId i = hi + 1; i-- > 0;) {
    if (!wanted_[i]) continue;
    if (tan[i] != kNoNode) continue;  // cached from an earlier sweep
    const Node& node = t.node(i);
    switch (node.op) {
      case Op::kConst:
      case Op::kInput:
        break;
      case Op::kDot: {
        for (NodeId id : t.pair_a(node)) wanted_[id] = 1;
        for (NodeId id : t.pair_b(node)) wanted_[id] = 1;
        break;
      }
      case Op::kNeg:
      case Op::kTanh:
      case Op::kSin:
      case Op::kCos:
      case Op::kExp:
      case Op::kPowInt:
        wanted_[node.a] = 1;
        break;
      default:
        wanted_[node.a] = 1;
        wanted_[node.b] = 1;
        break;
    }
  }

  for (NodeId i = wrt + 1; i < n; ++i) {
    if (!wanted_[i] || tan[i] != kNoNode) continue;
    const Node& node = t.node(i);
    NodeId ti = zero;
    switch (node.op) {
      case Op::kConst:
      case Op::kInput:
        break;
      case Op::kAdd: {
        const NodeId ta = tangent_of(node.a), tb = tangent_of(node.b);
        if (ta == zero)
          ti = tb;
        else if (tb == zero)
          ti = ta;
        else
          ti = t.add(ta, tb);
        break;
      }
      case Op::kSub: {
        const NodeId ta = tangent_of(node.a), tb = tangent_of(node.b);
        if (tb == zero)
          ti = ta;
        else if (ta == zero)
          ti = t.neg(tb);
        else
          ti = t.sub(ta, tb);
        break;
      }
      case Op::kMul: {
        const NodeId ta = tangent_of(node.a), tb = tangent_of(node.b);
        NodeId left = zero, right = zero;
        if (ta != zero) left = ta == one ? node.b : t.mul(node.b, ta);
        if (tb != zero) right = tb == one ? node.a : t.mul(node.a, tb);
        if (left == zero)
          ti = right;
        else if (right == zero)
          ti = left;
        else
          ti = t.add(left, right);
        break;
      }
      case Op::kDiv: {
        // t = (ta - d tb) / b
        const NodeId ta = tangent_of(node.a), tb = tangent_of(node.b);
        NodeId num = zero;
        if (ta != zero && tb != zero)
          num = t.sub(ta, t.mul(i, tb));
        else if (ta != zero)
          num = ta;
        else if (tb != zero)
          num = t.neg(t.mul(i, tb));
        if (num != zero) ti = t.div(num, node.b);
        break;
      }
      case Op::kNeg: {
        const NodeId ta = tangent_of(node.a);
        if (ta != zero) ti = t.neg(ta);
        break;
      }
      case Op::kTanh:
      case Op::kSin:
      case Op::kCos:
      case Op::kExp:
      case Op::kPowInt: {
        const NodeId ta = tangent_of(node.a);
        if (ta != zero) {
          const NodeId f = factor(i);
          ti = ta == one ? f : t.mul(f, ta);
        }
        break;
      }
      case Op::kDot: {
        const auto pa = t.pair_a(node);
        const auto pb = t.pair_b(node);
        dot_scratch_a_.clear();
        dot_scratch_b_.clear();
        for (std::size_t k = 0; k < pa.size(); ++k) {
          const NodeId ta = tangent_of(pa[k]);
          const NodeId tb = tangent_of(pb[k]);
          if (tb != zero) {
            dot_scratch_a_.push_back(pa[k]);
            dot_scratch_b_.push_back(tb);
          }
          if (ta != zero) {
            dot_scratch_a_.push_back(pb[k]);
            dot_scratch_b_.push_back(ta);
          }
        }
        if (dot_scratch_a_.size() == 1) {
          ti = dot_scratch_b_[0] == one
                   ? dot_scratch_a_[0]
                   : t.mul(dot_scratch_a_[0], dot_scratch_b_[0]);
        } else if (!dot_scratch_a_.empty()) {
          ti = t.dot(dot_scratch_a_, dot_scratch_b_);
        }
        break;
      }
    }
    tan[i] = ti;
  }

  std::vector<NodeId> out(targets.size(), kNoNode);
  for (std::size_t k = 0; k < targets.size(); ++k) {
    const NodeId id = tan[targets[k]];
    out[k] = (id == zero || id == kNoNode) ? kNoNode : id;
  }
  return out;
}

}  // namespace hemoflow::ad
