#include "hemoflow/nn.hpp"

#include <cmath>
#include <numbers>

namespace hemoflow::nn {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

void push_affine_layout(std::vector<LayoutEntry>& layout, std::size_t& offset,
                        BlockKind block, int layer, int rows, int cols,
                        bool rwf) {
  if (rwf) {
    layout.push_back({block, layer, TensorRole::kScale, offset, rows, 1});
    offset += static_cast<std::size_t>(rows);
    layout.push_back({block, layer, TensorRole::kDirection, offset, rows, cols});
    offset += static_cast<std::size_t>(rows) * cols;
  } else {
    layout.push_back({block, layer, TensorRole::kWeight, offset, rows, cols});
    offset += static_cast<std::size_t>(rows) * cols;
  }
  layout.push_back({block, layer, TensorRole::kBias, offset, rows, 1});
  offset += static_cast<std::size_t>(rows);
}

std::vector<LayoutEntry> make_layout(const NetworkSpec& spec,
                                     std::size_t& total) {
  std::vector<LayoutEntry> layout;
  std::size_t offset = 0;
  const bool rwf = spec.rwf.has_value();
  const int in = spec.embedded_dim();
  const int w = spec.hidden_width;
  if (spec.kind == ArchKind::kModifiedMlp) {
    push_affine_layout(layout, offset, BlockKind::kEncoderU, 0, w, in, rwf);
    push_affine_layout(layout, offset, BlockKind::kEncoderV, 0, w, in, rwf);
  }
  for (int l = 0; l < spec.hidden_layers; ++l) {
    push_affine_layout(layout, offset, BlockKind::kHidden, l, w,
                       l == 0 ? in : w, rwf);
  }
  push_affine_layout(layout, offset, BlockKind::kOutput, 0, spec.output_dim, w,
                     rwf);
  total = offset;
  return layout;
}

}  // namespace

void NetworkSpec::validate() const {
  if (input_dim < 1 || output_dim < 1)
    throw ConfigError("network spec: input/output dims must be >= 1");
  if (hidden_layers < 1 || hidden_width < 1)
    throw ConfigError("network spec: hidden layers and width must be >= 1");
  if (fourier && (fourier->e < 1 || fourier->sigma <= 0.0))
    throw ConfigError("network spec: fourier embedding needs e >= 1, sigma > 0");
  if (rwf && rwf->sigma < 0.0)
    throw ConfigError("network spec: rwf sigma must be >= 0");
  // The gated merge multiplies encoder outputs elementwise into every hidden
  // layer, so encoder width == hidden width by construction here.
}

std::size_t NetworkSpec::param_count() const {
  std::size_t total = 0;
  (void)make_layout(*this, total);
  return total;
}

const LayoutEntry& ParamStore::entry(BlockKind block, int layer,
                                     TensorRole role) const {
  for (const auto& e : layout_) {
    if (e.block == block && e.layer == layer && e.role == role) return e;
  }
  throw UsageError("param store: no such layout entry");
}

ParamStore ParamStore::init(const NetworkSpec& spec) {
  spec.validate();
  ParamStore store;
  store.spec_ = spec;
  std::size_t total = 0;
  store.layout_ = make_layout(spec, total);
  store.values_.assign(total, 0.0);

  // Independent streams so RWF scale draws do not shift the Xavier
  // sequence shared with a plain init of the same seed.
  Rng root(spec.init_seed);
  Rng fourier_rng = root.fork(1);
  Rng weight_rng = root.fork(2);
  Rng scale_rng = root.fork(3);

  if (spec.fourier) {
    store.fourier_b_.resize(static_cast<std::size_t>(spec.fourier->e) *
                            spec.input_dim);
    for (auto& v : store.fourier_b_) v = fourier_rng.normal(0.0, spec.fourier->sigma);
  }

  for (std::size_t i = 0; i < store.layout_.size(); ++i) {
    const LayoutEntry& e = store.layout_[i];
    if (e.role == TensorRole::kBias) continue;  // zero-initialized
    if (e.role == TensorRole::kWeight) {
      const double std = std::sqrt(2.0 / (e.cols + e.rows));
      for (std::size_t k = 0; k < e.count(); ++k)
        store.values_[e.offset + k] = weight_rng.normal(0.0, std);
    } else if (e.role == TensorRole::kScale) {
      // Paired with the following direction entry: draw the Xavier matrix,
      // then factor it as w = s * v with v = w / s.
      const LayoutEntry& dir = store.layout_[i + 1];
      const double std = std::sqrt(2.0 / (dir.cols + dir.rows));
      for (std::size_t k = 0; k < dir.count(); ++k)
        store.values_[dir.offset + k] = weight_rng.normal(0.0, std);
      for (int r = 0; r < e.rows; ++r) {
        const double s =
            std::exp(scale_rng.normal(spec.rwf->mu, spec.rwf->sigma));
        store.values_[e.offset + r] = s;
        for (int c = 0; c < dir.cols; ++c)
          store.values_[dir.offset + static_cast<std::size_t>(r) * dir.cols +
                        c] /= s;
      }
    }
  }
  return store;
}

ParamStore ParamStore::assemble(const NetworkSpec& spec,
                                std::vector<double> values,
                                std::vector<double> fourier_b) {
  spec.validate();
  ParamStore store;
  store.spec_ = spec;
  std::size_t total = 0;
  store.layout_ = make_layout(spec, total);
  if (values.size() != total)
    throw UsageError("param store: value vector does not match layout size");
  const std::size_t bsize =
      spec.fourier ? static_cast<std::size_t>(spec.fourier->e) * spec.input_dim
                   : 0;
  if (fourier_b.size() != bsize)
    throw UsageError("param store: fourier matrix size mismatch");
  store.values_ = std::move(values);
  store.fourier_b_ = std::move(fourier_b);
  return store;
}

std::vector<Matrix> ParamStore::effective_weights() const {
  if (!spec_.rwf)
    throw UsageError("effective_weights: store was not built with RWF");
  std::vector<Matrix> result;
  for (std::size_t i = 0; i < layout_.size(); ++i) {
    if (layout_[i].role != TensorRole::kScale) continue;
    const LayoutEntry& s = layout_[i];
    const LayoutEntry& v = layout_[i + 1];
    Matrix m;
    m.rows = v.rows;
    m.cols = v.cols;
    m.data.resize(v.count());
    for (int r = 0; r < v.rows; ++r) {
      const double scale = values_[s.offset + r];
      for (int c = 0; c < v.cols; ++c)
        m.at(r, c) =
            scale * values_[v.offset + static_cast<std::size_t>(r) * v.cols + c];
    }
    result.push_back(std::move(m));
  }
  return result;
}

std::vector<double> fourier_embed(std::span<const double> x,
                                  std::span<const double> b, int e, int d) {
  if (x.size() != static_cast<std::size_t>(d) ||
      b.size() != static_cast<std::size_t>(e) * d)
    throw UsageError("fourier_embed: dimension mismatch");
  std::vector<double> out(2 * static_cast<std::size_t>(e));
  for (int k = 0; k < e; ++k) {
    double u = 0.0;
    for (int j = 0; j < d; ++j) u += b[static_cast<std::size_t>(k) * d + j] * x[j];
    u *= kTwoPi;
    out[k] = std::cos(u);
    out[e + k] = std::sin(u);
  }
  return out;
}

// The affine emitter folds the RWF scale in as s * (v.x), so weights never
// materialize as per-entry nodes and tapes stay layer-sized.
std::vector<ad::NodeId> build_network(ad::Tape& tape, const NetworkSpec& spec,
                                      std::span<const double> fourier_b,
                                      std::span<const ad::NodeId> x_nodes,
                                      std::span<const ad::NodeId> param_nodes) {
  spec.validate();
  if (x_nodes.size() != static_cast<std::size_t>(spec.input_dim))
    throw UsageError("build_network: coordinate node count mismatch");
  if (param_nodes.size() != spec.param_count())
    throw UsageError("build_network: parameter node count mismatch");

  std::size_t total = 0;
  const std::vector<LayoutEntry> layout = make_layout(spec, total);

  auto find = [&](BlockKind block, int layer,
                  TensorRole role) -> const LayoutEntry& {
    for (const auto& e : layout)
      if (e.block == block && e.layer == layer && e.role == role) return e;
    throw UsageError("build_network: layout entry missing");
  };

  auto affine = [&](BlockKind block, int layer,
                    std::span<const ad::NodeId> acts) {
    const bool rwf = spec.rwf.has_value();
    const LayoutEntry& bias = find(block, layer, TensorRole::kBias);
    const LayoutEntry& w =
        find(block, layer, rwf ? TensorRole::kDirection : TensorRole::kWeight);
    std::vector<ad::NodeId> pre(w.rows);
    for (int r = 0; r < w.rows; ++r) {
      std::span<const ad::NodeId> row =
          param_nodes.subspan(w.offset + static_cast<std::size_t>(r) * w.cols,
                              w.cols);
      ad::NodeId acc = tape.dot(row, acts);
      if (rwf) {
        const LayoutEntry& s = find(block, layer, TensorRole::kScale);
        acc = tape.mul(param_nodes[s.offset + r], acc);
      }
      pre[r] = tape.add(acc, param_nodes[bias.offset + r]);
    }
    return pre;
  };
  auto tanh_all = [&](std::span<const ad::NodeId> pre) {
    std::vector<ad::NodeId> act(pre.size());
    for (std::size_t i = 0; i < pre.size(); ++i) act[i] = tape.tanh(pre[i]);
    return act;
  };

  // Input embedding.
  std::vector<ad::NodeId> embedded;
  if (spec.fourier) {
    const int e = spec.fourier->e;
    const int d = spec.input_dim;
    if (fourier_b.size() != static_cast<std::size_t>(e) * d)
      throw UsageError("build_network: fourier matrix size mismatch");
    std::vector<ad::NodeId> phase(e);
    std::vector<ad::NodeId> coeff(d);
    for (int k = 0; k < e; ++k) {
      for (int j = 0; j < d; ++j)
        coeff[j] =
            tape.constant(kTwoPi * fourier_b[static_cast<std::size_t>(k) * d + j]);
      phase[k] = tape.dot(coeff, x_nodes);
    }
    embedded.reserve(2 * static_cast<std::size_t>(e));
    for (int k = 0; k < e; ++k) embedded.push_back(tape.cos(phase[k]));
    for (int k = 0; k < e; ++k) embedded.push_back(tape.sin(phase[k]));
  } else {
    embedded.assign(x_nodes.begin(), x_nodes.end());
  }

  std::vector<ad::NodeId> acts = embedded;
  if (spec.kind == ArchKind::kMlp) {
    for (int l = 0; l < spec.hidden_layers; ++l)
      acts = tanh_all(affine(BlockKind::kHidden, l, acts));
  } else {
    const std::vector<ad::NodeId> enc_u =
        tanh_all(affine(BlockKind::kEncoderU, 0, embedded));
    const std::vector<ad::NodeId> enc_v =
        tanh_all(affine(BlockKind::kEncoderV, 0, embedded));
    for (int l = 0; l < spec.hidden_layers; ++l) {
      const std::vector<ad::NodeId> gate =
          tanh_all(affine(BlockKind::kHidden, l, acts));
      const int w = spec.hidden_width;
      std::vector<ad::NodeId> mu(w), ones_minus(w), mv(w), merged(w);
      for (int r = 0; r < w; ++r) mu[r] = tape.mul(gate[r], enc_u[r]);
      for (int r = 0; r < w; ++r)
        ones_minus[r] = tape.sub(tape.one(), gate[r]);
      for (int r = 0; r < w; ++r) mv[r] = tape.mul(ones_minus[r], enc_v[r]);
      for (int r = 0; r < w; ++r) merged[r] = tape.add(mu[r], mv[r]);
      acts = std::move(merged);
    }
  }
  return affine(BlockKind::kOutput, 0, acts);
}

NetworkGraph build_network_graph(ad::Tape& tape, const NetworkSpec& spec,
                                 std::span<const double> fourier_b) {
  NetworkGraph g;
  const std::size_t p = spec.param_count();
  g.params.resize(p);
  for (std::size_t i = 0; i < p; ++i) g.params[i] = tape.input();
  g.param_base = p > 0 ? g.params[0] : 0;
  g.x.resize(spec.input_dim);
  for (int i = 0; i < spec.input_dim; ++i) g.x[i] = tape.input();
  g.outputs = build_network(tape, spec, fourier_b, g.x, g.params);
  return g;
}

namespace {

std::vector<double> forward_impl(const ParamStore& params,
                                 std::span<const double> x) {
  const NetworkSpec& spec = params.spec();
  if (x.size() != static_cast<std::size_t>(spec.input_dim))
    throw UsageError("forward: coordinate dimension mismatch");
  ad::Tape tape;
  NetworkGraph g = build_network_graph(tape, spec, params.fourier_b());
  ad::Workspace ws(tape);
  ws.bind_range(g.param_base, params.values());
  for (int i = 0; i < spec.input_dim; ++i) ws.bind(g.x[i], x[i]);
  tape.set_root(g.outputs.back());
  ws.forward();
  std::vector<double> out(spec.output_dim);
  for (int i = 0; i < spec.output_dim; ++i) out[i] = ws.value(g.outputs[i]);
  return out;
}

}  // namespace

std::vector<double> mlp_forward(const ParamStore& params,
                                std::span<const double> x) {
  if (params.spec().kind != ArchKind::kMlp)
    throw UsageError("mlp_forward: store holds a modified-mlp");
  return forward_impl(params, x);
}

std::vector<double> modified_mlp_forward(const ParamStore& params,
                                         std::span<const double> x) {
  if (params.spec().kind != ArchKind::kModifiedMlp)
    throw UsageError("modified_mlp_forward: store holds a plain mlp");
  return forward_impl(params, x);
}

FieldEvaluator::FieldEvaluator(const ParamStore& params) : ws_(tape_) {
  graph_ = build_network_graph(tape_, params.spec(), params.fourier_b());
  tape_.set_root(graph_.outputs.back());
  ws_.attach(tape_);
  ws_.bind_range(graph_.param_base, params.values());
}

std::vector<double> FieldEvaluator::operator()(std::span<const double> x) {
  std::vector<double> out(graph_.outputs.size());
  eval_into(x, out);
  return out;
}

void FieldEvaluator::eval_into(std::span<const double> x,
                               std::span<double> out) {
  if (x.size() != graph_.x.size() || out.size() != graph_.outputs.size())
    throw UsageError("field evaluator: dimension mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) ws_.bind(graph_.x[i], x[i]);
  if (first_) {
    ws_.forward();
    first_ = false;
  } else {
    ws_.forward_from(graph_.x.front());
  }
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = ws_.value(graph_.outputs[i]);
}

}  // namespace hemoflow::nn
