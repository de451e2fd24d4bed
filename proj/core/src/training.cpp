#include "hemoflow/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <memory>
#include <sstream>

#include "hemoflow/parallel.hpp"

namespace hemoflow::train {

namespace {

double l2_norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

const char* term_name(int term) {
  static const char* names[kTermCount] = {"data", "inlet", "wall", "outlet",
                                          "phy"};
  return names[term];
}

void LossBreakdown::finalize() {
  total = 0.0;
  for (int i = 0; i < kTermCount; ++i)
    if (active[i]) total += lambda[i] * value[i];
}

std::array<double, kTermCount> grad_norm_update(
    const std::array<double, kTermCount>& lambda,
    const std::array<double, kTermCount>& grad_norms,
    const std::array<bool, kTermCount>& active, double momentum) {
  double norm_sum = 0.0;
  int card = 0;
  for (int i = 0; i < kTermCount; ++i) {
    if (!active[i]) continue;
    if (!std::isfinite(grad_norms[i]))
      throw UsageError("grad_norm_update: non-finite gradient norm");
    if (grad_norms[i] > 0.0) {
      norm_sum += grad_norms[i];
      ++card;
    }
  }
  if (card == 0) {
    std::cerr << "warning: grad-norm update skipped, all gradient norms zero\n";
    return lambda;
  }
  std::array<double, kTermCount> next = lambda;
  for (int i = 0; i < kTermCount; ++i) {
    if (!active[i] || grad_norms[i] == 0.0) continue;  // keeps previous weight
    const double target = norm_sum / (card * grad_norms[i]);
    next[i] = momentum * lambda[i] + (1.0 - momentum) * target;
  }
  return next;
}

// --- Adam ---------------------------------------------------------------------

Adam::Adam(std::size_t param_count, AdamHyper hyper)
    : hyper_(hyper), m_(param_count, 0.0), v_(param_count, 0.0) {}

double Adam::learning_rate() const {
  double alpha = hyper_.alpha0;
  if (hyper_.lr_decay) {
    alpha *= std::pow(hyper_.decay_rate,
                      static_cast<double>(t_) /
                          static_cast<double>(hyper_.decay_steps));
  }
  return alpha * lr_multiplier_;
}

void Adam::step(std::vector<double>& params, std::span<const double> grad) {
  if (params.size() != m_.size() || grad.size() != m_.size())
    throw UsageError("adam: parameter/gradient size mismatch");
  for (double g : grad)
    if (!std::isfinite(g)) throw UsageError("adam: non-finite gradient");
  const double alpha = learning_rate();
  const double b1 = hyper_.beta1, b2 = hyper_.beta2;
  const double corr1 = 1.0 - std::pow(b1, static_cast<double>(t_ + 1));
  const double corr2 = 1.0 - std::pow(b2, static_cast<double>(t_ + 1));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grad[i];
    m_[i] = b1 * m_[i] + (1.0 - b1) * g;
    v_[i] = b2 * v_[i] + (1.0 - b2) * g * g;
    const double mhat = m_[i] / corr1;
    const double vhat = v_[i] / corr2;
    params[i] -= alpha * mhat / (std::sqrt(vhat) + hyper_.epsilon);
  }
  ++t_;
}

checkpoint::AdamSnapshot Adam::snapshot() const {
  return {t_, lr_multiplier_, m_, v_};
}

void Adam::restore(const checkpoint::AdamSnapshot& snap) {
  if (snap.m.size() != m_.size() || snap.v.size() != v_.size())
    throw UsageError("adam: snapshot size mismatch");
  t_ = snap.step;
  lr_multiplier_ = snap.lr_multiplier;
  m_ = snap.m;
  v_ = snap.v;
}

// --- batches ------------------------------------------------------------------

namespace {

std::vector<std::size_t> draw_without_replacement(std::size_t n,
                                                  std::size_t take, Rng& rng) {
  take = std::min(take, n);
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::vector<std::size_t> out;
  out.reserve(take);
  for (std::size_t k = 0; k < take; ++k) {
    const std::size_t j = k + rng.below(n - k);
    std::swap(idx[k], idx[j]);
    out.push_back(idx[k]);
  }
  return out;
}

StratumBatch gather_boundary(const geom::PointSet& set,
                             const std::vector<std::size_t>& idx) {
  StratumBatch b;
  b.points.reserve(idx.size());
  b.vel_targets.reserve(idx.size());
  for (std::size_t i : idx) {
    b.points.push_back(set.points[i]);
    b.vel_targets.push_back(set.velocity[i]);
  }
  return b;
}

}  // namespace

BatchSet sample_batch(const geom::StratifiedPointCloud& cloud, int batch,
                      Rng& rng) {
  if (batch < 1) throw ConfigError("sample_batch: batch size must be >= 1");
  BatchSet out;
  const std::size_t take = static_cast<std::size_t>(batch);

  auto labeled_indices = [](const geom::PointSet& set, bool need_pressure) {
    std::vector<std::size_t> ok;
    for (std::size_t i = 0; i < set.size(); ++i) {
      if (!set.has_velocity[i]) continue;
      if (need_pressure && !set.has_pressure[i]) continue;
      ok.push_back(i);
    }
    return ok;
  };

  auto sample_boundary = [&](const geom::PointSet& set) {
    const auto ok = labeled_indices(set, false);
    std::vector<std::size_t> pick;
    if (!ok.empty()) {
      auto rel = draw_without_replacement(ok.size(), take, rng);
      for (std::size_t r : rel) pick.push_back(ok[r]);
    }
    return gather_boundary(set, pick);
  };
  out.inlet = sample_boundary(cloud.inlet);
  out.wall = sample_boundary(cloud.wall);
  out.outlet = sample_boundary(cloud.outlet);

  {
    const auto ok = labeled_indices(cloud.data, true);
    if (!ok.empty()) {
      auto rel = draw_without_replacement(ok.size(), take, rng);
      out.data.points.reserve(rel.size());
      for (std::size_t r : rel) {
        const std::size_t i = ok[r];
        out.data.points.push_back(cloud.data.points[i]);
        out.data.vel_targets.push_back(cloud.data.velocity[i]);
        out.data.p_targets.push_back(cloud.data.pressure[i]);
      }
    }
  }

  // Collocation points come from the combined coordinate set of the four
  // geometric strata.
  const geom::PointSet* sets[4] = {&cloud.inlet, &cloud.wall, &cloud.outlet,
                                   &cloud.volume};
  std::size_t combined = 0;
  for (const auto* s : sets) combined += s->size();
  if (combined > 0) {
    auto rel = draw_without_replacement(combined, take, rng);
    out.collocation.reserve(rel.size());
    for (std::size_t r : rel) {
      std::size_t k = r;
      for (const auto* s : sets) {
        if (k < s->size()) {
          out.collocation.push_back(s->points[k]);
          break;
        }
        k -= s->size();
      }
    }
  }
  return out;
}

BatchSet full_batch(const geom::StratifiedPointCloud& cloud, std::size_t cap) {
  BatchSet out;
  auto head_boundary = [&](const geom::PointSet& set) {
    StratumBatch b;
    for (std::size_t i = 0; i < set.size() && b.size() < cap; ++i) {
      if (!set.has_velocity[i]) continue;
      b.points.push_back(set.points[i]);
      b.vel_targets.push_back(set.velocity[i]);
    }
    return b;
  };
  out.inlet = head_boundary(cloud.inlet);
  out.wall = head_boundary(cloud.wall);
  out.outlet = head_boundary(cloud.outlet);
  for (std::size_t i = 0; i < cloud.data.size() && out.data.size() < cap; ++i) {
    if (!cloud.data.has_velocity[i] || !cloud.data.has_pressure[i]) continue;
    out.data.points.push_back(cloud.data.points[i]);
    out.data.vel_targets.push_back(cloud.data.velocity[i]);
    out.data.p_targets.push_back(cloud.data.pressure[i]);
  }
  for (std::size_t i = 0; i < cloud.volume.size() && out.collocation.size() < cap;
       ++i)
    out.collocation.push_back(cloud.volume.points[i]);
  return out;
}

OperatorBatchSet sample_operator_batch(const operators::TripletBundle& bundle,
                                       int batch, Rng& rng) {
  if (batch < 1)
    throw ConfigError("sample_operator_batch: batch size must be >= 1");
  OperatorBatchSet out;
  const std::size_t take = static_cast<std::size_t>(batch);

  auto gather = [](const operators::OperatorTriplet& t,
                   const std::vector<std::size_t>& idx, bool want_velocity,
                   bool want_pressure) {
    TripletRows rows;
    rows.m1 = t.m1;
    rows.m2 = t.m2;
    for (std::size_t r : idx) {
      if (want_velocity &&
          !(t.target_mask[r][0] && t.target_mask[r][1] && t.target_mask[r][2]))
        continue;
      if (want_pressure && !t.target_mask[r][3]) continue;
      rows.x.push_back(t.coordinates[r]);
      rows.targets.push_back(t.targets[r]);
      rows.sensors1.insert(rows.sensors1.end(),
                           t.sensors1.begin() + r * t.m1,
                           t.sensors1.begin() + (r + 1) * t.m1);
      rows.sensors2.insert(rows.sensors2.end(),
                           t.sensors2.begin() + r * t.m2,
                           t.sensors2.begin() + (r + 1) * t.m2);
    }
    return rows;
  };

  auto sample_stratum = [&](geom::StratumKind kind, bool vel, bool pres) {
    const auto& t = bundle.stratum(kind);
    if (t.rows() == 0) return TripletRows{{}, {}, {}, {}, t.m1, t.m2};
    auto idx = draw_without_replacement(t.rows(), take, rng);
    return gather(t, idx, vel, pres);
  };

  out.data = sample_stratum(geom::StratumKind::kData, true, true);
  out.inlet = sample_stratum(geom::StratumKind::kInlet, true, false);
  out.wall = sample_stratum(geom::StratumKind::kWall, true, false);
  out.outlet = sample_stratum(geom::StratumKind::kOutlet, true, false);

  // Collocation rows from the combined strata (targets unused).
  const geom::StratumKind kinds[4] = {
      geom::StratumKind::kInlet, geom::StratumKind::kWall,
      geom::StratumKind::kOutlet, geom::StratumKind::kVolume};
  std::size_t combined = 0;
  for (auto k : kinds) combined += bundle.stratum(k).rows();
  if (combined > 0) {
    auto rel = draw_without_replacement(combined, take, rng);
    for (std::size_t r : rel) {
      std::size_t k = r;
      for (auto kind : kinds) {
        const auto& t = bundle.stratum(kind);
        if (k < t.rows()) {
          out.collocation.m1 = t.m1;
          out.collocation.m2 = t.m2;
          out.collocation.x.push_back(t.coordinates[k]);
          out.collocation.targets.push_back(t.targets[k]);
          out.collocation.sensors1.insert(out.collocation.sensors1.end(),
                                          t.sensors1.begin() + k * t.m1,
                                          t.sensors1.begin() + (k + 1) * t.m1);
          out.collocation.sensors2.insert(out.collocation.sensors2.end(),
                                          t.sensors2.begin() + k * t.m2,
                                          t.sensors2.begin() + (k + 1) * t.m2);
          break;
        }
        k -= t.rows();
      }
    }
  }
  return out;
}

OperatorBatchSet full_operator_batch(const operators::TripletBundle& bundle,
                                     std::size_t cap) {
  OperatorBatchSet out;
  auto head = [&](geom::StratumKind kind, bool vel, bool pres) {
    const auto& t = bundle.stratum(kind);
    TripletRows rows;
    rows.m1 = t.m1;
    rows.m2 = t.m2;
    for (std::size_t r = 0; r < t.rows() && rows.size() < cap; ++r) {
      if (vel &&
          !(t.target_mask[r][0] && t.target_mask[r][1] && t.target_mask[r][2]))
        continue;
      if (pres && !t.target_mask[r][3]) continue;
      rows.x.push_back(t.coordinates[r]);
      rows.targets.push_back(t.targets[r]);
      rows.sensors1.insert(rows.sensors1.end(), t.sensors1.begin() + r * t.m1,
                           t.sensors1.begin() + (r + 1) * t.m1);
      rows.sensors2.insert(rows.sensors2.end(), t.sensors2.begin() + r * t.m2,
                           t.sensors2.begin() + (r + 1) * t.m2);
    }
    return rows;
  };
  out.data = head(geom::StratumKind::kData, true, true);
  out.inlet = head(geom::StratumKind::kInlet, true, false);
  out.wall = head(geom::StratumKind::kWall, true, false);
  out.outlet = head(geom::StratumKind::kOutlet, true, false);
  out.collocation = head(geom::StratumKind::kVolume, false, false);
  return out;
}

// --- PINN loss evaluator --------------------------------------------------------

namespace {

// One template: a tape holding parameters, per-point inputs and a scalar
// loss root; evaluated point-by-point with chunked deterministic reduction.
struct PointTemplate {
  ad::Tape tape;
  ad::NodeId param_base = 0;
  std::size_t param_count = 0;
  std::array<ad::NodeId, 3> x{};
  std::vector<ad::NodeId> targets;
  ad::NodeId root = 0;
  ad::NodeId rebind_from = 0;  // first per-point input id
};

struct ChunkScratch {
  std::vector<std::unique_ptr<ad::Workspace>> ws;
  std::vector<std::vector<double>> grads;
  std::vector<double> losses;

  void prepare(std::size_t chunks, const ad::Tape& tape,
               std::size_t param_count, bool want_gradients) {
    while (ws.size() < chunks)
      ws.push_back(std::make_unique<ad::Workspace>(tape));
    grads.resize(std::max(grads.size(), chunks));
    losses.assign(chunks, 0.0);
    for (std::size_t c = 0; c < chunks; ++c) {
      ws[c]->attach(tape);
      if (want_gradients)
        grads[c].assign(param_count, 0.0);
    }
  }
};

// Evaluates a template over rows, reducing chunk partials in chunk order.
// bind_row binds the per-point inputs for one row into a workspace.
template <typename BindRow>
void run_template(const PointTemplate& tmpl, std::span<const double> theta,
                  std::size_t rows, bool want_gradients, ChunkScratch& scratch,
                  double& loss_out, std::vector<double>& grad_out,
                  const BindRow& bind_row) {
  const std::size_t chunks = chunk_count(rows);
  scratch.prepare(chunks, tmpl.tape, tmpl.param_count, want_gradients);
  const ad::NodeId stop =
      static_cast<ad::NodeId>(tmpl.param_base + tmpl.param_count);

  parallel_chunks(rows, [&](std::size_t c, std::size_t lo, std::size_t hi) {
    ad::Workspace& ws = *scratch.ws[c];
    ws.bind_range(tmpl.param_base, theta);
    double loss = 0.0;
    std::vector<double>& grad = scratch.grads[c];
    for (std::size_t r = lo; r < hi; ++r) {
      bind_row(ws, r);
      if (r == lo)
        ws.forward();
      else
        ws.forward_from(tmpl.rebind_from);
      loss += ws.value(tmpl.root);
      if (want_gradients) {
        ws.reverse(tmpl.root, stop);
        for (std::size_t k = 0; k < tmpl.param_count; ++k)
          grad[k] += ws.adjoint(tmpl.param_base + static_cast<ad::NodeId>(k));
      }
    }
    scratch.losses[c] = loss;
  });

  double loss_sum = 0.0;
  for (std::size_t c = 0; c < chunks; ++c) loss_sum += scratch.losses[c];
  loss_out = loss_sum / static_cast<double>(rows);
  if (want_gradients) {
    grad_out.assign(tmpl.param_count, 0.0);
    for (std::size_t c = 0; c < chunks; ++c)
      for (std::size_t k = 0; k < tmpl.param_count; ++k)
        grad_out[k] += scratch.grads[c][k];
    const double inv = 1.0 / static_cast<double>(rows);
    for (double& g : grad_out) g *= inv;
  }
}

ad::NodeId squared_error_sum(ad::Tape& t, std::span<const ad::NodeId> pred,
                             std::span<const ad::NodeId> target) {
  ad::NodeId acc = ad::kNoNode;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const ad::NodeId d = t.sub(pred[i], target[i]);
    const ad::NodeId sq = t.mul(d, d);
    acc = acc == ad::kNoNode ? sq : t.add(acc, sq);
  }
  return acc;
}

}  // namespace

PinnLossEvaluator::PinnLossEvaluator(const nn::NetworkSpec& spec,
                                     const std::vector<double>& fourier_b,
                                     physics::ResidualCoeffs coeffs,
                                     bool physics_enabled)
    : spec_(spec),
      fourier_b_(fourier_b),
      coeffs_(coeffs),
      physics_enabled_(physics_enabled),
      param_count_(spec.param_count()) {
  spec_.validate();
  if (spec_.output_dim != 4)
    throw UsageError("pinn loss: network must predict (v1, v2, v3, p)");
}

TermEvaluation PinnLossEvaluator::evaluate(std::span<const double> theta,
                                           const BatchSet& batch,
                                           bool want_gradients) {
  if (theta.size() != param_count_)
    throw UsageError("pinn loss: parameter vector size mismatch");

  // Graphs are rebuilt per batch: no cached state survives between calls.
  auto make_template = [&](int target_count, bool with_physics) {
    auto tmpl = std::make_unique<PointTemplate>();
    ad::Tape& t = tmpl->tape;
    tmpl->param_count = param_count_;
    std::vector<ad::NodeId> params(param_count_);
    for (auto& id : params) id = t.input();
    tmpl->param_base = params.empty() ? 0 : params[0];
    for (auto& id : tmpl->x) id = t.input();
    tmpl->rebind_from = tmpl->x[0];
    tmpl->targets.resize(target_count);
    for (auto& id : tmpl->targets) id = t.input();
    const auto outputs =
        nn::build_network(t, spec_, fourier_b_, tmpl->x, params);
    if (with_physics) {
      const std::array<ad::NodeId, 4> outs = {outputs[0], outputs[1],
                                              outputs[2], outputs[3]};
      const auto res = physics::build_nse_residual(t, tmpl->x, outs, coeffs_);
      ad::NodeId acc = t.mul(res[0], res[0]);
      for (int i = 1; i < 4; ++i) acc = t.add(acc, t.mul(res[i], res[i]));
      tmpl->root = acc;
    } else if (target_count == 3) {
      const std::array<ad::NodeId, 3> vel = {outputs[0], outputs[1],
                                             outputs[2]};
      tmpl->root = squared_error_sum(t, vel, tmpl->targets);
    } else {
      const std::array<ad::NodeId, 3> vel = {outputs[0], outputs[1],
                                             outputs[2]};
      const std::array<ad::NodeId, 3> vt = {tmpl->targets[0], tmpl->targets[1],
                                            tmpl->targets[2]};
      const ad::NodeId vel_err = squared_error_sum(t, vel, vt);
      const ad::NodeId dp = t.sub(outputs[3], tmpl->targets[3]);
      tmpl->root = t.add(vel_err, t.mul(dp, dp));
    }
    t.set_root(tmpl->root);
    return tmpl;
  };

  TermEvaluation out;
  for (int i = 0; i < kTermCount; ++i) out.losses.lambda[i] = 1.0;

  ChunkScratch scratch;

  auto eval_boundary = [&](const StratumBatch& b, int term,
                           const std::unique_ptr<PointTemplate>& tmpl) {
    if (b.size() == 0) return;
    out.losses.active[term] = true;
    run_template(
        *tmpl, theta, b.size(), want_gradients, scratch,
        out.losses.value[term], out.grads[term], [&](ad::Workspace& ws,
                                                     std::size_t r) {
          for (int i = 0; i < 3; ++i) ws.bind(tmpl->x[i], b.points[r][i]);
          for (int i = 0; i < 3; ++i)
            ws.bind(tmpl->targets[i], b.vel_targets[r][i]);
        });
  };

  const bool any_boundary =
      batch.inlet.size() || batch.wall.size() || batch.outlet.size();
  if (any_boundary) {
    auto boundary = make_template(3, false);
    eval_boundary(batch.inlet, kInlet, boundary);
    eval_boundary(batch.wall, kWall, boundary);
    eval_boundary(batch.outlet, kOutlet, boundary);
  }

  if (batch.data.size() > 0) {
    auto data_tmpl = make_template(4, false);
    out.losses.active[kData] = true;
    run_template(*data_tmpl, theta, batch.data.size(), want_gradients, scratch,
                 out.losses.value[kData], out.grads[kData],
                 [&](ad::Workspace& ws, std::size_t r) {
                   for (int i = 0; i < 3; ++i)
                     ws.bind(data_tmpl->x[i], batch.data.points[r][i]);
                   for (int i = 0; i < 3; ++i)
                     ws.bind(data_tmpl->targets[i],
                             batch.data.vel_targets[r][i]);
                   ws.bind(data_tmpl->targets[3], batch.data.p_targets[r]);
                 });
  }

  if (physics_enabled_ && !batch.collocation.empty()) {
    auto phy_tmpl = make_template(0, true);
    out.losses.active[kPhy] = true;
    run_template(*phy_tmpl, theta, batch.collocation.size(), want_gradients,
                 scratch, out.losses.value[kPhy], out.grads[kPhy],
                 [&](ad::Workspace& ws, std::size_t r) {
                   for (int i = 0; i < 3; ++i)
                     ws.bind(phy_tmpl->x[i], batch.collocation[r][i]);
                 });
  }

  out.losses.finalize();
  return out;
}

// --- operator loss evaluator ------------------------------------------------------

OperatorLossEvaluator::OperatorLossEvaluator(
    const operators::OperatorSpec& spec,
    const operators::OperatorParams& proto, physics::ResidualCoeffs coeffs,
    bool physics_enabled)
    : spec_(spec),
      proto_(proto),
      coeffs_(coeffs),
      physics_enabled_(physics_enabled),
      param_count_(proto.total_size()) {
  spec_.validate();
  if (spec_.partition.size() != 4)
    throw UsageError("operator loss: expected a 4-way output partition");
}

std::vector<double> OperatorLossEvaluator::pack(
    const operators::OperatorParams& p) {
  std::vector<double> theta;
  theta.reserve(p.total_size());
  theta.insert(theta.end(), p.branch1.values().begin(),
               p.branch1.values().end());
  theta.insert(theta.end(), p.branch2.values().begin(),
               p.branch2.values().end());
  theta.insert(theta.end(), p.trunk.values().begin(), p.trunk.values().end());
  return theta;
}

void OperatorLossEvaluator::unpack(std::span<const double> theta,
                                   operators::OperatorParams& p) {
  if (theta.size() != p.total_size())
    throw UsageError("operator params: packed vector size mismatch");
  std::size_t off = 0;
  for (auto* store : {&p.branch1, &p.branch2, &p.trunk}) {
    std::copy(theta.begin() + off, theta.begin() + off + store->size(),
              store->values().begin());
    off += store->size();
  }
}

TermEvaluation OperatorLossEvaluator::evaluate(std::span<const double> theta,
                                               const OperatorBatchSet& batch,
                                               bool want_gradients) {
  if (theta.size() != param_count_)
    throw UsageError("operator loss: parameter vector size mismatch");

  struct OpTemplate {
    ad::Tape tape;
    operators::OperatorGraph graph;
    std::vector<ad::NodeId> targets;
    ad::NodeId root = 0;
    ad::NodeId rebind_from = 0;
  };

  auto make_template = [&](int target_count, bool with_physics) {
    auto tmpl = std::make_unique<OpTemplate>();
    tmpl->graph = operators::build_operator_graph(tmpl->tape, spec_, proto_);
    ad::Tape& t = tmpl->tape;
    tmpl->rebind_from = tmpl->graph.sensors1.front();
    tmpl->targets.resize(target_count);
    for (auto& id : tmpl->targets) id = t.input();
    const auto& outs = tmpl->graph.outputs;
    if (with_physics) {
      const std::array<ad::NodeId, 4> o4 = {outs[0], outs[1], outs[2],
                                            outs[3]};
      const auto res = physics::build_nse_residual(
          t, std::span<const ad::NodeId, 3>(tmpl->graph.x), o4, coeffs_);
      ad::NodeId acc = t.mul(res[0], res[0]);
      for (int i = 1; i < 4; ++i) acc = t.add(acc, t.mul(res[i], res[i]));
      tmpl->root = acc;
    } else if (target_count == 3) {
      const std::array<ad::NodeId, 3> vel = {outs[0], outs[1], outs[2]};
      tmpl->root = squared_error_sum(t, vel, tmpl->targets);
    } else {
      const std::array<ad::NodeId, 3> vel = {outs[0], outs[1], outs[2]};
      const std::array<ad::NodeId, 3> vt = {tmpl->targets[0], tmpl->targets[1],
                                            tmpl->targets[2]};
      const ad::NodeId vel_err = squared_error_sum(t, vel, vt);
      const ad::NodeId dp = t.sub(outs[3], tmpl->targets[3]);
      tmpl->root = t.add(vel_err, t.mul(dp, dp));
    }
    t.set_root(tmpl->root);
    return tmpl;
  };

  TermEvaluation out;
  for (int i = 0; i < kTermCount; ++i) out.losses.lambda[i] = 1.0;
  ChunkScratch scratch;

  auto eval_rows = [&](const TripletRows& rows, int term, bool with_pressure,
                       bool with_physics) {
    if (rows.size() == 0) return;
    const int tcount = with_physics ? 0 : (with_pressure ? 4 : 3);
    auto tmpl = make_template(tcount, with_physics);
    out.losses.active[term] = true;

    PointTemplate shim;  // adapter for run_template's bookkeeping fields
    shim.param_count = param_count_;
    shim.param_base = tmpl->graph.param_base;
    shim.root = tmpl->root;
    shim.rebind_from = tmpl->rebind_from;

    const std::size_t chunks = chunk_count(rows.size());
    scratch.prepare(chunks, tmpl->tape, param_count_, want_gradients);
    const ad::NodeId stop =
        static_cast<ad::NodeId>(shim.param_base + param_count_);
    parallel_chunks(rows.size(), [&](std::size_t c, std::size_t lo,
                                     std::size_t hi) {
      ad::Workspace& ws = *scratch.ws[c];
      ws.bind_range(shim.param_base, theta);
      double loss = 0.0;
      std::vector<double>& grad = scratch.grads[c];
      for (std::size_t r = lo; r < hi; ++r) {
        for (int i = 0; i < rows.m1; ++i)
          ws.bind(tmpl->graph.sensors1[i], rows.sensors1[r * rows.m1 + i]);
        for (int i = 0; i < rows.m2; ++i)
          ws.bind(tmpl->graph.sensors2[i], rows.sensors2[r * rows.m2 + i]);
        for (int i = 0; i < 3; ++i) ws.bind(tmpl->graph.x[i], rows.x[r][i]);
        for (std::size_t i = 0; i < tmpl->targets.size(); ++i)
          ws.bind(tmpl->targets[i], rows.targets[r][i]);
        if (r == lo)
          ws.forward();
        else
          ws.forward_from(shim.rebind_from);
        loss += ws.value(shim.root);
        if (want_gradients) {
          ws.reverse(shim.root, stop);
          for (std::size_t k = 0; k < param_count_; ++k)
            grad[k] +=
                ws.adjoint(shim.param_base + static_cast<ad::NodeId>(k));
        }
      }
      scratch.losses[c] = loss;
    });

    double loss_sum = 0.0;
    for (std::size_t c = 0; c < chunks; ++c) loss_sum += scratch.losses[c];
    out.losses.value[term] = loss_sum / static_cast<double>(rows.size());
    if (want_gradients) {
      out.grads[term].assign(param_count_, 0.0);
      for (std::size_t c = 0; c < chunks; ++c)
        for (std::size_t k = 0; k < param_count_; ++k)
          out.grads[term][k] += scratch.grads[c][k];
      const double inv = 1.0 / static_cast<double>(rows.size());
      for (double& g : out.grads[term]) g *= inv;
    }
  };

  eval_rows(batch.data, kData, true, false);
  eval_rows(batch.inlet, kInlet, false, false);
  eval_rows(batch.wall, kWall, false, false);
  eval_rows(batch.outlet, kOutlet, false, false);
  if (physics_enabled_) eval_rows(batch.collocation, kPhy, false, true);

  out.losses.finalize();
  return out;
}

// --- spec-facing loss assemblies ---------------------------------------------------

LossBreakdown pinn_losses(const nn::ParamStore& params, const BatchSet& batch,
                          const physics::FluidParams& fluid,
                          physics::Frame frame, bool include_physics,
                          const std::array<double, kTermCount>* lambda) {
  PinnLossEvaluator eval(params.spec(), params.fourier_b(),
                         physics::ResidualCoeffs::from(fluid, frame),
                         include_physics);
  auto result = eval.evaluate(params.values(), batch, false);
  if (lambda) {
    result.losses.lambda = *lambda;
    result.losses.finalize();
  }
  return result.losses;
}

LossBreakdown pideeponet_losses(const operators::OperatorParams& params,
                                const OperatorBatchSet& batch,
                                const physics::FluidParams& fluid,
                                physics::Frame frame, bool include_physics,
                                const std::array<double, kTermCount>* lambda) {
  OperatorLossEvaluator eval(params.spec, params,
                             physics::ResidualCoeffs::from(fluid, frame),
                             include_physics);
  auto result =
      eval.evaluate(OperatorLossEvaluator::pack(params), batch, false);
  if (lambda) {
    result.losses.lambda = *lambda;
    result.losses.finalize();
  }
  return result.losses;
}

// --- training loops -------------------------------------------------------------

ModelKind model_kind_from_name(const std::string& name) {
  if (name == "deepnn") return ModelKind::kDeepNN;
  if (name == "pinn") return ModelKind::kPinn;
  if (name == "wu-pinn") return ModelKind::kWuPinn;
  if (name == "deeponet") return ModelKind::kDeepONet;
  if (name == "pi-deeponet") return ModelKind::kPiDeepONet;
  throw ConfigError("unknown model kind '" + name + "'");
}

const char* model_kind_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::kDeepNN:
      return "deepnn";
    case ModelKind::kPinn:
      return "pinn";
    case ModelKind::kWuPinn:
      return "wu-pinn";
    case ModelKind::kDeepONet:
      return "deeponet";
    case ModelKind::kPiDeepONet:
      return "pi-deeponet";
  }
  return "?";
}

void TrainConfig::validate() const {
  if (iterations < 1) throw ConfigError("train config: iterations must be >= 1");
  if (batch_size < 1) throw ConfigError("train config: batch size must be >= 1");
  if (kind == ModelKind::kWuPinn &&
      (warmup_iterations < 0 || warmup_iterations >= iterations))
    throw ConfigError(
        "train config: wu-pinn warm-up iterations must be < total iterations");
  if (grad_norm.update_every < 1)
    throw ConfigError("train config: grad-norm update cadence must be >= 1");
  if (log_every < 1) throw ConfigError("train config: log cadence must be >= 1");
}

void nondimensionalize_cloud(geom::StratifiedPointCloud& cloud,
                             const physics::FluidParams& fluid) {
  const double d = fluid.diameter();
  const double pref = fluid.rho * fluid.v_max * fluid.v_max;
  for (int s = 0; s < geom::kStratumCount; ++s) {
    geom::PointSet& set = cloud.stratum(static_cast<geom::StratumKind>(s));
    for (std::size_t i = 0; i < set.size(); ++i) {
      for (int c = 0; c < 3; ++c) {
        set.points[i][c] /= d;
        set.velocity[i][c] /= fluid.v_max;
      }
      set.pressure[i] /= pref;
    }
  }
}

void nondimensionalize_bundle(operators::TripletBundle& bundle,
                              const physics::FluidParams& fluid) {
  const double d = fluid.diameter();
  const double pref = fluid.rho * fluid.v_max * fluid.v_max;
  for (auto& t : bundle.strata) {
    for (auto& x : t.coordinates)
      for (int c = 0; c < 3; ++c) x[c] /= d;
    for (double& s : t.sensors1) s /= fluid.v_max;  // inlet velocities
    for (double& s : t.sensors2) s /= pref;         // outlet pressures
    for (std::size_t r = 0; r < t.targets.size(); ++r) {
      for (int c = 0; c < 3; ++c) t.targets[r][c] /= fluid.v_max;
      t.targets[r][3] /= pref;
    }
  }
}

namespace {

struct MetricsLog {
  std::ofstream out;
  bool enabled = false;

  explicit MetricsLog(const std::string& path) {
    if (path.empty()) return;
    out.open(path);
    if (!out) throw ConfigError("metrics: cannot open '" + path + "'");
    out << kMetricsHeader << "\n";
    enabled = true;
  }

  void row(long iter, const LossBreakdown& losses, double lr,
           double val_metric, double wall_s) {
    if (!enabled) return;
    out << iter << ',' << fmt(losses.total);
    for (int i = 0; i < kTermCount; ++i) out << ',' << fmt(losses.value[i]);
    for (int i = 0; i < kTermCount; ++i) out << ',' << fmt(losses.lambda[i]);
    out << ',' << fmt(lr) << ',' << fmt(val_metric) << ',' << fmt(wall_s)
        << "\n";
    out.flush();
  }
};

double weighted_total(const LossBreakdown& raw,
                      const std::array<double, kTermCount>& lambda) {
  double total = 0.0;
  for (int i = 0; i < kTermCount; ++i)
    if (raw.active[i]) total += lambda[i] * raw.value[i];
  return total;
}

// The shared optimization loop; Evaluate computes per-term losses/gradients
// for a sampled batch, Validate returns the validation metric, Snapshot /
// Restore capture the trainable state for the divergence guard.
template <typename SampleBatch, typename Evaluate, typename Validate,
          typename SaveCheckpoint>
RunArtifacts optimization_loop(const TrainConfig& cfg, std::size_t param_count,
                               std::vector<double>& theta,
                               std::vector<double>& best_theta,
                               const SampleBatch& make_batch,
                               const Evaluate& evaluate,
                               const Validate& validate,
                               const SaveCheckpoint& save_checkpoint,
                               const std::string& metrics_path) {
  Adam adam(param_count, cfg.adam);
  std::array<double, kTermCount> lambda;
  lambda.fill(1.0);

  MetricsLog log(metrics_path);
  RunArtifacts stats;
  stats.metrics_path = metrics_path;
  stats.best_val_metric = std::numeric_limits<double>::infinity();
  stats.min_total_loss = std::numeric_limits<double>::infinity();

  best_theta = theta;
  std::vector<double> guard_theta = theta;
  checkpoint::AdamSnapshot guard_adam = adam.snapshot();
  long guard_iter = 0;
  bool lr_halved = false;

  std::vector<double> total_grad(param_count);
  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
        .count();
  };

  long iter = 0;
  stats.stop_iter = cfg.iterations;
  for (iter = 0; iter < cfg.iterations; ++iter) {
    auto ev = evaluate(theta, make_batch(), true);

    if (cfg.grad_norm.enabled && iter % cfg.grad_norm.update_every == 0) {
      std::array<double, kTermCount> norms{};
      for (int i = 0; i < kTermCount; ++i)
        if (ev.losses.active[i]) norms[i] = l2_norm(ev.grads[i]);
      lambda = grad_norm_update(lambda, norms, ev.losses.active,
                                cfg.grad_norm.momentum);
    }

    ev.losses.lambda = lambda;
    ev.losses.finalize();
    const double total = ev.losses.total;

    if (!std::isfinite(total) || total > cfg.divergence_threshold) {
      if (!lr_halved) {
        lr_halved = true;
        theta = guard_theta;
        adam.restore(guard_adam);
        adam.halve_learning_rate();
        std::cerr << "warning: divergence at iteration " << iter
                  << " (total " << total
                  << "); halving learning rate and retrying from iteration "
                  << guard_iter << "\n";
        continue;
      }
      save_checkpoint(best_theta, adam);
      std::ostringstream msg;
      msg << "training diverged at iteration " << iter << ": total " << total
          << "; term values:";
      for (int i = 0; i < kTermCount; ++i)
        if (ev.losses.active[i])
          msg << " " << term_name(i) << "=" << ev.losses.value[i];
      throw ConfigError(msg.str());
    }

    if (total < stats.min_total_loss) {
      stats.min_total_loss = total;
      stats.min_total_iter = iter;
    }
    stats.final_total_loss = total;
    stats.final_lambda = lambda;

    const bool log_now = iter % cfg.log_every == 0 || iter == cfg.iterations - 1;
    if (log_now) {
      const auto val_losses = validate(theta);
      const double val_metric = val_losses.has_value()
                                    ? weighted_total(*val_losses, lambda)
                                    : total;
      if (val_metric < stats.best_val_metric) {
        stats.best_val_metric = val_metric;
        stats.best_iter = iter;
        best_theta = theta;
      }
      log.row(iter, ev.losses, adam.learning_rate(), val_metric, elapsed());
      guard_theta = theta;
      guard_adam = adam.snapshot();
      guard_iter = iter;
      if (cfg.checkpoint_every > 0 && iter % cfg.checkpoint_every == 0)
        save_checkpoint(theta, adam);
    }

    if (std::isfinite(cfg.target_total_loss) &&
        total <= cfg.target_total_loss) {
      stats.stop_iter = iter;
      break;
    }

    std::fill(total_grad.begin(), total_grad.end(), 0.0);
    for (int i = 0; i < kTermCount; ++i) {
      if (!ev.losses.active[i]) continue;
      const double w = lambda[i];
      const std::vector<double>& g = ev.grads[i];
      for (std::size_t k = 0; k < param_count; ++k)
        total_grad[k] += w * g[k];
    }
    adam.step(theta, total_grad);
  }
  if (iter >= cfg.iterations) stats.stop_iter = cfg.iterations;

  // A run that never improved on the initial validation metric still
  // reports the initial parameters as best.
  if (!std::isfinite(stats.best_val_metric))
    stats.best_val_metric = stats.final_total_loss;
  stats.wall_seconds = elapsed();
  save_checkpoint(best_theta, adam);
  return stats;
}

void require_nonempty(const geom::StratifiedPointCloud& cloud,
                      ModelKind kind) {
  if (cloud.inlet.size() == 0 || cloud.wall.size() == 0 ||
      cloud.outlet.size() == 0)
    throw ConfigError("training: inlet, wall and outlet strata are mandatory");
  if (kind == ModelKind::kDeepNN && cloud.data.size() == 0)
    throw ConfigError("training: deepnn requires a data stratum");
  if (kind == ModelKind::kPinn && cloud.volume.size() == 0)
    throw ConfigError("training: pinn requires volume collocation points");
}

}  // namespace

PinnRun train_pinn(const TrainConfig& cfg, const nn::NetworkSpec& spec_in,
                   const geom::SplitClouds& clouds_in,
                   const physics::FluidParams& fluid,
                   const std::string& metrics_path,
                   const nn::ParamStore* initial,
                   const std::string& checkpoint_path) {
  cfg.validate();
  fluid.validate();
  if (cfg.kind != ModelKind::kDeepNN && cfg.kind != ModelKind::kPinn)
    throw UsageError("train_pinn: model kind must be deepnn or pinn");

  nn::NetworkSpec spec = spec_in;
  if (!initial) spec.init_seed = cfg.seed;

  geom::SplitClouds clouds = clouds_in;
  physics::Frame frame = physics::Frame::kDimensional;
  if (cfg.nondimensional) {
    frame = physics::Frame::kDimensionless;
    nondimensionalize_cloud(clouds.train, fluid);
    nondimensionalize_cloud(clouds.val, fluid);
    nondimensionalize_cloud(clouds.test, fluid);
  }
  require_nonempty(clouds.train, cfg.kind);

  nn::ParamStore params = initial ? *initial : nn::ParamStore::init(spec);
  if (initial && !(initial->spec() == spec))
    throw UsageError("train_pinn: initial parameters disagree with the spec");

  const bool physics_on = cfg.kind == ModelKind::kPinn;
  PinnLossEvaluator evaluator(spec, params.fourier_b(),
                              physics::ResidualCoeffs::from(fluid, frame),
                              physics_on);

  Rng batch_rng = Rng(cfg.seed).fork(101);
  const BatchSet val_batch = full_batch(clouds.val, cfg.val_cap);
  const bool have_val = clouds.val.total_points() > 0;

  std::vector<double> theta = params.values();
  std::vector<double> best_theta;

  auto save_ckpt = [&](const std::vector<double>& t, const Adam& adam) {
    if (checkpoint_path.empty()) return;
    nn::ParamStore snap = params;
    snap.values() = t;
    const auto opt = adam.snapshot();
    checkpoint::save_network(checkpoint_path, snap, &opt);
  };

  RunArtifacts stats = optimization_loop(
      cfg, params.size(), theta, best_theta,
      [&] { return sample_batch(clouds.train, cfg.batch_size, batch_rng); },
      [&](const std::vector<double>& th, const BatchSet& b, bool grads) {
        return evaluator.evaluate(th, b, grads);
      },
      [&](const std::vector<double>& th) -> std::optional<LossBreakdown> {
        if (!have_val) return std::nullopt;
        return evaluator.evaluate(th, val_batch, false).losses;
      },
      [&](const std::vector<double>& t, const Adam& adam) {
        save_ckpt(t, adam);
      },
      metrics_path);

  PinnRun run;
  run.best_params = params;
  run.best_params.values() = best_theta;
  run.final_params = params;
  run.final_params.values() = theta;
  run.stats = stats;
  return run;
}

PinnRun warmup_train(const TrainConfig& cfg, const nn::NetworkSpec& spec,
                     const geom::SplitClouds& clouds,
                     const physics::FluidParams& fluid,
                     const std::string& metrics_path,
                     const std::string& checkpoint_path) {
  cfg.validate();
  if (cfg.kind != ModelKind::kWuPinn)
    throw UsageError("warmup_train: model kind must be wu-pinn");
  if (clouds.train.data.size() == 0)
    throw ConfigError("warmup_train: the warm-up phase requires a data stratum");

  if (cfg.warmup_iterations == 0) {
    TrainConfig plain = cfg;
    plain.kind = ModelKind::kPinn;
    return train_pinn(plain, spec, clouds, fluid, metrics_path, nullptr,
                      checkpoint_path);
  }

  TrainConfig phase1 = cfg;
  phase1.kind = ModelKind::kDeepNN;
  phase1.iterations = cfg.warmup_iterations;
  const std::string phase1_metrics =
      metrics_path.empty() ? "" : metrics_path + ".warmup";
  PinnRun warm =
      train_pinn(phase1, spec, clouds, fluid, phase1_metrics, nullptr, "");

  TrainConfig phase2 = cfg;
  phase2.kind = ModelKind::kPinn;
  phase2.iterations = cfg.iterations - cfg.warmup_iterations;
  PinnRun run = train_pinn(phase2, warm.best_params.spec(), clouds, fluid,
                           metrics_path, &warm.best_params, checkpoint_path);

  // Reported runtime is the combined time of both phases.
  run.stats.warmup_wall_seconds = warm.stats.wall_seconds;
  run.stats.wall_seconds += warm.stats.wall_seconds;
  return run;
}

PinnRun transfer_train(const TrainConfig& cfg,
                       const nn::NetworkSpec& target_spec,
                       const nn::ParamStore& baseline,
                       const geom::SplitClouds& clouds,
                       const physics::FluidParams& fluid,
                       const std::string& metrics_path,
                       const std::string& checkpoint_path) {
  nn::NetworkSpec a = baseline.spec();
  nn::NetworkSpec b = target_spec;
  a.init_seed = 0;
  b.init_seed = 0;
  if (!(a == b))
    throw UsageError(
        "transfer_train: baseline and target network architectures differ");
  TrainConfig run_cfg = cfg;
  if (run_cfg.kind == ModelKind::kWuPinn)
    throw UsageError("transfer_train: warm-started runs use deepnn or pinn");
  return train_pinn(run_cfg, baseline.spec(), clouds, fluid, metrics_path,
                    &baseline, checkpoint_path);
}

OperatorRun train_operator(const TrainConfig& cfg,
                           const operators::OperatorSpec& spec_in,
                           const operators::TripletBundle& train_bundle_in,
                           const operators::TripletBundle& val_bundle_in,
                           const physics::FluidParams& fluid,
                           const std::string& metrics_path,
                           const std::string& checkpoint_path) {
  cfg.validate();
  fluid.validate();
  if (cfg.kind != ModelKind::kDeepONet && cfg.kind != ModelKind::kPiDeepONet)
    throw UsageError("train_operator: model kind must be (pi-)deeponet");

  operators::OperatorSpec spec = spec_in;
  spec.branch1.init_seed = cfg.seed * 3 + 1;
  spec.branch2.init_seed = cfg.seed * 3 + 2;
  spec.trunk.init_seed = cfg.seed * 3 + 3;

  operators::TripletBundle train_bundle = train_bundle_in;
  operators::TripletBundle val_bundle = val_bundle_in;
  physics::Frame frame = physics::Frame::kDimensional;
  if (cfg.nondimensional) {
    frame = physics::Frame::kDimensionless;
    nondimensionalize_bundle(train_bundle, fluid);
    nondimensionalize_bundle(val_bundle, fluid);
  }

  operators::OperatorParams params = operators::OperatorParams::init(spec);
  const bool physics_on = cfg.kind == ModelKind::kPiDeepONet;
  OperatorLossEvaluator evaluator(spec, params,
                                  physics::ResidualCoeffs::from(fluid, frame),
                                  physics_on);

  Rng batch_rng = Rng(cfg.seed).fork(103);
  const OperatorBatchSet val_batch =
      full_operator_batch(val_bundle, cfg.val_cap);
  bool have_val = false;
  for (const auto& t : val_bundle.strata) have_val |= t.rows() > 0;

  std::vector<double> theta = OperatorLossEvaluator::pack(params);
  std::vector<double> best_theta;

  auto save_ckpt = [&](const std::vector<double>& t, const Adam& adam) {
    if (checkpoint_path.empty()) return;
    operators::OperatorParams snap = params;
    OperatorLossEvaluator::unpack(t, snap);
    const auto opt = adam.snapshot();
    checkpoint::save_operator(checkpoint_path, snap, &opt);
  };

  RunArtifacts stats = optimization_loop(
      cfg, theta.size(), theta, best_theta,
      [&] {
        return sample_operator_batch(train_bundle, cfg.batch_size, batch_rng);
      },
      [&](const std::vector<double>& th, const OperatorBatchSet& b,
          bool grads) { return evaluator.evaluate(th, b, grads); },
      [&](const std::vector<double>& th) -> std::optional<LossBreakdown> {
        if (!have_val) return std::nullopt;
        return evaluator.evaluate(th, val_batch, false).losses;
      },
      [&](const std::vector<double>& t, const Adam& adam) {
        save_ckpt(t, adam);
      },
      metrics_path);

  OperatorRun run;
  run.best_params = params;
  OperatorLossEvaluator::unpack(best_theta, run.best_params);
  run.final_params = params;
  OperatorLossEvaluator::unpack(theta, run.final_params);
  run.stats = stats;
  return run;
}

}  // namespace hemoflow::train
