#include <benchmark/benchmark.h>

#include "hemoflow/eval.hpp"
#include "hemoflow/geometry.hpp"
#include "hemoflow/nn.hpp"
#include "hemoflow/operators.hpp"
#include "hemoflow/physics.hpp"
#include "hemoflow/training.hpp"

using namespace hemoflow;

namespace {

nn::NetworkSpec desk_spec(bool all_on) {
  nn::NetworkSpec spec;
  spec.input_dim = 3;
  spec.output_dim = 4;
  spec.hidden_layers = 4;
  spec.hidden_width = 64;
  spec.init_seed = 1;
  if (all_on) {
    spec.kind = nn::ArchKind::kModifiedMlp;
    spec.fourier = nn::FourierOptions{16, 1.0};
    spec.rwf = nn::RwfOptions{};
  }
  return spec;
}

physics::FluidParams table_fluid() {
  physics::FluidParams p;
  p.v_max = 0.1;
  return p;
}

geom::SplitClouds desk_dataset() {
  geom::DomainSpec domain;
  geom::StratumCounts counts;
  counts.inlet = counts.wall = counts.outlet = 2000;
  counts.volume = 20000;
  auto cloud = geom::sample_domain(domain, counts, 0.1, 7);
  geom::apply_oracle_labels(cloud, {table_fluid(), 0.0});
  return geom::split(cloud, {0.68, 0.02, 0.30}, 8);
}

}  // namespace

static void BM_NetworkForward(benchmark::State& state) {
  const nn::NetworkSpec spec = desk_spec(state.range(0) != 0);
  const nn::ParamStore store = nn::ParamStore::init(spec);
  nn::FieldEvaluator eval(store);
  std::array<double, 4> out{};
  const std::vector<double> x = {0.1, 3.0, -0.2};
  for (auto _ : state) {
    eval.eval_into(x, out);
    benchmark::DoNotOptimize(out);
  }
}
BENCHMARK(BM_NetworkForward)->Arg(0)->Arg(1);

static void BM_ResidualTemplateBuild(benchmark::State& state) {
  const nn::NetworkSpec spec = desk_spec(true);
  const nn::ParamStore store = nn::ParamStore::init(spec);
  for (auto _ : state) {
    ad::Tape tape;
    std::vector<ad::NodeId> params(spec.param_count());
    for (auto& id : params) id = tape.input();
    std::array<ad::NodeId, 3> x = {tape.input(), tape.input(), tape.input()};
    const auto outputs =
        nn::build_network(tape, spec, store.fourier_b(), x, params);
    const std::array<ad::NodeId, 4> outs = {outputs[0], outputs[1],
                                            outputs[2], outputs[3]};
    const auto res = physics::build_nse_residual(
        tape, x, outs,
        physics::ResidualCoeffs::from(table_fluid(),
                                      physics::Frame::kDimensionless));
    benchmark::DoNotOptimize(res);
    state.counters["nodes"] = static_cast<double>(tape.size());
  }
}
BENCHMARK(BM_ResidualTemplateBuild);

static void BM_PhysicsPointEval(benchmark::State& state) {
  const nn::NetworkSpec spec = desk_spec(true);
  const nn::ParamStore store = nn::ParamStore::init(spec);
  ad::Tape tape;
  std::vector<ad::NodeId> params(spec.param_count());
  for (auto& id : params) id = tape.input();
  std::array<ad::NodeId, 3> x = {tape.input(), tape.input(), tape.input()};
  const auto outputs =
      nn::build_network(tape, spec, store.fourier_b(), x, params);
  const std::array<ad::NodeId, 4> outs = {outputs[0], outputs[1], outputs[2],
                                          outputs[3]};
  const auto res = physics::build_nse_residual(
      tape, x, outs,
      physics::ResidualCoeffs::from(table_fluid(),
                                    physics::Frame::kDimensionless));
  ad::NodeId root = tape.mul(res[0], res[0]);
  for (int i = 1; i < 4; ++i) root = tape.add(root, tape.mul(res[i], res[i]));
  tape.set_root(root);
  ad::Workspace ws(tape);
  ws.bind_range(params[0], store.values());
  ws.bind(x[0], 0.1);
  ws.bind(x[1], 5.0);
  ws.bind(x[2], -0.1);
  ws.forward();
  const ad::NodeId stop =
      static_cast<ad::NodeId>(params[0] + store.size());
  double coord = 0.0;
  for (auto _ : state) {
    ws.bind(x[1], 5.0 + 1e-6 * (coord += 1.0));
    ws.forward_from(x[0]);
    ws.reverse(root, stop);
    benchmark::DoNotOptimize(ws.adjoint(params[0]));
  }
}
BENCHMARK(BM_PhysicsPointEval);

static void BM_PinnIteration(benchmark::State& state) {
  const nn::NetworkSpec spec = desk_spec(true);
  const auto clouds = desk_dataset();
  geom::StratifiedPointCloud train_cloud = clouds.train;
  train::nondimensionalize_cloud(train_cloud, table_fluid());
  const nn::ParamStore store = nn::ParamStore::init(spec);
  train::PinnLossEvaluator evaluator(
      spec, store.fourier_b(),
      physics::ResidualCoeffs::from(table_fluid(),
                                    physics::Frame::kDimensionless),
      true);
  Rng rng(5);
  const int batch = static_cast<int>(state.range(0));
  for (auto _ : state) {
    const auto b = train::sample_batch(train_cloud, batch, rng);
    const auto ev = evaluator.evaluate(store.values(), b, true);
    benchmark::DoNotOptimize(ev.losses.total);
  }
}
BENCHMARK(BM_PinnIteration)->Arg(32)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

static void BM_OperatorInference(benchmark::State& state) {
  const auto spec = operators::OperatorSpec::standard(64, 64, 64, 3, 64, 4, 128, 3);
  const auto params = operators::OperatorParams::init(spec);
  operators::OperatorEvaluator eval(params);
  std::vector<double> s1(64, 0.05), s2(64, 0.0);
  eval.set_sensors(s1, s2);
  std::array<double, 4> out{};
  double t = 0.0;
  for (auto _ : state) {
    eval.eval_into({0.1, 2.0 + 1e-7 * (t += 1.0), 0.05}, out);
    benchmark::DoNotOptimize(out);
  }
}
BENCHMARK(BM_OperatorInference);

BENCHMARK_MAIN();
