#include "hemoflow/operators.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

namespace hemoflow::operators {

void OperatorSpec::validate() const {
  branch1.validate();
  branch2.validate();
  trunk.validate();
  if (q < 1) throw ConfigError("operator spec: q must be >= 1");
  if (branch1.output_dim != q || branch2.output_dim != q ||
      trunk.output_dim != q)
    throw ConfigError("operator spec: branch and trunk output dims must equal q");
  if (trunk.input_dim != 3)
    throw ConfigError("operator spec: trunk input dim must be 3");
  if (partition.empty())
    throw ConfigError("operator spec: partition must not be empty");
  int expected_lo = 0;
  for (const auto& p : partition) {
    if (p.lo != expected_lo || p.hi <= p.lo)
      throw ConfigError(
          "operator spec: partition ranges must be contiguous and non-empty");
    expected_lo = p.hi;
  }
  if (expected_lo != q)
    throw ConfigError("operator spec: partition must cover [0, q)");
}

OperatorSpec OperatorSpec::standard(int m1, int m2, int branch_width,
                                    int branch_depth, int trunk_width,
                                    int trunk_depth, int q,
                                    std::uint64_t seed) {
  if (q % 4 != 0)
    throw ConfigError("operator spec: q must be divisible by 4 outputs");
  OperatorSpec spec;
  spec.q = q;
  spec.branch1 = {m1, q, branch_depth, branch_width, nn::ArchKind::kMlp,
                  std::nullopt, std::nullopt, seed * 3 + 1};
  spec.branch2 = {m2, q, branch_depth, branch_width, nn::ArchKind::kMlp,
                  std::nullopt, std::nullopt, seed * 3 + 2};
  spec.trunk = {3, q, trunk_depth, trunk_width, nn::ArchKind::kMlp,
                std::nullopt, std::nullopt, seed * 3 + 3};
  const int share = q / 4;
  const char* names[4] = {"v1", "v2", "v3", "p"};
  for (int i = 0; i < 4; ++i)
    spec.partition.push_back({names[i], i * share, (i + 1) * share});
  return spec;
}

OperatorParams OperatorParams::init(const OperatorSpec& spec) {
  spec.validate();
  OperatorParams p;
  p.spec = spec;
  p.branch1 = nn::ParamStore::init(spec.branch1);
  p.branch2 = nn::ParamStore::init(spec.branch2);
  p.trunk = nn::ParamStore::init(spec.trunk);
  return p;
}

SensorLayout SensorLayout::make(const geom::DomainSpec& domain, int m1,
                                int m2) {
  domain.validate();
  if (m1 < 1 || m2 < 1)
    throw ConfigError("sensor layout: sensor counts must be >= 1");
  SensorLayout layout;
  // Sunflower (golden-angle) layout: area-uniform, deterministic, and the
  // same collection for every function instance.
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  auto disc = [&](int m, double radius, double x2) {
    std::vector<Vec3> pts;
    pts.reserve(m);
    for (int k = 0; k < m; ++k) {
      const double r = radius * std::sqrt((k + 0.5) / m);
      const double phi = golden * k;
      pts.push_back({r * std::cos(phi), x2, r * std::sin(phi)});
    }
    return pts;
  };
  layout.inlet = disc(m1, domain.radius, 0.0);
  layout.outlet =
      disc(m2, geom::radius_profile(domain, domain.length), domain.length);
  return layout;
}

void OperatorTriplet::validate() const {
  const std::size_t n = coordinates.size();
  if (targets.size() != n || target_mask.size() != n ||
      sample_index.size() != n)
    throw ValidationError("triplet: row counts disagree");
  if (sensors1.size() != n * static_cast<std::size_t>(m1) ||
      sensors2.size() != n * static_cast<std::size_t>(m2))
    throw ValidationError("triplet: sensor matrix shapes disagree");
}

TripletBundle build_triplets(std::span<const geom::StratifiedPointCloud> clouds,
                             const SensorLayout& sensors,
                             const geom::DomainSpec& domain,
                             double p_outlet) {
  if (clouds.empty()) throw ConfigError("build_triplets: no clouds given");
  const int m1 = static_cast<int>(sensors.inlet.size());
  const int m2 = static_cast<int>(sensors.outlet.size());

  TripletBundle bundle;
  for (auto& t : bundle.strata) {
    t.m1 = m1;
    t.m2 = m2;
  }

  for (std::size_t ci = 0; ci < clouds.size(); ++ci) {
    const geom::StratifiedPointCloud& cloud = clouds[ci];

    // Sensor rows are fixed per instance: the inlet velocity function is the
    // parabolic profile at this cloud's V, the outlet pressure function is
    // taken from outlet labels when available (constant gauge otherwise).
    std::vector<double> row1(m1), row2(m2);
    for (int k = 0; k < m1; ++k)
      row1[k] =
          physics::parabolic_inlet(sensors.inlet[k], cloud.v_tag,
                                   domain.radius)[1];
    bool have_outlet_pressure = cloud.outlet.size() > 0;
    for (std::size_t i = 0; i < cloud.outlet.size(); ++i)
      if (!cloud.outlet.has_pressure[i]) have_outlet_pressure = false;
    for (int k = 0; k < m2; ++k) {
      if (have_outlet_pressure) {
        // Nearest outlet node supplies the sampled pressure.
        std::size_t best = 0;
        double best_d = 1e300;
        for (std::size_t i = 0; i < cloud.outlet.size(); ++i) {
          const Vec3& x = cloud.outlet.points[i];
          const double dx = x[0] - sensors.outlet[k][0];
          const double dz = x[2] - sensors.outlet[k][2];
          const double d = dx * dx + dz * dz;
          if (d < best_d) {
            best_d = d;
            best = i;
          }
        }
        row2[k] = cloud.outlet.pressure[best];
      } else {
        row2[k] = p_outlet;
      }
    }

    for (int s = 0; s < geom::kStratumCount; ++s) {
      const auto kind = static_cast<geom::StratumKind>(s);
      const geom::PointSet& set = cloud.stratum(kind);
      OperatorTriplet& t = bundle.strata[s];
      for (std::size_t i = 0; i < set.size(); ++i) {
        t.coordinates.push_back(set.points[i]);
        t.sensors1.insert(t.sensors1.end(), row1.begin(), row1.end());
        t.sensors2.insert(t.sensors2.end(), row2.begin(), row2.end());
        std::array<double, 4> target{0, 0, 0, 0};
        std::array<std::uint8_t, 4> mask{0, 0, 0, 0};
        if (set.has_velocity[i]) {
          for (int c = 0; c < 3; ++c) {
            target[c] = set.velocity[i][c];
            mask[c] = 1;
          }
        }
        if (set.has_pressure[i]) {
          target[3] = set.pressure[i];
          mask[3] = 1;
        }
        t.targets.push_back(target);
        t.target_mask.push_back(mask);
        t.sample_index.push_back(static_cast<std::uint32_t>(ci));
      }
    }
  }
  for (auto& t : bundle.strata) t.validate();
  return bundle;
}

// --- directory I/O ----------------------------------------------------------

namespace {

void write_double(std::ostream& out, double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out << buf;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("triplet export: cannot open '" + path + "'");
  return out;
}

std::vector<std::vector<double>> read_csv_matrix(const std::string& path,
                                                 std::size_t expected_cols) {
  std::ifstream in(path);
  if (!in) throw ConfigError("triplet import: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line))
    throw ValidationError(path + ": empty file");
  std::vector<std::vector<double>> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      char* end = nullptr;
      row.push_back(std::strtod(cell.c_str(), &end));
      if (end == cell.c_str())
        throw ValidationError(path + ":" + std::to_string(lineno) +
                              ": malformed cell");
    }
    if (expected_cols != 0 && row.size() != expected_cols)
      throw ValidationError(path + ":" + std::to_string(lineno) +
                            ": unexpected column count");
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

void export_triplet(const OperatorTriplet& t, const std::string& dir) {
  t.validate();
  std::filesystem::create_directories(dir);
  {
    auto out = open_out(dir + "/coordinates.csv");
    out << "x1,x2,x3\n";
    for (const auto& x : t.coordinates) {
      write_double(out, x[0]);
      out << ',';
      write_double(out, x[1]);
      out << ',';
      write_double(out, x[2]);
      out << '\n';
    }
  }
  auto dump_matrix = [&](const std::string& name,
                         const std::vector<double>& data, int cols,
                         const char* prefix) {
    auto out = open_out(dir + "/" + name);
    for (int c = 0; c < cols; ++c) out << (c ? "," : "") << prefix << (c + 1);
    out << '\n';
    const std::size_t rows = data.size() / cols;
    for (std::size_t r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) {
        if (c) out << ',';
        write_double(out, data[r * cols + c]);
      }
      out << '\n';
    }
  };
  dump_matrix("sensors1.csv", t.sensors1, t.m1, "s");
  dump_matrix("sensors2.csv", t.sensors2, t.m2, "s");
  {
    auto out = open_out(dir + "/targets.csv");
    out << "v1,v2,v3,p\n";
    for (std::size_t r = 0; r < t.rows(); ++r) {
      for (int c = 0; c < 4; ++c) {
        if (c) out << ',';
        if (t.target_mask[r][c]) write_double(out, t.targets[r][c]);
      }
      out << '\n';
    }
  }
  {
    auto out = open_out(dir + "/index.csv");
    out << "sample\n";
    for (std::uint32_t i : t.sample_index) out << i << '\n';
  }
}

OperatorTriplet import_triplet(const std::string& dir) {
  OperatorTriplet t;
  const auto coords = read_csv_matrix(dir + "/coordinates.csv", 3);
  for (const auto& row : coords)
    t.coordinates.push_back({row[0], row[1], row[2]});

  const auto s1 = read_csv_matrix(dir + "/sensors1.csv", 0);
  const auto s2 = read_csv_matrix(dir + "/sensors2.csv", 0);
  t.m1 = s1.empty() ? 0 : static_cast<int>(s1[0].size());
  t.m2 = s2.empty() ? 0 : static_cast<int>(s2[0].size());
  for (const auto& row : s1) {
    if (static_cast<int>(row.size()) != t.m1)
      throw ValidationError(dir + "/sensors1.csv: ragged rows");
    t.sensors1.insert(t.sensors1.end(), row.begin(), row.end());
  }
  for (const auto& row : s2) {
    if (static_cast<int>(row.size()) != t.m2)
      throw ValidationError(dir + "/sensors2.csv: ragged rows");
    t.sensors2.insert(t.sensors2.end(), row.begin(), row.end());
  }

  // Targets keep their presence mask: empty cells are missing values.
  {
    std::ifstream in(dir + "/targets.csv");
    if (!in)
      throw ConfigError("triplet import: cannot open '" + dir +
                        "/targets.csv'");
    std::string line;
    std::getline(in, line);
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      std::array<double, 4> target{0, 0, 0, 0};
      std::array<std::uint8_t, 4> mask{0, 0, 0, 0};
      std::stringstream ss(line);
      std::string cell;
      for (int c = 0; c < 4; ++c) {
        if (!std::getline(ss, cell, ','))
          cell.clear();
        if (!cell.empty()) {
          char* end = nullptr;
          target[c] = std::strtod(cell.c_str(), &end);
          if (end == cell.c_str())
            throw ValidationError(dir + "/targets.csv:" +
                                  std::to_string(lineno) + ": malformed cell");
          mask[c] = 1;
        }
      }
      t.targets.push_back(target);
      t.target_mask.push_back(mask);
    }
  }

  const auto idx = read_csv_matrix(dir + "/index.csv", 1);
  for (const auto& row : idx)
    t.sample_index.push_back(static_cast<std::uint32_t>(row[0]));

  t.validate();
  return t;
}

// --- tape construction --------------------------------------------------------

OperatorGraph build_operator_graph(ad::Tape& tape, const OperatorSpec& spec,
                                   const OperatorParams& params) {
  spec.validate();
  OperatorGraph g;
  const std::size_t n1 = spec.branch1.param_count();
  const std::size_t n2 = spec.branch2.param_count();
  const std::size_t nt = spec.trunk.param_count();
  g.params.resize(n1 + n2 + nt);
  for (auto& id : g.params) id = tape.input();
  g.param_base = g.params.empty() ? 0 : g.params[0];

  g.sensors1.resize(spec.branch1.input_dim);
  for (auto& id : g.sensors1) id = tape.input();
  g.sensors2.resize(spec.branch2.input_dim);
  for (auto& id : g.sensors2) id = tape.input();

  // Branch subgraphs are laid down before the coordinate inputs so per-point
  // re-evaluation can start at x and skip them.
  std::span<const ad::NodeId> all(g.params);
  const auto beta1 =
      nn::build_network(tape, spec.branch1, params.branch1.fourier_b(),
                        g.sensors1, all.subspan(0, n1));
  const auto beta2 =
      nn::build_network(tape, spec.branch2, params.branch2.fourier_b(),
                        g.sensors2, all.subspan(n1, n2));
  for (auto& id : g.x) id = tape.input();
  const auto tau = nn::build_network(tape, spec.trunk,
                                     params.trunk.fourier_b(), g.x,
                                     all.subspan(n1 + n2, nt));

  // Merge: out_zeta = sum_{k in range} beta1_k * beta2_k * tau_k. The branch
  // products are materialized contiguously so the dot stays vectorized.
  for (const auto& part : spec.partition) {
    std::vector<ad::NodeId> prod(part.hi - part.lo);
    for (int k = part.lo; k < part.hi; ++k)
      prod[k - part.lo] = tape.mul(beta1[k], beta2[k]);
    std::vector<ad::NodeId> tau_slice(tau.begin() + part.lo,
                                      tau.begin() + part.hi);
    g.outputs.push_back(tape.dot(prod, tau_slice));
  }
  return g;
}

namespace {

void bind_operator_inputs(ad::Workspace& ws, const OperatorGraph& g,
                          const OperatorParams& params,
                          std::span<const double> sensors1,
                          std::span<const double> sensors2) {
  if (sensors1.size() != g.sensors1.size() ||
      sensors2.size() != g.sensors2.size())
    throw UsageError("operator: sensor row width mismatch");
  ad::NodeId base = g.param_base;
  ws.bind_range(base, params.branch1.values());
  base += static_cast<ad::NodeId>(params.branch1.size());
  ws.bind_range(base, params.branch2.values());
  base += static_cast<ad::NodeId>(params.branch2.size());
  ws.bind_range(base, params.trunk.values());
  for (std::size_t i = 0; i < sensors1.size(); ++i)
    ws.bind(g.sensors1[i], sensors1[i]);
  for (std::size_t i = 0; i < sensors2.size(); ++i)
    ws.bind(g.sensors2[i], sensors2[i]);
}

}  // namespace

std::array<double, 4> deeponet_forward(const OperatorParams& params,
                                       std::span<const double> sensors1,
                                       std::span<const double> sensors2,
                                       const Vec3& x) {
  ad::Tape tape;
  const OperatorGraph g = build_operator_graph(tape, params.spec, params);
  if (g.outputs.size() != 4)
    throw UsageError("deeponet_forward: expected a 4-way output partition");
  tape.set_root(g.outputs.back());
  ad::Workspace ws(tape);
  bind_operator_inputs(ws, g, params, sensors1, sensors2);
  for (int i = 0; i < 3; ++i) ws.bind(g.x[i], x[i]);
  ws.forward();
  return {ws.value(g.outputs[0]), ws.value(g.outputs[1]),
          ws.value(g.outputs[2]), ws.value(g.outputs[3])};
}

OperatorDerivatives operator_input_derivatives(
    const OperatorParams& params, std::span<const double> sensors1,
    std::span<const double> sensors2, const Vec3& x) {
  ad::Tape tape;
  const OperatorGraph g = build_operator_graph(tape, params.spec, params);
  ad::GradientBuilder gb(tape);

  std::array<std::vector<ad::NodeId>, 4> first;
  std::array<std::array<ad::NodeId, 3>, 4> second{};
  for (int i = 0; i < 4; ++i) {
    first[i] = gb.derive_or_zero(g.outputs[i], g.x);
    for (int j = 0; j < 3; ++j) {
      const ad::NodeId wrt[1] = {g.x[j]};
      second[i][j] = gb.derive_or_zero(first[i][j], wrt)[0];
    }
  }

  tape.set_root(g.outputs.back());
  ad::Workspace ws(tape);
  bind_operator_inputs(ws, g, params, sensors1, sensors2);
  for (int i = 0; i < 3; ++i) ws.bind(g.x[i], x[i]);
  ws.forward();

  OperatorDerivatives out;
  for (int i = 0; i < 4; ++i) {
    out.value[i] = ws.value(g.outputs[i]);
    for (int j = 0; j < 3; ++j) {
      out.first[i][j] = ws.value(first[i][j]);
      out.second[i][j] = ws.value(second[i][j]);
    }
  }
  return out;
}

OperatorEvaluator::OperatorEvaluator(const OperatorParams& params)
    : ws_(tape_) {
  graph_ = build_operator_graph(tape_, params.spec, params);
  tape_.set_root(graph_.outputs.back());
  ws_.attach(tape_);
  ad::NodeId base = graph_.param_base;
  ws_.bind_range(base, params.branch1.values());
  base += static_cast<ad::NodeId>(params.branch1.size());
  ws_.bind_range(base, params.branch2.values());
  base += static_cast<ad::NodeId>(params.branch2.size());
  ws_.bind_range(base, params.trunk.values());
}

void OperatorEvaluator::set_sensors(std::span<const double> sensors1,
                                    std::span<const double> sensors2) {
  if (sensors1.size() != graph_.sensors1.size() ||
      sensors2.size() != graph_.sensors2.size())
    throw UsageError("operator evaluator: sensor row width mismatch");
  for (std::size_t i = 0; i < sensors1.size(); ++i)
    ws_.bind(graph_.sensors1[i], sensors1[i]);
  for (std::size_t i = 0; i < sensors2.size(); ++i)
    ws_.bind(graph_.sensors2[i], sensors2[i]);
  sensors_set_ = true;
  first_ = true;  // branch activations must be recomputed
}

void OperatorEvaluator::eval_into(const Vec3& x, std::span<double> out) {
  if (!sensors_set_)
    throw UsageError("operator evaluator: sensors not set");
  if (out.size() != graph_.outputs.size())
    throw UsageError("operator evaluator: output size mismatch");
  for (int i = 0; i < 3; ++i) ws_.bind(graph_.x[i], x[i]);
  if (first_) {
    ws_.forward();
    first_ = false;
  } else {
    // Branch subgraphs precede the coordinate inputs on the tape; only the
    // trunk and merge need re-evaluation per point.
    ws_.forward_from(graph_.x[0]);
  }
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = ws_.value(graph_.outputs[i]);
}

}  // namespace hemoflow::operators
