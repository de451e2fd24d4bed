#include "hemoflow/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numbers>
#include <sstream>

namespace hemoflow::geom {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double gauss_tail(const DomainSpec& spec) {
  const double c = spec.bulge.center_fraction * spec.length;
  const double w = spec.bulge_width();
  return std::exp(-c * c / (2.0 * w * w));
}

}  // namespace

void DomainSpec::validate() const {
  if (radius <= 0 || length <= 0)
    throw ConfigError("domain spec: radius and length must be positive");
  if (kind == DomainKind::kAaaIdealized) {
    if (bulge.max_radius_ratio < 1.0)
      throw ConfigError("domain spec: bulge ratio must be >= 1");
    if (bulge.center_fraction <= 0.0 || bulge.center_fraction >= 1.0)
      throw ConfigError("domain spec: bulge center fraction must lie in (0,1)");
    if (bulge.shape_width < 0.0)
      throw ConfigError("domain spec: bulge width must be >= 0");
  }
}

double radius_profile(const DomainSpec& spec, double x2) {
  if (x2 < -1e-12 || x2 > spec.length * (1.0 + 1e-12))
    throw UsageError("radius_profile: axial coordinate out of range");
  if (spec.kind == DomainKind::kStraightPipe) return spec.radius;
  const double c = spec.bulge.center_fraction * spec.length;
  const double w = spec.bulge_width();
  const double tail = gauss_tail(spec);
  const double g = std::exp(-(x2 - c) * (x2 - c) / (2.0 * w * w));
  return spec.radius +
         (spec.bulge.max_radius_ratio - 1.0) * spec.radius * (g - tail) /
             (1.0 - tail);
}

double radius_profile_slope(const DomainSpec& spec, double x2) {
  if (spec.kind == DomainKind::kStraightPipe) return 0.0;
  const double c = spec.bulge.center_fraction * spec.length;
  const double w = spec.bulge_width();
  const double tail = gauss_tail(spec);
  const double g = std::exp(-(x2 - c) * (x2 - c) / (2.0 * w * w));
  return (spec.bulge.max_radius_ratio - 1.0) * spec.radius /
         (1.0 - tail) * g * (-(x2 - c) / (w * w));
}

const char* stratum_name(StratumKind s) {
  switch (s) {
    case StratumKind::kInlet:
      return "inlet";
    case StratumKind::kWall:
      return "wall";
    case StratumKind::kOutlet:
      return "outlet";
    case StratumKind::kVolume:
      return "volume";
    case StratumKind::kData:
      return "data";
  }
  return "?";
}

std::optional<StratumKind> stratum_from_name(const std::string& s) {
  for (int i = 0; i < kStratumCount; ++i) {
    const auto k = static_cast<StratumKind>(i);
    if (s == stratum_name(k)) return k;
  }
  return std::nullopt;
}

void PointSet::reserve(std::size_t n) {
  points.reserve(n);
  velocity.reserve(n);
  pressure.reserve(n);
  has_velocity.reserve(n);
  has_pressure.reserve(n);
}

void PointSet::append_unlabeled(const Vec3& x) {
  points.push_back(x);
  velocity.push_back({0, 0, 0});
  pressure.push_back(0.0);
  has_velocity.push_back(0);
  has_pressure.push_back(0);
}

void PointSet::append_velocity(const Vec3& x, const Vec3& v) {
  points.push_back(x);
  velocity.push_back(v);
  pressure.push_back(0.0);
  has_velocity.push_back(1);
  has_pressure.push_back(0);
}

void PointSet::append_full(const Vec3& x, const Vec3& v, double p) {
  points.push_back(x);
  velocity.push_back(v);
  pressure.push_back(p);
  has_velocity.push_back(1);
  has_pressure.push_back(1);
}

void PointSet::append_row(const Vec3& x, const std::optional<Vec3>& v,
                          std::optional<double> p) {
  points.push_back(x);
  velocity.push_back(v.value_or(Vec3{0, 0, 0}));
  pressure.push_back(p.value_or(0.0));
  has_velocity.push_back(v ? 1 : 0);
  has_pressure.push_back(p ? 1 : 0);
}

PointSet& StratifiedPointCloud::stratum(StratumKind s) {
  switch (s) {
    case StratumKind::kInlet:
      return inlet;
    case StratumKind::kWall:
      return wall;
    case StratumKind::kOutlet:
      return outlet;
    case StratumKind::kVolume:
      return volume;
    case StratumKind::kData:
      return data;
  }
  throw UsageError("unknown stratum");
}

const PointSet& StratifiedPointCloud::stratum(StratumKind s) const {
  return const_cast<StratifiedPointCloud*>(this)->stratum(s);
}

std::size_t StratifiedPointCloud::total_points() const {
  return inlet.size() + wall.size() + outlet.size() + volume.size() +
         data.size();
}

StratifiedPointCloud sample_domain(const DomainSpec& spec,
                                   const StratumCounts& counts, double v_max,
                                   std::uint64_t seed) {
  spec.validate();
  StratifiedPointCloud cloud;
  cloud.v_tag = v_max;
  Rng root(seed);
  Rng inlet_rng = root.fork(1);
  Rng wall_rng = root.fork(2);
  Rng outlet_rng = root.fork(3);
  Rng volume_rng = root.fork(4);

  auto disc_point = [](Rng& rng, double radius, double x2) {
    const double r = radius * std::sqrt(rng.uniform());
    const double phi = kTwoPi * rng.uniform();
    return Vec3{r * std::cos(phi), x2, r * std::sin(phi)};
  };

  cloud.inlet.reserve(counts.inlet);
  for (std::size_t i = 0; i < counts.inlet; ++i) {
    const Vec3 x = disc_point(inlet_rng, spec.radius, 0.0);
    cloud.inlet.append_velocity(
        x, physics::parabolic_inlet(x, v_max, spec.radius));
  }

  const double outlet_radius = radius_profile(spec, spec.length);
  cloud.outlet.reserve(counts.outlet);
  for (std::size_t i = 0; i < counts.outlet; ++i)
    cloud.outlet.append_unlabeled(
        disc_point(outlet_rng, outlet_radius, spec.length));

  // Wall: density along x2 proportional to the revolved surface area
  // element rho(x2) sqrt(1 + rho'^2); sampled by rejection, azimuth uniform.
  double density_max = 0.0;
  const int probes = 512;
  for (int i = 0; i <= probes; ++i) {
    const double x2 = spec.length * i / probes;
    const double s = radius_profile_slope(spec, x2);
    density_max = std::max(
        density_max, radius_profile(spec, x2) * std::sqrt(1.0 + s * s));
  }
  density_max *= 1.05;
  cloud.wall.reserve(counts.wall);
  for (std::size_t i = 0; i < counts.wall; ++i) {
    double x2 = 0.0;
    for (;;) {
      x2 = wall_rng.uniform(0.0, spec.length);
      const double s = radius_profile_slope(spec, x2);
      const double d = radius_profile(spec, x2) * std::sqrt(1.0 + s * s);
      if (wall_rng.uniform() * density_max <= d) break;
    }
    const double rho = radius_profile(spec, x2);
    const double phi = kTwoPi * wall_rng.uniform();
    cloud.wall.append_velocity(
        {rho * std::cos(phi), x2, rho * std::sin(phi)}, {0.0, 0.0, 0.0});
  }

  double rho_max = spec.radius;
  if (spec.kind == DomainKind::kAaaIdealized)
    rho_max = spec.bulge.max_radius_ratio * spec.radius;
  cloud.volume.reserve(counts.volume);
  for (std::size_t i = 0; i < counts.volume; ++i) {
    for (;;) {
      const double x1 = volume_rng.uniform(-rho_max, rho_max);
      const double x2 = volume_rng.uniform(0.0, spec.length);
      const double x3 = volume_rng.uniform(-rho_max, rho_max);
      const double rho = radius_profile(spec, x2);
      if (x1 * x1 + x3 * x3 < rho * rho && x2 > 0.0 && x2 < spec.length) {
        cloud.volume.append_unlabeled({x1, x2, x3});
        break;
      }
    }
  }
  return cloud;
}

void apply_oracle_labels(StratifiedPointCloud& cloud,
                         const physics::PoiseuilleFlow& oracle) {
  for (std::size_t i = 0; i < cloud.outlet.size(); ++i) {
    cloud.outlet.velocity[i] = oracle.velocity(cloud.outlet.points[i]);
    cloud.outlet.has_velocity[i] = 1;
  }
  for (std::size_t i = 0; i < cloud.data.size(); ++i) {
    cloud.data.velocity[i] = oracle.velocity(cloud.data.points[i]);
    cloud.data.pressure[i] = oracle.pressure(cloud.data.points[i]);
    cloud.data.has_velocity[i] = 1;
    cloud.data.has_pressure[i] = 1;
  }
}

void extract_data_scenario(StratifiedPointCloud& cloud, const DomainSpec& spec,
                           const DataScenario& scenario,
                           const physics::PoiseuilleFlow& oracle,
                           std::uint64_t seed) {
  if (scenario.kind == DataScenario::Kind::kNone) return;
  if (cloud.volume.size() == 0)
    throw ConfigError("data scenario: volume stratum is empty");

  std::vector<std::size_t> selected;
  const PointSet& vol = cloud.volume;
  switch (scenario.kind) {
    case DataScenario::Kind::kCrossSection: {
      const double tol = scenario.tolerance > 0.0 ? scenario.tolerance
                                                  : 0.01 * spec.length;
      const int n = scenario.slices;
      for (std::size_t i = 0; i < vol.size(); ++i) {
        for (int s = 1; s <= n; ++s) {
          const double station = spec.length * s / (n + 1);
          if (std::abs(vol.points[i][1] - station) <= tol) {
            selected.push_back(i);
            break;
          }
        }
      }
      break;
    }
    case DataScenario::Kind::kLongitudinal: {
      const double tol =
          scenario.tolerance > 0.0 ? scenario.tolerance : 0.05 * spec.radius;
      const int n = scenario.slices;
      for (std::size_t i = 0; i < vol.size(); ++i) {
        for (int s = 0; s < n; ++s) {
          const double phi = std::numbers::pi * s / n;
          // Distance to the plane through the x2 axis at azimuth phi.
          const double dist = std::abs(vol.points[i][0] * std::sin(phi) -
                                       vol.points[i][2] * std::cos(phi));
          if (dist <= tol) {
            selected.push_back(i);
            break;
          }
        }
      }
      break;
    }
    case DataScenario::Kind::kRandom: {
      if (scenario.fraction < 0.0 || scenario.fraction > 1.0)
        throw ConfigError("data scenario: fraction must lie in [0,1]");
      const std::size_t take = static_cast<std::size_t>(
          std::llround(scenario.fraction * static_cast<double>(vol.size())));
      std::vector<std::size_t> idx(vol.size());
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
      Rng rng(seed);
      for (std::size_t k = 0; k < take; ++k) {
        const std::size_t j = k + rng.below(idx.size() - k);
        std::swap(idx[k], idx[j]);
        selected.push_back(idx[k]);
      }
      break;
    }
    case DataScenario::Kind::kNone:
      break;
  }

  if (selected.empty())
    throw ConfigError("data scenario: selection is empty (degenerate scenario)");

  cloud.data = PointSet{};
  cloud.data.reserve(selected.size());
  for (std::size_t i : selected) {
    const Vec3& x = vol.points[i];
    cloud.data.append_full(x, oracle.velocity(x), oracle.pressure(x));
  }
}

SplitClouds split(const StratifiedPointCloud& cloud, const SplitFractions& f,
                  std::uint64_t seed) {
  const double sum = f.train + f.val + f.test;
  if (std::abs(sum - 1.0) > 1e-12)
    throw ConfigError("split: fractions must sum to 1");
  for (double v : {f.train, f.val, f.test}) {
    if (v < 0.0 || v > 1.0) throw ConfigError("split: fraction out of [0,1]");
  }

  SplitClouds out;
  out.train.v_tag = out.val.v_tag = out.test.v_tag = cloud.v_tag;
  Rng root(seed);

  for (int s = 0; s < kStratumCount; ++s) {
    const auto kind = static_cast<StratumKind>(s);
    const PointSet& src = cloud.stratum(kind);
    const std::size_t n = src.size();
    if (n == 0) continue;

    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    Rng rng = root.fork(static_cast<std::uint64_t>(s) + 1);
    for (std::size_t i = n; i > 1; --i) {
      const std::size_t j = rng.below(i);
      std::swap(idx[i - 1], idx[j]);
    }

    // Largest-remainder rounding keeps each part within one point of its
    // ideal share.
    const double ideal[3] = {f.train * n, f.val * n, f.test * n};
    std::size_t take[3];
    double frac[3];
    std::size_t assigned = 0;
    for (int k = 0; k < 3; ++k) {
      take[k] = static_cast<std::size_t>(ideal[k]);
      frac[k] = ideal[k] - static_cast<double>(take[k]);
      assigned += take[k];
    }
    while (assigned < n) {
      int best = 0;
      for (int k = 1; k < 3; ++k)
        if (frac[k] > frac[best]) best = k;
      ++take[best];
      frac[best] = -1.0;
      ++assigned;
    }

    PointSet* dst[3] = {&out.train.stratum(kind), &out.val.stratum(kind),
                        &out.test.stratum(kind)};
    std::size_t pos = 0;
    for (int k = 0; k < 3; ++k) {
      dst[k]->reserve(take[k]);
      for (std::size_t c = 0; c < take[k]; ++c, ++pos) {
        const std::size_t i = idx[pos];
        dst[k]->append_row(src.points[i],
                           src.has_velocity[i]
                               ? std::optional<Vec3>(src.velocity[i])
                               : std::nullopt,
                           src.has_pressure[i]
                               ? std::optional<double>(src.pressure[i])
                               : std::nullopt);
      }
    }
  }
  return out;
}

void inject_noise(StratifiedPointCloud& cloud, double noise_level,
                  double max_velocity, std::uint64_t seed) {
  if (cloud.data.size() == 0)
    throw UsageError("inject_noise: data stratum has no points");
  for (std::size_t i = 0; i < cloud.data.size(); ++i)
    if (!cloud.data.has_velocity[i])
      throw UsageError("inject_noise: data stratum lacks velocity labels");
  if (noise_level < 0.0 || noise_level > 0.25)
    std::cerr << "warning: noise level " << noise_level
              << " outside the studied [0, 0.25] range\n";
  const double sigma = noise_level * max_velocity;
  if (sigma == 0.0) return;
  Rng rng(seed);
  for (std::size_t i = 0; i < cloud.data.size(); ++i)
    for (int c = 0; c < 3; ++c)
      cloud.data.velocity[i][c] += rng.normal(0.0, sigma);
}

// --- CSV --------------------------------------------------------------------

namespace {

void write_double(std::ostream& out, double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out << buf;
}

std::optional<double> parse_cell(const std::string& cell,
                                 const std::string& origin, std::size_t line) {
  if (cell.empty()) return std::nullopt;
  char* end = nullptr;
  const double v = std::strtod(cell.c_str(), &end);
  if (end == cell.c_str() || *end != '\0')
    throw ValidationError(origin + ":" + std::to_string(line) +
                          ": malformed numeric cell '" + cell + "'");
  return v;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  cells.push_back(cur);
  return cells;
}

}  // namespace

StratifiedPointCloud ingest_point_cloud(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("ingest: cannot open '" + path + "'");
  return ingest_point_cloud(in, path);
}

StratifiedPointCloud ingest_point_cloud(std::istream& in,
                                        const std::string& origin) {
  StratifiedPointCloud cloud;
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line))
    throw ValidationError(origin + ": empty file");
  ++lineno;
  {
    auto cells = split_csv_line(line);
    const std::vector<std::string> expected = {"x1", "x2", "x3", "v1",
                                               "v2", "v3", "p",  "stratum"};
    if (cells.size() != expected.size() ||
        !std::equal(cells.begin(), cells.end(), expected.begin()))
      throw ValidationError(origin + ":1: unexpected header");
  }
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != 8)
      throw ValidationError(origin + ":" + std::to_string(lineno) +
                            ": expected 8 columns, got " +
                            std::to_string(cells.size()));
    Vec3 x;
    for (int i = 0; i < 3; ++i) {
      auto v = parse_cell(cells[i], origin, lineno);
      if (!v)
        throw ValidationError(origin + ":" + std::to_string(lineno) +
                              ": coordinates cannot be missing");
      x[i] = *v;
    }
    std::optional<double> vc[3];
    for (int i = 0; i < 3; ++i) vc[i] = parse_cell(cells[3 + i], origin, lineno);
    const int have = (vc[0] ? 1 : 0) + (vc[1] ? 1 : 0) + (vc[2] ? 1 : 0);
    if (have != 0 && have != 3)
      throw ValidationError(origin + ":" + std::to_string(lineno) +
                            ": velocity components must be all present or all "
                            "missing");
    std::optional<Vec3> v;
    if (have == 3) v = Vec3{*vc[0], *vc[1], *vc[2]};
    const std::optional<double> p = parse_cell(cells[6], origin, lineno);
    const auto stratum = stratum_from_name(cells[7]);
    if (!stratum)
      throw ValidationError(origin + ":" + std::to_string(lineno) +
                            ": unknown stratum '" + cells[7] + "'");
    cloud.stratum(*stratum).append_row(x, v, p);
  }

  auto violations = validate_cloud(cloud, nullptr);
  if (!violations.empty()) {
    std::string report = origin + ": validation failed";
    for (const auto& v : violations) report += "\n  - " + v;
    throw ValidationError(report);
  }
  return cloud;
}

void export_point_cloud(const StratifiedPointCloud& cloud,
                        const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("export: cannot open '" + path + "'");
  export_point_cloud(cloud, out);
}

void export_point_cloud(const StratifiedPointCloud& cloud, std::ostream& out) {
  out << "x1,x2,x3,v1,v2,v3,p,stratum\n";
  for (int s = 0; s < kStratumCount; ++s) {
    const auto kind = static_cast<StratumKind>(s);
    const PointSet& set = cloud.stratum(kind);
    for (std::size_t i = 0; i < set.size(); ++i) {
      write_double(out, set.points[i][0]);
      out << ',';
      write_double(out, set.points[i][1]);
      out << ',';
      write_double(out, set.points[i][2]);
      for (int c = 0; c < 3; ++c) {
        out << ',';
        if (set.has_velocity[i]) write_double(out, set.velocity[i][c]);
      }
      out << ',';
      if (set.has_pressure[i]) write_double(out, set.pressure[i]);
      out << ',' << stratum_name(kind) << '\n';
    }
  }
}

std::vector<std::string> validate_cloud(const StratifiedPointCloud& cloud,
                                        const DomainSpec* spec) {
  std::vector<std::string> issues;
  for (std::size_t i = 0; i < cloud.wall.size(); ++i) {
    if (!cloud.wall.has_velocity[i]) {
      issues.push_back("wall point " + std::to_string(i) +
                       " lacks the zero-velocity label");
      continue;
    }
    const Vec3& v = cloud.wall.velocity[i];
    if (v[0] != 0.0 || v[1] != 0.0 || v[2] != 0.0)
      issues.push_back("wall point " + std::to_string(i) +
                       " has non-zero velocity (no-slip violated)");
  }
  for (std::size_t i = 0; i < cloud.inlet.size(); ++i) {
    if (cloud.inlet.has_pressure[i])
      issues.push_back("inlet point " + std::to_string(i) +
                       " carries a pressure label");
  }
  for (std::size_t i = 0; i < cloud.outlet.size(); ++i) {
    if (cloud.outlet.has_pressure[i])
      issues.push_back("outlet point " + std::to_string(i) +
                       " carries a pressure label");
  }
  for (std::size_t i = 0; i < cloud.volume.size(); ++i) {
    if (cloud.volume.has_velocity[i] || cloud.volume.has_pressure[i])
      issues.push_back("volume point " + std::to_string(i) +
                       " carries labels");
  }
  for (std::size_t i = 0; i < cloud.data.size(); ++i) {
    if (!cloud.data.has_velocity[i] || !cloud.data.has_pressure[i])
      issues.push_back("data point " + std::to_string(i) +
                       " lacks full labels");
  }
  if (spec) {
    spec->validate();
    const double tol = 1e-9 * spec->radius;
    for (std::size_t i = 0; i < cloud.inlet.size(); ++i) {
      const Vec3& x = cloud.inlet.points[i];
      if (std::abs(x[1]) > tol ||
          std::hypot(x[0], x[2]) > spec->radius + tol)
        issues.push_back("inlet point " + std::to_string(i) +
                         " violates the inlet predicate");
    }
    for (std::size_t i = 0; i < cloud.outlet.size(); ++i) {
      const Vec3& x = cloud.outlet.points[i];
      if (std::abs(x[1] - spec->length) > tol ||
          std::hypot(x[0], x[2]) >
              radius_profile(*spec, spec->length) + tol)
        issues.push_back("outlet point " + std::to_string(i) +
                         " violates the outlet predicate");
    }
    for (std::size_t i = 0; i < cloud.wall.size(); ++i) {
      const Vec3& x = cloud.wall.points[i];
      const double rho = radius_profile(*spec, x[1]);
      if (std::abs(std::hypot(x[0], x[2]) - rho) > 1e-9)
        issues.push_back("wall point " + std::to_string(i) +
                         " is off the wall surface");
    }
    for (std::size_t i = 0; i < cloud.volume.size(); ++i) {
      const Vec3& x = cloud.volume.points[i];
      if (x[1] <= 0.0 || x[1] >= spec->length ||
          std::hypot(x[0], x[2]) >= radius_profile(*spec, x[1]))
        issues.push_back("volume point " + std::to_string(i) +
                         " is not strictly interior");
    }
  }
  return issues;
}

}  // namespace hemoflow::geom
