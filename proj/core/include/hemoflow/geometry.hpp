#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "hemoflow/common.hpp"
#include "hemoflow/physics.hpp"

namespace hemoflow::geom {

enum class DomainKind { kStraightPipe, kAaaIdealized };

struct BulgeSpec {
  double center_fraction = 0.5;   // bulge center as a fraction of length
  double max_radius_ratio = 2.0;  // peak radius / inlet radius
  double shape_width = 0.0;       // Gaussian width, m; 0 -> length / 10
};

// Axisymmetric domain around the x2 axis; inlet disc centered at the origin.
struct DomainSpec {
  DomainKind kind = DomainKind::kStraightPipe;
  double radius = 0.010065;  // inlet radius, m
  double length = 0.26009;   // m
  BulgeSpec bulge;           // aaa only

  void validate() const;
  double bulge_width() const {
    return bulge.shape_width > 0.0 ? bulge.shape_width : length / 10.0;
  }
};

// Wall radius at axial position x2. The AAA profile is a Gaussian bulge
// rebased so the ends sit exactly at the inlet radius:
//   rho(x2) = R + (ratio-1) R (exp(-(x2-c)^2/(2 w^2)) - tail) / (1 - tail)
// with tail the raw Gaussian value at x2 = 0.
double radius_profile(const DomainSpec& spec, double x2);
// d rho / d x2, used by the wall-area sampler.
double radius_profile_slope(const DomainSpec& spec, double x2);

enum class StratumKind : std::uint8_t {
  kInlet,
  kWall,
  kOutlet,
  kVolume,
  kData
};
inline constexpr int kStratumCount = 5;
const char* stratum_name(StratumKind s);
std::optional<StratumKind> stratum_from_name(const std::string& s);

// Columnar point set with per-point label presence. Velocity labels are
// all-or-none per point; pressure is tracked separately.
struct PointSet {
  std::vector<Vec3> points;
  std::vector<Vec3> velocity;
  std::vector<double> pressure;
  std::vector<std::uint8_t> has_velocity;
  std::vector<std::uint8_t> has_pressure;

  std::size_t size() const { return points.size(); }
  void append_unlabeled(const Vec3& x);
  void append_velocity(const Vec3& x, const Vec3& v);
  void append_full(const Vec3& x, const Vec3& v, double p);
  void append_row(const Vec3& x, const std::optional<Vec3>& v,
                  std::optional<double> p);
  void reserve(std::size_t n);
};

struct StratifiedPointCloud {
  PointSet inlet, wall, outlet, volume, data;
  double v_tag = 0.0;  // maximum inlet velocity this cloud corresponds to

  PointSet& stratum(StratumKind s);
  const PointSet& stratum(StratumKind s) const;
  std::size_t total_points() const;
};

struct StratumCounts {
  std::size_t inlet = 0, wall = 0, outlet = 0, volume = 0;
};

// Uniform stratified sampling: discs by polar area-uniform draws, the wall
// by area-weighted sampling of the revolved profile, the volume by
// rejection inside r < rho(x2). Inlet points carry the parabolic velocity
// (pressure missing), wall points carry exact zeros, the volume carries no
// labels. Deterministic under the seed.
StratifiedPointCloud sample_domain(const DomainSpec& spec,
                                   const StratumCounts& counts, double v_max,
                                   std::uint64_t seed);

// Fills labels from the analytic pipe solution: outlet velocities, and full
// labels on the data stratum if present. Straight-pipe domains only.
void apply_oracle_labels(StratifiedPointCloud& cloud,
                         const physics::PoiseuilleFlow& oracle);

struct DataScenario {
  enum class Kind { kNone, kCrossSection, kLongitudinal, kRandom };
  Kind kind = Kind::kNone;
  int slices = 5;         // cross-section / longitudinal
  double fraction = 0.003;  // random
  double tolerance = 0.0;   // 0 -> default (1% length or 5% radius)
};

// Selects the data stratum out of the volume stratum; labels come from the
// oracle. Throws ConfigError when the selection is empty.
void extract_data_scenario(StratifiedPointCloud& cloud, const DomainSpec& spec,
                           const DataScenario& scenario,
                           const physics::PoiseuilleFlow& oracle,
                           std::uint64_t seed);

struct SplitFractions {
  double train = 0.68, val = 0.02, test = 0.30;
};

struct SplitClouds {
  StratifiedPointCloud train, val, test;
};

// Per-stratum proportional random partition (largest-remainder rounding).
SplitClouds split(const StratifiedPointCloud& cloud, const SplitFractions& f,
                  std::uint64_t seed);

// Adds N(0, (level * max_velocity)^2) to each velocity component of the
// data stratum only. Levels outside the studied [0, 0.25] range warn.
void inject_noise(StratifiedPointCloud& cloud, double noise_level,
                  double max_velocity, std::uint64_t seed);

// Point-cloud CSV: header x1,x2,x3,v1,v2,v3,p,stratum; empty cell = missing.
StratifiedPointCloud ingest_point_cloud(const std::string& path);
StratifiedPointCloud ingest_point_cloud(std::istream& in,
                                        const std::string& origin);
void export_point_cloud(const StratifiedPointCloud& cloud,
                        const std::string& path);
void export_point_cloud(const StratifiedPointCloud& cloud, std::ostream& out);

// Invariant checks (stratum predicates, no-slip labels, label availability).
// Returns a list of violations; empty means valid.
std::vector<std::string> validate_cloud(const StratifiedPointCloud& cloud,
                                        const DomainSpec* spec);

}  // namespace hemoflow::geom
