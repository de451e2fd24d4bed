#include <algorithm>
#include <cmath>
#include <doctest.h>
#include <sstream>

#include "hemoflow/geometry.hpp"

using namespace hemoflow;
using geom::DataScenario;
using geom::DomainKind;
using geom::DomainSpec;
using geom::StratifiedPointCloud;
using geom::StratumCounts;
using physics::PoiseuilleFlow;

namespace {

DomainSpec pipe_spec() {
  DomainSpec spec;
  spec.kind = DomainKind::kStraightPipe;
  spec.radius = 0.010065;
  spec.length = 0.26009;
  return spec;
}

DomainSpec aaa_spec() {
  DomainSpec spec = pipe_spec();
  spec.kind = DomainKind::kAaaIdealized;
  spec.bulge.center_fraction = 0.5;
  spec.bulge.max_radius_ratio = 2.0;
  spec.bulge.shape_width = 0.0;  // default length/10
  return spec;
}

PoiseuilleFlow pipe_oracle(double v) {
  physics::FluidParams fluid;
  fluid.v_max = v;
  fluid.radius = 0.010065;
  fluid.length = 0.26009;
  return {fluid, 0.0};
}

}  // namespace

TEST_CASE("radius profile") {
  SUBCASE("straight pipe is constant") {
    const DomainSpec spec = pipe_spec();
    for (double f : {0.0, 0.25, 0.8, 1.0})
      CHECK(geom::radius_profile(spec, f * spec.length) == spec.radius);
  }
  SUBCASE("bulge peak and rebased ends") {
    const DomainSpec spec = aaa_spec();
    CHECK(geom::radius_profile(spec, 0.5 * spec.length) ==
          doctest::Approx(2.0 * spec.radius).epsilon(1e-14));
    CHECK(geom::radius_profile(spec, 0.0) == spec.radius);
    CHECK(geom::radius_profile(spec, spec.length) ==
          doctest::Approx(spec.radius).epsilon(1e-12));
    // Raw Gaussian tail at the ends is exp(-12.5) ~ 3.7e-6; the rebased
    // profile removes it entirely.
    CHECK(std::abs(geom::radius_profile(spec, 0.0) - spec.radius) <=
          1e-6 * spec.radius);
  }
  SUBCASE("profile never dips below the inlet radius") {
    const DomainSpec spec = aaa_spec();
    for (int i = 0; i <= 200; ++i) {
      const double x2 = spec.length * i / 200;
      CHECK(geom::radius_profile(spec, x2) >= spec.radius - 1e-15);
    }
  }
  SUBCASE("out of range raises") {
    CHECK_THROWS_AS(geom::radius_profile(pipe_spec(), -0.01), UsageError);
  }
}

TEST_CASE("sample_domain satisfies the stratum predicates") {
  const DomainSpec spec = pipe_spec();
  StratumCounts counts;
  counts.inlet = 200;
  counts.wall = 200;
  counts.outlet = 200;
  counts.volume = 1000;
  const auto cloud = geom::sample_domain(spec, counts, 0.1, 42);

  CHECK(cloud.inlet.size() == 200);
  CHECK(cloud.volume.size() == 1000);
  CHECK(cloud.v_tag == 0.1);

  for (const Vec3& x : cloud.volume.points) {
    CHECK(x[1] > 0.0);
    CHECK(x[1] < spec.length);
    CHECK(std::hypot(x[0], x[2]) < spec.radius);
  }
  for (const Vec3& x : cloud.inlet.points) {
    CHECK(x[1] == 0.0);
    CHECK(std::hypot(x[0], x[2]) <= spec.radius);
  }
  for (const Vec3& x : cloud.wall.points)
    CHECK(std::abs(std::hypot(x[0], x[2]) - spec.radius) <= 1e-9);

  SUBCASE("inlet labels match the parabolic profile") {
    for (std::size_t i = 0; i < cloud.inlet.size(); ++i) {
      const Vec3 expect =
          physics::parabolic_inlet(cloud.inlet.points[i], 0.1, spec.radius);
      for (int c = 0; c < 3; ++c)
        CHECK(std::abs(cloud.inlet.velocity[i][c] - expect[c]) <= 1e-12);
    }
  }
  SUBCASE("wall labels are exact zeros") {
    for (std::size_t i = 0; i < cloud.wall.size(); ++i)
      for (int c = 0; c < 3; ++c)
        CHECK(cloud.wall.velocity[i][c] == 0.0);
  }
  SUBCASE("validation passes") {
    CHECK(geom::validate_cloud(cloud, &spec).empty());
  }
}

TEST_CASE("sampling is deterministic under the seed") {
  const DomainSpec spec = aaa_spec();
  StratumCounts counts;
  counts.inlet = counts.wall = counts.outlet = 50;
  counts.volume = 300;
  const auto a = geom::sample_domain(spec, counts, 0.08, 7);
  const auto b = geom::sample_domain(spec, counts, 0.08, 7);
  CHECK(a.volume.points == b.volume.points);
  CHECK(a.wall.points == b.wall.points);
  const auto c = geom::sample_domain(spec, counts, 0.08, 8);
  CHECK(a.volume.points != c.volume.points);
}

TEST_CASE("aaa sampling reaches the bulge and stays on the surface") {
  const DomainSpec spec = aaa_spec();
  StratumCounts counts;
  counts.wall = 3000;
  counts.volume = 2000;
  counts.inlet = counts.outlet = 10;
  const auto cloud = geom::sample_domain(spec, counts, 0.1, 3);
  double max_wall_r = 0.0;
  for (const Vec3& x : cloud.wall.points) {
    const double r = std::hypot(x[0], x[2]);
    CHECK(std::abs(r - geom::radius_profile(spec, x[1])) <= 1e-9);
    max_wall_r = std::max(max_wall_r, r);
  }
  CHECK(max_wall_r >= 1.95 * spec.radius);
  CHECK(max_wall_r <= 2.0 * spec.radius + 1e-12);
  for (const Vec3& x : cloud.volume.points)
    CHECK(std::hypot(x[0], x[2]) < geom::radius_profile(spec, x[1]));
}

TEST_CASE("volume rejection acceptance stays near the disc fraction") {
  // The straight-pipe bounding box accepts with probability pi/4; the
  // empirical interior fraction must not fall below 0.9 of it.
  const DomainSpec spec = pipe_spec();
  Rng rng(99);
  int inside = 0;
  const int draws = 20000;
  for (int i = 0; i < draws; ++i) {
    const double x1 = rng.uniform(-spec.radius, spec.radius);
    const double x3 = rng.uniform(-spec.radius, spec.radius);
    if (x1 * x1 + x3 * x3 < spec.radius * spec.radius) ++inside;
  }
  const double rate = static_cast<double>(inside) / draws;
  CHECK(rate >= 0.9 * 3.14159265358979323846 / 4.0);
}

TEST_CASE("data scenarios") {
  const DomainSpec spec = pipe_spec();
  StratumCounts counts;
  counts.inlet = counts.wall = counts.outlet = 20;
  counts.volume = 10000;
  auto cloud = geom::sample_domain(spec, counts, 0.1, 11);
  const PoiseuilleFlow oracle = pipe_oracle(0.1);

  SUBCASE("random fraction takes the rounded share with full labels") {
    DataScenario sc;
    sc.kind = DataScenario::Kind::kRandom;
    sc.fraction = 0.003;
    geom::extract_data_scenario(cloud, spec, sc, oracle, 5);
    CHECK(cloud.data.size() == 30);
    for (std::size_t i = 0; i < cloud.data.size(); ++i) {
      CHECK(cloud.data.has_velocity[i]);
      CHECK(cloud.data.has_pressure[i]);
      const Vec3 expect = oracle.velocity(cloud.data.points[i]);
      for (int c = 0; c < 3; ++c)
        CHECK(cloud.data.velocity[i][c] == expect[c]);
      CHECK(cloud.data.pressure[i] == oracle.pressure(cloud.data.points[i]));
    }
  }
  SUBCASE("fraction 1 selects the entire volume stratum") {
    DataScenario sc;
    sc.kind = DataScenario::Kind::kRandom;
    sc.fraction = 1.0;
    geom::extract_data_scenario(cloud, spec, sc, oracle, 5);
    CHECK(cloud.data.size() == cloud.volume.size());
  }
  SUBCASE("cross-section slices cluster around the stations") {
    DataScenario sc;
    sc.kind = DataScenario::Kind::kCrossSection;
    sc.slices = 5;
    geom::extract_data_scenario(cloud, spec, sc, oracle, 5);
    REQUIRE(cloud.data.size() > 0);
    const double tol = 0.01 * spec.length;
    std::vector<bool> hit(5, false);
    for (const Vec3& x : cloud.data.points) {
      bool near_any = false;
      for (int s = 1; s <= 5; ++s) {
        const double station = spec.length * s / 6;
        if (std::abs(x[1] - station) <= tol) {
          near_any = true;
          hit[s - 1] = true;
        }
      }
      CHECK(near_any);
    }
    for (bool h : hit) CHECK(h);  // five distinct clusters
  }
  SUBCASE("longitudinal slab hugs the x3 = 0 plane") {
    DataScenario sc;
    sc.kind = DataScenario::Kind::kLongitudinal;
    sc.slices = 1;
    geom::extract_data_scenario(cloud, spec, sc, oracle, 5);
    REQUIRE(cloud.data.size() > 0);
    for (const Vec3& x : cloud.data.points)
      CHECK(std::abs(x[2]) <= 0.05 * spec.radius);
  }
  SUBCASE("degenerate selection raises") {
    DataScenario sc;
    sc.kind = DataScenario::Kind::kCrossSection;
    sc.slices = 1;
    sc.tolerance = 1e-12;
    CHECK_THROWS_AS(
        geom::extract_data_scenario(cloud, spec, sc, oracle, 5), ConfigError);
  }
}

TEST_CASE("stratified split") {
  const DomainSpec spec = pipe_spec();
  StratumCounts counts;
  counts.inlet = 500;
  counts.wall = 777;
  counts.outlet = 100;
  counts.volume = 10000;
  const auto cloud = geom::sample_domain(spec, counts, 0.1, 23);

  SUBCASE("68/2/30 stays within one point of the ideal share") {
    const auto parts = geom::split(cloud, {0.68, 0.02, 0.30}, 4);
    CHECK(std::abs(static_cast<double>(parts.train.volume.size()) -
                   0.68 * 10000) <= 1.0);
    CHECK(std::abs(static_cast<double>(parts.val.volume.size()) -
                   0.02 * 10000) <= 1.0);
    CHECK(std::abs(static_cast<double>(parts.test.volume.size()) -
                   0.30 * 10000) <= 1.0);
    CHECK(parts.train.volume.size() + parts.val.volume.size() +
              parts.test.volume.size() ==
          10000);
  }
  SUBCASE("degenerate fractions return the original as train") {
    const auto parts = geom::split(cloud, {1.0, 0.0, 0.0}, 4);
    CHECK(parts.train.total_points() == cloud.total_points());
    CHECK(parts.val.total_points() == 0);
    CHECK(parts.test.total_points() == 0);
  }
  SUBCASE("the split partitions every stratum") {
    const auto parts = geom::split(cloud, {0.68, 0.02, 0.30}, 4);
    auto key = [](const Vec3& x) {
      return std::tuple<double, double, double>(x[0], x[1], x[2]);
    };
    std::vector<std::tuple<double, double, double>> orig, rebuilt;
    for (const Vec3& x : cloud.wall.points) orig.push_back(key(x));
    for (const auto* part : {&parts.train, &parts.val, &parts.test})
      for (const Vec3& x : part->wall.points) rebuilt.push_back(key(x));
    std::sort(orig.begin(), orig.end());
    std::sort(rebuilt.begin(), rebuilt.end());
    CHECK(orig == rebuilt);
    // Disjointness: counts add up and the union matches, so any overlap
    // would force a missing point elsewhere.
  }
  SUBCASE("bad fractions raise") {
    CHECK_THROWS_AS(geom::split(cloud, {0.5, 0.2, 0.2}, 4), ConfigError);
  }
}

TEST_CASE("noise injection") {
  const DomainSpec spec = pipe_spec();
  StratumCounts counts;
  counts.inlet = counts.wall = counts.outlet = 50;
  counts.volume = 30000;
  auto cloud = geom::sample_domain(spec, counts, 0.1, 31);
  DataScenario sc;
  sc.kind = DataScenario::Kind::kRandom;
  sc.fraction = 0.5;
  geom::extract_data_scenario(cloud, spec, sc, pipe_oracle(0.1), 6);
  REQUIRE(cloud.data.size() == 15000);

  SUBCASE("zero level leaves labels identical") {
    auto noisy = cloud;
    geom::inject_noise(noisy, 0.0, 0.1, 9);
    CHECK(noisy.data.velocity == cloud.data.velocity);
  }
  SUBCASE("sample std approaches the configured sigma") {
    auto noisy = cloud;
    geom::inject_noise(noisy, 0.1, 0.1, 9);
    const double sigma = 0.01;
    for (int c = 0; c < 3; ++c) {
      double mean = 0.0, var = 0.0;
      const std::size_t n = noisy.data.size();
      for (std::size_t i = 0; i < n; ++i)
        mean += noisy.data.velocity[i][c] - cloud.data.velocity[i][c];
      mean /= static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double d =
            noisy.data.velocity[i][c] - cloud.data.velocity[i][c] - mean;
        var += d * d;
      }
      var /= static_cast<double>(n - 1);
      CHECK(std::abs(std::sqrt(var) - sigma) <= 0.05 * sigma);
      // Mean-preserving within two sigma of the mean estimator.
      CHECK(std::abs(mean) <= 2.0 * sigma / std::sqrt(static_cast<double>(n)));
    }
  }
  SUBCASE("boundary strata and pressures are untouched") {
    auto noisy = cloud;
    geom::inject_noise(noisy, 0.15, 0.1, 9);
    CHECK(noisy.wall.velocity == cloud.wall.velocity);
    CHECK(noisy.inlet.velocity == cloud.inlet.velocity);
    CHECK(noisy.data.pressure == cloud.data.pressure);
  }
}

TEST_CASE("point cloud csv ingest and export") {
  SUBCASE("three labeled rows round-trip") {
    const std::string csv =
        "x1,x2,x3,v1,v2,v3,p,stratum\n"
        "0,0,0,0,0.1,0,,inlet\n"
        "0.010065,0.13,0,0,0,0,,wall\n"
        "0.001,0.26009,0.002,0.001,0.09,0,,outlet\n";
    std::istringstream in(csv);
    const auto cloud = geom::ingest_point_cloud(in, "test.csv");
    CHECK(cloud.inlet.size() == 1);
    CHECK(cloud.wall.size() == 1);
    CHECK(cloud.outlet.size() == 1);
    CHECK(cloud.inlet.velocity[0][1] == 0.1);
    CHECK_FALSE(cloud.inlet.has_pressure[0]);

    std::ostringstream out;
    geom::export_point_cloud(cloud, out);
    std::istringstream in2(out.str());
    const auto again = geom::ingest_point_cloud(in2, "roundtrip.csv");
    CHECK(again.inlet.points == cloud.inlet.points);
    CHECK(again.inlet.velocity == cloud.inlet.velocity);
    CHECK(again.wall.points == cloud.wall.points);
    CHECK(again.outlet.points == cloud.outlet.points);
  }
  SUBCASE("non-zero wall velocity fails validation") {
    const std::string csv =
        "x1,x2,x3,v1,v2,v3,p,stratum\n"
        "0.010065,0.13,0,0.1,0,0,,wall\n";
    std::istringstream in(csv);
    CHECK_THROWS_AS(geom::ingest_point_cloud(in, "bad.csv"), ValidationError);
  }
  SUBCASE("malformed rows report the line number") {
    const std::string csv =
        "x1,x2,x3,v1,v2,v3,p,stratum\n"
        "0,0,0,0,0.1,0,,inlet\n"
        "0,zzz,0,0,0.1,0,,inlet\n";
    std::istringstream in(csv);
    try {
      geom::ingest_point_cloud(in, "bad.csv");
      FAIL("expected a validation error");
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find("bad.csv:3") != std::string::npos);
    }
  }
  SUBCASE("partial velocity rows are rejected") {
    const std::string csv =
        "x1,x2,x3,v1,v2,v3,p,stratum\n"
        "0,0,0,0.1,,0,,inlet\n";
    std::istringstream in(csv);
    CHECK_THROWS_AS(geom::ingest_point_cloud(in, "bad.csv"), ValidationError);
  }
  SUBCASE("full export of a generated cloud round-trips exactly") {
    const DomainSpec spec = pipe_spec();
    StratumCounts counts;
    counts.inlet = counts.wall = counts.outlet = 25;
    counts.volume = 100;
    auto cloud = geom::sample_domain(spec, counts, 0.1, 77);
    geom::apply_oracle_labels(cloud, pipe_oracle(0.1));
    DataScenario sc;
    sc.kind = DataScenario::Kind::kRandom;
    sc.fraction = 0.2;
    geom::extract_data_scenario(cloud, spec, sc, pipe_oracle(0.1), 6);

    std::ostringstream out;
    geom::export_point_cloud(cloud, out);
    std::istringstream in(out.str());
    const auto again = geom::ingest_point_cloud(in, "roundtrip.csv");
    for (int s = 0; s < geom::kStratumCount; ++s) {
      const auto kind = static_cast<geom::StratumKind>(s);
      CHECK(again.stratum(kind).points == cloud.stratum(kind).points);
      CHECK(again.stratum(kind).velocity == cloud.stratum(kind).velocity);
      CHECK(again.stratum(kind).pressure == cloud.stratum(kind).pressure);
    }
  }
}
