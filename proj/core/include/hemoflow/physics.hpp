#pragma once

#include <array>
#include <functional>
#include <span>
#include <vector>

#include "hemoflow/autodiff.hpp"
#include "hemoflow/common.hpp"

namespace hemoflow::physics {

// Fluid constants and inflow scales of one specimen.
struct FluidParams {
  double rho = 1060.0;      // density, kg/m^3
  double mu = 0.00399;      // dynamic viscosity, kg/(m s)
  double v_max = 0.1;       // maximum inlet velocity, m/s
  double radius = 0.010065; // inlet radius, m
  double length = 0.26009;  // specimen length, m

  void validate() const;
  double diameter() const { return 2.0 * radius; }
};

// Re = rho * D * V / mu with D the inlet diameter.
double reynolds(const FluidParams& p);

enum class Frame { kDimensional, kDimensionless };

struct FlowField {
  std::vector<Vec3> points;
  std::vector<Vec3> velocity;
  std::vector<double> pressure;
  Frame frame = Frame::kDimensional;

  std::size_t size() const { return points.size(); }
  void validate() const;
};

// (0, V (1 - r^2/R^2), 0) on the inlet plane; r is the distance to the inlet
// center (the origin). Throws UsageError for points outside the disc.
Vec3 parabolic_inlet(const Vec3& x, double v_max, double radius);

// Scale maps of the dimensionless form: x* = x/D, v* = v/V, p* = p/(rho V^2).
Vec3 nondimensionalize_point(const Vec3& x, const FluidParams& p);
Vec3 redimensionalize_point(const Vec3& x, const FluidParams& p);
FlowField nondimensionalize(const FlowField& f, const FluidParams& p);
FlowField redimensionalize(const FlowField& f, const FluidParams& p);

// Fully developed laminar pipe flow: the analytic stand-in for CFD ground
// truth on the straight-pipe domain.
struct PoiseuilleFlow {
  FluidParams fluid;
  double p_outlet = 0.0;  // outlet gauge pressure

  // Dimensional evaluation; x2 along the axis, inlet at x2 = 0.
  Vec3 velocity(const Vec3& x) const;
  double pressure(const Vec3& x) const;
  // Pair (velocity, pressure); throws UsageError outside the pipe.
  std::pair<Vec3, double> operator()(const Vec3& x) const;

  double pressure_drop() const;  // over the full length
};

// A differentiable field: appends (v1, v2, v3, p) nodes as functions of the
// coordinate nodes. Network forward passes and analytic test fields both
// satisfy this shape.
using FieldBuilder = std::function<std::array<ad::NodeId, 4>(
    ad::Tape&, std::span<const ad::NodeId, 3>)>;

// Appends the Poiseuille field to a tape, in the requested frame.
FieldBuilder poiseuille_field(const PoiseuilleFlow& flow, Frame frame);

// Residual coefficients: (rho, mu) dimensional, (1, 1/Re) dimensionless.
struct ResidualCoeffs {
  double convective;
  double viscous;
  static ResidualCoeffs from(const FluidParams& p, Frame frame);
};

// Appends the steady incompressible NSE residual (three momentum components
// and continuity) for a field already present on the tape. First and second
// coordinate derivatives are generated by re-taping with per-coordinate
// tangent sweeps, which serve all four outputs at once.
std::array<ad::NodeId, 4> build_nse_residual(
    ad::Tape& tape, std::span<const ad::NodeId, 3> x,
    std::span<const ad::NodeId, 4> outputs, const ResidualCoeffs& coeffs);

// Evaluates the residual of a differentiable field at one coordinate.
std::array<double, 4> nse_residual(const FieldBuilder& field, const Vec3& x,
                                   const FluidParams& params, Frame frame);

}  // namespace hemoflow::physics
