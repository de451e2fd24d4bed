#include "hemoflow/physics.hpp"

#include <cmath>

namespace hemoflow::physics {

void FluidParams::validate() const {
  if (rho <= 0 || mu <= 0 || v_max <= 0 || radius <= 0 || length <= 0)
    throw ConfigError("fluid params: all quantities must be strictly positive");
}

double reynolds(const FluidParams& p) {
  p.validate();
  return p.rho * p.diameter() * p.v_max / p.mu;
}

void FlowField::validate() const {
  if (velocity.size() != points.size() || pressure.size() != points.size())
    throw UsageError("flow field: column lengths disagree");
}

Vec3 parabolic_inlet(const Vec3& x, double v_max, double radius) {
  const double r2 = x[0] * x[0] + x[2] * x[2];
  if (r2 > radius * radius * (1.0 + 1e-12))
    throw UsageError("parabolic_inlet: point lies outside the inlet disc");
  return {0.0, v_max * (1.0 - r2 / (radius * radius)), 0.0};
}

Vec3 nondimensionalize_point(const Vec3& x, const FluidParams& p) {
  const double d = p.diameter();
  return {x[0] / d, x[1] / d, x[2] / d};
}

Vec3 redimensionalize_point(const Vec3& x, const FluidParams& p) {
  const double d = p.diameter();
  return {x[0] * d, x[1] * d, x[2] * d};
}

FlowField nondimensionalize(const FlowField& f, const FluidParams& p) {
  if (f.frame == Frame::kDimensionless)
    throw UsageError("nondimensionalize: field is already dimensionless");
  f.validate();
  FlowField out;
  out.frame = Frame::kDimensionless;
  out.points.reserve(f.size());
  out.velocity.reserve(f.size());
  out.pressure.reserve(f.size());
  const double pref = p.rho * p.v_max * p.v_max;
  for (std::size_t i = 0; i < f.size(); ++i) {
    out.points.push_back(nondimensionalize_point(f.points[i], p));
    out.velocity.push_back({f.velocity[i][0] / p.v_max,
                            f.velocity[i][1] / p.v_max,
                            f.velocity[i][2] / p.v_max});
    out.pressure.push_back(f.pressure[i] / pref);
  }
  return out;
}

FlowField redimensionalize(const FlowField& f, const FluidParams& p) {
  if (f.frame == Frame::kDimensional)
    throw UsageError("redimensionalize: field is already dimensional");
  f.validate();
  FlowField out;
  out.frame = Frame::kDimensional;
  out.points.reserve(f.size());
  out.velocity.reserve(f.size());
  out.pressure.reserve(f.size());
  const double pref = p.rho * p.v_max * p.v_max;
  for (std::size_t i = 0; i < f.size(); ++i) {
    out.points.push_back(redimensionalize_point(f.points[i], p));
    out.velocity.push_back({f.velocity[i][0] * p.v_max,
                            f.velocity[i][1] * p.v_max,
                            f.velocity[i][2] * p.v_max});
    out.pressure.push_back(f.pressure[i] * pref);
  }
  return out;
}

Vec3 PoiseuilleFlow::velocity(const Vec3& x) const {
  return parabolic_inlet(x, fluid.v_max, fluid.radius);
}

double PoiseuilleFlow::pressure(const Vec3& x) const {
  const double r2 = fluid.radius * fluid.radius;
  return p_outlet +
         4.0 * fluid.mu * fluid.v_max / r2 * (fluid.length - x[1]);
}

std::pair<Vec3, double> PoiseuilleFlow::operator()(const Vec3& x) const {
  if (x[1] < -1e-12 || x[1] > fluid.length * (1.0 + 1e-12))
    throw UsageError("poiseuille: axial coordinate outside the pipe");
  return {velocity(x), pressure(x)};
}

double PoiseuilleFlow::pressure_drop() const {
  return 4.0 * fluid.mu * fluid.v_max * fluid.length /
         (fluid.radius * fluid.radius);
}

FieldBuilder poiseuille_field(const PoiseuilleFlow& flow, Frame frame) {
  return [flow, frame](ad::Tape& t, std::span<const ad::NodeId, 3> x)
             -> std::array<ad::NodeId, 4> {
    const FluidParams& f = flow.fluid;
    // v2 = V (1 - r^2 / R^2); p = p_out + (4 mu V / R^2)(L - x2), expressed
    // in whichever frame the residual is evaluated in.
    double peak = f.v_max;
    double inv_r2 = 1.0 / (f.radius * f.radius);
    double slope = 4.0 * f.mu * f.v_max * inv_r2;  // -dp/dx2
    double p_end = flow.p_outlet;
    double len = f.length;
    if (frame == Frame::kDimensionless) {
      const double d = f.diameter();
      const double pref = f.rho * f.v_max * f.v_max;
      peak = 1.0;
      inv_r2 = d * d / (f.radius * f.radius);  // r*^2 scale
      slope = slope * d / pref;
      p_end = p_end / pref;
      len = len / d;
    }
    const ad::NodeId r2 =
        t.add(t.pow_int(x[0], 2), t.pow_int(x[2], 2));
    const ad::NodeId v2 = t.mul(
        t.constant(peak),
        t.sub(t.one(), t.mul(t.constant(inv_r2), r2)));
    const ad::NodeId p =
        t.add(t.constant(p_end),
              t.mul(t.constant(slope), t.sub(t.constant(len), x[1])));
    return {t.zero(), v2, t.zero(), p};
  };
}

ResidualCoeffs ResidualCoeffs::from(const FluidParams& p, Frame frame) {
  if (frame == Frame::kDimensional) return {p.rho, p.mu};
  return {1.0, 1.0 / reynolds(p)};
}

std::array<ad::NodeId, 4> build_nse_residual(
    ad::Tape& t, std::span<const ad::NodeId, 3> x,
    std::span<const ad::NodeId, 4> outputs, const ResidualCoeffs& coeffs) {
  ad::TangentBuilder tb(t);

  // One tangent sweep per coordinate covers the first derivatives of all
  // four outputs; sweeping each velocity tangent again along the same
  // coordinate yields the Laplacian diagonal.
  std::array<std::array<ad::NodeId, 3>, 4> grad;   // d out_i / d x_j
  std::array<std::array<ad::NodeId, 3>, 3> second; // d^2 v_i / d x_j^2
  for (int j = 0; j < 3; ++j) {
    const auto first = tb.sweep(x[j], outputs);
    for (int i = 0; i < 4; ++i)
      grad[i][j] = first[i] == ad::kNoNode ? t.zero() : first[i];

    std::vector<ad::NodeId> alive;
    std::vector<int> who;
    for (int i = 0; i < 3; ++i) {
      second[i][j] = t.zero();
      if (first[i] != ad::kNoNode) {
        alive.push_back(first[i]);
        who.push_back(i);
      }
    }
    if (!alive.empty()) {
      const auto hess = tb.sweep(x[j], alive);
      for (std::size_t k = 0; k < alive.size(); ++k)
        if (hess[k] != ad::kNoNode) second[who[k]][j] = hess[k];
    }
  }

  std::array<ad::NodeId, 3> laplacian;
  for (int i = 0; i < 3; ++i)
    laplacian[i] = t.add(t.add(second[i][0], second[i][1]), second[i][2]);

  const ad::NodeId c_conv = t.constant(coeffs.convective);
  const ad::NodeId c_visc = t.constant(coeffs.viscous);

  std::array<ad::NodeId, 4> residual;
  for (int i = 0; i < 3; ++i) {
    const std::array<ad::NodeId, 3> va = {outputs[0], outputs[1], outputs[2]};
    const std::array<ad::NodeId, 3> gi = {grad[i][0], grad[i][1], grad[i][2]};
    const ad::NodeId convective = t.dot(va, gi);  // v . grad(v_i)
    residual[i] = t.sub(t.add(t.mul(c_conv, convective), grad[3][i]),
                        t.mul(c_visc, laplacian[i]));
  }
  residual[3] = t.add(t.add(grad[0][0], grad[1][1]), grad[2][2]);
  return residual;
}

std::array<double, 4> nse_residual(const FieldBuilder& field, const Vec3& x,
                                   const FluidParams& params, Frame frame) {
  params.validate();
  ad::Tape tape;
  const std::array<ad::NodeId, 3> xs = {tape.input(), tape.input(),
                                        tape.input()};
  const std::array<ad::NodeId, 4> outs = field(tape, xs);
  const std::array<ad::NodeId, 4> res =
      build_nse_residual(tape, xs, outs, ResidualCoeffs::from(params, frame));
  tape.set_root(res[3]);
  ad::Workspace ws(tape);
  for (int i = 0; i < 3; ++i) ws.bind(xs[i], x[i]);
  ws.forward();
  return {ws.value(res[0]), ws.value(res[1]), ws.value(res[2]),
          ws.value(res[3])};
}

}  // namespace hemoflow::physics
