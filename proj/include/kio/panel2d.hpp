#pragma once

#include "kio/geometry.hpp"
#include "kio/kernels.hpp"

namespace kio::panel2d {

using geometry::PointCloud;
using kernels::KernelKind;
using kernels::KernelSpec;

/// Flat panel: start point b, length l, orientation angle theta.
/// tau = (cos theta, sin theta), outward normal n = (sin theta, -cos theta)
/// for counterclockwise panel ordering.
struct Panel {
  Vec2 b;
  double l;
  double theta;

  Vec2 tangent() const { return {std::cos(theta), std::sin(theta)}; }
  Vec2 normal() const { return {std::sin(theta), -std::cos(theta)}; }
};

inline Panel panel_of(const PointCloud& cloud, int j) {
  const Vec2 mid = cloud.points.row(j).transpose();
  const Vec2 tau = cloud.tangents.row(j).transpose();
  const double l = cloud.weights(j);
  return Panel{mid - 0.5 * l * tau, l, std::atan2(tau(1), tau(0))};
}

namespace detail {

/// Local panel frame: u along the panel from b, v on the side opposite the
/// outward normal (the local outward normal is (0, -1)).
struct LocalPoint {
  double u;
  double v;
  bool on_line;
};

inline LocalPoint to_local(const Panel& p, const Vec2& x) {
  const Vec2 rel = x - p.b;
  const double u = p.tangent().dot(rel);
  const double v = -p.normal().dot(rel);
  const double scale = p.l + rel.norm();
  LocalPoint lp{u, v, std::abs(v) <= 1e-12 * scale};
  if (lp.on_line) {
    if (std::abs(u) <= 1e-12 * scale || std::abs(u - p.l) <= 1e-12 * scale)
      throw NumericalError("panel_integral: evaluation at panel endpoint");
    lp.v = 0.0;
  }
  return lp;
}

/// int_Gamma -(1/2pi) ln|x-y| dy in the local frame.
inline double single_layer_panel(const LocalPoint& lp, double l) {
  const double u = lp.u, v = lp.v;
  if (lp.on_line) {
    return -(1.0 / (2.0 * kPi)) *
           ((l - u) * std::log(std::abs(l - u)) + u * std::log(std::abs(u)) -
            l);
  }
  const double r1sq = u * u + v * v;
  const double r2sq = (l - u) * (l - u) + v * v;
  const double ang = std::atan((l - u) / v) + std::atan(u / v);
  return -(1.0 / (2.0 * kPi)) * (0.5 * (l - u) * std::log(r2sq) +
                                 0.5 * u * std::log(r1sq) - l + v * ang);
}

/// Local pieces shared by the modified/adjoint/double layer forms:
/// L = ln sqrt(r1^2 / r2^2), A = atan(u/v) + atan((l-u)/v) (A = 0 on-line).
inline Vec2 log_angle_terms(const LocalPoint& lp, double l) {
  const double u = lp.u, v = lp.v;
  if (lp.on_line) {
    return {std::log(std::abs(u) / std::abs(l - u)), 0.0};
  }
  const double r1sq = u * u + v * v;
  const double r2sq = (l - u) * (l - u) + v * v;
  return {0.5 * std::log(r1sq / r2sq),
          std::atan(u / v) + std::atan((l - u) / v)};
}

}  // namespace detail

/// Exact integral of the kernel over one panel, evaluated at x (global
/// coordinates), as a d_u x d_f block. On-panel points (local v = 0) use the
/// principal-value branches; the double layer vanishes there.
inline Mat panel_integral(const KernelSpec& spec, const Panel& panel,
                          const Vec2& x, const Vec2* n_x = nullptr) {
  if (spec.dim != 2) throw ConfigError("panel_integral: 2D kernels only");
  const auto lp = detail::to_local(panel, x);
  const double l = panel.l;
  const Mat Q = (Mat(2, 2) << std::cos(panel.theta), std::sin(panel.theta),
                 -std::sin(panel.theta), std::cos(panel.theta))
                    .finished();

  switch (spec.kind) {
    case KernelKind::SingleLayer2D: {
      Mat out(1, 1);
      out(0, 0) = detail::single_layer_panel(lp, l);
      return out;
    }
    case KernelKind::DoubleLayer2D: {
      Mat out(1, 1);
      const Vec2 la = detail::log_angle_terms(lp, l);
      out(0, 0) = lp.on_line ? 0.0 : -(la(1)) / (2.0 * kPi);
      return out;
    }
    case KernelKind::ModifiedDoubleLayer2D: {
      const Vec2 la = detail::log_angle_terms(lp, l);
      return Q.transpose() * la / (2.0 * kPi);
    }
    case KernelKind::AdjointDoubleLayer2D: {
      if (n_x == nullptr) throw ConfigError("panel_integral: n_x required");
      const Vec2 la = detail::log_angle_terms(lp, l);
      Mat out(1, 1);
      out(0, 0) = -(Q.transpose() * la).dot(*n_x) / (2.0 * kPi);
      return out;
    }
    case KernelKind::Stokeslet2D: {
      const double s = detail::single_layer_panel(lp, l);
      Mat local(2, 2);
      if (lp.on_line) {
        local << l, 0.0, 0.0, 0.0;
      } else {
        const Vec2 la = detail::log_angle_terms(lp, l);
        const double va = lp.v * la(1);
        const double vl = lp.v * la(0);
        local << l - va, vl, vl, va;
      }
      return Q.transpose() * local * Q / (4.0 * kPi) +
             0.5 * s * Mat::Identity(2, 2);
    }
    default:
      throw ConfigError("panel_integral: 2D kernels only");
  }
}

/// Dense influence matrix: block (i, j) integrates the kernel over panel j
/// at collocation point i (the panel midpoint). Padded rows/cols are zero.
struct DenseOperator {
  KernelSpec spec;
  int n = 0;
  Mat matrix;  // (N d_u) x (N d_f)
};

inline DenseOperator assemble_dense(const KernelSpec& spec,
                                    const PointCloud& cloud) {
  if (spec.dim != 2 || cloud.dims != 2)
    throw ConfigError("assemble_dense: 2D kernels and clouds only");
  if (cloud.tangents.rows() != cloud.points.rows())
    throw ConfigError("assemble_dense: cloud lacks panel tangents");
  const int n = cloud.n_points();
  DenseOperator op{spec, n, Mat::Zero(n * spec.d_u, n * spec.d_f)};

  std::vector<Panel> panels(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j)
    if (cloud.mask[j]) panels[static_cast<std::size_t>(j)] = panel_of(cloud, j);

#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    if (!cloud.mask[i]) continue;
    const Vec2 x = cloud.points.row(i).transpose();
    const Vec2 nx = cloud.normals.row(i).transpose();
    for (int j = 0; j < n; ++j) {
      if (!cloud.mask[j]) continue;
      Mat block;
      try {
        block = panel_integral(spec, panels[static_cast<std::size_t>(j)], x,
                               spec.needs_nx ? &nx : nullptr);
      } catch (const NumericalError& e) {
        throw NumericalError(std::string(e.what()) + " (row " +
                             std::to_string(i) + ", panel " +
                             std::to_string(j) + ")");
      }
      op.matrix.block(i * spec.d_u, j * spec.d_f, spec.d_u, spec.d_f) = block;
    }
  }
  return op;
}

/// Block matrix-vector product: (N x d_f) densities -> (N x d_u) values.
inline Mat apply_dense(const DenseOperator& op, const Mat& f) {
  if (f.rows() != op.n || f.cols() != op.spec.d_f)
    throw ConfigError("apply_dense: shape mismatch");
  Vec fv(op.n * op.spec.d_f);
  for (int j = 0; j < op.n; ++j)
    for (int c = 0; c < op.spec.d_f; ++c) fv(j * op.spec.d_f + c) = f(j, c);
  Vec uv = op.matrix * fv;
  Mat u(op.n, op.spec.d_u);
  for (int i = 0; i < op.n; ++i)
    for (int c = 0; c < op.spec.d_u; ++c) u(i, c) = uv(i * op.spec.d_u + c);
  return u;
}

struct NeumannSolution {
  Vec sigma;         // single-layer density
  Vec phi_boundary;  // potential trace on the boundary
};

/// Exterior Neumann problem via the second-kind Fredholm equation
///   (-1/2 I + D*) sigma = f,  Phi = S sigma,
/// with the zero-mean constraint sum w_i sigma_i = 0 imposed through a
/// rank-one augmentation so that Phi decays at infinity. Incompatible data
/// (quadrature mean of f nonzero) is rejected, not projected.
inline NeumannSolution solve_exterior_neumann(const PointCloud& cloud,
                                              const Vec& f) {
  const int n = cloud.n_points();
  if (f.size() != n) throw ConfigError("solve_exterior_neumann: bad f size");

  std::vector<int> active;
  for (int i = 0; i < n; ++i)
    if (cloud.mask[i]) active.push_back(i);
  const int m = static_cast<int>(active.size());

  double mean = 0.0, l2 = 0.0, wsum = 0.0;
  for (int i : active) {
    mean += cloud.weights(i) * f(i);
    l2 += cloud.weights(i) * f(i) * f(i);
    wsum += cloud.weights(i);
  }
  const double fnorm = std::sqrt(l2 * wsum);
  if (std::abs(mean) > 1e-6 * std::max(fnorm, 1e-300))
    throw NumericalError(
        "solve_exterior_neumann: incompatible Neumann data (nonzero mean)");

  const auto adj = assemble_dense(
      kernels::kernel_spec(KernelKind::AdjointDoubleLayer2D), cloud);
  const auto single =
      assemble_dense(kernels::kernel_spec(KernelKind::SingleLayer2D), cloud);

  Mat K = Mat::Zero(m + 1, m + 1);
  Vec rhs = Vec::Zero(m + 1);
  for (int a = 0; a < m; ++a) {
    for (int b = 0; b < m; ++b) K(a, b) = adj.matrix(active[static_cast<std::size_t>(a)], active[static_cast<std::size_t>(b)]);
    K(a, a) -= 0.5;
    K(a, m) = cloud.weights(active[static_cast<std::size_t>(a)]);
    K(m, a) = cloud.weights(active[static_cast<std::size_t>(a)]);
    rhs(a) = f(active[static_cast<std::size_t>(a)]);
  }

  Eigen::PartialPivLU<Mat> lu(K);
  Vec sol = lu.solve(rhs);
  if (!sol.allFinite() || (K * sol - rhs).norm() > 1e-8 * (rhs.norm() + 1.0))
    throw NumericalError("solve_exterior_neumann: solver failed");

  NeumannSolution out;
  out.sigma = Vec::Zero(n);
  for (int a = 0; a < m; ++a) out.sigma(active[static_cast<std::size_t>(a)]) = sol(a);
  Mat sig(n, 1);
  sig.col(0) = out.sigma;
  out.phi_boundary = apply_dense(single, sig).col(0);
  return out;
}

}  // namespace kio::panel2d
