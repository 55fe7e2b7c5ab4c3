#pragma once

#include <utility>
#include <vector>

#include "kio/common.hpp"

namespace kio::geometry {

/// Star-shaped closed curve: radial Fourier perturbation of a circle,
///   r(theta) = base_radius * (1 + sum_m a_m cos(m theta) + b_m sin(m theta)).
struct Curve {
  Vec fourier_cos;  // a_m, m = 1..n_harmonics
  Vec fourier_sin;  // b_m
  double base_radius = 1.0;
  Vec2 center = Vec2::Zero();
  int n_harmonics = 0;

  double radius(double theta) const {
    double s = 1.0;
    for (int m = 1; m <= n_harmonics; ++m) {
      s += fourier_cos(m - 1) * std::cos(m * theta) +
           fourier_sin(m - 1) * std::sin(m * theta);
    }
    return base_radius * s;
  }

  double radius_d1(double theta) const {
    double s = 0.0;
    for (int m = 1; m <= n_harmonics; ++m) {
      s += m * (-fourier_cos(m - 1) * std::sin(m * theta) +
                fourier_sin(m - 1) * std::cos(m * theta));
    }
    return base_radius * s;
  }

  double radius_d2(double theta) const {
    double s = 0.0;
    for (int m = 1; m <= n_harmonics; ++m) {
      s += -m * m * (fourier_cos(m - 1) * std::cos(m * theta) +
                     fourier_sin(m - 1) * std::sin(m * theta));
    }
    return base_radius * s;
  }

  Vec2 point(double theta) const {
    const double r = radius(theta);
    return center + r * Vec2(std::cos(theta), std::sin(theta));
  }

  /// Signed curvature of the counterclockwise parameterization; equals
  /// tr[grad_D n] for the outward normal field (1/R on a circle of radius R).
  double signed_curvature(double theta) const {
    const double r = radius(theta);
    const double r1 = radius_d1(theta);
    const double r2 = radius_d2(theta);
    const double denom = std::pow(r * r + r1 * r1, 1.5);
    return (r * r + 2.0 * r1 * r1 - r * r2) / denom;
  }
};

/// Discretized geometry. 2D closed curves are panelized with chords between
/// parameter nodes; stored points are panel midpoints so that collocation
/// sits exactly on each panel. 3D clouds come from triangle mesh centroids.
struct PointCloud {
  int dims = 2;
  Mat points;     // N x d
  Mat normals;    // N x d, outward unit
  Mat tangents;   // N x 2 (2D only; otherwise 0 x 0)
  Vec weights;    // panel arclengths / areas; zero on padded slots
  Vec curvature;  // tr[grad_D n]
  std::vector<std::vector<int>> neighbor_lists;
  std::vector<std::uint8_t> mask;  // false = zero-padded slot
  std::vector<std::pair<int, int>> components;  // [begin, end) index ranges

  int n_points() const { return static_cast<int>(points.rows()); }

  int n_unmasked() const {
    int n = 0;
    for (auto m : mask) n += m ? 1 : 0;
    return n;
  }

  double perimeter() const { return weights.sum(); }

  void pad_to(int n_max) {
    const int n = n_points();
    if (n_max < n) throw ConfigError("pad_to: target smaller than cloud");
    if (n_max == n) return;
    Mat p = Mat::Zero(n_max, dims), nr = Mat::Zero(n_max, dims);
    p.topRows(n) = points;
    nr.topRows(n) = normals;
    points = std::move(p);
    normals = std::move(nr);
    if (tangents.rows() == n) {
      Mat t = Mat::Zero(n_max, tangents.cols());
      t.topRows(n) = tangents;
      tangents = std::move(t);
    }
    Vec w = Vec::Zero(n_max), c = Vec::Zero(n_max);
    w.head(n) = weights;
    c.head(n) = curvature;
    weights = std::move(w);
    curvature = std::move(c);
    mask.resize(static_cast<std::size_t>(n_max), 0);
    if (!neighbor_lists.empty())
      neighbor_lists.resize(static_cast<std::size_t>(n_max));
  }
};

/// Distribution over random curves.
struct CurveFamily {
  int n_harmonics = 5;
  double amplitude = 0.10;  // per-harmonic bound is amplitude / m
  double base_radius_min = 0.7;
  double base_radius_max = 1.2;
  Vec2 center_min = Vec2(1.7, 1.7);
  Vec2 center_max = Vec2(3.3, 3.3);
  Vec2 box = Vec2(5.0, 5.0);  // curves must stay inside [0, box] ...
  double box_margin = 0.25;   // ... with this margin
  double min_radius_factor = 0.3;
  int max_tries = 100;
};

inline CurveFamily two_curve_family(int which) {
  CurveFamily fam;
  fam.base_radius_min = 0.45;
  fam.base_radius_max = 0.75;
  if (which == 0) {
    fam.center_min = Vec2(1.2, 2.0);
    fam.center_max = Vec2(1.9, 3.0);
  } else {
    fam.center_min = Vec2(3.1, 2.0);
    fam.center_max = Vec2(3.8, 3.0);
  }
  return fam;
}

namespace detail {

inline bool curve_admissible(const Curve& c, const CurveFamily& fam) {
  const int n_scan = 720;
  for (int i = 0; i < n_scan; ++i) {
    const double theta = 2.0 * kPi * i / n_scan;
    const double r = c.radius(theta);
    if (r <= fam.min_radius_factor * c.base_radius) return false;
    const Vec2 p = c.point(theta);
    for (int a = 0; a < 2; ++a) {
      if (p(a) < fam.box_margin || p(a) > fam.box(a) - fam.box_margin)
        return false;
    }
  }
  return true;
}

inline Curve draw_curve(Rng& rng, const CurveFamily& fam) {
  Curve c;
  c.n_harmonics = fam.n_harmonics;
  c.fourier_cos = Vec::Zero(fam.n_harmonics);
  c.fourier_sin = Vec::Zero(fam.n_harmonics);
  c.base_radius = rng.uniform(fam.base_radius_min, fam.base_radius_max);
  c.center = Vec2(rng.uniform(fam.center_min(0), fam.center_max(0)),
                  rng.uniform(fam.center_min(1), fam.center_max(1)));
  for (int m = 1; m <= fam.n_harmonics; ++m) {
    const double bound = fam.amplitude / m;
    c.fourier_cos(m - 1) = rng.uniform(-bound, bound);
    c.fourier_sin(m - 1) = rng.uniform(-bound, bound);
  }
  return c;
}

}  // namespace detail

/// Rejection-samples a curve satisfying positivity and box-margin
/// constraints. Deterministic for fixed (seed, family).
inline Curve generate_random_curve(std::uint64_t seed,
                                   const CurveFamily& fam = CurveFamily{}) {
  Rng rng(derive_seed(seed, 0x637276ULL));
  for (int t = 0; t < fam.max_tries; ++t) {
    Curve c = detail::draw_curve(rng, fam);
    if (detail::curve_admissible(c, fam)) return c;
  }
  throw NumericalError("generate_random_curve: retry budget exhausted");
}

/// Panelizes a closed curve into N chords between parameter nodes
/// 2 pi j / N, ordered counterclockwise. Cloud points are panel midpoints,
/// weights are chord lengths, normals/tangents are panel frames and
/// curvature is evaluated analytically at the parameter midpoint.
inline PointCloud discretize_curve(const Curve& curve, int n_panels) {
  if (n_panels < 16) throw ConfigError("discretize_curve: need N >= 16");
  PointCloud cloud;
  cloud.dims = 2;
  cloud.points.resize(n_panels, 2);
  cloud.normals.resize(n_panels, 2);
  cloud.tangents.resize(n_panels, 2);
  cloud.weights.resize(n_panels);
  cloud.curvature.resize(n_panels);
  cloud.mask.assign(static_cast<std::size_t>(n_panels), 1);
  cloud.components = {{0, n_panels}};

  Mat vertices(n_panels, 2);
  for (int j = 0; j < n_panels; ++j) {
    const double theta = 2.0 * kPi * j / n_panels;
    vertices.row(j) = curve.point(theta).transpose();
  }
  for (int j = 0; j < n_panels; ++j) {
    const int jn = (j + 1) % n_panels;
    const Vec2 a = vertices.row(j), b = vertices.row(jn);
    const Vec2 chord = b - a;
    const double len = chord.norm();
    if (len <= 0.0) throw NumericalError("degenerate panel in discretization");
    const Vec2 tau = chord / len;
    cloud.points.row(j) = (0.5 * (a + b)).transpose();
    cloud.tangents.row(j) = tau.transpose();
    cloud.normals.row(j) = Vec2(tau(1), -tau(0)).transpose();
    cloud.weights(j) = len;
    cloud.curvature(j) =
        curve.signed_curvature(2.0 * kPi * (j + 0.5) / n_panels);
  }
  return cloud;
}

inline PointCloud concat_clouds(const PointCloud& a, const PointCloud& b) {
  if (a.dims != b.dims) throw ConfigError("concat_clouds: dimension mismatch");
  PointCloud out;
  out.dims = a.dims;
  const int na = a.n_points(), nb = b.n_points();
  out.points.resize(na + nb, a.dims);
  out.points << a.points, b.points;
  out.normals.resize(na + nb, a.dims);
  out.normals << a.normals, b.normals;
  if (a.tangents.size() > 0 && b.tangents.size() > 0) {
    out.tangents.resize(na + nb, a.tangents.cols());
    out.tangents << a.tangents, b.tangents;
  }
  out.weights.resize(na + nb);
  out.weights << a.weights, b.weights;
  out.curvature.resize(na + nb);
  out.curvature << a.curvature, b.curvature;
  out.mask = a.mask;
  out.mask.insert(out.mask.end(), b.mask.begin(), b.mask.end());
  out.components = a.components;
  for (auto [lo, hi] : b.components) out.components.push_back({lo + na, hi + na});
  return out;
}

/// k nearest unmasked points (Euclidean), excluding the point itself and
/// restricted to the point's own connected component. Neighbor order is by
/// (distance, coordinates), so lists are storage-order independent.
inline void build_neighbor_lists(PointCloud& cloud, int k) {
  if (k < cloud.dims + 1)
    throw ConfigError("build_neighbor_lists: need k >= d+1");
  const int n = cloud.n_points();
  cloud.neighbor_lists.assign(static_cast<std::size_t>(n), {});
  for (const auto& [lo, hi] : cloud.components) {
    int unmasked = 0;
    for (int i = lo; i < hi; ++i) unmasked += cloud.mask[i] ? 1 : 0;
    if (unmasked <= k)
      throw ConfigError("build_neighbor_lists: fewer than k unmasked points");
    for (int i = lo; i < hi; ++i) {
      if (!cloud.mask[i]) continue;
      std::vector<std::pair<double, int>> cand;
      cand.reserve(static_cast<std::size_t>(hi - lo));
      for (int j = lo; j < hi; ++j) {
        if (j == i || !cloud.mask[j]) continue;
        cand.push_back(
            {(cloud.points.row(i) - cloud.points.row(j)).squaredNorm(), j});
      }
      auto closer = [&](const std::pair<double, int>& a,
                        const std::pair<double, int>& b) {
        if (a.first != b.first) return a.first < b.first;
        for (int c = 0; c < cloud.dims; ++c) {
          if (cloud.points(a.second, c) != cloud.points(b.second, c))
            return cloud.points(a.second, c) < cloud.points(b.second, c);
        }
        return a.second < b.second;
      };
      std::partial_sort(cand.begin(), cand.begin() + k, cand.end(), closer);
      auto& list = cloud.neighbor_lists[static_cast<std::size_t>(i)];
      list.resize(static_cast<std::size_t>(k));
      for (int t = 0; t < k; ++t) list[static_cast<std::size_t>(t)] = cand[static_cast<std::size_t>(t)].second;
    }
  }
}

/// Two disjoint side-by-side closed curves as one concatenated cloud with
/// per-curve neighbor lists. Disjointness margin > 0.1 is enforced on the
/// discretized point sets.
inline PointCloud make_two_curve_cloud(std::uint64_t seed, int n_each = 192,
                                       int neighbor_k = 6) {
  Rng rng(derive_seed(seed, 0x326376ULL));
  const CurveFamily fam0 = two_curve_family(0), fam1 = two_curve_family(1);
  for (int t = 0; t < 200; ++t) {
    Curve c0 = detail::draw_curve(rng, fam0);
    Curve c1 = detail::draw_curve(rng, fam1);
    if (!detail::curve_admissible(c0, fam0) ||
        !detail::curve_admissible(c1, fam1))
      continue;
    PointCloud p0 = discretize_curve(c0, n_each);
    PointCloud p1 = discretize_curve(c1, n_each);
    double min_dist = std::numeric_limits<double>::infinity();
    for (int i = 0; i < p0.n_points() && min_dist > 0.1; ++i) {
      for (int j = 0; j < p1.n_points(); ++j) {
        min_dist = std::min(
            min_dist, (p0.points.row(i) - p1.points.row(j)).norm());
      }
    }
    if (min_dist <= 0.1) continue;
    PointCloud cloud = concat_clouds(p0, p1);
    build_neighbor_lists(cloud, neighbor_k);
    return cloud;
  }
  throw NumericalError("make_two_curve_cloud: retry budget exhausted");
}

/// Per-point least-squares gradient stencils: gradient of a field f at
/// point i is approximated by  P_i S_i (f[nbr] - f[i])  with the tangent
/// projector P = I - n n^T applied after solving in ambient coordinates.
struct GradientStencils {
  std::vector<Mat> stencil;    // d x k_i (empty for padded points)
  std::vector<Mat> projector;  // d x d
};

inline GradientStencils build_gradient_stencils(const PointCloud& cloud) {
  const int n = cloud.n_points(), d = cloud.dims;
  if (cloud.neighbor_lists.size() != static_cast<std::size_t>(n))
    throw ConfigError("gradient stencils require neighbor lists");
  GradientStencils st;
  st.stencil.resize(static_cast<std::size_t>(n));
  st.projector.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    if (!cloud.mask[i]) continue;
    const auto& nbrs = cloud.neighbor_lists[static_cast<std::size_t>(i)];
    const int k = static_cast<int>(nbrs.size());
    if (k == 0) continue;
    Mat D(k, d);
    double scale = 0.0;
    for (int t = 0; t < k; ++t) {
      D.row(t) = cloud.points.row(nbrs[static_cast<std::size_t>(t)]) - cloud.points.row(i);
      scale += D.row(t).norm();
    }
    scale /= k;
    const double lambda = 1e-8 * scale * scale;
    Mat gram = D.transpose() * D + lambda * Mat::Identity(d, d);
    Eigen::LDLT<Mat> ldlt(gram);
    if (ldlt.info() != Eigen::Success)
      throw NumericalError("singular gradient stencil at point " +
                           std::to_string(i));
    st.stencil[static_cast<std::size_t>(i)] = ldlt.solve(D.transpose());
    const Vec nrm = cloud.normals.row(i).transpose();
    st.projector[static_cast<std::size_t>(i)] = Mat::Identity(d, d) - nrm * nrm.transpose();
  }
  return st;
}

/// Tangential gradient of per-point values (N x c) as N x (c*d): channel c
/// occupies columns [c*d, (c+1)*d). Padded rows are zero.
inline Mat tangential_gradient_with(const PointCloud& cloud,
                                    const GradientStencils& st,
                                    const Mat& values) {
  const int n = cloud.n_points(), d = cloud.dims;
  const int c = static_cast<int>(values.cols());
  if (values.rows() != n) throw ConfigError("tangential_gradient: shape mismatch");
  if (!values.allFinite())
    throw NumericalError("tangential_gradient: non-finite values");
  Mat out = Mat::Zero(n, c * d);
  for (int i = 0; i < n; ++i) {
    if (!cloud.mask[i] || st.stencil[static_cast<std::size_t>(i)].size() == 0) continue;
    const auto& nbrs = cloud.neighbor_lists[static_cast<std::size_t>(i)];
    const int k = static_cast<int>(nbrs.size());
    Mat diff(k, c);
    for (int t = 0; t < k; ++t)
      diff.row(t) = values.row(nbrs[static_cast<std::size_t>(t)]) - values.row(i);
    // g = P * S * diff, one column per channel
    Mat g = st.projector[static_cast<std::size_t>(i)] * (st.stencil[static_cast<std::size_t>(i)] * diff);
    for (int ch = 0; ch < c; ++ch)
      out.block(i, ch * d, 1, d) = g.col(ch).transpose();
  }
  return out;
}

inline Mat tangential_gradient(const PointCloud& cloud, const Mat& values) {
  return tangential_gradient_with(cloud, build_gradient_stencils(cloud),
                                  values);
}

inline Mat softsign(const Mat& values) {
  return values.unaryExpr([](double x) { return kio::softsign(x); });
}

/// Gaussian random field on closed curves: truncated Fourier series in
/// normalized arclength with coefficient variance (1 + k^2)^(-s).
struct GrfSpec {
  int n_modes = 12;
  double decay_exponent = 2.0;  // s > 1/2
  double amplitude = 1.0;
  std::uint64_t seed = 0;
};

inline Mat sample_grf(const PointCloud& cloud, const GrfSpec& spec,
                      int channels = 1) {
  if (spec.decay_exponent <= 0.5)
    throw ConfigError("sample_grf: decay exponent must exceed 1/2");
  const int n = cloud.n_points();
  Mat out = Mat::Zero(n, channels);
  int comp_index = 0;
  for (const auto& [lo, hi] : cloud.components) {
    double per = 0.0;
    for (int i = lo; i < hi; ++i) per += cloud.weights(i);
    if (per <= 0.0) throw NumericalError("sample_grf: empty component");
    // arclength position of each panel midpoint
    Vec t(hi - lo);
    double acc = 0.0;
    for (int i = lo; i < hi; ++i) {
      t(i - lo) = (acc + 0.5 * cloud.weights(i)) / per;
      acc += cloud.weights(i);
    }
    for (int ch = 0; ch < channels; ++ch) {
      Rng rng(derive_seed(spec.seed, 0x677266ULL + 1000003ULL * static_cast<std::uint64_t>(comp_index) + static_cast<std::uint64_t>(ch)));
      const double a0 = rng.normal();
      Vec ak(spec.n_modes), bk(spec.n_modes);
      for (int k = 1; k <= spec.n_modes; ++k) {
        const double sd =
            std::pow(1.0 + static_cast<double>(k) * k, -0.5 * spec.decay_exponent);
        ak(k - 1) = sd * rng.normal();
        bk(k - 1) = sd * rng.normal();
      }
      for (int i = lo; i < hi; ++i) {
        if (!cloud.mask[i]) continue;
        double v = a0;
        for (int k = 1; k <= spec.n_modes; ++k) {
          const double ph = 2.0 * kPi * k * t(i - lo);
          v += std::sqrt(2.0) * (ak(k - 1) * std::cos(ph) + bk(k - 1) * std::sin(ph));
        }
        out(i, ch) = spec.amplitude * v;
      }
    }
    ++comp_index;
  }
  return out;
}

}  // namespace kio::geometry
