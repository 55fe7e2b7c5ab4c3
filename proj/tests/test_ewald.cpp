#include <catch2/catch_amalgamated.hpp>

#include "kio/ewald.hpp"
#include "kio/panel2d.hpp"

using namespace kio;
using namespace kio::ewald;
using namespace kio::geometry;
using namespace kio::kernels;

namespace {

PointCloud boxed_circle(std::uint64_t seed, int n) {
  auto cloud = discretize_curve(generate_random_curve(seed), n);
  build_neighbor_lists(cloud, 6);
  return cloud;
}

double weighted_rel_l2(const PointCloud& cloud, const Mat& got,
                       const Mat& expect) {
  double num = 0.0, den = 0.0;
  for (int i = 0; i < cloud.n_points(); ++i) {
    num += cloud.weights(i) * (got.row(i) - expect.row(i)).squaredNorm();
    den += cloud.weights(i) * expect.row(i).squaredNorm();
  }
  return std::sqrt(num / den);
}

}  // namespace

TEST_CASE("erf split reconstructs 1/r") {
  Rng rng(5);
  for (int t = 0; t < 10000; ++t) {
    const double r = std::exp(rng.uniform(std::log(1e-4), std::log(10.0)));
    const double delta = std::exp(rng.uniform(std::log(1e-3), std::log(1.0)));
    auto s = erf_split(r, delta);
    CHECK(std::abs(s.long_part + s.short_part - 1.0 / r) <= 1e-12 / r);
  }
  CHECK_THROWS_AS(erf_split(0.0, 0.1), ConfigError);
  CHECK_THROWS_AS(erf_split(-1.0, 0.1), ConfigError);
}

TEST_CASE("erf split pinned values") {
  const double delta = 0.37;
  auto s = erf_split(delta, delta);
  CHECK(s.short_part * delta == Catch::Approx(std::erfc(1.0)).epsilon(1e-14));
  CHECK(std::erfc(1.0) == Catch::Approx(0.157299207050285).epsilon(1e-12));

  // Gaussian decay bound at r = 5 delta
  const double r = 5.0 * delta;
  auto s5 = erf_split(r, delta);
  CHECK(s5.short_part <=
        (delta / (std::sqrt(kPi) * r * r)) * std::exp(-25.0));
}

TEST_CASE("fourier coefficients of the log kernel are real and accurate") {
  const Vec2 l(0.5, 0.5);
  const auto& spec = kernel_spec(KernelKind::SingleLayer2D);
  auto sk = kernel_fourier_coeffs(spec, 4, 64, l);

  double max_imag = 0.0;
  for (auto& c : sk.coeffs) max_imag = std::max(max_imag, std::abs(c.imag()));
  CHECK(max_imag < 1e-8);

  // k = 0 coefficient against an independent polar/Simpson oracle for
  // -(1/2pi) int_{B2} ln|x| dx on the unit box
  auto inner = [](double theta) {
    const double R = 0.5 / std::cos(theta);
    return 0.5 * R * R * (std::log(R) - 0.5);
  };
  // every octant contributes equally
  const int ns = 4000;
  double simpson = inner(0.0) + inner(kPi / 4.0);
  for (int i = 1; i < ns; ++i)
    simpson += inner(kPi / 4.0 * i / ns) * ((i % 2) ? 4.0 : 2.0);
  simpson *= (kPi / 4.0 / ns) / 3.0;
  const double oracle = -(8.0 * simpson) / (2.0 * kPi);
  CHECK(sk.block(0, 0)[0].real() == Catch::Approx(oracle).margin(1e-8));

  // self-convergence under grid doubling
  auto sk2 = kernel_fourier_coeffs(spec, 4, 128, l);
  double max_diff = 0.0;
  for (std::size_t i = 0; i < sk.coeffs.size(); ++i)
    max_diff = std::max(max_diff, std::abs(sk.coeffs[i] - sk2.coeffs[i]));
  CHECK(max_diff <= 1e-6);

  CHECK_THROWS_AS(kernel_fourier_coeffs(spec, 8, 32, l), ConfigError);
}

TEST_CASE("mollification damps coefficients exactly") {
  const Vec2 l(0.5, 0.5);
  SpectralKernel sk;
  sk.p = 2;
  sk.box_l = l;
  sk.rows = sk.cols = 1;
  sk.coeffs.assign(static_cast<std::size_t>(sk.n_modes()), Complex(1.0, 0.0));

  auto m0 = mollify(sk, 0.0);
  for (auto& c : m0.coeffs) CHECK(c == Complex(1.0, 0.0));

  auto m = mollify(sk, 0.5);
  CHECK(m.block(0, 0)[0].real() == 1.0);  // k = 0 unchanged
  CHECK(m.block(2, 0)[0].real() ==
        Catch::Approx(std::exp(-2.0 * kPi * kPi)).epsilon(1e-14));
}

TEST_CASE("long-range apply matches a brute-force double loop") {
  auto cloud = boxed_circle(3, 96);
  const Vec2 l(5.0, 5.0);
  for (auto kind : {KernelKind::SingleLayer2D, KernelKind::DoubleLayer2D,
                    KernelKind::AdjointDoubleLayer2D,
                    KernelKind::ModifiedDoubleLayer2D, KernelKind::Stokeslet2D}) {
    const auto& spec = kernel_spec(kind);
    auto sk = mollify(kernel_fourier_coeffs(spec, 4, 32, l), 0.4);
    GrfSpec g;
    g.seed = 10;
    Mat f = sample_grf(cloud, g, spec.d_f);

    double max_imag = 0.0;
    Mat fast = long_range_apply(sk, spec, cloud, f, &max_imag);
    CHECK(max_imag < 1e-12);

    Mat brute = Mat::Zero(cloud.n_points(), spec.d_u);
    for (int i = 0; i < cloud.n_points(); ++i) {
      Vec ni = cloud.normals.row(i).transpose();
      Mat li = left_factor(spec, spec.needs_nx ? &ni : nullptr);
      for (int j = 0; j < cloud.n_points(); ++j) {
        Vec nj = cloud.normals.row(j).transpose();
        Mat rj = right_factor(spec, spec.needs_ny ? &nj : nullptr);
        Vec2 z = (cloud.points.row(i) - cloud.points.row(j)).transpose();
        brute.row(i) += (li * sk.eval_real(z) * rj * f.row(j).transpose())
                            .transpose() *
                        cloud.weights(j);
      }
    }
    INFO("kernel " << spec.name);
    CHECK((fast - brute).cwiseAbs().maxCoeff() <
          1e-10 * (1.0 + brute.cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("long-range apply trivial cases") {
  auto cloud = boxed_circle(4, 64);
  const auto& spec = kernel_spec(KernelKind::SingleLayer2D);
  SpectralKernel sk;
  sk.p = 2;
  sk.box_l = Vec2(5.0, 5.0);
  sk.rows = sk.cols = 1;
  sk.coeffs.assign(static_cast<std::size_t>(sk.n_modes()), Complex(0, 0));

  Mat zero = Mat::Zero(64, 1);
  CHECK(long_range_apply(sk, spec, cloud, zero).norm() == 0.0);

  // single conjugate-symmetric mode pair
  const Complex c(0.7, 0.2);
  sk.block(1, 2)[0] = c;
  sk.block(-1, -2)[0] = std::conj(c);
  Mat ones = Mat::Ones(64, 1);
  Mat u = long_range_apply(sk, spec, cloud, ones);
  Complex s(0, 0);
  for (int j = 0; j < 64; ++j) {
    const double ph = -2.0 * kPi *
                      (1.0 * cloud.points(j, 0) + 2.0 * cloud.points(j, 1)) /
                      10.0;
    s += std::polar(cloud.weights(j), ph);
  }
  for (int i = 0; i < 64; ++i) {
    const double ph = 2.0 * kPi *
                      (1.0 * cloud.points(i, 0) + 2.0 * cloud.points(i, 1)) /
                      10.0;
    const double expect = 2.0 * (std::polar(1.0, ph) * c * s).real();
    CHECK(u(i, 0) == Catch::Approx(expect).margin(1e-12));
  }

  // linearity
  GrfSpec g;
  g.seed = 77;
  Mat fa = sample_grf(cloud, g);
  g.seed = 78;
  Mat fb = sample_grf(cloud, g);
  Mat lhs = long_range_apply(sk, spec, cloud, Mat(2.0 * fa - 3.0 * fb));
  Mat rhs = 2.0 * long_range_apply(sk, spec, cloud, fa) -
            3.0 * long_range_apply(sk, spec, cloud, fb);
  CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("long + residual reproduce the exact kernel pointwise") {
  // partition check across the two code paths: the truncated series used by
  // the long-range path plus the residual used by the near-field path must
  // reassemble the exact kernel at random displacements
  const auto& spec = kernel_spec(KernelKind::SingleLayer2D);
  const Vec2 l(0.5, 0.5);
  auto sk = mollify(kernel_fourier_coeffs(spec, 6, 48, l), 0.08);
  Rng rng(123);
  for (int t = 0; t < 1000; ++t) {
    Vec2 z(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5));
    if (z.norm() < 1e-3) continue;
    const double smooth = sk.eval_real(z)(0, 0);
    const double exact = eval_tensor(spec, Vec(z))(0, 0);
    const double residual = exact - smooth;
    CHECK(std::abs((smooth + residual) - exact) < 1e-14 * (1.0 + std::abs(exact)));
  }
}

TEST_CASE("fast apply matches the dense panel oracle") {
  const auto& spec = kernel_spec(KernelKind::SingleLayer2D);
  EwaldConfig cfg;
  cfg.p = 32;
  cfg.box_l = Vec2(5.0, 5.0);
  cfg.delta = 0.25;
  cfg.eps = 1.25;
  auto op = prepare_ewald_operator(cfg, spec);

  for (std::uint64_t seed : {11u, 12u}) {
    auto cloud = boxed_circle(seed, 512);
    GrfSpec g;
    g.seed = seed;
    Mat f = sample_grf(cloud, g);
    Mat fast = op.apply(cloud, f);
    Mat dense = panel2d::apply_dense(panel2d::assemble_dense(spec, cloud), f);
    INFO("seed " << seed);
    CHECK(weighted_rel_l2(cloud, fast, dense) <= 2e-2);
  }
}

TEST_CASE("fast apply is translation consistent") {
  const auto& spec = kernel_spec(KernelKind::SingleLayer2D);
  EwaldConfig cfg;
  cfg.p = 16;
  cfg.box_l = Vec2(5.0, 5.0);
  cfg.delta = 0.3;
  cfg.eps = 1.2;
  auto op = prepare_ewald_operator(cfg, spec);

  auto cloud = boxed_circle(21, 256);
  GrfSpec g;
  g.seed = 1;
  Mat f = sample_grf(cloud, g);
  Mat u0 = op.apply(cloud, f);
  Mat d0 = panel2d::apply_dense(panel2d::assemble_dense(spec, cloud), f);

  PointCloud shifted = cloud;
  shifted.points.col(0).array() += 0.8;
  shifted.points.col(1).array() -= 0.6;
  Mat u1 = op.apply(shifted, f);
  Mat d1 = panel2d::apply_dense(panel2d::assemble_dense(spec, shifted), f);

  CHECK((d0 - d1).cwiseAbs().maxCoeff() < 1e-10);  // exact invariance
  const double e0 = weighted_rel_l2(cloud, u0, d0);
  const double e1 = weighted_rel_l2(shifted, u1, d1);
  CHECK(std::abs(e0 - e1) <= 0.2 * std::max(e0, e1) + 1e-12);
  CHECK((u0 - u1).cwiseAbs().maxCoeff() < 1e-9 * (1.0 + u0.cwiseAbs().maxCoeff()));
}

TEST_CASE("residual apply trivial cases") {
  const auto& spec = kernel_spec(KernelKind::SingleLayer2D);
  auto cloud = boxed_circle(31, 128);
  const Vec2 l(5.0, 5.0);
  auto sk = mollify(kernel_fourier_coeffs(spec, 4, 32, l), 0.3);

  Mat zero = Mat::Zero(128, 1);
  CHECK(short_range_residual_apply(spec, sk, cloud, zero, 1.0).norm() == 0.0);

  // eps below the minimal spacing: only the self term contributes
  double min_space = 1e300;
  for (int i = 0; i < 128; ++i)
    for (int j = i + 1; j < 128; ++j)
      min_space = std::min(
          min_space, (cloud.points.row(i) - cloud.points.row(j)).norm());
  const double eps = 0.5 * min_space;
  Mat ones = Mat::Ones(128, 1);
  ApplyStats stats;
  Mat u = short_range_residual_apply(spec, sk, cloud, ones, eps, &stats);
  CHECK(stats.near_pairs == 0);
  const Mat f0 = sk.value_at_zero();
  for (int i = 0; i < 128; ++i) {
    const double es = 0.5 * cloud.weights(i);
    const double expect = -(es * std::log(es) - es) / kPi -
                          f0(0, 0) * cloud.weights(i);
    CHECK(u(i, 0) == Catch::Approx(expect).margin(1e-12));
  }

  CHECK_THROWS_AS(short_range_residual_apply(spec, sk, cloud, ones, 10.0),
                  ConfigError);
}

TEST_CASE("decomposition error: bandlimited kernels are represented exactly") {
  TensorKernelFn fn;
  fn.rows = fn.cols = 1;
  fn.name = "bandlimited";
  const Vec2 l(0.5, 0.5);
  fn.eval = [](const Vec2& z) {
    Mat v(1, 1);
    v(0, 0) = 1.0 + 2.0 * std::cos(2.0 * kPi * z(0)) +
              1.5 * std::cos(2.0 * kPi * (z(0) + 2.0 * z(1)));
    return v;
  };
  EwaldConfig cfg;
  cfg.p = 4;
  cfg.box_l = l;
  cfg.delta = 1e-6;
  cfg.eps = 1e-5;
  auto err = measure_decomposition_error(fn, cfg, 64);
  CHECK(err.l1_error <= 1e-8);
}

TEST_CASE("decomposition error grows as eps shrinks") {
  const auto& spec = kernel_spec(KernelKind::SingleLayer2D);
  EwaldConfig cfg;
  cfg.p = 8;
  cfg.box_l = Vec2(0.5, 0.5);
  cfg.delta = 0.004;
  double prev = -1.0;
  for (double eps : {0.02, 0.01, 0.005}) {
    cfg.eps = eps;
    const double e = measure_decomposition_error(spec, cfg, 64).l1_error;
    if (prev >= 0.0) CHECK(e > prev);
    prev = e;
  }
}

TEST_CASE("decomposition error decays with p at the theorem schedule") {
  const auto& spec = kernel_spec(KernelKind::SingleLayer2D);
  const Vec2 l(0.5, 0.5);
  double prev = -1.0;
  for (int p : {8, 16}) {
    auto cfg = sweep_config(p, l);
    const double e = measure_decomposition_error(spec, cfg, 8 * p).l1_error;
    if (prev > 0.0) CHECK(prev / e >= 1.7);
    prev = e;
  }
}

TEST_CASE("fast apply work grows linearly in N at fixed p") {
  // near-field radius tied to the point spacing, as the method is used when
  // refining a fixed geometry
  const auto& spec = kernel_spec(KernelKind::SingleLayer2D);
  Curve c;
  c.n_harmonics = 0;
  c.fourier_cos = Vec::Zero(0);
  c.fourier_sin = Vec::Zero(0);
  c.base_radius = 1.0;
  c.center = Vec2(2.5, 2.5);

  EwaldConfig cfg;
  cfg.p = 8;
  cfg.box_l = Vec2(5.0, 5.0);
  double per_point_prev = -1.0;
  for (int n : {256, 512, 1024}) {
    cfg.delta = 0.05;
    cfg.eps = 40.0 * (2.0 * kPi / n);
    auto op = prepare_ewald_operator(cfg, spec);
    auto cloud = discretize_curve(c, n);
    build_neighbor_lists(cloud, 6);
    Mat f = Mat::Ones(n, 1);
    ApplyStats stats;
    op.apply(cloud, f, &stats);
    const double per_point = static_cast<double>(stats.total()) / n;
    if (per_point_prev > 0.0) CHECK(per_point <= 1.2 * per_point_prev);
    per_point_prev = per_point;
  }
}
