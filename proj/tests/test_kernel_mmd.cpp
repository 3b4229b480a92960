#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "sbmmd/kernel_mmd.hpp"
#include "sbmmd/stats.hpp"

using namespace sbmmd;

namespace {

Vector v1(double x) { return Vector::Constant(1, x); }

Matrix column(std::initializer_list<double> xs) {
  Matrix m(static_cast<Eigen::Index>(xs.size()), 1);
  Eigen::Index i = 0;
  for (double x : xs) m(i++, 0) = x;
  return m;
}

// Bimodal density written out directly, independent of GaussianMixture.
double bimodal_density(double y) {
  return (std::exp(-(y + 1) * (y + 1)) + std::exp(-(y - 1) * (y - 1))) / (2.0 * std::sqrt(std::numbers::pi));
}

// Trapezoid rule for int exp(-(x - y)^2) rho(y) dy on [-10, 10].
double embedding_by_quadrature(double x, int n = 10000) {
  const double a = -10.0, b = 10.0, h = (b - a) / n;
  double s = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double y = a + i * h;
    const double w = (i == 0 || i == n) ? 0.5 : 1.0;
    s += w * std::exp(-(x - y) * (x - y)) * bimodal_density(y);
  }
  return s * h;
}

double double_integral_by_quadrature(int n = 1600) {
  const double a = -9.0, b = 9.0, h = (b - a) / n;
  std::vector<double> rho(n + 1), ys(n + 1);
  for (int i = 0; i <= n; ++i) {
    ys[i] = a + i * h;
    rho[i] = bimodal_density(ys[i]) * ((i == 0 || i == n) ? 0.5 : 1.0);
  }
  double s = 0.0;
  for (int i = 0; i <= n; ++i) {
    for (int j = 0; j <= n; ++j) s += rho[i] * rho[j] * std::exp(-(ys[i] - ys[j]) * (ys[i] - ys[j]));
  }
  return s * h * h;
}

Matrix random_points(int n, int d, unsigned seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  Matrix m(n, d);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) m(i, j) = z(gen);
  }
  return m;
}

}  // namespace

// --- kernel_eval ------------------------------------------------------------

TEST(KernelEval, IdentityIsOne) {
  const Kernel k = Kernel::gaussian(1.0, 3);
  const Vector x = Vector::Random(3);
  EXPECT_EQ(kernel_eval(k, x, x), 1.0);
}

TEST(KernelEval, UnitDistance) {
  EXPECT_NEAR(kernel_eval(Kernel::gaussian(1.0), v1(0), v1(1)), 0.36787944117144233, 1e-15);
}

TEST(KernelEval, SymmetricAndBounded) {
  for (const Kernel& k : {Kernel::gaussian(0.7, 2), Kernel::matern(0.5, 1.0, 2), Kernel::matern(1.5, 2.0, 2),
                          Kernel::matern(2.5, 0.3, 2)}) {
    const Matrix p = random_points(40, 2, 5);
    for (int i = 0; i < 20; ++i) {
      const Vector x = p.row(2 * i).transpose(), y = p.row(2 * i + 1).transpose();
      const double kxy = kernel_eval(k, x, y);
      EXPECT_EQ(kxy, kernel_eval(k, y, x));
      EXPECT_GT(kxy, 0.0);
      EXPECT_LE(kxy, kernel_eval(k, x, x));
      EXPECT_EQ(kernel_eval(k, x, x), kernel_eval(k, y, y));
    }
  }
}

TEST(KernelEval, DimensionMismatchThrows) {
  EXPECT_THROW(kernel_eval(Kernel::gaussian(1.0, 2), Vector::Zero(2), Vector::Zero(3)), DimensionError);
  EXPECT_THROW(kernel_eval(Kernel::gaussian(1.0, 2), Vector::Zero(1), Vector::Zero(1)), DimensionError);
}

TEST(KernelEval, MaternClosedForms) {
  const double r = 0.8;
  const double s12 = r, s32 = std::sqrt(3.0) * r, s52 = std::sqrt(5.0) * r;
  EXPECT_NEAR(kernel_eval(Kernel::matern(0.5, 1.0), v1(0), v1(r)), std::exp(-s12), 1e-15);
  EXPECT_NEAR(kernel_eval(Kernel::matern(1.5, 1.0), v1(0), v1(r)), (1 + s32) * std::exp(-s32), 1e-15);
  EXPECT_NEAR(kernel_eval(Kernel::matern(2.5, 1.0), v1(0), v1(r)), (1 + s52 + s52 * s52 / 3) * std::exp(-s52), 1e-15);
  EXPECT_THROW(Kernel::matern(1.0, 1.0), ConfigError);
  EXPECT_THROW(Kernel::gaussian(0.0), ConfigError);
}

// --- GaussianMixture ----------------------------------------------------------

TEST(GaussianMixture, WeightsMustSumToOne) {
  Matrix m = Matrix::Zero(2, 1), v = Matrix::Ones(2, 1);
  EXPECT_THROW(GaussianMixture(Vector::Constant(2, 0.4), m, v), ConfigError);
  EXPECT_NO_THROW(GaussianMixture(Vector::Constant(2, 0.5), m, v));
  EXPECT_THROW(GaussianMixture(Vector::Constant(2, 0.5), m, -v), ConfigError);
}

TEST(GaussianMixture, PointMassIsDegenerate) {
  const auto pm = GaussianMixture::point_mass(v1(2.0));
  EXPECT_TRUE(pm.degenerate());
  EXPECT_TRUE(pm.is_point_mass());
  EXPECT_FALSE(GaussianMixture::bimodal_1d().degenerate());
}

TEST(GaussianMixture, DensityIntegratesToOne) {
  const auto mu = GaussianMixture::bimodal_1d();
  const int n = 20000;
  const double a = -12, b = 12, h = (b - a) / n;
  double s = 0.0;
  for (int i = 0; i <= n; ++i) s += ((i == 0 || i == n) ? 0.5 : 1.0) * mu.density(v1(a + i * h));
  EXPECT_NEAR(s * h, 1.0, 1e-12);
  EXPECT_NEAR(mu.density(v1(0.3)), bimodal_density(0.3), 1e-15);

  Matrix means(2, 2), vars(2, 2);
  means << 0.5, -0.2, -1.0, 0.4;
  vars << 0.3, 0.8, 1.1, 0.2;
  const GaussianMixture mu2(Vector::Constant(2, 0.5), means, vars);
  const int m = 600;
  const double h2 = 16.0 / m;
  double s2 = 0.0;
  for (int i = 0; i <= m; ++i) {
    for (int j = 0; j <= m; ++j) {
      Vector x(2);
      x << -8 + i * h2, -8 + j * h2;
      s2 += mu2.density(x);
    }
  }
  EXPECT_NEAR(s2 * h2 * h2, 1.0, 1e-10);
}

TEST(GaussianMixture, SampleMomentsAndCdf) {
  const auto mu = GaussianMixture::bimodal_1d();
  const Matrix x = mu.sample(100000, 3, make_stream(StreamTag::target, 0));
  EXPECT_NEAR(x.mean(), 0.0, 0.01);
  EXPECT_NEAR(x.array().square().mean(), 1.5, 0.02);
  EXPECT_LT(stats::ks_distance(x, mu), 0.006);
  EXPECT_EQ(x, mu.sample(100000, 3, make_stream(StreamTag::target, 0)));
}

// --- mean_embedding -----------------------------------------------------------

TEST(MeanEmbedding, PointMassReducesToKernel) {
  const Kernel k = Kernel::gaussian(1.3, 2);
  Vector m(2), x(2);
  m << 0.4, -1.0;
  x << 1.0, 0.5;
  EXPECT_NEAR(mean_embedding(k, GaussianMixture::point_mass(m), x), kernel_eval(k, x, m), 1e-15);
}

TEST(MeanEmbedding, BimodalAtZeroMatchesQuadrature) {
  const double oracle = embedding_by_quadrature(0.0);
  EXPECT_NEAR(oracle, 0.42888194248035344, 1e-12);
  EXPECT_NEAR(mean_embedding(Kernel::gaussian(1.0), GaussianMixture::bimodal_1d(), v1(0)), oracle, 1e-12);
  for (double x : {-2.5, -0.7, 0.3, 1.9}) {
    EXPECT_NEAR(mean_embedding(Kernel::gaussian(1.0), GaussianMixture::bimodal_1d(), v1(x)),
                embedding_by_quadrature(x), 1e-12);
  }
}

TEST(MeanEmbedding, DecaysAtInfinity) {
  const auto mu = GaussianMixture::bimodal_1d();
  const Kernel k = Kernel::gaussian(1.0);
  double prev = mean_embedding(k, mu, v1(2));
  for (double x : {4.0, 8.0, 16.0, 32.0}) {
    const double e = mean_embedding(k, mu, v1(x));
    EXPECT_LT(e, prev);
    prev = e;
  }
  EXPECT_LT(prev, 1e-100);
}

TEST(MeanEmbedding, MaternNeedsQuadrature) {
  const Kernel k = Kernel::matern(1.5, 1.0);
  EXPECT_THROW(mean_embedding(k, GaussianMixture::bimodal_1d(), v1(0)), ConfigError);
  // Quadrature fallback against the gaussian closed form, and against a fine
  // trapezoid rule for matern.
  EXPECT_NEAR(mean_embedding_quadrature(Kernel::gaussian(1.0), GaussianMixture::bimodal_1d(), v1(0.2)),
              mean_embedding(Kernel::gaussian(1.0), GaussianMixture::bimodal_1d(), v1(0.2)), 1e-12);
  const int n = 200000;
  const double a = -12, b = 12, h = (b - a) / n;
  double s = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double y = a + i * h;
    s += ((i == 0 || i == n) ? 0.5 : 1.0) * k.from_sq_dist(y * y) * bimodal_density(y);
  }
  EXPECT_NEAR(mean_embedding_quadrature(k, GaussianMixture::bimodal_1d(), v1(0)), s * h, 2e-4);
}

// --- double_integral ------------------------------------------------------------

TEST(DoubleIntegral, PointMassIsOne) {
  EXPECT_EQ(double_integral(Kernel::gaussian(2.0, 2), GaussianMixture::point_mass(Vector::Ones(2))), 1.0);
}

TEST(DoubleIntegral, BimodalClosedFormAndQuadrature) {
  const double closed = 0.25 * (2 / std::sqrt(3.0) + 2 / std::sqrt(3.0) * std::exp(-4.0 / 3.0));
  EXPECT_NEAR(closed, 0.36476907391917784, 1e-15);
  const double c = double_integral(Kernel::gaussian(1.0), GaussianMixture::bimodal_1d());
  EXPECT_NEAR(c, closed, 1e-14);
  EXPECT_NEAR(c, double_integral_by_quadrature(), 1e-9);
}

TEST(DoubleIntegral, DuplicatedComponentsMatchSingle) {
  Matrix m(2, 1), v(2, 1);
  m << 0.3, 0.3;
  v << 0.7, 0.7;
  const GaussianMixture twice(Vector::Constant(2, 0.5), m, v);
  const auto once = GaussianMixture::normal(v1(0.3), v1(0.7));
  EXPECT_NEAR(double_integral(Kernel::gaussian(1.0), twice), double_integral(Kernel::gaussian(1.0), once), 1e-15);
}

// --- k1_eval ------------------------------------------------------------------

TEST(K1, PointMassAtOrigin) {
  EXPECT_EQ(k1_eval(Kernel::gaussian(1.0), GaussianMixture::point_mass(v1(0)), v1(0), v1(0)), -1.0);
}

TEST(K1, BimodalAtOrigin) {
  const double e = embedding_by_quadrature(0.0);
  EXPECT_NEAR(k1_eval(Kernel::gaussian(1.0), GaussianMixture::bimodal_1d(), v1(0), v1(0)), 1 - 2 * e, 1e-12);
  EXPECT_NEAR(1 - 2 * e, 0.14223611503929323, 1e-12);
}

TEST(K1, Symmetric) {
  const auto mu = GaussianMixture::bimodal_1d();
  const Kernel k = Kernel::gaussian(1.0);
  EXPECT_EQ(k1_eval(k, mu, v1(0.3), v1(-1.2)), k1_eval(k, mu, v1(-1.2), v1(0.3)));
}

TEST(K1, ExpectationUnderTargetCancelsConstant) {
  // E_{x,y ~ mu1}[K1(x, y)] = c - 2c = -c, by Gauss-Hermite product quadrature.
  const auto mu = GaussianMixture::bimodal_1d();
  const Kernel k = Kernel::gaussian(1.0);
  const auto [z, w] = detail::gauss_hermite_normal(60);
  double e = 0.0;
  for (int a = 0; a < 2; ++a) {
    for (int b = 0; b < 2; ++b) {
      for (Eigen::Index i = 0; i < z.size(); ++i) {
        for (Eigen::Index j = 0; j < z.size(); ++j) {
          const double x = mu.means()(a, 0) + std::sqrt(0.5) * z(i);
          const double y = mu.means()(b, 0) + std::sqrt(0.5) * z(j);
          e += 0.25 * w(i) * w(j) * k1_eval(k, mu, v1(x), v1(y));
        }
      }
    }
  }
  EXPECT_NEAR(e + double_integral(k, mu), 0.0, 1e-12);
}

// --- estimators -----------------------------------------------------------------

TEST(MmdBiased, IdenticalSetsGiveZero) {
  const Kernel k = Kernel::gaussian(1.0, 2);
  const Matrix x = random_points(30, 2, 1);
  Matrix shuffled = x.colwise().reverse();
  EXPECT_NEAR(mmd_sq_biased(k, EmpiricalMeasure(x), EmpiricalMeasure(shuffled)), 0.0, 1e-12);
}

TEST(MmdBiased, TwoPoints) {
  EXPECT_NEAR(mmd_sq_biased(Kernel::gaussian(1.0), EmpiricalMeasure(column({0})), EmpiricalMeasure(column({1}))),
              2 - 2 * std::exp(-1.0), 1e-15);
  EXPECT_NEAR(2 - 2 * std::exp(-1.0), 1.2642411176571153, 1e-15);
}

TEST(MmdBiased, PermutationInvariantAndSymmetric) {
  const Kernel k = Kernel::gaussian(0.5, 2);
  const Matrix x = random_points(25, 2, 2), y = random_points(17, 2, 3).array() + 0.5;
  const double base = mmd_sq_biased(k, EmpiricalMeasure(x), EmpiricalMeasure(y));
  std::vector<int> perm(25);
  for (int i = 0; i < 25; ++i) perm[i] = (7 * i) % 25;
  Matrix xp(25, 2);
  for (int i = 0; i < 25; ++i) xp.row(i) = x.row(perm[i]);
  EXPECT_NEAR(mmd_sq_biased(k, EmpiricalMeasure(xp), EmpiricalMeasure(y)), base, 1e-14);
  EXPECT_NEAR(mmd_sq_biased(k, EmpiricalMeasure(y), EmpiricalMeasure(x)), base, 1e-14);
  EXPECT_GT(base, 0.0);
}

TEST(MmdBiased, TriangleInequalityOfRoots) {
  const Kernel k = Kernel::gaussian(1.0, 2);
  for (unsigned s = 0; s < 30; ++s) {
    const EmpiricalMeasure a(random_points(12, 2, 100 + s));
    const EmpiricalMeasure b(Matrix(random_points(9, 2, 200 + s).array() + 0.3 * s / 30.0));
    const EmpiricalMeasure c(Matrix(random_points(15, 2, 300 + s).array() * 1.5));
    const double ab = std::sqrt(mmd_sq_biased(k, a, b)), bc = std::sqrt(mmd_sq_biased(k, b, c)),
                 ac = std::sqrt(mmd_sq_biased(k, a, c));
    EXPECT_LE(ac, ab + bc + 1e-12);
  }
}

TEST(MmdBiased, Errors) {
  const Kernel k = Kernel::gaussian(1.0);
  EXPECT_THROW(mmd_sq_biased(k, EmpiricalMeasure(column({0})), EmpiricalMeasure(Matrix::Zero(1, 2))),
               DimensionError);
  EXPECT_THROW(EmpiricalMeasure(Matrix(0, 1)), ConfigError);
}

TEST(MmdUnbiased, TwoPointSets) {
  const EmpiricalMeasure x(column({0, 1}));
  EXPECT_NEAR(mmd_sq_unbiased(Kernel::gaussian(1.0), x, x), std::exp(-1.0) - 1.0, 1e-15);
  EXPECT_NEAR(std::exp(-1.0) - 1.0, -0.6321205588285577, 1e-15);
}

TEST(MmdUnbiased, ConstantSets) {
  const EmpiricalMeasure a(column({0.7, 0.7}));
  EXPECT_NEAR(mmd_sq_unbiased(Kernel::gaussian(1.0), a, a), 0.0, 1e-15);
}

TEST(MmdUnbiased, NeedsTwoSamples) {
  EXPECT_THROW(mmd_sq_unbiased(Kernel::gaussian(1.0), EmpiricalMeasure(column({0})), EmpiricalMeasure(column({0, 1}))),
               ConfigError);
}

TEST(MmdUnbiased, MeanOverResamplesMatchesPopulation) {
  const Kernel k = Kernel::gaussian(1.0);
  const auto mu = GaussianMixture::bimodal_1d();
  Matrix means(2, 1), vars(2, 1);
  means << -0.5, 1.5;
  vars << 0.3, 0.8;
  const GaussianMixture nu(Vector::Constant(2, 0.5), means, vars);
  const double population = mmd_sq_population(k, mu, nu);
  const int reps = 10000;
  double sum = 0.0, sq = 0.0;
  for (int r = 0; r < reps; ++r) {
    const EmpiricalMeasure x(mu.sample(50, 11, make_stream(StreamTag::user, 2 * r)));
    const EmpiricalMeasure y(nu.sample(50, 11, make_stream(StreamTag::user, 2 * r + 1)));
    const double v = mmd_sq_unbiased(k, x, y);
    sum += v;
    sq += v * v;
  }
  const double mean = sum / reps;
  const double se = std::sqrt((sq / reps - mean * mean) / reps);
  EXPECT_NEAR(mean, population, 3 * se);
  // The V-statistic is biased upwards by a clearly detectable amount.
  double vsum = 0.0;
  for (int r = 0; r < 2000; ++r) {
    vsum += mmd_sq_biased(k, EmpiricalMeasure(mu.sample(50, 11, make_stream(StreamTag::user, 2 * r))),
                          EmpiricalMeasure(nu.sample(50, 11, make_stream(StreamTag::user, 2 * r + 1))));
  }
  EXPECT_GT(vsum / 2000 - population, 10 * se);
}

TEST(MmdAnalytic, PointMassTarget) {
  EXPECT_NEAR(mmd_sq_analytic_target(Kernel::gaussian(1.0), EmpiricalMeasure(column({0})),
                                     GaussianMixture::point_mass(v1(0))),
              0.0, 1e-15);
}

TEST(MmdAnalytic, SinglePointAgainstBimodal) {
  const double e = embedding_by_quadrature(0.0);
  const double expected = 1 - 2 * e + 0.36476907391917784;
  EXPECT_NEAR(expected, 0.507005188958471, 1e-12);
  EXPECT_NEAR(mmd_sq_analytic_target(Kernel::gaussian(1.0), EmpiricalMeasure(column({0})),
                                     GaussianMixture::bimodal_1d()),
              expected, 1e-12);
}

TEST(MmdAnalytic, ShrinksWithSampleSize) {
  const auto mu = GaussianMixture::bimodal_1d();
  const Kernel k = Kernel::gaussian(1.0);
  double prev = 1e9;
  for (int m : {10, 100, 1000}) {
    std::vector<double> vals;
    for (int s = 0; s < 11; ++s) {
      vals.push_back(mmd_sq_analytic_target(k, EmpiricalMeasure(mu.sample(m, s, make_stream(StreamTag::user, 0))), mu));
    }
    const double med = stats::median(vals);
    EXPECT_LT(med, prev);
    prev = med;
  }
  EXPECT_LT(prev, 2e-3);
}

TEST(MmdAnalytic, AgreesWithHugeTargetSample) {
  const auto mu = GaussianMixture::bimodal_1d();
  const Kernel k = Kernel::gaussian(1.0);
  const EmpiricalMeasure x(column({-0.3, 0.2, 1.4, -2.0, 0.9}));
  const EmpiricalMeasure y(mu.sample(100000, 5, make_stream(StreamTag::target, 1)));
  EXPECT_NEAR(mmd_sq_analytic_target(k, x, mu), mmd_sq_biased(k, x, y), 5e-3);
}

TEST(MmdAnalytic, UnbiasedVariantMatchesUStatistic) {
  const auto mu = GaussianMixture::bimodal_1d();
  const Kernel k = Kernel::gaussian(1.0);
  const Matrix x = mu.sample(40, 9, 0);
  const double m = 40;
  double xx = 0.0, emb = 0.0;
  for (int i = 0; i < 40; ++i) {
    emb += mean_embedding(k, mu, x.row(i).transpose());
    for (int j = 0; j < 40; ++j) {
      if (i != j) xx += std::exp(-(x(i, 0) - x(j, 0)) * (x(i, 0) - x(j, 0)));
    }
  }
  EXPECT_NEAR(mmd_sq_unbiased_analytic(k, EmpiricalMeasure(x), mu),
              xx / (m * (m - 1)) - 2 * emb / m + double_integral(k, mu), 1e-14);
}

// --- properties -----------------------------------------------------------------

TEST(GramMatrix, PositiveSemidefinite) {
  for (const Kernel& k : {Kernel::gaussian(1.0, 2), Kernel::gaussian(5.0, 2), Kernel::matern(0.5, 1.0, 2),
                          Kernel::matern(2.5, 1.0, 2)}) {
    for (unsigned s = 0; s < 5; ++s) {
      const Matrix g = gram_matrix(k, random_points(64, 2, 40 + s));
      const Eigen::SelfAdjointEigenSolver<Matrix> es(g);
      EXPECT_GE(es.eigenvalues().minCoeff(), -1e-10);
    }
  }
}

TEST(Metrization, ShrinkingShiftsGiveDecreasingMmd) {
  const Kernel k = Kernel::gaussian(1.0);
  const auto target = GaussianMixture::normal(v1(0), v1(1));
  double prev = 1e9;
  for (int n : {1, 2, 4, 8, 16}) {
    const auto mu_n = GaussianMixture::normal(v1(1.0 / n), v1(1));
    std::vector<double> vals;
    for (int s = 0; s < 20; ++s) {
      vals.push_back(mmd_sq_analytic_target(k, EmpiricalMeasure(mu_n.sample(10000, s, make_stream(StreamTag::user, n))),
                                            target));
    }
    const double med = stats::median(vals);
    EXPECT_LT(med, prev) << "n = " << n;
    prev = med;
  }
}

TEST(PairwiseSum, CompensatedMatchesLongDouble) {
  const Matrix x = random_points(3000, 1, 77);
  long double ref = 0.0L;
  for (int i = 0; i < 3000; ++i) {
    for (int j = 0; j < 3000; ++j) {
      if (i != j) ref += std::exp(-static_cast<long double>((x(i, 0) - x(j, 0)) * (x(i, 0) - x(j, 0))));
    }
  }
  const double got = detail::pairwise_sum(Kernel::gaussian(1.0), x, x, true);
  EXPECT_NEAR(got, static_cast<double>(ref), 1e-12 * static_cast<double>(ref));
}
