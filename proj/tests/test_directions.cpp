#include <gtest/gtest.h>

#include <set>

#include "support.hpp"

using namespace zokw;
using zokw::testing::max_abs_diff;
using zokw::testing::random_psd;

namespace {

std::vector<DirectionDistribution> all_kinds(std::size_t d) {
  Vector p(d);
  for (std::size_t k = 0; k < d; ++k) p[k] = static_cast<double>(k + 1);
  const double total = std::accumulate(p.begin(), p.end(), 0.0);
  for (double& x : p) x /= total;
  return {DirectionDistribution::gaussian(d), DirectionDistribution::spherical(d), DirectionDistribution::canonical(d),
          DirectionDistribution::orthonormal(random_orthonormal(d, 77)), DirectionDistribution::nonuniform(p)};
}

}  // namespace

TEST(Sample, CanonicalDrawsScaledBasisUniformly) {
  const auto dist = DirectionDistribution::canonical(3);
  Rng rng(1);
  std::array<int, 3> counts{};
  const int draws = 30000;
  for (int i = 0; i < draws; ++i) {
    const Vector v = sample(dist, rng);
    int hit = -1;
    for (int k = 0; k < 3; ++k) {
      if (v[k] != 0.0) {
        EXPECT_EQ(hit, -1);
        EXPECT_DOUBLE_EQ(v[k], std::sqrt(3.0));
        hit = k;
      }
    }
    ASSERT_GE(hit, 0);
    ++counts[hit];
  }
  for (int c : counts) EXPECT_NEAR(c / static_cast<double>(draws), 1.0 / 3.0, 0.015);
}

TEST(Sample, NonuniformRejectsInvalidProbabilities) {
  EXPECT_THROW(DirectionDistribution::nonuniform(Vector{1.0, 0.0, 0.0}), std::invalid_argument);
  EXPECT_THROW(DirectionDistribution::nonuniform(Vector{0.5, 0.6}), std::invalid_argument);
  EXPECT_NO_THROW(DirectionDistribution::nonuniform(Vector{0.25, 0.75}));
}

TEST(Sample, SphericalHasExactNorm) {
  const auto dist = DirectionDistribution::spherical(2);
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    const Vector v = sample(dist, rng);
    EXPECT_NEAR(dot(v, v), 2.0, 1e-12);
  }
}

TEST(Sample, BasisKindsSatisfyConstraint) {
  Rng rng(3);
  const Matrix u = random_orthonormal(4, 5);
  const auto orth = DirectionDistribution::orthonormal(u);
  for (int i = 0; i < 200; ++i) {
    const Vector v = sample(orth, rng);
    bool matched = false;
    for (std::size_t k = 0; k < 4; ++k) {
      double err = 0.0;
      for (std::size_t j = 0; j < 4; ++j) err = std::max(err, std::abs(v[j] - 2.0 * u(j, k)));
      matched = matched || err < 1e-12;
    }
    EXPECT_TRUE(matched);
  }
  const auto nonu = DirectionDistribution::nonuniform(Vector{0.1, 0.2, 0.7});
  for (int i = 0; i < 200; ++i) {
    const Vector v = sample(nonu, rng);
    const Vector p = nonu.probabilities();
    for (std::size_t k = 0; k < 3; ++k)
      if (v[k] != 0.0) EXPECT_NEAR(v[k], std::sqrt(1.0 / p[k]), 1e-12);
  }
}

TEST(Sample, SecondMomentIsIdentityForAllKinds) {
  const std::size_t d = 5;
  for (const auto& dist : all_kinds(d)) {
    Rng rng(4);
    SymMatrix acc(d);
    const int draws = 1000000;
    Vector v(d);
    for (int i = 0; i < draws; ++i) {
      dist.sample_into(rng, v);
      acc.add_outer(v, 1.0 / draws);
    }
    EXPECT_LT(max_abs_diff(acc, SymMatrix::identity(d)), 0.01) << to_string(dist.kind());
  }
}

TEST(SampleBatch, WithoutReplacementExhaustsBasis) {
  const auto dist = DirectionDistribution::canonical(3);
  Rng rng(5);
  for (int t = 0; t < 100; ++t) {
    const Matrix b = sample_batch(dist, {3, Replacement::Without}, rng);
    std::set<std::size_t> seen;
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t k = 0; k < 3; ++k)
        if (b(j, k) != 0.0) {
          EXPECT_DOUBLE_EQ(b(j, k), std::sqrt(3.0));
          seen.insert(k);
        }
    EXPECT_EQ(seen.size(), 3u);
  }
}

TEST(SampleBatch, SingleDrawMatchesSample) {
  const auto dist = DirectionDistribution::spherical(4);
  Rng a(6), b(6);
  for (int t = 0; t < 10; ++t) {
    const Matrix batch = sample_batch(dist, {1, Replacement::With}, a);
    const Vector v = sample(dist, b);
    for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(batch(0, k), v[k]);
  }
}

TEST(SampleBatch, WithoutReplacementIndicesDistinct) {
  const auto dist = DirectionDistribution::canonical(5);
  Rng rng(7);
  std::array<int, 5> first{};
  for (int t = 0; t < 10000; ++t) {
    const Matrix b = sample_batch(dist, {2, Replacement::Without}, rng);
    std::size_t i0 = 99, i1 = 99;
    for (std::size_t k = 0; k < 5; ++k) {
      if (b(0, k) != 0.0) i0 = k;
      if (b(1, k) != 0.0) i1 = k;
    }
    ASSERT_NE(i0, i1);
    ++first[i0];
  }
  for (int c : first) EXPECT_NEAR(c / 10000.0, 0.2, 0.02);
}

TEST(QueryMode, Validation) {
  EXPECT_THROW(validate(QueryMode{2, Replacement::Without}, DirectionDistribution::gaussian(4)), std::invalid_argument);
  EXPECT_THROW(validate(QueryMode{5, Replacement::Without}, DirectionDistribution::canonical(4)), std::invalid_argument);
  EXPECT_THROW(validate(QueryMode{0, Replacement::With}, DirectionDistribution::canonical(4)), std::invalid_argument);
  EXPECT_NO_THROW(validate(QueryMode{8, Replacement::With}, DirectionDistribution::canonical(4)));
}

TEST(AnalyticQ, StandardExamples) {
  const std::size_t d = 6;
  const SymMatrix id = SymMatrix::identity(d);
  EXPECT_LT(max_abs_diff(analytic_q(DirectionDistribution::gaussian(d), id), (d + 2.0) * id), 1e-14);
  EXPECT_LT(max_abs_diff(analytic_q(DirectionDistribution::canonical(d), id), static_cast<double>(d) * id), 1e-14);
  EXPECT_LT(max_abs_diff(analytic_q(DirectionDistribution::spherical(d), id), static_cast<double>(d) * id), 1e-13);
  EXPECT_LT(max_abs_diff(analytic_q(DirectionDistribution::orthonormal(random_orthonormal(d, 3)), id),
                         static_cast<double>(d) * id),
            1e-12);
  const SymMatrix s = SymMatrix::diagonal(Vector{1.0, 0.5});
  EXPECT_LT(max_abs_diff(analytic_q(DirectionDistribution::spherical(2), s), SymMatrix::diagonal(Vector{1.75, 1.25})),
            1e-14);
}

TEST(AnalyticQ, RotatedBasisTwoDimensional) {
  // U at angle pi/4 on S = diag(1, r0) gives Q = diag(1 + r0, 1 + r0)
  const double c = 1.0 / std::sqrt(2.0);
  const Matrix u = Matrix::from_rows({{c, -c}, {c, c}});
  const SymMatrix q = analytic_q(DirectionDistribution::orthonormal(u), SymMatrix::diagonal(Vector{1.0, 0.3}));
  EXPECT_LT(max_abs_diff(q, SymMatrix::diagonal(Vector{1.3, 1.3})), 1e-14);
}

TEST(AnalyticQ, MonteCarloOracleSmall) {
  const std::size_t d = 5;
  Rng srng(8);
  const SymMatrix s = random_psd(d, srng);
  for (const auto& dist : all_kinds(d)) {
    Rng rng(9);
    SymMatrix acc(d);
    Vector v(d);
    const int draws = 200000;
    for (int i = 0; i < draws; ++i) {
      dist.sample_into(rng, v);
      acc.add_outer(v, s.quadratic_form(v) / draws);
    }
    const SymMatrix q = analytic_q(dist, s);
    for (std::size_t k = 0; k < d; ++k)
      for (std::size_t l = 0; l < d; ++l)
        EXPECT_NEAR(acc(k, l), q(k, l), 0.05 * (1.0 + std::abs(q(k, l)))) << to_string(dist.kind());
  }
}

TEST(AnalyticQ, LoewnerDominatesGram) {
  Rng rng(10);
  for (std::size_t d = 1; d <= 10; ++d) {
    const SymMatrix s = random_psd(d, rng);
    for (const auto& dist : all_kinds(d)) EXPECT_GE(min_eigenvalue(analytic_q(dist, s) - s), -1e-10);
    const SymMatrix gap = analytic_q(DirectionDistribution::gaussian(d), s) - analytic_q(DirectionDistribution::spherical(d), s);
    EXPECT_GE(min_eigenvalue(gap), -1e-10);
  }
}

TEST(AnalyticQMulti, Blends) {
  const std::size_t d = 5;
  Rng rng(11);
  const SymMatrix s = random_psd(d, rng);
  const auto canon = DirectionDistribution::canonical(d);
  const SymMatrix q = analytic_q(canon, s);
  EXPECT_LT(max_abs_diff(analytic_q_multi(canon, s, {1, Replacement::With}), q), 1e-15);
  EXPECT_LT(max_abs_diff(analytic_q_multi(canon, s, {1, Replacement::Without}), q), 1e-15);
  EXPECT_EQ(max_abs_diff(analytic_q_multi(canon, s, {d, Replacement::Without}), s), 0.0);
  for (std::size_t m : {2u, 10u, 1000u}) {
    const SymMatrix qm = analytic_q_multi(canon, s, {m, Replacement::With});
    EXPECT_NEAR(spectral_norm(qm - s), spectral_norm(q - s) / static_cast<double>(m), 1e-12);
  }
  EXPECT_THROW(analytic_q_multi(DirectionDistribution::spherical(d), s, {2, Replacement::Without}), std::invalid_argument);
}

TEST(AnalyticQMulti, WithoutReplacementMonteCarlo) {
  const std::size_t d = 5;
  Rng srng(12);
  const SymMatrix s = random_psd(d, srng);
  const auto dist = DirectionDistribution::orthonormal(random_orthonormal(d, 4));
  const QueryMode mode{3, Replacement::Without};
  Rng rng(13);
  SymMatrix acc(d);
  const int draws = 200000;
  for (int t = 0; t < draws; ++t) {
    const Matrix b = sample_batch(dist, mode, rng);
    Matrix avg(d, d);
    for (std::size_t j = 0; j < mode.m; ++j)
      for (std::size_t k = 0; k < d; ++k)
        for (std::size_t l = 0; l < d; ++l) avg(k, l) += b(j, k) * b(j, l) / static_cast<double>(mode.m);
    acc.add_symmetric_part(avg * s.matrix() * avg, 1.0 / draws);
  }
  const SymMatrix expected = analytic_q_multi(dist, s, mode);
  EXPECT_LT(max_abs_diff(acc, expected), 0.03 * (1.0 + expected.max_abs()));
}

TEST(NonAveraged, Examples) {
  const SymMatrix id = SymMatrix::identity(3);
  EXPECT_LT(max_abs_diff(nonavg_covariance(id, id, 2.0), id), 1e-14);
  const SymMatrix got = nonavg_covariance(SymMatrix::identity(2), SymMatrix::diagonal(Vector{1, 3}), 1.0);
  EXPECT_LT(max_abs_diff(got, SymMatrix::diagonal(Vector{0.5, 1.0 / 6.0})), 1e-14);
  Rng rng(14);
  const SymMatrix q = random_psd(4, rng);
  const SymMatrix h = random_psd(4, rng);
  EXPECT_LT(max_abs_diff(nonavg_covariance(q, h, 2.0), 2.0 * nonavg_covariance(q, h, 1.0)), 1e-12);
  EXPECT_THROW(nonavg_covariance(id, SymMatrix::diagonal(Vector{1, 0, 1}), 1.0), std::exception);
}

TEST(NonAveraged, SolvesLyapunovEquation) {
  // H M + M H = eta0 Q is the defining relation of the stationary covariance
  Rng rng(15);
  const SymMatrix q = random_psd(5, rng);
  const SymMatrix h = random_psd(5, rng);
  const SymMatrix m = nonavg_covariance(q, h, 0.7);
  const Matrix lhs = h.matrix() * m.matrix() + m.matrix() * h.matrix();
  EXPECT_LT(zokw::testing::max_abs_diff(lhs, (0.7 * q).matrix()), 1e-10);
}

TEST(NonUniform, WeightedFirstCoordinateVariance) {
  const std::size_t d = 4;
  Rng rng(16);
  const SymMatrix s = random_psd(d, rng);
  const double p = 0.1;
  Vector probs(d, p / (d - 1.0));
  probs[0] = 1.0 - p;
  const SymMatrix q = analytic_q(DirectionDistribution::nonuniform(probs), s);
  const SymMatrix cov = sandwich(SymMatrix::identity(d), q);
  EXPECT_NEAR(cov(0, 0), s(0, 0) / (1.0 - p), 1e-14);
}
