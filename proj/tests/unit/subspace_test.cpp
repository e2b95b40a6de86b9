#include <gtest/gtest.h>

#include "oracles.hpp"
#include "pct/errors.hpp"
#include "pct/subspace.hpp"

using namespace pct;
using namespace pct::subspace;
using pct::testing::gaussian_matrix;

namespace {

Vector unit(Eigen::Index d, Eigen::Index i) {
  Vector v = Vector::Zero(d);
  v(i) = 1.0;
  return v;
}

double max_abs(const Matrix& m) { return m.cwiseAbs().maxCoeff(); }

}  // namespace

TEST(OrthComplement, FirstAxis) {
  const Matrix p = orth_complement_projector(unit(2, 0));
  EXPECT_NEAR(max_abs(p - Vector(Eigen::Vector2d(0, 1)).asDiagonal().toDenseMatrix()), 0.0, 1e-15);
}

TEST(OrthComplement, IdempotentAndAnnihilatesH) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Matrix h = gaussian_matrix(6, 2, seed);
    const Matrix p = orth_complement_projector(h);
    EXPECT_LT(max_abs(p * p - p), 1e-10);
    EXPECT_LT(max_abs(p * h), 1e-10);
  }
}

TEST(OrthComplement, RankDeficientThrows) {
  Matrix h(3, 2);
  h << 1, 2, 1, 2, 1, 2;
  EXPECT_THROW(orth_complement_projector(h), SingularityError);
}

TEST(Oblique, OrthogonalSubspaces) {
  const Matrix e = oblique_projector(unit(3, 1), unit(3, 0));
  const Vector x = Eigen::Vector3d(3, 5, 7);
  EXPECT_LT((e * x - Vector(Eigen::Vector3d(0, 5, 0))).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Oblique, ProjectorProperties) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Matrix h = gaussian_matrix(8, 2, 2 * seed), s = gaussian_matrix(8, 3, 2 * seed + 1);
    const Matrix e = oblique_projector(s, h);
    EXPECT_LT(max_abs(e * h), 1e-10);
    EXPECT_LT(max_abs(e * s - s), 1e-10);
    EXPECT_LT(max_abs(e * e - e), 1e-10);
  }
}

TEST(Oblique, IntersectingRangesThrow) {
  const Matrix h = gaussian_matrix(5, 2, 1);
  Matrix s(5, 2);
  s << h.col(0), gaussian_matrix(5, 1, 2);
  EXPECT_THROW(oblique_projector(s, h), SingularityError);
}

TEST(Decompose, NoiselessRecovery) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Matrix h = gaussian_matrix(16, 3, 3 * seed), s = gaussian_matrix(16, 2, 3 * seed + 1);
    const Vector th = gaussian_matrix(3, 1, 3 * seed + 2).col(0), ts = gaussian_matrix(2, 1, 7 * seed + 5).col(0);
    const Decomposition d = decompose(h * th + s * ts, h, s);
    EXPECT_LT((d.noise - s * ts).norm() / (s * ts).norm(), 1e-8);
    EXPECT_LT((d.identity - h * th).norm() / (h * th).norm(), 1e-8);
  }
}

TEST(Decompose, PureIdentitySignalHasNoNoise) {
  const Matrix h = gaussian_matrix(6, 2, 4), s = gaussian_matrix(6, 2, 5);
  const Decomposition d = decompose(h * Eigen::Vector2d(1.5, -2.0), h, s);
  EXPECT_LT(d.noise.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Decompose, ResidualOrthogonalToBothRanges) {
  LinearSignalModel m{gaussian_matrix(10, 3, 8), gaussian_matrix(10, 2, 9), Eigen::Vector3d(1, -1, 2),
                      Eigen::Vector2d(0.5, 3), 0.3};
  const Sample smp = sample(m, 42);
  const Decomposition d = decompose(smp.observed, m.identity_system, m.noise_system);
  EXPECT_LT((m.identity_system.transpose() * d.residual).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LT((m.noise_system.transpose() * d.residual).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Decompose, DimensionMismatchThrows) {
  EXPECT_THROW(decompose(Vector::Zero(4), gaussian_matrix(5, 1, 1), gaussian_matrix(5, 1, 2)), DimensionError);
}

TEST(Sample, ZeroSigmaIsExact) {
  LinearSignalModel m{gaussian_matrix(7, 2, 1), gaussian_matrix(7, 2, 2), Eigen::Vector2d(1, 2), Eigen::Vector2d(3, 4),
                      0.0};
  const Sample smp = sample(m, 5);
  EXPECT_EQ(smp.observed, Vector(m.identity_system * m.identity_coeffs + m.noise_system * m.noise_coeffs));
}

TEST(Sample, SameSeedSameSample) {
  LinearSignalModel m{gaussian_matrix(7, 2, 1), gaussian_matrix(7, 2, 2), Eigen::Vector2d(1, 2), Eigen::Vector2d(3, 4),
                      0.7};
  EXPECT_EQ(sample(m, 9).observed, sample(m, 9).observed);
  EXPECT_NE(sample(m, 9).observed, sample(m, 10).observed);
}

TEST(Sample, NoiseMeanIsZero) {
  const double sigma = 0.5;
  LinearSignalModel m{gaussian_matrix(10, 2, 1), gaussian_matrix(10, 2, 2), Eigen::Vector2d(1, 2),
                      Eigen::Vector2d(3, 4), sigma};
  double total = 0.0;
  std::size_t count = 0;
  for (std::uint64_t seed = 0; seed < 10000; ++seed) {
    const Sample smp = sample(m, seed);
    total += smp.truth.residual.sum();
    count += static_cast<std::size_t>(smp.truth.residual.size());
  }
  ASSERT_EQ(count, 100000u);
  EXPECT_LT(std::abs(total / static_cast<double>(count)), 3 * sigma / std::sqrt(1e5));
}

TEST(Sample, InvalidModelThrows) {
  LinearSignalModel m{gaussian_matrix(4, 2, 1), gaussian_matrix(4, 3, 2), Eigen::Vector2d(1, 2), Eigen::Vector3d(1, 2, 3),
                      0.1};
  EXPECT_THROW(sample(m, 1), SingularityError);
}

TEST(Bridge, TensorRoundTrip) {
  const Matrix m = gaussian_matrix(3, 4, 6);
  EXPECT_EQ(matrix_from_tensor(to_tensor(m)), m);
  const Vector v = m.col(1);
  EXPECT_EQ(vector_from_tensor(to_tensor(v)), v);
}
