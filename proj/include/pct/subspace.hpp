#pragma once

#include <cstdint>
#include <utility>

#include <Eigen/Dense>

#include "pct/tensor.hpp"

// Exact linear decomposition of an observation x = H*theta_h + S*theta_s + e
// into its identity part (Range H) and structured-noise part (Range S) with
// oblique projectors. Used to synthesise ground truth and as a reference for
// the learned decomposition.
namespace pct::subspace {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Systems whose Gram matrices exceed this condition number are rejected.
inline constexpr double kMaxCondition = 1e10;
// Relative singular-value threshold used to decide that [H S] has full rank.
inline constexpr double kRankTolerance = 1e-8;

struct LinearSignalModel {
  Matrix identity_system;  // D x k_h
  Matrix noise_system;     // D x k_s
  Vector identity_coeffs;  // k_h
  Vector noise_coeffs;     // k_s
  double noise_sigma = 0.0;

  // Throws SingularityError unless both systems have full column rank and
  // their ranges intersect only at zero.
  void validate() const;
};

struct Decomposition {
  Vector identity;  // estimate of H*theta_h
  Vector noise;     // estimate of S*theta_s
  Vector residual;  // x - identity - noise
};

// Numerical rank of `m` relative to its largest singular value.
Eigen::Index numerical_rank(const Matrix& m, double relative_tol = kRankTolerance);

// I - H (H^T H)^{-1} H^T
Matrix orth_complement_projector(const Matrix& h);

// E_{S|H} = S (S^T P S)^{-1} S^T P with P the complement projector of H:
// projects onto Range(S) along Range(H).
Matrix oblique_projector(const Matrix& s, const Matrix& h);

Decomposition decompose(const Vector& observed, const Matrix& h, const Matrix& s);

struct Sample {
  Vector observed;
  Decomposition truth;  // residual holds the drawn measurement noise
};

Sample sample(const LinearSignalModel& model, std::uint64_t seed);

// Tensor bridges for the PCT1 file format (vectors become rank-1 tensors).
Tensor to_tensor(const Matrix& m);
Tensor to_tensor(const Vector& v);
Matrix matrix_from_tensor(const Tensor& t);
Vector vector_from_tensor(const Tensor& t);

}  // namespace pct::subspace
