#include "pct/subspace.hpp"

#include <cmath>
#include <random>
#include <string>

#include "pct/errors.hpp"

namespace pct::subspace {

namespace {

std::string dims(const Matrix& m) { return std::to_string(m.rows()) + "x" + std::to_string(m.cols()); }

// Solves G X = R through an SVD of G, refusing singular or ill-conditioned G.
Matrix guarded_solve(const Matrix& gram, const Matrix& rhs, const char* what) {
  Eigen::JacobiSVD<Matrix> svd(gram, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& sv = svd.singularValues();
  const double largest = sv(0);
  const double smallest = sv(sv.size() - 1);
  if (!(smallest > 0.0) || largest / smallest > kMaxCondition) {
    throw SingularityError(std::string(what) + " is singular or ill-conditioned (cond " +
                           std::to_string(smallest > 0.0 ? largest / smallest : INFINITY) + ")");
  }
  return svd.matrixV() * sv.cwiseInverse().asDiagonal() * svd.matrixU().transpose() * rhs;
}

void require_full_column_rank(const Matrix& m, const char* name) {
  if (m.cols() == 0 || m.rows() < m.cols() || numerical_rank(m) != m.cols()) {
    throw SingularityError(std::string(name) + " (" + dims(m) + ") does not have full column rank");
  }
}

void require_disjoint(const Matrix& h, const Matrix& s) {
  if (h.rows() != s.rows()) {
    throw DimensionError("systems have different ambient dimensions: " + dims(h) + " vs " + dims(s));
  }
  Matrix joint(h.rows(), h.cols() + s.cols());
  joint << h, s;
  if (numerical_rank(joint) != joint.cols()) {
    throw SingularityError("Range(H) and Range(S) intersect: rank [H S] < " + std::to_string(joint.cols()));
  }
}

}  // namespace

void LinearSignalModel::validate() const {
  require_full_column_rank(identity_system, "identity system");
  require_full_column_rank(noise_system, "noise system");
  require_disjoint(identity_system, noise_system);
  if (identity_coeffs.size() != identity_system.cols() || noise_coeffs.size() != noise_system.cols()) {
    throw DimensionError("coefficient vectors do not match system widths");
  }
  if (!(noise_sigma >= 0.0)) throw ConfigError("noise sigma must be nonnegative");
}

Eigen::Index numerical_rank(const Matrix& m, double relative_tol) {
  if (m.size() == 0) return 0;
  Eigen::JacobiSVD<Matrix> svd(m);
  const Vector& sv = svd.singularValues();
  if (sv(0) == 0.0) return 0;
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    if (sv(i) > relative_tol * sv(0)) ++rank;
  }
  return rank;
}

Matrix orth_complement_projector(const Matrix& h) {
  require_full_column_rank(h, "H");
  const Matrix gram = h.transpose() * h;
  const Matrix p = Matrix::Identity(h.rows(), h.rows()) - h * guarded_solve(gram, h.transpose(), "H^T H");
  return p;
}

Matrix oblique_projector(const Matrix& s, const Matrix& h) {
  require_full_column_rank(s, "S");
  require_disjoint(h, s);
  const Matrix p = orth_complement_projector(h);
  const Matrix st_p = s.transpose() * p;
  return s * guarded_solve(st_p * s, st_p, "S^T P_H S");
}

Decomposition decompose(const Vector& observed, const Matrix& h, const Matrix& s) {
  if (observed.size() != h.rows()) {
    throw DimensionError("observation has " + std::to_string(observed.size()) + " entries, systems have " +
                         std::to_string(h.rows()) + " rows");
  }
  Decomposition out;
  out.noise = oblique_projector(s, h) * observed;
  out.identity = oblique_projector(h, s) * observed;
  out.residual = observed - out.identity - out.noise;
  return out;
}

Sample sample(const LinearSignalModel& model, std::uint64_t seed) {
  model.validate();
  Sample out;
  out.truth.identity = model.identity_system * model.identity_coeffs;
  out.truth.noise = model.noise_system * model.noise_coeffs;
  out.truth.residual = Vector::Zero(model.identity_system.rows());
  if (model.noise_sigma > 0.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, model.noise_sigma);
    for (Eigen::Index i = 0; i < out.truth.residual.size(); ++i) out.truth.residual(i) = dist(rng);
  }
  out.observed = out.truth.identity + out.truth.noise + out.truth.residual;
  return out;
}

Tensor to_tensor(const Matrix& m) {
  std::vector<double> values(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) values[static_cast<std::size_t>(r * m.cols() + c)] = m(r, c);
  }
  return Tensor::from({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())}, std::move(values));
}

Tensor to_tensor(const Vector& v) {
  return Tensor::from({static_cast<std::size_t>(v.size())}, std::vector<double>(v.data(), v.data() + v.size()));
}

Matrix matrix_from_tensor(const Tensor& t) {
  if (t.rank() != 2) throw DimensionError("expected a rank-2 tensor, got " + to_string(t.shape()));
  const auto rows = static_cast<Eigen::Index>(t.dim(0));
  const auto cols = static_cast<Eigen::Index>(t.dim(1));
  Matrix m(rows, cols);
  auto d = t.data();
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = d[static_cast<std::size_t>(r * cols + c)];
  }
  return m;
}

Vector vector_from_tensor(const Tensor& t) {
  if (t.rank() != 1) throw DimensionError("expected a rank-1 tensor, got " + to_string(t.shape()));
  auto d = t.data();
  return Eigen::Map<const Vector>(d.data(), static_cast<Eigen::Index>(d.size()));
}

}  // namespace pct::subspace
