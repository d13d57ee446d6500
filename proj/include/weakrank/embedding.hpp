#pragma once

// Embedding store plus the per-model feature transforms applied before
// retrieval: whitening fitted on database rows only, L2 normalization and
// concatenation of ensemble members along the feature axis.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include <Eigen/Dense>

#include "weakrank/error.hpp"
#include "weakrank/io.hpp"
#include "weakrank/matrix.hpp"

namespace weakrank {

/// N x d float32 rows, each with a unique string id.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;

  EmbeddingMatrix(std::vector<std::string> ids, std::size_t dim, std::vector<float> data)
      : ids_(std::move(ids)), dim_(dim), data_(std::move(data)) {
    if (data_.size() != ids_.size() * dim_) {
      fail(ErrorKind::ShapeMismatch, "embedding data has " + std::to_string(data_.size()) + " values for " +
                                         std::to_string(ids_.size()) + " rows of dim " + std::to_string(dim_));
    }
    std::unordered_set<std::string> seen;
    seen.reserve(ids_.size());
    for (const auto& id : ids_) {
      if (!seen.insert(id).second) fail(ErrorKind::DuplicateId, "duplicate embedding id `" + id + "`");
    }
    for (std::size_t i = 0; i < data_.size(); ++i) {
      if (!std::isfinite(data_[i])) {
        fail(ErrorKind::NonFiniteInput, "non-finite value in row `" + ids_[i / std::max<std::size_t>(dim_, 1)] + "`");
      }
    }
  }

  std::size_t rows() const noexcept { return ids_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  const std::vector<std::string>& ids() const noexcept { return ids_; }
  const std::string& id(std::size_t i) const { return ids_[i]; }
  const std::vector<float>& data() const noexcept { return data_; }
  std::span<const float> row(std::size_t i) const { return {data_.data() + i * dim_, dim_}; }

  EmbeddingMatrix subset(std::span<const std::size_t> indices) const {
    std::vector<std::string> ids;
    std::vector<float> data;
    ids.reserve(indices.size());
    data.reserve(indices.size() * dim_);
    for (const std::size_t i : indices) {
      ids.push_back(ids_[i]);
      const auto r = row(i);
      data.insert(data.end(), r.begin(), r.end());
    }
    return EmbeddingMatrix(std::move(ids), dim_, std::move(data));
  }

  friend bool operator==(const EmbeddingMatrix&, const EmbeddingMatrix&) = default;

 private:
  std::vector<std::string> ids_;
  std::size_t dim_ = 0;
  std::vector<float> data_;
};

// ---------------------------------------------------------------------------
// .emb file format (all integers little-endian):
//   "WRK1" | u32 version=1 | u32 N | u32 d | N*d f32 row-major |
//   u32 id_count | id_count * (u16 byte_len, UTF-8 bytes)

inline constexpr char kEmbMagic[4] = {'W', 'R', 'K', '1'};
inline constexpr std::uint32_t kEmbVersion = 1;

inline std::string encode_embeddings(const EmbeddingMatrix& m) {
  io::ByteWriter w;
  w.bytes(std::string_view(kEmbMagic, 4));
  w.u32(kEmbVersion);
  w.u32(static_cast<std::uint32_t>(m.rows()));
  w.u32(static_cast<std::uint32_t>(m.dim()));
  for (const float v : m.data()) w.f32(v);
  w.u32(static_cast<std::uint32_t>(m.rows()));
  for (const auto& id : m.ids()) {
    if (id.size() > 0xFFFF) fail(ErrorKind::InvalidArgument, "embedding id longer than 65535 bytes");
    w.u16(static_cast<std::uint16_t>(id.size()));
    w.bytes(id);
  }
  return w.buffer();
}

inline EmbeddingMatrix decode_embeddings(std::string_view bytes, const std::string& what = "embedding file") {
  io::ByteReader r(bytes, what);
  if (r.remaining() < 4 || r.bytes(4) != std::string_view(kEmbMagic, 4)) fail(ErrorKind::CorruptFile, what + ": bad magic");
  const std::uint32_t version = r.u32();
  if (version != kEmbVersion) {
    fail(ErrorKind::VersionMismatch, what + ": version " + std::to_string(version) + ", expected " +
                                         std::to_string(kEmbVersion));
  }
  const std::uint64_t n = r.u32();
  const std::uint64_t d = r.u32();
  r.need(n * d * 4);
  std::vector<float> data(n * d);
  for (auto& v : data) v = r.f32();
  const std::uint32_t count = r.u32();
  if (count != n) fail(ErrorKind::CorruptFile, what + ": id table has " + std::to_string(count) + " ids for " + std::to_string(n) + " rows");
  std::vector<std::string> ids;
  ids.reserve(n);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t len = r.u16();
    ids.emplace_back(r.bytes(len));
  }
  if (r.remaining() != 0) fail(ErrorKind::CorruptFile, what + ": trailing bytes after id table");
  try {
    return EmbeddingMatrix(std::move(ids), d, std::move(data));
  } catch (const Error& e) {
    fail(ErrorKind::CorruptFile, what + ": " + e.what());
  }
}

inline void save_embeddings(const EmbeddingMatrix& m, const std::string& path) { io::write_file(path, encode_embeddings(m)); }

inline EmbeddingMatrix load_embeddings(const std::string& path) { return decode_embeddings(io::read_file(path), path); }

// ---------------------------------------------------------------------------

/// Scales every row to unit Euclidean norm; a zero row is an error.
inline EmbeddingMatrix l2_normalize(const EmbeddingMatrix& m) {
  std::vector<float> out(m.data().size());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const auto r = m.row(i);
    double sq = 0.0;
    for (const float v : r) sq += static_cast<double>(v) * v;
    if (!(sq > 0.0)) fail(ErrorKind::ZeroNormRow, "row " + std::to_string(i) + " (`" + m.id(i) + "`) has zero norm");
    const double inv = 1.0 / std::sqrt(sq);
    for (std::size_t j = 0; j < r.size(); ++j) out[i * m.dim() + j] = static_cast<float>(r[j] * inv);
  }
  return EmbeddingMatrix(m.ids(), m.dim(), std::move(out));
}

struct MeanCov {
  std::vector<double> mean;
  MatrixD cov;  // population covariance, (1/N) sum (x - mu)^T (x - mu)
};

inline MeanCov compute_mean_cov(const EmbeddingMatrix& db) {
  if (db.rows() < 2) fail(ErrorKind::TooFewRows, "covariance needs at least 2 rows, got " + std::to_string(db.rows()));
  const auto n = static_cast<Eigen::Index>(db.rows());
  const auto d = static_cast<Eigen::Index>(db.dim());
  Eigen::MatrixXd x(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto r = db.row(static_cast<std::size_t>(i));
    for (Eigen::Index j = 0; j < d; ++j) x(i, j) = r[static_cast<std::size_t>(j)];
  }
  const Eigen::RowVectorXd mu = x.colwise().mean();
  x.rowwise() -= mu;
  Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(n);
  cov = 0.5 * (cov + cov.transpose()).eval();

  MeanCov out{std::vector<double>(mu.data(), mu.data() + d), MatrixD(db.dim(), db.dim())};
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) out.cov(i, j) = cov(i, j);
  }
  return out;
}

/// x -> (x - mean) W with W = U diag((lambda + eps_reg)^-1/2), eigenvalues
/// descending, each eigenvector's largest-magnitude component positive.
struct WhiteningTransform {
  std::vector<double> mean;
  MatrixD matrix;
  double eps_reg = 0.0;

  std::size_t dim() const noexcept { return mean.size(); }

  static WhiteningTransform identity(std::size_t d) {
    WhiteningTransform t{std::vector<double>(d, 0.0), MatrixD(d, d), 0.0};
    for (std::size_t i = 0; i < d; ++i) t.matrix(i, i) = 1.0;
    return t;
  }
};

inline WhiteningTransform fit_whitening(const std::vector<double>& mean, const MatrixD& cov, double eps_reg = 1e-6) {
  const std::size_t d = mean.size();
  if (cov.rows() != d || cov.cols() != d) fail(ErrorKind::DimensionMismatch, "covariance shape does not match mean");
  if (!(eps_reg >= 0.0)) fail(ErrorKind::InvalidArgument, "eps_reg must be >= 0");
  Eigen::MatrixXd sigma(d, d);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      if (std::abs(cov(i, j) - cov(j, i)) > 1e-9 * (1.0 + std::abs(cov(i, j)))) {
        fail(ErrorKind::InvalidArgument, "covariance is not symmetric");
      }
      sigma(i, j) = cov(i, j);
    }
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(sigma);
  if (solver.info() != Eigen::Success) fail(ErrorKind::EigenFailure, "symmetric eigendecomposition did not converge");
  const Eigen::VectorXd& lambda = solver.eigenvalues();   // ascending
  const Eigen::MatrixXd& vectors = solver.eigenvectors();

  WhiteningTransform t{mean, MatrixD(d, d), eps_reg};
  for (std::size_t k = 0; k < d; ++k) {
    const auto src = static_cast<Eigen::Index>(d - 1 - k);
    const double value = std::max(lambda(src), 0.0) + eps_reg;
    if (!(value > 0.0)) {
      fail(ErrorKind::InvalidArgument, "covariance is singular; whitening needs eps_reg > 0");
    }
    Eigen::Index pivot = 0;
    for (Eigen::Index i = 1; i < static_cast<Eigen::Index>(d); ++i) {
      if (std::abs(vectors(i, src)) > std::abs(vectors(pivot, src))) pivot = i;
    }
    const double sign = vectors(pivot, src) < 0.0 ? -1.0 : 1.0;
    const double scale = sign / std::sqrt(value);
    for (std::size_t i = 0; i < d; ++i) t.matrix(i, k) = vectors(static_cast<Eigen::Index>(i), src) * scale;
  }
  for (const double v : t.matrix.data()) {
    if (!std::isfinite(v)) fail(ErrorKind::EigenFailure, "whitening matrix is not finite");
  }
  return t;
}

/// Fit from database rows only. Queries go through apply_whitening with the
/// returned transform and never contribute statistics.
inline WhiteningTransform fit_whitening(const EmbeddingMatrix& db, double eps_reg = 1e-6) {
  const auto stats = compute_mean_cov(db);
  return fit_whitening(stats.mean, stats.cov, eps_reg);
}

inline EmbeddingMatrix apply_whitening(const EmbeddingMatrix& m, const WhiteningTransform& t) {
  const std::size_t d = t.dim();
  if (m.dim() != d) {
    fail(ErrorKind::DimensionMismatch, "embeddings have dim " + std::to_string(m.dim()) + ", transform expects " + std::to_string(d));
  }
  std::vector<float> out(m.rows() * d);
  std::vector<double> centered(d);
  std::vector<double> acc(d);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const auto r = m.row(i);
    for (std::size_t j = 0; j < d; ++j) centered[j] = r[j] - t.mean[j];
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t j = 0; j < d; ++j) {
      const double c = centered[j];
      const auto w = t.matrix.row(j);
      for (std::size_t k = 0; k < d; ++k) acc[k] += c * w[k];
    }
    for (std::size_t k = 0; k < d; ++k) out[i * d + k] = static_cast<float>(acc[k]);
  }
  return EmbeddingMatrix(m.ids(), d, std::move(out));
}

/// Joins per-model embeddings along the feature axis. All inputs must list
/// the same ids in the same order.
inline EmbeddingMatrix ensemble_concat(std::span<const EmbeddingMatrix> models) {
  if (models.empty()) fail(ErrorKind::EmptyEnsemble, "ensemble has no members");
  const auto& first = models.front();
  std::size_t total_dim = 0;
  for (std::size_t k = 0; k < models.size(); ++k) {
    if (models[k].ids() != first.ids()) {
      fail(ErrorKind::IdMismatch, "ensemble member " + std::to_string(k) + " has different ids or order");
    }
    total_dim += models[k].dim();
  }
  std::vector<float> out;
  out.reserve(first.rows() * total_dim);
  for (std::size_t i = 0; i < first.rows(); ++i) {
    for (const auto& m : models) {
      const auto r = m.row(i);
      out.insert(out.end(), r.begin(), r.end());
    }
  }
  return EmbeddingMatrix(first.ids(), total_dim, std::move(out));
}

}  // namespace weakrank
