#pragma once

// Dense embedding primitives. Keys and queries are plain Eigen column
// vectors; the store keeps them row-major in a single matrix so that row
// expressions can be passed straight into the distance functions.

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>

#include "persona/error.hpp"

namespace persona {

template <typename Scalar>
using Embedding = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using EmbeddingMatrix =
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using EmbeddingVector = Embedding<float>;
using EmbeddingRows = EmbeddingMatrix<float>;

inline constexpr int kDefaultDim = 768;

enum class DistanceMode { kEuclidean, kCosine };

// Throws NonFinite if any entry is NaN/Inf, InvalidArgument if empty.
template <typename Derived>
void check_embedding(const Eigen::MatrixBase<Derived>& v) {
  if (v.size() == 0) {
    throw Error(ErrorCode::kInvalidArgument, "embedding must have dim > 0");
  }
  if (!v.allFinite()) {
    throw Error(ErrorCode::kNonFinite, "embedding contains NaN or Inf");
  }
}

template <typename DerivedA, typename DerivedB>
void check_same_dim(const Eigen::MatrixBase<DerivedA>& a,
                    const Eigen::MatrixBase<DerivedB>& b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "dimension mismatch: " + std::to_string(a.size()) + " vs " +
                    std::to_string(b.size()));
  }
}

// ||a - b||, accumulated in double whatever the storage scalar. Accepts
// row or column expressions of equal length.
template <typename DerivedA, typename DerivedB>
double squared_distance(const Eigen::MatrixBase<DerivedA>& a,
                        const Eigen::MatrixBase<DerivedB>& b) {
  check_same_dim(a, b);
  const auto n = a.size();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double d = static_cast<double>(a.derived().coeff(i)) -
                     static_cast<double>(b.derived().coeff(i));
    acc += d * d;
  }
  return acc;
}

template <typename DerivedA, typename DerivedB>
double distance(const Eigen::MatrixBase<DerivedA>& a,
                const Eigen::MatrixBase<DerivedB>& b) {
  return std::sqrt(squared_distance(a, b));
}

template <typename Derived>
double norm(const Eigen::MatrixBase<Derived>& a) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double x = static_cast<double>(a.derived().coeff(i));
    acc += x * x;
  }
  return std::sqrt(acc);
}

template <typename DerivedA, typename DerivedB>
double dot(const Eigen::MatrixBase<DerivedA>& a,
           const Eigen::MatrixBase<DerivedB>& b) {
  check_same_dim(a, b);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    acc += static_cast<double>(a.derived().coeff(i)) *
           static_cast<double>(b.derived().coeff(i));
  }
  return acc;
}

// 1 - cos(a, b). Zero-norm inputs raise ZeroVector.
template <typename DerivedA, typename DerivedB>
double cosine_distance(const Eigen::MatrixBase<DerivedA>& a,
                       const Eigen::MatrixBase<DerivedB>& b) {
  const double na = norm(a);
  const double nb = norm(b);
  if (na == 0.0 || nb == 0.0) {
    throw Error(ErrorCode::kZeroVector, "cosine distance of a zero vector");
  }
  return 1.0 - dot(a, b) / (na * nb);
}

template <typename DerivedA, typename DerivedB>
double distance(const Eigen::MatrixBase<DerivedA>& a,
                const Eigen::MatrixBase<DerivedB>& b, DistanceMode mode) {
  return mode == DistanceMode::kEuclidean ? distance(a, b)
                                          : cosine_distance(a, b);
}

template <typename Derived>
Embedding<typename Derived::Scalar> normalize(
    const Eigen::MatrixBase<Derived>& a) {
  using Scalar = typename Derived::Scalar;
  const double n = norm(a);
  if (n == 0.0) {
    throw Error(ErrorCode::kZeroVector, "cannot normalize a zero vector");
  }
  Embedding<Scalar> out(a.size());
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    out(i) = static_cast<Scalar>(static_cast<double>(a.derived().coeff(i)) / n);
  }
  return out;
}

// Binary vector file: little-endian header {"RAPV", u32 version = 1, u32 dim,
// u64 count} followed by count x dim float32 values, row-major.
inline constexpr char kVectorMagic[4] = {'R', 'A', 'P', 'V'};
inline constexpr std::uint32_t kVectorFileVersion = 1;
inline constexpr std::size_t kVectorHeaderBytes = 4 + 4 + 4 + 8;

void write_vector_file(const std::filesystem::path& path,
                       const EmbeddingRows& rows);

// Throws IoError when unreadable and CorruptManifest on bad magic, version,
// or a size that disagrees with the header.
EmbeddingRows read_vector_file(const std::filesystem::path& path);

std::string encode_vector_file(const EmbeddingRows& rows);
EmbeddingRows decode_vector_file(const std::string& bytes);

}  // namespace persona
