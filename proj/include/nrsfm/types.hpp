#pragma once

#include <Eigen/Core>

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "nrsfm/error.hpp"

namespace nrsfm {

using Index = Eigen::Index;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

/// A 2D landmark configuration, one column per landmark.
template <typename Scalar>
using Shape2 = Eigen::Matrix<Scalar, 2, Eigen::Dynamic>;
using Shape2D = Shape2<double>;

/// Layout of the packed attribute vector q = (k, theta, alpha, t).
///
///   [0, 3)        camera entries k11, k12, k22
///   [3, 6)        Euler angles theta_x, theta_y, theta_z (radians)
///   [6, 6+K)      non-rigid coefficients alpha_1..alpha_K
///   [6+K, 8+K)    image-plane translation t_x, t_y
namespace layout {
inline constexpr Index kCamera = 0;
inline constexpr Index kTheta = 3;
inline constexpr Index kAlpha = 6;
inline constexpr Index kFixed = 8;
inline constexpr Index translation(Index num_shapes) { return kAlpha + num_shapes; }
inline constexpr Index dimension(Index num_shapes) { return kFixed + num_shapes; }
}  // namespace layout

/// Wraps an angle into (-pi, pi].
template <typename Scalar>
Scalar wrap_angle(Scalar a) {
  using std::remainder;
  constexpr Scalar two_pi = Scalar(2) * std::numbers::pi_v<Scalar>;
  Scalar r = remainder(a, two_pi);
  if (r <= -std::numbers::pi_v<Scalar>) r += two_pi;
  return r;
}

/// Camera / rotation / shape / translation parameters of one 2D shape.
template <typename Scalar>
class BasicAttributeVector {
 public:
  using VectorType = Vector<Scalar>;

  BasicAttributeVector() : BasicAttributeVector(0) {}

  /// Identity camera, zero rotation, zero shape coefficients, zero translation.
  explicit BasicAttributeVector(Index num_shapes)
      : values_(VectorType::Zero(layout::dimension(num_shapes))) {
    values_[0] = Scalar(1);
    values_[2] = Scalar(1);
  }

  explicit BasicAttributeVector(VectorType packed) : values_(std::move(packed)) {
    if (values_.size() < layout::kFixed)
      throw DimensionError("attribute vector needs at least 8 entries, got " +
                           std::to_string(values_.size()));
  }

  Index num_shapes() const { return values_.size() - layout::kFixed; }
  Index size() const { return values_.size(); }

  auto camera() { return values_.template segment<3>(layout::kCamera); }
  auto camera() const { return values_.template segment<3>(layout::kCamera); }
  auto theta() { return values_.template segment<3>(layout::kTheta); }
  auto theta() const { return values_.template segment<3>(layout::kTheta); }
  auto alpha() { return values_.segment(layout::kAlpha, num_shapes()); }
  auto alpha() const { return values_.segment(layout::kAlpha, num_shapes()); }
  auto translation() { return values_.template segment<2>(layout::translation(num_shapes())); }
  auto translation() const {
    return values_.template segment<2>(layout::translation(num_shapes()));
  }

  const VectorType& packed() const { return values_; }
  VectorType& packed() { return values_; }

  Scalar& operator[](Index i) { return values_[i]; }
  Scalar operator[](Index i) const { return values_[i]; }

  bool all_finite() const { return values_.allFinite(); }

  /// Maps every Euler angle into (-pi, pi].
  void wrap_angles() {
    for (Index i = 0; i < 3; ++i) values_[layout::kTheta + i] = wrap_angle(values_[layout::kTheta + i]);
  }

  template <typename Other>
  BasicAttributeVector<Other> cast() const {
    return BasicAttributeVector<Other>(values_.template cast<Other>().eval());
  }

  friend bool operator==(const BasicAttributeVector& a, const BasicAttributeVector& b) {
    return a.values_.size() == b.values_.size() && a.values_ == b.values_;
  }

 private:
  VectorType values_;
};

using AttributeVector = BasicAttributeVector<double>;

/// Rigid basis B0 plus K rank-one non-rigid bases B_k = d_k b_k^T.
template <typename Scalar>
struct BasicBasisSet {
  Eigen::Matrix<Scalar, 3, Eigen::Dynamic> B0;         // 3 x L
  Eigen::Matrix<Scalar, 3, Eigen::Dynamic> D;          // 3 x K, unit columns
  Matrix<Scalar> b;                                    // K x L, orthonormal rows

  Index K() const { return D.cols(); }
  Index L() const { return B0.cols(); }

  /// The k-th non-rigid basis shape d_k b_k^T (zero-based k).
  Eigen::Matrix<Scalar, 3, Eigen::Dynamic> shape(Index k) const {
    return D.col(k) * b.row(k);
  }

  /// B0 + sum_k alpha_k d_k b_k^T.
  template <typename Derived>
  Eigen::Matrix<Scalar, 3, Eigen::Dynamic> structure(const Eigen::MatrixBase<Derived>& alpha) const {
    return B0 + D * alpha.asDiagonal() * b;
  }

  void validate() const {
    if (B0.cols() < 3) throw DimensionError("basis needs at least 3 landmarks");
    if (b.rows() != D.cols()) throw DimensionError("basis: D has " + std::to_string(D.cols()) +
                                                   " columns but b has " + std::to_string(b.rows()) + " rows");
    if (b.cols() != B0.cols())
      throw DimensionError("basis: b rows have length " + std::to_string(b.cols()) + ", expected " +
                           std::to_string(B0.cols()));
  }
};

using BasisSet = BasicBasisSet<double>;

/// Attribute component names, in packed order: k11 k12 k22 theta_x theta_y
/// theta_z alpha_1..alpha_K t_x t_y.
std::vector<std::string> attribute_names(Index num_shapes);

}  // namespace nrsfm
