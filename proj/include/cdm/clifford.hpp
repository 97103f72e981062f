#pragma once

// Multivector algebra of Cl(R^3) with the Euclidean quadratic form.
//
// Basis order: (1, e1, e2, e3, e23, e31, e12, e123). Bivectors are stored in
// axial (cyclic) order, so under a rotation R the bivector block transforms
// exactly like a vector, and under a general O(3) element it transforms as
// det(R) * R.

#include <array>
#include <cstddef>
#include <cstdint>

#include "cdm/rng.hpp"

namespace cdm {

inline constexpr std::size_t kBladeCount = 8;
inline constexpr int kGradeCount = 4;

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<std::array<double, 3>, 3>;

/// Fixed positive-definite metric: e_i * e_i = +1 for i = 1, 2, 3.
struct EuclideanMetric {
  static constexpr std::array<double, 3> signature{1.0, 1.0, 1.0};
};

/// Grade of each basis blade, in storage order.
inline constexpr std::array<int, kBladeCount> kBladeGrade{0, 1, 1, 1, 2, 2, 2, 3};
/// First storage index and size of each grade slice.
inline constexpr std::array<std::size_t, kGradeCount> kGradeOffset{0, 1, 4, 7};
inline constexpr std::array<std::size_t, kGradeCount> kGradeSize{1, 3, 3, 1};

struct Multivector {
  std::array<double, kBladeCount> coeffs{};

  static Multivector scalar(double s);
  static Multivector blade(std::size_t index, double value = 1.0);

  double& operator[](std::size_t i) { return coeffs[i]; }
  double operator[](std::size_t i) const { return coeffs[i]; }

  bool is_finite() const;

  Multivector& operator+=(const Multivector& o);
  Multivector& operator-=(const Multivector& o);
  Multivector& operator*=(double s);

  friend Multivector operator+(Multivector a, const Multivector& b) { return a += b; }
  friend Multivector operator-(Multivector a, const Multivector& b) { return a -= b; }
  friend Multivector operator*(Multivector a, double s) { return a *= s; }
  friend Multivector operator*(double s, Multivector a) { return a *= s; }
  friend bool operator==(const Multivector&, const Multivector&) = default;
};

/// Product of two basis blades: result blade index and sign.
struct BladeProduct {
  std::uint8_t index;
  std::int8_t sign;
  friend bool operator==(const BladeProduct&, const BladeProduct&) = default;
};

/// 8x8 signed multiplication table of the basis blades.
struct CayleyTable {
  std::array<std::array<BladeProduct, kBladeCount>, kBladeCount> entries;

  const BladeProduct& operator()(std::size_t a, std::size_t b) const { return entries[a][b]; }

  /// The Cl(3,0) table for the basis order above.
  static const CayleyTable& standard();
};

/// Geometric product. Throws std::domain_error on non-finite input.
Multivector geometric_product(const Multivector& a, const Multivector& b);
/// Same, with an explicit table (used by the self-test mutation hook).
Multivector geometric_product(const Multivector& a, const Multivector& b,
                              const CayleyTable& table);

/// Keeps grade m, zeroes the rest. Throws std::out_of_range for m > 3.
Multivector grade_project(const Multivector& v, int m);

Multivector embed_one_vector(const Vec3& x);
Vec3 project_one_vector(const Multivector& v);

/// Reversion: flips the sign of grades 2 and 3.
Multivector reverse(const Multivector& v);
/// Grade involution: flips the sign of odd grades.
Multivector grade_involution(const Multivector& v);

double max_abs_diff(const Multivector& a, const Multivector& b);

/// An element of O(3) together with its induced action on Cl(R^3).
class OrthogonalAction {
 public:
  using Block = std::array<std::array<double, kBladeCount>, kBladeCount>;

  /// Validates R^T R = I (max abs deviation <= tolerance). Throws
  /// std::invalid_argument otherwise.
  explicit OrthogonalAction(const Mat3& matrix, double tolerance = 1e-12);

  static OrthogonalAction identity();

  const Mat3& matrix() const { return matrix_; }
  double det() const { return det_; }
  /// Block-diagonal 8x8 representation diag(1, R, det(R) R, det(R)).
  const Block& grade_blocks() const { return blocks_; }

  Multivector apply(const Multivector& v) const;
  Vec3 apply(const Vec3& x) const;

  /// Group product: (a * b).apply(v) == a.apply(b.apply(v)).
  friend OrthogonalAction operator*(const OrthogonalAction& a, const OrthogonalAction& b);

 private:
  Mat3 matrix_;
  double det_;
  Block blocks_;
};

Multivector apply_orthogonal(const OrthogonalAction& action, const Multivector& v);

/// Random orthogonal matrix with the requested determinant sign (+1 or -1),
/// from Gram-Schmidt on a Gaussian matrix.
OrthogonalAction random_orthogonal(Rng& rng, int det_sign);

double determinant(const Mat3& m);
Mat3 matmul(const Mat3& a, const Mat3& b);
Mat3 transpose(const Mat3& m);

}  // namespace cdm
