#include "cdm/clifford.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>

namespace cdm {

namespace {

// Rows: left factor, columns: right factor, in basis order
// (1, e1, e2, e3, e23, e31, e12, e123).
constexpr CayleyTable kCl3Table{{{
    {{{0, +1}, {1, +1}, {2, +1}, {3, +1}, {4, +1}, {5, +1}, {6, +1}, {7, +1}}},
    {{{1, +1}, {0, +1}, {6, +1}, {5, -1}, {7, +1}, {3, -1}, {2, +1}, {4, +1}}},
    {{{2, +1}, {6, -1}, {0, +1}, {4, +1}, {3, +1}, {7, +1}, {1, -1}, {5, +1}}},
    {{{3, +1}, {5, +1}, {4, -1}, {0, +1}, {2, -1}, {1, +1}, {7, +1}, {6, +1}}},
    {{{4, +1}, {7, +1}, {3, -1}, {2, +1}, {0, -1}, {6, -1}, {5, +1}, {1, -1}}},
    {{{5, +1}, {3, +1}, {7, +1}, {1, -1}, {6, +1}, {0, -1}, {4, -1}, {2, -1}}},
    {{{6, +1}, {2, -1}, {1, +1}, {7, +1}, {5, -1}, {4, +1}, {0, -1}, {3, -1}}},
    {{{7, +1}, {4, +1}, {5, +1}, {6, +1}, {1, -1}, {2, -1}, {3, -1}, {0, -1}}},
}}};

void require_finite(const Multivector& v, const char* what) {
  if (!v.is_finite()) {
    throw std::domain_error(std::string(what) + ": non-finite multivector coefficient");
  }
}

}  // namespace

Multivector Multivector::scalar(double s) {
  Multivector v;
  v.coeffs[0] = s;
  return v;
}

Multivector Multivector::blade(std::size_t index, double value) {
  if (index >= kBladeCount) throw std::out_of_range("blade index out of range");
  Multivector v;
  v.coeffs[index] = value;
  return v;
}

bool Multivector::is_finite() const {
  return std::all_of(coeffs.begin(), coeffs.end(), [](double c) { return std::isfinite(c); });
}

Multivector& Multivector::operator+=(const Multivector& o) {
  for (std::size_t i = 0; i < kBladeCount; ++i) coeffs[i] += o.coeffs[i];
  return *this;
}

Multivector& Multivector::operator-=(const Multivector& o) {
  for (std::size_t i = 0; i < kBladeCount; ++i) coeffs[i] -= o.coeffs[i];
  return *this;
}

Multivector& Multivector::operator*=(double s) {
  for (double& c : coeffs) c *= s;
  return *this;
}

const CayleyTable& CayleyTable::standard() { return kCl3Table; }

Multivector geometric_product(const Multivector& a, const Multivector& b) {
  return geometric_product(a, b, kCl3Table);
}

Multivector geometric_product(const Multivector& a, const Multivector& b,
                              const CayleyTable& table) {
  require_finite(a, "geometric_product");
  require_finite(b, "geometric_product");
  Multivector out;
  for (std::size_t i = 0; i < kBladeCount; ++i) {
    if (a[i] == 0.0) continue;
    for (std::size_t j = 0; j < kBladeCount; ++j) {
      const BladeProduct& p = table(i, j);
      out[p.index] += p.sign * a[i] * b[j];
    }
  }
  return out;
}

Multivector grade_project(const Multivector& v, int m) {
  if (m < 0 || m >= kGradeCount) {
    throw std::out_of_range("grade index " + std::to_string(m) + " outside 0..3");
  }
  Multivector out;
  for (std::size_t i = 0; i < kBladeCount; ++i) {
    if (kBladeGrade[i] == m) out[i] = v[i];
  }
  return out;
}

Multivector embed_one_vector(const Vec3& x) {
  Multivector v;
  v[1] = x[0];
  v[2] = x[1];
  v[3] = x[2];
  require_finite(v, "embed_one_vector");
  return v;
}

Vec3 project_one_vector(const Multivector& v) { return {v[1], v[2], v[3]}; }

Multivector reverse(const Multivector& v) {
  Multivector out = v;
  for (std::size_t i = 4; i < kBladeCount; ++i) out[i] = -out[i];
  return out;
}

Multivector grade_involution(const Multivector& v) {
  Multivector out = v;
  for (std::size_t i = 0; i < kBladeCount; ++i) {
    if (kBladeGrade[i] % 2 == 1) out[i] = -out[i];
  }
  return out;
}

double max_abs_diff(const Multivector& a, const Multivector& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < kBladeCount; ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double determinant(const Mat3& m) {
  return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
         m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
         m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
}

Mat3 matmul(const Mat3& a, const Mat3& b) {
  Mat3 out{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) out[i][j] += a[i][k] * b[k][j];
  return out;
}

Mat3 transpose(const Mat3& m) {
  Mat3 out{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) out[i][j] = m[j][i];
  return out;
}

OrthogonalAction::OrthogonalAction(const Mat3& matrix, double tolerance) : matrix_(matrix) {
  for (const auto& row : matrix)
    for (double v : row)
      if (!std::isfinite(v)) throw std::invalid_argument("orthogonal action: non-finite matrix");
  const Mat3 gram = cdm::matmul(transpose(matrix), matrix);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      const double dev = std::abs(gram[i][j] - (i == j ? 1.0 : 0.0));
      if (dev > tolerance) {
        char buf[96];
        std::snprintf(buf, sizeof(buf), "orthogonal action: R^T R deviates from identity by %.3e", dev);
        throw std::invalid_argument(buf);
      }
    }
  }
  det_ = determinant(matrix) > 0.0 ? 1.0 : -1.0;

  blocks_ = {};
  blocks_[0][0] = 1.0;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      blocks_[1 + i][1 + j] = matrix[i][j];
      blocks_[4 + i][4 + j] = det_ * matrix[i][j];
    }
  }
  blocks_[7][7] = det_;
}

OrthogonalAction OrthogonalAction::identity() {
  return OrthogonalAction(Mat3{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}});
}

Multivector OrthogonalAction::apply(const Multivector& v) const {
  Multivector out;
  out[0] = v[0];
  for (int i = 0; i < 3; ++i) {
    double vec = 0.0;
    double biv = 0.0;
    for (int j = 0; j < 3; ++j) {
      vec += blocks_[1 + i][1 + j] * v[1 + j];
      biv += blocks_[4 + i][4 + j] * v[4 + j];
    }
    out[1 + i] = vec;
    out[4 + i] = biv;
  }
  out[7] = det_ * v[7];
  return out;
}

Vec3 OrthogonalAction::apply(const Vec3& x) const {
  Vec3 out{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) out[i] += matrix_[i][j] * x[j];
  return out;
}

OrthogonalAction operator*(const OrthogonalAction& a, const OrthogonalAction& b) {
  // Products of orthogonal matrices drift by a few ulps; accept them.
  return OrthogonalAction(cdm::matmul(a.matrix_, b.matrix_), 1e-10);
}

Multivector apply_orthogonal(const OrthogonalAction& action, const Multivector& v) {
  return action.apply(v);
}

OrthogonalAction random_orthogonal(Rng& rng, int det_sign) {
  if (det_sign != 1 && det_sign != -1) throw std::invalid_argument("det_sign must be +1 or -1");
  std::array<Vec3, 3> cols{};
  for (;;) {
    for (auto& c : cols)
      for (double& v : c) v = rng.normal();
    // Modified Gram-Schmidt with one re-orthogonalisation pass; retry on a
    // nearly degenerate draw.
    bool degenerate = false;
    for (int k = 0; k < 3 && !degenerate; ++k) {
      for (int pass = 0; pass < 2; ++pass) {
        for (int j = 0; j < k; ++j) {
          double dot = 0.0;
          for (int i = 0; i < 3; ++i) dot += cols[k][i] * cols[j][i];
          for (int i = 0; i < 3; ++i) cols[k][i] -= dot * cols[j][i];
        }
      }
      const double norm =
          std::sqrt(cols[k][0] * cols[k][0] + cols[k][1] * cols[k][1] + cols[k][2] * cols[k][2]);
      if (norm < 1e-6) {
        degenerate = true;
        break;
      }
      for (double& v : cols[k]) v /= norm;
    }
    if (!degenerate) break;
  }
  Mat3 m{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) m[i][j] = cols[j][i];
  if ((determinant(m) > 0.0 ? 1 : -1) != det_sign) {
    for (int i = 0; i < 3; ++i) m[i][2] = -m[i][2];
  }
  return OrthogonalAction(m);
}

}  // namespace cdm
