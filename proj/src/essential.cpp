#include "mba/essential.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "mba/error.hpp"

namespace mba {

namespace {

// Polynomials of total degree <= 3 in (x, y, z), one coefficient per monomial.
// The monomial order is the one the elimination template relies on: the first
// ten monomials are eliminated, the last ten are x * {z^2, z, 1},
// y * {z^2, z, 1} and {z^3, z^2, z, 1}.
constexpr int kMonomials = 20;
constexpr std::array<std::array<int, 3>, kMonomials> kExponents = {{
    {3, 0, 0}, {0, 3, 0}, {2, 1, 0}, {1, 2, 0}, {2, 0, 1}, {2, 0, 0}, {0, 2, 1},
    {0, 2, 0}, {1, 1, 1}, {1, 1, 0}, {1, 0, 2}, {1, 0, 1}, {1, 0, 0}, {0, 1, 2},
    {0, 1, 1}, {0, 1, 0}, {0, 0, 3}, {0, 0, 2}, {0, 0, 1}, {0, 0, 0},
}};

int monomial_index(int i, int j, int k) {
  for (int m = 0; m < kMonomials; ++m) {
    if (kExponents[m][0] == i && kExponents[m][1] == j && kExponents[m][2] == k) return m;
  }
  return -1;
}

struct ProductTable {
  std::array<std::array<int, kMonomials>, kMonomials> index;
  ProductTable() {
    for (int a = 0; a < kMonomials; ++a) {
      for (int b = 0; b < kMonomials; ++b) {
        index[a][b] = monomial_index(kExponents[a][0] + kExponents[b][0], kExponents[a][1] + kExponents[b][1],
                                     kExponents[a][2] + kExponents[b][2]);
      }
    }
  }
};

const ProductTable& product_table() {
  static const ProductTable table;
  return table;
}

using Poly = Eigen::Matrix<double, kMonomials, 1>;

Poly mul(const Poly& a, const Poly& b) {
  const auto& table = product_table().index;
  Poly out = Poly::Zero();
  for (int i = 0; i < kMonomials; ++i) {
    if (a[i] == 0.0) continue;
    for (int j = 0; j < kMonomials; ++j) {
      if (b[j] == 0.0) continue;
      const int m = table[i][j];
      if (m < 0) throw Error(ErrorCode::kInvalidArgument, "five-point: polynomial degree overflow");
      out[m] += a[i] * b[j];
    }
  }
  return out;
}

double evaluate(const Poly& p, const Eigen::Vector3d& v, Eigen::Vector3d* grad = nullptr) {
  double value = 0.0;
  if (grad) grad->setZero();
  for (int m = 0; m < kMonomials; ++m) {
    if (p[m] == 0.0) continue;
    const auto& e = kExponents[m];
    const double term = std::pow(v.x(), e[0]) * std::pow(v.y(), e[1]) * std::pow(v.z(), e[2]);
    value += p[m] * term;
    if (grad) {
      for (int d = 0; d < 3; ++d) {
        if (e[d] == 0) continue;
        double partial = e[d];
        for (int o = 0; o < 3; ++o) partial *= std::pow(v[o], o == d ? e[o] - 1 : e[o]);
        (*grad)[d] += p[m] * partial;
      }
    }
  }
  return value;
}

using PolyMatrix = std::array<std::array<Poly, 3>, 3>;

// Ten cubic constraints: det(E) = 0 and 2 E E^T E - tr(E E^T) E = 0.
std::array<Poly, 10> essential_constraints(const PolyMatrix& e) {
  PolyMatrix eet;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      eet[r][c] = Poly::Zero();
      for (int k = 0; k < 3; ++k) eet[r][c] += mul(e[r][k], e[c][k]);
    }
  }
  const Poly trace = eet[0][0] + eet[1][1] + eet[2][2];

  std::array<Poly, 10> out;
  out[0] = mul(e[0][1], e[1][2]) - mul(e[0][2], e[1][1]);
  out[0] = mul(out[0], e[2][0]);
  out[0] += mul(mul(e[0][2], e[1][0]) - mul(e[0][0], e[1][2]), e[2][1]);
  out[0] += mul(mul(e[0][0], e[1][1]) - mul(e[0][1], e[1][0]), e[2][2]);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      Poly p = Poly::Zero();
      for (int k = 0; k < 3; ++k) p += 2.0 * mul(eet[r][k], e[k][c]);
      p -= mul(trace, e[r][c]);
      out[1 + 3 * r + c] = p;
    }
  }
  return out;
}

// Polynomials in z, ascending coefficients.
using UniPoly = std::vector<double>;

UniPoly uni_mul(const UniPoly& a, const UniPoly& b) {
  UniPoly out(a.size() + b.size() - 1, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < b.size(); ++j) out[i + j] += a[i] * b[j];
  }
  return out;
}

UniPoly uni_add(UniPoly a, const UniPoly& b, double sign = 1.0) {
  if (a.size() < b.size()) a.resize(b.size(), 0.0);
  for (std::size_t i = 0; i < b.size(); ++i) a[i] += sign * b[i];
  return a;
}

double uni_eval(const UniPoly& p, double z, double* derivative = nullptr) {
  double value = 0.0;
  double slope = 0.0;
  for (std::size_t i = p.size(); i-- > 0;) {
    slope = slope * z + value;
    value = value * z + p[i];
  }
  if (derivative) *derivative = slope;
  return value;
}

std::vector<double> real_roots(UniPoly p) {
  double scale = 0.0;
  for (const double c : p) scale = std::max(scale, std::abs(c));
  if (scale == 0.0) return {};
  while (p.size() > 1 && std::abs(p.back()) <= 1e-14 * scale) p.pop_back();
  const int degree = static_cast<int>(p.size()) - 1;
  if (degree < 1) return {};

  Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(degree, degree);
  for (int i = 1; i < degree; ++i) companion(i, i - 1) = 1.0;
  for (int i = 0; i < degree; ++i) companion(i, degree - 1) = -p[i] / p[degree];
  const Eigen::EigenSolver<Eigen::MatrixXd> solver(companion, false);

  std::vector<double> roots;
  for (int i = 0; i < degree; ++i) {
    const std::complex<double> root = solver.eigenvalues()[i];
    if (std::abs(root.imag()) > 1e-4 * std::max(1.0, std::abs(root.real()))) continue;
    double z = root.real();
    for (int it = 0; it < 8; ++it) {
      double slope = 0.0;
      const double value = uni_eval(p, z, &slope);
      if (slope == 0.0) break;
      const double step = value / slope;
      z -= step;
      if (std::abs(step) <= 1e-16 * std::max(1.0, std::abs(z))) break;
    }
    if (std::isfinite(z)) roots.push_back(z);
  }
  return roots;
}

// Gauss-Newton polish of (x, y, z) on the full constraint system.
Eigen::Vector3d polish(const std::array<Poly, 10>& constraints, Eigen::Vector3d v) {
  const auto residual_norm = [&](const Eigen::Vector3d& u) {
    double s = 0.0;
    for (const Poly& c : constraints) s += std::pow(evaluate(c, u), 2);
    return s;
  };
  double current = residual_norm(v);
  for (int it = 0; it < 4 && current > 0.0; ++it) {
    Eigen::Matrix<double, 10, 3> jac;
    Eigen::Matrix<double, 10, 1> res;
    for (int k = 0; k < 10; ++k) {
      Eigen::Vector3d g;
      res[k] = evaluate(constraints[k], v, &g);
      jac.row(k) = g.transpose();
    }
    const Eigen::Vector3d step = jac.colPivHouseholderQr().solve(-res);
    if (!step.allFinite()) break;
    const Eigen::Vector3d candidate = v + step;
    const double next = residual_norm(candidate);
    if (!(next < current)) break;
    v = candidate;
    current = next;
  }
  return v;
}

Eigen::Vector3d homogeneous(const Eigen::Vector2d& p) { return {p.x(), p.y(), 1.0}; }

}  // namespace

std::vector<Eigen::Matrix3d> essential_five_point(std::span<const Eigen::Vector2d> x1,
                                                  std::span<const Eigen::Vector2d> x2) {
  if (x1.size() != 5 || x2.size() != 5) {
    throw Error(ErrorCode::kInvalidArgument, "five-point solver needs exactly five correspondences");
  }
  Eigen::Matrix<double, 5, 9> design;
  for (int k = 0; k < 5; ++k) {
    const Eigen::Vector3d a = homogeneous(x1[k]);
    const Eigen::Vector3d b = homogeneous(x2[k]);
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) design(k, 3 * r + c) = b[r] * a[c];
    }
  }
  Eigen::Matrix<double, 9, 9> padded = Eigen::Matrix<double, 9, 9>::Zero();
  padded.topRows<5>() = design;
  const Eigen::JacobiSVD<Eigen::Matrix<double, 9, 9>> svd(padded, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  if (!(sv[4] > 1e-10 * sv[0])) {
    throw Error(ErrorCode::kDegenerateConfiguration, "five-point: nullspace dimension exceeds four");
  }
  // Basis E = x X + y Y + z Z + W.
  std::array<Eigen::Matrix<double, 9, 1>, 4> basis;
  for (int b = 0; b < 4; ++b) basis[b] = svd.matrixV().col(5 + b);

  const int x_id = monomial_index(1, 0, 0);
  const int y_id = monomial_index(0, 1, 0);
  const int z_id = monomial_index(0, 0, 1);
  const int one_id = monomial_index(0, 0, 0);
  PolyMatrix e;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      Poly p = Poly::Zero();
      p[x_id] = basis[0][3 * r + c];
      p[y_id] = basis[1][3 * r + c];
      p[z_id] = basis[2][3 * r + c];
      p[one_id] = basis[3][3 * r + c];
      e[r][c] = p;
    }
  }
  const std::array<Poly, 10> constraints = essential_constraints(e);

  Eigen::Matrix<double, 10, kMonomials> system;
  for (int k = 0; k < 10; ++k) system.row(k) = constraints[k].transpose();
  const Eigen::Matrix<double, 10, 10> lead = system.leftCols<10>();
  Eigen::FullPivLU<Eigen::Matrix<double, 10, 10>> lu(lead);
  if (!lu.isInvertible()) return {};
  const Eigen::Matrix<double, 10, 10> reduced = lu.solve(system.rightCols<10>());

  // Rows 4..9 lead with x^2 z, x^2, y^2 z, y^2, xyz, xy. Subtracting z times
  // the partner row cancels the leading term and leaves a row that is linear in
  // (x, y, 1) with coefficients polynomial in z.
  const auto eliminate = [&](int upper, int lower) {
    const auto u = reduced.row(upper);
    const auto l = reduced.row(lower);
    std::array<UniPoly, 3> row;
    row[0] = {u[2], u[1] - l[2], u[0] - l[1], -l[0]};
    row[1] = {u[5], u[4] - l[5], u[3] - l[4], -l[3]};
    row[2] = {u[9], u[8] - l[9], u[7] - l[8], u[6] - l[7], -l[6]};
    return row;
  };
  const std::array<std::array<UniPoly, 3>, 3> b = {eliminate(4, 5), eliminate(6, 7), eliminate(8, 9)};

  const auto minor = [&](int r0, int r1, int c0, int c1) {
    return uni_add(uni_mul(b[r0][c0], b[r1][c1]), uni_mul(b[r0][c1], b[r1][c0]), -1.0);
  };
  UniPoly det = uni_mul(b[0][0], minor(1, 2, 1, 2));
  det = uni_add(det, uni_mul(b[0][1], minor(1, 2, 0, 2)), -1.0);
  det = uni_add(det, uni_mul(b[0][2], minor(1, 2, 0, 1)));

  std::vector<Eigen::Matrix3d> solutions;
  for (const double z : real_roots(det)) {
    Eigen::Matrix3d bz;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) bz(r, c) = uni_eval(b[r][c], z);
    }
    Eigen::Vector3d best = Eigen::Vector3d::Zero();
    for (const auto& [r0, r1] : {std::pair{0, 1}, std::pair{0, 2}, std::pair{1, 2}}) {
      const Eigen::Vector3d v = bz.row(r0).transpose().cross(bz.row(r1).transpose());
      if (v.norm() > best.norm()) best = v;
    }
    if (!(std::abs(best.z()) > 1e-14 * best.norm())) continue;
    Eigen::Vector3d xyz(best.x() / best.z(), best.y() / best.z(), z);
    xyz = polish(constraints, xyz);

    Eigen::Matrix<double, 9, 1> flat = xyz.x() * basis[0] + xyz.y() * basis[1] + xyz.z() * basis[2] + basis[3];
    const double norm = flat.norm();
    if (!(norm > 0.0) || !flat.allFinite()) continue;
    flat /= norm;
    Eigen::Matrix3d essential;
    essential << flat[0], flat[1], flat[2], flat[3], flat[4], flat[5], flat[6], flat[7], flat[8];
    solutions.push_back(essential);
  }
  return solutions;
}

Eigen::Matrix3d essential_eight_point(std::span<const Eigen::Vector2d> x1, std::span<const Eigen::Vector2d> x2) {
  const std::size_t n = x1.size();
  if (n < 8 || x2.size() != n) {
    throw Error(ErrorCode::kInvalidArgument, "eight-point solver needs at least eight correspondences");
  }
  const auto normalizer = [](std::span<const Eigen::Vector2d> pts) {
    Eigen::Vector2d mean = Eigen::Vector2d::Zero();
    for (const auto& p : pts) mean += p;
    mean /= static_cast<double>(pts.size());
    double spread = 0.0;
    for (const auto& p : pts) spread += (p - mean).norm();
    spread /= static_cast<double>(pts.size());
    const double s = spread > 0.0 ? std::sqrt(2.0) / spread : 1.0;
    Eigen::Matrix3d t;
    t << s, 0, -s * mean.x(), 0, s, -s * mean.y(), 0, 0, 1;
    return t;
  };
  const Eigen::Matrix3d t1 = normalizer(x1);
  const Eigen::Matrix3d t2 = normalizer(x2);

  Eigen::MatrixXd design(static_cast<Eigen::Index>(std::max<std::size_t>(n, 9)), 9);
  design.setZero();
  for (std::size_t k = 0; k < n; ++k) {
    const Eigen::Vector3d a = t1 * homogeneous(x1[k]);
    const Eigen::Vector3d b = t2 * homogeneous(x2[k]);
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) design(static_cast<Eigen::Index>(k), 3 * r + c) = b[r] * a[c];
    }
  }
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(design, Eigen::ComputeFullV);
  const Eigen::VectorXd v = svd.matrixV().col(8);
  Eigen::Matrix3d en;
  en << v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8];
  Eigen::Matrix3d e = t2.transpose() * en * t1;

  const Eigen::JacobiSVD<Eigen::Matrix3d> proj(e, Eigen::ComputeFullU | Eigen::ComputeFullV);
  e = proj.matrixU() * Eigen::Vector3d(1.0, 1.0, 0.0).asDiagonal() * proj.matrixV().transpose();
  return e / e.norm();
}

double sampson_residual(const Eigen::Matrix3d& e, const Eigen::Vector2d& x1, const Eigen::Vector2d& x2) {
  const Eigen::Vector3d a = homogeneous(x1);
  const Eigen::Vector3d b = homogeneous(x2);
  const Eigen::Vector3d ea = e * a;
  const Eigen::Vector3d etb = e.transpose() * b;
  const double num = b.dot(ea);
  const double den = ea.x() * ea.x() + ea.y() * ea.y() + etb.x() * etb.x() + etb.y() * etb.y();
  if (!(den > 0.0)) return std::numeric_limits<double>::infinity();
  return num * num / den;
}

std::array<RelativePose, 4> decompose_essential(const Eigen::Matrix3d& e) {
  const Eigen::JacobiSVD<Eigen::Matrix3d> svd(e, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d u = svd.matrixU();
  Eigen::Matrix3d v = svd.matrixV();
  if (u.determinant() < 0.0) u = -u;
  if (v.determinant() < 0.0) v = -v;
  Eigen::Matrix3d w;
  w << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  const Eigen::Matrix3d r1 = u * w * v.transpose();
  const Eigen::Matrix3d r2 = u * w.transpose() * v.transpose();
  const Eigen::Vector3d t = u.col(2).normalized();
  return {RelativePose{r1, t}, RelativePose{r1, -t}, RelativePose{r2, t}, RelativePose{r2, -t}};
}

std::optional<Eigen::Vector3d> triangulate_midpoint(const RelativePose& pose, const Eigen::Vector2d& x1,
                                                    const Eigen::Vector2d& x2) {
  const Eigen::Vector3d d1 = homogeneous(x1);
  const Eigen::Vector3d d2 = pose.rotation.transpose() * homogeneous(x2);
  const Eigen::Vector3d c2 = -(pose.rotation.transpose() * pose.translation);
  const double a = d1.dot(d1);
  const double b = d1.dot(d2);
  const double c = d2.dot(d2);
  const double d = d1.dot(c2);
  const double f = d2.dot(c2);
  const double denom = a * c - b * b;
  if (!(denom > 1e-12 * a * c)) return std::nullopt;
  const double l1 = (c * d - b * f) / denom;
  const double l2 = (b * d - a * f) / denom;
  return 0.5 * (l1 * d1 + c2 + l2 * d2);
}

int count_in_front(const RelativePose& pose, std::span<const Eigen::Vector2d> x1,
                   std::span<const Eigen::Vector2d> x2, const std::vector<bool>* mask) {
  int count = 0;
  for (std::size_t k = 0; k < x1.size(); ++k) {
    if (mask && !(*mask)[k]) continue;
    const auto point = triangulate_midpoint(pose, x1[k], x2[k]);
    if (!point) continue;
    if (point->z() > 0.0 && (pose.rotation * *point + pose.translation).z() > 0.0) ++count;
  }
  return count;
}

std::pair<RelativePose, int> select_pose(const Eigen::Matrix3d& e, std::span<const Eigen::Vector2d> x1,
                                         std::span<const Eigen::Vector2d> x2, const std::vector<bool>* mask) {
  const auto candidates = decompose_essential(e);
  int best = 0;
  int best_count = -1;
  for (int c = 0; c < 4; ++c) {
    const int n = count_in_front(candidates[c], x1, x2, mask);
    if (n > best_count) {
      best_count = n;
      best = c;
    }
  }
  return {candidates[best], best_count};
}

}  // namespace mba
