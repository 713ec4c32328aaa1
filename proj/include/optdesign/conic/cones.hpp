#pragma once

// Algebra on a product of a nonnegative orthant and second-order cones:
// Jordan products, Nesterov-Todd scalings and step-to-boundary computations.
// Vectors are laid out as [orthant (L entries); soc_1; soc_2; ...].

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace optdesign::conic {

class ConeSpace {
 public:
  using Vector = Eigen::VectorXd;
  using Index = Eigen::Index;

  struct Block {
    Index offset;
    Index size;
  };

  ConeSpace() = default;
  ConeSpace(Index orthant, const std::vector<Index>& soc_sizes) : L_(orthant) {
    Index off = orthant;
    for (auto q : soc_sizes) {
      soc_.push_back({off, q});
      off += q;
    }
    dim_ = off;
  }

  Index dim() const { return dim_; }
  Index orthant() const { return L_; }
  const std::vector<Block>& socs() const { return soc_; }
  // Barrier degree: one per orthant coordinate and one per second-order cone.
  Index degree() const { return L_ + static_cast<Index>(soc_.size()); }

  Vector identity() const {
    Vector e = Vector::Zero(dim_);
    e.head(L_).setOnes();
    for (const auto& b : soc_) e[b.offset] = 1.0;
    return e;
  }

  // Smallest "eigenvalue" per cone; positive iff the vector is interior.
  double min_margin(const Vector& v) const {
    double m = std::numeric_limits<double>::infinity();
    if (L_ > 0) m = v.head(L_).minCoeff();
    for (const auto& b : soc_) m = std::min(m, v[b.offset] - v.segment(b.offset + 1, b.size - 1).norm());
    return m;
  }

  // Shift r into the interior along the identity (ECOS-style initialisation).
  Vector bring_to_cone(const Vector& r) const {
    const double alpha = -min_margin(r);
    if (alpha < 0) return r;
    return r + (1.0 + alpha) * identity();
  }

  Vector jordan(const Vector& u, const Vector& v) const {
    Vector w(dim_);
    w.head(L_) = u.head(L_).cwiseProduct(v.head(L_));
    for (const auto& b : soc_) {
      const auto u1 = u.segment(b.offset + 1, b.size - 1);
      const auto v1 = v.segment(b.offset + 1, b.size - 1);
      w[b.offset] = u.segment(b.offset, b.size).dot(v.segment(b.offset, b.size));
      w.segment(b.offset + 1, b.size - 1) = u[b.offset] * v1 + v[b.offset] * u1;
    }
    return w;
  }

  // x with lambda o x = v.
  Vector jordan_solve(const Vector& lambda, const Vector& v) const {
    Vector x(dim_);
    x.head(L_) = v.head(L_).cwiseQuotient(lambda.head(L_));
    for (const auto& b : soc_) {
      const double l0 = lambda[b.offset];
      const auto l1 = lambda.segment(b.offset + 1, b.size - 1);
      const auto v1 = v.segment(b.offset + 1, b.size - 1);
      const double rho = l0 * l0 - l1.squaredNorm();
      const double x0 = (l0 * v[b.offset] - l1.dot(v1)) / rho;
      x[b.offset] = x0;
      x.segment(b.offset + 1, b.size - 1) = (v1 - x0 * l1) / l0;
    }
    return x;
  }

  // Largest alpha in [0, inf] with x + alpha d in the cone, x interior.
  double max_step(const Vector& x, const Vector& d) const {
    double alpha = std::numeric_limits<double>::infinity();
    for (Index i = 0; i < L_; ++i)
      if (d[i] < 0) alpha = std::min(alpha, -x[i] / d[i]);
    for (const auto& b : soc_) alpha = std::min(alpha, soc_step(x.segment(b.offset, b.size), d.segment(b.offset, b.size)));
    return alpha;
  }

  template <class X, class D>
  static double soc_step(const X& x, const D& d) {
    const auto q = x.size();
    const double d0 = d[0];
    const double dn = d.tail(q - 1).norm();
    if (d0 >= dn) return std::numeric_limits<double>::infinity();
    // f(a) = (x0 + a d0)^2 - ||x1 + a d1||^2 = A a^2 + 2 B a + C
    const double A = d0 * d0 - dn * dn;
    const double B = x[0] * d0 - x.tail(q - 1).dot(d.tail(q - 1));
    const double C = std::max(x[0] * x[0] - x.tail(q - 1).squaredNorm(), 0.0);
    double best = std::numeric_limits<double>::infinity();
    auto consider = [&](double r) {
      if (r >= 0 && r < best) best = r;
    };
    if (std::abs(A) < 1e-300) {
      if (B < 0) consider(-C / (2 * B));
    } else {
      const double disc = B * B - A * C;
      if (disc < 0) {
        // Numerically the line never meets the boundary on the forward side.
        return best;
      }
      const double sq = std::sqrt(disc);
      const double qq = -(B + std::copysign(sq, B));
      if (qq != 0) {
        consider(qq / A);
        consider(C / qq);
      } else {
        consider(0.0);
      }
    }
    // Exiting through the negative nappe also bounds the step.
    if (d0 < 0) best = std::min(best, -x[0] / d0);
    return best;
  }

 private:
  Index L_ = 0;
  Index dim_ = 0;
  std::vector<Block> soc_;
};

// Nesterov-Todd scaling W with W z = W^{-1} s = lambda.
class NTScaling {
 public:
  using Vector = Eigen::VectorXd;
  using Index = Eigen::Index;

  NTScaling() = default;
  explicit NTScaling(const ConeSpace& K) : K_(&K) {}

  void update(const Vector& s, const Vector& z) {
    const auto L = K_->orthant();
    d_ = (s.head(L).array() / z.head(L).array()).sqrt();
    eta_.resize(K_->socs().size());
    wbar_.resize(K_->socs().size());
    for (std::size_t k = 0; k < K_->socs().size(); ++k) {
      const auto& b = K_->socs()[k];
      const auto sk = s.segment(b.offset, b.size);
      const auto zk = z.segment(b.offset, b.size);
      const double sres = std::max(sk[0] * sk[0] - sk.tail(b.size - 1).squaredNorm(), 1e-300);
      const double zres = std::max(zk[0] * zk[0] - zk.tail(b.size - 1).squaredNorm(), 1e-300);
      const double sn = std::sqrt(sres), zn = std::sqrt(zres);
      const Vector sb = sk / sn, zb = zk / zn;
      const double gamma = std::sqrt(std::max((1.0 + sb.dot(zb)) / 2.0, 1e-300));
      Vector w(b.size);
      w[0] = (sb[0] + zb[0]) / (2 * gamma);
      w.tail(b.size - 1) = (sb.tail(b.size - 1) - zb.tail(b.size - 1)) / (2 * gamma);
      // Re-normalise so that w0^2 - ||w1||^2 = 1 holds to machine precision.
      w[0] = std::sqrt(1.0 + w.tail(b.size - 1).squaredNorm());
      wbar_[k] = w;
      eta_[k] = std::sqrt(sn / zn);
    }
  }

  Vector apply(const Vector& v) const { return apply_impl(v, false); }
  Vector apply_inverse(const Vector& v) const { return apply_impl(v, true); }

  // W^2 v.
  Vector apply_squared(const Vector& v) const {
    const auto L = K_->orthant();
    Vector out(v.size());
    out.head(L) = d_.array().square() * v.head(L).array();
    for (std::size_t k = 0; k < K_->socs().size(); ++k) {
      const auto& b = K_->socs()[k];
      const Vector& w = wbar_[k];
      const auto vk = v.segment(b.offset, b.size);
      const double wv = w.dot(vk);
      Vector r = 2.0 * wv * w;
      r[0] -= vk[0];
      r.tail(b.size - 1) += vk.tail(b.size - 1);
      out.segment(b.offset, b.size) = eta_[k] * eta_[k] * r;
    }
    return out;
  }

  // Dense q x q block of W^2 for the k-th second-order cone.
  Eigen::MatrixXd squared_block(std::size_t k) const {
    const Vector& w = wbar_[k];
    const auto q = w.size();
    Eigen::MatrixXd B = 2.0 * w * w.transpose();
    B(0, 0) -= 1.0;
    for (Index i = 1; i < q; ++i) B(i, i) += 1.0;
    return eta_[k] * eta_[k] * B;
  }

  const Vector& orthant_scale() const { return d_; }

  // W^{-1} applied to each column of a block belonging to the k-th cone.
  Eigen::MatrixXd inverse_block(std::size_t k, const Eigen::MatrixXd& B) const {
    const Vector& w = wbar_[k];
    const auto q = w.size();
    const auto w1 = w.tail(q - 1);
    Eigen::MatrixXd out(B.rows(), B.cols());
    const Eigen::RowVectorXd w1B = w1.transpose() * B.bottomRows(q - 1);
    out.row(0) = (w[0] * B.row(0) - w1B) / eta_[k];
    out.bottomRows(q - 1) = (-w1 * B.row(0) + B.bottomRows(q - 1) + w1 * (w1B / (1.0 + w[0]))) / eta_[k];
    return out;
  }

 private:
  Vector apply_impl(const Vector& v, bool inverse) const {
    const auto L = K_->orthant();
    Vector out(v.size());
    if (inverse)
      out.head(L) = v.head(L).cwiseQuotient(d_);
    else
      out.head(L) = v.head(L).cwiseProduct(d_);
    for (std::size_t k = 0; k < K_->socs().size(); ++k) {
      const auto& b = K_->socs()[k];
      const Vector& w = wbar_[k];
      const auto vk = v.segment(b.offset, b.size);
      const auto w1 = w.tail(b.size - 1);
      const auto v1 = vk.tail(b.size - 1);
      const double w1v1 = w1.dot(v1);
      const double sgn = inverse ? -1.0 : 1.0;
      const double scale = inverse ? 1.0 / eta_[k] : eta_[k];
      out[b.offset] = scale * (w[0] * vk[0] + sgn * w1v1);
      out.segment(b.offset + 1, b.size - 1) =
          scale * (sgn * vk[0] * w1 + v1 + (w1v1 / (1.0 + w[0])) * w1);
    }
    return out;
  }

  const ConeSpace* K_ = nullptr;
  Vector d_;
  std::vector<double> eta_;
  std::vector<Vector> wbar_;
};

}  // namespace optdesign::conic
