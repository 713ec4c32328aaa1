#pragma once

// Standard-form cone programs and a small builder for assembling them.
//
//   minimize c'x  subject to  A x + s = b,  s in K
//
// K is a product of zero, nonnegative and second-order cones laid out in row
// order. The builder always emits zero cones first, then nonnegative cones,
// then second-order cones in insertion order.

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <algorithm>
#include <cstdint>
#include <iomanip>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "optdesign/error.hpp"

namespace optdesign::conic {

using Vector = Eigen::VectorXd;
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::ColMajor>;
using Index = Eigen::Index;

enum class ConeType { Zero, NonNeg, SOC };

inline const char* to_string(ConeType t) {
  switch (t) {
    case ConeType::Zero: return "zero";
    case ConeType::NonNeg: return "nonneg";
    case ConeType::SOC: return "soc";
  }
  return "?";
}

struct Cone {
  ConeType type;
  Index size;
};

struct ConeProgram {
  Vector c;
  SparseMatrix A;
  Vector b;
  std::vector<Cone> cones;
  double objective_offset = 0;

  Index num_vars() const { return c.size(); }
  Index num_rows() const { return b.size(); }

  void validate() const {
    if (A.rows() != b.size() || A.cols() != c.size())
      throw Error(ErrorCode::DimensionMismatch, "cone program A/b/c shapes disagree");
    Index total = 0;
    for (const auto& k : cones) {
      if (k.size < 1) throw Error(ErrorCode::InvalidArgument, "cone of size zero");
      total += k.size;
    }
    if (total != b.size()) throw Error(ErrorCode::DimensionMismatch, "cone sizes do not cover all rows");
  }
};

// Linear expression sum_j a_j x_j + constant.
struct AffineExpr {
  std::vector<std::pair<Index, double>> terms;
  double constant = 0;

  AffineExpr() = default;
  AffineExpr(double k) : constant(k) {}  // NOLINT(google-explicit-constructor)

  static AffineExpr var(Index j, double coef = 1.0) {
    AffineExpr e;
    e.terms.emplace_back(j, coef);
    return e;
  }

  AffineExpr& add(Index j, double coef) {
    if (coef != 0.0) terms.emplace_back(j, coef);
    return *this;
  }

  AffineExpr& operator+=(const AffineExpr& o) {
    terms.insert(terms.end(), o.terms.begin(), o.terms.end());
    constant += o.constant;
    return *this;
  }
  AffineExpr& operator*=(double k) {
    for (auto& t : terms) t.second *= k;
    constant *= k;
    return *this;
  }
  friend AffineExpr operator+(AffineExpr a, const AffineExpr& b) { return a += b; }
  friend AffineExpr operator-(AffineExpr a, AffineExpr b) { return a += (b *= -1.0); }
  friend AffineExpr operator*(double k, AffineExpr a) { return a *= k; }
};

struct VarRange {
  Index offset = 0;
  Index size = 0;
  Index operator[](Index k) const { return offset + k; }
};

struct ConeHandle {
  ConeType type;
  std::size_t index;  // position among blocks of the same type
};

class ProgramBuilder {
 public:
  VarRange add_variables(Index n) {
    VarRange r{nvars_, n};
    nvars_ += n;
    return r;
  }
  Index add_variable() { return add_variables(1).offset; }
  Index num_vars() const { return nvars_; }

  void minimize(const AffineExpr& objective) { objective_ = objective; }

  ConeHandle add_zero(std::vector<AffineExpr> rows) { return push(ConeType::Zero, std::move(rows)); }
  ConeHandle add_nonneg(std::vector<AffineExpr> rows) { return push(ConeType::NonNeg, std::move(rows)); }
  ConeHandle add_soc(std::vector<AffineExpr> rows) {
    if (rows.empty()) throw Error(ErrorCode::InvalidArgument, "empty second-order cone");
    return push(ConeType::SOC, std::move(rows));
  }

  // ||x||^2 <= a*b with a, b >= 0, written as (a+b, 2x, a-b) in SOC.
  ConeHandle add_hyperbolic(const std::vector<AffineExpr>& x, const AffineExpr& a, const AffineExpr& b) {
    std::vector<AffineExpr> rows;
    rows.reserve(x.size() + 2);
    rows.push_back(a + b);
    for (const auto& xi : x) rows.push_back(2.0 * xi);
    rows.push_back(a - b);
    return add_soc(std::move(rows));
  }

  // Returns a variable g constrained by g <= prod_k leaves_k^{beta_k}. The
  // weights are rationalised to p_k / q and the product is realised by a
  // balanced binary tree of hyperbolic constraints over 2^L leaves, padded
  // with copies of g itself.
  Index add_geometric_mean(const std::vector<AffineExpr>& leaves, const std::vector<double>& beta);

  // Row offset of a cone block in the assembled program. Valid once all
  // constraints have been added.
  Index row_offset(const ConeHandle& h) const {
    Index off = 0;
    if (h.type != ConeType::Zero) off += count_rows(ConeType::Zero);
    if (h.type == ConeType::SOC) off += count_rows(ConeType::NonNeg);
    const auto& blocks = blocks_of(h.type);
    for (std::size_t k = 0; k < h.index; ++k) off += static_cast<Index>(blocks[k].size());
    return off;
  }

  Index block_size(const ConeHandle& h) const {
    return static_cast<Index>(blocks_of(h.type).at(h.index).size());
  }

  ConeProgram build() const {
    ConeProgram p;
    const Index nrows = count_rows(ConeType::Zero) + count_rows(ConeType::NonNeg) + count_rows(ConeType::SOC);
    p.c = Vector::Zero(nvars_);
    for (const auto& [j, v] : objective_.terms) p.c[j] += v;
    p.objective_offset = objective_.constant;
    p.b = Vector::Zero(nrows);
    std::vector<Eigen::Triplet<double>> trip;
    Index row = 0;
    for (ConeType t : {ConeType::Zero, ConeType::NonNeg, ConeType::SOC}) {
      for (const auto& block : blocks_of(t)) {
        if (t == ConeType::SOC) p.cones.push_back({t, static_cast<Index>(block.size())});
        for (const auto& e : block) {
          p.b[row] = e.constant;
          for (const auto& [j, v] : e.terms) {
            if (j < 0 || j >= nvars_) throw Error(ErrorCode::InvalidArgument, "expression uses unknown variable");
            trip.emplace_back(row, j, -v);
          }
          ++row;
        }
      }
      if (t != ConeType::SOC) {
        const Index n = count_rows(t);
        if (n > 0) p.cones.push_back({t, n});
      }
    }
    p.A.resize(nrows, nvars_);
    p.A.setFromTriplets(trip.begin(), trip.end());
    p.A.prune(0.0);
    p.A.makeCompressed();
    return p;
  }

 private:
  using Block = std::vector<AffineExpr>;

  ConeHandle push(ConeType t, Block rows) {
    auto& blocks = blocks_of(t);
    blocks.push_back(std::move(rows));
    return {t, blocks.size() - 1};
  }
  std::vector<Block>& blocks_of(ConeType t) {
    return t == ConeType::Zero ? zero_ : (t == ConeType::NonNeg ? nonneg_ : soc_);
  }
  const std::vector<Block>& blocks_of(ConeType t) const {
    return t == ConeType::Zero ? zero_ : (t == ConeType::NonNeg ? nonneg_ : soc_);
  }
  Index count_rows(ConeType t) const {
    Index n = 0;
    for (const auto& b : blocks_of(t)) n += static_cast<Index>(b.size());
    return n;
  }

  Index nvars_ = 0;
  AffineExpr objective_;
  std::vector<Block> zero_, nonneg_, soc_;
};

// Best rational approximation p/q with q <= max_den (continued fractions).
inline std::pair<std::int64_t, std::int64_t> rationalize(double x, std::int64_t max_den) {
  std::int64_t p0 = 0, q0 = 1, p1 = 1, q1 = 0;
  double v = x;
  for (int it = 0; it < 64; ++it) {
    const double a = std::floor(v);
    const auto ai = static_cast<std::int64_t>(a);
    const std::int64_t p2 = ai * p1 + p0;
    const std::int64_t q2 = ai * q1 + q0;
    if (q2 > max_den) break;
    p0 = p1;
    q0 = q1;
    p1 = p2;
    q1 = q2;
    const double frac = v - a;
    if (frac < 1e-15) break;
    v = 1.0 / frac;
  }
  return {p1, q1};
}

inline Index ProgramBuilder::add_geometric_mean(const std::vector<AffineExpr>& leaves,
                                                const std::vector<double>& beta) {
  if (leaves.size() != beta.size() || leaves.empty())
    throw Error(ErrorCode::InvalidArgument, "geometric mean needs one weight per leaf");
  constexpr std::int64_t kMaxDen = 1024;
  std::vector<std::int64_t> num(beta.size()), den(beta.size());
  std::int64_t q = 1;
  for (std::size_t k = 0; k < beta.size(); ++k) {
    if (beta[k] < 0) throw Error(ErrorCode::InvalidArgument, "negative geometric-mean weight");
    auto [p, d] = rationalize(beta[k], kMaxDen);
    if (std::abs(static_cast<double>(p) / static_cast<double>(d) - beta[k]) > 1e-9)
      throw Error(ErrorCode::IrrationalBeta, "weight " + std::to_string(beta[k]) +
                                                 " has no rational form with denominator <= 1024");
    num[k] = p;
    den[k] = d;
    q = std::lcm(q, d);
    if (q > kMaxDen) throw Error(ErrorCode::IrrationalBeta, "common denominator of weights exceeds 1024");
  }
  std::int64_t total = 0;
  for (std::size_t k = 0; k < beta.size(); ++k) {
    num[k] *= q / den[k];
    total += num[k];
  }
  if (total != q) throw Error(ErrorCode::IrrationalBeta, "weights do not sum to one");

  const Index g = add_variable();
  std::vector<AffineExpr> level;
  for (std::size_t k = 0; k < beta.size(); ++k)
    for (std::int64_t j = 0; j < num[k]; ++j) level.push_back(leaves[k]);
  if (level.size() == 1) {
    add_nonneg({level.front() - AffineExpr::var(g)});
    return g;
  }
  std::size_t width = 1;
  while (width < level.size()) width *= 2;
  while (level.size() < width) level.push_back(AffineExpr::var(g));
  while (level.size() > 1) {
    std::vector<AffineExpr> next;
    for (std::size_t k = 0; k + 1 < level.size(); k += 2) {
      const Index x = add_variable();
      add_hyperbolic({AffineExpr::var(x)}, level[k], level[k + 1]);
      next.push_back(AffineExpr::var(x));
    }
    level = std::move(next);
  }
  add_nonneg({level.front() - AffineExpr::var(g)});
  return g;
}

// Plain-text interchange format. Sections list nonzeros only.
inline void dump(const ConeProgram& p, std::ostream& out) {
  out << "optdesign-cone-program 1\n";
  out << "vars " << p.num_vars() << "\nrows " << p.num_rows() << "\n";
  out << "cones " << p.cones.size() << "\n";
  for (const auto& k : p.cones) out << to_string(k.type) << ' ' << k.size << "\n";
  out << std::setprecision(17);
  out << "offset " << p.objective_offset << "\n";
  std::vector<Index> nzc;
  for (Index j = 0; j < p.c.size(); ++j)
    if (p.c[j] != 0) nzc.push_back(j);
  out << "c " << nzc.size() << "\n";
  for (auto j : nzc) out << j << ' ' << p.c[j] << "\n";
  std::vector<Index> nzb;
  for (Index i = 0; i < p.b.size(); ++i)
    if (p.b[i] != 0) nzb.push_back(i);
  out << "b " << nzb.size() << "\n";
  for (auto i : nzb) out << i << ' ' << p.b[i] << "\n";
  out << "A " << p.A.nonZeros() << "\n";
  for (Index j = 0; j < p.A.outerSize(); ++j)
    for (SparseMatrix::InnerIterator it(p.A, j); it; ++it) out << it.row() << ' ' << j << ' ' << it.value() << "\n";
  out << "end\n";
}

inline std::string dump(const ConeProgram& p) {
  std::ostringstream os;
  dump(p, os);
  return os.str();
}

inline ConeProgram parse_program(std::istream& in) {
  auto fail = [](const std::string& what) -> void { throw Error(ErrorCode::ParseError, what); };
  std::string tok;
  int version = 0;
  if (!(in >> tok >> version) || tok != "optdesign-cone-program" || version != 1) fail("bad header");
  Index n = 0, m = 0;
  std::size_t ncones = 0;
  if (!(in >> tok >> n) || tok != "vars") fail("expected vars");
  if (!(in >> tok >> m) || tok != "rows") fail("expected rows");
  if (!(in >> tok >> ncones) || tok != "cones") fail("expected cones");
  ConeProgram p;
  for (std::size_t k = 0; k < ncones; ++k) {
    Index size = 0;
    if (!(in >> tok >> size)) fail("truncated cone list");
    ConeType t = tok == "zero" ? ConeType::Zero : tok == "nonneg" ? ConeType::NonNeg : ConeType::SOC;
    if (tok != "zero" && tok != "nonneg" && tok != "soc") fail("unknown cone " + tok);
    p.cones.push_back({t, size});
  }
  if (!(in >> tok >> p.objective_offset) || tok != "offset") fail("expected offset");
  std::size_t cnt = 0;
  p.c = Vector::Zero(n);
  p.b = Vector::Zero(m);
  if (!(in >> tok >> cnt) || tok != "c") fail("expected c");
  for (std::size_t k = 0; k < cnt; ++k) {
    Index j;
    double v;
    if (!(in >> j >> v) || j < 0 || j >= n) fail("bad c entry");
    p.c[j] = v;
  }
  if (!(in >> tok >> cnt) || tok != "b") fail("expected b");
  for (std::size_t k = 0; k < cnt; ++k) {
    Index i;
    double v;
    if (!(in >> i >> v) || i < 0 || i >= m) fail("bad b entry");
    p.b[i] = v;
  }
  if (!(in >> tok >> cnt) || tok != "A") fail("expected A");
  std::vector<Eigen::Triplet<double>> trip;
  for (std::size_t k = 0; k < cnt; ++k) {
    Index i, j;
    double v;
    if (!(in >> i >> j >> v) || i < 0 || i >= m || j < 0 || j >= n) fail("bad A entry");
    trip.emplace_back(i, j, v);
  }
  if (!(in >> tok) || tok != "end") fail("expected end");
  p.A.resize(m, n);
  p.A.setFromTriplets(trip.begin(), trip.end());
  p.A.makeCompressed();
  p.validate();
  return p;
}

inline ConeProgram parse_program(const std::string& text) {
  std::istringstream is(text);
  return parse_program(is);
}

}  // namespace optdesign::conic
