#pragma once

// Seeded instance generators and the versioned JSON interchange format for
// problems and designs.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "optdesign/error.hpp"
#include "optdesign/model.hpp"

namespace optdesign {

using json = nlohmann::json;

// ------------------------------------------------------------------ random

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Named, independently seeded stream. Only the engine comes from the
// standard library (its output is specified bit for bit); the conversions to
// uniform and normal variates are spelled out so results do not depend on the
// library's distribution implementations.
class Stream {
 public:
  Stream(std::uint64_t seed, const std::string& name) : eng_(splitmix64(seed ^ fnv1a(name))) {}

  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }
  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::uint64_t below(std::uint64_t n) { return eng_() % n; }

 private:
  std::mt19937_64 eng_;
  bool has_spare_ = false;
  double spare_ = 0;
};

// --------------------------------------------------------------- generators

struct Generated {
  DesignProblem problem;
  std::string family;
  json parameters;
  std::vector<std::string> warnings;
};

// s experiments with l x m standard normal observation matrices. r = 1 gives
// a target vector, r > 1 a target matrix, r = 0 no target.
inline Generated gen_random(Index s, Index m, Index l, Index r, std::uint64_t seed) {
  if (s < 1 || m < 1 || l < 1 || r < 0) throw Error(ErrorCode::InvalidArgument, "dimensions must be positive");
  Generated g;
  g.family = "random";
  g.parameters = {{"s", s}, {"m", m}, {"l", l}, {"r", r}, {"seed", seed}};
  if (s * l < m)
    g.warnings.push_back("s*l = " + std::to_string(s * l) + " < m = " + std::to_string(m) +
                         ": no design gives a nonsingular information matrix");
  std::vector<Matrix> obs;
  for (Index i = 0; i < s; ++i) {
    Stream st(seed, "A/" + std::to_string(i));
    Matrix A(l, m);
    for (Index a = 0; a < l; ++a)
      for (Index j = 0; j < m; ++j) A(a, j) = st.normal();
    obs.push_back(std::move(A));
  }
  g.problem = DesignProblem(std::move(obs));
  if (r > 0) {
    Stream st(seed, "K");
    Matrix K(m, r);
    for (Index k = 0; k < r; ++k)
      for (Index j = 0; j < m; ++j) K(j, k) = st.normal();
    if (r == 1)
      g.problem.set_target(Vector(K.col(0)));
    else
      g.problem.set_target(K);
  }
  return g;
}

// Degree-d polynomial regression on an equispaced grid of [lo, hi]; target
// K = I for A- and T-type use.
inline Generated gen_polynomial(Index degree, double lo, double hi, Index grid) {
  if (degree < 0 || grid < 1 || !(hi > lo)) throw Error(ErrorCode::InvalidArgument, "bad polynomial parameters");
  Generated g;
  g.family = "polynomial";
  g.parameters = {{"degree", degree}, {"lo", lo}, {"hi", hi}, {"grid", grid}};
  if (grid < degree + 1) g.warnings.push_back("grid smaller than the number of coefficients");
  std::vector<Matrix> obs;
  for (Index j = 0; j < grid; ++j) {
    const double x = grid == 1 ? lo : lo + (hi - lo) * static_cast<double>(j) / static_cast<double>(grid - 1);
    Matrix a(1, degree + 1);
    double v = 1.0;
    for (Index k = 0; k <= degree; ++k) {
      a(0, k) = v;
      v *= x;
    }
    obs.push_back(std::move(a));
  }
  g.problem = DesignProblem(std::move(obs));
  g.problem.set_target(Matrix(Matrix::Identity(degree + 1, degree + 1)));
  return g;
}

enum class Traffic { Uniform, Lognormal };

struct Network {
  Index nodes = 0;
  std::vector<std::pair<Index, Index>> arcs;
  std::vector<std::pair<Index, Index>> od;  // parameter order
  Vector prior;                              // per OD pair
  Vector load;                               // per arc
};

// Strongly connected random digraph; one experiment per arc. Row d of A_e
// aggregates the OD pairs with destination d routed over e, each entry
// scaled by 1/sqrt(prior volume of the row). R[u, e] is the prior load of
// arc e for the arcs leaving u and b_u a fixed fraction of u's outgoing load.
inline Generated gen_network(Index nodes, Index edges, Traffic traffic, std::uint64_t seed, Network* out = nullptr) {
  if (nodes < 2) throw Error(ErrorCode::InvalidArgument, "need at least two nodes");
  if (edges > nodes * (nodes - 1)) throw Error(ErrorCode::InvalidArgument, "more arcs than a complete digraph has");
  if (edges < nodes)
    throw Error(ErrorCode::DisconnectedGraph, "a strongly connected digraph on " + std::to_string(nodes) +
                                                  " nodes needs at least " + std::to_string(nodes) + " arcs");
  Stream topo(seed, "topology");
  std::vector<Index> perm(static_cast<std::size_t>(nodes));
  for (Index i = 0; i < nodes; ++i) perm[static_cast<std::size_t>(i)] = i;
  for (Index i = nodes - 1; i > 0; --i) std::swap(perm[static_cast<std::size_t>(i)], perm[topo.below(static_cast<std::uint64_t>(i + 1))]);
  std::vector<std::vector<char>> adj(static_cast<std::size_t>(nodes), std::vector<char>(static_cast<std::size_t>(nodes), 0));
  Network net;
  net.nodes = nodes;
  for (Index i = 0; i < nodes; ++i) {
    const Index u = perm[static_cast<std::size_t>(i)], v = perm[static_cast<std::size_t>((i + 1) % nodes)];
    adj[static_cast<std::size_t>(u)][static_cast<std::size_t>(v)] = 1;
  }
  std::vector<std::pair<Index, Index>> rest;
  for (Index u = 0; u < nodes; ++u)
    for (Index v = 0; v < nodes; ++v)
      if (u != v && !adj[static_cast<std::size_t>(u)][static_cast<std::size_t>(v)]) rest.emplace_back(u, v);
  for (std::size_t i = rest.size(); i > 1; --i) std::swap(rest[i - 1], rest[topo.below(i)]);
  for (Index k = 0; k < edges - nodes; ++k) adj[static_cast<std::size_t>(rest[static_cast<std::size_t>(k)].first)][static_cast<std::size_t>(rest[static_cast<std::size_t>(k)].second)] = 1;
  for (Index u = 0; u < nodes; ++u)
    for (Index v = 0; v < nodes; ++v)
      if (adj[static_cast<std::size_t>(u)][static_cast<std::size_t>(v)]) net.arcs.emplace_back(u, v);

  for (Index o = 0; o < nodes; ++o)
    for (Index d = 0; d < nodes; ++d)
      if (o != d) net.od.emplace_back(o, d);
  const Index m = static_cast<Index>(net.od.size());
  Stream tr(seed, "traffic");
  net.prior.resize(m);
  for (Index k = 0; k < m; ++k)
    net.prior[k] = traffic == Traffic::Uniform ? tr.uniform(0.5, 1.5) : std::exp(tr.normal());

  // Destination-based shortest-path routing: next hop toward d is the
  // lowest-index neighbour one step closer (BFS on reversed arcs).
  std::vector<std::vector<Index>> next(static_cast<std::size_t>(nodes), std::vector<Index>(static_cast<std::size_t>(nodes), -1));
  for (Index d = 0; d < nodes; ++d) {
    std::vector<Index> dist(static_cast<std::size_t>(nodes), -1);
    dist[static_cast<std::size_t>(d)] = 0;
    std::deque<Index> q{d};
    while (!q.empty()) {
      const Index v = q.front();
      q.pop_front();
      for (Index u = 0; u < nodes; ++u)
        if (adj[static_cast<std::size_t>(u)][static_cast<std::size_t>(v)] && dist[static_cast<std::size_t>(u)] < 0) {
          dist[static_cast<std::size_t>(u)] = dist[static_cast<std::size_t>(v)] + 1;
          q.push_back(u);
        }
    }
    for (Index u = 0; u < nodes; ++u) {
      if (dist[static_cast<std::size_t>(u)] < 0) throw Error(ErrorCode::DisconnectedGraph, "graph is not strongly connected");
      if (u == d) continue;
      for (Index v = 0; v < nodes; ++v)
        if (adj[static_cast<std::size_t>(u)][static_cast<std::size_t>(v)] && dist[static_cast<std::size_t>(v)] == dist[static_cast<std::size_t>(u)] - 1) {
          next[static_cast<std::size_t>(u)][static_cast<std::size_t>(d)] = v;
          break;
        }
    }
  }
  const Index s = static_cast<Index>(net.arcs.size());
  std::vector<std::vector<Index>> arc_of(static_cast<std::size_t>(nodes), std::vector<Index>(static_cast<std::size_t>(nodes), -1));
  for (Index e = 0; e < s; ++e) arc_of[static_cast<std::size_t>(net.arcs[static_cast<std::size_t>(e)].first)][static_cast<std::size_t>(net.arcs[static_cast<std::size_t>(e)].second)] = e;
  // routes[e][d] = OD indices with destination d crossing e.
  std::vector<std::vector<std::vector<Index>>> routes(static_cast<std::size_t>(s), std::vector<std::vector<Index>>(static_cast<std::size_t>(nodes)));
  for (Index k = 0; k < m; ++k) {
    auto [o, d] = net.od[static_cast<std::size_t>(k)];
    Index u = o;
    while (u != d) {
      const Index v = next[static_cast<std::size_t>(u)][static_cast<std::size_t>(d)];
      routes[static_cast<std::size_t>(arc_of[static_cast<std::size_t>(u)][static_cast<std::size_t>(v)])][static_cast<std::size_t>(d)].push_back(k);
      u = v;
    }
  }
  net.load = Vector::Zero(s);
  std::vector<Matrix> obs;
  for (Index e = 0; e < s; ++e) {
    std::vector<Vector> rows;
    for (Index d = 0; d < nodes; ++d) {
      const auto& ks = routes[static_cast<std::size_t>(e)][static_cast<std::size_t>(d)];
      if (ks.empty()) continue;
      double vol = 0;
      for (auto k : ks) vol += net.prior[k];
      net.load[e] += vol;
      Vector row = Vector::Zero(m);
      for (auto k : ks) row[k] = 1.0 / std::sqrt(vol);
      rows.push_back(std::move(row));
    }
    Matrix A = Matrix::Zero(std::max<Index>(1, static_cast<Index>(rows.size())), m);
    for (std::size_t a = 0; a < rows.size(); ++a) A.row(static_cast<Index>(a)) = rows[a].transpose();
    obs.push_back(std::move(A));
  }
  const double floor_load = 0.01 * net.load.mean();
  Matrix R = Matrix::Zero(nodes, s);
  Vector b = Vector::Zero(nodes);
  for (Index e = 0; e < s; ++e) {
    const Index u = net.arcs[static_cast<std::size_t>(e)].first;
    R(u, e) = std::max(net.load[e], floor_load);
    b[u] += 0.3 * R(u, e);
  }
  Stream cs(seed, "c");
  Vector c(m);
  for (Index k = 0; k < m; ++k) c[k] = cs.normal();

  Generated g;
  g.family = "network";
  g.parameters = {{"nodes", nodes}, {"edges", edges}, {"traffic", traffic == Traffic::Uniform ? "uniform" : "lognormal"}, {"seed", seed}};
  g.problem = DesignProblem(std::move(obs));
  g.problem.set_target(c);
  g.problem.set_constraints(R, b);
  if (out) *out = net;
  return g;
}

// ------------------------------------------------------------ serialisation

inline constexpr int kSchemaVersion = 1;

inline json matrix_to_json(const Matrix& A) {
  Index nnz = 0;
  for (Index i = 0; i < A.rows(); ++i)
    for (Index j = 0; j < A.cols(); ++j)
      if (A(i, j) != 0.0) ++nnz;
  json j;
  j["rows"] = A.rows();
  j["cols"] = A.cols();
  if (A.size() > 0 && static_cast<double>(nnz) < 0.3 * static_cast<double>(A.size())) {
    j["encoding"] = "coo";
    json data = json::array();
    for (Index i = 0; i < A.rows(); ++i)
      for (Index c = 0; c < A.cols(); ++c)
        if (A(i, c) != 0.0) data.push_back(json::array({i, c, A(i, c)}));
    j["data"] = std::move(data);
  } else {
    j["encoding"] = "dense";
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(A.size()));
    for (Index i = 0; i < A.rows(); ++i)
      for (Index c = 0; c < A.cols(); ++c) data.push_back(A(i, c));
    j["data"] = data;
  }
  return j;
}

inline Matrix matrix_from_json(const json& j) {
  try {
    const Index rows = j.at("rows").get<Index>(), cols = j.at("cols").get<Index>();
    if (rows < 0 || cols < 0) throw Error(ErrorCode::SchemaValidation, "negative matrix shape");
    Matrix A = Matrix::Zero(rows, cols);
    const std::string enc = j.at("encoding").get<std::string>();
    const json& data = j.at("data");
    if (enc == "dense") {
      if (data.size() != static_cast<std::size_t>(rows * cols))
        throw Error(ErrorCode::SchemaValidation, "dense matrix data has wrong length");
      std::size_t k = 0;
      for (Index i = 0; i < rows; ++i)
        for (Index c = 0; c < cols; ++c) A(i, c) = data[k++].get<double>();
    } else if (enc == "coo") {
      for (const auto& t : data) {
        const Index i = t.at(0).get<Index>(), c = t.at(1).get<Index>();
        if (i < 0 || i >= rows || c < 0 || c >= cols) throw Error(ErrorCode::SchemaValidation, "coo index out of range");
        A(i, c) = t.at(2).get<double>();
      }
    } else {
      throw Error(ErrorCode::SchemaValidation, "unknown matrix encoding '" + enc + "'");
    }
    return A;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::SchemaValidation, e.what());
  }
}

inline json vector_to_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline Vector vector_from_json(const json& j) {
  try {
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size()));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::SchemaValidation, e.what());
  }
}

inline json problem_to_json(const DesignProblem& p, const std::string& family = "custom", const json& params = json::object()) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["kind"] = "problem";
  j["family"] = family;
  j["parameters"] = params;
  j["dims"] = {{"s", p.num_experiments()}, {"m", p.num_params()}, {"l", p.max_rows()}, {"r", p.target_columns()}};
  json obs = json::array();
  for (const auto& A : p.observations()) obs.push_back(matrix_to_json(A));
  j["experiments"] = std::move(obs);
  if (!p.has_target())
    j["target"] = nullptr;
  else if (p.target_is_vector())
    j["target"] = {{"kind", "vector"}, {"vector", vector_to_json(p.target_vector())}};
  else
    j["target"] = {{"kind", "matrix"}, {"matrix", matrix_to_json(p.target_matrix())}};
  if (p.constraints())
    j["constraints"] = {{"R", matrix_to_json(p.constraints()->R)}, {"b", vector_to_json(p.constraints()->b)}};
  else
    j["constraints"] = nullptr;
  if (p.models()) {
    json ms = json::array();
    for (const auto& sm : p.models()->models) {
      json e = json::array();
      for (const auto& A : sm.observations) e.push_back(matrix_to_json(A));
      ms.push_back({{"target", vector_to_json(sm.target)}, {"experiments", std::move(e)}});
    }
    j["models"] = {{"beta", vector_to_json(p.models()->beta)}, {"models", std::move(ms)}};
  } else {
    j["models"] = nullptr;
  }
  return j;
}

inline void check_version(const json& j, const char* kind) {
  if (!j.is_object()) throw Error(ErrorCode::SchemaValidation, "document is not an object");
  if (!j.contains("schema_version")) throw Error(ErrorCode::SchemaValidation, "missing schema_version");
  if (!j["schema_version"].is_number_integer() || j["schema_version"].get<int>() != kSchemaVersion)
    throw Error(ErrorCode::SchemaVersionMismatch, "schema_version " + j["schema_version"].dump() + " is not supported (expected " +
                                                      std::to_string(kSchemaVersion) + ")");
  if (j.value("kind", std::string()) != kind)
    throw Error(ErrorCode::SchemaValidation, std::string("expected a ") + kind + " document");
}

inline DesignProblem problem_from_json(const json& j) {
  check_version(j, "problem");
  try {
    std::vector<Matrix> obs;
    for (const auto& e : j.at("experiments")) obs.push_back(matrix_from_json(e));
    DesignProblem p(std::move(obs));
    const json& t = j.at("target");
    if (!t.is_null()) {
      const std::string kind = t.at("kind").get<std::string>();
      if (kind == "vector")
        p.set_target(vector_from_json(t.at("vector")));
      else if (kind == "matrix")
        p.set_target(matrix_from_json(t.at("matrix")));
      else
        throw Error(ErrorCode::SchemaValidation, "unknown target kind");
    }
    if (j.contains("constraints") && !j["constraints"].is_null())
      p.set_constraints(matrix_from_json(j["constraints"].at("R")), vector_from_json(j["constraints"].at("b")));
    if (j.contains("models") && !j["models"].is_null()) {
      MultiModel mm;
      mm.beta = vector_from_json(j["models"].at("beta"));
      for (const auto& sm : j["models"].at("models")) {
        SubModel m;
        m.target = vector_from_json(sm.at("target"));
        for (const auto& e : sm.at("experiments")) m.observations.push_back(matrix_from_json(e));
        mm.models.push_back(std::move(m));
      }
      p.set_models(std::move(mm));
    }
    return p;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::SchemaValidation, e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::SchemaValidation) throw;
    throw Error(ErrorCode::SchemaValidation, e.what());
  }
}

inline std::string canonical(const json& j) { return j.dump(); }

// Identity hash over the canonical problem content (family metadata excluded).
inline std::string problem_hash(const DesignProblem& p) {
  json j = problem_to_json(p);
  j.erase("family");
  j.erase("parameters");
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << fnv1a(canonical(j));
  return os.str();
}

inline json design_to_json(const Design& d, const std::string& problem_hash_value, const json& extra = json::object()) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["kind"] = "design";
  j["problem_hash"] = problem_hash_value;
  j["weights"] = vector_to_json(d.weights());
  for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
  return j;
}

inline Design design_from_json(const json& j) {
  check_version(j, "design");
  try {
    return Design(vector_from_json(j.at("weights")));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::SchemaValidation, e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::SchemaValidation) throw;
    throw Error(ErrorCode::SchemaValidation, e.what());
  }
}

inline json parse_json_text(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ParseError, e.what());
  }
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ParseError, "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_json_text(ss.str());
}

inline void write_json_file(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::InvalidArgument, "cannot write " + path);
  out << j.dump(1) << "\n";
}

}  // namespace optdesign
