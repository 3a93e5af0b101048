#pragma once

// Ratings-matrix pipeline: CSV loading, most-rated filtering, truncated SVD
// embeddings by orthogonal iteration, k-means user clustering, and assembly
// of the embedding bundle consumed by the ratings-mode environment.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <system_error>
#include <vector>

#include "fedcascade/bundle.hpp"
#include "fedcascade/environment.hpp"
#include "fedcascade/numerics.hpp"
#include "fedcascade/rng.hpp"

namespace fedcascade {

struct Rating {
  std::string user_id;
  std::string item_id;
  double rating = 0.0;
  bool operator==(const Rating&) const = default;
};

struct RatingsTable {
  std::vector<Rating> rows;
  std::size_t size() const { return rows.size(); }
  bool empty() const { return rows.empty(); }
};

class RatingsFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kRatingsHeader = "user_id,item_id,rating";

// Keeps the last rating of each (user, item) pair, at the position of its
// first occurrence.
inline RatingsTable deduplicate(const RatingsTable& t) {
  RatingsTable out;
  std::map<std::pair<std::string, std::string>, std::size_t> where;
  for (const auto& r : t.rows) {
    auto [it, fresh] = where.emplace(std::make_pair(r.user_id, r.item_id), out.rows.size());
    if (fresh)
      out.rows.push_back(r);
    else
      out.rows[it->second].rating = r.rating;
  }
  return out;
}

inline RatingsTable parse_ratings(std::istream& in, const std::string& source = "<ratings>") {
  RatingsTable t;
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string where = source + ":" + std::to_string(lineno);
    if (!header) {
      if (line != kRatingsHeader)
        throw RatingsFormatError(where + ": expected header '" + std::string(kRatingsHeader) + "'");
      header = true;
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    if (f.size() != 3)
      throw RatingsFormatError(where + ": expected 3 fields, got " + std::to_string(f.size()));
    if (f[0].empty() || f[1].empty()) throw RatingsFormatError(where + ": empty id");
    double v = 0.0;
    const auto res = std::from_chars(f[2].data(), f[2].data() + f[2].size(), v);
    if (res.ec != std::errc() || res.ptr != f[2].data() + f[2].size() || !std::isfinite(v))
      throw RatingsFormatError(where + ": non-numeric rating '" + f[2] + "'");
    t.rows.push_back({f[0], f[1], v});
  }
  if (!header) throw RatingsFormatError(source + ": empty file (missing header)");
  return deduplicate(t);
}

inline RatingsTable load_ratings(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open ratings file: " + path);
  return parse_ratings(in, path);
}

namespace ingest_detail {

// Ids ordered by descending count, then ascending id.
inline std::vector<std::string> most_frequent(const std::map<std::string, std::size_t>& counts,
                                              std::size_t n) {
  std::vector<std::pair<std::string, std::size_t>> v(counts.begin(), counts.end());
  std::stable_sort(v.begin(), v.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < v.size() && i < n; ++i) out.push_back(v[i].first);
  return out;
}

}  // namespace ingest_detail

// Keeps the n_items most-rated items, then the n_users most active users
// among ratings of those items. Ties go to the lexicographically smaller id.
inline RatingsTable top_filter(const RatingsTable& t, std::size_t n_items, std::size_t n_users,
                               std::vector<std::string>* warnings = nullptr) {
  if (t.empty()) throw std::invalid_argument("top_filter: empty ratings table");
  std::map<std::string, std::size_t> item_counts;
  for (const auto& r : t.rows) ++item_counts[r.item_id];
  if (item_counts.size() < n_items && warnings)
    warnings->push_back("requested " + std::to_string(n_items) + " items but only " +
                        std::to_string(item_counts.size()) + " distinct items exist; keeping all");
  const auto items = ingest_detail::most_frequent(item_counts, n_items);
  const std::set<std::string> keep_items(items.begin(), items.end());

  std::map<std::string, std::size_t> user_counts;
  for (const auto& r : t.rows)
    if (keep_items.count(r.item_id)) ++user_counts[r.user_id];
  if (user_counts.size() < n_users && warnings)
    warnings->push_back("requested " + std::to_string(n_users) + " users but only " +
                        std::to_string(user_counts.size()) +
                        " users rate the kept items; keeping all");
  const auto users = ingest_detail::most_frequent(user_counts, n_users);
  const std::set<std::string> keep_users(users.begin(), users.end());

  RatingsTable out;
  for (const auto& r : t.rows)
    if (keep_items.count(r.item_id) && keep_users.count(r.user_id)) out.rows.push_back(r);
  return out;
}

// Row-major dense matrix.
struct DenseMatrix {
  std::size_t rows = 0, cols = 0;
  std::vector<double> data;

  DenseMatrix() = default;
  DenseMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  Vector times(std::span<const double> x) const {
    check_dim(cols, x.size());
    Vector y(rows, 0.0);
    for (std::size_t i = 0; i < rows; ++i) y[i] = dot(std::span<const double>(&data[i * cols], cols), x);
    return y;
  }
  Vector transpose_times(std::span<const double> y) const {
    check_dim(rows, y.size());
    Vector x(cols, 0.0);
    for (std::size_t i = 0; i < rows; ++i) axpy(y[i], std::span<const double>(&data[i * cols], cols), x);
    return x;
  }
};

// Users x items with missing entries 0; rows and columns follow sorted ids.
struct RatingsMatrix {
  std::vector<std::string> user_ids, item_ids;
  DenseMatrix m;
};

inline RatingsMatrix dense_ratings(const RatingsTable& t) {
  RatingsMatrix out;
  std::map<std::string, std::size_t> users, items;
  for (const auto& r : t.rows) {
    users.emplace(r.user_id, 0);
    items.emplace(r.item_id, 0);
  }
  for (auto& [id, idx] : users) {
    idx = out.user_ids.size();
    out.user_ids.push_back(id);
  }
  for (auto& [id, idx] : items) {
    idx = out.item_ids.size();
    out.item_ids.push_back(id);
  }
  out.m = DenseMatrix(users.size(), items.size());
  for (const auto& r : t.rows) out.m(users[r.user_id], items[r.item_id]) = r.rating;
  return out;
}

struct SvdOptions {
  double tol = 1e-8;  // on the subspace change between iterations
  std::size_t max_iter = 1000;
  std::size_t oversample = 5;
  std::uint64_t seed = 0;
};

struct TruncatedSvd {
  Vector singular_values;        // descending, length d
  std::vector<Vector> left;      // d columns of length rows
  std::vector<Vector> right;     // d columns of length cols
  std::size_t iterations = 0;
  double achieved_tol = 0.0;
};

class SvdNotConverged : public std::runtime_error {
 public:
  SvdNotConverged(std::size_t iters, double achieved)
      : std::runtime_error("svd did not converge in " + std::to_string(iters) +
                           " iterations (achieved subspace tolerance " + to_str(achieved) + ")"),
        achieved_tol(achieved) {}
  double achieved_tol;

 private:
  static std::string to_str(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
  }
};

namespace ingest_detail {

// Modified Gram-Schmidt, two passes. A column that collapses is replaced by
// the fallback column (then a random one) and re-orthogonalized.
inline void orthonormalize(std::vector<Vector>& q, const std::vector<Vector>& fallback, Rng& rng) {
  for (std::size_t k = 0; k < q.size(); ++k) {
    const double scale = std::max(norm2(q[k]), 1.0);
    for (int attempt = 0;; ++attempt) {
      for (int pass = 0; pass < 2; ++pass)
        for (std::size_t j = 0; j < k; ++j) axpy(-dot(q[k], q[j]), q[j], q[k]);
      const double n = norm2(q[k]);
      if (n > 1e-10 * scale) {
        for (double& x : q[k]) x /= n;
        break;
      }
      if (attempt == 0 && k < fallback.size())
        q[k] = fallback[k];
      else
        q[k] = random_unit_vector(q[k].size(), rng);
    }
  }
}

// Frobenius norm of (I - B B^T) A for orthonormal column sets A and B.
inline double subspace_change(const std::vector<Vector>& a, const std::vector<Vector>& b) {
  double total = 0.0;
  for (const auto& col : a) {
    Vector r = col;
    for (const auto& q : b) axpy(-dot(col, q), q, r);
    total += dot(r, r);
  }
  return std::sqrt(total);
}

}  // namespace ingest_detail

// Rank-d truncated SVD by block power iteration on M^T M with Rayleigh-Ritz
// extraction. Converged when the span of the top Ritz vectors with nonzero
// singular value moves by at most opts.tol between iterations.
inline TruncatedSvd truncated_svd(const DenseMatrix& m, std::size_t d, const SvdOptions& opts = {}) {
  const std::size_t small = std::min(m.rows, m.cols);
  if (d == 0) throw std::invalid_argument("svd: d must be >= 1");
  if (d > small)
    throw std::invalid_argument("svd: d=" + std::to_string(d) + " exceeds min(#users, #items)=" +
                                std::to_string(small));
  const std::size_t p = std::min(small, d + opts.oversample);
  Rng rng = Rng::stream(opts.seed, Stream::kSvdInit);

  std::vector<Vector> q(p);
  for (auto& col : q) col = random_unit_vector(m.cols, rng);
  ingest_detail::orthonormalize(q, {}, rng);

  std::vector<Vector> prev;
  TruncatedSvd out;
  out.achieved_tol = std::numeric_limits<double>::infinity();
  for (std::size_t it = 1; it <= opts.max_iter; ++it) {
    std::vector<Vector> z(p);
    for (std::size_t k = 0; k < p; ++k) z[k] = m.times(q[k]);
    SymMatrix b(p);
    for (std::size_t i = 0; i < p; ++i)
      for (std::size_t j = i; j < p; ++j) b.set(i, j, dot(z[i], z[j]));
    const EigenDecomposition eig = symmetric_eigen(b);

    std::vector<Vector> ritz(p, Vector(m.cols, 0.0));
    for (std::size_t k = 0; k < p; ++k)
      for (std::size_t j = 0; j < p; ++j) axpy(eig.vectors[k][j], q[j], ritz[k]);
    Vector sv(p);
    for (std::size_t k = 0; k < p; ++k) sv[k] = std::sqrt(std::max(eig.values[k], 0.0));

    std::size_t live = 0;
    while (live < d && sv[live] > 1e-12 * std::max(sv[0], 1e-300)) ++live;
    std::vector<Vector> top(ritz.begin(), ritz.begin() + static_cast<std::ptrdiff_t>(live));
    if (!prev.empty() || live == 0) {
      out.achieved_tol = live == 0 ? 0.0 : ingest_detail::subspace_change(prev, top);
      if (out.achieved_tol <= opts.tol) {
        out.iterations = it;
        for (std::size_t k = 0; k < d; ++k) {
          Vector v = ritz[k];
          // Sign: largest-magnitude entry of each right vector is positive.
          std::size_t arg = 0;
          for (std::size_t i = 1; i < v.size(); ++i)
            if (std::abs(v[i]) > std::abs(v[arg])) arg = i;
          if (v[arg] < 0.0)
            for (double& x : v) x = -x;
          Vector u = m.times(v);
          if (k < live)
            for (double& x : u) x /= sv[k];
          else
            std::fill(u.begin(), u.end(), 0.0);
          out.singular_values.push_back(k < live ? sv[k] : 0.0);
          out.left.push_back(std::move(u));
          out.right.push_back(std::move(v));
        }
        return out;
      }
    }
    prev = std::move(top);

    std::vector<Vector> next(p);
    for (std::size_t k = 0; k < p; ++k) next[k] = m.transpose_times(m.times(ritz[k]));
    ingest_detail::orthonormalize(next, ritz, rng);
    q = std::move(next);
  }
  throw SvdNotConverged(opts.max_iter, out.achieved_tol);
}

struct SvdEmbedding {
  std::vector<std::string> user_ids, item_ids;
  std::vector<Vector> user_vectors;  // inside the unit ball
  std::vector<Vector> item_vectors;  // unit norm
  Vector singular_values;
  bool users_scaled = false;
  std::size_t iterations = 0;
  double achieved_tol = 0.0;
};

// User rows U_d sqrt(S_d) scaled uniformly into the unit ball; item rows
// V_d sqrt(S_d) normalized to unit length.
inline SvdEmbedding svd_embed(const RatingsTable& t, std::size_t d, const SvdOptions& opts = {}) {
  if (t.empty()) throw std::invalid_argument("svd_embed: empty ratings table");
  const RatingsMatrix rm = dense_ratings(t);
  const TruncatedSvd svd = truncated_svd(rm.m, d, opts);
  SvdEmbedding e;
  e.user_ids = rm.user_ids;
  e.item_ids = rm.item_ids;
  e.singular_values = svd.singular_values;
  e.iterations = svd.iterations;
  e.achieved_tol = svd.achieved_tol;
  Vector root(d);
  for (std::size_t k = 0; k < d; ++k) root[k] = std::sqrt(svd.singular_values[k]);

  double max_norm = 0.0;
  for (std::size_t i = 0; i < rm.m.rows; ++i) {
    Vector u(d);
    for (std::size_t k = 0; k < d; ++k) u[k] = svd.left[k][i] * root[k];
    max_norm = std::max(max_norm, norm2(u));
    e.user_vectors.push_back(std::move(u));
  }
  if (max_norm > 1.0) {
    e.users_scaled = true;
    for (auto& u : e.user_vectors)
      for (double& x : u) x /= max_norm;
  }
  for (std::size_t j = 0; j < rm.m.cols; ++j) {
    Vector v(d);
    for (std::size_t k = 0; k < d; ++k) v[k] = svd.right[k][j] * root[k];
    const double n = norm2(v);
    if (!(n > 0.0))
      throw std::runtime_error("svd_embed: item '" + rm.item_ids[j] + "' has a zero embedding");
    for (double& x : v) x /= n;
    e.item_vectors.push_back(std::move(v));
  }
  return e;
}

struct KMeansOptions {
  std::size_t max_iter = 300;
  double tol = 1e-8;  // on the largest center movement
  std::size_t n_init = 10;
};

struct KMeansResult {
  std::vector<Vector> centers;
  std::vector<std::size_t> assignment;
  double inertia = 0.0;
  std::size_t iterations = 0;
  std::vector<double> inertia_history;  // of the returned restart
};

namespace ingest_detail {

inline double sq_dist(std::span<const double> a, std::span<const double> b) {
  const double d = distance2(a, b);
  return d * d;
}

// Nearest center, ties to the lower index. Returns the inertia.
inline double assign(const std::vector<Vector>& points, const std::vector<Vector>& centers,
                     std::vector<std::size_t>& assignment) {
  double inertia = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    std::size_t best = 0;
    double best_d = sq_dist(points[i], centers[0]);
    for (std::size_t j = 1; j < centers.size(); ++j) {
      const double dj = sq_dist(points[i], centers[j]);
      if (dj < best_d) {
        best_d = dj;
        best = j;
      }
    }
    assignment[i] = best;
    inertia += best_d;
  }
  return inertia;
}

inline std::vector<Vector> plus_plus_seeds(const std::vector<Vector>& points, std::size_t J,
                                           Rng& rng) {
  std::vector<Vector> centers{points[rng.below(points.size())]};
  std::vector<double> d2(points.size());
  while (centers.size() < J) {
    double total = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : centers) best = std::min(best, sq_dist(points[i], c));
      d2[i] = best;
      total += best;
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      const double target = rng.uniform() * total;
      double acc = 0.0;
      pick = points.size() - 1;
      for (std::size_t i = 0; i < points.size(); ++i) {
        acc += d2[i];
        if (target < acc && d2[i] > 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = rng.below(points.size());
    }
    centers.push_back(points[pick]);
  }
  return centers;
}

inline KMeansResult lloyd(const std::vector<Vector>& points, std::vector<Vector> centers,
                         const KMeansOptions& opts) {
  const std::size_t J = centers.size();
  const std::size_t dim = points.front().size();
  KMeansResult r;
  r.assignment.assign(points.size(), 0);
  for (std::size_t it = 1; it <= opts.max_iter; ++it) {
    const double inertia = assign(points, centers, r.assignment);
    if (!r.inertia_history.empty() &&
        inertia > r.inertia_history.back() + 1e-12 * std::max(1.0, r.inertia_history.back()))
      throw std::logic_error("kmeans: inertia increased during Lloyd iterations");
    r.inertia_history.push_back(inertia);
    r.iterations = it;

    std::vector<std::size_t> size(J, 0);
    for (std::size_t a : r.assignment) ++size[a];
    for (std::size_t j = 0; j < J; ++j) {
      if (size[j] > 0) continue;
      // Re-seed from the point farthest from its own center.
      std::size_t far = 0;
      double far_d = -1.0;
      for (std::size_t i = 0; i < points.size(); ++i) {
        if (size[r.assignment[i]] <= 1) continue;
        const double di = sq_dist(points[i], centers[r.assignment[i]]);
        if (di > far_d) {
          far_d = di;
          far = i;
        }
      }
      if (far_d < 0.0) break;
      --size[r.assignment[far]];
      r.assignment[far] = j;
      size[j] = 1;
    }

    std::vector<Vector> next(J, Vector(dim, 0.0));
    for (std::size_t i = 0; i < points.size(); ++i) axpy(1.0, points[i], next[r.assignment[i]]);
    double movement = 0.0;
    for (std::size_t j = 0; j < J; ++j) {
      if (size[j] == 0) {
        next[j] = centers[j];
        continue;
      }
      for (double& x : next[j]) x /= static_cast<double>(size[j]);
      movement = std::max(movement, distance2(next[j], centers[j]));
    }
    centers = std::move(next);
    if (movement < opts.tol) break;
  }
  r.inertia = assign(points, centers, r.assignment);
  r.centers = std::move(centers);
  return r;
}

}  // namespace ingest_detail

// k-means++ seeding and Lloyd iterations, best of opts.n_init restarts by
// inertia. Cluster labels are renumbered in order of first appearance.
inline KMeansResult kmeans(const std::vector<Vector>& points, std::size_t J, Rng& rng,
                           const KMeansOptions& opts = {}) {
  if (J == 0) throw std::invalid_argument("kmeans: J must be >= 1");
  if (points.size() < J)
    throw std::invalid_argument("kmeans: " + std::to_string(points.size()) +
                                " points are fewer than J=" + std::to_string(J));
  for (const auto& p : points) check_dim(points.front().size(), p.size());
  KMeansResult best;
  bool have = false;
  for (std::size_t run = 0; run < std::max<std::size_t>(opts.n_init, 1); ++run) {
    KMeansResult r = ingest_detail::lloyd(points, ingest_detail::plus_plus_seeds(points, J, rng), opts);
    if (!have || r.inertia < best.inertia) {
      best = std::move(r);
      have = true;
    }
  }
  std::vector<std::size_t> relabel(J, SIZE_MAX);
  std::size_t next = 0;
  for (std::size_t a : best.assignment)
    if (relabel[a] == SIZE_MAX) relabel[a] = next++;
  for (std::size_t j = 0; j < J; ++j)
    if (relabel[j] == SIZE_MAX) relabel[j] = next++;
  std::vector<Vector> centers(J);
  for (std::size_t j = 0; j < J; ++j) centers[relabel[j]] = std::move(best.centers[j]);
  best.centers = std::move(centers);
  for (auto& a : best.assignment) a = relabel[a];
  return best;
}

struct IngestOptions {
  std::size_t d = 10;
  std::size_t J = 10;
  std::size_t n_items = 1000;
  std::size_t n_users = 1000;
  std::uint64_t seed = 0;
};

struct IngestResult {
  EmbeddingBundle bundle;
  std::vector<std::string> warnings;
  std::size_t svd_iterations = 0;
  double svd_achieved_tol = 0.0;
};

inline IngestResult build_bundle(const RatingsTable& table, const IngestOptions& opts) {
  if (opts.d == 0) throw std::invalid_argument("dim must be >= 1");
  if (opts.J == 0) throw std::invalid_argument("clusters must be >= 1");
  IngestResult res;
  const RatingsTable kept = top_filter(table, opts.n_items, opts.n_users, &res.warnings);
  SvdOptions svd_opts;
  svd_opts.seed = opts.seed;
  const SvdEmbedding e = svd_embed(kept, opts.d, svd_opts);
  if (opts.J > e.user_ids.size())
    throw std::invalid_argument("clusters=" + std::to_string(opts.J) + " exceeds #users=" +
                                std::to_string(e.user_ids.size()));
  Rng rng = Rng::stream(opts.seed, Stream::kKMeans);
  KMeansResult km = kmeans(e.user_vectors, opts.J, rng);

  EmbeddingBundle& b = res.bundle;
  b.d = opts.d;
  b.item_ids = e.item_ids;
  b.item_features = e.item_vectors;
  b.user_ids = e.user_ids;
  b.cluster_of = km.assignment;
  for (auto& c : km.centers) {
    const double n = norm2(c);
    if (n > 1.0) {
      for (double& x : c) x /= n;
      b.centers_scaled = true;
    }
  }
  b.centers = std::move(km.centers);
  b.min_center_distance = min_pairwise_distance(b.centers);
  b.singular_values = e.singular_values;
  res.svd_iterations = e.iterations;
  res.svd_achieved_tol = e.achieved_tol;
  validate_bundle(b);
  return res;
}

}  // namespace fedcascade
