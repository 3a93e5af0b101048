#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "fedcascade/ingest.hpp"

using namespace fedcascade;

namespace {

RatingsTable parse(const std::string& text) {
  std::istringstream in(text);
  return parse_ratings(in, "t.csv");
}

DenseMatrix random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  DenseMatrix m(r, c);
  for (double& x : m.data) x = rng.normal();
  return m;
}

Eigen::MatrixXd to_eigen(const DenseMatrix& m) {
  Eigen::MatrixXd e(m.rows, m.cols);
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < m.cols; ++j) e(i, j) = m(i, j);
  return e;
}

Eigen::MatrixXd reconstruction(const TruncatedSvd& s, std::size_t rows, std::size_t cols) {
  Eigen::MatrixXd r = Eigen::MatrixXd::Zero(rows, cols);
  for (std::size_t k = 0; k < s.singular_values.size(); ++k)
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j)
        r(i, j) += s.singular_values[k] * s.left[k][i] * s.right[k][j];
  return r;
}

// Two labelings describe the same partition.
bool same_partition(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  if (a.size() != b.size()) return false;
  std::map<std::size_t, std::size_t> ab, ba;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (ab.emplace(a[i], b[i]).first->second != b[i]) return false;
    if (ba.emplace(b[i], a[i]).first->second != a[i]) return false;
  }
  return true;
}

std::string data(const std::string& name) { return std::string(FEDCASCADE_TEST_DATA) + "/" + name; }

std::vector<std::size_t> fixture_groups(const std::vector<std::string>& user_ids) {
  std::ifstream in(data("ratings_fixture_groups.csv"));
  std::map<std::string, std::size_t> g;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    const auto comma = line.find(',');
    g[line.substr(0, comma)] = std::stoul(line.substr(comma + 1));
  }
  std::vector<std::size_t> out;
  for (const auto& id : user_ids) out.push_back(g.at(id));
  return out;
}

}  // namespace

TEST(ParseRatings, ThreeRows) {
  const RatingsTable t = parse("user_id,item_id,rating\nu1,i1,4\nu1,i2,2.5\nu2,i1,-1e-3\n");
  ASSERT_EQ(t.size(), 3u);
  EXPECT_EQ(t.rows[1], (Rating{"u1", "i2", 2.5}));
  EXPECT_EQ(t.rows[2].rating, -1e-3);
}

TEST(ParseRatings, DuplicatesKeepLastValueAtFirstPosition) {
  const RatingsTable t = parse("user_id,item_id,rating\nu1,i1,1\nu2,i1,2\nu1,i1,5\n");
  ASSERT_EQ(t.size(), 2u);
  EXPECT_EQ(t.rows[0], (Rating{"u1", "i1", 5.0}));
  EXPECT_EQ(t.rows[1], (Rating{"u2", "i1", 2.0}));
}

TEST(ParseRatings, CrlfAndBlankLines) {
  const RatingsTable t = parse("user_id,item_id,rating\r\nu1,i1,3\r\n\r\nu2,i2,1\r\n");
  EXPECT_EQ(t.size(), 2u);
}

TEST(ParseRatings, ErrorsNameTheLine) {
  auto message = [](const std::string& text) {
    try {
      parse(text);
    } catch (const RatingsFormatError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  EXPECT_EQ(message("user_id,item_id,rating\nu1,i1,1\nu2,i1,abc\n"),
            "t.csv:3: non-numeric rating 'abc'");
  EXPECT_EQ(message("user_id,item_id,rating\nu1,i1\n"), "t.csv:2: expected 3 fields, got 2");
  EXPECT_EQ(message("user_id,item_id,rating\nu1,i1,1,\n"), "t.csv:2: expected 3 fields, got 4");
  EXPECT_EQ(message("user_id,item_id,rating\n,i1,1\n"), "t.csv:2: empty id");
  EXPECT_EQ(message("user_id,item_id,rating\nu1,i1,nan\n"), "t.csv:2: non-numeric rating 'nan'");
  EXPECT_NE(message("user,item,rating\n").find("t.csv:1: expected header"), std::string::npos);
  EXPECT_EQ(message(""), "t.csv: empty file (missing header)");
  EXPECT_THROW(load_ratings("/nonexistent/r.csv"), std::runtime_error);
}

TEST(TopFilter, TiesGoToSmallerId) {
  const RatingsTable t = parse(
      "user_id,item_id,rating\n"
      "a,x,1\nb,x,1\nc,x,1\n"
      "a,z,1\nb,z,1\n"
      "c,y,1\na,y,1\n"
      "c,w,1\n");
  const RatingsTable kept = top_filter(t, 2, 10);
  std::set<std::string> items;
  for (const auto& r : kept.rows) items.insert(r.item_id);
  EXPECT_EQ(items, (std::set<std::string>{"x", "y"}));
}

TEST(TopFilter, UsersCountedOnKeptItemsOnly) {
  const RatingsTable t = parse(
      "user_id,item_id,rating\n"
      "a,x,1\nb,x,1\nb,y,1\nc,rare,1\nc,rare2,1\nc,x,1\nc,y,1\n");
  const RatingsTable kept = top_filter(t, 2, 1);
  for (const auto& r : kept.rows) EXPECT_EQ(r.user_id, "b");
  EXPECT_EQ(kept.size(), 2u);
}

TEST(TopFilter, WarnsWhenTooFew) {
  const RatingsTable t = parse("user_id,item_id,rating\na,x,1\nb,y,1\n");
  std::vector<std::string> w;
  EXPECT_EQ(top_filter(t, 5, 1, &w).size(), 1u);
  ASSERT_EQ(w.size(), 1u);
  EXPECT_EQ(w[0], "requested 5 items but only 2 distinct items exist; keeping all");
  w.clear();
  top_filter(t, 2, 9, &w);
  ASSERT_EQ(w.size(), 1u);
  EXPECT_NE(w[0].find("requested 9 users but only 2"), std::string::npos);
  EXPECT_THROW(top_filter(RatingsTable{}, 1, 1), std::invalid_argument);
}

TEST(DenseRatings, SortedIdsAndZeroFill) {
  const RatingsMatrix rm = dense_ratings(parse("user_id,item_id,rating\nb,y,2\na,x,1\n"));
  EXPECT_EQ(rm.user_ids, (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(rm.item_ids, (std::vector<std::string>{"x", "y"}));
  EXPECT_EQ(rm.m.data, (std::vector<double>{1, 0, 0, 2}));
}

TEST(TruncatedSvd, RankOne) {
  DenseMatrix m(3, 2);
  const double u[3] = {1, 2, 2}, v[2] = {0.6, -0.8};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 2; ++j) m(i, j) = u[i] * v[j];
  const TruncatedSvd s = truncated_svd(m, 1);
  EXPECT_NEAR(s.singular_values[0], 3.0, 1e-12);
  // Largest-magnitude entry of v is made positive.
  EXPECT_NEAR(s.right[0][0], -0.6, 1e-10);
  EXPECT_NEAR(s.right[0][1], 0.8, 1e-10);
  EXPECT_NEAR(s.left[0][1], -2.0 / 3.0, 1e-10);
}

TEST(TruncatedSvd, Diagonal) {
  DenseMatrix m(3, 3);
  m(0, 0) = 1;
  m(1, 1) = 3;
  m(2, 2) = 2;
  const TruncatedSvd s = truncated_svd(m, 3);
  EXPECT_NEAR(s.singular_values[0], 3.0, 1e-12);
  EXPECT_NEAR(s.singular_values[1], 2.0, 1e-12);
  EXPECT_NEAR(s.singular_values[2], 1.0, 1e-12);
  EXPECT_NEAR(s.right[0][1], 1.0, 1e-10);
  EXPECT_NEAR(s.right[2][0], 1.0, 1e-10);
}

TEST(TruncatedSvd, RankDeficientPadsWithZeros) {
  DenseMatrix m(4, 4);
  m(0, 0) = 2;
  m(1, 1) = 1;
  const TruncatedSvd s = truncated_svd(m, 3);
  EXPECT_NEAR(s.singular_values[0], 2.0, 1e-12);
  EXPECT_NEAR(s.singular_values[1], 1.0, 1e-12);
  EXPECT_EQ(s.singular_values[2], 0.0);
  EXPECT_NEAR(norm2(s.right[2]), 1.0, 1e-10);
}

TEST(TruncatedSvd, MatchesDenseOracleOnRandomMatrix) {
  Rng rng(3);
  const DenseMatrix m = random_matrix(30, 30, rng);
  const TruncatedSvd s = truncated_svd(m, 5);
  const Eigen::MatrixXd a = to_eigen(m);
  Eigen::JacobiSVD<Eigen::MatrixXd> ref(a, Eigen::ComputeFullU | Eigen::ComputeFullV);
  for (int k = 0; k < 5; ++k)
    EXPECT_NEAR(s.singular_values[k], ref.singularValues()(k), 1e-6 * ref.singularValues()(0));
  Eigen::MatrixXd best = Eigen::MatrixXd::Zero(30, 30);
  for (int k = 0; k < 5; ++k)
    best += ref.singularValues()(k) * ref.matrixU().col(k) * ref.matrixV().col(k).transpose();
  const double ours = (a - reconstruction(s, 30, 30)).norm();
  EXPECT_NEAR(ours, (a - best).norm(), 1e-6 * a.norm());
  for (int k = 0; k < 5; ++k) {
    EXPECT_NEAR(norm2(s.left[k]), 1.0, 1e-9);
    for (int l = 0; l < k; ++l) EXPECT_NEAR(dot(s.right[k], s.right[l]), 0.0, 1e-9);
  }
}

TEST(TruncatedSvd, ReconstructionErrorNonIncreasingInRank) {
  Rng rng(4);
  const DenseMatrix m = random_matrix(12, 9, rng);
  const Eigen::MatrixXd a = to_eigen(m);
  double prev = a.norm();
  for (std::size_t d = 1; d <= 9; ++d) {
    const double err = (a - reconstruction(truncated_svd(m, d), 12, 9)).norm();
    EXPECT_LE(err, prev + 1e-9);
    prev = err;
  }
  EXPECT_LT(prev, 1e-8);
}

TEST(TruncatedSvd, RejectsBadRank) {
  DenseMatrix m(3, 5);
  try {
    truncated_svd(m, 4);
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_EQ(std::string(e.what()), "svd: d=4 exceeds min(#users, #items)=3");
  }
  EXPECT_THROW(truncated_svd(m, 0), std::invalid_argument);
}

TEST(TruncatedSvd, ReportsNonConvergence) {
  Rng rng(5);
  const DenseMatrix m = random_matrix(40, 40, rng);
  SvdOptions o;
  o.max_iter = 2;
  o.tol = 1e-15;
  try {
    truncated_svd(m, 10, o);
    FAIL();
  } catch (const SvdNotConverged& e) {
    EXPECT_GT(e.achieved_tol, 0.0);
    EXPECT_NE(std::string(e.what()).find("achieved"), std::string::npos);
  }
}

TEST(SvdEmbed, NormsAndScaling) {
  Rng rng(6);
  RatingsTable t;
  for (int u = 0; u < 15; ++u)
    for (int i = 0; i < 10; ++i)
      t.rows.push_back({"u" + std::to_string(u), "i" + std::to_string(i), 5.0 * rng.uniform()});
  const SvdEmbedding e = svd_embed(t, 3);
  EXPECT_TRUE(e.users_scaled);
  double max_norm = 0.0;
  for (const auto& u : e.user_vectors) max_norm = std::max(max_norm, norm2(u));
  EXPECT_NEAR(max_norm, 1.0, 1e-12);
  for (const auto& v : e.item_vectors) EXPECT_NEAR(norm2(v), 1.0, 1e-12);
}

TEST(SvdEmbed, ZeroItemIsAnError) {
  // Item "z" only carries zeros so its embedding vanishes.
  const RatingsTable t = parse("user_id,item_id,rating\na,x,1\nb,y,2\na,z,0\n");
  EXPECT_THROW(svd_embed(t, 2), std::runtime_error);
}

TEST(KMeans, OneDimensionalExample) {
  const std::vector<Vector> pts = {{0.0}, {0.1}, {0.2}, {10.0}, {10.1}};
  Rng rng(1);
  const KMeansResult r = kmeans(pts, 2, rng);
  EXPECT_EQ(r.assignment, (std::vector<std::size_t>{0, 0, 0, 1, 1}));
  EXPECT_NEAR(r.centers[0][0], 0.1, 1e-12);
  EXPECT_NEAR(r.centers[1][0], 10.05, 1e-12);
  EXPECT_NEAR(r.inertia, 0.02 + 0.005, 1e-12);
}

TEST(KMeans, OneClusterPerPoint) {
  const std::vector<Vector> pts = {{0.0, 1.0}, {3.0, 1.0}, {0.0, -2.0}, {5.0, 5.0}};
  Rng rng(2);
  const KMeansResult r = kmeans(pts, 4, rng);
  EXPECT_EQ(r.assignment, (std::vector<std::size_t>{0, 1, 2, 3}));
  EXPECT_EQ(r.inertia, 0.0);
}

TEST(KMeans, MatchesBruteForceOnTwelvePoints) {
  Rng rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<Vector> pts;
    for (int i = 0; i < 12; ++i) {
      const double cx = (i % 3) * 4.0, cy = (i % 3 == 1) ? 3.0 : 0.0;
      pts.push_back({cx + rng.normal(), cy + rng.normal()});
    }
    // Exhaustive search over all labelings into 3 groups.
    double best = std::numeric_limits<double>::infinity();
    std::vector<std::size_t> lab(12, 0);
    for (int code = 0; code < 531441; ++code) {
      int c = code;
      for (auto& l : lab) {
        l = c % 3;
        c /= 3;
      }
      double sum[3][2] = {}, n[3] = {};
      for (int i = 0; i < 12; ++i) {
        sum[lab[i]][0] += pts[i][0];
        sum[lab[i]][1] += pts[i][1];
        ++n[lab[i]];
      }
      if (n[0] == 0 || n[1] == 0 || n[2] == 0) continue;
      double inertia = 0.0;
      for (int i = 0; i < 12; ++i)
        for (int k = 0; k < 2; ++k) {
          const double diff = pts[i][k] - sum[lab[i]][k] / n[lab[i]];
          inertia += diff * diff;
        }
      best = std::min(best, inertia);
    }
    Rng krng(100 + trial);
    EXPECT_NEAR(kmeans(pts, 3, krng).inertia, best, 1e-9 * std::max(1.0, best)) << trial;
  }
}

TEST(KMeans, InertiaHistoryNonIncreasingAndLabelsByFirstAppearance) {
  Rng rng(8);
  std::vector<Vector> pts;
  for (int i = 0; i < 200; ++i) pts.push_back(random_unit_vector(3, rng));
  for (std::size_t J : {2u, 5u, 9u}) {
    const KMeansResult r = kmeans(pts, J, rng);
    for (std::size_t i = 1; i < r.inertia_history.size(); ++i)
      EXPECT_LE(r.inertia_history[i], r.inertia_history[i - 1] * (1 + 1e-12));
    std::size_t next = 0;
    for (std::size_t a : r.assignment) {
      EXPECT_LE(a, next);
      if (a == next) ++next;
    }
    EXPECT_EQ(next, J);
  }
}

TEST(KMeans, RejectsTooFewPoints) {
  Rng rng(1);
  EXPECT_THROW(kmeans({{1.0}}, 2, rng), std::invalid_argument);
  EXPECT_THROW(kmeans({{1.0}}, 0, rng), std::invalid_argument);
}

TEST(Fixture, RecoversPlantedStructure) {
  const RatingsTable t = load_ratings(data("ratings_fixture.csv"));
  ASSERT_EQ(t.size(), 40000u);
  const SvdEmbedding e = svd_embed(t, 6);
  const RatingsMatrix rm = dense_ratings(t);
  Eigen::JacobiSVD<Eigen::MatrixXd> ref(to_eigen(rm.m));
  for (int k = 0; k < 6; ++k)
    EXPECT_NEAR(e.singular_values[k] / ref.singularValues()(k), 1.0, 1e-4);
  Rng rng = Rng::stream(0, Stream::kKMeans);
  const KMeansResult km = kmeans(e.user_vectors, 4, rng);
  EXPECT_TRUE(same_partition(km.assignment, fixture_groups(e.user_ids)));
}

TEST(BuildBundle, DeterministicAndConsistent) {
  const RatingsTable t = load_ratings(data("ratings_fixture.csv"));
  IngestOptions o;
  o.d = 10;
  o.J = 4;
  o.n_items = 150;
  o.n_users = 120;
  o.seed = 3;
  const IngestResult a = build_bundle(t, o), b = build_bundle(t, o);
  EXPECT_EQ(a.bundle, b.bundle);
  EXPECT_TRUE(a.warnings.empty());
  EXPECT_EQ(a.bundle.item_ids.size(), 150u);
  EXPECT_EQ(a.bundle.user_ids.size(), 120u);
  EXPECT_EQ(a.bundle.num_clusters(), 4u);
  for (const auto& c : a.bundle.centers) EXPECT_LE(norm2(c), 1.0 + 1e-12);
  EXPECT_EQ(a.bundle.min_center_distance, min_pairwise_distance(a.bundle.centers));
  EXPECT_EQ(decode_bundle(encode_bundle(a.bundle)), a.bundle);
  o.J = 121;
  EXPECT_THROW(build_bundle(t, o), std::invalid_argument);
}
