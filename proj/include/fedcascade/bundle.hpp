#pragma once

// Embedding bundle: item features, per-user preference vectors and user
// clusters produced by the ratings pipeline.
//
// File layout, all integers u64 and all reals IEEE-754 f64, little-endian:
//
//   "CFEB1"                          5-byte magic; the trailing digit is the version
//   d, n_items, n_users, J
//   centers_scaled                   1 byte, 0 or 1
//   min_center_distance              f64 (+inf when J == 1)
//   n_sv, sv[n_sv]                   recovered singular values, descending
//   n_items x { id_len, id bytes, f64[d] feature }
//   n_users x { id_len, id bytes, cluster }
//   J x f64[d] center
//
// User preference vectors are not stored; they are the center of the user's
// cluster.

#include <bit>
#include <iterator>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedcascade/numerics.hpp"

namespace fedcascade {

class BundleFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr char kBundleMagic[5] = {'C', 'F', 'E', 'B', '1'};

struct EmbeddingBundle {
  std::size_t d = 0;
  std::vector<std::string> item_ids;
  std::vector<Vector> item_features;
  std::vector<std::string> user_ids;
  std::vector<std::size_t> cluster_of;
  std::vector<Vector> centers;
  bool centers_scaled = false;
  double min_center_distance = std::numeric_limits<double>::infinity();
  Vector singular_values;

  std::size_t num_clusters() const { return centers.size(); }
  const Vector& user_theta(std::size_t user) const { return centers.at(cluster_of.at(user)); }

  bool operator==(const EmbeddingBundle&) const = default;
};

namespace bundle_detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }
inline void put_str(std::string& out, const std::string& s) {
  put_u64(out, s.size());
  out += s;
}

class Reader {
 public:
  explicit Reader(const std::string& buf) : buf_(buf) {}
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n)
      throw BundleFormatError("corrupt bundle: truncated at byte " + std::to_string(pos_));
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  unsigned char byte() {
    need(1);
    return static_cast<unsigned char>(buf_[pos_++]);
  }
  std::string str() {
    const std::uint64_t n = u64();
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  // Guards element counts against the remaining payload before allocating.
  std::size_t count(std::uint64_t n, std::size_t min_bytes_each) const {
    if (min_bytes_each > 0 && n > (buf_.size() - pos_) / min_bytes_each)
      throw BundleFormatError("corrupt bundle: element count exceeds file size");
    return static_cast<std::size_t>(n);
  }
  bool at_end() const { return pos_ == buf_.size(); }
  std::size_t pos() const { return pos_; }

 private:
  const std::string& buf_;
  std::size_t pos_ = 0;
};

}  // namespace bundle_detail

inline void validate_bundle(const EmbeddingBundle& b) {
  if (b.d == 0) throw BundleFormatError("bundle: d must be >= 1");
  if (b.item_features.empty()) throw BundleFormatError("bundle: empty item list");
  if (b.item_ids.size() != b.item_features.size())
    throw BundleFormatError("bundle: item ids and features differ in length");
  if (b.user_ids.size() != b.cluster_of.size())
    throw BundleFormatError("bundle: user ids and cluster assignment differ in length");
  if (b.centers.empty()) throw BundleFormatError("bundle: no clusters");
  for (const auto& x : b.item_features)
    if (x.size() != b.d) throw BundleFormatError("bundle: item feature has wrong dimension");
  for (const auto& c : b.centers)
    if (c.size() != b.d) throw BundleFormatError("bundle: center has wrong dimension");
  std::vector<bool> used(b.centers.size(), false);
  for (std::size_t c : b.cluster_of) {
    if (c >= b.centers.size()) throw BundleFormatError("bundle: cluster index out of range");
    used[c] = true;
  }
  for (bool u : used)
    if (!u) throw BundleFormatError("bundle: empty cluster");
}

inline std::string encode_bundle(const EmbeddingBundle& b) {
  using namespace bundle_detail;
  validate_bundle(b);
  std::string out(kBundleMagic, sizeof(kBundleMagic));
  put_u64(out, b.d);
  put_u64(out, b.item_features.size());
  put_u64(out, b.user_ids.size());
  put_u64(out, b.centers.size());
  out.push_back(b.centers_scaled ? 1 : 0);
  put_f64(out, b.min_center_distance);
  put_u64(out, b.singular_values.size());
  for (double s : b.singular_values) put_f64(out, s);
  for (std::size_t i = 0; i < b.item_features.size(); ++i) {
    put_str(out, b.item_ids[i]);
    for (double v : b.item_features[i]) put_f64(out, v);
  }
  for (std::size_t u = 0; u < b.user_ids.size(); ++u) {
    put_str(out, b.user_ids[u]);
    put_u64(out, b.cluster_of[u]);
  }
  for (const auto& c : b.centers)
    for (double v : c) put_f64(out, v);
  return out;
}

inline EmbeddingBundle decode_bundle(const std::string& buf) {
  using namespace bundle_detail;
  if (buf.size() < sizeof(kBundleMagic) ||
      std::memcmp(buf.data(), kBundleMagic, 4) != 0)
    throw BundleFormatError("not an embedding bundle (expected magic CFEB1)");
  if (buf[4] != kBundleMagic[4])
    throw BundleFormatError(std::string("unsupported bundle version '") + buf[4] +
                            "' (this build reads CFEB1)");
  Reader r(buf);
  for (std::size_t i = 0; i < sizeof(kBundleMagic); ++i) r.byte();

  EmbeddingBundle b;
  b.d = r.count(r.u64(), 0);
  if (b.d == 0) throw BundleFormatError("corrupt bundle: d == 0");
  const std::size_t n_items = r.count(r.u64(), 8 + 8 * b.d);
  const std::size_t n_users = r.count(r.u64(), 16);
  const std::size_t n_clusters = r.count(r.u64(), 8 * b.d);
  const unsigned char scaled = r.byte();
  if (scaled > 1) throw BundleFormatError("corrupt bundle: bad centers_scaled flag");
  b.centers_scaled = scaled == 1;
  b.min_center_distance = r.f64();
  const std::size_t n_sv = r.count(r.u64(), 8);
  for (std::size_t i = 0; i < n_sv; ++i) b.singular_values.push_back(r.f64());
  for (std::size_t i = 0; i < n_items; ++i) {
    b.item_ids.push_back(r.str());
    Vector x(b.d);
    for (double& v : x) v = r.f64();
    b.item_features.push_back(std::move(x));
  }
  for (std::size_t u = 0; u < n_users; ++u) {
    b.user_ids.push_back(r.str());
    b.cluster_of.push_back(static_cast<std::size_t>(r.u64()));
  }
  for (std::size_t j = 0; j < n_clusters; ++j) {
    Vector c(b.d);
    for (double& v : c) v = r.f64();
    b.centers.push_back(std::move(c));
  }
  if (!r.at_end()) throw BundleFormatError("corrupt bundle: trailing bytes");
  validate_bundle(b);
  return b;
}

inline void write_bundle(const EmbeddingBundle& b, const std::string& path) {
  const std::string bytes = encode_bundle(b);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline EmbeddingBundle read_bundle(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open bundle: " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_bundle(bytes);
}

}  // namespace fedcascade
