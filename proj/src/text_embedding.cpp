#include "lively/text_embedding.hpp"

#include "lively/binary_io.hpp"
#include "lively/error.hpp"
#include "lively/rng.hpp"

#include <openssl/evp.h>

#include <cctype>
#include <cstdio>

namespace lively::text {

namespace {

constexpr char kMagic[4] = {'L', 'S', 'E', 'M'};
constexpr std::uint32_t kVersion = 1;

std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

ScriptKey script_key(std::string_view script) {
  ScriptKey key{};
  unsigned int len = 0;
  if (EVP_Digest(script.data(), script.size(), key.data(), &len, EVP_sha256(), nullptr) != 1 || len != key.size()) {
    fail(Errc::Io, "SHA-256 digest failed");
  }
  return key;
}

std::string key_hex(const ScriptKey& key) {
  std::string out;
  char buf[3];
  for (auto b : key) {
    std::snprintf(buf, sizeof buf, "%02x", b);
    out += buf;
  }
  return out;
}

std::vector<std::string> tokenize(std::string_view script) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char ch : script) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!cur.empty()) tokens.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

Eigen::VectorXd CodebookProvider::token_vector(std::string_view token) const {
  Rng rng(seed_ ^ fnv1a64(token));
  Eigen::VectorXd v(dim_);
  for (int i = 0; i < dim_; ++i) v[i] = rng.normal();
  return v.normalized();
}

double CodebookProvider::weight_of(const std::string& token) const {
  if (auto it = weights_.find(token); it != weights_.end()) return it->second;
  for (const auto& [prefix, w] : prefix_weights_) {
    if (token.starts_with(prefix)) return w;
  }
  return 1.0;
}

Eigen::VectorXd CodebookProvider::embed(std::string_view script) const {
  const auto tokens = tokenize(script);
  if (tokens.empty()) fail(Errc::UnknownScript, "script has no tokens");
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(dim_);
  for (const auto& t : tokens) sum += weight_of(t) * token_vector(t);
  const double n = sum.norm();
  if (n < 1e-10) fail(Errc::ZeroVector, "script embedding vanished");
  return sum / n;
}

void EmbeddingTable::put(std::string_view script, const Eigen::VectorXd& embedding) {
  std::vector<float> v(static_cast<std::size_t>(embedding.size()));
  for (Eigen::Index i = 0; i < embedding.size(); ++i) v[static_cast<std::size_t>(i)] = static_cast<float>(embedding[i]);
  put(script_key(script), std::move(v));
}

void EmbeddingTable::put(const ScriptKey& key, std::vector<float> embedding) {
  require(embedding.size() == static_cast<std::size_t>(kEmbeddingDim), Errc::ShapeMismatch,
          "embeddings must have 512 entries");
  entries_[key] = std::move(embedding);
}

Eigen::VectorXd EmbeddingTable::embed(std::string_view script) const {
  auto it = entries_.find(script_key(script));
  if (it == entries_.end()) fail(Errc::UnknownScript, "no stored embedding for script \"" + std::string(script) + "\"");
  Eigen::VectorXd v(kEmbeddingDim);
  for (int i = 0; i < kEmbeddingDim; ++i) v[i] = it->second[static_cast<std::size_t>(i)];
  return v;
}

std::vector<std::uint8_t> encode_embeddings(const EmbeddingTable& table) {
  io::ByteWriter w;
  w.bytes(kMagic, 4);
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(table.size()));
  for (const auto& [key, vec] : table.entries()) {
    w.bytes(key.data(), key.size());
    for (float f : vec) w.f32(f);
  }
  return std::move(w.buffer());
}

EmbeddingTable decode_embeddings(const std::vector<std::uint8_t>& bytes) {
  io::ByteReader r(bytes);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) fail(Errc::BadMagic, "not an LSEM embedding file");
  const std::uint32_t version = r.u32();
  if (version != kVersion) fail(Errc::VersionUnsupported, "LSEM version " + std::to_string(version));
  const std::uint32_t count = r.u32();
  EmbeddingTable table;
  for (std::uint32_t i = 0; i < count; ++i) {
    ScriptKey key;
    r.bytes(key.data(), key.size());
    std::vector<float> v(kEmbeddingDim);
    for (auto& f : v) f = r.f32();
    table.put(key, std::move(v));
  }
  return table;
}

void write_embeddings(const std::filesystem::path& path, const EmbeddingTable& table) {
  io::write_file(path, encode_embeddings(table));
}

EmbeddingTable read_embeddings(const std::filesystem::path& path) { return decode_embeddings(io::read_file(path)); }

}  // namespace lively::text
