#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace lively::text {

inline constexpr int kEmbeddingDim = 512;

using ScriptKey = std::array<std::uint8_t, 32>;

// SHA-256 of the script's UTF-8 bytes.
ScriptKey script_key(std::string_view script);
std::string key_hex(const ScriptKey& key);

std::vector<std::string> tokenize(std::string_view script);

// script -> unit-norm vector of kEmbeddingDim entries, deterministic per script.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual Eigen::VectorXd embed(std::string_view script) const = 0;
};

// Weighted mean of seeded per-token random vectors, then L2-normalized.
class CodebookProvider : public EmbeddingProvider {
 public:
  explicit CodebookProvider(std::uint64_t seed, int dim = kEmbeddingDim) : seed_(seed), dim_(dim) {}

  // Tokens without an entry weigh 1.
  void set_weight(const std::string& token, double weight) { weights_[token] = weight; }
  void set_prefix_weight(const std::string& prefix, double weight) { prefix_weights_[prefix] = weight; }

  Eigen::VectorXd token_vector(std::string_view token) const;
  Eigen::VectorXd embed(std::string_view script) const override;

 private:
  double weight_of(const std::string& token) const;

  std::uint64_t seed_;
  int dim_;
  std::map<std::string, double> weights_;
  std::map<std::string, double> prefix_weights_;
};

// Precomputed embeddings keyed by script hash.
class EmbeddingTable : public EmbeddingProvider {
 public:
  void put(std::string_view script, const Eigen::VectorXd& embedding);
  void put(const ScriptKey& key, std::vector<float> embedding);
  bool contains(std::string_view script) const { return entries_.contains(script_key(script)); }
  std::size_t size() const { return entries_.size(); }
  const std::map<ScriptKey, std::vector<float>>& entries() const { return entries_; }

  // Throws UnknownScript when the script was never stored.
  Eigen::VectorXd embed(std::string_view script) const override;

  bool operator==(const EmbeddingTable& o) const { return entries_ == o.entries_; }

 private:
  std::map<ScriptKey, std::vector<float>> entries_;
};

// "LSEM" | version u32 | count u32 | {SHA-256 key (32 bytes), 512 x f32}...
std::vector<std::uint8_t> encode_embeddings(const EmbeddingTable& table);
EmbeddingTable decode_embeddings(const std::vector<std::uint8_t>& bytes);
void write_embeddings(const std::filesystem::path& path, const EmbeddingTable& table);
EmbeddingTable read_embeddings(const std::filesystem::path& path);

}  // namespace lively::text
