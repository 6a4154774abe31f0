#pragma once

#include "lively/nn/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace lively::nn {

using TensorMap = std::map<std::string, Tensor<float>>;

// "LSCK" | version u32 | count u32 | {name_len u16, name, rank u8, dims u32..., f32 payload}...
std::vector<std::uint8_t> encode_checkpoint(const TensorMap& tensors);
TensorMap decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const TensorMap& tensors);
TensorMap load_checkpoint(const std::filesystem::path& path);

// Copies every weight of `params` into `out` under `prefix`.
template <typename T>
void export_params(const ParamTree<T>& params, const std::string& prefix, TensorMap& out) {
  for (const auto& [name, t] : params.weights()) out[prefix + name] = t.template cast<float>();
}

// Loads weights with matching names and shapes; throws BadIndex/ShapeMismatch otherwise.
template <typename T>
void import_params(ParamTree<T>& params, const std::string& prefix, const TensorMap& in) {
  for (auto& [name, t] : params.weights()) {
    auto it = in.find(prefix + name);
    if (it == in.end()) fail(Errc::BadIndex, "checkpoint lacks " + prefix + name);
    if (it->second.shape() != t.shape()) {
      fail(Errc::ShapeMismatch, "checkpoint tensor " + prefix + name + " has shape " +
                                    shape_string(it->second.shape()) + ", expected " + shape_string(t.shape()));
    }
    t = it->second.template cast<T>();
  }
}

void put_scalar(TensorMap& m, const std::string& name, double value);
double get_scalar(const TensorMap& m, const std::string& name);
double get_scalar(const TensorMap& m, const std::string& name, double fallback);

}  // namespace lively::nn
