#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>

#include "lsas/backbone.hpp"

namespace lsas {

using Json = nlohmann::json;

Json to_json(const ModelConfig& cfg);
/// Missing keys keep their defaults; unknown attention names raise ConfigError.
ModelConfig model_config_from_json(const Json& j);

/// Archive layout: "LSASCKPT", u32 version, u64 + JSON metadata, u64 tensor
/// count, then per tensor: u32 + name, u8 dtype (0 f32, 1 f64), u32 rank,
/// i32 dims, raw little-endian values.
struct CheckpointArchive {
  Json meta;
  std::map<std::string, Tensor<double>> tensors;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <class T>
void write_checkpoint(const std::filesystem::path& path, const Json& meta,
                      const std::map<std::string, const Tensor<T>*>& tensors);
CheckpointArchive read_checkpoint(const std::filesystem::path& path);

/// Every parameter and buffer of the model, keyed by its dotted name.
template <class T>
std::map<std::string, const Tensor<T>*> model_state(Model<T>& model);

/// Copies archive tensors into the model. Every model tensor must be present
/// with the same shape; otherwise ConfigError.
template <class T>
void load_model_state(Model<T>& model, const CheckpointArchive& archive);

/// Rebuilds a model from an archive's "model" metadata and loads its weights.
template <class T>
Model<T> model_from_checkpoint(const CheckpointArchive& archive);

}  // namespace lsas
