#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>

#include "secap/model.hpp"

// Layout: "SECAPCKPT", u16 version, u32 metadata length + JSON text, u32
// parameter count, then per parameter: u32 name length + name, u8 dtype,
// u8 rank, rank x u64 dims, little-endian payload.
namespace secap {

inline constexpr std::uint16_t kCheckpointVersion = 1;

struct CheckpointMeta {
  ModelConfig model;
  LossWeights weights;
  std::size_t epoch = 0;
  std::uint64_t seed = 0;
};

template <class T>
void save_checkpoint(std::ostream& out, const SecapModel<T>& model, const CheckpointMeta& meta);
template <class T>
void save_checkpoint(const std::filesystem::path& path, const SecapModel<T>& model, const CheckpointMeta& meta);

CheckpointMeta read_checkpoint_meta(std::istream& in);

// Overwrites the model's parameters. The checkpoint must list exactly the
// model's parameter names with matching shapes.
template <class T>
CheckpointMeta load_checkpoint(std::istream& in, SecapModel<T>& model);
template <class T>
CheckpointMeta load_checkpoint(const std::filesystem::path& path, SecapModel<T>& model);

// Builds a model from the stored configuration and loads its weights.
std::unique_ptr<SecapModel<float>> load_model(const std::filesystem::path& path, CheckpointMeta* meta = nullptr);

}  // namespace secap
