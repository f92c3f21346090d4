#pragma once

#include <string>

#include "dyadit/nn.hpp"

#include "json.hpp"

namespace dyadit {

// Checkpoint directory layout, shared by all trainable modules:
//   meta.json          format_version, kind, config echo, parameter names + shapes
//   <name>.f32         raw little-endian float32, row-major, one file per parameter
inline constexpr int kCheckpointFormatVersion = 1;

void save_checkpoint(const std::string& dir, const std::string& kind, const nlohmann::json& config,
                     const nn::ParameterStore& params);

// Reads meta.json; validates format version and kind. Returns the config echo.
nlohmann::json read_checkpoint_meta(const std::string& dir, const std::string& expected_kind);

// Loads parameter tensors into an already-constructed store (names and shapes must match).
void load_checkpoint_params(const std::string& dir, nn::ParameterStore& params);

// Raw f32 tensor file helpers (also used by the dataset format).
void write_f32_file(const std::string& path, const Tensor& t);
Tensor read_f32_file(const std::string& path, const std::vector<std::int64_t>& shape);

}  // namespace dyadit
