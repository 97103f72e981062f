#pragma once

// Binary tensor container shared by checkpoints and noise tapes:
//
//   CDMC1 <header bytes>\n
//   <UTF-8 JSON header: {"meta": {...}, "tensors": [{name, dtype, shape, offset}]}>
//   <payload: little-endian float64, row-major, tensors back to back>
//
// Offsets are byte offsets into the payload. Serialisation is
// deterministic, so equal contents give byte-identical files.

#include <filesystem>
#include <string>
#include <string_view>

#include "cdm/autodiff.hpp"
#include "cdm/diffusion.hpp"
#include "json.hpp"

namespace cdm {

struct Container {
  nlohmann::json meta = nlohmann::json::object();
  ParamStore tensors;
};

std::string serialize_container(const Container& c);
/// Throws std::runtime_error on a bad magic line, header, or truncated payload.
Container parse_container(std::string_view bytes);
void write_container(const std::filesystem::path& path, const Container& c);
Container read_container(const std::filesystem::path& path);

/// 16 hex digits of the FNV-1a hash of the payload bytes.
std::string payload_id(const Container& c);

/// Model spec, schedule kind, size histogram and parameters. `extra` is
/// stored under meta.run (config echo, seed) and does not affect the id.
Container model_to_container(const DiffusionModel& model,
                             const nlohmann::json& extra = nlohmann::json::object());
/// Rebuilds and validates a model. Throws std::runtime_error if the file is
/// not a checkpoint or its parameters do not match the recorded spec.
DiffusionModel model_from_container(const Container& c);

void save_checkpoint(const std::filesystem::path& path, const DiffusionModel& model,
                     const nlohmann::json& extra = nlohmann::json::object());
DiffusionModel load_checkpoint(const std::filesystem::path& path, std::string* id = nullptr,
                               nlohmann::json* extra = nullptr);
std::string checkpoint_id(const DiffusionModel& model);

Container tape_to_container(const NoiseTape& tape);
NoiseTape tape_from_container(const Container& c);

}  // namespace cdm
