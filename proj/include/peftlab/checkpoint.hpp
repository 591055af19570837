#pragma once

// Checkpoint = JSON manifest `<stem>.json` + raw little-endian float64 buffer
// `<stem>.bin`. The manifest lists every parameter's name, shape, dtype, byte
// offset and byte length, plus free-form metadata.

#include <filesystem>

#include "json.hpp"
#include "peftlab/encoder.hpp"

namespace peftlab::model {

void save_checkpoint(const std::filesystem::path& stem, const ParameterList& params,
                     const nlohmann::json& metadata = nlohmann::json::object());

nlohmann::json read_manifest(const std::filesystem::path& stem);

// Copies stored values into the matching tensors of `params`. Every name in
// `params` must be present with an identical shape; extra names in the file
// are ignored unless `exact` is set. Returns the manifest metadata.
nlohmann::json load_checkpoint(const std::filesystem::path& stem, const ParameterList& params,
                               bool exact = false);

std::filesystem::path manifest_path(const std::filesystem::path& stem);
std::filesystem::path buffer_path(const std::filesystem::path& stem);

}  // namespace peftlab::model
