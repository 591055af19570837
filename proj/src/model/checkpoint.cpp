#include "peftlab/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>

#include "peftlab/errors.hpp"

namespace peftlab::model {

namespace {

std::uint64_t to_little(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    std::uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xFFu) << (8 * (7 - i));
    return r;
  }
  return v;
}

void write_atomically(const std::filesystem::path& path, const std::string& bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

std::filesystem::path manifest_path(const std::filesystem::path& stem) {
  auto p = stem;
  p += ".json";
  return p;
}

std::filesystem::path buffer_path(const std::filesystem::path& stem) {
  auto p = stem;
  p += ".bin";
  return p;
}

void save_checkpoint(const std::filesystem::path& stem, const ParameterList& params,
                     const nlohmann::json& metadata) {
  nlohmann::ordered_json manifest;
  manifest["format"] = "peftlab-checkpoint";
  manifest["version"] = 1;
  manifest["dtype"] = "float64";
  manifest["byte_order"] = "little";
  manifest["data_file"] = buffer_path(stem).filename().string();
  auto entries = nlohmann::ordered_json::array();
  std::string buffer;
  std::map<std::string, bool> seen;
  for (const auto& p : params) {
    if (seen[p.name]) throw ConfigError("duplicate parameter name '" + p.name + "' in checkpoint");
    seen[p.name] = true;
    nlohmann::ordered_json e;
    e["name"] = p.name;
    e["shape"] = p.tensor.shape();
    e["offset"] = buffer.size();
    e["nbytes"] = p.tensor.numel() * sizeof(double);
    entries.push_back(e);
    for (double v : p.tensor.data()) {
      const std::uint64_t bits = to_little(std::bit_cast<std::uint64_t>(v));
      char raw[8];
      std::memcpy(raw, &bits, 8);
      buffer.append(raw, 8);
    }
  }
  manifest["parameters"] = entries;
  manifest["metadata"] = metadata;
  write_atomically(buffer_path(stem), buffer);
  write_atomically(manifest_path(stem), manifest.dump(2) + "\n");
}

nlohmann::json read_manifest(const std::filesystem::path& stem) {
  std::ifstream in(manifest_path(stem));
  if (!in) throw DataError("cannot open checkpoint manifest " + manifest_path(stem).string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed checkpoint manifest " + manifest_path(stem).string() + ": " + e.what());
  }
  if (manifest.value("format", "") != "peftlab-checkpoint" || manifest.value("dtype", "") != "float64") {
    throw DataError("unsupported checkpoint format in " + manifest_path(stem).string());
  }
  return manifest;
}

nlohmann::json load_checkpoint(const std::filesystem::path& stem, const ParameterList& params,
                               bool exact) {
  const auto manifest = read_manifest(stem);
  std::ifstream in(stem.parent_path() / manifest.at("data_file").get<std::string>(), std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint buffer for " + stem.string());
  const std::string buffer((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  std::map<std::string, nlohmann::json> entries;
  for (const auto& e : manifest.at("parameters")) entries[e.at("name").get<std::string>()] = e;
  if (exact && entries.size() != params.size()) {
    throw DataError("checkpoint " + stem.string() + " holds " + std::to_string(entries.size()) +
                    " parameters, expected " + std::to_string(params.size()));
  }
  for (const auto& p : params) {
    auto it = entries.find(p.name);
    if (it == entries.end()) {
      throw DataError("checkpoint " + stem.string() + " has no parameter '" + p.name + "'");
    }
    const auto shape = it->second.at("shape").get<ad::Shape>();
    if (shape != p.tensor.shape()) {
      throw DataError("checkpoint shape mismatch for '" + p.name + "': stored " +
                      ad::to_string(shape) + ", model " + ad::to_string(p.tensor.shape()));
    }
    const auto offset = it->second.at("offset").get<std::size_t>();
    const auto nbytes = it->second.at("nbytes").get<std::size_t>();
    if (nbytes != p.tensor.numel() * sizeof(double) || offset + nbytes > buffer.size()) {
      throw DataError("checkpoint buffer too short for '" + p.name + "'");
    }
    ad::Tensor t = p.tensor;
    auto dst = t.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) {
      std::uint64_t bits;
      std::memcpy(&bits, buffer.data() + offset + 8 * i, 8);
      dst[i] = std::bit_cast<double>(to_little(bits));
    }
  }
  return manifest.value("metadata", nlohmann::json::object());
}

}  // namespace peftlab::model
