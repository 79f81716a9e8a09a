#pragma once

// Versioned binary checkpoint container.
//
// Layout: 8-byte magic "MULSMOCK", u32 container version, u64 header length,
// UTF-8 JSON header, then float64 little-endian tensors in header order,
// each row-major. The header carries the format tag (e.g. {"vae-ckpt": 1}),
// the architecture config and free-form metadata.

#include "mulsmo/nn.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace mulsmo {

struct Checkpoint {
  nlohmann::json header;
  std::vector<std::pair<std::string, Mat>> tensors;

  const nlohmann::json& config() const { return header.at("config"); }
  const nlohmann::json& meta() const { return header.at("meta"); }
};

void write_checkpoint(const std::filesystem::path& path, const std::string& tag,
                      const nlohmann::json& config, const nlohmann::json& meta,
                      const std::vector<const ParamStore*>& stores);

// Throws MissingDependency if the file is absent and ConfigError if the tag
// or container version does not match.
Checkpoint read_checkpoint(const std::filesystem::path& path, const std::string& tag);

// Copies tensors with matching names into the store; every store entry must be present.
void load_params(ParamStore& store, const Checkpoint& ckpt);

// Row-major float32 array helpers shared by motion files and golden data.
void write_f32(const std::filesystem::path& path, const Mat& m);
Mat read_f32(const std::filesystem::path& path, Eigen::Index rows, Eigen::Index cols);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);
nlohmann::json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);
std::uint64_t file_hash(const std::filesystem::path& path);

}  // namespace mulsmo
