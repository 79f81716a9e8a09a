#include "mulsmo/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace mulsmo {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[8] = {'M', 'U', 'L', 'S', 'M', 'O', 'C', 'K'};
constexpr std::uint32_t kContainerVersion = 1;

static_assert(sizeof(double) == 8 && sizeof(float) == 4);

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw ConfigError("checkpoint: truncated file");
  return v;
}

}  // namespace

void write_checkpoint(const fs::path& path, const std::string& tag, const nlohmann::json& config,
                      const nlohmann::json& meta, const std::vector<const ParamStore*>& stores) {
  nlohmann::json header;
  header[tag] = 1;
  header["config"] = config;
  header["meta"] = meta;
  header["tensors"] = nlohmann::json::array();
  for (const auto* store : stores) {
    for (const auto& e : store->entries()) {
      header["tensors"].push_back({{"name", e.name}, {"rows", e.var.rows()}, {"cols", e.var.cols()}});
    }
  }
  const std::string text = header.dump();
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot write " + path.string());
  os.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(os, kContainerVersion);
  put<std::uint64_t>(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto* store : stores) {
    for (const auto& e : store->entries()) {
      const Mat& m = e.var.value();
      for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) put<double>(os, m(r, c));
      }
    }
  }
}

Checkpoint read_checkpoint(const fs::path& path, const std::string& tag) {
  if (!fs::exists(path)) throw MissingDependency("missing checkpoint " + path.string());
  std::ifstream is(path, std::ios::binary);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw ConfigError(path.string() + ": not a checkpoint container");
  }
  if (get<std::uint32_t>(is) != kContainerVersion) throw ConfigError(path.string() + ": unsupported container version");
  const auto len = get<std::uint64_t>(is);
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  Checkpoint ckpt;
  ckpt.header = nlohmann::json::parse(text);
  if (!ckpt.header.contains(tag) || ckpt.header.at(tag) != 1) {
    throw ConfigError(path.string() + ": expected format tag \"" + tag + "\": 1");
  }
  for (const auto& t : ckpt.header.at("tensors")) {
    const auto rows = t.at("rows").get<Eigen::Index>();
    const auto cols = t.at("cols").get<Eigen::Index>();
    Mat m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = get<double>(is);
    }
    ckpt.tensors.emplace_back(t.at("name").get<std::string>(), std::move(m));
  }
  return ckpt;
}

void load_params(ParamStore& store, const Checkpoint& ckpt) {
  for (auto& e : store.entries()) {
    bool found = false;
    for (const auto& [name, m] : ckpt.tensors) {
      if (name != e.name) continue;
      if (m.rows() != e.var.rows() || m.cols() != e.var.cols()) {
        throw ConfigError("checkpoint tensor " + name + " has mismatched shape");
      }
      e.var.mutable_value() = m;
      found = true;
      break;
    }
    if (!found) throw ConfigError("checkpoint lacks tensor " + e.name);
  }
}

void write_f32(const fs::path& path, const Mat& m) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot write " + path.string());
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) put<float>(os, static_cast<float>(m(r, c)));
  }
}

Mat read_f32(const fs::path& path, Eigen::Index rows, Eigen::Index cols) {
  if (!fs::exists(path)) throw MissingDependency("missing file " + path.string());
  const auto expected = static_cast<std::uintmax_t>(rows * cols) * sizeof(float);
  if (fs::file_size(path) != expected) throw ConfigError(path.string() + ": size does not match declared shape");
  std::ifstream is(path, std::ios::binary);
  Mat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = get<float>(is);
  }
  return m;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot write " + path.string());
  os << text;
}

std::string read_text(const fs::path& path) {
  if (!fs::exists(path)) throw MissingDependency("missing file " + path.string());
  std::ifstream is(path, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

nlohmann::json read_json(const fs::path& path) {
  try {
    return nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

std::uint64_t file_hash(const fs::path& path) {
  const std::string s = read_text(path);
  return fnv1a(s.data(), s.size());
}

}  // namespace mulsmo
