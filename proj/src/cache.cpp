#include "probing/cache.hpp"

#include <cstdlib>
#include <fstream>

#include <fmt/format.h>
#include <json.hpp>

#include "probing/error.hpp"

namespace probing {

namespace fs = std::filesystem;

fs::path resolve_cache_root(const std::optional<fs::path>& override_dir) {
  if (override_dir) return *override_dir;
  if (const char* env = std::getenv(kCacheDirEnv); env && *env) return env;
  return ".probing-cache";
}

std::string key_file_stem(const std::string& key) {
  std::string stem;
  for (char c : key) {
    const bool safe = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                      (c >= '0' && c <= '9') || c == '-' || c == '_' || c == '.';
    stem += safe ? c : '_';
  }
  if (stem.size() > 120) stem.resize(120);
  return fmt::format("{}-{:08x}", stem, crc32_of(key));
}

StackCache::StackCache(const fs::path& root, const EncoderHandle& encoder,
                       const std::string& corpus)
    : dir_(root / key_file_stem(encoder.name) / key_file_stem(corpus)) {
  fs::create_directories(dir_ / "records");
  const nlohmann::json manifest = {{"format", "layer-stack-cache"},
                                   {"version", 1},
                                   {"encoder", encoder.name},
                                   {"corpus", corpus},
                                   {"layer_count", encoder.layer_count},
                                   {"width", encoder.width},
                                   {"max_pieces", encoder.max_pieces}};
  const auto path = dir_ / "manifest.json";
  if (fs::exists(path)) {
    std::ifstream in(path);
    nlohmann::json existing;
    try {
      in >> existing;
    } catch (const nlohmann::json::exception&) {
      throw IntegrityError("unreadable cache manifest " + path.string());
    }
    if (existing != manifest)
      throw IntegrityError("cache manifest " + path.string() +
                           " describes a different encoder configuration");
    return;
  }
  const auto tmp = path.string() + ".tmp";
  std::ofstream(tmp) << manifest.dump(2) << '\n';
  fs::rename(tmp, path);
}

fs::path StackCache::record_path(const std::string& key) const {
  return dir_ / "records" / (key_file_stem(key) + ".bin");
}

bool StackCache::contains(const std::string& key) const { return fs::exists(record_path(key)); }

void StackCache::write(const std::string& key, const LayerStack& stack) const {
  const auto path = record_path(key);
  const auto tmp = fs::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    const auto bytes = serialize_stack(stack);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

LayerStack StackCache::read(const std::string& key) const {
  const auto path = record_path(key);
  if (!fs::exists(path)) throw NotFoundError("no cached layers for key '" + key + "'");
  std::ifstream in(path, std::ios::binary);
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return deserialize_stack(bytes);
  } catch (const IntegrityError& e) {
    throw IntegrityError(std::string(e.what()) + " (" + path.string() + ")");
  }
}

}  // namespace probing
