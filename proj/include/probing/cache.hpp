#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "probing/encoder.hpp"
#include "probing/layer_stack.hpp"

namespace probing {

/// Environment variable naming the default cache root.
inline constexpr const char* kCacheDirEnv = "PROBING_CACHE_DIR";

/// `override_dir` when given, else $PROBING_CACHE_DIR, else ".probing-cache".
std::filesystem::path resolve_cache_root(const std::optional<std::filesystem::path>& override_dir);

/// On-disk store of layer stacks for one (encoder, corpus) pair:
///
///   <root>/<encoder>/<corpus>/manifest.json
///   <root>/<encoder>/<corpus>/records/<key-file>.bin
///
/// Records are written to a temporary file and renamed into place, so a
/// reader sees either nothing or a complete record. One writer at a time.
class StackCache {
 public:
  StackCache(const std::filesystem::path& root, const EncoderHandle& encoder,
             const std::string& corpus);

  void write(const std::string& key, const LayerStack& stack) const;
  /// Throws NotFoundError for an absent key, IntegrityError for a damaged record.
  LayerStack read(const std::string& key) const;
  bool contains(const std::string& key) const;

  std::filesystem::path record_path(const std::string& key) const;
  const std::filesystem::path& directory() const { return dir_; }

 private:
  std::filesystem::path dir_;
};

/// Filesystem-safe, collision-free file stem for a key.
std::string key_file_stem(const std::string& key);

}  // namespace probing
