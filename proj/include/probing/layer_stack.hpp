#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace probing {

/// Per-piece embeddings for layers 0..L of one encoder input. Layer 0 is the
/// context-independent lexical layer. Stored layer-major, row-major.
class LayerStack {
 public:
  LayerStack() = default;
  LayerStack(int num_layers, int piece_count, int width);

  /// L + 1.
  int num_layers() const { return num_layers_; }
  int top_layer() const { return num_layers_ - 1; }
  int piece_count() const { return piece_count_; }
  int width() const { return width_; }

  std::span<float> row(int layer, int piece) {
    return {values_.data() + offset(layer, piece), static_cast<std::size_t>(width_)};
  }
  std::span<const float> row(int layer, int piece) const {
    return {values_.data() + offset(layer, piece), static_cast<std::size_t>(width_)};
  }
  /// All pieces of one layer, piece-major.
  std::span<const float> layer(int layer) const {
    return {values_.data() + offset(layer, 0),
            static_cast<std::size_t>(piece_count_) * width_};
  }

  std::span<float> values() { return values_; }
  std::span<const float> values() const { return values_; }

  bool all_finite() const;

  friend bool operator==(const LayerStack&, const LayerStack&) = default;

 private:
  std::size_t offset(int layer, int piece) const {
    return (static_cast<std::size_t>(layer) * piece_count_ + piece) * width_;
  }

  int num_layers_ = 0;
  int piece_count_ = 0;
  int width_ = 0;
  std::vector<float> values_;
};

/// Binary record: "LSTK", u32 version, u32 num_layers, u32 piece_count,
/// u32 width, u32 crc32(payload), payload as little-endian float32.
std::string serialize_stack(const LayerStack& stack);
/// Throws IntegrityError on a bad header, truncated payload, or checksum mismatch.
LayerStack deserialize_stack(std::string_view bytes);

std::uint32_t crc32_of(std::string_view bytes);

}  // namespace probing
