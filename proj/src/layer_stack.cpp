#include "probing/layer_stack.hpp"

#include <bit>
#include <cmath>
#include <cstring>

#include <zlib.h>

#include "probing/error.hpp"

namespace probing {

namespace {

constexpr char kMagic[4] = {'L', 'S', 'T', 'K'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kHeaderSize = 4 + 5 * 4;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(std::string_view in, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

}  // namespace

LayerStack::LayerStack(int num_layers, int piece_count, int width)
    : num_layers_(num_layers),
      piece_count_(piece_count),
      width_(width),
      values_(static_cast<std::size_t>(num_layers) * piece_count * width, 0.0f) {}

bool LayerStack::all_finite() const {
  for (float v : values_)
    if (!std::isfinite(v)) return false;
  return true;
}

std::uint32_t crc32_of(std::string_view bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large buffers in pieces.
  constexpr std::size_t kChunk = 1u << 30;
  for (std::size_t pos = 0; pos < bytes.size(); pos += kChunk) {
    const auto n = std::min(kChunk, bytes.size() - pos);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + pos),
                static_cast<uInt>(n));
  }
  return static_cast<std::uint32_t>(crc);
}

std::string serialize_stack(const LayerStack& stack) {
  const auto values = stack.values();
  std::string payload(values.size() * 4, '\0');
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(payload.data(), values.data(), payload.size());
  } else {
    for (std::size_t i = 0; i < values.size(); ++i) {
      const auto bits = std::bit_cast<std::uint32_t>(values[i]);
      for (int b = 0; b < 4; ++b) payload[4 * i + b] = static_cast<char>((bits >> (8 * b)) & 0xff);
    }
  }
  std::string out(kMagic, 4);
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(stack.num_layers()));
  put_u32(out, static_cast<std::uint32_t>(stack.piece_count()));
  put_u32(out, static_cast<std::uint32_t>(stack.width()));
  put_u32(out, crc32_of(payload));
  out += payload;
  return out;
}

LayerStack deserialize_stack(std::string_view bytes) {
  if (bytes.size() < kHeaderSize || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw IntegrityError("layer stack record: bad header");
  if (get_u32(bytes, 4) != kVersion)
    throw IntegrityError("layer stack record: unsupported version");
  const auto layers = get_u32(bytes, 8);
  const auto pieces = get_u32(bytes, 12);
  const auto width = get_u32(bytes, 16);
  const auto checksum = get_u32(bytes, 20);
  const auto payload = bytes.substr(kHeaderSize);
  const auto count = static_cast<std::size_t>(layers) * pieces * width;
  if (payload.size() != count * 4)
    throw IntegrityError("layer stack record: payload size does not match header");
  if (crc32_of(payload) != checksum)
    throw IntegrityError("layer stack record: checksum mismatch");
  LayerStack stack(static_cast<int>(layers), static_cast<int>(pieces), static_cast<int>(width));
  auto values = stack.values();
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(values.data(), payload.data(), payload.size());
  } else {
    for (std::size_t i = 0; i < count; ++i)
      values[i] = std::bit_cast<float>(get_u32(payload, 4 * i));
  }
  return stack;
}

}  // namespace probing
