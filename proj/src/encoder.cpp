#include "probing/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unistd.h>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "probing/error.hpp"
#include "probing/rng.hpp"

namespace probing {

// ---- WordPiece -----------------------------------------------------------

WordPieceVocab::WordPieceVocab(std::vector<std::string> pieces, bool lowercase)
    : pieces_(std::move(pieces)), lowercase_(lowercase) {
  for (std::size_t i = 0; i < pieces_.size(); ++i) {
    index_.emplace(pieces_[i], static_cast<PieceId>(i));
    max_piece_len_ = std::max(max_piece_len_, pieces_[i].size());
  }
  auto require = [&](const char* name) {
    auto id = find(name);
    if (!id) throw ValidationError(std::string("vocabulary lacks ") + name);
    return *id;
  };
  unk_ = require("[UNK]");
  cls_ = require("[CLS]");
  sep_ = require("[SEP]");
}

WordPieceVocab WordPieceVocab::from_file(const std::filesystem::path& path, bool lowercase) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("cannot open vocabulary " + path.string());
  std::vector<std::string> pieces;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    pieces.push_back(line);
  }
  return WordPieceVocab(std::move(pieces), lowercase);
}

std::optional<PieceId> WordPieceVocab::find(std::string_view piece) const {
  auto it = index_.find(std::string(piece));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::vector<PieceId> WordPieceVocab::tokenize(std::string_view token) const {
  constexpr std::size_t kMaxTokenBytes = 200;
  std::string word(token);
  if (lowercase_)
    for (auto& c : word)
      if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  if (word.empty()) return {};
  if (word.size() > kMaxTokenBytes) return {unk_};

  std::vector<PieceId> out;
  std::size_t start = 0;
  std::string candidate;
  while (start < word.size()) {
    std::size_t end = std::min(word.size(), start + max_piece_len_);
    std::optional<PieceId> match;
    for (; end > start; --end) {
      candidate.assign(start > 0 ? kContinuation : "");
      candidate.append(word, start, end - start);
      if (auto it = index_.find(candidate); it != index_.end()) {
        match = it->second;
        break;
      }
    }
    if (!match) return {unk_};
    out.push_back(*match);
    start = end;
  }
  return out;
}

std::string detokenize(const WordPieceVocab& vocab, std::span<const PieceId> pieces) {
  std::string out;
  for (auto id : pieces) {
    std::string_view text = vocab.text(id);
    if (text.starts_with(WordPieceVocab::kContinuation))
      text.remove_prefix(WordPieceVocab::kContinuation.size());
    out += text;
  }
  return out;
}

// ---- Encoder contract ----------------------------------------------------

std::vector<LayerStack> Encoder::encode_batch(
    const std::vector<std::vector<PieceId>>& inputs) const {
  std::vector<LayerStack> out;
  out.reserve(inputs.size());
  for (const auto& pieces : inputs) out.push_back(encode(pieces));
  return out;
}

TokenizedInput tokenize_align(const std::vector<std::string>& tokens, const Encoder& enc) {
  if (tokens.empty()) throw ValidationError("tokenize_align: empty token list");
  const auto& vocab = enc.vocab();
  TokenizedInput out;
  out.pieces.push_back(vocab.cls());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    auto ids = vocab.tokenize(tokens[i]);
    if (ids.empty()) {
      ids.push_back(vocab.unk());
      out.warnings.push_back("token " + std::to_string(i) + " ('" + tokens[i] +
                             "') produced no pieces; mapped to [UNK]");
    }
    const int begin = static_cast<int>(out.pieces.size());
    out.pieces.insert(out.pieces.end(), ids.begin(), ids.end());
    out.alignment.token_ranges.push_back({begin, static_cast<int>(out.pieces.size())});
  }
  out.alignment.piece_count = static_cast<int>(out.pieces.size()) - 1;
  out.pieces.push_back(vocab.sep());
  for (const auto& w : out.warnings) spdlog::warn("{}", w);
  return out;
}

LayerStack extract_layers(std::span<const PieceId> pieces, const Encoder& enc) {
  const auto& h = enc.handle();
  if (static_cast<int>(pieces.size()) > h.max_pieces)
    throw ValidationError("input of " + std::to_string(pieces.size()) +
                          " pieces exceeds the encoder limit of " +
                          std::to_string(h.max_pieces) +
                          "; split the context into chunks with concat_context");
  auto stack = enc.encode(pieces);
  if (stack.num_layers() != h.layer_count + 1 ||
      stack.piece_count() != static_cast<int>(pieces.size()) || stack.width() != h.width)
    throw ValidationError("encoder " + h.name + " returned a stack of unexpected shape");
  if (!stack.all_finite())
    throw ValidationError("encoder " + h.name + " returned non-finite values");
  return stack;
}

// ---- Chunking ------------------------------------------------------------

ChunkedContext concat_context(const std::vector<std::vector<std::string>>& sentences,
                              const Encoder& enc) {
  const auto& vocab = enc.vocab();
  const int capacity = enc.handle().max_pieces - 2;
  if (capacity < 1) throw ValidationError("encoder max_pieces leaves no room for content");

  ChunkedContext out;
  Chunk cur;
  int cur_len = 0;
  auto flush = [&] {
    if (cur.sentences.empty()) return;
    cur.pieces.insert(cur.pieces.begin(), vocab.cls());
    for (auto& a : cur.alignments)
      for (auto& r : a.token_ranges) r = {r.start + 1, r.end + 1};
    cur.pieces.push_back(vocab.sep());
    out.chunks.push_back(std::move(cur));
    cur = Chunk{};
    cur_len = 0;
  };

  for (std::size_t s = 0; s < sentences.size(); ++s) {
    std::vector<std::vector<PieceId>> token_pieces;
    int total = 0;
    for (std::size_t t = 0; t < sentences[s].size(); ++t) {
      auto ids = vocab.tokenize(sentences[s][t]);
      if (ids.empty()) {
        ids.push_back(vocab.unk());
        out.warnings.push_back("sentence " + std::to_string(s) + " token " +
                               std::to_string(t) + " produced no pieces; mapped to [UNK]");
      }
      total += static_cast<int>(ids.size());
      token_pieces.push_back(std::move(ids));
    }
    const bool oversized = total > capacity;
    if (oversized || cur_len + total > capacity) flush();

    PieceAlignment align;
    for (std::size_t t = 0; t < token_pieces.size(); ++t) {
      const auto& ids = token_pieces[t];
      if (cur_len + static_cast<int>(ids.size()) > capacity) {
        out.warnings.push_back("sentence " + std::to_string(s) + " truncated to " +
                               std::to_string(t) + " of " +
                               std::to_string(token_pieces.size()) + " tokens");
        break;
      }
      const int begin = static_cast<int>(cur.pieces.size());
      cur.pieces.insert(cur.pieces.end(), ids.begin(), ids.end());
      align.token_ranges.push_back({begin, static_cast<int>(cur.pieces.size())});
      align.piece_count += static_cast<int>(ids.size());
      cur_len += static_cast<int>(ids.size());
    }
    cur.sentences.push_back(static_cast<int>(s));
    cur.alignments.push_back(std::move(align));
    if (oversized) flush();
  }
  flush();
  for (const auto& w : out.warnings) spdlog::warn("{}", w);
  return out;
}

std::vector<TokenLocation> locate_tokens(const Context& context, const ChunkedContext& chunked) {
  std::vector<int> offsets;
  int total = 0;
  for (const auto& s : context.sentences) {
    offsets.push_back(total);
    total += static_cast<int>(s.size());
  }
  std::vector<TokenLocation> out(total);
  for (std::size_t c = 0; c < chunked.chunks.size(); ++c) {
    const auto& chunk = chunked.chunks[c];
    for (std::size_t i = 0; i < chunk.sentences.size(); ++i) {
      const int base = offsets.at(chunk.sentences[i]);
      const auto& ranges = chunk.alignments[i].token_ranges;
      for (std::size_t t = 0; t < ranges.size(); ++t)
        out[base + t] = {static_cast<int>(c), ranges[t]};
    }
  }
  return out;
}

std::string chunk_key(std::string_view context_id, std::size_t chunk) {
  return std::string(context_id) + "#" + std::to_string(chunk);
}

// ---- ToyEncoder ----------------------------------------------------------

namespace {

std::vector<float> gaussian_vector(std::uint64_t seed, int width, double scale) {
  Rng rng(seed);
  std::vector<float> v(width);
  for (auto& x : v) x = static_cast<float>(scale * standard_normal(rng));
  return v;
}

const char* const kDutchSubwords[] = {
    "de", "het", "een", "van", "en", "in", "is", "op", "te", "dat", "die", "voor",
    "met", "zijn", "niet", "aan", "er", "om", "ook", "als", "bij", "maar", "door",
    "ver", "ont", "ge", "be", "over", "wordt", "werd", "naar", "uit", "tot", "of",
    "lijk", "heid", "ing", "isme", "liberal", "ploo", "stel", "vrij", "mens",
    "centraal", "verantwoordelijk", "land", "stad", "jaar", "eeuw", "taal", "gebied",
    "stam", "men", "regering", "minister", "kabinet", "zaken", "Duits", "talig",
    "Kelt", "isch", "Federal", "Binnenland", "se", "Het", "De", "Een", "In"};

}  // namespace

WordPieceVocab ToyEncoder::default_vocab() {
  std::vector<std::string> pieces = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
  for (int b = 1; b < 256; ++b) {
    const std::string byte(1, static_cast<char>(b));
    pieces.push_back(byte);
    pieces.push_back(std::string(WordPieceVocab::kContinuation) + byte);
  }
  for (const char* w : kDutchSubwords) {
    pieces.emplace_back(w);
    pieces.push_back(std::string(WordPieceVocab::kContinuation) + w);
  }
  std::sort(pieces.begin() + 5, pieces.end());
  pieces.erase(std::unique(pieces.begin() + 5, pieces.end()), pieces.end());
  return WordPieceVocab(std::move(pieces));
}

ToyEncoder::ToyEncoder(EncoderHandle handle, std::uint64_t seed)
    : Encoder(std::move(handle)), seed_(seed), vocab_(default_vocab()) {
  const int d = this->handle().width;
  const double scale = 0.9 / std::sqrt(static_cast<double>(d));
  for (int l = 1; l <= this->handle().layer_count; ++l) {
    self_maps_.push_back(gaussian_vector(derive_seed(seed, 1000 + l), d * d, scale));
    neighbour_maps_.push_back(gaussian_vector(derive_seed(seed, 2000 + l), d * d, scale));
  }
}

std::vector<float> ToyEncoder::embedding(PieceId id) const {
  return gaussian_vector(derive_seed(seed_, 7, static_cast<std::uint64_t>(id)),
                         handle().width, 1.0);
}

LayerStack ToyEncoder::encode(std::span<const PieceId> pieces) const {
  const int n = static_cast<int>(pieces.size());
  const int d = handle().width;
  LayerStack stack(handle().layer_count + 1, n, d);
  for (int p = 0; p < n; ++p) {
    const auto e = embedding(pieces[p]);
    std::copy(e.begin(), e.end(), stack.row(0, p).begin());
  }
  std::vector<double> pre(d);
  for (int l = 1; l <= handle().layer_count; ++l) {
    const auto& a = self_maps_[l - 1];
    const auto& b = neighbour_maps_[l - 1];
    for (int p = 0; p < n; ++p) {
      auto self = stack.row(l - 1, p);
      auto left = stack.row(l - 1, std::max(p - 1, 0));
      auto right = stack.row(l - 1, std::min(p + 1, n - 1));
      for (int i = 0; i < d; ++i) {
        double acc = 0.0;
        for (int j = 0; j < d; ++j)
          acc += a[i * d + j] * self[j] + b[i * d + j] * 0.5 * (left[j] + right[j]);
        // Positions enter only above the lexical layer.
        if (l == 1) acc += 0.1 * std::sin((p + 1) / std::pow(100.0, static_cast<double>(i) / d));
        pre[i] = acc;
      }
      auto out = stack.row(l, p);
      for (int i = 0; i < d; ++i)
        out[i] = static_cast<float>(0.5 * self[i] + std::tanh(pre[i]));
    }
  }
  return stack;
}

// ---- SignalEncoder -------------------------------------------------------

SignalEncoder::SignalEncoder(EncoderHandle handle, Options options)
    : Encoder(std::move(handle)), options_(options) {
  if (options_.signal_from < 0 || options_.signal_from > this->handle().layer_count)
    throw ValidationError("signal layer outside 0..L");
  std::vector<std::string> pieces = {"[PAD]", "[UNK]", "[CLS]", "[SEP]"};
  for (int w = 0; w < options_.vocab_words; ++w) pieces.push_back("w" + std::to_string(w));
  vocab_ = WordPieceVocab(std::move(pieces));
  direction_ = gaussian_vector(derive_seed(options_.seed, 31), this->handle().width, 1.0);
  double norm = 0.0;
  for (float x : direction_) norm += static_cast<double>(x) * x;
  norm = std::sqrt(norm);
  for (auto& x : direction_) x = static_cast<float>(x / norm);
}

int SignalEncoder::bit_after(PieceId previous) const {
  return static_cast<int>(derive_seed(options_.seed, 77, static_cast<std::uint64_t>(previous)) & 1);
}

LayerStack SignalEncoder::encode(std::span<const PieceId> pieces) const {
  const int n = static_cast<int>(pieces.size());
  const int d = handle().width;
  LayerStack stack(handle().layer_count + 1, n, d);
  for (int p = 0; p < n; ++p) {
    const auto id = static_cast<std::uint64_t>(pieces[p]);
    const auto e = gaussian_vector(derive_seed(options_.seed, 7, id), d, 1.0);
    const double sign = (p > 0 && bit_after(pieces[p - 1]) == 1) ? 1.0 : -1.0;
    std::copy(e.begin(), e.end(), stack.row(0, p).begin());
    for (int l = 1; l <= handle().layer_count; ++l) {
      const auto noise = gaussian_vector(derive_seed(options_.seed, 1000 + l, p * 100003 + id), d,
                                         options_.noise_scale);
      auto row = stack.row(l, p);
      const bool planted = l >= options_.signal_from && p > 0;
      for (int i = 0; i < d; ++i)
        row[i] = static_cast<float>(
            e[i] + noise[i] + (planted ? options_.signal_scale * sign * direction_[i] : 0.0));
    }
  }
  return stack;
}

std::vector<Sentence> SignalEncoder::generate_corpus(int sentences, int min_len, int max_len,
                                                     std::uint64_t seed,
                                                     const std::string& id_prefix) const {
  Rng rng(seed);
  std::vector<Sentence> out;
  for (int s = 0; s < sentences; ++s) {
    Sentence sent;
    sent.sent_id = id_prefix + std::to_string(s + 1);
    const int len = min_len + static_cast<int>(uniform_index(rng, max_len - min_len + 1));
    std::vector<std::string> tags;
    PieceId previous = vocab_.cls();
    for (int t = 0; t < len; ++t) {
      const auto w = uniform_index(rng, options_.vocab_words);
      sent.tokens.push_back("w" + std::to_string(w));
      const PieceId id = *vocab_.find(sent.tokens.back());
      tags.push_back(bit_after(previous) == 1 ? "A" : "B");
      previous = id;
    }
    sent.upos = std::move(tags);
    out.push_back(std::move(sent));
  }
  return out;
}

// ---- CommandEncoder ------------------------------------------------------

CommandEncoder::CommandEncoder(EncoderHandle handle, std::string command, WordPieceVocab vocab,
                               std::filesystem::path scratch_dir)
    : Encoder(std::move(handle)),
      command_(std::move(command)),
      vocab_(std::move(vocab)),
      scratch_dir_(std::move(scratch_dir)) {}

LayerStack CommandEncoder::encode(std::span<const PieceId> pieces) const {
  return std::move(encode_batch({std::vector<PieceId>(pieces.begin(), pieces.end())}).front());
}

namespace {

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') out += "'\\''";
    else out += c;
  }
  return out + "'";
}

}  // namespace

std::vector<LayerStack> CommandEncoder::encode_batch(
    const std::vector<std::vector<PieceId>>& inputs) const {
  std::filesystem::create_directories(scratch_dir_);
  const auto tag = std::to_string(::getpid());
  const auto request = scratch_dir_ / ("request-" + tag + ".jsonl");
  const auto response = scratch_dir_ / ("response-" + tag + ".bin");
  {
    std::ofstream out(request);
    for (const auto& pieces : inputs) out << nlohmann::json{{"pieces", pieces}}.dump() << '\n';
  }
  const auto cmd = command_ + " " + shell_quote(request.string()) + " " +
                   shell_quote(response.string());
  if (std::system(cmd.c_str()) != 0)
    throw Error("encoder command failed: " + cmd);
  const auto bytes = read_file(response.string());
  std::filesystem::remove(request);
  std::filesystem::remove(response);

  std::vector<LayerStack> out;
  std::string_view rest = bytes;
  auto u32 = [&](std::size_t pos) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(rest[pos + i])) << (8 * i);
    return v;
  };
  while (!rest.empty()) {
    if (rest.size() < 24) throw IntegrityError("encoder response truncated");
    const std::size_t size = 24 + 4ull * u32(8) * u32(12) * u32(16);
    if (rest.size() < size) throw IntegrityError("encoder response truncated");
    out.push_back(deserialize_stack(rest.substr(0, size)));
    rest.remove_prefix(size);
  }
  if (out.size() != inputs.size())
    throw IntegrityError("encoder response holds " + std::to_string(out.size()) +
                         " stacks for " + std::to_string(inputs.size()) + " inputs");
  return out;
}

}  // namespace probing
