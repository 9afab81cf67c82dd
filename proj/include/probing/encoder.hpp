#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "probing/corpus.hpp"
#include "probing/layer_stack.hpp"

namespace probing {

using PieceId = std::int32_t;

struct EncoderHandle {
  std::string name;
  int layer_count = 12;  // transformer layers L; stacks hold L + 1
  int width = 768;
  int max_pieces = 512;  // including the sequence start/end markers
};

/// Greedy longest-match-first subword vocabulary. Continuation pieces carry
/// a "##" prefix.
class WordPieceVocab {
 public:
  static constexpr std::string_view kContinuation = "##";

  WordPieceVocab() = default;
  /// `pieces` must contain "[UNK]", "[CLS]" and "[SEP]".
  explicit WordPieceVocab(std::vector<std::string> pieces, bool lowercase = false);
  /// One piece per line, as in BERT vocab.txt files.
  static WordPieceVocab from_file(const std::filesystem::path& path, bool lowercase = false);

  /// Pieces for one pre-tokenized corpus token. Empty for an empty token.
  std::vector<PieceId> tokenize(std::string_view token) const;
  const std::string& text(PieceId id) const { return pieces_.at(id); }
  std::size_t size() const { return pieces_.size(); }

  PieceId unk() const { return unk_; }
  PieceId cls() const { return cls_; }
  PieceId sep() const { return sep_; }
  std::optional<PieceId> find(std::string_view piece) const;

 private:
  std::vector<std::string> pieces_;
  std::unordered_map<std::string, PieceId> index_;
  PieceId unk_ = 0, cls_ = 0, sep_ = 0;
  bool lowercase_ = false;
  std::size_t max_piece_len_ = 0;
};

/// Reconstructs a token from its pieces by stripping continuation markers.
std::string detokenize(const WordPieceVocab& vocab, std::span<const PieceId> pieces);

/// Plug-in contract: an encoder maps a piece sequence (with start/end
/// markers) to the lexical layer plus every transformer layer.
class Encoder {
 public:
  explicit Encoder(EncoderHandle handle) : handle_(std::move(handle)) {}
  virtual ~Encoder() = default;

  const EncoderHandle& handle() const { return handle_; }
  virtual const WordPieceVocab& vocab() const = 0;

  /// Returns an (L+1) x |pieces| x width stack.
  virtual LayerStack encode(std::span<const PieceId> pieces) const = 0;
  virtual std::vector<LayerStack> encode_batch(
      const std::vector<std::vector<PieceId>>& inputs) const;

 private:
  EncoderHandle handle_;
};

struct PieceAlignment {
  /// Per retained corpus token, its half-open range in the piece sequence.
  std::vector<Interval> token_ranges;
  int piece_count = 0;  // pieces covered by token_ranges
};

struct TokenizedInput {
  std::vector<PieceId> pieces;  // [CLS] ... [SEP]
  PieceAlignment alignment;
  std::vector<std::string> warnings;
};

TokenizedInput tokenize_align(const std::vector<std::string>& tokens, const Encoder& enc);

/// Runs the encoder on one piece sequence. Throws ValidationError when the
/// input exceeds enc.max_pieces (chunk with concat_context instead).
LayerStack extract_layers(std::span<const PieceId> pieces, const Encoder& enc);

struct Chunk {
  std::vector<int> sentences;  // indices into the document
  std::vector<PieceId> pieces;  // [CLS] s_a ... s_b [SEP]
  std::vector<PieceAlignment> alignments;  // per sentence, ranges into `pieces`
};

struct ChunkedContext {
  std::vector<Chunk> chunks;
  std::vector<std::string> warnings;
};

/// Greedy left-to-right packing of whole sentences into chunks of at most
/// enc.max_pieces pieces. A sentence that alone exceeds the limit is
/// truncated to its longest fitting token prefix.
ChunkedContext concat_context(const std::vector<std::vector<std::string>>& sentences,
                              const Encoder& enc);

/// Where each token of a context lives after chunking.
struct TokenLocation {
  int chunk = -1;  // -1 when the token was truncated away
  Interval pieces;
};

std::vector<TokenLocation> locate_tokens(const Context& context, const ChunkedContext& chunked);

/// Cache key for one chunk of one context.
std::string chunk_key(std::string_view context_id, std::size_t chunk);

// ---- Built-in encoders ---------------------------------------------------

/// Deterministic pseudo-transformer for tests and desk-scale runs. Layer 0 is
/// a seeded embedding lookup; each later layer mixes neighbouring positions
/// of the previous one through fixed random maps.
class ToyEncoder : public Encoder {
 public:
  ToyEncoder(EncoderHandle handle, std::uint64_t seed);

  const WordPieceVocab& vocab() const override { return vocab_; }
  LayerStack encode(std::span<const PieceId> pieces) const override;

  /// Byte-level base pieces plus a list of common Dutch subwords.
  static WordPieceVocab default_vocab();

 private:
  std::vector<float> embedding(PieceId id) const;

  std::uint64_t seed_;
  WordPieceVocab vocab_;
  std::vector<std::vector<float>> self_maps_, neighbour_maps_;
};

/// Synthetic encoder with a planted binary feature. Every piece carries a
/// bit computed from its left neighbour; layers >= signal_from add a
/// direction encoding that bit, layers below it carry only the piece
/// identity plus label-independent noise.
class SignalEncoder : public Encoder {
 public:
  struct Options {
    int signal_from = 4;
    int vocab_words = 64;
    double signal_scale = 1.0;
    double noise_scale = 0.5;
    std::uint64_t seed = 1;
  };

  SignalEncoder(EncoderHandle handle, Options options);

  const WordPieceVocab& vocab() const override { return vocab_; }
  LayerStack encode(std::span<const PieceId> pieces) const override;

  /// The planted bit of a piece whose left neighbour is `previous`.
  int bit_after(PieceId previous) const;
  const Options& options() const { return options_; }

  /// Random sentences over the encoder's word list; UPOS is "A" or "B"
  /// according to the planted bit of each token.
  std::vector<Sentence> generate_corpus(int sentences, int min_len, int max_len,
                                        std::uint64_t seed,
                                        const std::string& id_prefix) const;

 private:
  Options options_;
  WordPieceVocab vocab_;
  std::vector<float> direction_;
};

/// Delegates encoding to an external program:
///   <command> <request.jsonl> <response.bin>
/// The request holds one {"pieces": [...]} object per line; the response is
/// the concatenation of serialize_stack records in request order.
class CommandEncoder : public Encoder {
 public:
  CommandEncoder(EncoderHandle handle, std::string command, WordPieceVocab vocab,
                 std::filesystem::path scratch_dir);

  const WordPieceVocab& vocab() const override { return vocab_; }
  LayerStack encode(std::span<const PieceId> pieces) const override;
  std::vector<LayerStack> encode_batch(
      const std::vector<std::vector<PieceId>>& inputs) const override;

 private:
  std::string command_;
  WordPieceVocab vocab_;
  std::filesystem::path scratch_dir_;
};

}  // namespace probing
