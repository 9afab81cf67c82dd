#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace probing {

enum class Task { POS, DEP, NER, COREF };

std::string_view to_string(Task task);
Task parse_task(std::string_view name);
inline bool is_two_span(Task task) {
  return task == Task::DEP || task == Task::COREF;
}

/// Half-open token (or piece) interval [start, end).
struct Interval {
  int start = 0;
  int end = 0;

  int size() const { return end - start; }
  bool empty() const { return end <= start; }
  bool contains(const Interval& other) const {
    return start <= other.start && other.end <= end;
  }
  friend bool operator==(const Interval&, const Interval&) = default;
  friend auto operator<=>(const Interval&, const Interval&) = default;
};

struct Sentence {
  std::string doc_id;
  std::string sent_id;
  std::vector<std::string> tokens;
  std::optional<std::vector<std::string>> upos;
  std::optional<std::vector<int>> heads;  // 1-based, 0 = root
  std::optional<std::vector<std::string>> deprels;
  std::optional<std::vector<std::string>> bio;
};

/// Checks annotation lengths and, when heads are present, that they form a
/// single rooted tree. Throws ValidationError naming the sent_id.
void validate(const Sentence& sentence);

struct SpanExample {
  std::string context_ref;
  Interval span1;
  std::optional<Interval> span2;
  std::string label;
  Task task = Task::POS;

  /// Stable identifier derived from context and spans; unique within a task.
  std::string id() const;
  friend bool operator==(const SpanExample&, const SpanExample&) = default;
};

struct Mention {
  int sentence = 0;
  Interval tokens;
};

struct MentionCluster {
  std::string doc_id;
  std::vector<Mention> mentions;
  int cluster_id = 0;
};

struct CorefDocument {
  std::string doc_id;
  std::vector<std::vector<std::string>> sentences;
  std::vector<MentionCluster> clusters;
};

/// Text the encoder sees for one probing context: a single sentence, or a
/// whole document whose sentences are packed into encoder chunks.
struct Context {
  std::string id;
  std::vector<std::vector<std::string>> sentences;

  std::size_t token_count() const;
  std::vector<std::string> flat_tokens() const;
};

// ---- CoNLL-U -------------------------------------------------------------

std::vector<Sentence> parse_conllu(std::string_view text);

std::vector<SpanExample> build_pos_examples(const std::vector<Sentence>& sents);

/// Token indices (0-based) of the subtree rooted at `node`, which is 0-based.
std::vector<int> subtree_tokens(const std::vector<int>& heads, int node);

/// Contiguous cover [min, max+1) of the subtree rooted at `node`.
Interval subtree_cover(const std::vector<int>& heads, int node);

/// Universal relation of a deprel: "nmod:poss" -> "nmod".
std::string base_relation(std::string_view deprel);

std::vector<SpanExample> build_dep_examples(const std::vector<Sentence>& sents);

// ---- CoNLL-2002 ----------------------------------------------------------

std::vector<Sentence> parse_conll2002(std::string_view text);

std::vector<SpanExample> build_ner_examples(const std::vector<Sentence>& sents,
                                            std::uint64_t seed);

// ---- Coreference ---------------------------------------------------------

/// Accepts either one JSON array of documents or JSON-lines, one document
/// per line.
std::vector<CorefDocument> parse_coref_json(std::string_view text);

/// Document-level token offset of each sentence start.
std::vector<int> sentence_offsets(const CorefDocument& doc);

struct CorefBuildResult {
  std::vector<SpanExample> examples;
  std::vector<std::string> warnings;
};

CorefBuildResult build_coref_examples(const std::vector<CorefDocument>& docs,
                                      std::uint64_t seed);

// ---- Splits and contexts -------------------------------------------------

struct SplitFractions {
  double train = 0.8;
  double valid = 0.1;
  double test = 0.1;
};

struct DocumentSplit {
  std::vector<std::string> train;
  std::vector<std::string> valid;
  std::vector<std::string> test;
};

DocumentSplit split_documents(const std::vector<std::string>& doc_ids,
                              SplitFractions fractions, std::uint64_t seed);

std::vector<Context> sentence_contexts(const std::vector<Sentence>& sents);
Context document_context(const CorefDocument& doc);

// ---- JSON-lines ----------------------------------------------------------

void write_examples(std::ostream& out, const std::vector<SpanExample>& examples);
std::vector<SpanExample> read_examples(std::istream& in);
void write_contexts(std::ostream& out, const std::vector<Context>& contexts);
std::vector<Context> read_contexts(std::istream& in);

std::string read_file(const std::string& path);

}  // namespace probing
