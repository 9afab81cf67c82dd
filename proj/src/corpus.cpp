#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "probing/corpus.hpp"
#include "probing/error.hpp"
#include "probing/rng.hpp"
#include "text_util.hpp"

namespace probing {

using nlohmann::json;

std::string_view to_string(Task task) {
  switch (task) {
    case Task::POS: return "POS";
    case Task::DEP: return "DEP";
    case Task::NER: return "NER";
    case Task::COREF: return "COREF";
  }
  return "?";
}

Task parse_task(std::string_view name) {
  for (Task t : {Task::POS, Task::DEP, Task::NER, Task::COREF})
    if (to_string(t) == name) return t;
  throw ValidationError("unknown task '" + std::string(name) + "'");
}

std::string SpanExample::id() const {
  std::string out = context_ref + ":" + std::to_string(span1.start) + "-" +
                    std::to_string(span1.end);
  if (span2)
    out += "/" + std::to_string(span2->start) + "-" + std::to_string(span2->end);
  return out;
}

std::size_t Context::token_count() const {
  std::size_t n = 0;
  for (const auto& s : sentences) n += s.size();
  return n;
}

std::vector<std::string> Context::flat_tokens() const {
  std::vector<std::string> out;
  out.reserve(token_count());
  for (const auto& s : sentences) out.insert(out.end(), s.begin(), s.end());
  return out;
}

// ---- CoNLL-2002 ----------------------------------------------------------

namespace {

const std::set<std::string, std::less<>> kBioTags = {
    "O", "B-PER", "I-PER", "B-ORG", "I-ORG", "B-LOC", "I-LOC", "B-MISC", "I-MISC"};

}  // namespace

std::vector<Sentence> parse_conll2002(std::string_view text) {
  std::vector<Sentence> out;
  Sentence cur;
  std::vector<std::string> tags;
  std::string doc_id;
  int doc_count = 0;

  auto flush = [&] {
    if (cur.tokens.empty()) return;
    cur.sent_id = "s" + std::to_string(out.size() + 1);
    cur.doc_id = doc_id;
    cur.bio = std::move(tags);
    out.push_back(std::move(cur));
    cur = Sentence{};
    tags.clear();
  };

  std::size_t line_no = 0;
  for_each_line(text, [&](std::string_view line) {
    ++line_no;
    line = trim_cr(line);
    if (is_blank(line)) {
      flush();
      return;
    }
    auto cols = fields(line);
    if (cols.front() == "-DOCSTART-") {
      flush();
      doc_id = "d" + std::to_string(++doc_count);
      return;
    }
    // Token first, tag last; the Dutch release carries a POS column between.
    if (cols.size() < 2)
      throw ParseError(line_no, "expected token and tag columns");
    const auto tag = cols.back();
    if (!kBioTags.contains(tag))
      throw ParseError(line_no, "unknown NER tag '" + std::string(tag) + "'");
    cur.tokens.emplace_back(cols.front());
    tags.emplace_back(tag);
  });
  flush();
  return out;
}

std::vector<SpanExample> build_ner_examples(const std::vector<Sentence>& sents,
                                            std::uint64_t seed) {
  Rng rng(seed);
  std::vector<SpanExample> out;
  for (const auto& s : sents) {
    if (!s.bio) throw ValidationError("sentence " + s.sent_id + ": missing BIO tags");
    const auto& bio = *s.bio;
    const int n = static_cast<int>(bio.size());
    int i = 0;
    while (i < n) {
      if (bio[i] == "O") {
        int run_end = i;
        while (run_end < n && bio[run_end] == "O") ++run_end;
        while (i < run_end) {
          const int len = 1 + static_cast<int>(uniform_index(rng, 3));
          const int end = std::min(i + len, run_end);
          out.push_back({s.sent_id, {i, end}, std::nullopt, "O", Task::NER});
          i = end;
        }
        continue;
      }
      const auto& tag = bio[i];
      if (tag.size() < 3 || tag[0] != 'B' || tag[1] != '-')
        throw ValidationError("sentence " + s.sent_id + ": '" + tag + "' at token " +
                              std::to_string(i + 1) + " does not continue an entity");
      const std::string cls = tag.substr(2);
      const std::string inside = "I-" + cls;
      int end = i + 1;
      while (end < n && bio[end] == inside) ++end;
      out.push_back({s.sent_id, {i, end}, std::nullopt, cls, Task::NER});
      i = end;
    }
  }
  return out;
}

// ---- Coreference ---------------------------------------------------------

namespace {

CorefDocument parse_coref_doc(const json& j) {
  CorefDocument doc;
  doc.doc_id = j.at("doc_id").get<std::string>();
  doc.sentences = j.at("sentences").get<std::vector<std::vector<std::string>>>();
  for (const auto& jc : j.at("clusters")) {
    MentionCluster c;
    c.doc_id = doc.doc_id;
    c.cluster_id = jc.at("cluster_id").get<int>();
    for (const auto& jm : jc.at("mentions")) {
      if (!jm.is_array() || jm.size() != 3)
        throw ValidationError("document " + doc.doc_id +
                              ": mention must be [sent_idx, start, end]");
      Mention m{jm[0].get<int>(), {jm[1].get<int>(), jm[2].get<int>()}};
      if (m.sentence < 0 || m.sentence >= static_cast<int>(doc.sentences.size()))
        throw ValidationError("document " + doc.doc_id + ": mention sentence out of range");
      const int len = static_cast<int>(doc.sentences[m.sentence].size());
      if (!(0 <= m.tokens.start && m.tokens.start < m.tokens.end && m.tokens.end <= len))
        throw ValidationError("document " + doc.doc_id + ": mention interval outside sentence");
      c.mentions.push_back(m);
    }
    doc.clusters.push_back(std::move(c));
  }
  return doc;
}

}  // namespace

std::vector<CorefDocument> parse_coref_json(std::string_view text) {
  std::vector<CorefDocument> out;
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return out;
  try {
    if (text[first] == '[') {
      for (const auto& j : json::parse(text)) out.push_back(parse_coref_doc(j));
      return out;
    }
    std::size_t line_no = 0;
    for_each_line(text, [&](std::string_view line) {
      ++line_no;
      if (is_blank(line)) return;
      json j;
      try {
        j = json::parse(line);
      } catch (const json::parse_error& e) {
        throw ParseError(line_no, e.what());
      }
      out.push_back(parse_coref_doc(j));
    });
  } catch (const json::exception& e) {
    throw ValidationError(std::string("coreference JSON: ") + e.what());
  }
  return out;
}

std::vector<int> sentence_offsets(const CorefDocument& doc) {
  std::vector<int> offsets;
  int total = 0;
  for (const auto& s : doc.sentences) {
    offsets.push_back(total);
    total += static_cast<int>(s.size());
  }
  return offsets;
}

CorefBuildResult build_coref_examples(const std::vector<CorefDocument>& docs,
                                      std::uint64_t seed) {
  using Pair = std::pair<Interval, Interval>;
  struct DocPairs {
    std::vector<Pair> positives;
    std::vector<Pair> pool;  // shuffled negative candidates
    std::size_t taken = 0;   // pool prefix used as negatives
  };
  CorefBuildResult result;
  std::vector<DocPairs> per_doc(docs.size());

  for (std::size_t d = 0; d < docs.size(); ++d) {
    const auto& doc = docs[d];
    const auto offsets = sentence_offsets(doc);

    struct Flat {
      Interval span;
      int cluster;
    };
    std::vector<Flat> mentions;
    for (const auto& c : doc.clusters)
      for (const auto& m : c.mentions) {
        const int off = offsets.at(m.sentence);
        mentions.push_back({{off + m.tokens.start, off + m.tokens.end}, c.cluster_id});
      }
    std::sort(mentions.begin(), mentions.end(), [](const Flat& a, const Flat& b) {
      return std::tie(a.span, a.cluster) < std::tie(b.span, b.cluster);
    });
    if (mentions.size() < 2) {
      result.warnings.push_back("document " + doc.doc_id + ": no mention pair, skipped");
      continue;
    }

    auto& dp = per_doc[d];
    for (std::size_t i = 0; i < mentions.size(); ++i)
      for (std::size_t j = i + 1; j < mentions.size(); ++j) {
        if (mentions[i].span == mentions[j].span) continue;
        auto& dst = mentions[i].cluster == mentions[j].cluster ? dp.positives : dp.pool;
        dst.emplace_back(mentions[i].span, mentions[j].span);
      }
    // Several clusters may share a span; a pair must not be emitted twice.
    auto dedupe = [](auto& v) {
      std::sort(v.begin(), v.end());
      v.erase(std::unique(v.begin(), v.end()), v.end());
    };
    dedupe(dp.positives);
    dedupe(dp.pool);
    std::erase_if(dp.pool, [&](const Pair& p) {
      return std::binary_search(dp.positives.begin(), dp.positives.end(), p);
    });
    Rng rng(derive_seed(seed, d));
    shuffle(dp.pool, rng);
    dp.taken = std::min(dp.positives.size(), dp.pool.size());
    if (dp.taken < dp.positives.size())
      result.warnings.push_back("document " + doc.doc_id + ": only " +
                                std::to_string(dp.taken) + " negatives for " +
                                std::to_string(dp.positives.size()) + " positives");
  }

  // Documents short of negatives are compensated from other documents' spare
  // candidates so the corpus stays balanced.
  std::size_t shortfall = 0;
  std::vector<std::size_t> spare_owner;
  for (std::size_t d = 0; d < per_doc.size(); ++d) {
    const auto& dp = per_doc[d];
    shortfall += dp.positives.size() - dp.taken;
    spare_owner.insert(spare_owner.end(), dp.pool.size() - dp.taken, d);
  }
  if (shortfall > 0) {
    Rng rng(derive_seed(seed, docs.size()));
    shuffle(spare_owner, rng);
    if (spare_owner.size() < shortfall)
      result.warnings.push_back("negative pool exhausted: " +
                                std::to_string(shortfall - spare_owner.size()) +
                                " fewer negatives than positives");
    spare_owner.resize(std::min(shortfall, spare_owner.size()));
    for (auto d : spare_owner) ++per_doc[d].taken;
  }

  for (std::size_t d = 0; d < per_doc.size(); ++d) {
    auto& dp = per_doc[d];
    std::vector<Pair> negatives(dp.pool.begin(), dp.pool.begin() + dp.taken);
    std::sort(negatives.begin(), negatives.end());
    for (const auto& [a, b] : dp.positives)
      result.examples.push_back({docs[d].doc_id, a, b, "coref", Task::COREF});
    for (const auto& [a, b] : negatives)
      result.examples.push_back({docs[d].doc_id, a, b, "no-coref", Task::COREF});
  }
  for (const auto& w : result.warnings) spdlog::warn("{}", w);
  return result;
}

// ---- Splits and contexts -------------------------------------------------

DocumentSplit split_documents(const std::vector<std::string>& doc_ids,
                              SplitFractions f, std::uint64_t seed) {
  const double sum = f.train + f.valid + f.test;
  if (std::abs(sum - 1.0) > 1e-9 || f.train < 0 || f.valid < 0 || f.test < 0)
    throw ValidationError("split fractions must be non-negative and sum to 1");
  auto order = doc_ids;
  Rng rng(seed);
  shuffle(order, rng);
  const auto n = static_cast<double>(order.size());
  const auto n_valid = static_cast<std::size_t>(std::llround(f.valid * n));
  const auto n_test =
      std::min(order.size() - n_valid, static_cast<std::size_t>(std::llround(f.test * n)));
  DocumentSplit out;
  const auto valid_begin = order.size() - n_valid - n_test;
  out.train.assign(order.begin(), order.begin() + valid_begin);
  out.valid.assign(order.begin() + valid_begin, order.begin() + valid_begin + n_valid);
  out.test.assign(order.begin() + valid_begin + n_valid, order.end());
  return out;
}

std::vector<Context> sentence_contexts(const std::vector<Sentence>& sents) {
  std::vector<Context> out;
  out.reserve(sents.size());
  for (const auto& s : sents) out.push_back({s.sent_id, {s.tokens}});
  return out;
}

Context document_context(const CorefDocument& doc) { return {doc.doc_id, doc.sentences}; }

// ---- JSON-lines ----------------------------------------------------------

namespace {

json interval_json(const Interval& iv) { return json::array({iv.start, iv.end}); }

Interval interval_from(const json& j) {
  return {j.at(0).get<int>(), j.at(1).get<int>()};
}

}  // namespace

void write_examples(std::ostream& out, const std::vector<SpanExample>& examples) {
  for (const auto& ex : examples) {
    json j;
    j["context_ref"] = ex.context_ref;
    j["span1"] = interval_json(ex.span1);
    j["span2"] = ex.span2 ? interval_json(*ex.span2) : json(nullptr);
    j["label"] = ex.label;
    j["task"] = to_string(ex.task);
    out << j.dump() << '\n';
  }
}

std::vector<SpanExample> read_examples(std::istream& in) {
  std::vector<SpanExample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (is_blank(line)) continue;
    try {
      const auto j = json::parse(line);
      SpanExample ex;
      ex.context_ref = j.at("context_ref").get<std::string>();
      ex.span1 = interval_from(j.at("span1"));
      if (j.contains("span2") && !j["span2"].is_null()) ex.span2 = interval_from(j["span2"]);
      ex.label = j.at("label").get<std::string>();
      ex.task = parse_task(j.at("task").get<std::string>());
      out.push_back(std::move(ex));
    } catch (const json::exception& e) {
      throw ParseError(line_no, e.what());
    }
  }
  return out;
}

void write_contexts(std::ostream& out, const std::vector<Context>& contexts) {
  for (const auto& c : contexts)
    out << json{{"context_ref", c.id}, {"sentences", c.sentences}}.dump() << '\n';
}

std::vector<Context> read_contexts(std::istream& in) {
  std::vector<Context> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (is_blank(line)) continue;
    try {
      const auto j = json::parse(line);
      out.push_back({j.at("context_ref").get<std::string>(),
                     j.at("sentences").get<std::vector<std::vector<std::string>>>()});
    } catch (const json::exception& e) {
      throw ParseError(line_no, e.what());
    }
  }
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace probing
