#include <algorithm>
#include <charconv>
#include <string>

#include "probing/corpus.hpp"
#include "probing/error.hpp"
#include "text_util.hpp"

namespace probing {

namespace {

constexpr std::size_t kConlluColumns = 10;

bool parse_int(std::string_view s, int& out) {
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

struct SentenceBuilder {
  Sentence sent;
  std::vector<std::string> upos, deprels;
  std::vector<int> heads;
  std::size_t first_line = 0;
  bool open = false;

  void reset() { *this = SentenceBuilder{}; }
};

}  // namespace

std::vector<Sentence> parse_conllu(std::string_view text) {
  std::vector<Sentence> out;
  SentenceBuilder cur;
  std::string doc_id;

  auto flush = [&] {
    if (!cur.open) return;
    if (!cur.sent.tokens.empty()) {
      if (cur.sent.sent_id.empty())
        cur.sent.sent_id = "s" + std::to_string(out.size() + 1);
      cur.sent.doc_id = doc_id;
      cur.sent.upos = std::move(cur.upos);
      // HEAD "_" anywhere means the sentence carries no tree.
      if (std::find(cur.heads.begin(), cur.heads.end(), -1) == cur.heads.end()) {
        cur.sent.heads = std::move(cur.heads);
        cur.sent.deprels = std::move(cur.deprels);
      }
      validate(cur.sent);
      out.push_back(std::move(cur.sent));
    }
    cur.reset();
  };

  std::size_t line_no = 0;
  for_each_line(text, [&](std::string_view line) {
    ++line_no;
    line = trim_cr(line);
    if (is_blank(line)) {
      flush();
      return;
    }
    if (!cur.open) {
      cur.open = true;
      cur.first_line = line_no;
    }
    if (line.front() == '#') {
      auto comment = trim(line.substr(1));
      if (auto v = comment_value(comment, "newdoc id")) doc_id = std::string(*v);
      if (auto v = comment_value(comment, "sent_id")) cur.sent.sent_id = std::string(*v);
      return;
    }
    auto cols = split(line, '\t');
    if (cols.size() != kConlluColumns)
      throw ParseError(line_no, "expected 10 tab-separated columns, found " +
                                    std::to_string(cols.size()));
    const auto id = cols[0];
    // Multiword-token ranges ("1-2") and empty nodes ("1.1") carry no basic token.
    if (id.find('-') != std::string_view::npos || id.find('.') != std::string_view::npos)
      return;
    int index = 0;
    if (!parse_int(id, index) || index != static_cast<int>(cur.sent.tokens.size()) + 1)
      throw ParseError(line_no, "unexpected token id '" + std::string(id) + "'");
    int head = 0;
    if (cols[6] == "_") {
      head = -1;
    } else if (!parse_int(cols[6], head) || head < 0) {
      throw ParseError(line_no, "bad HEAD '" + std::string(cols[6]) + "'");
    }
    cur.sent.tokens.emplace_back(cols[1]);
    cur.upos.emplace_back(cols[3]);
    cur.heads.push_back(head);
    cur.deprels.emplace_back(cols[7]);
  });
  flush();
  return out;
}

void validate(const Sentence& s) {
  const auto n = s.tokens.size();
  auto fail = [&](const std::string& what) {
    throw ValidationError("sentence " + s.sent_id + ": " + what);
  };
  if (s.upos && s.upos->size() != n) fail("upos length mismatch");
  if (s.deprels && s.deprels->size() != n) fail("deprel length mismatch");
  if (s.bio && s.bio->size() != n) fail("bio length mismatch");
  if (!s.heads) return;
  const auto& heads = *s.heads;
  if (heads.size() != n) fail("head length mismatch");
  int roots = 0;
  for (int h : heads) {
    if (h < 0 || h > static_cast<int>(n)) fail("head index out of range");
    if (h == 0) ++roots;
  }
  if (roots != 1) fail("expected exactly one root, found " + std::to_string(roots));
  // Walk up from every token; a path longer than n means a cycle.
  for (std::size_t i = 0; i < n; ++i) {
    int node = static_cast<int>(i) + 1;
    std::size_t steps = 0;
    while (node != 0) {
      node = heads[node - 1];
      if (++steps > n) fail("head structure contains a cycle");
    }
  }
}

std::vector<SpanExample> build_pos_examples(const std::vector<Sentence>& sents) {
  std::vector<SpanExample> out;
  for (const auto& s : sents) {
    if (!s.upos) throw ValidationError("sentence " + s.sent_id + ": missing UPOS");
    for (std::size_t i = 0; i < s.tokens.size(); ++i) {
      const auto& tag = (*s.upos)[i];
      if (tag.empty() || tag == "_")
        throw ValidationError("sentence " + s.sent_id + ": missing UPOS on token " +
                              std::to_string(i + 1));
      const int t = static_cast<int>(i);
      out.push_back({s.sent_id, {t, t + 1}, std::nullopt, tag, Task::POS});
    }
  }
  return out;
}

std::vector<int> subtree_tokens(const std::vector<int>& heads, int node) {
  const int n = static_cast<int>(heads.size());
  std::vector<std::vector<int>> children(n);
  for (int i = 0; i < n; ++i)
    if (heads[i] > 0) children[heads[i] - 1].push_back(i);
  std::vector<int> out;
  std::vector<int> stack{node};
  std::vector<char> seen(n, 0);
  while (!stack.empty()) {
    const int cur = stack.back();
    stack.pop_back();
    if (seen[cur]) throw ValidationError("head structure contains a cycle");
    seen[cur] = 1;
    out.push_back(cur);
    for (int c : children[cur]) stack.push_back(c);
  }
  std::sort(out.begin(), out.end());
  return out;
}

Interval subtree_cover(const std::vector<int>& heads, int node) {
  const auto nodes = subtree_tokens(heads, node);
  return {nodes.front(), nodes.back() + 1};
}

std::string base_relation(std::string_view deprel) {
  return std::string(deprel.substr(0, deprel.find(':')));
}

std::vector<SpanExample> build_dep_examples(const std::vector<Sentence>& sents) {
  std::vector<SpanExample> out;
  for (const auto& s : sents) {
    if (!s.heads || !s.deprels)
      throw ValidationError("sentence " + s.sent_id + ": missing HEAD/DEPREL");
    validate(s);
    const auto& heads = *s.heads;
    for (std::size_t i = 0; i < heads.size(); ++i) {
      const auto label = base_relation((*s.deprels)[i]);
      if (heads[i] == 0 || label == "root") continue;
      const int head = heads[i] - 1;
      out.push_back({s.sent_id, {head, head + 1},
                     subtree_cover(heads, static_cast<int>(i)), label, Task::DEP});
    }
  }
  return out;
}

}  // namespace probing
