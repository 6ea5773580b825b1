#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "reclab/domain.hpp"

namespace reclab {

// Fixed stopword list applied by tokenize().
std::span<const std::string_view> stopwords();

// Lowercases, splits on every non-alphanumeric character, then drops tokens
// shorter than two bytes and stopwords. Bytes >= 0x80 count as token
// characters so UTF-8 words stay whole.
std::vector<std::string> tokenize(std::string_view text);

// Title, then abstract when present, joined by one space.
std::string document_text(const Document& doc);

// JSON Lines, one document per line. Parse failures raise LineError
// ("MalformedLine") carrying the 1-based line number; blank lines are skipped.
std::vector<Document> read_corpus_jsonl(std::istream& in);
std::vector<Document> read_corpus_file(const std::string& path);

struct Posting {
  std::uint32_t doc = 0;  // dense document number, see Index::doc_id
  std::uint32_t tf = 0;
};

struct ScoredDoc {
  std::uint32_t doc = 0;
  double score = 0.0;
};

// Immutable term index with smoothed idf and raw-count tf:
//   idf(t)   = ln((N + 1) / (df_t + 1)) + 1
//   w(t, x)  = count(t, x) * idf(t)
//   sim(q,d) = <w_q, w_d> / (|w_q| |w_d|)
// Dense document numbers follow ascending doc_id, so comparing numbers is
// comparing ids. Read-only after build; safe for concurrent readers.
class Index {
 public:
  // Throws Error("EmptyCorpus"), ConflictError("DuplicateDocId"),
  // ValidationError("UntokenizableDocument") or the document validation error.
  static Index build(std::span<const Document> corpus);

  std::size_t doc_count() const { return docs_.size(); }
  std::size_t vocabulary_size() const { return postings_.size(); }

  std::size_t df(std::string_view term) const;
  double idf(std::string_view term) const;

  // Throws NotFoundError("UnknownDoc"). Returns 0 for an empty query.
  double similarity(std::span<const std::string> query_tokens, std::string_view doc_id) const;
  double similarity(std::span<const std::string> query_tokens, std::uint32_t doc) const;

  // Every document with a positive score, by descending score then ascending doc_id.
  std::vector<ScoredDoc> score_all(std::span<const std::string> query_tokens) const;

  const Document& document(std::uint32_t doc) const { return docs_.at(doc); }
  const std::string& doc_id(std::uint32_t doc) const { return docs_.at(doc).doc_id; }
  const std::string& normalized_title(std::uint32_t doc) const { return normalized_titles_.at(doc); }
  double doc_norm(std::uint32_t doc) const { return norms_.at(doc); }
  // Throws NotFoundError("UnknownDoc").
  std::uint32_t doc_number(std::string_view doc_id) const;
  bool contains(std::string_view doc_id) const;

  std::span<const Document> documents() const { return docs_; }
  std::span<const Posting> postings(std::string_view term) const;
  std::vector<std::string> terms() const;  // sorted

  // JSON snapshot of documents, postings and norms.
  void save(std::ostream& out) const;
  static Index load(std::istream& in);

 private:
  struct TermEntry {
    std::vector<Posting> postings;  // ascending doc
    double idf = 0.0;
  };

  struct StringHash {
    using is_transparent = void;
    std::size_t operator()(std::string_view s) const noexcept { return std::hash<std::string_view>{}(s); }
  };

  const TermEntry* find(std::string_view term) const;
  double unseen_idf() const;
  void finalize();

  std::vector<Document> docs_;
  std::vector<std::string> normalized_titles_;
  std::vector<double> norms_;
  std::unordered_map<std::string, TermEntry, StringHash, std::equal_to<>> postings_;
  std::unordered_map<std::string, std::uint32_t, StringHash, std::equal_to<>> by_id_;
};

}  // namespace reclab
