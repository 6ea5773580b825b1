#include "reclab/corpus_index.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>

#include "json.hpp"
#include "reclab/errors.hpp"

namespace reclab {

using nlohmann::json;

namespace {

constexpr std::array<std::string_view, 19> kStopwords = {
    "a",  "an", "and", "are", "as", "at", "be", "by",   "for", "from",
    "in", "is", "it",  "of",  "on", "or", "the", "to", "with"};

bool is_token_char(unsigned char c) {
  return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c >= 0x80;
}

bool is_stopword(std::string_view token) {
  return std::find(kStopwords.begin(), kStopwords.end(), token) != kStopwords.end();
}

using TermCounts = std::map<std::string, std::uint32_t, std::less<>>;

TermCounts count_terms(std::span<const std::string> tokens) {
  TermCounts counts;
  for (const auto& t : tokens) ++counts[t];
  return counts;
}

Document parse_document(const json& j) {
  Document doc;
  doc.doc_id = j.at("doc_id").get<std::string>();
  doc.title = j.at("title").get<std::string>();
  if (auto it = j.find("abstract"); it != j.end() && !it->is_null()) {
    doc.abstract = it->get<std::string>();
  }
  doc.url = j.at("url").get<std::string>();
  return doc;
}

json document_json(const Document& doc) {
  json j = json::object();
  j["doc_id"] = doc.doc_id;
  j["title"] = doc.title;
  if (doc.abstract) j["abstract"] = *doc.abstract;
  j["url"] = doc.url;
  return j;
}

}  // namespace

std::span<const std::string_view> stopwords() { return kStopwords; }

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&] {
    if (current.size() >= 2 && !is_stopword(current)) tokens.push_back(current);
    current.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (!is_token_char(c)) {
      flush();
      continue;
    }
    current.push_back((c >= 'A' && c <= 'Z') ? char(c - 'A' + 'a') : ch);
  }
  flush();
  return tokens;
}

std::string document_text(const Document& doc) {
  if (!doc.abstract) return doc.title;
  return doc.title + " " + *doc.abstract;
}

std::vector<Document> read_corpus_jsonl(std::istream& in) {
  std::vector<Document> docs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto doc = parse_document(json::parse(line));
      validate_document(doc);
      docs.push_back(std::move(doc));
    } catch (const json::exception& e) {
      throw LineError("MalformedLine", line_no, e.what());
    } catch (const ValidationError& e) {
      throw LineError("MalformedLine", line_no, e.what());
    }
  }
  return docs;
}

std::vector<Document> read_corpus_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("IoError", "cannot open corpus file '" + path + "'");
  return read_corpus_jsonl(in);
}

Index Index::build(std::span<const Document> corpus) {
  if (corpus.empty()) throw Error("EmptyCorpus", "corpus contains no documents");

  Index index;
  index.docs_.assign(corpus.begin(), corpus.end());
  std::sort(index.docs_.begin(), index.docs_.end(),
            [](const Document& a, const Document& b) { return a.doc_id < b.doc_id; });
  for (std::size_t i = 0; i + 1 < index.docs_.size(); ++i) {
    if (index.docs_[i].doc_id == index.docs_[i + 1].doc_id) {
      throw ConflictError("DuplicateDocId", "duplicate doc_id '" + index.docs_[i].doc_id + "'");
    }
  }

  for (std::uint32_t d = 0; d < index.docs_.size(); ++d) {
    const auto& doc = index.docs_[d];
    validate_document(doc);
    const auto tokens = tokenize(document_text(doc));
    if (tokens.empty()) {
      throw ValidationError("UntokenizableDocument", "doc_id",
                            "document '" + doc.doc_id + "' has no indexable terms");
    }
    for (const auto& [term, tf] : count_terms(tokens)) {
      index.postings_[term].postings.push_back(Posting{d, tf});
    }
  }
  index.finalize();
  return index;
}

void Index::finalize() {
  normalized_titles_.clear();
  by_id_.clear();
  for (std::uint32_t d = 0; d < docs_.size(); ++d) {
    normalized_titles_.push_back(normalize_title(docs_[d].title));
    by_id_.emplace(docs_[d].doc_id, d);
  }
  const double n = double(docs_.size());
  for (auto& [term, entry] : postings_) {
    entry.idf = std::log((n + 1.0) / (double(entry.postings.size()) + 1.0)) + 1.0;
  }
  if (norms_.size() == docs_.size()) return;  // restored from a snapshot

  // Per-document squared weights summed in ascending term order, matching
  // the order used by similarity().
  std::vector<std::vector<std::pair<const std::string*, double>>> weights(docs_.size());
  for (const auto& [term, entry] : postings_) {
    for (const auto& p : entry.postings) {
      weights[p.doc].emplace_back(&term, double(p.tf) * entry.idf);
    }
  }
  norms_.assign(docs_.size(), 0.0);
  for (std::size_t d = 0; d < docs_.size(); ++d) {
    auto& w = weights[d];
    std::sort(w.begin(), w.end(), [](const auto& a, const auto& b) { return *a.first < *b.first; });
    double sum = 0.0;
    for (const auto& [term, x] : w) sum += x * x;
    norms_[d] = std::sqrt(sum);
  }
}

const Index::TermEntry* Index::find(std::string_view term) const {
  auto it = postings_.find(term);
  return it == postings_.end() ? nullptr : &it->second;
}

double Index::unseen_idf() const { return std::log(double(docs_.size()) + 1.0) + 1.0; }

std::size_t Index::df(std::string_view term) const {
  const auto* e = find(term);
  return e ? e->postings.size() : 0;
}

double Index::idf(std::string_view term) const {
  const auto* e = find(term);
  return e ? e->idf : unseen_idf();
}

std::uint32_t Index::doc_number(std::string_view doc_id) const {
  auto it = by_id_.find(doc_id);
  if (it == by_id_.end()) throw NotFoundError("UnknownDoc", "unknown doc_id '" + std::string(doc_id) + "'");
  return it->second;
}

bool Index::contains(std::string_view doc_id) const { return by_id_.find(doc_id) != by_id_.end(); }

double Index::similarity(std::span<const std::string> query_tokens, std::string_view doc_id) const {
  return similarity(query_tokens, doc_number(doc_id));
}

double Index::similarity(std::span<const std::string> query_tokens, std::uint32_t doc) const {
  if (doc >= docs_.size()) throw NotFoundError("UnknownDoc", "document number out of range");
  if (query_tokens.empty()) return 0.0;
  double dot = 0.0;
  double qnorm_sq = 0.0;
  for (const auto& [term, count] : count_terms(query_tokens)) {
    const auto* e = find(term);
    const double wq = double(count) * (e ? e->idf : unseen_idf());
    qnorm_sq += wq * wq;
    if (!e) continue;
    auto it = std::lower_bound(e->postings.begin(), e->postings.end(), doc,
                               [](const Posting& p, std::uint32_t d) { return p.doc < d; });
    if (it != e->postings.end() && it->doc == doc) dot += wq * (double(it->tf) * e->idf);
  }
  if (dot <= 0.0) return 0.0;
  return std::min(1.0, dot / (std::sqrt(qnorm_sq) * norms_[doc]));
}

std::vector<ScoredDoc> Index::score_all(std::span<const std::string> query_tokens) const {
  std::vector<std::uint32_t> candidates;
  for (const auto& token : query_tokens) {
    if (const auto* e = find(token)) {
      for (const auto& p : e->postings) candidates.push_back(p.doc);
    }
  }
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

  std::vector<ScoredDoc> scored;
  scored.reserve(candidates.size());
  for (auto d : candidates) {
    const double s = similarity(query_tokens, d);
    if (s > 0.0) scored.push_back({d, s});
  }
  std::sort(scored.begin(), scored.end(), [](const ScoredDoc& a, const ScoredDoc& b) {
    return a.score != b.score ? a.score > b.score : a.doc < b.doc;
  });
  return scored;
}

std::span<const Posting> Index::postings(std::string_view term) const {
  const auto* e = find(term);
  if (!e) return {};
  return e->postings;
}

std::vector<std::string> Index::terms() const {
  std::vector<std::string> out;
  out.reserve(postings_.size());
  for (const auto& [term, entry] : postings_) out.push_back(term);
  std::sort(out.begin(), out.end());
  return out;
}

void Index::save(std::ostream& out) const {
  json j;
  j["format"] = "reclab-index/1";
  j["doc_count"] = docs_.size();
  j["vocabulary_size"] = postings_.size();
  json docs = json::array();
  for (const auto& d : docs_) docs.push_back(document_json(d));
  j["documents"] = std::move(docs);
  j["doc_norms"] = norms_;
  json postings = json::object();
  for (const auto& term : terms()) {
    json list = json::array();
    for (const auto& p : find(term)->postings) list.push_back({p.doc, p.tf});
    postings[term] = std::move(list);
  }
  j["postings"] = std::move(postings);
  out << j.dump() << '\n';
}

Index Index::load(std::istream& in) {
  json j;
  try {
    j = json::parse(in);
    if (j.at("format") != "reclab-index/1") throw Error("InvalidIndex", "unsupported index format");
    Index index;
    for (const auto& d : j.at("documents")) index.docs_.push_back(parse_document(d));
    index.norms_ = j.at("doc_norms").get<std::vector<double>>();
    if (index.docs_.empty() || index.norms_.size() != index.docs_.size()) {
      throw Error("InvalidIndex", "document table and norms disagree");
    }
    for (const auto& [term, list] : j.at("postings").items()) {
      auto& entry = index.postings_[term];
      for (const auto& p : list) {
        const auto doc = p.at(0).get<std::uint32_t>();
        if (doc >= index.docs_.size()) throw Error("InvalidIndex", "posting references unknown document");
        entry.postings.push_back(Posting{doc, p.at(1).get<std::uint32_t>()});
      }
    }
    index.finalize();
    return index;
  } catch (const json::exception& e) {
    throw Error("InvalidIndex", std::string("malformed index: ") + e.what());
  }
}

}  // namespace reclab
