#include "laat/data.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "laat/errors.hpp"
#include "laat/rng.hpp"

namespace laat {

using nlohmann::json;

std::vector<std::string> preprocess(const std::string& text, int max_len) {
  if (max_len < 1) throw ConfigError("max_len must be >= 1");
  std::vector<std::string> out;
  std::string cur;
  bool cur_has_alpha = false;
  auto flush = [&]() {
    if (!cur.empty()) {
      if (cur_has_alpha && static_cast<int>(out.size()) < max_len)
        out.push_back(cur);
      cur.clear();
      cur_has_alpha = false;
    }
  };
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      flush();
      continue;
    }
    const unsigned char lc =
        (c < 0x80) ? static_cast<unsigned char>(std::tolower(c)) : c;
    if (lc >= 'a' && lc <= 'z') cur_has_alpha = true;
    cur.push_back(static_cast<char>(lc));
  }
  flush();
  if (out.empty())
    throw EmptySequenceError("document is empty after preprocessing");
  return out;
}

std::string normalize_code(const std::string& code) {
  if (code.empty()) throw ConfigError("cannot normalize an empty code");
  const auto dot = code.find('.');
  return dot == std::string::npos ? code : code.substr(0, dot);
}

int CodeVocabulary::raw_id(const std::string& code) const {
  auto it = raw_index.find(code);
  return it == raw_index.end() ? -1 : it->second;
}

CodeVocabulary build_code_vocabulary(const Corpus& training) {
  if (training.empty())
    throw ConfigError("cannot build a code vocabulary from an empty corpus");
  std::set<std::string> raw;
  for (const auto& d : training.docs)
    for (const auto& c : d.codes) raw.insert(c);
  CodeVocabulary v;
  v.raw_codes.assign(raw.begin(), raw.end());
  std::set<std::string> norm;
  for (const auto& c : v.raw_codes) norm.insert(normalize_code(c));
  v.normalized_codes.assign(norm.begin(), norm.end());
  for (size_t i = 0; i < v.raw_codes.size(); ++i)
    v.raw_index[v.raw_codes[i]] = static_cast<int>(i);
  for (size_t i = 0; i < v.normalized_codes.size(); ++i)
    v.normalized_index[v.normalized_codes[i]] = static_cast<int>(i);
  v.parent_of.resize(v.raw_codes.size());
  for (size_t i = 0; i < v.raw_codes.size(); ++i)
    v.parent_of[i] = v.normalized_index.at(normalize_code(v.raw_codes[i]));
  return v;
}

int TokenVocab::id_or_unk(const std::string& token) const {
  auto it = index.find(token);
  return it == index.end() ? kUnkId : it->second;
}

TokenVocab TokenVocab::from_tokens(std::vector<std::string> sorted_unique) {
  TokenVocab v;
  v.tokens.reserve(sorted_unique.size() + 2);
  v.tokens.push_back(kPadToken);
  v.tokens.push_back(kUnkToken);
  for (auto& t : sorted_unique) {
    if (t == kPadToken || t == kUnkToken)
      throw ConfigError("corpus token collides with reserved token " + t);
    v.tokens.push_back(std::move(t));
  }
  for (size_t i = 0; i < v.tokens.size(); ++i)
    v.index[v.tokens[i]] = static_cast<int>(i);
  return v;
}

std::vector<std::string> collect_corpus_tokens(const Corpus& corpus, int max_len) {
  std::set<std::string> toks;
  for (const auto& d : corpus.docs) {
    try {
      for (auto& t : preprocess(d.text, max_len)) toks.insert(std::move(t));
    } catch (const EmptySequenceError&) {
      // Tokenless documents contribute nothing here.
    }
  }
  return {toks.begin(), toks.end()};
}

static Tensor seeded_row_fill(Tensor matrix, uint64_t seed,
                              const std::vector<std::string>& tokens,
                              const std::vector<bool>& pretrained_row) {
  const int dim = matrix.cols();
  for (int r = 0; r < matrix.rows(); ++r) {
    if (r == kPadId || pretrained_row[r]) continue;
    // Per-token stream: the row a token gets does not depend on which other
    // tokens are present.
    Rng row_rng(mix64(seed, fnv1a64(tokens[r])));
    for (int c = 0; c < dim; ++c) matrix.at(r, c) = row_rng.uniform(-0.1, 0.1);
  }
  return matrix;
}

EmbeddingTable load_embeddings(const std::string& path, uint64_t seed) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open embedding file " + path);
  std::string line;
  if (!std::getline(in, line))
    throw ParseError(path + ":1: missing header line");
  long count = -1, dim = -1;
  {
    std::istringstream hs(line);
    std::string extra;
    if (!(hs >> count >> dim) || (hs >> extra) || count < 0 || dim < 1)
      throw ParseError(path + ":1: malformed header, expected \"count dim\"");
  }
  std::vector<std::string> file_tokens;
  std::vector<std::vector<double>> rows;
  std::set<std::string> seen;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string token;
    ls >> token;
    if (token == kPadToken || token == kUnkToken)
      throw ParseError(path + ":" + std::to_string(lineno) +
                       ": token collides with reserved token " + token);
    if (!seen.insert(token).second)
      throw ParseError(path + ":" + std::to_string(lineno) +
                       ": duplicate token " + token);
    std::vector<double> v(dim);
    for (long i = 0; i < dim; ++i) {
      if (!(ls >> v[i]))
        throw ParseError(path + ":" + std::to_string(lineno) + ": expected " +
                         std::to_string(dim) + " values for token " + token);
    }
    double extra;
    if (ls >> extra)
      throw ParseError(path + ":" + std::to_string(lineno) + ": expected " +
                       std::to_string(dim) + " values for token " + token);
    file_tokens.push_back(token);
    rows.push_back(std::move(v));
  }
  if (static_cast<long>(file_tokens.size()) != count)
    std::cerr << "warning: " << path << " header reports " << count
              << " tokens but " << file_tokens.size() << " were read\n";

  std::vector<std::string> sorted = file_tokens;
  std::sort(sorted.begin(), sorted.end());
  EmbeddingTable table;
  table.vocab = TokenVocab::from_tokens(std::move(sorted));
  table.dim = static_cast<int>(dim);
  table.matrix = Tensor::zeros({table.vocab.size(), table.dim});
  std::vector<bool> have(table.vocab.size(), false);
  for (size_t i = 0; i < file_tokens.size(); ++i) {
    const int id = table.vocab.index.at(file_tokens[i]);
    for (long c = 0; c < dim; ++c) table.matrix.at(id, static_cast<int>(c)) = rows[i][c];
    have[id] = true;
  }
  have[kPadId] = true;  // stays zero
  table.matrix = seeded_row_fill(table.matrix, seed, table.vocab.tokens, have);
  return table;
}

EmbeddingTable build_embedding_table(const std::vector<std::string>& corpus_tokens,
                                     int dim, uint64_t seed,
                                     const EmbeddingTable* pretrained) {
  if (pretrained) dim = pretrained->dim;
  if (dim < 1) throw ConfigError("embedding dim must be >= 1");
  std::vector<std::string> sorted = corpus_tokens;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  EmbeddingTable table;
  table.vocab = TokenVocab::from_tokens(std::move(sorted));
  table.dim = dim;
  table.matrix = Tensor::zeros({table.vocab.size(), dim});
  std::vector<bool> have(table.vocab.size(), false);
  have[kPadId] = true;
  if (pretrained) {
    for (int r = 0; r < table.vocab.size(); ++r) {
      auto it = pretrained->vocab.index.find(table.vocab.tokens[r]);
      if (it == pretrained->vocab.index.end() || it->second == kPadId ||
          it->second == kUnkId)
        continue;
      for (int c = 0; c < dim; ++c)
        table.matrix.at(r, c) = pretrained->matrix.at(it->second, c);
      have[r] = true;
    }
  }
  table.matrix = seeded_row_fill(table.matrix, seed, table.vocab.tokens, have);
  return table;
}

ProcessedDocument process_document(const RawDocument& doc,
                                   const TokenVocab& vocab,
                                   const CodeVocabulary& codes, int max_len,
                                   int* dropped_codes) {
  ProcessedDocument p;
  p.doc_id = doc.doc_id;
  for (const auto& tok : preprocess(doc.text, max_len))
    p.token_ids.push_back(vocab.id_or_unk(tok));
  p.valid_len = static_cast<int>(p.token_ids.size());
  p.gold_raw.assign(codes.num_raw(), 0);
  p.gold_normalized.assign(codes.num_normalized(), 0);
  for (const auto& c : doc.codes) {
    const int id = codes.raw_id(c);
    if (id < 0) {
      if (dropped_codes) ++*dropped_codes;
      continue;
    }
    p.gold_raw[id] = 1;
    p.gold_normalized[codes.parent_of[id]] = 1;
  }
  return p;
}

std::vector<ProcessedDocument> process_corpus(const Corpus& corpus,
                                              const TokenVocab& vocab,
                                              const CodeVocabulary& codes,
                                              int max_len, int* dropped_codes) {
  std::vector<ProcessedDocument> out;
  out.reserve(corpus.size());
  for (const auto& d : corpus.docs)
    out.push_back(process_document(d, vocab, codes, max_len, dropped_codes));
  return out;
}

std::array<Corpus, 3> split_by_patient(const Corpus& corpus,
                                       const std::array<double, 3>& fractions,
                                       uint64_t seed) {
  const double total = fractions[0] + fractions[1] + fractions[2];
  if (std::abs(total - 1.0) > 1e-9)
    throw ConfigError("split fractions must sum to 1, got " + std::to_string(total));
  for (double f : fractions)
    if (f < 0.0) throw ConfigError("split fractions must be non-negative");

  // Patients in first-appearance order, then a seeded shuffle.
  std::vector<std::string> patients;
  std::unordered_map<std::string, std::vector<size_t>> docs_of;
  for (size_t i = 0; i < corpus.docs.size(); ++i) {
    const auto& pid = corpus.docs[i].patient_id;
    if (!docs_of.count(pid)) patients.push_back(pid);
    docs_of[pid].push_back(i);
  }
  Rng rng(seed);
  std::shuffle(patients.begin(), patients.end(), rng.engine());

  // Largest-remainder allocation over patients.
  const size_t p = patients.size();
  std::array<size_t, 3> counts{};
  std::array<double, 3> remainders{};
  size_t assigned = 0;
  for (int s = 0; s < 3; ++s) {
    const double exact = fractions[s] * static_cast<double>(p);
    counts[s] = static_cast<size_t>(exact);
    remainders[s] = exact - static_cast<double>(counts[s]);
    assigned += counts[s];
  }
  while (assigned < p) {
    int best = 0;
    for (int s = 1; s < 3; ++s)
      if (remainders[s] > remainders[best]) best = s;
    ++counts[best];
    remainders[best] = -1.0;
    ++assigned;
  }
  for (int s = 0; s < 3; ++s)
    if (counts[s] == 0)
      throw ConfigError("split " + std::to_string(s) +
                        " receives zero patients (" + std::to_string(p) +
                        " patients total)");

  std::array<Corpus, 3> out;
  size_t cursor = 0;
  for (int s = 0; s < 3; ++s) {
    for (size_t i = 0; i < counts[s]; ++i, ++cursor) {
      for (size_t di : docs_of[patients[cursor]])
        out[s].docs.push_back(corpus.docs[di]);
    }
  }
  return out;
}

Corpus read_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open corpus file " + path);
  Corpus corpus;
  std::string line;
  int lineno = 0;
  std::set<std::string> ids;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    RawDocument d;
    try {
      d.doc_id = j.at("doc_id").get<std::string>();
      d.patient_id = j.at("patient_id").get<std::string>();
      d.text = j.at("text").get<std::string>();
      d.codes = j.at("codes").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    std::sort(d.codes.begin(), d.codes.end());
    d.codes.erase(std::unique(d.codes.begin(), d.codes.end()), d.codes.end());
    if (!ids.insert(d.doc_id).second)
      throw ParseError(path + ":" + std::to_string(lineno) +
                       ": duplicate doc_id " + d.doc_id);
    corpus.docs.push_back(std::move(d));
  }
  return corpus;
}

void write_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write corpus file " + path);
  for (const auto& d : corpus.docs) {
    json j{{"doc_id", d.doc_id},
           {"patient_id", d.patient_id},
           {"text", d.text},
           {"codes", d.codes}};
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("write failed for " + path);
}

uint64_t vocabulary_hash(const TokenVocab& vocab, const CodeVocabulary& codes) {
  uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const std::string& s) {
    h = mix64(h, fnv1a64(s));
  };
  for (const auto& t : vocab.tokens) feed(t);
  feed("|codes|");
  for (const auto& c : codes.raw_codes) feed(c);
  for (const auto& c : codes.normalized_codes) feed(c);
  return h;
}

}  // namespace laat
