#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "laat/tensor.hpp"

namespace laat {

inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;
inline constexpr const char* kPadToken = "<pad>";
inline constexpr const char* kUnkToken = "<unk>";
inline constexpr int kDefaultMaxLen = 4000;

// One clinical note with its assigned code set.
struct RawDocument {
  std::string doc_id;
  std::string patient_id;
  std::string text;
  std::vector<std::string> codes;  // kept sorted and distinct
};

struct Corpus {
  std::vector<RawDocument> docs;
  bool empty() const { return docs.empty(); }
  size_t size() const { return docs.size(); }
};

// Lowercase, split on whitespace runs, drop tokens without any ASCII letter,
// truncate to max_len. Throws EmptySequenceError when nothing survives.
std::vector<std::string> preprocess(const std::string& text,
                                    int max_len = kDefaultMaxLen);

// Category prefix of a code: the substring before the first period; codes
// without a period are their own category.
std::string normalize_code(const std::string& code);

// Label space of a training corpus plus the raw -> category surjection.
struct CodeVocabulary {
  std::vector<std::string> raw_codes;         // sorted distinct
  std::vector<std::string> normalized_codes;  // sorted distinct categories
  std::vector<int> parent_of;                 // raw index -> normalized index
  std::unordered_map<std::string, int> raw_index;
  std::unordered_map<std::string, int> normalized_index;

  int num_raw() const { return static_cast<int>(raw_codes.size()); }
  int num_normalized() const { return static_cast<int>(normalized_codes.size()); }
  // -1 when the code is not part of the vocabulary.
  int raw_id(const std::string& code) const;
};

CodeVocabulary build_code_vocabulary(const Corpus& training);

// Token -> index map with PAD and UNK reserved at 0 and 1.
struct TokenVocab {
  std::vector<std::string> tokens;
  std::unordered_map<std::string, int> index;

  int size() const { return static_cast<int>(tokens.size()); }
  int id_or_unk(const std::string& token) const;
  static TokenVocab from_tokens(std::vector<std::string> sorted_unique);
};

// Distinct tokens of a corpus after preprocessing, sorted; documents that
// preprocess to empty are skipped here (they fail later when processed).
std::vector<std::string> collect_corpus_tokens(const Corpus& corpus, int max_len);

struct EmbeddingTable {
  TokenVocab vocab;
  Tensor matrix;  // |V| x dim
  int dim = 0;
};

// Plain-text embedding format: header "count dim", then one line per token:
// the token followed by dim decimal floats. PAD and UNK rows are synthesized
// (PAD all-zero, UNK seeded random).
EmbeddingTable load_embeddings(const std::string& path, uint64_t seed = 0);

// Embedding table covering exactly corpus_tokens (plus PAD/UNK). Tokens found
// in `pretrained` take their pretrained row; everything else gets a seeded
// random row in +-0.1, derived per token so it is stable across runs.
EmbeddingTable build_embedding_table(const std::vector<std::string>& corpus_tokens,
                                     int dim, uint64_t seed,
                                     const EmbeddingTable* pretrained = nullptr);

// A document ready for the model.
struct ProcessedDocument {
  std::string doc_id;
  std::vector<int> token_ids;
  int valid_len = 0;
  std::vector<uint8_t> gold_raw;         // over raw label space
  std::vector<uint8_t> gold_normalized;  // over category space
};

// Tokenize + map to ids + build gold vectors. Codes outside the vocabulary
// are dropped (the label space is fixed by the training split); pass a
// counter to observe how many were dropped.
ProcessedDocument process_document(const RawDocument& doc,
                                   const TokenVocab& vocab,
                                   const CodeVocabulary& codes, int max_len,
                                   int* dropped_codes = nullptr);

std::vector<ProcessedDocument> process_corpus(const Corpus& corpus,
                                              const TokenVocab& vocab,
                                              const CodeVocabulary& codes,
                                              int max_len,
                                              int* dropped_codes = nullptr);

// Patient-level split: every document follows its patient, so no patient
// spans two splits. Fractions must sum to 1; each split must receive at
// least one patient.
std::array<Corpus, 3> split_by_patient(const Corpus& corpus,
                                       const std::array<double, 3>& fractions,
                                       uint64_t seed);

// Line-delimited corpus files, one JSON record per line, UTF-8.
Corpus read_corpus(const std::string& path);
void write_corpus(const Corpus& corpus, const std::string& path);

// Stable fingerprint of preprocessing-relevant vocabulary state; stored in
// checkpoints and re-checked before evaluation.
uint64_t vocabulary_hash(const TokenVocab& vocab, const CodeVocabulary& codes);

}  // namespace laat
