#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "laat/data.hpp"

namespace laat {

// Rare-code families: each family is one normalized category whose children
// fire with probability base_probability * (child_index+1)^-alpha.
struct TailFamilySpec {
  int num_parents = 0;
  int children_per_parent = 0;
  double alpha = 1.0;
  double base_probability = 0.3;
};

// Desk-scale corpus with planted signals. Three code families:
//   single-trigger: code fires iff its trigger token appears;
//   compound: code fires iff BOTH of its trigger tokens appear, planted at
//     least min_separation positions apart (lone plantings act as
//     distractors and do not fire the code);
//   long-tail: single-trigger children under shared categories.
struct SyntheticSpec {
  int num_documents = 500;
  int vocab_size = 200;
  int doc_len_min = 50;
  int doc_len_max = 90;

  int num_single_trigger_codes = 0;
  double single_trigger_probability = 0.3;

  int num_compound_codes = 0;
  double compound_both_probability = 0.3;
  double compound_lone_probability = 0.08;  // each side alone
  int min_separation = 0;

  TailFamilySpec tail;

  std::array<double, 3> split_fractions{0.8, 0.1, 0.1};
  int docs_per_patient = 1;

  void validate() const;  // throws ConfigError when infeasible
  int trigger_token_count() const;
};

SyntheticSpec parse_synthetic_spec(const std::string& json_text);
SyntheticSpec load_synthetic_spec(const std::string& path);
std::string synthetic_spec_to_json(const SyntheticSpec& spec);

// Where each code's triggers landed in one document.
struct PlantedInfo {
  std::string doc_id;
  std::map<std::string, std::vector<int>> fired;  // code -> planted positions
  std::map<std::string, std::vector<int>> lone;   // plantings that do not fire
};

struct SyntheticCorpus {
  Corpus corpus;
  std::vector<PlantedInfo> planted;  // parallel to corpus.docs
};

SyntheticCorpus generate_synthetic_corpus(const SyntheticSpec& spec,
                                          uint64_t seed);

void write_planted_metadata(const std::vector<PlantedInfo>& planted,
                            const std::string& path);
std::vector<PlantedInfo> read_planted_metadata(const std::string& path);

// Code-name helpers shared with tests and the acceptance suite.
std::string single_trigger_code_name(int k);
std::string compound_code_name(int k);
std::string tail_code_name(int family, int child);

}  // namespace laat
