#pragma once

#include <string>

#include "laat/data.hpp"
#include "laat/model.hpp"

namespace laat {

// Everything a model needs to run on new text.
struct LoadedCheckpoint {
  LaatModel model;
  TokenVocab tokens;
  CodeVocabulary codes;
  uint64_t vocab_hash = 0;
};

// Versioned container: magic + JSON header (config, vocabulary, named
// parameter shapes) + raw little-endian 64-bit floats in registry order.
// load(save(m)) round-trips bit-exactly.
void save_checkpoint(const std::string& path, const LaatModel& model,
                     const TokenVocab& tokens, const CodeVocabulary& codes);

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace laat
