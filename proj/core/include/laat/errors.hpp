#pragma once

#include <stdexcept>
#include <string>

namespace laat {

// Invalid configuration or user input detected before any real work starts.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor shape disagreement.
class ShapeError : public std::invalid_argument {
 public:
  explicit ShapeError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Malformed input file (corpus, embeddings, checkpoint, synthetic spec).
class ParseError : public std::runtime_error {
 public:
  explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem-level failure.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// A document came out empty after preprocessing, or a sequence op was
// handed valid_len == 0.
class EmptySequenceError : public std::runtime_error {
 public:
  explicit EmptySequenceError(const std::string& msg) : std::runtime_error(msg) {}
};

// Token or label index outside its table.
class IndexError : public std::out_of_range {
 public:
  explicit IndexError(const std::string& msg) : std::out_of_range(msg) {}
};

// A metric was requested on data where it is undefined (e.g. AUC on a
// single-class pool).
class MetricError : public std::runtime_error {
 public:
  explicit MetricError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace laat
