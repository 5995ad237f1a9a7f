#pragma once

#include <stdexcept>
#include <string>

namespace sersal {

// Bad input files, schemas, or configuration.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Annotator transport or fine-tune failures.
class ProviderError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite losses, empty early-stopping sets and similar training aborts.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Corrupt or incompatible persisted state.
class StateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GoldLabelAccessError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace sersal
