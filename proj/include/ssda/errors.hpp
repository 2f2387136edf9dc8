#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace ssda {

/// Operand shapes do not conform to the operation.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// An API precondition was violated by the caller (misuse, not bad data).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// A non-finite value was produced or consumed where finiteness is required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid run or model configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A class id is present on one side of a paired computation but not the other.
class MissingClassError : public std::runtime_error {
 public:
  MissingClassError(int class_id, const std::string& where)
      : std::runtime_error("class " + std::to_string(class_id) + " missing from " + where),
        class_id_(class_id) {}

  int class_id() const noexcept { return class_id_; }

 private:
  int class_id_;
};

/// Malformed binary input. Carries the byte offset at which parsing failed.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Error raised inside a pipeline stage, prefixed with the stage label.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& what)
      : std::runtime_error(stage + ": " + what), stage_(std::move(stage)) {}

  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

/// Runs `fn`, relabeling any exception as a StageError for `stage`.
template <typename Fn>
auto with_stage(const std::string& stage, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

}  // namespace ssda
