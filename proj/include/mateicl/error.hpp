#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mateicl {

/// Base class of every error the library throws. `kind()` is a stable short
/// identifier used in single-line CLI diagnostics.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define MATEICL_DEFINE_ERROR(Name, tag)                                  \
  class Name : public Error {                                            \
   public:                                                               \
    explicit Name(const std::string& what) : Error(tag, what) {}         \
  };

MATEICL_DEFINE_ERROR(ShapeError, "shape")
MATEICL_DEFINE_ERROR(DomainError, "domain")
MATEICL_DEFINE_ERROR(FormatError, "format")
MATEICL_DEFINE_ERROR(ValidationError, "validation")
MATEICL_DEFINE_ERROR(CapacityError, "capacity")
MATEICL_DEFINE_ERROR(VocabError, "vocab")
MATEICL_DEFINE_ERROR(TemplateError, "template")
MATEICL_DEFINE_ERROR(ContractError, "contract")

#undef MATEICL_DEFINE_ERROR

/// Raised by window packing. `index()` is the offending demonstration for
/// kItemTooLarge and the first demonstration that could not be placed for
/// kOverflow.
class PackingError : public Error {
 public:
  enum class Reason { kItemTooLarge, kOverflow };

  PackingError(Reason reason, std::size_t index, const std::string& what)
      : Error(reason == Reason::kItemTooLarge ? "item-too-large" : "overflow", what),
        reason_(reason),
        index_(index) {}

  Reason reason() const noexcept { return reason_; }
  std::size_t index() const noexcept { return index_; }

 private:
  Reason reason_;
  std::size_t index_;
};

}  // namespace mateicl
