#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace nhsim {

enum class ErrorKind {
    NotHermitian,
    NotPSD,
    Overflow,
    IndexOutOfRange,
    DomainError,
    DimensionMismatch,
    PositivityLost,
    SingularEta,
    BadState,
    VanishingBlock,
    RangeNotCovered,
    ConfigError,
    BudgetExhausted,
    IoError,
};

std::string_view to_string(ErrorKind kind) noexcept;

/// Single exception type for the library; callers dispatch on kind().
class Error : public std::runtime_error {
  public:
    Error(ErrorKind kind, const std::string &what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

    [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

  private:
    ErrorKind kind_;
};

/// True for failures that mean the physics run broke down rather than the input being malformed.
[[nodiscard]] constexpr bool is_numerical_failure(ErrorKind kind) noexcept {
    switch (kind) {
    case ErrorKind::PositivityLost:
    case ErrorKind::SingularEta:
    case ErrorKind::VanishingBlock:
    case ErrorKind::Overflow:
    case ErrorKind::NotPSD:
    case ErrorKind::NotHermitian:
        return true;
    default:
        return false;
    }
}

} // namespace nhsim
