#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace weakseg {

/// Operand shapes do not agree.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A caller broke an operation's precondition.
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Malformed file contents. The offset is a byte position for binary
/// formats and a 1-based line number for text formats.
class FormatError : public std::runtime_error {
public:
    FormatError(const std::string& what, std::uint64_t offset, bool is_line = false)
        : std::runtime_error(what + (is_line ? " (line " : " (at byte ") + std::to_string(offset) + ")"),
          offset_(offset) {}
    std::uint64_t offset() const { return offset_; }

private:
    std::uint64_t offset_;
};

/// No alignment of the transcript fits the available frames.
class InfeasibleError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace weakseg
