#pragma once

#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace tatt {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ',';
        os << s[i];
    }
    os << ']';
    return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

/// Operand shapes do not fit the operation.
struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// A documented precondition was violated by the caller.
struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

/// backward() was called on a graph whose buffers were already released.
struct GraphConsumedError : std::logic_error {
    using std::logic_error::logic_error;
};

struct BoundsError : std::out_of_range {
    using std::out_of_range::out_of_range;
};

/// A label contains a character outside [0-9a-z].
struct AlphabetError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ChecksumError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Non-finite loss during training.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline DimensionError dim_error(const std::string& op, const Shape& a, const Shape& b) {
    return DimensionError(op + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

}  // namespace tatt
