#pragma once

#include <stdexcept>
#include <string>

namespace srw {

// Error taxonomy mapped to CLI exit codes:
//   ContractViolation -> 1, IoError -> 2, NumericalError -> 3.

struct ContractViolation : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ContractViolation(msg);
}

}  // namespace srw
