#pragma once
#include <cstddef>
#include <stdexcept>
#include <string>

namespace nexus {

// Base for everything thrown on purpose. Callers that want to map errors to
// process exit codes catch the concrete types below.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Violated precondition: bad shapes, invalid config, out-of-range argument.
struct ContractError : Error {
    using Error::Error;
};

// Numerical failure at runtime: divergence, non-finite values, no convergence.
struct NumericalError : Error {
    using Error::Error;
};

// Malformed file content. `offset` is the byte position that broke parsing.
struct FormatError : Error {
    std::size_t offset;
    FormatError(const std::string& msg, std::size_t off)
        : Error(msg + " (byte offset " + std::to_string(off) + ")"), offset(off) {}
};

// A construction that provably cannot exist was requested (e.g. a low-rank
// factorization with too small an inner dimension).
struct RepresentabilityError : Error {
    using Error::Error;
};

inline void contract(bool ok, const char* msg) {
    if (!ok) throw ContractError(msg);
}

inline void contract(bool ok, const std::string& msg) {
    if (!ok) throw ContractError(msg);
}

} // namespace nexus
