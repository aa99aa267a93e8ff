#pragma once

#include <stdexcept>
#include <string>

namespace occsplat {

/// Caller passed something that violates an operation's precondition.
class InvalidInput : public std::invalid_argument {
public:
    explicit InvalidInput(const std::string& what) : std::invalid_argument(what) {}
};

/// Internal invariant broke at runtime (non-finite values, missing caches, ...).
class Fault : public std::runtime_error {
public:
    explicit Fault(const std::string& what) : std::runtime_error(what) {}
};

} // namespace occsplat
