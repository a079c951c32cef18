#pragma once

#include <stdexcept>
#include <string>

namespace smu {

/// Raised for violated preconditions and unrecoverable numerical conditions.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

} // namespace smu
