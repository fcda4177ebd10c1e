#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace covtest {

enum class ErrorCategory {
    data,        // malformed or non-finite input values
    config,      // invalid or missing configuration
    model,       // rank deficiency, degenerate fits
    numerical,   // solver failure, ill conditioning
    degenerate,  // the test itself is not defined for this input
    internal,    // construction bug (should never fire)
};

std::string_view category_name(ErrorCategory c) noexcept;

/// Exit status used by the CLI for each category.
int exit_code(ErrorCategory c) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorCategory category, const std::string& message);

    ErrorCategory category() const noexcept { return category_; }
    const std::string& detail() const noexcept { return detail_; }

private:
    ErrorCategory category_;
    std::string detail_;
};

[[noreturn]] void fail(ErrorCategory category, const std::string& message);

}  // namespace covtest
