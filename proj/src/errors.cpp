#include "covtest/errors.hpp"

namespace covtest {

std::string_view category_name(ErrorCategory c) noexcept
{
    switch (c) {
    case ErrorCategory::data: return "data";
    case ErrorCategory::config: return "config";
    case ErrorCategory::model: return "model";
    case ErrorCategory::numerical: return "numerical";
    case ErrorCategory::degenerate: return "degenerate";
    case ErrorCategory::internal: return "internal";
    }
    return "internal";
}

int exit_code(ErrorCategory c) noexcept
{
    switch (c) {
    case ErrorCategory::data: return 3;
    case ErrorCategory::config: return 2;
    case ErrorCategory::model: return 4;
    case ErrorCategory::numerical: return 5;
    case ErrorCategory::degenerate: return 6;
    case ErrorCategory::internal: return 70;
    }
    return 70;
}

Error::Error(ErrorCategory category, const std::string& message)
    : std::runtime_error(std::string(category_name(category)) + " error: " + message),
      category_(category),
      detail_(message)
{
}

void fail(ErrorCategory category, const std::string& message)
{
    throw Error(category, message);
}

}  // namespace covtest
