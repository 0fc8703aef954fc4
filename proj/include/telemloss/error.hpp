#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace telemloss {

enum class ErrorCode {
    invalid_argument,
    unreadable_stream,
    parse_error,
    bad_row_ratio_exceeded,
    no_expected_events,
    method_mismatch,
    degenerate_sample,
    degenerate_variance,
    insufficient_data,
    missing_loss_estimate,
    unknown_variant,
    invalid_spec,
    unknown_event_type,
};

constexpr std::string_view to_string(ErrorCode code) noexcept
{
    switch (code) {
    case ErrorCode::invalid_argument: return "InvalidArgument";
    case ErrorCode::unreadable_stream: return "UnreadableStream";
    case ErrorCode::parse_error: return "ParseError";
    case ErrorCode::bad_row_ratio_exceeded: return "BadRowRatioExceeded";
    case ErrorCode::no_expected_events: return "NoExpectedEvents";
    case ErrorCode::method_mismatch: return "MethodMismatch";
    case ErrorCode::degenerate_sample: return "DegenerateSample";
    case ErrorCode::degenerate_variance: return "DegenerateVariance";
    case ErrorCode::insufficient_data: return "InsufficientData";
    case ErrorCode::missing_loss_estimate: return "MissingLossEstimate";
    case ErrorCode::unknown_variant: return "UnknownVariant";
    case ErrorCode::invalid_spec: return "InvalidSpec";
    case ErrorCode::unknown_event_type: return "UnknownEventType";
    }
    return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so
/// callers (the CLI in particular) can map it to an exit status.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code)
    {
    }

    ErrorCode code() const noexcept { return code_; }

    /// True for failures that come from a statistical guard rather than bad input.
    bool is_statistical_guard() const noexcept
    {
        switch (code_) {
        case ErrorCode::no_expected_events:
        case ErrorCode::degenerate_sample:
        case ErrorCode::degenerate_variance:
        case ErrorCode::insufficient_data:
            return true;
        default:
            return false;
        }
    }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message)
{
    throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message)
{
    if (!condition) {
        fail(code, message);
    }
}

// Literal messages skip the std::string construction on the success path.
inline void require(bool condition, ErrorCode code, const char* message)
{
    if (!condition) {
        fail(code, message);
    }
}

}  // namespace telemloss
