#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mmas {

enum class ErrorCode {
    // system model
    DuplicateAgentId,
    NoRoot,
    MultipleRoots,
    DanglingEdge,
    CycleInCleanTopology,
    UnreachableAgent,
    UnknownAgent,
    UnknownTool,
    NonMonotoneTimestamp,
    InvalidInput,
    // backends
    NoRuleMatched,
    RecordingExhausted,
    RecordingMismatch,
    TransportError,
    NonOkStatus,
    ProtocolViolation,
    DecodeError,
    // paradigms
    EmptyPlan,
    // attacks
    MissingPayloadField,
    ImageDecodeError,
    UnknownTarget,
    CycleTooShort,
    EmptyFragmentSet,
    IndexOutOfRange,
    EmptyTraceReplace,
    LayerKindMismatch,
    // metrics
    EmptySolvedSet,
    EmptyPairSet,
    // experiment
    ParseError,
    MissingImageFile,
    ConfigInvalid,
    IoError,
};

std::string_view to_string(ErrorCode code);

/// Every recoverable failure in the harness is an Error carrying a code;
/// callers branch on code(), messages are for humans.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace mmas
