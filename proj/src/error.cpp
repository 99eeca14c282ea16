#include "mmas/error.hpp"

namespace mmas {

std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::DuplicateAgentId: return "DuplicateAgentId";
        case ErrorCode::NoRoot: return "NoRoot";
        case ErrorCode::MultipleRoots: return "MultipleRoots";
        case ErrorCode::DanglingEdge: return "DanglingEdge";
        case ErrorCode::CycleInCleanTopology: return "CycleInCleanTopology";
        case ErrorCode::UnreachableAgent: return "UnreachableAgent";
        case ErrorCode::UnknownAgent: return "UnknownAgent";
        case ErrorCode::UnknownTool: return "UnknownTool";
        case ErrorCode::NonMonotoneTimestamp: return "NonMonotoneTimestamp";
        case ErrorCode::InvalidInput: return "InvalidInput";
        case ErrorCode::NoRuleMatched: return "NoRuleMatched";
        case ErrorCode::RecordingExhausted: return "RecordingExhausted";
        case ErrorCode::RecordingMismatch: return "RecordingMismatch";
        case ErrorCode::TransportError: return "TransportError";
        case ErrorCode::NonOkStatus: return "NonOkStatus";
        case ErrorCode::ProtocolViolation: return "ProtocolViolation";
        case ErrorCode::DecodeError: return "DecodeError";
        case ErrorCode::EmptyPlan: return "EmptyPlan";
        case ErrorCode::MissingPayloadField: return "MissingPayloadField";
        case ErrorCode::ImageDecodeError: return "ImageDecodeError";
        case ErrorCode::UnknownTarget: return "UnknownTarget";
        case ErrorCode::CycleTooShort: return "CycleTooShort";
        case ErrorCode::EmptyFragmentSet: return "EmptyFragmentSet";
        case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
        case ErrorCode::EmptyTraceReplace: return "EmptyTraceReplace";
        case ErrorCode::LayerKindMismatch: return "LayerKindMismatch";
        case ErrorCode::EmptySolvedSet: return "EmptySolvedSet";
        case ErrorCode::EmptyPairSet: return "EmptyPairSet";
        case ErrorCode::ParseError: return "ParseError";
        case ErrorCode::MissingImageFile: return "MissingImageFile";
        case ErrorCode::ConfigInvalid: return "ConfigInvalid";
        case ErrorCode::IoError: return "IoError";
    }
    return "Unknown";
}

}  // namespace mmas
