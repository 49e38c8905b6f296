#include "keydyn/error.hpp"

namespace keydyn {

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::MalformedDocument: return "malformed_document";
        case ErrorCode::UnsortedEvents: return "unsorted";
        case ErrorCode::OrphanKeyUp: return "orphan_key_up";
        case ErrorCode::OverlappingSpans: return "overlapping_spans";
        case ErrorCode::UnknownKey: return "unknown_key";
        case ErrorCode::InsufficientTelemetry: return "insufficient_telemetry";
        case ErrorCode::DimensionMismatch: return "dimension_mismatch";
        case ErrorCode::InvalidArgument: return "invalid_argument";
        case ErrorCode::ProfileNotTrained: return "profile_not_trained";
        case ErrorCode::DuplicateUser: return "duplicate_user";
        case ErrorCode::UnknownUser: return "unknown_user";
        case ErrorCode::InsufficientTraining: return "insufficient_training";
        case ErrorCode::TrainingMismatch: return "training_mismatch";
        case ErrorCode::ChallengeClosed: return "challenge_closed";
        case ErrorCode::UnknownChallenge: return "unknown_challenge";
        case ErrorCode::CorruptStore: return "corrupt_store";
        case ErrorCode::VersionMismatch: return "version_mismatch";
        case ErrorCode::StorageFailure: return "storage_failure";
        case ErrorCode::PreconditionFailed: return "precondition_failed";
    }
    return "unknown";
}

}  // namespace keydyn
