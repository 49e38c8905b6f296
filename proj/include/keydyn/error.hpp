#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace keydyn {

enum class ErrorCode {
    MalformedDocument,
    UnsortedEvents,
    OrphanKeyUp,
    OverlappingSpans,
    UnknownKey,
    InsufficientTelemetry,
    DimensionMismatch,
    InvalidArgument,
    ProfileNotTrained,
    DuplicateUser,
    UnknownUser,
    InsufficientTraining,
    TrainingMismatch,
    ChallengeClosed,
    UnknownChallenge,
    CorruptStore,
    VersionMismatch,
    StorageFailure,
    PreconditionFailed,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Every failure raised by the library carries a machine-readable code; the
/// service layer maps codes onto HTTP statuses.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& detail)
        : std::runtime_error(detail), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace keydyn
