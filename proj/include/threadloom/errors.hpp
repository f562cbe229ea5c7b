#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace threadloom {

// Base of every engine error. `code()` is the machine-readable identifier that
// the CLI and the HTTP service surface verbatim.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& message)
        : std::runtime_error(message), code_(std::move(code)) {}

    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

#define THREADLOOM_DEFINE_ERROR(Name, Code)                                   \
    class Name : public Error {                                               \
    public:                                                                   \
        explicit Name(const std::string& message) : Error(Code, message) {}   \
    };

// doc-model
THREADLOOM_DEFINE_ERROR(SchemaError, "SCHEMA_ERROR")
THREADLOOM_DEFINE_ERROR(InvariantError, "INVARIANT_ERROR")
THREADLOOM_DEFINE_ERROR(NoSuchDocument, "NO_SUCH_DOCUMENT")

// highlight-linker
THREADLOOM_DEFINE_ERROR(UnknownPage, "UNKNOWN_PAGE")
THREADLOOM_DEFINE_ERROR(PayloadTooLarge, "PAYLOAD_TOO_LARGE")
THREADLOOM_DEFINE_ERROR(EmptySelection, "EMPTY_SELECTION")

// thread-store
THREADLOOM_DEFINE_ERROR(NotInTank, "NOT_IN_TANK")
THREADLOOM_DEFINE_ERROR(EmptyCommit, "EMPTY_COMMIT")
THREADLOOM_DEFINE_ERROR(NoSuchThread, "NO_SUCH_THREAD")
THREADLOOM_DEFINE_ERROR(NoSuchPaper, "NO_SUCH_PAPER")
THREADLOOM_DEFINE_ERROR(NoSuchClip, "NO_SUCH_CLIP")
THREADLOOM_DEFINE_ERROR(DuplicatePaper, "DUPLICATE_PAPER")
THREADLOOM_DEFINE_ERROR(InvalidTarget, "INVALID_TARGET")
THREADLOOM_DEFINE_ERROR(CycleError, "CYCLE_ERROR")
THREADLOOM_DEFINE_ERROR(CannotMoveUnorganized, "CANNOT_MOVE_UNORGANIZED")
THREADLOOM_DEFINE_ERROR(ConfirmationRequired, "CONFIRMATION_REQUIRED")
THREADLOOM_DEFINE_ERROR(ConflictError, "CONFLICT")
THREADLOOM_DEFINE_ERROR(StorageError, "STORAGE_ERROR")
THREADLOOM_DEFINE_ERROR(InvalidArgument, "INVALID_ARGUMENT")

// thread-suggest
THREADLOOM_DEFINE_ERROR(ZeroVector, "ZERO_VECTOR")
THREADLOOM_DEFINE_ERROR(DimensionMismatch, "DIMENSION_MISMATCH")

// discovery
THREADLOOM_DEFINE_ERROR(NoResolvedRefs, "NO_RESOLVED_REFS")

// metadata-client
THREADLOOM_DEFINE_ERROR(NotFound, "NOT_FOUND")
THREADLOOM_DEFINE_ERROR(RateLimited, "RATE_LIMITED")
THREADLOOM_DEFINE_ERROR(NetworkError, "NETWORK_ERROR")
THREADLOOM_DEFINE_ERROR(FixtureMiss, "FIXTURE_MISS")

#undef THREADLOOM_DEFINE_ERROR

}  // namespace threadloom
