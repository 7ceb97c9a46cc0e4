#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace crossdoc {

enum class ErrorCode {
    // ingest
    MalformedInput,
    NoContent,
    EmptyCaption,
    UnknownFigure,
    UnknownPassage,
    // providers
    ProviderUnavailable,
    RateLimited,
    CapabilityMismatch,
    UnparsablePointResponse,
    ImageUnreadable,
    // pipeline
    UnparsableResponse,
    MissingFigureKey,
    ReconstructionMismatch,
    PhraseNotFound,
    UnresolvedRelatedSentence,
    PipelineFailed,
    // linkgraph
    UnknownEntity,
    NoEntities,
    UnknownLocation,
    // bundler
    VersionUnsupported,
    SchemaViolation,
    SpanCollision,
    // server
    PortInUse,
    MissingArtifacts,
    // analysis
    InsufficientData,
    EmptySample,
    DegenerateTable,
    // shared
    InvalidArgument,
    Io,
};

std::string_view to_string(ErrorCode code);

// Every failure surfaced by the library carries a machine-readable code.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace crossdoc
