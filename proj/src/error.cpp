#include "crossdoc/error.hpp"

namespace crossdoc {

std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::MalformedInput: return "MalformedInput";
        case ErrorCode::NoContent: return "NoContent";
        case ErrorCode::EmptyCaption: return "EmptyCaption";
        case ErrorCode::UnknownFigure: return "UnknownFigure";
        case ErrorCode::UnknownPassage: return "UnknownPassage";
        case ErrorCode::ProviderUnavailable: return "ProviderUnavailable";
        case ErrorCode::RateLimited: return "RateLimited";
        case ErrorCode::CapabilityMismatch: return "CapabilityMismatch";
        case ErrorCode::UnparsablePointResponse: return "UnparsablePointResponse";
        case ErrorCode::ImageUnreadable: return "ImageUnreadable";
        case ErrorCode::UnparsableResponse: return "UnparsableResponse";
        case ErrorCode::MissingFigureKey: return "MissingFigureKey";
        case ErrorCode::ReconstructionMismatch: return "ReconstructionMismatch";
        case ErrorCode::PhraseNotFound: return "PhraseNotFound";
        case ErrorCode::UnresolvedRelatedSentence: return "UnresolvedRelatedSentence";
        case ErrorCode::PipelineFailed: return "PipelineFailed";
        case ErrorCode::UnknownEntity: return "UnknownEntity";
        case ErrorCode::NoEntities: return "NoEntities";
        case ErrorCode::UnknownLocation: return "UnknownLocation";
        case ErrorCode::VersionUnsupported: return "VersionUnsupported";
        case ErrorCode::SchemaViolation: return "SchemaViolation";
        case ErrorCode::SpanCollision: return "SpanCollision";
        case ErrorCode::PortInUse: return "PortInUse";
        case ErrorCode::MissingArtifacts: return "MissingArtifacts";
        case ErrorCode::InsufficientData: return "InsufficientData";
        case ErrorCode::EmptySample: return "EmptySample";
        case ErrorCode::DegenerateTable: return "DegenerateTable";
        case ErrorCode::InvalidArgument: return "InvalidArgument";
        case ErrorCode::Io: return "Io";
    }
    return "Unknown";
}

}  // namespace crossdoc
