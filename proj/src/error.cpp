#include "slurmbridge/error.hpp"

namespace slurmbridge {

std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::MalformedDocument: return "MalformedDocument";
    case Errc::UnsupportedSchema: return "UnsupportedSchema";
    case Errc::InvalidDescriptor: return "InvalidDescriptor";
    case Errc::MissingRequiredParam: return "MissingRequiredParam";
    case Errc::TypeMismatch: return "TypeMismatch";
    case Errc::UnknownParam: return "UnknownParam";
    case Errc::MalformedConfig: return "MalformedConfig";
    case Errc::MissingSection: return "MissingSection";
    case Errc::InvalidValue: return "InvalidValue";
    case Errc::UnknownWorkflow: return "UnknownWorkflow";
    case Errc::InvalidCount: return "InvalidCount";
    case Errc::UnknownConverter: return "UnknownConverter";
    case Errc::ConnectionLost: return "ConnectionLost";
    case Errc::Timeout: return "Timeout";
    case Errc::SourceMissing: return "SourceMissing";
    case Errc::DestinationUnwritable: return "DestinationUnwritable";
    case Errc::ChecksumMismatch: return "ChecksumMismatch";
    case Errc::ScratchUnwritable: return "ScratchUnwritable";
    case Errc::PullFailed: return "PullFailed";
    case Errc::SubmitRejected: return "SubmitRejected";
    case Errc::UnparseableJobId: return "UnparseableJobId";
    case Errc::AccountingUnavailable: return "AccountingUnavailable";
    case Errc::UnknownState: return "UnknownState";
    case Errc::LogMissing: return "LogMissing";
    case Errc::EmptyOutput: return "EmptyOutput";
    case Errc::MissingInput: return "MissingInput";
    case Errc::DuplicateId: return "DuplicateId";
    case Errc::InvalidBatchSize: return "InvalidBatchSize";
    case Errc::TransferFailed: return "TransferFailed";
    case Errc::ConversionFailed: return "ConversionFailed";
    case Errc::WorkflowFailed: return "WorkflowFailed";
    case Errc::RetrievalFailed: return "RetrievalFailed";
    case Errc::NoResults: return "NoResults";
    case Errc::CollisionError: return "CollisionError";
    case Errc::UnknownRunId: return "UnknownRunId";
    case Errc::CorruptArchive: return "CorruptArchive";
  }
  return "Unknown";
}

namespace {

std::string compose(Errc code, const std::string& subject, const std::string& detail) {
  std::string msg(to_string(code));
  if (!subject.empty()) msg += " (" + subject + ")";
  if (!detail.empty()) msg += ": " + detail;
  return msg;
}

}  // namespace

Error::Error(Errc code, std::string subject, const std::string& detail)
    : std::runtime_error(compose(code, subject, detail)), code_(code), subject_(std::move(subject)) {}

}  // namespace slurmbridge
