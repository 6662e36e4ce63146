#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace slurmbridge {

/// Every structured failure the library reports. Grouped by the module that raises it.
enum class Errc {
  // descriptor
  MalformedDocument,
  UnsupportedSchema,
  InvalidDescriptor,
  MissingRequiredParam,
  TypeMismatch,
  UnknownParam,
  // config
  MalformedConfig,
  MissingSection,
  InvalidValue,
  UnknownWorkflow,
  // jobscript
  InvalidCount,
  UnknownConverter,
  // transport
  ConnectionLost,
  Timeout,
  SourceMissing,
  DestinationUnwritable,
  ChecksumMismatch,
  // slurm client
  ScratchUnwritable,
  PullFailed,
  SubmitRejected,
  UnparseableJobId,
  AccountingUnavailable,
  UnknownState,
  LogMissing,
  EmptyOutput,
  // orchestrator
  MissingInput,
  DuplicateId,
  InvalidBatchSize,
  TransferFailed,
  ConversionFailed,
  WorkflowFailed,
  RetrievalFailed,
  NoResults,
  CollisionError,
  UnknownRunId,
  // archive
  CorruptArchive,
};

std::string_view to_string(Errc code) noexcept;

/// Exception carrying a machine-checkable code and the name of the offending
/// field, parameter, path or workflow (`subject`).
class Error : public std::runtime_error {
 public:
  Error(Errc code, std::string subject, const std::string& detail = {});

  Errc code() const noexcept { return code_; }
  const std::string& subject() const noexcept { return subject_; }

 private:
  Errc code_;
  std::string subject_;
};

}  // namespace slurmbridge
