#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

namespace dive {

enum class ErrorCode {
  // corpus
  MissingFile,
  MalformedManifest,
  AnchorNotFound,
  UnreadableImage,
  UnknownFigureId,
  // schema
  UnknownElement,
  UnbalancedGroup,
  EmptyFormula,
  SyntaxError,
  UnparseableQuantity,
  UnitKindMismatch,
  ValidationFailure,
  // gateway
  Timeout,
  HttpStatus,
  RateLimited,
  CassetteMiss,
  MalformedResponse,
  BackendUnavailable,
  // pipeline
  ImageLoadError,
  ChunkExtractionFailed,
  TemplateError,
  // store
  StorageIO,
  UnknownId,
  Conflict,
  BadBinEdges,
  // predictor
  MissingProperty,
  DatasetTooSmall,
  DegenerateTarget,
  SchemaMismatch,
  ModelUnavailable,
  // designer
  EmptyProposal,
  // service
  BindFailure,
  StoreOpenFailure,
  Unauthorized,
  // shared
  InvalidArgument,
};

std::string_view to_string(ErrorCode code);

/// Library-wide exception. `details` carries structured context (offending
/// figure id, byte offset, HTTP status, ...) that the service forwards as-is.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, nlohmann::json details = nlohmann::json::object())
      : std::runtime_error(message), code_(code), details_(std::move(details)) {}

  ErrorCode code() const noexcept { return code_; }
  const nlohmann::json& details() const noexcept { return details_; }

 private:
  ErrorCode code_;
  nlohmann::json details_;
};

}  // namespace dive
