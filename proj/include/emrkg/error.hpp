#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace emrkg {

enum class Errc {
  // corpus
  MalformedLine,
  OffsetOutOfBounds,
  SurfaceMismatch,
  UnknownLabel,
  UnsplittableEntity,
  OverlapAfterValidation,
  MalformedBio,
  TooFewSentences,
  InvalidEncoding,
  // tagger
  EmptySentence,
  InvalidGoldTag,
  EmptyTrainSet,
  DivergedLoss,
  // metrics
  LengthMismatch,
  // kb
  ParseError,
  UnknownRelationType,
  // fusion
  EmptyDocument,
  EmptyCatalog,
  DanglingAlignment,
  // graph
  LabelUnknown,
  DanglingEndpoint,
  RelationTypeMismatch,
  // shared
  IoError,
  SchemaVersionMismatch,
  ConfigError,
  InvalidArgument,
};

constexpr std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::MalformedLine: return "MalformedLine";
    case Errc::OffsetOutOfBounds: return "OffsetOutOfBounds";
    case Errc::SurfaceMismatch: return "SurfaceMismatch";
    case Errc::UnknownLabel: return "UnknownLabel";
    case Errc::UnsplittableEntity: return "UnsplittableEntity";
    case Errc::OverlapAfterValidation: return "OverlapAfterValidation";
    case Errc::MalformedBio: return "MalformedBio";
    case Errc::TooFewSentences: return "TooFewSentences";
    case Errc::InvalidEncoding: return "InvalidEncoding";
    case Errc::EmptySentence: return "EmptySentence";
    case Errc::InvalidGoldTag: return "InvalidGoldTag";
    case Errc::EmptyTrainSet: return "EmptyTrainSet";
    case Errc::DivergedLoss: return "DivergedLoss";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::ParseError: return "ParseError";
    case Errc::UnknownRelationType: return "UnknownRelationType";
    case Errc::EmptyDocument: return "EmptyDocument";
    case Errc::EmptyCatalog: return "EmptyCatalog";
    case Errc::DanglingAlignment: return "DanglingAlignment";
    case Errc::LabelUnknown: return "LabelUnknown";
    case Errc::DanglingEndpoint: return "DanglingEndpoint";
    case Errc::RelationTypeMismatch: return "RelationTypeMismatch";
    case Errc::IoError: return "IoError";
    case Errc::SchemaVersionMismatch: return "SchemaVersionMismatch";
    case Errc::ConfigError: return "ConfigError";
    case Errc::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

/// Library-wide exception. what() reads "<module>: <Kind>: <detail>".
class Error : public std::runtime_error {
 public:
  Error(Errc code, std::string_view module, const std::string& detail)
      : std::runtime_error(std::string(module) + ": " + std::string(errc_name(code)) + ": " +
                           detail),
        code_(code),
        module_(module) {}

  Errc code() const noexcept { return code_; }
  const std::string& module() const noexcept { return module_; }

 private:
  Errc code_;
  std::string module_;
};

}  // namespace emrkg
