#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace pvu {

/// Machine-readable error categories. The CLI prints `error: <code>: <message>`.
enum class ErrorCode {
  InvalidArgument,
  EmptyInput,
  ShapeMismatch,
  OutOfView,
  ActorMismatch,
  GraphConsumed,
  Divergence,
  NoTargets,
  Io,
  Truncated,
  BadMagic,
  BadVersion,
  FlagMismatch,
  CrcMismatch,
  ConfigUnknownKey,
  ConfigMissingKey,
  ConfigBadValue,
  IncompatibleCheckpoint,
  EmptyDataset,
};

constexpr std::string_view to_string(ErrorCode c) {
  switch (c) {
    case ErrorCode::InvalidArgument: return "invalid_argument";
    case ErrorCode::EmptyInput: return "empty_input";
    case ErrorCode::ShapeMismatch: return "shape_mismatch";
    case ErrorCode::OutOfView: return "out_of_view";
    case ErrorCode::ActorMismatch: return "actor_mismatch";
    case ErrorCode::GraphConsumed: return "graph_consumed";
    case ErrorCode::Divergence: return "divergence";
    case ErrorCode::NoTargets: return "no_targets";
    case ErrorCode::Io: return "io";
    case ErrorCode::Truncated: return "truncated";
    case ErrorCode::BadMagic: return "bad_magic";
    case ErrorCode::BadVersion: return "bad_version";
    case ErrorCode::FlagMismatch: return "flag_mismatch";
    case ErrorCode::CrcMismatch: return "crc_mismatch";
    case ErrorCode::ConfigUnknownKey: return "config_unknown_key";
    case ErrorCode::ConfigMissingKey: return "config_missing_key";
    case ErrorCode::ConfigBadValue: return "config_bad_value";
    case ErrorCode::IncompatibleCheckpoint: return "incompatible_checkpoint";
    case ErrorCode::EmptyDataset: return "empty_dataset";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

}  // namespace pvu
