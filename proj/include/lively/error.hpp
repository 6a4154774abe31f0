#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace lively {

enum class Errc {
  DegenerateRotation,
  ClipTooShort,
  LayoutMismatch,
  BadMagic,
  VersionUnsupported,
  TruncatedFile,
  UnsupportedWav,
  ShapeMismatch,
  BadIndex,
  BadRange,
  StepOutOfRange,
  KOutOfRange,
  EmptyBatch,
  ZeroVector,
  BadCovariance,
  NoAudioBeats,
  BadConfig,
  ManifestInvalid,
  BadAudioLength,
  UnknownScript,
  Io,
};

std::string_view errc_name(Errc code);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message);

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] void fail(Errc code, const std::string& message);

inline void require(bool condition, Errc code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace lively
