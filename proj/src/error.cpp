#include "lively/error.hpp"

namespace lively {

std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::DegenerateRotation: return "DegenerateRotation";
    case Errc::ClipTooShort: return "ClipTooShort";
    case Errc::LayoutMismatch: return "LayoutMismatch";
    case Errc::BadMagic: return "BadMagic";
    case Errc::VersionUnsupported: return "VersionUnsupported";
    case Errc::TruncatedFile: return "TruncatedFile";
    case Errc::UnsupportedWav: return "UnsupportedWav";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::BadIndex: return "BadIndex";
    case Errc::BadRange: return "BadRange";
    case Errc::StepOutOfRange: return "StepOutOfRange";
    case Errc::KOutOfRange: return "KOutOfRange";
    case Errc::EmptyBatch: return "EmptyBatch";
    case Errc::ZeroVector: return "ZeroVector";
    case Errc::BadCovariance: return "BadCovariance";
    case Errc::NoAudioBeats: return "NoAudioBeats";
    case Errc::BadConfig: return "BadConfig";
    case Errc::ManifestInvalid: return "ManifestInvalid";
    case Errc::BadAudioLength: return "BadAudioLength";
    case Errc::UnknownScript: return "UnknownScript";
    case Errc::Io: return "Io";
  }
  return "Unknown";
}

Error::Error(Errc code, const std::string& message)
    : std::runtime_error(std::string(errc_name(code)) + ": " + message), code_(code) {}

void fail(Errc code, const std::string& message) { throw Error(code, message); }

}  // namespace lively
