#pragma once

#include "lively/synth.hpp"

#include <filesystem>
#include <vector>

namespace lively::synth {

inline constexpr int kManifestVersion = 1;

// dir/manifest.json, dir/poses/<id>.lspk, dir/audio/<id>.wav, dir/embeddings.lsem.
// The config is echoed into the manifest.
void write_corpus(const std::filesystem::path& dir, const std::vector<SpeechSample>& samples,
                  const SynthConfig& config);

struct CorpusSet {
  SynthConfig config;
  std::vector<SpeechSample> samples;
};

// Throws ManifestInvalid on a missing or malformed manifest or a missing referenced file.
CorpusSet read_corpus(const std::filesystem::path& dir);

// Writes dir/train and dir/val.
void write_splits(const std::filesystem::path& dir, const Corpus& corpus);

}  // namespace lively::synth
