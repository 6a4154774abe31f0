#include "lively/corpus_io.hpp"

#include "lively/error.hpp"

#include <fstream>

namespace lively::synth {

namespace fs = std::filesystem;
using nlohmann::json;

void write_corpus(const fs::path& dir, const std::vector<SpeechSample>& samples, const SynthConfig& config) {
  std::error_code ec;
  fs::create_directories(dir / "poses", ec);
  fs::create_directories(dir / "audio", ec);
  require(!ec, Errc::Io, "cannot create " + dir.string());

  text::EmbeddingTable table;
  json entries = json::array();
  for (const auto& s : samples) {
    const std::string pose = "poses/" + s.id + ".lspk";
    const std::string wav = "audio/" + s.id + ".wav";
    motion::write_pose(dir / pose, s.poses);
    audio::write_wav(dir / wav, s.audio);
    const text::ScriptKey key = text::script_key(s.script);
    table.put(key, s.text_embedding);
    entries.push_back({{"id", s.id},
                       {"wav", wav},
                       {"pose", pose},
                       {"emb_key", text::key_hex(key)},
                       {"script", s.script},
                       {"speaker", s.speaker},
                       {"beats", s.beats},
                       {"motifs", s.motifs},
                       {"amplified", s.amplified}});
  }
  text::write_embeddings(dir / "embeddings.lsem", table);
  const json manifest = {{"version", kManifestVersion}, {"config", config.to_json()}, {"samples", entries}};
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  out << manifest.dump(1) << '\n';
  require(static_cast<bool>(out), Errc::Io, "cannot write manifest in " + dir.string());
}

CorpusSet read_corpus(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path, std::ios::binary);
  require(static_cast<bool>(in), Errc::ManifestInvalid, "missing " + manifest_path.string());
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::exception& e) {
    fail(Errc::ManifestInvalid, manifest_path.string() + ": " + e.what());
  }

  CorpusSet set;
  try {
    require(manifest.value("version", 0) == kManifestVersion, Errc::ManifestInvalid, "unsupported manifest version");
    set.config = SynthConfig::from_json(manifest.at("config"));
    const auto& entries = manifest.at("samples");
    require(entries.is_array(), Errc::ManifestInvalid, "samples must be an array");
    if (entries.empty()) return set;

    const fs::path emb_path = dir / "embeddings.lsem";
    require(fs::exists(emb_path), Errc::ManifestInvalid, "missing " + emb_path.string());
    const text::EmbeddingTable table = text::read_embeddings(emb_path);
    std::map<std::string, const std::vector<float>*> by_hex;
    for (const auto& [key, vec] : table.entries()) by_hex[text::key_hex(key)] = &vec;

    for (const auto& e : entries) {
      SpeechSample s;
      s.id = e.at("id").get<std::string>();
      const fs::path pose = dir / e.at("pose").get<std::string>();
      const fs::path wav = dir / e.at("wav").get<std::string>();
      require(fs::exists(pose), Errc::ManifestInvalid, "missing pose file " + pose.string());
      require(fs::exists(wav), Errc::ManifestInvalid, "missing audio file " + wav.string());
      s.poses = motion::read_pose(pose);
      s.audio = audio::load_wav(wav);
      s.script = e.at("script").get<std::string>();
      const std::string hex = e.at("emb_key").get<std::string>();
      require(hex == text::key_hex(text::script_key(s.script)), Errc::ManifestInvalid,
              "emb_key does not match script of " + s.id);
      auto it = by_hex.find(hex);
      require(it != by_hex.end(), Errc::ManifestInvalid, "no embedding for " + s.id);
      s.text_embedding = *it->second;
      s.speaker = e.at("speaker").get<int>();
      s.beats = e.at("beats").get<std::vector<double>>();
      s.motifs = e.at("motifs").get<std::vector<int>>();
      s.amplified = e.value("amplified", false);
      set.samples.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    fail(Errc::ManifestInvalid, manifest_path.string() + ": " + e.what());
  } catch (const Error& e) {
    if (e.code() == Errc::BadConfig) fail(Errc::ManifestInvalid, e.what());
    throw;
  }
  return set;
}

void write_splits(const fs::path& dir, const Corpus& corpus) {
  write_corpus(dir / "train", corpus.train, corpus.config);
  write_corpus(dir / "val", corpus.val, corpus.config);
}

}  // namespace lively::synth
