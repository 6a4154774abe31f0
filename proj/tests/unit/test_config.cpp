#include "helpers.hpp"
#include "lively/config.hpp"

#include <fstream>

using namespace lively;
using nlohmann::json;

TEST_CASE("defaults validate and round trip") {
  const RunConfig c = RunConfig::defaults();
  CHECK_NOTHROW(c.validate());
  CHECK(c.rag.latent_dim == 256);
  CHECK(c.rag.n_blocks == 4);
  CHECK(c.train_rag.epochs <= 50);
  CHECK(RunConfig::from_json(c.to_json()).to_json() == c.to_json());
  CHECK_ERRC(c.require_seed(), Errc::BadConfig);
}

TEST_CASE("from_json rejects unknown keys and bad values") {
  json j = RunConfig::defaults().to_json();
  j["rag"]["latent_dims"] = 3;
  CHECK_ERRC(RunConfig::from_json(j), Errc::BadConfig);

  j = RunConfig::defaults().to_json();
  j["extra"] = true;
  CHECK_ERRC(RunConfig::from_json(j), Errc::BadConfig);

  j = RunConfig::defaults().to_json();
  j["diffusion"]["ddim_steps"] = 300;
  CHECK_ERRC(RunConfig::from_json(j), Errc::BadConfig);

  j = RunConfig::defaults().to_json();
  j["train"]["rag"]["optimizer"]["kind"] = "sgd";
  CHECK_ERRC(RunConfig::from_json(j), Errc::BadConfig);

  j = RunConfig::defaults().to_json();
  j["rag"]["latent_dim"] = "wide";
  CHECK_ERRC(RunConfig::from_json(j), Errc::BadConfig);

  j = RunConfig::defaults().to_json();
  j["sag"]["frames"] = 20;
  CHECK_ERRC(RunConfig::from_json(j), Errc::BadConfig);
}

TEST_CASE("partial documents keep defaults") {
  const RunConfig c = RunConfig::from_json(json{{"seed", 9}, {"diffusion", {{"w", 2.2}}}});
  CHECK(c.seed == 9u);
  CHECK(c.require_seed() == 9u);
  CHECK(c.diffusion.w == 2.2);
  CHECK(c.rag.latent_dim == RunConfig::defaults().rag.latent_dim);
}

TEST_CASE("overrides") {
  json j = json::object();
  apply_override(j, "diffusion.w=1.5");
  apply_override(j, "diffusion.schedule=cosine");
  apply_override(j, "rag.audio_channels=[4,8,16,16]");
  CHECK(j["diffusion"]["w"] == 1.5);
  CHECK(j["diffusion"]["schedule"] == "cosine");
  CHECK(j["rag"]["audio_channels"].size() == 4);
  CHECK_ERRC(apply_override(j, "no_equals_sign"), Errc::BadConfig);

  TempDir dir("config");
  std::ofstream(dir.path / "run.json") << R"({"seed": 4, "train": {"rag": {"epochs": 3}}})";
  const RunConfig c = load_run_config(dir.path / "run.json", {"train.rag.epochs=5", "seed=6"});
  CHECK(c.train_rag.epochs == 5);
  CHECK(c.seed == 6u);
  CHECK(c.diffusion.make_schedule().steps() == 1000);

  std::ofstream(dir.path / "broken.json") << "{";
  CHECK_ERRC(load_run_config(dir.path / "broken.json", {}), Errc::BadConfig);
}
