#include "lively/config.hpp"

#include "json_fields.hpp"
#include "lively/error.hpp"

#include <fstream>

namespace lively {

using nlohmann::json;
using detail::FieldReader;

namespace {

json optimizer_json(const nn::OptimizerConfig& o) {
  return {{"kind", o.kind == nn::OptimizerKind::AdamW ? "adamw" : "adam"},
          {"lr", o.lr},
          {"beta1", o.beta1},
          {"beta2", o.beta2},
          {"eps", o.eps},
          {"weight_decay", o.weight_decay}};
}

nn::OptimizerConfig optimizer_from(const json& j, nn::OptimizerConfig o, const std::string& section) {
  FieldReader r(j, section);
  std::string kind = o.kind == nn::OptimizerKind::AdamW ? "adamw" : "adam";
  r.get("kind", kind);
  r.get("lr", o.lr);
  r.get("beta1", o.beta1);
  r.get("beta2", o.beta2);
  r.get("eps", o.eps);
  r.get("weight_decay", o.weight_decay);
  r.finish();
  if (kind == "adam")
    o.kind = nn::OptimizerKind::Adam;
  else if (kind == "adamw")
    o.kind = nn::OptimizerKind::AdamW;
  else
    fail(Errc::BadConfig, section + ".kind must be adam or adamw");
  require(o.lr > 0 && o.eps > 0 && o.beta1 >= 0 && o.beta1 < 1 && o.beta2 >= 0 && o.beta2 < 1 && o.weight_decay >= 0,
          Errc::BadConfig, "bad optimizer settings in " + section);
  return o;
}

template <class Opts>
json train_json(const Opts& o) {
  return {{"epochs", o.epochs},
          {"batch_size", o.batch_size},
          {"optimizer", optimizer_json(o.optimizer)},
          {"final_lr_fraction", o.final_lr_fraction},
          {"grad_clip", o.grad_clip}};
}

template <class Opts>
Opts train_from(const json& j, Opts o, const std::string& section) {
  FieldReader r(j, section);
  r.get("epochs", o.epochs);
  r.get("batch_size", o.batch_size);
  r.get("final_lr_fraction", o.final_lr_fraction);
  r.get("grad_clip", o.grad_clip);
  json opt = json::object();
  r.get("optimizer", opt);
  r.finish();
  o.optimizer = optimizer_from(opt, o.optimizer, section + ".optimizer");
  require(o.epochs >= 0 && o.batch_size >= 1, Errc::BadConfig, section + ": epochs >= 0 and batch_size >= 1 required");
  require(o.final_lr_fraction >= 0 && o.grad_clip >= 0, Errc::BadConfig, section + ": bad lr fraction or clip");
  return o;
}

json rag_json(const rag::RagConfig& c) {
  return {{"frames", c.frames},           {"pose_dims", c.pose_dims},         {"latent_dim", c.latent_dim},
          {"n_blocks", c.n_blocks},       {"audio_channels", c.audio_channels}, {"audio_strides", c.audio_strides},
          {"audio_kernel", c.audio_kernel}, {"sample_rate", c.sample_rate},   {"fps", c.fps},
          {"n_speakers", c.n_speakers},   {"speaker_dim", c.speaker_dim},     {"style_dim", c.style_dim},
          {"p_uncond", c.p_uncond},       {"p_seed", c.p_seed},               {"leaky_slope", c.leaky_slope},     {"per_block_temb", c.per_block_temb},
          {"skip_sigma", c.skip_sigma},
          {"huber_delta", c.huber_delta}, {"kl_weight", c.kl_weight},         {"vel_weight", c.vel_weight}};
}

rag::RagConfig rag_from(const json& j, rag::RagConfig c) {
  FieldReader r(j, "rag");
  r.get("frames", c.frames);
  r.get("pose_dims", c.pose_dims);
  r.get("latent_dim", c.latent_dim);
  r.get("n_blocks", c.n_blocks);
  r.get("audio_channels", c.audio_channels);
  r.get("audio_strides", c.audio_strides);
  r.get("audio_kernel", c.audio_kernel);
  r.get("sample_rate", c.sample_rate);
  r.get("fps", c.fps);
  r.get("n_speakers", c.n_speakers);
  r.get("speaker_dim", c.speaker_dim);
  r.get("style_dim", c.style_dim);
  r.get("p_uncond", c.p_uncond);
  r.get("p_seed", c.p_seed);
  r.get("leaky_slope", c.leaky_slope);
  r.get("per_block_temb", c.per_block_temb);
  r.get("skip_sigma", c.skip_sigma);
  r.get("huber_delta", c.huber_delta);
  r.get("kl_weight", c.kl_weight);
  r.get("vel_weight", c.vel_weight);
  r.finish();
  return c;
}

json sag_json(const sag::SagConfig& c) {
  return {{"frames", c.frames},         {"pose_dims", c.pose_dims},   {"d_model", c.d_model},
          {"ff_dim", c.ff_dim},         {"enc_layers", c.enc_layers}, {"dec_layers", c.dec_layers},
          {"heads", c.heads},           {"latent_dim", c.latent_dim}, {"lambda_cos", c.lambda_cos}};
}

sag::SagConfig sag_from(const json& j, sag::SagConfig c) {
  FieldReader r(j, "sag");
  r.get("frames", c.frames);
  r.get("pose_dims", c.pose_dims);
  r.get("d_model", c.d_model);
  r.get("ff_dim", c.ff_dim);
  r.get("enc_layers", c.enc_layers);
  r.get("dec_layers", c.dec_layers);
  r.get("heads", c.heads);
  r.get("latent_dim", c.latent_dim);
  r.get("lambda_cos", c.lambda_cos);
  r.finish();
  return c;
}

json ae_json(const metrics::FeatureAeConfig& c) {
  return {{"frames", c.frames},       {"pose_dims", c.pose_dims}, {"hidden", c.hidden},
          {"latent", c.latent},       {"pool_bins", c.pool_bins}, {"decoder_hidden", c.decoder_hidden},
          {"leaky_slope", c.leaky_slope}};
}

metrics::FeatureAeConfig ae_from(const json& j, metrics::FeatureAeConfig c) {
  FieldReader r(j, "metrics.ae");
  r.get("frames", c.frames);
  r.get("pose_dims", c.pose_dims);
  r.get("hidden", c.hidden);
  r.get("latent", c.latent);
  r.get("pool_bins", c.pool_bins);
  r.get("decoder_hidden", c.decoder_hidden);
  r.get("leaky_slope", c.leaky_slope);
  r.finish();
  return c;
}

}  // namespace

diffusion::NoiseSchedule DiffusionSettings::make_schedule() const {
  if (schedule == "linear") return diffusion::make_linear_schedule(steps, beta_start, beta_end);
  if (schedule == "cosine") return diffusion::make_cosine_schedule(steps);
  fail(Errc::BadConfig, "diffusion.schedule must be linear or cosine");
}

RunConfig RunConfig::defaults() {
  RunConfig c;
  c.rag.latent_dim = 256;
  c.rag.audio_channels = {16, 32, 64, 128};
  c.sag.d_model = 128;
  c.sag.ff_dim = 256;
  c.sag.enc_layers = 2;
  c.sag.dec_layers = 2;
  c.sag.heads = 4;
  c.train_rag.epochs = 40;
  c.train_rag.batch_size = 8;
  c.train_sag.epochs = 60;
  c.train_sag.optimizer.lr = 1e-3;
  c.train_ae.epochs = 30;
  return c;
}

void RunConfig::validate() const {
  data.validate();
  rag.validate();
  sag.validate();
  metrics.ae.validate();
  require(diffusion.steps >= 1 && diffusion.ddim_steps >= 1 && diffusion.ddim_steps <= diffusion.steps,
          Errc::BadConfig, "diffusion.ddim_steps must lie in [1, diffusion.steps]");
  require(diffusion.steps % diffusion.ddim_steps == 0, Errc::BadConfig, "diffusion.ddim_steps must divide steps");
  require(diffusion.eta >= 0 && diffusion.w >= 0, Errc::BadConfig, "diffusion.eta and diffusion.w must be >= 0");
  require(diffusion.K >= 0 && diffusion.K <= diffusion.ddim_steps, Errc::BadConfig, "diffusion.K must lie in [0, ddim_steps]");
  (void)diffusion.make_schedule();
  require(metrics.sigma_bc > 0 && metrics.n_pairs >= 1, Errc::BadConfig, "metrics.sigma_bc and n_pairs must be positive");
  const int dims = data.pose_dims();
  require(rag.frames == data.clip_len && sag.frames == data.clip_len && metrics.ae.frames == data.clip_len,
          Errc::BadConfig, "model frame counts must equal data.clip_len");
  require(rag.pose_dims == dims && sag.pose_dims == dims && metrics.ae.pose_dims == dims, Errc::BadConfig,
          "model pose_dims must equal the corpus channel count");
  require(rag.sample_rate == data.sample_rate && rag.fps == data.fps, Errc::BadConfig,
          "rag.sample_rate and rag.fps must match data");
  require(rag.n_speakers >= data.n_speakers, Errc::BadConfig, "rag.n_speakers must cover data.n_speakers");
}

json RunConfig::to_json() const {
  json j = {
      {"data", data.to_json()},
      {"rag", rag_json(rag)},
      {"sag", sag_json(sag)},
      {"diffusion",
       {{"schedule", diffusion.schedule},
        {"steps", diffusion.steps},
        {"beta_start", diffusion.beta_start},
        {"beta_end", diffusion.beta_end},
        {"ddim_steps", diffusion.ddim_steps},
        {"eta", diffusion.eta},
        {"w", diffusion.w},
        {"K", diffusion.K}}},
      {"metrics", {{"sigma_bc", metrics.sigma_bc}, {"n_pairs", metrics.n_pairs}, {"ae", ae_json(metrics.ae)}}},
      {"train", {{"rag", train_json(train_rag)}, {"sag", train_json(train_sag)}, {"ae", train_json(train_ae)}}},
  };
  j["seed"] = seed ? json(*seed) : json(nullptr);
  return j;
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c = defaults();
  FieldReader root(j, "");
  json data = json::object(), rag = json::object(), sag = json::object(), diff = json::object(), met = json::object(),
       train = json::object(), seed;
  root.get("data", data);
  root.get("rag", rag);
  root.get("sag", sag);
  root.get("diffusion", diff);
  root.get("metrics", met);
  root.get("train", train);
  root.get("seed", seed);
  root.finish();

  // data keeps its own defaults for missing keys.
  c.data = synth::SynthConfig::from_json(data);
  c.rag = rag_from(rag, c.rag);
  c.sag = sag_from(sag, c.sag);
  {
    FieldReader r(diff, "diffusion");
    r.get("schedule", c.diffusion.schedule);
    r.get("steps", c.diffusion.steps);
    r.get("beta_start", c.diffusion.beta_start);
    r.get("beta_end", c.diffusion.beta_end);
    r.get("ddim_steps", c.diffusion.ddim_steps);
    r.get("eta", c.diffusion.eta);
    r.get("w", c.diffusion.w);
    r.get("K", c.diffusion.K);
    r.finish();
  }
  {
    FieldReader r(met, "metrics");
    json ae = json::object();
    r.get("sigma_bc", c.metrics.sigma_bc);
    r.get("n_pairs", c.metrics.n_pairs);
    r.get("ae", ae);
    r.finish();
    c.metrics.ae = ae_from(ae, c.metrics.ae);
  }
  {
    FieldReader r(train, "train");
    json tr = json::object(), ts = json::object(), ta = json::object();
    r.get("rag", tr);
    r.get("sag", ts);
    r.get("ae", ta);
    r.finish();
    c.train_rag = train_from(tr, c.train_rag, "train.rag");
    c.train_sag = train_from(ts, c.train_sag, "train.sag");
    c.train_ae = train_from(ta, c.train_ae, "train.ae");
  }
  if (!seed.is_null()) {
    require(seed.is_number_unsigned() || (seed.is_number_integer() && seed.get<long long>() >= 0), Errc::BadConfig,
            "seed must be a non-negative integer");
    c.seed = seed.get<std::uint64_t>();
  }
  try {
    c.validate();
  } catch (const Error& e) {
    if (e.code() != Errc::BadConfig) fail(Errc::BadConfig, e.what());
    throw;
  }
  return c;
}

std::uint64_t RunConfig::require_seed() const {
  require(seed.has_value(), Errc::BadConfig, "a seed is required (set \"seed\" in the config or pass --seed)");
  return *seed;
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  require(eq != std::string::npos && eq > 0, Errc::BadConfig, "override must look like a.b.c=value: " + assignment);
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    require(!key.empty(), Errc::BadConfig, "empty path component in " + path);
    if (!node->is_object()) *node = json::object();
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

RunConfig load_run_config(const std::optional<std::filesystem::path>& file, const std::vector<std::string>& overrides) {
  json doc = json::object();
  if (file) {
    std::ifstream in(*file, std::ios::binary);
    require(static_cast<bool>(in), Errc::BadConfig, "cannot read config " + file->string());
    try {
      doc = json::parse(in);
    } catch (const json::exception& e) {
      fail(Errc::BadConfig, file->string() + ": " + e.what());
    }
  }
  for (const auto& o : overrides) apply_override(doc, o);
  return RunConfig::from_json(doc);
}

}  // namespace lively
