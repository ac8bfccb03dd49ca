#include "motionlab/experiment.hpp"

#include <chrono>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace mlab {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------- config (de)serialization ----------------

namespace {

void require_keys(const json& j, const std::string& path,
                  const std::set<std::string>& allowed) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key()))
      throw ConfigError("config: unknown key '" + path + it.key() + "'");
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config: bad type for '") + key + "'");
  }
}

void check_in(const char* field, int v, std::initializer_list<int> allowed) {
  for (int a : allowed)
    if (v == a) return;
  std::string s;
  for (int a : allowed) s += std::to_string(a) + " ";
  throw ConfigError(format("config: %s=%d not in {%s}", field, v, s.c_str()));
}

void check_pos(const char* field, double v) {
  if (!(v > 0)) throw ConfigError(format("config: %s must be positive", field));
}

std::string iso_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

}  // namespace

DifficultySpec DataConfig::difficulty() const {
  DifficultySpec d;
  if (primitives.empty()) {
    d = DifficultySpec::standard();
  } else {
    for (const auto& name : primitives) d.allowed.push_back(primitive_from_name(name));
  }
  d.min_primitives = min_primitives;
  d.max_primitives = max_primitives;
  d.min_segment_frames = min_segment_frames;
  d.max_segment_frames = max_segment_frames;
  d.max_total_frames = max_total_frames;
  d.frame_multiple = frame_multiple;
  d.min_count = min_count;
  d.max_count = max_count;
  d.vary_intensity = vary_intensity;
  return d;
}

uint64_t DataConfig::hash() const {
  json j;
  j["seed"] = seed;
  j["n"] = {n_train, n_val, n_test};
  j["prims"] = {min_primitives, max_primitives};
  j["seg"] = {min_segment_frames, max_segment_frames, max_total_frames, frame_multiple};
  j["count"] = {min_count, max_count};
  j["intensity"] = vary_intensity;
  j["upsample"] = upsample_factor;
  j["allowed"] = primitives;
  return fnv1a(j.dump());
}

json ExperimentConfig::to_json() const {
  json j;
  j["schema_version"] = schema_version;
  j["seed"] = seed;
  j["scenario"] = scenario_name(tokenizer.scenario);
  j["data"] = {{"seed", data.seed},
               {"n_train", data.n_train},
               {"n_val", data.n_val},
               {"n_test", data.n_test},
               {"min_primitives", data.min_primitives},
               {"max_primitives", data.max_primitives},
               {"min_segment_frames", data.min_segment_frames},
               {"max_segment_frames", data.max_segment_frames},
               {"max_total_frames", data.max_total_frames},
               {"frame_multiple", data.frame_multiple},
               {"min_count", data.min_count},
               {"max_count", data.max_count},
               {"vary_intensity", data.vary_intensity},
               {"upsample_factor", data.upsample_factor},
               {"primitives", data.primitives}};
  const auto& t = tokenizer;
  j["tokenizer"] = {{"feature_dim", t.feature_dim},
                    {"enc_channels", t.enc_channels},
                    {"exec_stride", t.exec_stride},
                    {"reason_stride", t.reason_stride},
                    {"codebook_exec", t.codebook_exec},
                    {"codebook_res", t.codebook_res},
                    {"latent_dim_res", t.latent_dim_res},
                    {"reason_layers", t.reason_layers},
                    {"reason_heads", t.reason_heads},
                    {"reason_hidden", t.reason_hidden},
                    {"reason_ff", t.reason_ff},
                    {"variational_reasoning", t.variational_reasoning},
                    {"kl_weight", t.kl_weight},
                    {"commitment_beta", t.commitment_beta},
                    {"ema_decay", t.ema_decay},
                    {"revival_steps", t.revival_steps},
                    {"rec_weight", t.rec_weight},
                    {"lambda_align", t.lambda_align},
                    {"lambda_mtp", t.lambda_mtp},
                    {"mask_ratio", t.mask_ratio},
                    {"strategy", strategy_name(t.strategy)},
                    {"steps_stage1", t.steps_stage1},
                    {"steps_stage2", t.steps_stage2},
                    {"batch", t.batch},
                    {"lr", t.lr},
                    {"warmup", t.warmup},
                    {"weight_decay", t.weight_decay},
                    {"text_pretrain_steps", t.text_pretrain_steps},
                    {"text_embed_dim", t.text.embed_dim},
                    {"text_layers", t.text.layers},
                    {"text_heads", t.text.heads},
                    {"text_ff", t.text.ff},
                    {"mtp_layers", t.mtp.layers},
                    {"mtp_heads", t.mtp.heads},
                    {"mtp_hidden", t.mtp.hidden},
                    {"mtp_ff", t.mtp.ff},
                    {"mtp_dropout", t.mtp.dropout}};
  const auto& g = generator;
  j["generator"] = {{"layers", g.layers},
                    {"heads", g.heads},
                    {"hidden", g.hidden},
                    {"ff", g.ff},
                    {"max_len", g.max_len},
                    {"max_prefix", g.max_prefix},
                    {"cond_dropout", g.cond_dropout},
                    {"use_reasoning", g.use_reasoning},
                    {"diffusion_steps", g.diffusion_steps},
                    {"beta_min", g.beta_min},
                    {"beta_max", g.beta_max},
                    {"mlp_layers", g.mlp_layers},
                    {"mlp_hidden", g.mlp_hidden},
                    {"temperature", g.temperature},
                    {"top_k", g.top_k},
                    {"diffusion_sample_stride", g.diffusion_sample_stride},
                    {"steps", g.steps},
                    {"batch", g.batch},
                    {"lr", g.lr},
                    {"warmup", g.warmup},
                    {"weight_decay", g.weight_decay}};
  j["evaluator"] = {{"feature_dim", evaluator.feature_dim},
                    {"train_steps", evaluator.train_steps},
                    {"batch", evaluator.batch},
                    {"lr", evaluator.lr},
                    {"seed", evaluator.seed}};
  j["eval"] = {{"n_generate", eval.n_generate},
               {"pool_size", eval.pool_size},
               {"min_frechet_samples", eval.min_frechet_samples},
               {"diversity_pairs", eval.diversity_pairs},
               {"guidance_scale", eval.guidance_scale},
               {"seed", eval.seed}};
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  require_keys(j, "", {"schema_version", "seed", "scenario", "data", "tokenizer", "generator",
                       "evaluator", "eval"});
  ExperimentConfig c;
  if (!j.contains("schema_version")) throw ConfigError("config: missing schema_version");
  c.schema_version = j.at("schema_version").get<int>();
  if (c.schema_version != 1)
    throw ConfigError(format("config: unsupported schema_version %d", c.schema_version));
  c.seed = get_or<uint64_t>(j, "seed", 1);
  Scenario sc = scenario_from_string(get_or<std::string>(j, "scenario", "discrete"));
  c.tokenizer.scenario = sc;
  c.generator.scenario = sc;

  if (j.contains("data")) {
    const json& d = j.at("data");
    require_keys(d, "data.",
                 {"seed", "n_train", "n_val", "n_test", "min_primitives", "max_primitives",
                  "min_segment_frames", "max_segment_frames", "max_total_frames",
                  "frame_multiple", "min_count", "max_count", "vary_intensity",
                  "upsample_factor", "primitives"});
    auto& dc = c.data;
    dc.seed = get_or<uint64_t>(d, "seed", dc.seed);
    dc.n_train = get_or<int>(d, "n_train", dc.n_train);
    dc.n_val = get_or<int>(d, "n_val", dc.n_val);
    dc.n_test = get_or<int>(d, "n_test", dc.n_test);
    dc.min_primitives = get_or<int>(d, "min_primitives", dc.min_primitives);
    dc.max_primitives = get_or<int>(d, "max_primitives", dc.max_primitives);
    dc.min_segment_frames = get_or<int>(d, "min_segment_frames", dc.min_segment_frames);
    dc.max_segment_frames = get_or<int>(d, "max_segment_frames", dc.max_segment_frames);
    dc.max_total_frames = get_or<int>(d, "max_total_frames", dc.max_total_frames);
    dc.frame_multiple = get_or<int>(d, "frame_multiple", dc.frame_multiple);
    dc.min_count = get_or<int>(d, "min_count", dc.min_count);
    dc.max_count = get_or<int>(d, "max_count", dc.max_count);
    dc.vary_intensity = get_or<bool>(d, "vary_intensity", dc.vary_intensity);
    dc.upsample_factor = get_or<int>(d, "upsample_factor", dc.upsample_factor);
    dc.primitives = get_or<std::vector<std::string>>(d, "primitives", {});
    check_pos("data.n_train", dc.n_train);
    check_pos("data.n_val", dc.n_val);
    check_pos("data.n_test", dc.n_test);
    check_in("data.frame_multiple", dc.frame_multiple, {4, 8, 16});
    check_in("data.upsample_factor", dc.upsample_factor, {1, 2, 4});
    for (const auto& p : dc.primitives) primitive_from_name(p);  // validates
  }
  if (j.contains("tokenizer")) {
    const json& d = j.at("tokenizer");
    require_keys(d, "tokenizer.",
                 {"feature_dim", "enc_channels", "exec_stride", "reason_stride", "codebook_exec",
                  "codebook_res", "latent_dim_res", "reason_layers", "reason_heads",
                  "reason_hidden", "reason_ff", "variational_reasoning", "kl_weight",
                  "commitment_beta", "ema_decay", "revival_steps", "rec_weight", "lambda_align",
                  "lambda_mtp", "mask_ratio", "strategy", "steps_stage1", "steps_stage2", "batch",
                  "lr", "warmup", "weight_decay", "text_pretrain_steps", "text_embed_dim",
                  "text_layers", "text_heads", "text_ff", "mtp_layers", "mtp_heads", "mtp_hidden",
                  "mtp_ff", "mtp_dropout"});
    auto& t = c.tokenizer;
    t.feature_dim = get_or<int>(d, "feature_dim", t.feature_dim);
    t.enc_channels = get_or<int>(d, "enc_channels", t.enc_channels);
    t.exec_stride = get_or<int>(d, "exec_stride", t.exec_stride);
    t.reason_stride = get_or<int>(d, "reason_stride", t.reason_stride);
    t.codebook_exec = get_or<int>(d, "codebook_exec", t.codebook_exec);
    t.codebook_res = get_or<int>(d, "codebook_res", t.codebook_res);
    t.latent_dim_res = get_or<int>(d, "latent_dim_res", t.latent_dim_res);
    t.reason_layers = get_or<int>(d, "reason_layers", t.reason_layers);
    t.reason_heads = get_or<int>(d, "reason_heads", t.reason_heads);
    t.reason_hidden = get_or<int>(d, "reason_hidden", t.reason_hidden);
    t.reason_ff = get_or<int>(d, "reason_ff", t.reason_ff);
    t.variational_reasoning = get_or<bool>(d, "variational_reasoning", t.variational_reasoning);
    t.kl_weight = get_or<double>(d, "kl_weight", t.kl_weight);
    t.commitment_beta = get_or<double>(d, "commitment_beta", t.commitment_beta);
    t.ema_decay = get_or<double>(d, "ema_decay", t.ema_decay);
    t.revival_steps = get_or<int>(d, "revival_steps", t.revival_steps);
    t.rec_weight = get_or<double>(d, "rec_weight", t.rec_weight);
    t.lambda_align = get_or<double>(d, "lambda_align", t.lambda_align);
    t.lambda_mtp = get_or<double>(d, "lambda_mtp", t.lambda_mtp);
    t.mask_ratio = get_or<double>(d, "mask_ratio", t.mask_ratio);
    t.strategy = strategy_from_string(get_or<std::string>(d, "strategy", "two-stage-freeze"));
    t.steps_stage1 = get_or<int>(d, "steps_stage1", t.steps_stage1);
    t.steps_stage2 = get_or<int>(d, "steps_stage2", t.steps_stage2);
    t.batch = get_or<int>(d, "batch", t.batch);
    t.lr = get_or<double>(d, "lr", t.lr);
    t.warmup = get_or<int>(d, "warmup", t.warmup);
    t.weight_decay = get_or<double>(d, "weight_decay", t.weight_decay);
    t.text_pretrain_steps = get_or<int>(d, "text_pretrain_steps", t.text_pretrain_steps);
    t.text.embed_dim = get_or<int>(d, "text_embed_dim", t.text.embed_dim);
    t.text.layers = get_or<int>(d, "text_layers", t.text.layers);
    t.text.heads = get_or<int>(d, "text_heads", t.text.heads);
    t.text.ff = get_or<int>(d, "text_ff", t.text.ff);
    t.mtp.layers = get_or<int>(d, "mtp_layers", t.mtp.layers);
    t.mtp.heads = get_or<int>(d, "mtp_heads", t.mtp.heads);
    t.mtp.hidden = get_or<int>(d, "mtp_hidden", t.mtp.hidden);
    t.mtp.ff = get_or<int>(d, "mtp_ff", t.mtp.ff);
    t.mtp.dropout = get_or<double>(d, "mtp_dropout", t.mtp.dropout);
    check_in("tokenizer.exec_stride", t.exec_stride, {1, 2, 4});
    check_in("tokenizer.reason_stride", t.reason_stride, {2, 4, 8});
    check_pos("tokenizer.codebook_exec", t.codebook_exec);
    check_pos("tokenizer.codebook_res", t.codebook_res);
    if (t.lambda_align < 0 || t.lambda_mtp < 0 || t.rec_weight < 0 || t.kl_weight < 0 ||
        t.commitment_beta < 0)
      throw ConfigError("config: tokenizer loss weights must be >= 0");
  }
  if (j.contains("generator")) {
    const json& d = j.at("generator");
    require_keys(d, "generator.",
                 {"layers", "heads", "hidden", "ff", "max_len", "max_prefix", "cond_dropout",
                  "use_reasoning", "diffusion_steps", "beta_min", "beta_max", "mlp_layers",
                  "mlp_hidden", "temperature", "top_k", "diffusion_sample_stride", "steps",
                  "batch", "lr", "warmup", "weight_decay"});
    auto& g = c.generator;
    g.layers = get_or<int>(d, "layers", g.layers);
    g.heads = get_or<int>(d, "heads", g.heads);
    g.hidden = get_or<int>(d, "hidden", g.hidden);
    g.ff = get_or<int>(d, "ff", g.ff);
    g.max_len = get_or<int>(d, "max_len", g.max_len);
    g.max_prefix = get_or<int>(d, "max_prefix", g.max_prefix);
    g.cond_dropout = get_or<double>(d, "cond_dropout", g.cond_dropout);
    g.use_reasoning = get_or<bool>(d, "use_reasoning", g.use_reasoning);
    g.diffusion_steps = get_or<int>(d, "diffusion_steps", g.diffusion_steps);
    g.beta_min = get_or<double>(d, "beta_min", g.beta_min);
    g.beta_max = get_or<double>(d, "beta_max", g.beta_max);
    g.mlp_layers = get_or<int>(d, "mlp_layers", g.mlp_layers);
    g.mlp_hidden = get_or<int>(d, "mlp_hidden", g.mlp_hidden);
    g.temperature = get_or<double>(d, "temperature", g.temperature);
    g.top_k = get_or<int>(d, "top_k", g.top_k);
    g.diffusion_sample_stride = get_or<int>(d, "diffusion_sample_stride", 1);
    g.steps = get_or<int>(d, "steps", g.steps);
    g.batch = get_or<int>(d, "batch", g.batch);
    g.lr = get_or<double>(d, "lr", g.lr);
    g.warmup = get_or<int>(d, "warmup", g.warmup);
    g.weight_decay = get_or<double>(d, "weight_decay", g.weight_decay);
    if (g.hidden % g.heads != 0) throw ConfigError("config: generator.hidden % heads != 0");
    check_pos("generator.steps", g.steps);
  }
  if (j.contains("evaluator")) {
    const json& d = j.at("evaluator");
    require_keys(d, "evaluator.", {"feature_dim", "train_steps", "batch", "lr", "seed"});
    auto& e = c.evaluator;
    e.feature_dim = get_or<int>(d, "feature_dim", e.feature_dim);
    e.train_steps = get_or<int>(d, "train_steps", e.train_steps);
    e.batch = get_or<int>(d, "batch", e.batch);
    e.lr = get_or<double>(d, "lr", e.lr);
    e.seed = get_or<uint64_t>(d, "seed", e.seed);
  }
  if (j.contains("eval")) {
    const json& d = j.at("eval");
    require_keys(d, "eval.",
                 {"n_generate", "pool_size", "min_frechet_samples", "diversity_pairs",
                  "guidance_scale", "seed"});
    auto& e = c.eval;
    e.n_generate = get_or<int>(d, "n_generate", e.n_generate);
    e.pool_size = get_or<int>(d, "pool_size", e.pool_size);
    e.min_frechet_samples = get_or<int>(d, "min_frechet_samples", e.min_frechet_samples);
    e.diversity_pairs = get_or<int>(d, "diversity_pairs", e.diversity_pairs);
    e.guidance_scale = get_or<double>(d, "guidance_scale", e.guidance_scale);
    e.seed = get_or<uint64_t>(d, "seed", e.seed);
  }
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("config: cannot open " + path);
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    throw ConfigError("config: parse error in " + path + ": " + e.what());
  }
  return from_json(j);
}

uint64_t ExperimentConfig::hash() const { return fnv1a(to_json().dump()); }

// Sizes tuned so every training command finishes in minutes on one CPU core;
// structural choices (strides, codebook sizes, loss weights, schedule shape)
// follow the full-scale recipe.
ExperimentConfig desk_config(Scenario scenario) {
  ExperimentConfig c;
  c.data.n_train = 1200;
  c.data.n_val = 100;
  c.data.n_test = 600;
  c.data.max_primitives = 3;
  c.data.min_segment_frames = 16;
  c.data.max_segment_frames = 36;
  c.data.max_total_frames = 80;

  c.tokenizer.scenario = scenario;
  c.tokenizer.steps_stage1 = 600;
  c.tokenizer.steps_stage2 = 420;
  c.tokenizer.batch = 16;
  c.tokenizer.lr = 1e-3;
  c.tokenizer.warmup = 30;
  c.tokenizer.text_pretrain_steps = 300;

  c.generator.scenario = scenario;
  c.generator.layers = 3;
  c.generator.heads = 4;
  c.generator.hidden = 128;
  c.generator.ff = 384;
  c.generator.mlp_hidden = 128;
  c.generator.steps = 700;
  c.generator.batch = 8;
  c.generator.lr = 5e-4;
  c.generator.warmup = 40;

  c.evaluator.train_steps = 600;

  if (scenario == Scenario::kContinuous) {
    c.eval.guidance_scale = 5.0;
    c.generator.diffusion_sample_stride = 2;
  }
  return c;
}

// ---------------- artifact layout ----------------

std::string artifacts_root() {
  const char* env = std::getenv("MOTIONLAB_ARTIFACTS");
  return env && *env ? env : "artifacts";
}

DatasetPaths dataset_paths(const std::string& root, const DataConfig& cfg) {
  const std::string base = root + "/data/" + hash_hex(cfg.hash());
  return {base + "-train.bin", base + "-val.bin", base + "-test.bin"};
}

std::string evaluator_path(const std::string& root, const ExperimentConfig& cfg) {
  json j;
  j["data"] = hash_hex(cfg.data.hash());
  j["feature_dim"] = cfg.evaluator.feature_dim;
  j["train_steps"] = cfg.evaluator.train_steps;
  j["batch"] = cfg.evaluator.batch;
  j["lr"] = cfg.evaluator.lr;
  j["seed"] = cfg.evaluator.seed;
  return root + "/evaluators/" + hash_hex(fnv1a(j.dump())) + ".bin";
}

RunPaths run_paths(const std::string& root, const std::string& run_id) {
  RunPaths p;
  p.dir = root + "/runs/" + run_id;
  p.manifest = p.dir + "/manifest.json";
  return p;
}

namespace {

std::string derive_run_id(const std::string& cmd, const ExperimentConfig& cfg) {
  return cmd + "-" + hash_hex(cfg.hash()).substr(0, 10);
}

void write_text(const std::string& path, const std::string& content) {
  fs::create_directories(fs::path(path).parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  f << content;
}

struct ManifestBuilder {
  json j;
  std::string dir;

  ManifestBuilder(const std::string& cmd, const std::string& run_id,
                  const ExperimentConfig& cfg, const std::string& root) {
    j["schema_version"] = 1;
    j["command"] = cmd;
    j["run_id"] = run_id;
    j["started_utc"] = iso_now();
    j["config"] = cfg.to_json();
    j["seeds"] = {{"master", cfg.seed}, {"data", cfg.data.seed}, {"eval", cfg.eval.seed}};
    j["inputs"] = json::object();
    j["outputs"] = json::object();
    j["args"] = json::object();
    j["flags"] = json::object();
    dir = run_paths(root, run_id).dir;
  }

  void input(const std::string& name, const std::string& path) {
    j["inputs"][name] = {{"path", path}, {"hash", hash_hex(file_hash(path))}};
  }
  void output(const std::string& name, const std::string& path) {
    j["outputs"][name] = {{"path", path}, {"hash", hash_hex(file_hash(path))}};
  }
  void arg(const std::string& name, const json& v) { j["args"][name] = v; }
  void flag(const std::string& name, const json& v) { j["flags"][name] = v; }

  std::string write() {
    j["finished_utc"] = iso_now();
    const std::string path = dir + "/manifest.json";
    write_text(path, j.dump(2) + "\n");
    return path;
  }
};

DatasetFile upsampled_copy(const DatasetFile& in, int factor) {
  if (factor == 1) return in;
  DatasetFile out = in;
  for (auto& rec : out.records) rec.motion = upsample_motion(rec.motion, factor);
  return out;
}

void require_file(const std::string& path, const std::string& producer) {
  if (!fs::exists(path))
    throw IoError("missing prerequisite artifact '" + path + "'; produce it with `" + producer +
                  "` first");
}

}  // namespace

DatasetSplits load_dataset(const ExperimentConfig& cfg, const std::string& root) {
  DatasetPaths p = dataset_paths(root, cfg.data);
  require_file(p.train, "motionlab build-data");
  DatasetSplits s;
  s.train = DatasetFile::load(p.train);
  s.val = DatasetFile::load(p.val);
  s.test = DatasetFile::load(p.test);
  return s;
}

std::string cmd_build_data(const ExperimentConfig& cfg, const std::string& root,
                           std::string run_id) {
  if (run_id.empty()) run_id = derive_run_id("build-data", cfg);
  ManifestBuilder m("build-data", run_id, cfg, root);
  DatasetPaths p = dataset_paths(root, cfg.data);
  fs::create_directories(fs::path(p.train).parent_path());
  DatasetSplits s = build_dataset(cfg.data.seed, cfg.data.n_train, cfg.data.n_val, cfg.data.n_test,
                                  cfg.data.difficulty());
  if (cfg.data.upsample_factor != 1) {
    s.train = upsampled_copy(s.train, cfg.data.upsample_factor);
    s.val = upsampled_copy(s.val, cfg.data.upsample_factor);
    s.test = upsampled_copy(s.test, cfg.data.upsample_factor);
  }
  s.train.save(p.train);
  s.val.save(p.val);
  s.test.save(p.test);
  m.output("train", p.train);
  m.output("val", p.val);
  m.output("test", p.test);
  m.flag("n_records", cfg.data.n_train + cfg.data.n_val + cfg.data.n_test);
  return m.write();
}

DatasetPaths ensure_dataset(const ExperimentConfig& cfg, const std::string& root) {
  DatasetPaths p = dataset_paths(root, cfg.data);
  if (!fs::exists(p.train) || !fs::exists(p.val) || !fs::exists(p.test))
    cmd_build_data(cfg, root);
  return p;
}

std::string cmd_train_evaluator(const ExperimentConfig& cfg, const std::string& root,
                                std::string run_id) {
  if (run_id.empty()) run_id = derive_run_id("train-evaluator", cfg);
  ManifestBuilder m("train-evaluator", run_id, cfg, root);
  DatasetPaths p = dataset_paths(root, cfg.data);
  require_file(p.train, "motionlab build-data");
  m.input("train", p.train);
  DatasetFile train = DatasetFile::load(p.train);
  EvaluatorModel ev(cfg.evaluator, cfg.seed);
  const double loss = ev.train(train);
  const std::string out = evaluator_path(root, cfg);
  fs::create_directories(fs::path(out).parent_path());
  ev.save(out);
  m.output("evaluator", out);
  m.flag("final_loss", loss);
  return m.write();
}

std::string ensure_evaluator(const ExperimentConfig& cfg, const std::string& root) {
  const std::string path = evaluator_path(root, cfg);
  if (!fs::exists(path)) {
    ensure_dataset(cfg, root);
    cmd_train_evaluator(cfg, root);
  }
  return path;
}

std::string cmd_train_tokenizer(const ExperimentConfig& cfg, const std::string& root,
                                std::string run_id) {
  if (run_id.empty()) run_id = derive_run_id("train-tokenizer", cfg);
  ManifestBuilder m("train-tokenizer", run_id, cfg, root);
  DatasetPaths p = dataset_paths(root, cfg.data);
  require_file(p.train, "motionlab build-data");
  m.input("train", p.train);
  m.input("val", p.val);
  DatasetSplits data = load_dataset(cfg, root);
  TokenizerConfig tc = cfg.tokenizer;
  tc.seed = cfg.seed;
  DualTokenizer tok(tc, cfg.seed);
  TokenizerTrainReport rep = train_tokenizer(tok, data);
  RunPaths rp = run_paths(root, run_id);
  fs::create_directories(rp.dir);
  const std::string ckpt = rp.dir + "/tokenizer.bin";
  tok.save(ckpt);
  write_text(rp.dir + "/tokenizer_losses.csv", rep.loss_csv);
  json metrics;
  metrics["val_mpjpe"] = rep.val_mpjpe;
  metrics["perplexity_exec"] = rep.perplexity_exec;
  metrics["perplexity_res"] = rep.perplexity_res;
  metrics["mtp_acc"] = rep.mtp_acc;
  metrics["reasoning_r1"] = rep.reasoning_r1;
  metrics["exec_hash_after_stage1"] = hash_hex(rep.exec_hash_after_stage1);
  metrics["exec_hash_after_stage2"] = hash_hex(rep.exec_hash_after_stage2);
  metrics["revivals"] = rep.revivals;
  write_text(rp.dir + "/tokenizer_metrics.json", metrics.dump(2) + "\n");
  m.output("checkpoint", ckpt);
  m.output("losses_csv", rp.dir + "/tokenizer_losses.csv");
  m.output("metrics", rp.dir + "/tokenizer_metrics.json");
  m.flag("frozen_exec_bit_exact", rep.exec_hash_after_stage1 == rep.exec_hash_after_stage2);
  return m.write();
}

std::string ensure_tokenizer(const ExperimentConfig& cfg, const std::string& root,
                             const std::string& run_id) {
  RunPaths rp = run_paths(root, run_id);
  const std::string ckpt = rp.dir + "/tokenizer.bin";
  if (!fs::exists(ckpt) || !fs::exists(rp.manifest)) {
    ensure_dataset(cfg, root);
    cmd_train_tokenizer(cfg, root, run_id);
  }
  return ckpt;
}

std::string cmd_train_generator(const ExperimentConfig& cfg, const std::string& root,
                                const std::string& tokenizer_ckpt, std::string run_id) {
  if (run_id.empty()) run_id = derive_run_id("train-generator", cfg);
  ManifestBuilder m("train-generator", run_id, cfg, root);
  require_file(tokenizer_ckpt, "motionlab train-tokenizer");
  DatasetPaths p = dataset_paths(root, cfg.data);
  require_file(p.train, "motionlab build-data");
  m.input("train", p.train);
  m.input("tokenizer", tokenizer_ckpt);
  m.arg("tokenizer", tokenizer_ckpt);
  DatasetSplits data = load_dataset(cfg, root);
  DualTokenizer tok = DualTokenizer::load(tokenizer_ckpt);
  GeneratorConfig gc = cfg.generator;
  gc.seed = cfg.seed;
  LmrGenerator gen(gc, tok.config(), cfg.seed);
  GeneratorTrainReport rep = train_generator(gen, tok, data);
  RunPaths rp = run_paths(root, run_id);
  fs::create_directories(rp.dir);
  const std::string ckpt = rp.dir + "/generator.bin";
  gen.save(ckpt);
  write_text(rp.dir + "/generator_losses.csv", rep.loss_csv);
  m.output("checkpoint", ckpt);
  m.output("losses_csv", rp.dir + "/generator_losses.csv");
  m.flag("final_loss", rep.final_loss);
  return m.write();
}

std::string ensure_generator(const ExperimentConfig& cfg, const std::string& root,
                             const std::string& tokenizer_ckpt, const std::string& run_id) {
  RunPaths rp = run_paths(root, run_id);
  const std::string ckpt = rp.dir + "/generator.bin";
  if (!fs::exists(ckpt) || !fs::exists(rp.manifest))
    cmd_train_generator(cfg, root, tokenizer_ckpt, run_id);
  return ckpt;
}

// ---------------- motion & token files ----------------

Tensor load_motion_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open motion file " + path);
  json j = json::parse(f);
  const auto& fr = j.at("frames");
  const int T = int(fr.size());
  if (T == 0) throw IoError("motion file has no frames: " + path);
  Tensor out({T, kMotionDim});
  for (int t = 0; t < T; ++t) {
    if (int(fr[size_t(t)].size()) != kMotionDim)
      throw IoError(format("motion file row %d has %d values, expected %d", t,
                           int(fr[size_t(t)].size()), kMotionDim));
    for (int c = 0; c < kMotionDim; ++c) out.at(t, c) = fr[size_t(t)][size_t(c)].get<float>();
  }
  return out;
}

void save_motion_json(const Tensor& frames, const std::string& path) {
  json j;
  j["fps"] = 20;
  j["joints"] = kJoints;
  json rows = json::array();
  for (int t = 0; t < frames.dim(0); ++t) {
    json row = json::array();
    for (int c = 0; c < kMotionDim; ++c) row.push_back(frames.at(t, c));
    rows.push_back(row);
  }
  j["frames"] = rows;
  write_text(path, j.dump() + "\n");
}

void save_motion_csv(const Tensor& frames, const std::string& path) {
  std::ostringstream ss;
  ss << "frame,joint,x,y\n";
  for (int t = 0; t < frames.dim(0); ++t)
    for (int jn = 0; jn < kJoints; ++jn)
      ss << t << "," << jn << "," << frames.at(t, 2 * jn) << "," << frames.at(t, 2 * jn + 1)
         << "\n";
  write_text(path, ss.str());
}

void save_token_file(const std::string& path, const DualCodes& codes, Scenario sc,
                     int exec_stride, int reason_stride) {
  std::vector<char> buf;
  auto put = [&](const void* p, size_t n) {
    buf.insert(buf.end(), static_cast<const char*>(p), static_cast<const char*>(p) + n);
  };
  put("MLABTOK1", 8);
  const uint8_t sc8 = sc == Scenario::kDiscrete ? 0 : 1;
  put(&sc8, 1);
  const uint32_t es = uint32_t(exec_stride), rs = uint32_t(reason_stride);
  put(&es, 4);
  put(&rs, 4);
  if (sc == Scenario::kDiscrete) {
    const uint32_t nr = uint32_t(codes.ids_res.size()), ne = uint32_t(codes.ids_exec.size());
    put(&nr, 4);
    put(&ne, 4);
    for (int id : codes.ids_res) {
      int32_t v = id;
      put(&v, 4);
    }
    for (int id : codes.ids_exec) {
      int32_t v = id;
      put(&v, 4);
    }
  } else {
    const uint32_t nr = uint32_t(codes.u_res.rows()), dr = uint32_t(codes.u_res.cols());
    const uint32_t ne = uint32_t(codes.u_exec.rows()), de = uint32_t(codes.u_exec.cols());
    put(&nr, 4);
    put(&dr, 4);
    put(&ne, 4);
    put(&de, 4);
    put(codes.u_res.data.data(), codes.u_res.data.size() * 4);
    put(codes.u_exec.data.data(), codes.u_exec.data.size() * 4);
  }
  const uint64_t sum = fnv1a(buf.data(), buf.size());
  put(&sum, 8);
  fs::create_directories(fs::path(path).parent_path().empty() ? "." : fs::path(path).parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write token file " + path);
  f.write(buf.data(), long(buf.size()));
}

DualCodes load_token_file(const std::string& path, Scenario expected_sc, int* exec_stride,
                          int* reason_stride) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open token file " + path);
  std::vector<char> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (buf.size() < 29) throw IoError("token file truncated: " + path);
  uint64_t stored;
  std::memcpy(&stored, buf.data() + buf.size() - 8, 8);
  if (fnv1a(buf.data(), buf.size() - 8) != stored)
    throw IoError("token file checksum mismatch: " + path);
  size_t pos = 0;
  auto take = [&](void* p, size_t n) {
    if (pos + n > buf.size()) throw IoError("token file truncated: " + path);
    std::memcpy(p, buf.data() + pos, n);
    pos += n;
  };
  char magic[8];
  take(magic, 8);
  if (std::memcmp(magic, "MLABTOK1", 8) != 0) throw IoError("token file bad magic: " + path);
  uint8_t sc8;
  take(&sc8, 1);
  const Scenario sc = sc8 == 0 ? Scenario::kDiscrete : Scenario::kContinuous;
  if (sc != expected_sc)
    throw IoError("token file scenario does not match the tokenizer: " + path);
  uint32_t es, rs;
  take(&es, 4);
  take(&rs, 4);
  if (exec_stride) *exec_stride = int(es);
  if (reason_stride) *reason_stride = int(rs);
  DualCodes out;
  if (sc == Scenario::kDiscrete) {
    uint32_t nr, ne;
    take(&nr, 4);
    take(&ne, 4);
    out.ids_res.resize(nr);
    for (auto& id : out.ids_res) {
      int32_t v;
      take(&v, 4);
      id = v;
    }
    out.ids_exec.resize(ne);
    for (auto& id : out.ids_exec) {
      int32_t v;
      take(&v, 4);
      id = v;
    }
  } else {
    uint32_t nr, dr, ne, de;
    take(&nr, 4);
    take(&dr, 4);
    take(&ne, 4);
    take(&de, 4);
    out.u_res = Tensor({int(nr), int(dr)});
    out.u_exec = Tensor({int(ne), int(de)});
    take(out.u_res.data.data(), out.u_res.data.size() * 4);
    take(out.u_exec.data.data(), out.u_exec.data.size() * 4);
  }
  return out;
}

std::string cmd_tokenize(const ExperimentConfig& cfg, const std::string& root,
                         const std::string& tokenizer_ckpt, const std::string& motion_json,
                         const std::string& out_tokens, std::string run_id) {
  if (run_id.empty()) run_id = derive_run_id("tokenize", cfg);
  ManifestBuilder m("tokenize", run_id, cfg, root);
  require_file(tokenizer_ckpt, "motionlab train-tokenizer");
  require_file(motion_json, "save a motion JSON (e.g. motionlab generate)");
  m.input("tokenizer", tokenizer_ckpt);
  m.input("motion", motion_json);
  m.arg("motion", motion_json);
  m.arg("out", out_tokens);
  m.arg("tokenizer", tokenizer_ckpt);
  DualTokenizer tok = DualTokenizer::load(tokenizer_ckpt);
  Tensor frames = load_motion_json(motion_json);
  DualCodes codes = tok.tokenize(frames);
  save_token_file(out_tokens, codes, tok.config().scenario, tok.config().exec_stride,
                  tok.config().reason_stride);
  m.output("tokens", out_tokens);
  return m.write();
}

std::string cmd_detokenize(const ExperimentConfig& cfg, const std::string& root,
                           const std::string& tokenizer_ckpt, const std::string& tokens_path,
                           const std::string& out_motion_json, std::string run_id) {
  if (run_id.empty()) run_id = derive_run_id("detokenize", cfg);
  ManifestBuilder m("detokenize", run_id, cfg, root);
  require_file(tokenizer_ckpt, "motionlab train-tokenizer");
  require_file(tokens_path, "motionlab tokenize");
  m.input("tokenizer", tokenizer_ckpt);
  m.input("tokens", tokens_path);
  m.arg("tokens", tokens_path);
  m.arg("out", out_motion_json);
  m.arg("tokenizer", tokenizer_ckpt);
  DualTokenizer tok = DualTokenizer::load(tokenizer_ckpt);
  DualCodes codes = load_token_file(tokens_path, tok.config().scenario);
  Tensor frames = tok.config().scenario == Scenario::kDiscrete ? tok.decode_ids(codes.ids_exec)
                                                               : tok.decode_latents(codes.u_exec);
  save_motion_json(frames, out_motion_json);
  m.output("motion", out_motion_json);
  return m.write();
}

std::string cmd_generate(const ExperimentConfig& cfg, const std::string& root,
                         const std::string& tokenizer_ckpt, const std::string& generator_ckpt,
                         const GenerateArgs& args, std::string run_id) {
  if (run_id.empty()) run_id = derive_run_id("generate", cfg);
  ManifestBuilder m("generate", run_id, cfg, root);
  require_file(tokenizer_ckpt, "motionlab train-tokenizer");
  require_file(generator_ckpt, "motionlab train-generator");
  m.input("tokenizer", tokenizer_ckpt);
  m.input("generator", generator_ckpt);
  m.arg("tokenizer", tokenizer_ckpt);
  m.arg("generator", generator_ckpt);
  m.arg("prompt", args.prompt);
  m.arg("seed", args.seed);
  m.arg("scale", args.scale);
  m.arg("max_frames", args.max_frames);
  m.arg("out", args.out);
  m.arg("csv", args.csv);
  DualTokenizer tok = DualTokenizer::load(tokenizer_ckpt);
  LmrGenerator gen = LmrGenerator::load(generator_ckpt, tok.config());
  LmrGenerator::SampleRequest req;
  req.prompt_ids = Vocabulary::standard().tokenize(args.prompt);
  req.seed = args.seed;
  req.guidance_scale = args.scale >= 0 ? args.scale : cfg.eval.guidance_scale;
  req.max_frames = args.max_frames;
  GenerationResult r = gen.generate(tok, req);
  const std::string out = args.out.empty() ? run_paths(root, run_id).dir + "/motion.json"
                                           : args.out;
  save_motion_json(r.frames, out);
  m.output("motion", out);
  if (!args.csv.empty()) {
    save_motion_csv(r.frames, args.csv);
    m.output("motion_csv", args.csv);
  }
  m.flag("truncated", r.truncated);
  m.flag("tokens", r.tokens);
  m.flag("ms_per_token", r.ms_per_token);
  return m.write();
}

std::string cmd_evaluate(const ExperimentConfig& cfg, const std::string& root,
                         const std::string& tokenizer_ckpt, const std::string& generator_ckpt,
                         std::string run_id, MetricReport* out_report,
                         double guidance_override) {
  if (run_id.empty()) run_id = derive_run_id("evaluate", cfg);
  ManifestBuilder m("evaluate", run_id, cfg, root);
  require_file(tokenizer_ckpt, "motionlab train-tokenizer");
  require_file(generator_ckpt, "motionlab train-generator");
  DatasetPaths p = dataset_paths(root, cfg.data);
  require_file(p.test, "motionlab build-data");
  const std::string ev_path = evaluator_path(root, cfg);
  require_file(ev_path, "motionlab train-evaluator");
  m.input("tokenizer", tokenizer_ckpt);
  m.input("generator", generator_ckpt);
  m.input("evaluator", ev_path);
  m.input("test", p.test);
  m.arg("tokenizer", tokenizer_ckpt);
  m.arg("generator", generator_ckpt);
  m.arg("guidance_override", guidance_override);

  DualTokenizer tok = DualTokenizer::load(tokenizer_ckpt);
  LmrGenerator gen = LmrGenerator::load(generator_ckpt, tok.config());
  EvaluatorModel ev = EvaluatorModel::load(ev_path);
  DatasetFile test = DatasetFile::load(p.test);

  const double scale = guidance_override >= 0 ? guidance_override : cfg.eval.guidance_scale;
  const int n = cfg.eval.n_generate;
  std::vector<Tensor> gen_frames;
  std::vector<const Sample*> prompts;
  int truncated = 0;
  for (int i = 0; i < n; ++i) {
    const Sample& s = test.records[size_t(i) % test.records.size()];
    LmrGenerator::SampleRequest req;
    req.prompt_ids = s.prompt.ids;
    req.seed = mix_seed(cfg.eval.seed, uint64_t(i));
    req.guidance_scale = scale;
    req.max_frames = s.motion.length();
    GenerationResult r = gen.generate(tok, req);
    truncated += r.truncated ? 1 : 0;
    gen_frames.push_back(std::move(r.frames));
    prompts.push_back(&s);
  }
  MetricReport rep = evaluate_generation(ev, gen_frames, prompts, test, cfg.eval.pool_size,
                                         cfg.eval.min_frechet_samples, cfg.eval.diversity_pairs,
                                         cfg.eval.seed);
  rep.mpjpe = eval_mpjpe(tok, test, 128);
  rep.acc = eval_mtp_accuracy(tok, test, mix_seed(cfg.eval.seed, 77), 128);
  RunPaths rp = run_paths(root, run_id);
  fs::create_directories(rp.dir);
  write_text(rp.dir + "/metrics.json", rep.to_json() + "\n");
  m.output("metrics", rp.dir + "/metrics.json");
  m.flag("truncated_generations", truncated);
  m.flag("guidance_scale", scale);
  if (out_report) *out_report = rep;
  return m.write();
}

std::string inspect_masked_text(const ExperimentConfig& cfg, const std::string& root,
                                const std::string& tokenizer_ckpt, int record_index,
                                uint64_t seed, int top_k) {
  require_file(tokenizer_ckpt, "motionlab train-tokenizer");
  DatasetPaths p = dataset_paths(root, cfg.data);
  require_file(p.test, "motionlab build-data");
  DatasetFile test = DatasetFile::load(p.test);
  if (record_index < 0 || record_index >= int(test.records.size()))
    throw ConfigError(format("record index %d out of range", record_index));
  DualTokenizer tok = DualTokenizer::load(tokenizer_ckpt);
  const Sample& s = test.records[size_t(record_index)];
  RngStream rng(seed);
  MaskedPrompt masked = structured_mask(s.prompt, rng, tok.config().mask_ratio);
  const Vocabulary& v = Vocabulary::standard();
  json j;
  j["prompt"] = s.prompt.surface;
  j["no_candidates"] = masked.no_candidates;
  json preds = json::array();
  if (!masked.masked.empty()) {
    DualCodes codes = tok.tokenize(s.motion.frames);
    Tape t;
    Var logits = tok.mtp_decoder().logits_at_masks(t, masked, t.constant(codes.u_res));
    const Tensor& lv = logits.val();
    for (size_t i = 0; i < masked.masked.size(); ++i) {
      std::vector<std::pair<float, int>> ranked;
      for (int c = 0; c < lv.cols(); ++c) ranked.emplace_back(-lv.at(int(i), c), c);
      std::sort(ranked.begin(), ranked.end());
      json top = json::array();
      for (int k = 0; k < top_k && k < int(ranked.size()); ++k)
        top.push_back(v.word(ranked[size_t(k)].second));
      preds.push_back({{"position", masked.masked[i].first},
                       {"target", v.word(masked.masked[i].second)},
                       {"top_k", top}});
    }
  }
  j["predictions"] = preds;
  return j.dump(2);
}

// ---------------- probes ----------------

namespace {

// Pooled execution-code feature for a clip with a fraction of tokens dropped.
Tensor pooled_codes_after_drop(DualTokenizer& tok, const Tensor& frames, double rate,
                               RngStream& rng) {
  DualCodes codes = tok.tokenize(frames);
  const Tensor& u = codes.u_exec;
  Tensor pooled({u.cols()});
  int kept = 0;
  for (int i = 0; i < u.rows(); ++i) {
    if (rng.uniform() < rate) continue;
    for (int j = 0; j < u.cols(); ++j) pooled.data[size_t(j)] += u.at(i, j);
    ++kept;
  }
  if (kept > 0)
    for (auto& x : pooled.data) x /= float(kept);
  return pooled;  // zero vector when everything dropped
}

}  // namespace

std::string cmd_probe_manifold(const ExperimentConfig& cfg, const std::string& root,
                               std::string run_id) {
  if (run_id.empty()) run_id = derive_run_id("probe-manifold", cfg);
  ManifestBuilder m("probe-manifold", run_id, cfg, root);
  ensure_dataset(cfg, root);
  DatasetSplits data = load_dataset(cfg, root);

  // variant A: reconstruction only (stage 1 alone)
  ExperimentConfig rec_cfg = cfg;
  rec_cfg.tokenizer.steps_stage2 = 0;
  rec_cfg.tokenizer.lambda_align = 0;
  rec_cfg.tokenizer.lambda_mtp = 0;
  const std::string rec_path =
      ensure_tokenizer(rec_cfg, root, "manifold-rec-" + hash_hex(rec_cfg.hash()).substr(0, 8));
  // variant B: alignment only, end to end, no reconstruction
  ExperimentConfig align_cfg = cfg;
  align_cfg.tokenizer.strategy = TrainStrategy::kEndToEnd;
  align_cfg.tokenizer.rec_weight = 0.0;
  align_cfg.tokenizer.lambda_align = 1.0;
  align_cfg.tokenizer.lambda_mtp = 0.0;
  const std::string align_path =
      ensure_tokenizer(align_cfg, root, "manifold-align-" + hash_hex(align_cfg.hash()).substr(0, 8));
  // dual: the configured tokenizer
  const std::string dual_path =
      ensure_tokenizer(cfg, root, "manifold-dual-" + hash_hex(cfg.hash()).substr(0, 8));
  m.input("rec_tokenizer", rec_path);
  m.input("align_tokenizer", align_path);
  m.input("dual_tokenizer", dual_path);

  DualTokenizer rec_tok = DualTokenizer::load(rec_path);
  DualTokenizer align_tok = DualTokenizer::load(align_path);
  DualTokenizer dual_tok = DualTokenizer::load(dual_path);

  const DatasetFile& test = data.test;
  const int n = std::min<int>(240, int(test.records.size()));
  std::vector<int> sem_labels, kin_labels;
  auto pooled_exec = [](DualTokenizer& tk, const Tensor& frames) {
    DualCodes c = tk.tokenize(frames);
    const Tensor& u = c.u_exec;
    Tensor pooled({u.cols()});
    for (int i = 0; i < u.rows(); ++i)
      for (int j = 0; j < u.cols(); ++j) pooled.data[size_t(j)] += u.at(i, j);
    for (auto& x : pooled.data) x /= float(u.rows());
    return pooled;
  };
  Tensor rec_feats({n, cfg.tokenizer.feature_dim});
  Tensor align_feats({n, align_tok.config().align_dim()});
  Tensor dual_res_feats({n, dual_tok.config().align_dim()});
  Tensor dual_exec_feats({n, cfg.tokenizer.feature_dim});
  for (int i = 0; i < n; ++i) {
    const Sample& s = test.records[size_t(i)];
    sem_labels.push_back(semantic_label(s.script));
    kin_labels.push_back(kinematic_label(s.motion));
    Tensor a = pooled_exec(rec_tok, s.motion.frames);
    Tensor b = align_tok.pooled_reasoning(s.motion.frames);
    Tensor c = dual_tok.pooled_reasoning(s.motion.frames);
    Tensor d = pooled_exec(dual_tok, s.motion.frames);
    for (int j = 0; j < rec_feats.cols(); ++j) rec_feats.at(i, j) = a.data[size_t(j)];
    for (int j = 0; j < align_feats.cols(); ++j) align_feats.at(i, j) = b.data[size_t(j)];
    for (int j = 0; j < dual_res_feats.cols(); ++j) dual_res_feats.at(i, j) = c.data[size_t(j)];
    for (int j = 0; j < dual_exec_feats.cols(); ++j) dual_exec_feats.at(i, j) = d.data[size_t(j)];
  }

  std::ostringstream csv;
  csv << "probe,variant,x,y,seed\n";
  auto row = [&](const std::string& variant, const std::string& taxonomy, double score) {
    csv << "manifold," << variant << "," << taxonomy << "," << score << "," << cfg.eval.seed
        << "\n";
  };
  const double rec_sem = silhouette_score(rec_feats, sem_labels);
  const double rec_kin = silhouette_score(rec_feats, kin_labels);
  const double align_sem = silhouette_score(align_feats, sem_labels);
  const double align_kin = silhouette_score(align_feats, kin_labels);
  const double dual_res_sem = silhouette_score(dual_res_feats, sem_labels);
  const double dual_exec_kin = silhouette_score(dual_exec_feats, kin_labels);
  row("rec_only", "semantic", rec_sem);
  row("rec_only", "kinematic", rec_kin);
  row("align_only", "semantic", align_sem);
  row("align_only", "kinematic", align_kin);
  row("dual_reasoning", "semantic", dual_res_sem);
  row("dual_execution", "kinematic", dual_exec_kin);
  RunPaths rp = run_paths(root, run_id);
  fs::create_directories(rp.dir);
  write_text(rp.dir + "/manifold.csv", csv.str());
  json verdict;
  verdict["rec_prefers_kinematic"] = rec_kin > rec_sem;
  verdict["align_prefers_semantic"] = align_sem > align_kin;
  verdict["dual_reasoning_beats_rec_on_semantic"] = dual_res_sem > rec_sem;
  verdict["dual_execution_beats_align_on_kinematic"] = dual_exec_kin > align_kin;
  verdict["scores"] = {{"rec_sem", rec_sem},           {"rec_kin", rec_kin},
                       {"align_sem", align_sem},       {"align_kin", align_kin},
                       {"dual_res_sem", dual_res_sem}, {"dual_exec_kin", dual_exec_kin}};
  write_text(rp.dir + "/manifold_verdict.json", verdict.dump(2) + "\n");
  m.output("curves", rp.dir + "/manifold.csv");
  m.output("verdict", rp.dir + "/manifold_verdict.json");
  return m.write();
}

std::string cmd_probe_density(const ExperimentConfig& cfg, const std::string& root,
                              std::string run_id) {
  if (run_id.empty()) run_id = derive_run_id("probe-density", cfg);
  ManifestBuilder m("probe-density", run_id, cfg, root);
  ensure_dataset(cfg, root);
  DatasetSplits data = load_dataset(cfg, root);
  const std::string ev_path = ensure_evaluator(cfg, root);
  EvaluatorModel ev = EvaluatorModel::load(ev_path);

  // token-drop robustness: execution tokenizers at 1x and 4x compression
  ExperimentConfig hi_cfg = cfg;  // 1x (no temporal compression)
  hi_cfg.tokenizer.exec_stride = 1;
  hi_cfg.tokenizer.steps_stage2 = 0;
  ExperimentConfig lo_cfg = hi_cfg;  // 4x compression
  lo_cfg.tokenizer.exec_stride = 4;
  const std::string hi_path =
      ensure_tokenizer(hi_cfg, root, "density-1x-" + hash_hex(hi_cfg.hash()).substr(0, 8));
  const std::string lo_path =
      ensure_tokenizer(lo_cfg, root, "density-4x-" + hash_hex(lo_cfg.hash()).substr(0, 8));
  m.input("tokenizer_1x", hi_path);
  m.input("tokenizer_4x", lo_path);

  std::ostringstream csv;
  csv << "probe,variant,x,y,seed\n";
  const int n = std::min<int>(192, int(data.test.records.size()));
  for (const auto& [variant, path] : std::vector<std::pair<std::string, std::string>>{
           {"1x", hi_path}, {"4x", lo_path}}) {
    DualTokenizer tok = DualTokenizer::load(path);
    // small alignment projector: pooled codes -> evaluator text space
    ParamStore ps;
    RngStream rng(mix_seed(cfg.seed, fnv1a(variant)));
    nn::LinearT<float> proj(ps, "proj", tok.config().feature_dim, ev.config().feature_dim, rng);
    AdamW opt(ps.all());
    opt.schedule = {2e-3, 10, 300, 1e-4};
    RngStream sampler(mix_seed(cfg.seed, 0xD09ULL));
    const int ntr = int(data.train.records.size());
    for (int step = 0; step < 300; ++step) {
      Tape t;
      std::vector<Var> mrows, trows;
      for (int b = 0; b < 16; ++b) {
        const Sample& s = data.train.records[size_t(sampler.uniform_int(uint64_t(ntr)))];
        RngStream nodrop(1);
        Tensor pooled = pooled_codes_after_drop(const_cast<DualTokenizer&>(tok), s.motion.frames,
                                                0.0, nodrop);
        Var pv = ops::matmul(ops::reshape(t.constant(pooled), {1, pooled.cols()}), t.use(*proj.w));
        pv = ops::add(pv, t.use(*proj.b));
        mrows.push_back(ops::l2_normalize(ops::reshape(pv, {ev.config().feature_dim})));
        trows.push_back(t.constant(ev.text_features(s.prompt.ids)));
      }
      Var M = ops::stack_rows(mrows), T = ops::stack_rows(trows);
      Var logits = ops::scale(ops::matmul(M, ops::transpose(T)), 1.0 / 0.07);
      std::vector<int> diag;
      for (int i = 0; i < 16; ++i) diag.push_back(i);
      Var loss = ops::scale(
          ops::add(ops::cross_entropy(logits, diag), ops::cross_entropy(ops::transpose(logits), diag)),
          0.5);
      opt.zero_grad();
      t.backward(loss);
      opt.step();
    }
    // sweep drop rates
    for (double rate : {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 1.0}) {
      RngStream drop_rng(mix_seed(cfg.eval.seed, uint64_t(rate * 1000)));
      double cos_sum = 0.0;
      long top1 = 0;
      DualTokenizer tok_mut = DualTokenizer::load(path);
      std::vector<Tensor> pooled_feats;
      for (int i = 0; i < n; ++i) {
        const Sample& s = data.test.records[size_t(i)];
        Tensor pooled = pooled_codes_after_drop(tok_mut, s.motion.frames, rate, drop_rng);
        Tape t;
        Tensor pf;
        double norm = 0.0;
        {
          Var pv =
              ops::matmul(ops::reshape(t.constant(pooled), {1, pooled.cols()}), t.use(*proj.w));
          pv = ops::add(pv, t.use(*proj.b));
          pf = pv.val();
          for (float v : pf.data) norm += double(v) * double(v);
          norm = std::sqrt(std::max(norm, 1e-20));
        }
        for (auto& v : pf.data) v = float(double(v) / norm);
        pooled_feats.push_back(pf);
      }
      RngStream pool_rng(mix_seed(cfg.eval.seed, 4242));
      for (int i = 0; i < n; ++i) {
        const Sample& s = data.test.records[size_t(i)];
        Tensor w = ev.text_features(s.prompt.ids);
        double cosv = 0.0;
        for (size_t d2 = 0; d2 < w.data.size(); ++d2)
          cosv += double(w.data[d2]) * double(pooled_feats[size_t(i)].data[d2]);
        cos_sum += cosv;
        // retrieval among pool of 8
        int best = 0;
        double best_sim = -2.0;
        std::vector<int> cands = {i};
        while (int(cands.size()) < 8) {
          int jx = int(pool_rng.uniform_int(uint64_t(n)));
          if (jx != i && data.test.records[size_t(jx)].prompt.surface != s.prompt.surface)
            cands.push_back(jx);
        }
        for (size_t k = 0; k < cands.size(); ++k) {
          Tensor wc = ev.text_features(data.test.records[size_t(cands[k])].prompt.ids);
          double sim = 0.0;
          for (size_t d2 = 0; d2 < wc.data.size(); ++d2)
            sim += double(wc.data[d2]) * double(pooled_feats[size_t(i)].data[d2]);
          if (sim > best_sim) {
            best_sim = sim;
            best = int(k);
          }
        }
        if (best == 0) ++top1;
      }
      csv << "density_cosine," << variant << "," << rate << "," << cos_sum / n << ","
          << cfg.eval.seed << "\n";
      csv << "density_top1," << variant << "," << rate << "," << double(top1) / n << ","
          << cfg.eval.seed << "\n";
    }
  }
  RunPaths rp = run_paths(root, run_id);
  fs::create_directories(rp.dir);
  write_text(rp.dir + "/density.csv", csv.str());
  m.output("curves", rp.dir + "/density.csv");
  return m.write();
}

// ---------------- sweeps ----------------

namespace {

struct CellResult {
  std::string name;
  MetricReport report;
  json extra;
};

void append_sweep_csv(const std::string& path, const std::string& sweep,
                      const std::vector<CellResult>& cells) {
  const bool fresh = !fs::exists(path);
  fs::create_directories(fs::path(path).parent_path());
  std::ofstream f(path, std::ios::app);
  if (!f) throw IoError("cannot append to " + path);
  if (fresh)
    f << "sweep,cell,gfid,top1,top2,top3,mm_dist,diversity,mpjpe,acc,extra\n";
  for (const auto& c : cells) {
    f << sweep << "," << c.name << "," << c.report.frechet << "," << c.report.rp.top1 << ","
      << c.report.rp.top2 << "," << c.report.rp.top3 << "," << c.report.mm_dist << ","
      << c.report.diversity << "," << c.report.mpjpe << "," << c.report.acc << ","
      << (c.extra.empty() ? json(json::object()) : c.extra).dump() << "\n";
  }
}

}  // namespace

std::string cmd_sweep(const ExperimentConfig& cfg, const std::string& root,
                      const std::string& which, std::string run_id) {
  if (run_id.empty()) run_id = derive_run_id("sweep-" + which, cfg);
  ManifestBuilder m("sweep", run_id, cfg, root);
  m.arg("which", which);

  auto run_cell = [&](const std::string& cell, const ExperimentConfig& cc,
                      double guidance = -1.0) {
    const std::string tag = which + "-" + cell + "-" + hash_hex(cc.hash()).substr(0, 8);
    ensure_dataset(cc, root);
    ensure_evaluator(cc, root);
    const std::string tok_path = ensure_tokenizer(cc, root, "tok-" + tag);
    const std::string gen_path = ensure_generator(cc, root, tok_path, "gen-" + tag);
    MetricReport rep;
    cmd_evaluate(cc, root, tok_path, gen_path, "eval-" + tag, &rep, guidance);
    CellResult out;
    out.name = cell;
    out.report = rep;
    return out;
  };

  std::vector<CellResult> cells;
  if (which == "tokens") {
    // execution kept at full resolution, reasoning ratio swept
    for (int rs : {2, 4, 8}) {
      ExperimentConfig cc = cfg;
      cc.data.frame_multiple = std::max(cc.data.frame_multiple, 8);
      cc.tokenizer.exec_stride = 1;
      cc.tokenizer.reason_stride = rs;
      CellResult r = run_cell("reas_1_" + std::to_string(rs), cc);
      r.extra = {{"exec_stride", 1}, {"reason_stride", rs}};
      cells.push_back(r);
    }
  } else if (which == "training") {
    for (TrainStrategy st :
         {TrainStrategy::kEndToEnd, TrainStrategy::kTwoStageFreeze,
          TrainStrategy::kTwoStageFinetune, TrainStrategy::kIndependent}) {
      ExperimentConfig cc = cfg;
      cc.tokenizer.strategy = st;
      CellResult r = run_cell(strategy_name(st), cc);
      r.extra = {{"strategy", strategy_name(st)}};
      cells.push_back(r);
    }
  } else if (which == "losses") {
    for (const auto& [cell, la, lm] : std::vector<std::tuple<std::string, double, double>>{
             {"align_only", cfg.tokenizer.lambda_align, 0.0},
             {"mtp_only", 0.0, cfg.tokenizer.lambda_mtp},
             {"both", cfg.tokenizer.lambda_align, cfg.tokenizer.lambda_mtp}}) {
      ExperimentConfig cc = cfg;
      cc.tokenizer.lambda_align = la;
      cc.tokenizer.lambda_mtp = lm;
      CellResult r = run_cell(cell, cc);
      r.extra = {{"lambda_align", la}, {"lambda_mtp", lm}};
      cells.push_back(r);
    }
  } else if (which == "guidance") {
    // one model, evaluated across scales
    ensure_dataset(cfg, root);
    ensure_evaluator(cfg, root);
    const std::string tag = hash_hex(cfg.hash()).substr(0, 8);
    const std::string tok_path = ensure_tokenizer(cfg, root, "tok-guidance-" + tag);
    const std::string gen_path = ensure_generator(cfg, root, tok_path, "gen-guidance-" + tag);
    for (double s : {0.0, 1.0, 2.0, 3.0, 5.0, 7.0, 20.0}) {
      MetricReport rep;
      cmd_evaluate(cfg, root, tok_path, gen_path,
                   format("eval-guidance-%s-s%g", tag.c_str(), s), &rep, s);
      CellResult r;
      r.name = format("s%g", s);
      r.report = rep;
      r.extra = {{"scale", s}};
      cells.push_back(r);
    }
  } else if (which == "dual-vs-single") {
    {
      ExperimentConfig cc = cfg;
      cc.generator.use_reasoning = false;
      cc.tokenizer.steps_stage2 = 0;
      cells.push_back(run_cell("single_1x", cc));
    }
    {
      ExperimentConfig cc = cfg;
      cc.generator.use_reasoning = false;
      cc.tokenizer.steps_stage2 = 0;
      cc.tokenizer.exec_stride = 4;
      cells.push_back(run_cell("single_4x", cc));
    }
    cells.push_back(run_cell("dual", cfg));
  } else {
    throw ConfigError("unknown sweep: " + which +
                      " (expected tokens|training|losses|guidance|dual-vs-single)");
  }

  const std::string csv_path = root + "/sweeps/" + which + ".csv";
  append_sweep_csv(csv_path, which, cells);
  RunPaths rp = run_paths(root, run_id);
  fs::create_directories(rp.dir);
  json summary;
  for (const auto& c : cells)
    summary[c.name] = {{"gfid", c.report.frechet}, {"top1", c.report.rp.top1},
                       {"mpjpe", c.report.mpjpe}, {"acc", c.report.acc}};
  write_text(rp.dir + "/sweep_summary.json", summary.dump(2) + "\n");
  m.output("csv", csv_path);
  m.output("summary", rp.dir + "/sweep_summary.json");
  m.flag("cells", int(cells.size()));
  return m.write();
}

std::string cmd_bench(const ExperimentConfig& cfg, const std::string& root,
                      const std::string& tokenizer_ckpt, const std::string& generator_ckpt,
                      std::string run_id) {
  if (run_id.empty()) run_id = derive_run_id("bench", cfg);
  ManifestBuilder m("bench", run_id, cfg, root);
  require_file(tokenizer_ckpt, "motionlab train-tokenizer");
  require_file(generator_ckpt, "motionlab train-generator");
  m.input("tokenizer", tokenizer_ckpt);
  m.input("generator", generator_ckpt);
  m.arg("tokenizer", tokenizer_ckpt);
  m.arg("generator", generator_ckpt);
  DualTokenizer tok = DualTokenizer::load(tokenizer_ckpt);
  LmrGenerator gen = LmrGenerator::load(generator_ckpt, tok.config());
  std::ostringstream csv;
  csv << "tokens,cached_ms_per_token,uncached_ms_per_token,speedup,tokenizer_ms_per_frame\n";
  for (int target : {64, 128, 256}) {
    BenchRow row = bench_generation(gen, tok, target, cfg.eval.seed);
    csv << row.tokens << "," << row.cached_ms_per_token << "," << row.uncached_ms_per_token << ","
        << row.uncached_ms_per_token / std::max(1e-9, row.cached_ms_per_token) << ","
        << row.tokenizer_ms_per_frame << "\n";
  }
  RunPaths rp = run_paths(root, run_id);
  fs::create_directories(rp.dir);
  write_text(rp.dir + "/bench.csv", csv.str());
  m.output("csv", rp.dir + "/bench.csv");
  return m.write();
}

std::string cmd_rerun(const std::string& manifest_path, const std::string& root) {
  std::ifstream f(manifest_path);
  if (!f) throw IoError("cannot open manifest " + manifest_path);
  json j = json::parse(f);
  const std::string cmd = j.at("command").get<std::string>();
  ExperimentConfig cfg = ExperimentConfig::from_json(j.at("config"));
  const std::string run_id = j.at("run_id").get<std::string>();
  const json& args = j.value("args", json::object());
  auto arg_str = [&](const char* k) { return args.value(k, std::string()); };
  if (cmd == "build-data") return cmd_build_data(cfg, root, run_id);
  if (cmd == "train-evaluator") return cmd_train_evaluator(cfg, root, run_id);
  if (cmd == "train-tokenizer") return cmd_train_tokenizer(cfg, root, run_id);
  if (cmd == "train-generator")
    return cmd_train_generator(cfg, root, arg_str("tokenizer"), run_id);
  if (cmd == "generate") {
    GenerateArgs ga;
    ga.prompt = arg_str("prompt");
    ga.seed = args.value("seed", uint64_t(0));
    ga.scale = args.value("scale", -1.0);
    ga.max_frames = args.value("max_frames", 196);
    ga.out = arg_str("out");
    ga.csv = arg_str("csv");
    return cmd_generate(cfg, root, arg_str("tokenizer"), arg_str("generator"), ga, run_id);
  }
  if (cmd == "evaluate")
    return cmd_evaluate(cfg, root, arg_str("tokenizer"), arg_str("generator"), run_id, nullptr,
                        args.value("guidance_override", -1.0));
  if (cmd == "tokenize")
    return cmd_tokenize(cfg, root, arg_str("tokenizer"), arg_str("motion"), arg_str("out"),
                        run_id);
  if (cmd == "detokenize")
    return cmd_detokenize(cfg, root, arg_str("tokenizer"), arg_str("tokens"), arg_str("out"),
                          run_id);
  if (cmd == "probe-manifold") return cmd_probe_manifold(cfg, root, run_id);
  if (cmd == "probe-density") return cmd_probe_density(cfg, root, run_id);
  if (cmd == "sweep") return cmd_sweep(cfg, root, args.at("which").get<std::string>(), run_id);
  if (cmd == "bench")
    return cmd_bench(cfg, root, arg_str("tokenizer"), arg_str("generator"), run_id);
  throw ConfigError("rerun: unsupported command in manifest: " + cmd);
}

}  // namespace mlab
