// experiment.hpp — experiment configuration, run manifests, and the named
// commands behind the CLI. Every command writes a manifest that embeds the
// full effective config and the content hashes of everything it read and
// wrote, and can be re-executed from that manifest alone.
#pragma once

#include <map>
#include <string>

#include "json.hpp"
#include "motionlab/evalsuite.hpp"
#include "motionlab/generator.hpp"

namespace mlab {

struct DataConfig {
  uint64_t seed = 1;
  int n_train = 1500, n_val = 100, n_test = 600;
  int min_primitives = 1, max_primitives = 3;
  int min_segment_frames = 16, max_segment_frames = 40;
  int max_total_frames = 96;
  int frame_multiple = 4;
  int min_count = 1, max_count = 3;
  bool vary_intensity = true;
  int upsample_factor = 1;  // 1, 2 or 4: resample rendered motion
  std::vector<std::string> primitives;  // empty = all

  DifficultySpec difficulty() const;
  uint64_t hash() const;
};

struct EvalSettings {
  int n_generate = 620;
  int pool_size = 8;
  int min_frechet_samples = 500;
  int diversity_pairs = 300;
  double guidance_scale = 2.0;
  uint64_t seed = 1234;
};

struct ExperimentConfig {
  int schema_version = 1;
  uint64_t seed = 1;
  DataConfig data;
  TokenizerConfig tokenizer;
  GeneratorConfig generator;
  EvaluatorConfig evaluator;
  EvalSettings eval;

  nlohmann::json to_json() const;
  // Strict: unknown keys, wrong types and out-of-range values are rejected
  // with the offending field path.
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::string& path);
  uint64_t hash() const;
};

// Desk-scale defaults tuned for a single CPU core.
ExperimentConfig desk_config(Scenario scenario = Scenario::kDiscrete);

// ---- artifact layout ----

std::string artifacts_root();  // $MOTIONLAB_ARTIFACTS or ./artifacts
struct DatasetPaths {
  std::string train, val, test;
};
DatasetPaths dataset_paths(const std::string& root, const DataConfig& cfg);
std::string evaluator_path(const std::string& root, const ExperimentConfig& cfg);

struct RunPaths {
  std::string dir;
  std::string manifest;
};
RunPaths run_paths(const std::string& root, const std::string& run_id);

// ---- commands (each returns its manifest path) ----

std::string cmd_build_data(const ExperimentConfig& cfg, const std::string& root,
                           std::string run_id = "");
std::string cmd_train_evaluator(const ExperimentConfig& cfg, const std::string& root,
                                std::string run_id = "");
// Trains per cfg.tokenizer; writes runs/<id>/tokenizer.bin (+ sidecar).
std::string cmd_train_tokenizer(const ExperimentConfig& cfg, const std::string& root,
                                std::string run_id = "");
std::string cmd_train_generator(const ExperimentConfig& cfg, const std::string& root,
                                const std::string& tokenizer_ckpt, std::string run_id = "");

struct GenerateArgs {
  std::string prompt;
  uint64_t seed = 0;
  double scale = -1.0;  // <0 = config default
  int max_frames = 196;
  std::string out;       // motion JSON path
  std::string csv;       // optional CSV path
};
std::string cmd_generate(const ExperimentConfig& cfg, const std::string& root,
                         const std::string& tokenizer_ckpt, const std::string& generator_ckpt,
                         const GenerateArgs& args, std::string run_id = "");

// Generates eval.n_generate clips from test prompts and scores them against
// the test split; also reports tokenizer-side MPJPE/ACC. Deterministic given
// artifacts + seed; metrics JSON bytes are reproducible.
std::string cmd_evaluate(const ExperimentConfig& cfg, const std::string& root,
                         const std::string& tokenizer_ckpt, const std::string& generator_ckpt,
                         std::string run_id = "", MetricReport* out_report = nullptr,
                         double guidance_override = -1.0);

std::string cmd_tokenize(const ExperimentConfig& cfg, const std::string& root,
                         const std::string& tokenizer_ckpt, const std::string& motion_json,
                         const std::string& out_tokens, std::string run_id = "");
std::string cmd_detokenize(const ExperimentConfig& cfg, const std::string& root,
                           const std::string& tokenizer_ckpt, const std::string& tokens_path,
                           const std::string& out_motion_json, std::string run_id = "");

std::string cmd_probe_manifold(const ExperimentConfig& cfg, const std::string& root,
                               std::string run_id = "");
std::string cmd_probe_density(const ExperimentConfig& cfg, const std::string& root,
                              std::string run_id = "");
std::string cmd_sweep(const ExperimentConfig& cfg, const std::string& root,
                      const std::string& which, std::string run_id = "");
std::string cmd_bench(const ExperimentConfig& cfg, const std::string& root,
                      const std::string& tokenizer_ckpt, const std::string& generator_ckpt,
                      std::string run_id = "");
// Re-executes the command recorded in a manifest.
std::string cmd_rerun(const std::string& manifest_path, const std::string& root);

// Masked-caption inspection: predictions for one dataset record as JSON.
std::string inspect_masked_text(const ExperimentConfig& cfg, const std::string& root,
                                const std::string& tokenizer_ckpt, int record_index,
                                uint64_t seed, int top_k);

// ---- idempotent stage helpers (used by sweeps, probes and the acceptance
// suite). Each builds its artifact only when absent and returns its path. ----
DatasetPaths ensure_dataset(const ExperimentConfig& cfg, const std::string& root);
std::string ensure_evaluator(const ExperimentConfig& cfg, const std::string& root);
std::string ensure_tokenizer(const ExperimentConfig& cfg, const std::string& root,
                             const std::string& run_id);
std::string ensure_generator(const ExperimentConfig& cfg, const std::string& root,
                             const std::string& tokenizer_ckpt, const std::string& run_id);
DatasetSplits load_dataset(const ExperimentConfig& cfg, const std::string& root);

// motion <-> file helpers shared by CLI and tests
Tensor load_motion_json(const std::string& path);
void save_motion_json(const Tensor& frames, const std::string& path);
void save_motion_csv(const Tensor& frames, const std::string& path);

// token/latent container with header {scenario, lengths, stride ratios}
void save_token_file(const std::string& path, const DualCodes& codes, Scenario sc,
                     int exec_stride, int reason_stride);
DualCodes load_token_file(const std::string& path, Scenario expected_sc, int* exec_stride = nullptr,
                          int* reason_stride = nullptr);

}  // namespace mlab
