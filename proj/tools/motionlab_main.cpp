// motionlab — experiment CLI.
//
// Subcommands cover the whole pipeline: build-data, train-evaluator,
// train-tokenizer, train-generator, generate, evaluate, tokenize, detokenize,
// probe, sweep, bench, inspect-data, inspect-text, rerun, init-config.
// Artifacts land under --artifacts (or $MOTIONLAB_ARTIFACTS, default
// ./artifacts); every command writes a run manifest it can be re-run from.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "motionlab/experiment.hpp"

using namespace mlab;

namespace {

ExperimentConfig load_config_or_default(const std::string& path, const std::string& scenario) {
  ExperimentConfig cfg = path.empty()
                             ? desk_config(scenario_from_string(
                                   scenario.empty() ? "discrete" : scenario))
                             : ExperimentConfig::load(path);
  if (!path.empty() && !scenario.empty()) {
    Scenario sc = scenario_from_string(scenario);
    cfg.tokenizer.scenario = sc;
    cfg.generator.scenario = sc;
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"motion-language lab: dual-granularity tokenization and hierarchical generation"};
  app.require_subcommand(1);
  app.fallthrough();  // parent options may appear after the subcommand

  std::string artifacts = artifacts_root();
  app.add_option("--artifacts", artifacts, "artifact root directory")->capture_default_str();

  std::string config_path, scenario, run_id;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "experiment config JSON (default: desk preset)");
    sub->add_option("--scenario", scenario, "discrete|continuous (overrides config)");
    sub->add_option("--run-id", run_id, "run directory name (default: derived)");
  };

  auto* init = app.add_subcommand("init-config", "write the desk-scale default config");
  std::string init_out = "config.json";
  std::string init_scenario = "discrete";
  init->add_option("--out", init_out, "output path")->capture_default_str();
  init->add_option("--scenario", init_scenario, "discrete|continuous")->capture_default_str();

  auto* build = app.add_subcommand("build-data", "generate the dataset splits");
  add_common(build);

  auto* train_ev = app.add_subcommand("train-evaluator", "train the frozen metric evaluator");
  add_common(train_ev);

  auto* train_tok = app.add_subcommand("train-tokenizer", "train the dual tokenizer");
  add_common(train_tok);

  std::string tok_path, gen_path;
  auto* train_gen = app.add_subcommand("train-generator", "train the sequence generator");
  add_common(train_gen);
  train_gen->add_option("--tokenizer", tok_path, "tokenizer checkpoint")->required();

  auto* gen_cmd = app.add_subcommand("generate", "sample a motion for a prompt");
  add_common(gen_cmd);
  GenerateArgs gen_args;
  gen_cmd->add_option("--tokenizer", tok_path, "tokenizer checkpoint")->required();
  gen_cmd->add_option("--generator", gen_path, "generator checkpoint")->required();
  gen_cmd->add_option("--prompt", gen_args.prompt, "text prompt")->required();
  gen_cmd->add_option("--seed", gen_args.seed, "sampling seed");
  gen_cmd->add_option("--scale", gen_args.scale, "guidance scale (default: config)");
  gen_cmd->add_option("--max-frames", gen_args.max_frames, "frame budget");
  gen_cmd->add_option("--out", gen_args.out, "motion JSON output path");
  gen_cmd->add_option("--csv", gen_args.csv, "optional CSV output path");

  auto* eval_cmd = app.add_subcommand("evaluate", "generate from test prompts and score");
  add_common(eval_cmd);
  double guidance_override = -1.0;
  eval_cmd->add_option("--tokenizer", tok_path, "tokenizer checkpoint")->required();
  eval_cmd->add_option("--generator", gen_path, "generator checkpoint")->required();
  eval_cmd->add_option("--scale", guidance_override, "guidance scale override");

  std::string io_in, io_out;
  auto* tok_cmd = app.add_subcommand("tokenize", "motion JSON -> token file");
  add_common(tok_cmd);
  tok_cmd->add_option("--tokenizer", tok_path, "tokenizer checkpoint")->required();
  tok_cmd->add_option("--motion", io_in, "motion JSON input")->required();
  tok_cmd->add_option("--out", io_out, "token file output")->required();

  auto* detok_cmd = app.add_subcommand("detokenize", "token file -> motion JSON");
  add_common(detok_cmd);
  detok_cmd->add_option("--tokenizer", tok_path, "tokenizer checkpoint")->required();
  detok_cmd->add_option("--tokens", io_in, "token file input")->required();
  detok_cmd->add_option("--out", io_out, "motion JSON output")->required();

  auto* probe = app.add_subcommand("probe", "latent-space probes");
  add_common(probe);
  std::string probe_kind;
  probe->add_option("kind", probe_kind, "manifold|density")->required();

  auto* sweep = app.add_subcommand("sweep", "named experiment grids");
  add_common(sweep);
  std::string sweep_kind;
  sweep->add_option("kind", sweep_kind, "tokens|training|losses|guidance|dual-vs-single")
      ->required();

  auto* bench = app.add_subcommand("bench", "ms/token with and without KV caching");
  add_common(bench);
  bench->add_option("--tokenizer", tok_path, "tokenizer checkpoint")->required();
  bench->add_option("--generator", gen_path, "generator checkpoint")->required();

  auto* inspect = app.add_subcommand("inspect-data", "export a record or label histogram");
  add_common(inspect);
  int record_index = -1;
  std::string split = "test";
  bool histogram = false;
  inspect->add_option("--index", record_index, "record index to export as JSON");
  inspect->add_option("--split", split, "train|val|test")->capture_default_str();
  inspect->add_flag("--histogram", histogram, "emit the primitive histogram CSV");

  auto* itext = app.add_subcommand("inspect-text", "masked-caption predictions for a record");
  add_common(itext);
  uint64_t itext_seed = 7;
  int itext_topk = 5;
  itext->add_option("--tokenizer", tok_path, "tokenizer checkpoint")->required();
  itext->add_option("--index", record_index, "test record index")->required();
  itext->add_option("--seed", itext_seed, "mask seed");
  itext->add_option("--top-k", itext_topk, "predictions per mask");

  auto* rerun = app.add_subcommand("rerun", "re-execute a command from its manifest");
  std::string manifest_path;
  rerun->add_option("manifest", manifest_path, "path to manifest.json")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (init->parsed()) {
      ExperimentConfig cfg = desk_config(scenario_from_string(init_scenario));
      std::ofstream f(init_out);
      f << cfg.to_json().dump(2) << "\n";
      std::printf("wrote %s\n", init_out.c_str());
      return 0;
    }
    ExperimentConfig cfg = load_config_or_default(config_path, scenario);
    std::string manifest;
    if (build->parsed()) manifest = cmd_build_data(cfg, artifacts, run_id);
    else if (train_ev->parsed()) manifest = cmd_train_evaluator(cfg, artifacts, run_id);
    else if (train_tok->parsed()) manifest = cmd_train_tokenizer(cfg, artifacts, run_id);
    else if (train_gen->parsed()) manifest = cmd_train_generator(cfg, artifacts, tok_path, run_id);
    else if (gen_cmd->parsed()) manifest = cmd_generate(cfg, artifacts, tok_path, gen_path, gen_args, run_id);
    else if (eval_cmd->parsed()) {
      MetricReport rep;
      manifest = cmd_evaluate(cfg, artifacts, tok_path, gen_path, run_id, &rep, guidance_override);
      std::printf("%s\n", rep.to_json().c_str());
    } else if (tok_cmd->parsed()) manifest = cmd_tokenize(cfg, artifacts, tok_path, io_in, io_out, run_id);
    else if (detok_cmd->parsed()) manifest = cmd_detokenize(cfg, artifacts, tok_path, io_in, io_out, run_id);
    else if (probe->parsed()) {
      if (probe_kind == "manifold") manifest = cmd_probe_manifold(cfg, artifacts, run_id);
      else if (probe_kind == "density") manifest = cmd_probe_density(cfg, artifacts, run_id);
      else throw ConfigError("unknown probe: " + probe_kind + " (expected manifold|density)");
    } else if (sweep->parsed()) manifest = cmd_sweep(cfg, artifacts, sweep_kind, run_id);
    else if (bench->parsed()) {
      manifest = cmd_bench(cfg, artifacts, tok_path, gen_path, run_id);
      std::ifstream f(run_paths(artifacts, nlohmann::json::parse(std::ifstream(manifest)).at("run_id").get<std::string>()).dir + "/bench.csv");
      std::cout << f.rdbuf();
    } else if (inspect->parsed()) {
      DatasetPaths p = dataset_paths(artifacts, cfg.data);
      const std::string path = split == "train" ? p.train : split == "val" ? p.val : p.test;
      if (!std::filesystem::exists(path))
        throw IoError("missing dataset " + path + "; produce it with `motionlab build-data`");
      DatasetFile d = DatasetFile::load(path);
      if (histogram) {
        std::cout << label_histogram_csv(d);
      } else {
        if (record_index < 0 || record_index >= int(d.records.size()))
          throw ConfigError("pass --index in range or --histogram");
        std::cout << record_to_json(d.records[size_t(record_index)]) << "\n";
      }
      return 0;
    } else if (itext->parsed()) {
      std::cout << inspect_masked_text(cfg, artifacts, tok_path, record_index, itext_seed,
                                       itext_topk)
                << "\n";
      return 0;
    } else if (rerun->parsed()) {
      manifest = cmd_rerun(manifest_path, artifacts);
    }
    if (!manifest.empty()) std::printf("manifest: %s\n", manifest.c_str());
    return 0;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
