#pragma once
// File-based pipeline stages behind the `adt` subcommands.

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "adt/embed.hpp"
#include "adt/synthetic.hpp"
#include "adt/train.hpp"

namespace adt {

struct PipelinePaths {
  std::filesystem::path corpus = "corpus.jsonl";
  std::filesystem::path pairs = "pairs.jsonl";
  std::filesystem::path vectors = "vectors.txt";
  std::filesystem::path inventory = "inventory.tsv";
  std::filesystem::path topics = "topics.txt";
  std::filesystem::path rewards = "rewards.jsonl";
  std::filesystem::path trajectories = "trajectories.jsonl";
  std::filesystem::path checkpoint = "checkpoints/model.ckpt";
  std::filesystem::path out_dir = "out";
};

struct AblationSettings {
  std::vector<std::size_t> lengths{5, 10, 15, 20};
  std::vector<RewardScale> scales{RewardScale::kFull, RewardScale::kTask, RewardScale::kBond, RewardScale::kGoal};
  std::size_t seeds = 5;
};

struct PipelineConfig {
  std::filesystem::path data_dir = ".";  // relative paths resolve against this
  PipelinePaths paths;
  SgnsOptions embed;
  std::size_t n_topics = 8;
  std::uint64_t topic_seed = 1;
  ExperimentConfig experiment;
  std::size_t runs = 5;
  std::size_t jobs = 1;
  AblationSettings ablation;
  SyntheticOptions synthetic;
  std::size_t attn_windows = 1000;  // cap on windows fed to the attention report

  std::filesystem::path resolve(const std::filesystem::path& p) const;
  void validate() const;
};

// Defaults overlaid with a JSON config file; unknown keys are rejected.
PipelineConfig load_config(const std::filesystem::path& path, PipelineConfig base = {});
void apply_config_json(PipelineConfig& cfg, const std::string& json_text);
std::optional<Condition> parse_condition_filter(const std::string& name);

// Sidecar with planted topic ids, next to the corpus.
std::filesystem::path planted_path(const std::filesystem::path& corpus);

void stage_gen_synthetic(const PipelineConfig& cfg, std::ostream& out);
void stage_ingest(const PipelineConfig& cfg, std::ostream& out);
void stage_embed(const PipelineConfig& cfg, std::ostream& out);
// Returns the agreement with planted topics when the sidecar exists.
std::optional<double> stage_topics(const PipelineConfig& cfg, std::ostream& out);
void stage_rewards(const PipelineConfig& cfg, std::ostream& out);
void stage_trajectories(const PipelineConfig& cfg, std::ostream& out);
SeedResult stage_train(const PipelineConfig& cfg, std::ostream& out);
EvalResult stage_eval_checkpoint(const PipelineConfig& cfg, const std::filesystem::path& ckpt, std::ostream& out);
SeedRunSummary stage_eval_runs(const PipelineConfig& cfg, std::size_t runs, std::ostream& out);
AblationTable stage_ablate(const PipelineConfig& cfg, std::ostream& out);
void stage_attn(const PipelineConfig& cfg, const std::filesystem::path& ckpt, std::ostream& out);
void stage_labelgen(const PipelineConfig& cfg, std::ostream& out);

}  // namespace adt
