#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "adt/corpus.hpp"
#include "adt/train.hpp"
#include "adt/trajectory.hpp"

namespace adt {

enum class LabelSource { kDtSynthetic, kGold };
std::string_view source_name(LabelSource s);

struct FinetuneRecord {
  std::string text;  // patient turn, then therapist turn
  ActionId label = 0;
  LabelSource source = LabelSource::kGold;
  std::string session_id;
  std::size_t step_index = 0;
};

// Trajectories joined with their turn-pair text, matched by session id.
struct LabeledSession {
  const SessionTrajectory* traj = nullptr;
  const SessionPairs* pairs = nullptr;
};
std::vector<LabeledSession> join_sessions(const std::vector<SessionTrajectory>& trajs,
                                          const std::vector<SessionPairs>& sessions);

std::string pair_text(const TurnPair& p);

// One teacher-forced prediction per turn-pair of every session.
template <typename T>
std::vector<FinetuneRecord> generate_labels(const DecisionTransformer<T>& model,
                                            const std::vector<LabeledSession>& middle, RewardScale scale);

// One record per step with an observed next topic; the label is that topic.
std::vector<FinetuneRecord> export_gold_labels(const std::vector<LabeledSession>& partition);

// Throws ValidationError when a session id appears in two partitions.
void check_disjoint(const std::vector<std::vector<LabeledSession>>& partitions);

// Line-delimited JSON, ordered by (session_id, step_index).
void export_finetune_file(std::vector<FinetuneRecord> records, const std::filesystem::path& path);
std::vector<FinetuneRecord> load_finetune_file(const std::filesystem::path& path);

struct LabelgenResult {
  std::vector<SessionTrajectory> pool;                  // sessions after the condition filter
  std::vector<std::vector<LabeledSession>> partitions;  // train, annotate, held out; point into `pool`
  DecisionTransformer<float> model;
  std::vector<FinetuneRecord> synthetic;   // annotate partition
  std::vector<FinetuneRecord> gold_train;  // train partition
  std::vector<FinetuneRecord> gold_test;   // held-out partition
};

// Splits sessions 40/40/20 (cfg.fractions is ignored), trains on the first
// partition and annotates the second. `sessions` must outlive the result.
LabelgenResult run_labelgen(const std::vector<SessionTrajectory>& trajs, const std::vector<SessionPairs>& sessions,
                            const ExperimentConfig& cfg, std::uint64_t seed);

}  // namespace adt
