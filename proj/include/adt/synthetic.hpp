#pragma once
// Planted-topic transcript generator for desk-scale experiments.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "adt/corpus.hpp"
#include "adt/topics.hpp"

namespace adt {

struct SyntheticOptions {
  std::size_t n_sessions = 200;
  std::size_t turns_per_session = 40;  // turn-pairs
  std::size_t n_topics = 8;
  std::uint64_t seed = 1;
  double chain_prob = 0.8;  // probability of following the session's rotation
};

struct PlantedSession {
  std::string session_id;
  int direction = 1;               // +1 or -1 rotation through the topic ring
  std::vector<ActionId> topics;    // planted topic of each turn-pair
  std::vector<std::uint8_t> favored;  // whether the move into pair t was favored
};

struct SyntheticCorpus {
  std::vector<Transcript> transcripts;
  std::vector<PlantedSession> planted;
  std::vector<ActionId> good_topics;
};

// Each session walks a ring of topics in a hidden direction, jumping
// uniformly with probability 1 - chain_prob. Moves that follow the ring into a
// "good" topic draw alliance-positive patient replies; all other moves draw
// negative ones. The patient's reply is part of the pair that opens the new
// topic, so the move shows up in that pair's reward.
SyntheticCorpus generate_synthetic(const SyntheticOptions& opt);

// Sidecar: one JSON record per session with the planted topic ids.
void write_planted(const std::vector<PlantedSession>& planted, const std::filesystem::path& path);
std::vector<PlantedSession> load_planted(const std::filesystem::path& path);

// Best agreement between two labelings over all one-to-one relabelings of
// `predicted` (Hungarian assignment on the confusion matrix).
double relabeled_agreement(const std::vector<ActionId>& predicted, const std::vector<ActionId>& truth,
                           std::size_t k);

}  // namespace adt
