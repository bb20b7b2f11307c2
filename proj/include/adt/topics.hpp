#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "adt/embed.hpp"

namespace adt {

using ActionId = std::uint32_t;

// k unit-norm directions in the word-embedding space; a turn-pair's topic is
// the centroid with the highest cosine.
struct TopicModel {
  std::size_t k = 0;
  std::size_t dim = 0;
  std::uint64_t seed = 0;
  std::vector<StateVector> centroids;
};

struct FitTrace {
  // Sum over points of the best cosine, after every assignment pass.
  std::vector<double> objective;
  std::size_t iterations = 0;
};

// Spherical k-means: k-means++ seeding, max-cosine assignment, normalized-mean
// updates, empty clusters re-seeded at the worst-served point. Zero vectors are
// ignored. Stops after 100 passes or when assignments stop changing.
TopicModel fit_topics(const std::vector<StateVector>& states, std::size_t k, std::uint64_t seed,
                      FitTrace* trace = nullptr);

// Ties go to the lowest index; the zero vector maps to topic 0.
ActionId assign_topic(std::span<const double> s, const TopicModel& m);

// Per topic, the n words closest by cosine (ties by word).
std::vector<std::vector<std::string>> topic_top_words(const TopicModel& m, const VocabEmbedding& v,
                                                      std::size_t n);

void save_topic_model(const TopicModel& m, const std::filesystem::path& path);
TopicModel load_topic_model(const std::filesystem::path& path);

}  // namespace adt
