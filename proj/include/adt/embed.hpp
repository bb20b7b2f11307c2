#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "adt/corpus.hpp"

namespace adt {

using StateVector = std::vector<double>;

// Word-vector table. Rows are stored contiguously in `words` order.
class VocabEmbedding {
 public:
  VocabEmbedding() = default;
  explicit VocabEmbedding(std::size_t dim) : dim_(dim) {}

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return words_.size(); }
  const std::vector<std::string>& words() const noexcept { return words_; }

  // Inserts or overwrites. Returns true when the word already existed.
  bool set(const std::string& word, std::span<const double> vec);
  std::optional<std::span<const double>> find(const std::string& word) const;
  std::span<const double> row(std::size_t i) const { return {data_.data() + i * dim_, dim_}; }

 private:
  std::size_t dim_ = 0;
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<double> data_;
};

struct SgnsOptions {
  std::size_t dim = 64;
  std::size_t window = 5;
  std::size_t negatives = 5;
  std::size_t epochs = 5;
  std::uint64_t seed = 1;
  std::size_t min_count = 2;
  double learning_rate = 0.025;
};

// Skip-gram with negative sampling. Negatives are drawn from unigram counts
// raised to 0.75. `epoch_losses`, when given, receives the mean per-pair loss
// of every epoch.
VocabEmbedding train_sgns(const std::vector<std::vector<std::string>>& sentences,
                          const SgnsOptions& opt, std::vector<double>* epoch_losses = nullptr);

// Text format: `word v1 ... vd` per line. Duplicate words keep the last
// occurrence; a warning is appended to `warnings` (or printed to stderr).
VocabEmbedding load_vectors(const std::filesystem::path& path,
                            std::vector<std::string>* warnings = nullptr);
void save_vectors(const VocabEmbedding& v, const std::filesystem::path& path);

struct EmbedStats {
  std::atomic<std::uint64_t> all_oov{0};
};

// Mean of the in-vocabulary word vectors; zero vector when none are known.
StateVector mean_pool(const std::vector<std::string>& tokens, const VocabEmbedding& v,
                      std::size_t* known = nullptr);
StateVector embed_turn_pair(const TurnPair& tp, const VocabEmbedding& v, EmbedStats* stats = nullptr);

double norm(std::span<const double> x);
// Zero when either side has zero norm.
double cosine(std::span<const double> a, std::span<const double> b);

// Token lists used to train word vectors: one list per turn-pair.
std::vector<std::vector<std::string>> pair_sentences(const std::vector<SessionPairs>& sessions);

}  // namespace adt
