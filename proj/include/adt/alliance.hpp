#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "adt/embed.hpp"

namespace adt {

enum class Subscale { kTask, kBond, kGoal };
enum class RewardScale { kFull, kTask, kBond, kGoal };

std::string_view scale_name(RewardScale s);
RewardScale parse_scale(std::string_view name);
inline constexpr RewardScale kAllScales[] = {RewardScale::kFull, RewardScale::kTask, RewardScale::kBond,
                                             RewardScale::kGoal};

struct InventoryItem {
  std::string text;
  Subscale subscale = Subscale::kTask;
  int sign = 1;
};

struct Inventory {
  std::vector<InventoryItem> items;
  std::vector<StateVector> item_vectors;
};

struct RewardVector {
  double full = 0, task = 0, bond = 0, goal = 0;

  double get(RewardScale s) const {
    switch (s) {
      case RewardScale::kTask: return task;
      case RewardScale::kBond: return bond;
      case RewardScale::kGoal: return goal;
      case RewardScale::kFull: break;
    }
    return full;
  }
};

// Item vectors are mean-pooled word vectors of the item text. Every item must
// contain at least one known word and every subscale needs an item.
Inventory make_inventory(std::vector<InventoryItem> items, const VocabEmbedding& v);
// Tab-separated `subscale \t sign \t text`; blank lines and `#` comments skipped.
Inventory load_inventory(const std::filesystem::path& path, const VocabEmbedding& v);

// Signed mean cosine per subscale; `full` is the signed mean over all items.
RewardVector score_turn_pair(std::span<const double> state, const Inventory& inv);

}  // namespace adt
