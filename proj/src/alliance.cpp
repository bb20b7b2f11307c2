#include "adt/alliance.hpp"

#include <fstream>

#include "adt/error.hpp"

namespace adt {

namespace {

constexpr std::string_view kScaleNames[] = {"full", "task", "bond", "goal"};

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out)
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace

std::string_view scale_name(RewardScale s) { return kScaleNames[static_cast<int>(s)]; }

RewardScale parse_scale(std::string_view name) {
  const std::string n = lower(name);
  for (int i = 0; i < 4; ++i)
    if (kScaleNames[i] == n) return static_cast<RewardScale>(i);
  throw ValidationError("unknown reward scale '" + std::string(name) + "'");
}

Inventory make_inventory(std::vector<InventoryItem> items, const VocabEmbedding& v) {
  bool has[3] = {false, false, false};
  Inventory inv;
  for (auto& item : items) {
    if (item.text.empty()) throw ValidationError("inventory item with empty text");
    if (item.sign != 1 && item.sign != -1) throw ValidationError("inventory sign must be +1 or -1");
    std::size_t known = 0;
    StateVector vec = mean_pool(tokenize(item.text), v, &known);
    if (known == 0) throw ValidationError("inventory item has no in-vocabulary words: '" + item.text + "'");
    has[static_cast<int>(item.subscale)] = true;
    inv.item_vectors.push_back(std::move(vec));
    inv.items.push_back(std::move(item));
  }
  constexpr const char* names[] = {"Task", "Bond", "Goal"};
  for (int i = 0; i < 3; ++i)
    if (!has[i]) throw ValidationError(std::string("inventory has no ") + names[i] + " item");
  return inv;
}

Inventory load_inventory(const std::filesystem::path& path, const VocabEmbedding& v) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path.string());
  std::vector<InventoryItem> items;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    std::string_view sv = trim(line);
    if (sv.empty() || sv.front() == '#') continue;
    const auto t1 = sv.find('\t');
    const auto t2 = t1 == std::string_view::npos ? t1 : sv.find('\t', t1 + 1);
    if (t2 == std::string_view::npos) throw ParseError("expected subscale<TAB>sign<TAB>text", line_no);
    InventoryItem item;
    const std::string sub = lower(trim(sv.substr(0, t1)));
    if (sub == "task") {
      item.subscale = Subscale::kTask;
    } else if (sub == "bond") {
      item.subscale = Subscale::kBond;
    } else if (sub == "goal") {
      item.subscale = Subscale::kGoal;
    } else {
      throw ParseError("unknown subscale '" + sub + "'", line_no);
    }
    const std::string_view sign = trim(sv.substr(t1 + 1, t2 - t1 - 1));
    if (sign == "1" || sign == "+1") {
      item.sign = 1;
    } else if (sign == "-1") {
      item.sign = -1;
    } else {
      throw ParseError("sign must be +1 or -1", line_no);
    }
    item.text = std::string(trim(sv.substr(t2 + 1)));
    if (item.text.empty()) throw ParseError("empty item text", line_no);
    items.push_back(std::move(item));
  }
  return make_inventory(std::move(items), v);
}

RewardVector score_turn_pair(std::span<const double> state, const Inventory& inv) {
  double sums[3] = {0, 0, 0};
  std::size_t counts[3] = {0, 0, 0};
  double total = 0;
  for (std::size_t i = 0; i < inv.items.size(); ++i) {
    const double s = inv.items[i].sign * cosine(state, inv.item_vectors[i]);
    const int sub = static_cast<int>(inv.items[i].subscale);
    sums[sub] += s;
    ++counts[sub];
    total += s;
  }
  RewardVector r;
  r.task = counts[0] ? sums[0] / static_cast<double>(counts[0]) : 0.0;
  r.bond = counts[1] ? sums[1] / static_cast<double>(counts[1]) : 0.0;
  r.goal = counts[2] ? sums[2] / static_cast<double>(counts[2]) : 0.0;
  r.full = inv.items.empty() ? 0.0 : total / static_cast<double>(inv.items.size());
  return r;
}

}  // namespace adt
