#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "adt/dtmodel.hpp"

namespace adt {

enum class Modality { kReturn, kState, kAction, kAll };
enum class ReportMode { kAbsolute, kRelative };

std::string_view modality_name(Modality m);
std::string_view mode_name(ReportMode m);

struct AttentionKey {
  Modality modality = Modality::kReturn;
  std::uint32_t timestep = 0;  // episode timestep of the key's step
  std::int64_t offset = 0;     // query step - key step, within the window
  bool padding = false;
  bool future = false;
};

// Final-layer attention of one state-token query, averaged over heads.
struct AttentionRow {
  std::size_t window = 0;
  std::size_t query_slot = 0;
  std::vector<double> weights;  // 3K
  std::vector<AttentionKey> keys;
};

// Rows for every real state token of every window, evaluated without dropout.
template <typename T>
std::vector<AttentionRow> collect_attention(const DecisionTransformer<T>& model,
                                            std::span<const TrainingWindow> windows);

struct AttentionReport {
  ReportMode mode = ReportMode::kAbsolute;
  Modality modality = Modality::kAll;
  std::map<std::int64_t, double> scores;  // timestep or offset -> normalized mass
};

// One report per modality that received mass, then `all`. Future keys never
// contribute. Throws NumericError when no mass is left to normalize.
std::vector<AttentionReport> aggregate_absolute(const std::vector<AttentionRow>& rows, bool exclude_padding = true);
std::vector<AttentionReport> aggregate_relative(const std::vector<AttentionRow>& rows);

// CSV: mode,modality,key,normalized_score sorted by (mode, modality, key).
void export_report(std::vector<AttentionReport> reports, const std::filesystem::path& path);
std::vector<AttentionReport> load_report(const std::filesystem::path& path);

// Minimal static bar chart of one report.
std::string report_svg(const AttentionReport& r);

}  // namespace adt
