#include "adt/analysis.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <tuple>

#include "adt/error.hpp"

namespace adt {

namespace {

constexpr std::array<std::string_view, 4> kModalityNames{"return", "state", "action", "all"};
constexpr std::array<std::string_view, 2> kModeNames{"absolute", "relative"};

Modality parse_modality(std::string_view s, std::size_t line) {
  for (std::size_t i = 0; i < kModalityNames.size(); ++i)
    if (kModalityNames[i] == s) return static_cast<Modality>(i);
  throw ParseError("unknown modality '" + std::string(s) + "'", line);
}

ReportMode parse_mode(std::string_view s, std::size_t line) {
  for (std::size_t i = 0; i < kModeNames.size(); ++i)
    if (kModeNames[i] == s) return static_cast<ReportMode>(i);
  throw ParseError("unknown mode '" + std::string(s) + "'", line);
}

std::vector<AttentionReport> aggregate(const std::vector<AttentionRow>& rows, ReportMode mode,
                                       bool exclude_padding) {
  std::array<std::map<std::int64_t, double>, 3> mass;
  for (const auto& row : rows)
    for (std::size_t j = 0; j < row.keys.size(); ++j) {
      const auto& key = row.keys[j];
      if (key.future || (key.padding && (exclude_padding || mode == ReportMode::kRelative))) continue;
      const std::int64_t at = mode == ReportMode::kAbsolute ? key.timestep : key.offset;
      mass[static_cast<int>(key.modality)][at] += row.weights[j];
    }

  std::map<std::int64_t, double> all;
  double total_all = 0;
  std::vector<AttentionReport> out;
  for (int m = 0; m < 3; ++m) {
    double total = 0;
    for (const auto& [k, v] : mass[m]) {
      total += v;
      all[k] += v;
    }
    total_all += total;
    if (total <= 0) continue;
    AttentionReport r{mode, static_cast<Modality>(m), {}};
    for (const auto& [k, v] : mass[m]) r.scores[k] = v / total;
    out.push_back(std::move(r));
  }
  if (!(total_all > 0)) throw NumericError("attention report has zero total mass");
  AttentionReport r{mode, Modality::kAll, {}};
  for (const auto& [k, v] : all) r.scores[k] = v / total_all;
  out.push_back(std::move(r));
  return out;
}

}  // namespace

std::string_view modality_name(Modality m) { return kModalityNames[static_cast<int>(m)]; }
std::string_view mode_name(ReportMode m) { return kModeNames[static_cast<int>(m)]; }

template <typename T>
std::vector<AttentionRow> collect_attention(const DecisionTransformer<T>& model,
                                            std::span<const TrainingWindow> windows) {
  std::vector<AttentionRow> rows;
  const std::size_t K = model.config().K, H = model.config().n_heads, L = 3 * K;
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < windows.size(); start += kChunk) {
    const auto chunk = windows.subspan(start, std::min(kChunk, windows.size() - start));
    const auto trace = model.forward(chunk);
    for (std::size_t b = 0; b < chunk.size(); ++b) {
      const auto& w = chunk[b];
      for (std::size_t t = 0; t < K; ++t) {
        if (!w.pad_mask[t]) continue;
        const std::size_t q = 3 * t + 1;
        AttentionRow row{start + b, t, std::vector<double>(L, 0.0), {}};
        for (std::size_t h = 0; h < H; ++h) {
          const auto a = trace.attention_row(b, h, q);
          for (std::size_t j = 0; j < L; ++j) row.weights[j] += static_cast<double>(a[j]) / static_cast<double>(H);
        }
        row.keys.resize(L);
        for (std::size_t j = 0; j < L; ++j) {
          const std::size_t s = j / 3;
          row.keys[j] = {static_cast<Modality>(j % 3), w.timesteps[s],
                         static_cast<std::int64_t>(t) - static_cast<std::int64_t>(s), !w.pad_mask[s], j > q};
        }
        rows.push_back(std::move(row));
      }
    }
  }
  return rows;
}

std::vector<AttentionReport> aggregate_absolute(const std::vector<AttentionRow>& rows, bool exclude_padding) {
  return aggregate(rows, ReportMode::kAbsolute, exclude_padding);
}

std::vector<AttentionReport> aggregate_relative(const std::vector<AttentionRow>& rows) {
  return aggregate(rows, ReportMode::kRelative, true);
}

void export_report(std::vector<AttentionReport> reports, const std::filesystem::path& path) {
  struct Line {
    std::string_view mode, modality;
    std::int64_t key;
    double score;
  };
  std::vector<Line> lines;
  for (const auto& r : reports)
    for (const auto& [k, v] : r.scores) lines.push_back({mode_name(r.mode), modality_name(r.modality), k, v});
  std::stable_sort(lines.begin(), lines.end(), [](const Line& a, const Line& b) {
    return std::tie(a.mode, a.modality, a.key) < std::tie(b.mode, b.modality, b.key);
  });
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << "mode,modality,key,normalized_score\n";
  char buf[64];
  for (const auto& l : lines) {
    std::snprintf(buf, sizeof buf, "%.17g", l.score);
    f << l.mode << ',' << l.modality << ',' << l.key << ',' << buf << '\n';
  }
  if (!f) throw IoError("write failed for " + path.string());
}

std::vector<AttentionReport> load_report(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(f, line) || line != "mode,modality,key,normalized_score")
    throw ParseError("missing report header", 1);
  std::vector<AttentionReport> out;
  std::size_t line_no = 1;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string mode, modality, key, score;
    if (!std::getline(ss, mode, ',') || !std::getline(ss, modality, ',') || !std::getline(ss, key, ',') ||
        !std::getline(ss, score))
      throw ParseError("expected 4 columns", line_no);
    const auto md = parse_mode(mode, line_no);
    const auto mo = parse_modality(modality, line_no);
    if (out.empty() || out.back().mode != md || out.back().modality != mo) out.push_back({md, mo, {}});
    try {
      out.back().scores[std::stoll(key)] = std::stod(score);
    } catch (const std::exception&) {
      throw ParseError("bad number", line_no);
    }
  }
  return out;
}

std::string report_svg(const AttentionReport& r) {
  const double bar = 18, gap = 4, height = 200, pad = 30;
  const double width = pad * 2 + static_cast<double>(r.scores.size()) * (bar + gap);
  double peak = 0;
  for (const auto& [k, v] : r.scores) peak = std::max(peak, v);
  if (peak <= 0) peak = 1;
  std::ostringstream o;
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\">\n"
                "<text x=\"%.0f\" y=\"16\" font-size=\"12\">%s %s</text>\n",
                width, height + pad * 2, pad, std::string(mode_name(r.mode)).c_str(),
                std::string(modality_name(r.modality)).c_str());
  o << buf;
  double x = pad;
  for (const auto& [k, v] : r.scores) {
    const double h = v / peak * height;
    std::snprintf(buf, sizeof buf,
                  "<rect x=\"%.1f\" y=\"%.1f\" width=\"%.0f\" height=\"%.1f\" fill=\"#4a7ab5\"/>"
                  "<text x=\"%.1f\" y=\"%.0f\" font-size=\"9\">%lld</text>\n",
                  x, pad + height - h, bar, h, x + 2, pad + height + 12, static_cast<long long>(k));
    o << buf;
    x += bar + gap;
  }
  o << "</svg>\n";
  return o.str();
}

template std::vector<AttentionRow> collect_attention(const DecisionTransformer<float>&,
                                                     std::span<const TrainingWindow>);
template std::vector<AttentionRow> collect_attention(const DecisionTransformer<double>&,
                                                     std::span<const TrainingWindow>);

}  // namespace adt
