#include "adt/labelgen.hpp"

#include <algorithm>
#include <fstream>
#include <tuple>
#include <unordered_map>
#include <unordered_set>

#include "adt/error.hpp"
#include "json.hpp"

namespace adt {

std::string_view source_name(LabelSource s) { return s == LabelSource::kGold ? "gold" : "dt_synthetic"; }

std::vector<LabeledSession> join_sessions(const std::vector<SessionTrajectory>& trajs,
                                          const std::vector<SessionPairs>& sessions) {
  std::unordered_map<std::string_view, const SessionPairs*> by_id;
  for (const auto& s : sessions) by_id[s.session_id] = &s;
  std::vector<LabeledSession> out;
  for (const auto& t : trajs) {
    const auto it = by_id.find(t.session_id);
    if (it == by_id.end()) throw NotFoundError("no turn-pairs for session '" + t.session_id + "'");
    if (it->second->pairs.size() != t.steps.size())
      throw ValidationError("session '" + t.session_id + "': trajectory and turn-pair counts differ");
    out.push_back({&t, it->second});
  }
  return out;
}

std::string pair_text(const TurnPair& p) { return "patient: " + p.patient_text + "\ntherapist: " + p.therapist_text; }

template <typename T>
std::vector<FinetuneRecord> generate_labels(const DecisionTransformer<T>& model,
                                            const std::vector<LabeledSession>& middle, RewardScale scale) {
  std::vector<FinetuneRecord> out;
  for (const auto& s : middle) {
    const auto pred = predict_actions(model, *s.traj, scale, false);
    for (std::size_t t = 0; t < pred.size(); ++t)
      out.push_back({pair_text(s.pairs->pairs[t]), pred[t], LabelSource::kDtSynthetic, s.traj->session_id, t});
  }
  return out;
}

std::vector<FinetuneRecord> export_gold_labels(const std::vector<LabeledSession>& partition) {
  std::vector<FinetuneRecord> out;
  for (const auto& s : partition)
    for (std::size_t t = 0; t < s.traj->steps.size(); ++t)
      if (s.traj->labeled(t))
        out.push_back(
            {pair_text(s.pairs->pairs[t]), s.traj->steps[t].action, LabelSource::kGold, s.traj->session_id, t});
  return out;
}

void check_disjoint(const std::vector<std::vector<LabeledSession>>& partitions) {
  std::unordered_set<std::string_view> seen;
  for (const auto& p : partitions)
    for (const auto& s : p)
      if (!seen.insert(s.traj->session_id).second)
        throw ValidationError("session '" + s.traj->session_id + "' appears in more than one partition");
}

void export_finetune_file(std::vector<FinetuneRecord> records, const std::filesystem::path& path) {
  std::stable_sort(records.begin(), records.end(), [](const FinetuneRecord& a, const FinetuneRecord& b) {
    return std::tie(a.session_id, a.step_index) < std::tie(b.session_id, b.step_index);
  });
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  for (const auto& r : records) {
    const nlohmann::json j = {{"text", r.text},
                              {"label", r.label},
                              {"source", std::string(source_name(r.source))},
                              {"session_id", r.session_id},
                              {"step_index", r.step_index}};
    f << j.dump() << '\n';
  }
  if (!f) throw IoError("write failed for " + path.string());
}

std::vector<FinetuneRecord> load_finetune_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::vector<FinetuneRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      FinetuneRecord r;
      r.text = j.at("text").get<std::string>();
      r.label = j.at("label").get<ActionId>();
      const auto src = j.at("source").get<std::string>();
      if (src == "gold") {
        r.source = LabelSource::kGold;
      } else if (src == "dt_synthetic") {
        r.source = LabelSource::kDtSynthetic;
      } else {
        throw ParseError("unknown source '" + src + "'", line_no);
      }
      r.session_id = j.at("session_id").get<std::string>();
      r.step_index = j.at("step_index").get<std::size_t>();
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  return out;
}

LabelgenResult run_labelgen(const std::vector<SessionTrajectory>& trajs, const std::vector<SessionPairs>& sessions,
                            const ExperimentConfig& cfg, std::uint64_t seed) {
  auto pool = filter_condition(trajs, cfg.condition);
  auto parts = split_sessions(join_sessions(pool, sessions), {0.4, 0.4, 0.2}, seed);
  check_disjoint(parts);
  if (parts[0].empty() || parts[1].empty()) throw ValidationError("labelgen split left an empty partition");

  std::vector<SessionTrajectory> train;
  for (const auto& s : parts[0]) train.push_back(*s.traj);
  DTConfig mc = cfg.model;
  mc.K = cfg.K;
  mc.d_state = train.front().steps.front().state.size();
  mc.n_actions = train.front().n_actions;
  mc.return_scale = default_return_scale(train, cfg.scale);
  auto model = DecisionTransformer<float>::init(mc, seed);
  train_dt(model, make_all_windows(train, mc.K, cfg.scale, mc.return_scale), cfg.opt, seed);

  // Moving the vector keeps its elements in place, so the partition pointers
  // stay valid.
  LabelgenResult r{std::move(pool), std::move(parts), std::move(model), {}, {}, {}};
  r.synthetic = generate_labels(r.model, r.partitions[1], cfg.scale);
  r.gold_train = export_gold_labels(r.partitions[0]);
  r.gold_test = export_gold_labels(r.partitions[2]);
  return r;
}

template std::vector<FinetuneRecord> generate_labels(const DecisionTransformer<float>&,
                                                     const std::vector<LabeledSession>&, RewardScale);
template std::vector<FinetuneRecord> generate_labels(const DecisionTransformer<double>&,
                                                     const std::vector<LabeledSession>&, RewardScale);

}  // namespace adt
