#include "adt/service.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "adt/error.hpp"
#include "httplib.h"

namespace adt {

using nlohmann::json;

namespace {

std::vector<double> softmax(std::span<const float> z) {
  std::vector<double> p(z.begin(), z.end());
  const double mx = *std::max_element(p.begin(), p.end());
  double sum = 0;
  for (double& v : p) sum += (v = std::exp(v - mx));
  for (double& v : p) v /= sum;
  return p;
}

double reward_sum(const SessionTrajectory& traj, RewardScale scale) {
  double acc = 0;
  for (const auto& s : traj.steps) acc += s.rewards.get(scale);
  return acc;
}

json rewards_json(const RewardVector& r) {
  return {{"full", r.full}, {"task", r.task}, {"bond", r.bond}, {"goal", r.goal}};
}

}  // namespace

ServiceCheckpoint make_service_checkpoint(std::string id, Checkpoint ckpt) {
  ServiceCheckpoint c{std::move(id), std::move(ckpt.model), RewardScale::kFull, 0, std::move(ckpt.metadata)};
  const auto s = c.metadata.find(kMetaScale);
  const auto p = c.metadata.find(kMetaTargetP90);
  if (s == c.metadata.end() || p == c.metadata.end())
    throw ValidationError("checkpoint '" + c.id + "' lacks scale or target metadata");
  c.scale = parse_scale(s->second);
  try {
    c.target_p90 = std::stod(p->second);
  } catch (const std::exception&) {
    throw ValidationError("checkpoint '" + c.id + "': bad " + kMetaTargetP90);
  }
  return c;
}

std::map<std::string, ServiceCheckpoint> load_checkpoint_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".ckpt") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::map<std::string, ServiceCheckpoint> out;
  for (const auto& f : files) {
    const std::string id = f.stem().string();
    out.emplace(id, make_service_checkpoint(id, load_checkpoint(f)));
  }
  if (out.empty()) throw NotFoundError("no .ckpt files in " + dir.string());
  return out;
}

SessionManager::SessionManager(std::shared_ptr<const ServiceAssets> assets) : assets_(std::move(assets)) {}

std::shared_ptr<SessionManager::Live> SessionManager::find(const std::string& id) const {
  std::lock_guard lock(map_mu_);
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) throw NotFoundError("unknown session '" + id + "'");
  return it->second;
}

SessionSnapshot SessionManager::create(const std::string& checkpoint_id, std::optional<RewardScale> scale,
                                       std::optional<double> target_return) {
  const auto it = assets_->checkpoints.find(checkpoint_id);
  if (it == assets_->checkpoints.end()) throw NotFoundError("unknown checkpoint '" + checkpoint_id + "'");
  const auto& ck = it->second;
  if (scale && *scale != ck.scale)
    throw ValidationError("checkpoint '" + checkpoint_id + "' was trained on the " +
                          std::string(scale_name(ck.scale)) + " scale");
  const double target = target_return.value_or(ck.target_p90);
  if (!std::isfinite(target)) throw ValidationError("target_return must be finite");

  auto live = std::make_shared<Live>();
  auto& s = live->s;
  s.checkpoint_id = checkpoint_id;
  s.scale = ck.scale;
  s.target_return = target;
  s.remaining_target = target;
  s.trajectory.n_actions = ck.model.config().n_actions;
  std::lock_guard lock(map_mu_);
  char id[32];
  std::snprintf(id, sizeof id, "s%06llu", static_cast<unsigned long long>(next_id_++));
  s.id = id;
  s.trajectory.session_id = id;
  sessions_.emplace(s.id, live);
  return s;
}

TrainingWindow SessionManager::live_window(const SessionTrajectory& traj, RewardScale scale, double target_return,
                                           std::size_t K, double return_scale) {
  std::vector<double> rtg(traj.steps.size());
  double spent = 0;
  for (std::size_t t = 0; t < traj.steps.size(); ++t) {
    rtg[t] = target_return - spent;
    spent += traj.steps[t].rewards.get(scale);
  }
  return window_at(traj, traj.steps.size() - 1, K, rtg, return_scale);
}

IngestResult SessionManager::ingest(const std::string& id, const std::string& patient, const std::string& therapist) {
  const auto live = find(id);
  const TurnPair tp{id, 0, patient, therapist};
  Step step;
  step.state = embed_turn_pair(tp, assets_->vectors);
  step.rewards = score_turn_pair(step.state, assets_->inventory);
  const ActionId topic = assign_topic(step.state, assets_->topics);

  std::lock_guard lock(live->mu);
  auto& s = live->s;
  const auto& model = assets_->checkpoints.at(s.checkpoint_id).model;
  const auto& cfg = model.config();
  if (step.state.size() != cfg.d_state) throw ValidationError("embedding width does not match the checkpoint");
  auto& steps = s.trajectory.steps;
  if (!steps.empty()) steps.back().action = topic;
  step.action = static_cast<ActionId>(s.trajectory.n_actions);
  steps.push_back(std::move(step));

  const auto w = live_window(s.trajectory, s.scale, s.target_return, cfg.K, cfg.return_scale);
  const auto trace = model.forward(std::span<const TrainingWindow>(&w, 1));

  IngestResult r;
  r.step_index = steps.size() - 1;
  r.rewards = steps.back().rewards;
  r.assigned_topic = topic;
  r.recommendation = softmax(trace.logits(0, cfg.K - 1));
  s.remaining_target = s.target_return - reward_sum(s.trajectory, s.scale);
  r.remaining_target = s.remaining_target;
  s.recommendations.push_back(r.recommendation);
  return r;
}

SessionSnapshot SessionManager::set_target(const std::string& id, double target_return) {
  if (!std::isfinite(target_return)) throw ValidationError("target_return must be finite");
  const auto live = find(id);
  std::lock_guard lock(live->mu);
  live->s.target_return = target_return;
  live->s.remaining_target = target_return - reward_sum(live->s.trajectory, live->s.scale);
  return live->s;
}

SessionSnapshot SessionManager::get(const std::string& id) const {
  const auto live = find(id);
  std::lock_guard lock(live->mu);
  return live->s;
}

void SessionManager::remove(const std::string& id) {
  std::lock_guard lock(map_mu_);
  if (sessions_.erase(id) == 0) throw NotFoundError("unknown session '" + id + "'");
}

json to_json(const IngestResult& r, const ServiceAssets& assets) {
  return {{"schema_version", kSchemaVersion},
          {"step_index", r.step_index},
          {"rewards", rewards_json(r.rewards)},
          {"assigned_topic", r.assigned_topic},
          {"remaining_target", r.remaining_target},
          {"recommendation", r.recommendation},
          {"top_words", assets.top_words}};
}

json to_json(const SessionSnapshot& s) {
  json steps = json::array();
  for (std::size_t t = 0; t < s.trajectory.steps.size(); ++t) {
    const auto& st = s.trajectory.steps[t];
    // The topic of a step is the previous step's recorded next topic; keep it
    // explicit for clients.
    json j = {{"rewards", rewards_json(st.rewards)}, {"recommendation", s.recommendations[t]}};
    j["next_topic"] = st.action < s.trajectory.n_actions ? json(st.action) : json(nullptr);
    steps.push_back(std::move(j));
  }
  return {{"schema_version", kSchemaVersion},
          {"id", s.id},
          {"checkpoint_id", s.checkpoint_id},
          {"scale", std::string(scale_name(s.scale))},
          {"target_return", s.target_return},
          {"remaining_target", s.remaining_target},
          {"n_steps", s.trajectory.steps.size()},
          {"steps", std::move(steps)}};
}

json checkpoints_json(const ServiceAssets& assets) {
  json list = json::array();
  for (const auto& [id, c] : assets.checkpoints)
    list.push_back({{"id", id},
                    {"scale", std::string(scale_name(c.scale))},
                    {"K", c.model.config().K},
                    {"n_actions", c.model.config().n_actions},
                    {"target_return_p90", c.target_p90}});
  return {{"schema_version", kSchemaVersion}, {"checkpoints", std::move(list)}};
}

namespace {

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void reply_error(httplib::Response& res, int status, const std::string& kind, const std::string& msg) {
  reply(res, status, {{"schema_version", kSchemaVersion}, {"error", {{"kind", kind}, {"message", msg}}}});
}

template <typename F>
httplib::Server::Handler guarded(F f) {
  return [f](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const NotFoundError& e) {
      reply_error(res, 404, e.kind(), e.what());
    } catch (const ValidationError& e) {
      reply_error(res, 400, e.kind(), e.what());
    } catch (const ParseError& e) {
      reply_error(res, 400, e.kind(), e.what());
    } catch (const json::exception& e) {
      reply_error(res, 400, "parse", e.what());
    } catch (const Error& e) {
      reply_error(res, 500, e.kind(), e.what());
    } catch (const std::exception& e) {
      reply_error(res, 500, "internal", e.what());
    }
  };
}

json body_object(const httplib::Request& req) {
  json j = req.body.empty() ? json::object() : json::parse(req.body);
  if (!j.is_object()) throw ValidationError("request body must be a JSON object");
  return j;
}

std::optional<double> optional_number(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  if (!j.at(key).is_number()) throw ValidationError(std::string(key) + " must be a number");
  return j.at(key).get<double>();
}

std::string required_string(const json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_string()) throw ValidationError(std::string("missing string field ") + key);
  return j.at(key).get<std::string>();
}

}  // namespace

void install_routes(httplib::Server& server, SessionManager& m) {
  server.Post("/sessions", guarded([&m](const httplib::Request& req, httplib::Response& res) {
                const json b = body_object(req);
                std::optional<RewardScale> scale;
                if (b.contains("scale") && !b.at("scale").is_null()) scale = parse_scale(required_string(b, "scale"));
                const auto s = m.create(required_string(b, "checkpoint_id"), scale, optional_number(b, "target_return"));
                reply(res, 201,
                      {{"schema_version", kSchemaVersion},
                       {"id", s.id},
                       {"target_return", s.target_return},
                       {"scale", std::string(scale_name(s.scale))}});
              }));
  server.Post(R"(/sessions/([^/]+)/turns)", guarded([&m](const httplib::Request& req, httplib::Response& res) {
                const json b = body_object(req);
                const auto r = m.ingest(req.matches[1], required_string(b, "patient"), required_string(b, "therapist"));
                reply(res, 200, to_json(r, m.assets()));
              }));
  server.Patch(R"(/sessions/([^/]+))", guarded([&m](const httplib::Request& req, httplib::Response& res) {
                 const auto target = optional_number(body_object(req), "target_return");
                 if (!target) throw ValidationError("missing number field target_return");
                 reply(res, 200, to_json(m.set_target(req.matches[1], *target)));
               }));
  server.Get(R"(/sessions/([^/]+))", guarded([&m](const httplib::Request& req, httplib::Response& res) {
               reply(res, 200, to_json(m.get(req.matches[1])));
             }));
  server.Delete(R"(/sessions/([^/]+))", guarded([&m](const httplib::Request& req, httplib::Response& res) {
                  m.remove(req.matches[1]);
                  res.status = 204;
                }));
  server.Get("/checkpoints", guarded([&m](const httplib::Request&, httplib::Response& res) {
               reply(res, 200, checkpoints_json(m.assets()));
             }));
}

}  // namespace adt
