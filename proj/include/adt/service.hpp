#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "adt/alliance.hpp"
#include "adt/dtmodel.hpp"
#include "adt/embed.hpp"
#include "adt/topics.hpp"
#include "adt/trajectory.hpp"
#include "json.hpp"

namespace httplib {
class Server;
}

namespace adt {

inline constexpr int kSchemaVersion = 1;

// Metadata keys written by `adt train` and read back here.
inline constexpr const char* kMetaScale = "scale";
inline constexpr const char* kMetaTargetP90 = "target_return_p90";

struct ServiceCheckpoint {
  std::string id;
  DecisionTransformer<float> model;
  RewardScale scale = RewardScale::kFull;
  double target_p90 = 0;
  std::map<std::string, std::string> metadata;
};

// Read-only state shared by every session.
struct ServiceAssets {
  VocabEmbedding vectors;
  TopicModel topics;
  Inventory inventory;
  std::vector<std::vector<std::string>> top_words;
  std::map<std::string, ServiceCheckpoint> checkpoints;
};

ServiceCheckpoint make_service_checkpoint(std::string id, Checkpoint ckpt);
// Every *.ckpt file in `dir`, keyed by file stem.
std::map<std::string, ServiceCheckpoint> load_checkpoint_dir(const std::filesystem::path& dir);

struct IngestResult {
  std::size_t step_index = 0;
  RewardVector rewards;
  ActionId assigned_topic = 0;
  double remaining_target = 0;
  std::vector<double> recommendation;  // softmax over topics
};

struct SessionSnapshot {
  std::string id;
  std::string checkpoint_id;
  RewardScale scale = RewardScale::kFull;
  double target_return = 0;
  double remaining_target = 0;
  SessionTrajectory trajectory;
  std::vector<std::vector<double>> recommendations;
};

class SessionManager {
 public:
  explicit SessionManager(std::shared_ptr<const ServiceAssets> assets);

  // Scale defaults to, and must equal, the checkpoint's training scale.
  SessionSnapshot create(const std::string& checkpoint_id, std::optional<RewardScale> scale,
                         std::optional<double> target_return);
  IngestResult ingest(const std::string& id, const std::string& patient, const std::string& therapist);
  SessionSnapshot set_target(const std::string& id, double target_return);
  SessionSnapshot get(const std::string& id) const;
  void remove(const std::string& id);

  // The window the latest recommendation is computed from.
  static TrainingWindow live_window(const SessionTrajectory& traj, RewardScale scale, double target_return,
                                    std::size_t K, double return_scale);

  const ServiceAssets& assets() const { return *assets_; }

 private:
  struct Live {
    std::mutex mu;
    SessionSnapshot s;
  };
  std::shared_ptr<Live> find(const std::string& id) const;

  std::shared_ptr<const ServiceAssets> assets_;
  mutable std::mutex map_mu_;
  std::map<std::string, std::shared_ptr<Live>> sessions_;
  std::uint64_t next_id_ = 1;
};

nlohmann::json to_json(const IngestResult& r, const ServiceAssets& assets);
nlohmann::json to_json(const SessionSnapshot& s);
nlohmann::json checkpoints_json(const ServiceAssets& assets);

// Registers the HTTP routes. The manager must outlive the server.
void install_routes(httplib::Server& server, SessionManager& manager);

}  // namespace adt
