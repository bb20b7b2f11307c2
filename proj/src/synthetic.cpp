#include "adt/synthetic.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <limits>

#include "adt/error.hpp"
#include "adt/rng.hpp"
#include "json.hpp"

namespace adt {

namespace {

const std::vector<std::vector<std::string>> kTopicWords = {
    {"family", "mother", "father", "sister", "brother", "parents", "home", "kids", "relatives", "holiday", "dinner",
     "siblings"},
    {"job", "boss", "office", "career", "coworkers", "deadline", "salary", "meeting", "manager", "shift", "promotion",
     "project"},
    {"sleep", "insomnia", "night", "tired", "bed", "nightmares", "rest", "awake", "nap", "dreams", "exhausted",
     "morning"},
    {"medication", "pills", "dose", "prescription", "doctor", "pharmacy", "refill", "dosage", "tablets",
     "psychiatrist", "sideeffects", "meds"},
    {"partner", "boyfriend", "girlfriend", "marriage", "divorce", "dating", "wife", "husband", "breakup", "romance",
     "jealousy", "wedding"},
    {"sad", "anxious", "crying", "hopeless", "angry", "lonely", "empty", "numb", "worried", "panic", "irritable",
     "moody"},
    {"school", "classes", "exams", "teacher", "homework", "grades", "college", "semester", "studying", "lecture",
     "campus", "tuition"},
    {"health", "pain", "exercise", "diet", "weight", "illness", "hospital", "symptoms", "fitness", "surgery",
     "headaches", "appetite"},
};

const std::vector<std::string> kFiller = {"i", "think", "really", "just", "maybe", "about", "it", "that",
                                          "today", "week", "so", "well", "lately", "also"};

// Patient replies after a favored move, by alliance subscale.
const std::vector<std::vector<std::string>> kPositive = {
    {"we agree on what steps to work on", "the tasks we do feel useful and clear",
     "our sessions give me clear steps to work on"},
    {"i feel understood and cared for", "i trust you and feel respected", "my therapist really understood me"},
    {"we agree on the goals i want to reach", "we are working toward goals that matter to me",
     "i want to reach that goal"},
};

const std::vector<std::string> kNegative = {"i feel confused and stuck", "this seems pointless",
                                            "you feel distant right now", "i am unsure why we talk about this",
                                            "i disagree with where this is going"};

const std::vector<std::string> kOpeners = {"hello again", "thanks for seeing me", "it has been a long week"};

constexpr Condition kConditions[] = {Condition::kDepression, Condition::kAnxiety, Condition::kSchizophrenia,
                                     Condition::kSuicidal};

std::string topic_word(std::size_t topic, std::size_t i) {
  if (topic < kTopicWords.size()) return kTopicWords[topic][i % kTopicWords[topic].size()];
  return "topic" + std::to_string(topic + 1) + "word" + std::to_string(i % 12 + 1);
}

template <typename V>
const auto& pick(Rng& rng, const V& v) {
  return v[rng.below(v.size())];
}

void append(std::string& s, const std::string& w) {
  if (!s.empty()) s += ' ';
  s += w;
}

std::string topic_words(Rng& rng, std::size_t topic, std::size_t lo, std::size_t hi) {
  std::string s;
  const std::size_t n = lo + rng.below(hi - lo + 1);
  for (std::size_t i = 0; i < n; ++i) append(s, topic_word(topic, rng.below(12)));
  return s;
}

}  // namespace

SyntheticCorpus generate_synthetic(const SyntheticOptions& opt) {
  if (opt.n_sessions < 2) throw ValidationError("gen-synthetic needs at least 2 sessions");
  if (opt.turns_per_session < 1) throw ValidationError("gen-synthetic needs at least 1 turn per session");
  if (opt.n_topics < 2) throw ValidationError("gen-synthetic needs at least 2 topics");
  if (!(opt.chain_prob >= 0 && opt.chain_prob <= 1)) throw ValidationError("chain_prob must lie in [0, 1]");

  Rng rng(opt.seed);
  const std::size_t k = opt.n_topics;
  SyntheticCorpus out;
  std::vector<ActionId> all(k);
  for (std::size_t i = 0; i < k; ++i) all[i] = static_cast<ActionId>(i);
  rng.shuffle(all);
  out.good_topics.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k / 2));
  std::sort(out.good_topics.begin(), out.good_topics.end());
  std::vector<bool> good(k, false);
  for (auto g : out.good_topics) good[g] = true;

  for (std::size_t s = 0; s < opt.n_sessions; ++s) {
    char id[32];
    std::snprintf(id, sizeof id, "syn%04zu", s + 1);
    Transcript tr{id, kConditions[s % 4], {}};
    PlantedSession ps{id, rng.below(2) ? 1 : -1, {}, {}};
    std::size_t cur = rng.below(k);
    for (std::size_t t = 0; t < opt.turns_per_session; ++t) {
      bool favored = false;
      if (t > 0) {
        const bool chain = rng.uniform() < opt.chain_prob;
        const std::size_t next = chain ? (cur + k + static_cast<std::size_t>(k + ps.direction)) % k : rng.below(k);
        favored = chain && good[next];
        cur = next;
      }
      ps.topics.push_back(static_cast<ActionId>(cur));
      ps.favored.push_back(favored);

      std::string reply;
      if (t == 0) {
        reply = pick(rng, kOpeners);
      } else if (favored) {
        reply = pick(rng, pick(rng, kPositive));
      } else {
        reply = pick(rng, kNegative);
      }
      std::string patient = reply;
      for (std::size_t i = rng.below(3); i > 0; --i) append(patient, pick(rng, kFiller));
      append(patient, topic_words(rng, cur, 2, 4));
      std::string therapist = topic_words(rng, cur, 8, 12);
      if (rng.below(2)) append(therapist, pick(rng, kFiller));

      if (rng.below(10) == 0) {
        // Split the patient turn into two consecutive utterances.
        tr.turns.push_back({Speaker::kPatient, reply});
        tr.turns.push_back({Speaker::kPatient, patient.substr(reply.size() + 1)});
      } else {
        tr.turns.push_back({Speaker::kPatient, patient});
      }
      tr.turns.push_back({Speaker::kTherapist, therapist});
    }
    out.transcripts.push_back(std::move(tr));
    out.planted.push_back(std::move(ps));
  }
  return out;
}

void write_planted(const std::vector<PlantedSession>& planted, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  for (const auto& p : planted) {
    nlohmann::json j = {{"session_id", p.session_id},
                        {"direction", p.direction},
                        {"topics", p.topics},
                        {"favored", p.favored}};
    f << j.dump() << '\n';
  }
  if (!f) throw IoError("write failed for " + path.string());
}

std::vector<PlantedSession> load_planted(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::vector<PlantedSession> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      PlantedSession p;
      p.session_id = j.at("session_id").get<std::string>();
      p.direction = j.at("direction").get<int>();
      p.topics = j.at("topics").get<std::vector<ActionId>>();
      p.favored = j.at("favored").get<std::vector<std::uint8_t>>();
      out.push_back(std::move(p));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  return out;
}

double relabeled_agreement(const std::vector<ActionId>& predicted, const std::vector<ActionId>& truth,
                           std::size_t k) {
  if (predicted.size() != truth.size()) throw ValidationError("label sequences differ in length");
  if (predicted.empty()) throw ValidationError("no labels to compare");
  // cost[i][j] = -count(predicted == i, truth == j); minimize.
  const std::size_t n = k;
  std::vector<std::vector<double>> cost(n + 1, std::vector<double>(n + 1, 0.0));
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (predicted[i] >= k || truth[i] >= k) throw ValidationError("label out of range");
    cost[predicted[i] + 1][truth[i] + 1] -= 1.0;
  }
  // Hungarian algorithm, O(n^3), 1-based potentials.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1), v(n + 1);
  std::vector<std::size_t> p(n + 1), way(n + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0][j] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  double matched = 0;
  for (std::size_t j = 1; j <= n; ++j) matched -= cost[p[j]][j];
  return matched / static_cast<double>(predicted.size());
}

}  // namespace adt
