#include "adt/corpus.hpp"

#include <fstream>
#include <unordered_set>

#include "adt/error.hpp"
#include "json.hpp"

namespace adt {

using nlohmann::json;

namespace {

constexpr std::string_view kConditionNames[] = {"depression", "anxiety", "schizophrenia",
                                                 "suicidal", "other"};

bool is_word_byte(unsigned char c) {
  return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c >= 0x80;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return in;
}

}  // namespace

std::string_view condition_name(Condition c) { return kConditionNames[static_cast<int>(c)]; }

Condition parse_condition(std::string_view name) {
  for (int i = 0; i < 4; ++i)
    if (kConditionNames[i] == name) return static_cast<Condition>(i);
  return Condition::kOther;
}

Transcript parse_transcript_line(std::string_view line, std::size_t line_no) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("invalid JSON: ") + e.what(), line_no);
  }
  if (!j.is_object()) throw ParseError("record is not an object", line_no);
  Transcript t;
  try {
    if (!j.contains("session_id")) throw ParseError("missing field session_id", line_no);
    if (!j.contains("turns")) throw ParseError("missing field turns", line_no);
    t.session_id = j.at("session_id").get<std::string>();
    if (t.session_id.empty()) throw ParseError("empty session_id", line_no);
    t.condition = parse_condition(j.value("condition", std::string("other")));
    const json& turns = j.at("turns");
    if (!turns.is_array()) throw ParseError("turns is not an array", line_no);
    for (const json& u : turns) {
      const auto speaker = u.at("speaker").get<std::string>();
      Utterance utt;
      if (speaker == "patient") {
        utt.speaker = Speaker::kPatient;
      } else if (speaker == "therapist") {
        utt.speaker = Speaker::kTherapist;
      } else {
        throw ParseError("unknown speaker '" + speaker + "'", line_no);
      }
      if (!u.contains("text")) throw ParseError("turn missing text", line_no);
      utt.text = u.at("text").get<std::string>();
      t.turns.push_back(std::move(utt));
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("schema: ") + e.what(), line_no);
  }
  return t;
}

std::vector<Transcript> load_transcripts(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::vector<Transcript> out;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Transcript t = parse_transcript_line(line, line_no);
    if (!seen.insert(t.session_id).second)
      throw ValidationError("duplicate session_id '" + t.session_id + "' at line " +
                            std::to_string(line_no));
    out.push_back(std::move(t));
  }
  return out;
}

void write_transcripts(const std::vector<Transcript>& transcripts, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& t : transcripts) {
    json turns = json::array();
    for (const auto& u : t.turns)
      turns.push_back({{"speaker", u.speaker == Speaker::kPatient ? "patient" : "therapist"},
                       {"text", u.text}});
    json j = {{"session_id", t.session_id},
              {"condition", std::string(condition_name(t.condition))},
              {"turns", std::move(turns)}};
    out << j.dump() << '\n';
  }
}

std::vector<TurnPair> segment_turn_pairs(const Transcript& t) {
  std::vector<Utterance> merged;
  for (const auto& u : t.turns) {
    if (!merged.empty() && merged.back().speaker == u.speaker) {
      merged.back().text += ' ';
      merged.back().text += u.text;
    } else {
      merged.push_back(u);
    }
  }
  std::vector<TurnPair> pairs;
  std::size_t i = 0;
  if (!merged.empty() && merged.front().speaker == Speaker::kTherapist) i = 1;
  // After merging, speakers alternate, so from a patient run every even
  // offset is a patient run.
  for (; i + 1 < merged.size(); i += 2) {
    pairs.push_back({t.session_id, pairs.size(), merged[i].text, merged[i + 1].text});
  }
  return pairs;
}

std::vector<SessionPairs> segment_all(const std::vector<Transcript>& transcripts) {
  std::vector<SessionPairs> out;
  out.reserve(transcripts.size());
  for (const auto& t : transcripts) out.push_back({t.session_id, t.condition, segment_turn_pairs(t)});
  return out;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (is_word_byte(c)) {
      cur.push_back((c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : ch);
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

void write_session_pairs(const std::vector<SessionPairs>& sessions, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& s : sessions) {
    json pairs = json::array();
    for (const auto& p : s.pairs) pairs.push_back({{"patient", p.patient_text}, {"therapist", p.therapist_text}});
    json j = {{"session_id", s.session_id},
              {"condition", std::string(condition_name(s.condition))},
              {"pairs", std::move(pairs)}};
    out << j.dump() << '\n';
  }
}

std::vector<SessionPairs> load_session_pairs(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::vector<SessionPairs> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      SessionPairs s;
      s.session_id = j.at("session_id").get<std::string>();
      s.condition = parse_condition(j.value("condition", std::string("other")));
      for (const auto& p : j.at("pairs"))
        s.pairs.push_back({s.session_id, s.pairs.size(), p.at("patient").get<std::string>(),
                           p.at("therapist").get<std::string>()});
      out.push_back(std::move(s));
    } catch (const json::exception& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  return out;
}

}  // namespace adt
