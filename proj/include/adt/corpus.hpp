#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace adt {

enum class Condition { kDepression, kAnxiety, kSchizophrenia, kSuicidal, kOther };
enum class Speaker { kPatient, kTherapist };

std::string_view condition_name(Condition c);
// Unknown names map to kOther.
Condition parse_condition(std::string_view name);

struct Utterance {
  Speaker speaker;
  std::string text;
};

struct Transcript {
  std::string session_id;
  Condition condition = Condition::kOther;
  std::vector<Utterance> turns;
};

// One patient utterance followed by the therapist's response.
struct TurnPair {
  std::string session_id;
  std::size_t index = 0;
  std::string patient_text;
  std::string therapist_text;
};

// Turn-pairs of one session, in session order.
struct SessionPairs {
  std::string session_id;
  Condition condition = Condition::kOther;
  std::vector<TurnPair> pairs;
};

Transcript parse_transcript_line(std::string_view line, std::size_t line_no);
std::vector<Transcript> load_transcripts(const std::filesystem::path& path);
void write_transcripts(const std::vector<Transcript>& transcripts, const std::filesystem::path& path);

// Merges same-speaker runs, then pairs each patient run with the therapist run
// that follows it. Leading therapist runs and a trailing patient run are
// dropped.
std::vector<TurnPair> segment_turn_pairs(const Transcript& t);
std::vector<SessionPairs> segment_all(const std::vector<Transcript>& transcripts);

// Lowercases ASCII and splits on maximal runs of non-alphanumeric bytes.
// Bytes >= 0x80 count as word characters so UTF-8 letters stay intact.
std::vector<std::string> tokenize(std::string_view text);

// Turn-pair cache written by `adt ingest`: one session per line.
void write_session_pairs(const std::vector<SessionPairs>& sessions, const std::filesystem::path& path);
std::vector<SessionPairs> load_session_pairs(const std::filesystem::path& path);

}  // namespace adt
