#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vqd/dsp/audio.hpp"

namespace vqd {

/// UTF-8 to code points; malformed input throws.
std::u32string utf8_decode(const std::string& s);
std::string utf8_encode(const std::u32string& s);

/// Levenshtein distance over code points.
std::size_t edit_distance(const std::u32string& a, const std::u32string& b);

/// Character error rate: edit distance over the reference length, in code
/// points, whitespace included. Not clipped at 1. Empty reference throws.
double cer(const std::string& reference, const std::string& hypothesis);

/// Lowercases, drops punctuation and collapses whitespace runs to one space.
std::string normalize_transcript(const std::string& s);

struct SampleRecord {
    std::string id;
    std::string audio;
    std::string text;
    std::string transcript_a, transcript_b;
    double dnsmos = 0, cer = 0, vad_proportion = 0, quality = 0;
    bool scored = false;
    std::string error;  // nonempty when scoring failed
};

nlohmann::json to_json(const SampleRecord& r);
/// Reads an input line ({"id","audio","text"}) or a scored one.
SampleRecord sample_record_from_json(const nlohmann::json& j);
std::vector<SampleRecord> read_records(const std::filesystem::path& path);
void write_records(const std::filesystem::path& path, const std::vector<SampleRecord>& records);

struct ScoreInput {
    const SampleRecord& record;
    const AudioBuffer& audio;
};

// Roles: two independent transcribers, a no-reference quality model, and a
// silence detector. Each must give the same answer for the same input.
struct ScorerSuite {
    std::function<std::string(const ScoreInput&)> transcriber_a;
    std::function<std::string(const ScoreInput&)> transcriber_b;
    std::function<double(const ScoreInput&)> quality_model;
    /// Defaults to the energy detector's silent-frame fraction.
    std::function<double(const ScoreInput&)> vad;
    /// Defaults to read_wav on the record's path resolved against audio_root.
    std::function<AudioBuffer(const SampleRecord&)> load_audio;
    std::filesystem::path audio_root;

    /// Answers looked up by record id; a missing id is a scorer failure.
    static ScorerSuite from_tables(std::map<std::string, std::string> transcripts_a,
                                   std::map<std::string, std::string> transcripts_b,
                                   std::map<std::string, double> quality);
};

enum class CerMode {
    /// CER between the two transcripts.
    agreement,
    /// Mean CER of both transcripts against the record's text.
    reference,
};

struct ScoreOptions {
    CerMode mode = CerMode::agreement;
    bool normalize = false;
};

/// Fills transcripts, cer, dnsmos, vad_proportion and quality = dnsmos - cer.
/// Any failure leaves scored = false with the reason in `error`.
SampleRecord score_record(const SampleRecord& record, const ScorerSuite& suite, const ScoreOptions& opt = {});

struct ScoreReport {
    std::vector<SampleRecord> records;  // input order, failures included
    std::size_t failed = 0;
};

/// Scores every record; `jobs` > 1 scores clips in parallel with the output
/// in input order.
ScoreReport score_dataset(const std::vector<SampleRecord>& records, const ScorerSuite& suite,
                          const ScoreOptions& opt = {}, std::size_t jobs = 1);

/// Drops unscored records and those with vad_proportion > threshold, sorts by
/// quality descending then id ascending, and keeps the first top_k.
std::vector<SampleRecord> select_records(const std::vector<SampleRecord>& scored, std::size_t top_k,
                                         double vad_threshold = 0.14);

struct FilterResult {
    std::vector<SampleRecord> selected;
    std::size_t failed = 0;
    std::size_t gated = 0;  // scored but over the silence threshold
    std::size_t scored = 0;
};

FilterResult filter_dataset(const std::vector<SampleRecord>& records, const ScorerSuite& suite, std::size_t top_k,
                            double vad_threshold = 0.14, const ScoreOptions& opt = {}, std::size_t jobs = 1);

// Batch file exchange with an external scorer: requests {"id","audio"} go to
// a JSONL file, the command runs once with {in} and {out} replaced by the two
// paths, and each response line carries {"id", "text"} or {"id", "score"}.
struct ExternalScorer {
    std::string command;
    std::filesystem::path work_dir;

    std::map<std::string, nlohmann::json> run(const std::vector<SampleRecord>& records,
                                              const std::string& tag) const;
};

/// Suite whose transcribers and quality model are external scorers.
ScorerSuite external_suite(const std::vector<SampleRecord>& records, const ExternalScorer& transcriber_a,
                           const ExternalScorer& transcriber_b, const ExternalScorer& quality);

}  // namespace vqd
