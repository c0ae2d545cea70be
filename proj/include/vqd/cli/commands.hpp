#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vqd/corpus/synth.hpp"
#include "vqd/datafilter/filter.hpp"
#include "vqd/distill/dms.hpp"
#include "vqd/lpo/lpo.hpp"

namespace vqd {

/// Environment variable naming the default config file.
inline constexpr const char* kConfigEnv = "VQDISTILL_CONFIG";

struct FilterSettings {
    /// Unset keeps every record that passes the silence gate.
    std::optional<std::size_t> top_k;
    double vad_threshold = 0.14;
    CerMode mode = CerMode::agreement;
    bool normalize = false;
    /// JSON file {"transcripts_a": {id: text}, "transcripts_b": {...}, "quality": {id: score}}.
    std::string tables;
    /// External scorer commands with {in} and {out} placeholders; used when tables is empty.
    std::string transcriber_a, transcriber_b, quality;
    /// Audio paths resolve against this; empty means the records file's directory.
    std::string audio_root;
};

struct RunConfig {
    /// When set, overrides corpus, codec and training seeds.
    std::optional<std::uint64_t> seed;
    std::size_t jobs = 1;
    SynthConfig synth;
    DistillPlan distill = DistillPlan::desk();
    FilterSettings filter;
    LpoHyper lpo;

    /// Pushes `seed` into every seeded component: teacher and training runs
    /// get it as is, the student gets seed + 1 to keep its quantizer distinct.
    void resolve();
    void validate() const;
};

nlohmann::json to_json(const FilterSettings& s);
FilterSettings filter_settings_from_json(const nlohmann::json& j, FilterSettings base = {},
                                         const std::string& context = "filter");
nlohmann::json to_json(const SynthConfig& c);
SynthConfig synth_config_from_json(const nlohmann::json& j, SynthConfig base = {}, const std::string& context = "synth");
nlohmann::json to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base = {});

/// Reads `path`, or the file named by the config environment variable when
/// `path` is empty, or returns defaults when neither is given.
RunConfig load_run_config(const std::filesystem::path& path = {});

/// Failure carrying a machine-readable kind for the error document.
class CommandError : public std::runtime_error {
public:
    CommandError(std::string kind, const std::string& message) : std::runtime_error(message), kind_(std::move(kind)) {}
    const std::string& kind() const { return kind_; }

private:
    std::string kind_;
};

nlohmann::json error_json(const std::string& command, const std::string& kind, const std::string& message);

/// Runs fn(worker, i) for i in [0, n) on `jobs` threads; each worker takes
/// indices in a fixed stride so per-index outputs do not depend on timing.
void parallel_indices(std::size_t n, std::size_t jobs, const std::function<void(std::size_t, std::size_t)>& fn);

nlohmann::json cmd_synth_corpus(const RunConfig& cfg, const std::filesystem::path& out_dir);

nlohmann::json cmd_train_teacher(const RunConfig& cfg, const std::filesystem::path& manifest,
                                 const std::filesystem::path& out_dir, const StepCallback& on_step = {});

/// Without `teacher_ckpt` both phases run; with it only the student phase does.
nlohmann::json cmd_distill(const RunConfig& cfg, const std::filesystem::path& manifest,
                           const std::filesystem::path& out_dir, const std::filesystem::path& teacher_ckpt = {},
                           const DmsCallbacks& callbacks = {});

/// One line per file: {"id", "codes"} with codes[g * n_residual + r][frame].
nlohmann::json cmd_encode(const RunConfig& cfg, const std::filesystem::path& model,
                          const std::vector<std::filesystem::path>& wavs, const std::filesystem::path& out_jsonl);

nlohmann::json codes_line(const std::string& id, const std::vector<std::vector<std::vector<std::uint32_t>>>& codes);
std::vector<std::vector<std::vector<std::uint32_t>>> codes_from_line(const nlohmann::json& line, const CodecSpec& spec);

/// Writes <id>.wav for every line of the codes file.
nlohmann::json cmd_decode(const RunConfig& cfg, const std::filesystem::path& model, const std::filesystem::path& codes,
                          const std::filesystem::path& out_dir);

/// Token rate and bandwidth of a spec.
nlohmann::json rate_report(const CodecSpec& spec);
/// Rates of a named profile ("full" or "desk"); the full profile also
/// carries the rounded figures it is usually quoted with.
nlohmann::json profile_rate_report(const std::string& profile);

/// Mel distance, perplexity and usage over a manifest plus the rate report.
/// Entries that fail to load are listed under "errors" and skipped.
nlohmann::json cmd_eval_codec(const RunConfig& cfg, const std::filesystem::path& model,
                              const std::filesystem::path& manifest);

/// Scores and selects records; writes the curated records to out_path and,
/// when scored_path is set, every scored record.
nlohmann::json cmd_filter(const RunConfig& cfg, const std::filesystem::path& records, const std::filesystem::path& out_path,
                          const std::filesystem::path& scored_path = {});

nlohmann::json cmd_lpo(const RunConfig& cfg, const std::filesystem::path& pairs);

}  // namespace vqd
