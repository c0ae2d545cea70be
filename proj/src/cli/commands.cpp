#include "vqd/cli/commands.hpp"

#include <atomic>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <mutex>
#include <thread>

#include "vqd/numerics/checkpoint.hpp"
#include "vqd/util/strict_json.hpp"

namespace vqd {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string mode_name(CerMode m) { return m == CerMode::agreement ? "agreement" : "reference"; }

CerMode parse_mode(const std::string& s, const std::string& where) {
    if (s == "agreement") return CerMode::agreement;
    if (s == "reference") return CerMode::reference;
    throw std::invalid_argument(where + ": expected 'agreement' or 'reference', got '" + s + "'");
}

void write_json_file(const fs::path& p, const json& j) {
    std::ofstream f(p);
    if (!f) throw CommandError("io", "cannot write " + p.string());
    f << j.dump(2) << "\n";
    if (!f) throw CommandError("io", "write failed: " + p.string());
}

std::vector<AudioBuffer> load_corpus(const fs::path& manifest) {
    if (!fs::exists(manifest)) throw CommandError("io", "manifest " + manifest.string() + " does not exist");
    const auto entries = read_manifest(manifest);
    if (entries.empty()) throw CommandError("input", "manifest " + manifest.string() + " lists no clips");
    return load_manifest_audio(manifest, entries);
}

fs::path resolve_against(const fs::path& base, const std::string& p) {
    const fs::path path(p);
    return path.is_absolute() ? path : base / path;
}

template <typename V>
std::optional<V> nullable(const json& v, const std::string& where) {
    if (v.is_null()) return std::nullopt;
    if (!v.is_number_unsigned()) throw std::invalid_argument(where + ": expected a non-negative integer or null");
    return v.get<V>();
}

std::string stem_id(const fs::path& p) { return p.stem().string(); }

void require_file(const fs::path& p, const std::string& what) {
    if (!fs::exists(p)) throw CommandError("io", what + " " + p.string() + " does not exist");
}

// Mel scales recorded with the checkpoint's training run, if any.
std::vector<MelScale> eval_scales(const Checkpoint& ckpt, const RunConfig& cfg) {
    const auto& meta = ckpt.metadata;
    if (meta.contains("training") && meta["training"].contains("config")) {
        return train_config_from_json(meta["training"]["config"]).mel_scales;
    }
    return cfg.distill.teacher_train.mel_scales;
}

}  // namespace

void RunConfig::resolve() {
    if (!seed) return;
    const std::uint64_t s = *seed;
    synth.seed = s;
    distill.teacher.seed = s;
    distill.student.seed = s + 1;
    distill.teacher_train.seed = s;
    distill.student_train.seed = s;
}

void RunConfig::validate() const {
    if (jobs == 0) throw std::invalid_argument("jobs must be at least 1");
    synth.validate();
    distill.validate();
    distill.teacher_train.validate();
    distill.student_train.validate();
    lpo.validate();
    if (filter.top_k && *filter.top_k == 0) throw std::invalid_argument("filter.top_k must be positive");
    if (!(filter.vad_threshold >= 0.0 && filter.vad_threshold <= 1.0)) {
        throw std::invalid_argument("filter.vad_threshold must lie in [0, 1]");
    }
}

json to_json(const FilterSettings& s) {
    return json{{"top_k", s.top_k ? json(*s.top_k) : json(nullptr)},
                {"vad_threshold", s.vad_threshold},
                {"mode", mode_name(s.mode)},
                {"normalize", s.normalize},
                {"tables", s.tables},
                {"transcriber_a", s.transcriber_a},
                {"transcriber_b", s.transcriber_b},
                {"quality", s.quality},
                {"audio_root", s.audio_root}};
}

FilterSettings filter_settings_from_json(const json& j, FilterSettings base, const std::string& context) {
    StrictReader r(j, context);
    r.section("top_k", [&](const json& v, const std::string& ctx) { base.top_k = nullable<std::size_t>(v, ctx); });
    std::string mode = mode_name(base.mode);
    r.get("vad_threshold", base.vad_threshold)
        .get("mode", mode)
        .get("normalize", base.normalize)
        .get("tables", base.tables)
        .get("transcriber_a", base.transcriber_a)
        .get("transcriber_b", base.transcriber_b)
        .get("quality", base.quality)
        .get("audio_root", base.audio_root);
    r.finish();
    base.mode = parse_mode(mode, context + ".mode");
    return base;
}

json to_json(const SynthConfig& c) {
    return json{{"n_clips", c.n_clips}, {"duration", c.duration}, {"sample_rate", c.sample_rate}, {"seed", c.seed}};
}

SynthConfig synth_config_from_json(const json& j, SynthConfig base, const std::string& context) {
    StrictReader r(j, context);
    r.get("n_clips", base.n_clips).get("duration", base.duration).get("sample_rate", base.sample_rate).get("seed", base.seed);
    r.finish();
    return base;
}

json to_json(const RunConfig& c) {
    return json{{"seed", c.seed ? json(*c.seed) : json(nullptr)},
                {"jobs", c.jobs},
                {"synth", to_json(c.synth)},
                {"distill", to_json(c.distill)},
                {"filter", to_json(c.filter)},
                {"lpo", to_json(c.lpo)}};
}

RunConfig run_config_from_json(const json& j, RunConfig base) {
    StrictReader r(j, "");
    r.section("seed", [&](const json& v, const std::string& ctx) { base.seed = nullable<std::uint64_t>(v, ctx); });
    r.get("jobs", base.jobs);
    r.section("synth", [&](const json& s, const std::string& ctx) { base.synth = synth_config_from_json(s, base.synth, ctx); });
    r.section("distill",
              [&](const json& s, const std::string& ctx) { base.distill = distill_plan_from_json(s, base.distill, ctx); });
    r.section("filter",
              [&](const json& s, const std::string& ctx) { base.filter = filter_settings_from_json(s, base.filter, ctx); });
    r.section("lpo", [&](const json& s, const std::string& ctx) { base.lpo = lpo_hyper_from_json(s, base.lpo, ctx); });
    r.finish();
    return base;
}

RunConfig load_run_config(const fs::path& path) {
    fs::path p = path;
    if (p.empty()) {
        const char* env = std::getenv(kConfigEnv);
        if (env && *env) p = env;
    }
    if (p.empty()) return {};
    std::ifstream f(p);
    if (!f) throw CommandError("config", "cannot read config file " + p.string());
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw CommandError("config", "config file " + p.string() + " is not valid JSON: " + e.what());
    }
    try {
        return run_config_from_json(j);
    } catch (const std::invalid_argument& e) {
        throw CommandError("config", p.string() + ": " + e.what());
    }
}

json error_json(const std::string& command, const std::string& kind, const std::string& message) {
    return json{{"error", {{"command", command}, {"kind", kind}, {"message", message}}}};
}

void parallel_indices(std::size_t n, std::size_t jobs, const std::function<void(std::size_t, std::size_t)>& fn) {
    jobs = std::max<std::size_t>(1, std::min(jobs, n));
    if (jobs == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(0, i);
        return;
    }
    std::vector<std::exception_ptr> errors(jobs);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < jobs; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < n; i += jobs) fn(w, i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

json cmd_synth_corpus(const RunConfig& cfg, const fs::path& out_dir) {
    cfg.synth.validate();
    const auto entries = write_synth_corpus(out_dir, cfg.synth);
    std::map<std::string, std::size_t> kinds;
    for (const auto& e : entries) {
        for (const auto& ev : e.extra["events"]) kinds[ev["kind"].get<std::string>()] += 1;
    }
    return json{{"command", "synth-corpus"},
                {"out_dir", out_dir.string()},
                {"manifest", (out_dir / "manifest.jsonl").string()},
                {"clips", entries.size()},
                {"events", kinds},
                {"synth", to_json(cfg.synth)}};
}

json cmd_train_teacher(const RunConfig& cfg, const fs::path& manifest, const fs::path& out_dir,
                       const StepCallback& on_step) {
    cfg.validate();
    const auto corpus = load_corpus(manifest);
    fs::create_directories(out_dir);
    DistillPlan plan = cfg.distill;
    plan.corpus = manifest.string();
    write_json_file(out_dir / "config.json", to_json(cfg));
    const auto phase = train_teacher_phase(plan, corpus, out_dir, on_step);
    json out = phase.to_json(plan.teacher);
    out["command"] = "train-teacher";
    write_json_file(out_dir / "teacher_summary.json", out);
    return out;
}

json cmd_distill(const RunConfig& cfg, const fs::path& manifest, const fs::path& out_dir, const fs::path& teacher_ckpt,
                 const DmsCallbacks& callbacks) {
    cfg.validate();
    const auto corpus = load_corpus(manifest);
    fs::create_directories(out_dir);
    DistillPlan plan = cfg.distill;
    plan.corpus = manifest.string();
    write_json_file(out_dir / "config.json", to_json(cfg));
    json out;
    if (teacher_ckpt.empty()) {
        out = run_dms(plan, corpus, out_dir, callbacks).summary;
    } else {
        const auto student = train_student_phase(plan, corpus, teacher_ckpt, out_dir, callbacks.student_step);
        out = json{{"teacher_checkpoint", teacher_ckpt.string()},
                   {"student", student.to_json(plan.student)},
                   {"plan", to_json(plan)}};
        out["student"]["frozen_inherited"] = plan.freeze_inherited;
        write_json_file(out_dir / "summary.json", out);
    }
    out["command"] = "distill";
    return out;
}

json codes_line(const std::string& id, const std::vector<std::vector<std::vector<std::uint32_t>>>& codes) {
    json rows = json::array();
    for (const auto& group : codes) {
        for (const auto& stage : group) rows.push_back(stage);
    }
    return json{{"id", id}, {"codes", rows}};
}

std::vector<std::vector<std::vector<std::uint32_t>>> codes_from_line(const json& line, const CodecSpec& spec) {
    if (!line.is_object() || !line.contains("id") || !line.contains("codes") || !line["codes"].is_array()) {
        throw std::invalid_argument("codes line needs \"id\" and \"codes\"");
    }
    const auto& rows = line["codes"];
    if (rows.size() != spec.n_group * spec.n_residual) {
        throw std::invalid_argument("codes line '" + line["id"].get<std::string>() + "' has " + std::to_string(rows.size()) +
                                    " rows; model expects " + std::to_string(spec.n_group * spec.n_residual));
    }
    std::vector<std::vector<std::vector<std::uint32_t>>> out(spec.n_group, std::vector<std::vector<std::uint32_t>>(spec.n_residual));
    std::size_t frames = rows.empty() ? 0 : rows[0].size();
    for (std::size_t c = 0; c < rows.size(); ++c) {
        auto& dst = out[c / spec.n_residual][c % spec.n_residual];
        dst = rows[c].get<std::vector<std::uint32_t>>();
        if (dst.size() != frames) throw std::invalid_argument("codes rows differ in length");
        for (auto v : dst) {
            if (v >= spec.n_codes) {
                throw std::invalid_argument("code " + std::to_string(v) + " out of range for " +
                                            std::to_string(spec.n_codes) + " codes");
            }
        }
    }
    return out;
}

json cmd_encode(const RunConfig& cfg, const fs::path& model, const std::vector<fs::path>& wavs, const fs::path& out_jsonl) {
    require_file(model, "model");
    if (wavs.empty()) throw CommandError("input", "no input files");
    for (const auto& w : wavs) require_file(w, "audio");
    const Checkpoint ckpt = load_checkpoint(model);
    const std::size_t jobs = std::max<std::size_t>(1, std::min(cfg.jobs, wavs.size()));
    std::vector<std::unique_ptr<CodecModel<float>>> models;
    for (std::size_t w = 0; w < jobs; ++w) models.push_back(codec_from_checkpoint(ckpt));
    std::vector<json> lines(wavs.size());
    std::vector<std::size_t> frames(wavs.size());
    parallel_indices(wavs.size(), jobs, [&](std::size_t w, std::size_t i) {
        const auto codes = models[w]->tokenize(read_wav(wavs[i]));
        frames[i] = codes.empty() || codes[0].empty() ? 0 : codes[0][0].size();
        lines[i] = codes_line(stem_id(wavs[i]), codes);
    });
    std::ofstream f(out_jsonl);
    if (!f) throw CommandError("io", "cannot write " + out_jsonl.string());
    std::size_t total = 0;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        f << lines[i].dump() << "\n";
        total += frames[i];
    }
    const CodecSpec& spec = models[0]->spec();
    return json{{"command", "encode"},
                {"model", model.string()},
                {"out", out_jsonl.string()},
                {"files", wavs.size()},
                {"frames", total},
                {"codebooks", spec.n_group * spec.n_residual},
                {"n_codes", spec.n_codes}};
}

json cmd_decode(const RunConfig&, const fs::path& model, const fs::path& codes, const fs::path& out_dir) {
    require_file(model, "model");
    require_file(codes, "codes file");
    auto codec = load_codec(model);
    std::ifstream f(codes);
    fs::create_directories(out_dir);
    std::string line;
    std::size_t n = 0, lineno = 0, samples = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const json j = json::parse(line);
            const auto idx = codes_from_line(j, codec->spec());
            const AudioBuffer audio = codec->detokenize(idx);
            write_wav(out_dir / (j["id"].get<std::string>() + ".wav"), audio);
            samples += audio.size();
            ++n;
        } catch (const std::exception& e) {
            throw CommandError("input", codes.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return json{{"command", "decode"}, {"model", model.string()}, {"out_dir", out_dir.string()}, {"files", n}, {"samples", samples}};
}

json rate_report(const CodecSpec& spec) {
    return json{{"sample_rate", spec.mel.sample_rate},
                {"hop", spec.mel.hop},
                {"codebooks", spec.n_group * spec.n_residual},
                {"n_codes", spec.n_codes},
                {"tokens_per_second", spec.tokens_per_second()},
                {"bandwidth_bps", spec.bandwidth_bps()}};
}

json profile_rate_report(const std::string& profile) {
    if (profile == "full") {
        json r = rate_report(CodecSpec::full_student({}));
        r["profile"] = "full";
        r["reported"] = {{"tokens_per_second", 93}, {"bandwidth_bps", 1300}};
        return r;
    }
    if (profile == "desk") {
        json r = rate_report(CodecSpec::desk_student({}));
        r["profile"] = "desk";
        return r;
    }
    throw CommandError("input", "unknown profile '" + profile + "'; expected 'full' or 'desk'");
}

json cmd_eval_codec(const RunConfig& cfg, const fs::path& model, const fs::path& manifest) {
    require_file(model, "model");
    require_file(manifest, "manifest");
    const Checkpoint ckpt = load_checkpoint(model);
    const auto entries = read_manifest(manifest);
    const auto base = manifest.parent_path();

    const std::size_t jobs = std::max<std::size_t>(1, std::min(cfg.jobs, std::max<std::size_t>(entries.size(), 1)));
    std::vector<std::unique_ptr<CodecModel<float>>> models;
    for (std::size_t w = 0; w < jobs; ++w) models.push_back(codec_from_checkpoint(ckpt));
    const CodecSpec spec = models[0]->spec();
    const auto scales = eval_scales(ckpt, cfg);

    struct ClipEval {
        bool ok = false;
        std::string error;
        double mel = 0;
        std::vector<Histogram> hist;
        std::size_t frames = 0;
    };
    std::vector<ClipEval> evals(entries.size());
    parallel_indices(entries.size(), jobs, [&](std::size_t w, std::size_t i) {
        ClipEval& e = evals[i];
        try {
            const fs::path p = resolve_against(base, entries[i].audio);
            if (!fs::exists(p)) throw std::runtime_error("audio file " + p.string() + " does not exist");
            const AudioBuffer audio = read_wav(p);
            e.mel = evaluate_mel(*models[w], {audio}, scales);
            const auto codes = models[w]->tokenize(audio);
            e.hist.assign(spec.n_group * spec.n_residual, Histogram(spec.n_codes, 0));
            for (std::size_t g = 0; g < codes.size(); ++g) {
                for (std::size_t r = 0; r < codes[g].size(); ++r) {
                    for (auto c : codes[g][r]) e.hist[g * spec.n_residual + r][c] += 1;
                    e.frames = codes[g][r].size();
                }
            }
            e.ok = true;
        } catch (const std::exception& ex) {
            e.error = ex.what();
        }
    });

    json errors = json::array();
    std::vector<Histogram> hist;
    double mel = 0;
    std::size_t ok = 0, frames = 0;
    for (std::size_t i = 0; i < evals.size(); ++i) {
        const auto& e = evals[i];
        if (!e.ok) {
            errors.push_back({{"id", entries[i].id}, {"error", e.error}});
            continue;
        }
        mel += e.mel;
        frames += e.frames;
        accumulate(hist, e.hist);
        ++ok;
    }
    if (ok == 0) throw CommandError("input", "no clip of " + manifest.string() + " could be evaluated");
    json out = rate_report(spec);
    out["command"] = "eval-codec";
    out["model"] = model.string();
    out["manifest"] = manifest.string();
    out["clips"] = ok;
    out["failed"] = errors.size();
    out["errors"] = errors;
    out["frames"] = frames;
    out["mel_distance"] = mel / static_cast<double>(ok);
    out["perplexity"] = mean_perplexity(hist);
    out["usage"] = mean_usage(hist);
    return out;
}

json cmd_filter(const RunConfig& cfg, const fs::path& records_path, const fs::path& out_path, const fs::path& scored_path) {
    require_file(records_path, "records file");
    const FilterSettings& s = cfg.filter;
    const auto records = read_records(records_path);
    ScorerSuite suite;
    if (!s.tables.empty()) {
        const fs::path tables = resolve_against(records_path.parent_path(), s.tables);
        require_file(tables, "scorer tables");
        std::ifstream f(tables);
        json t;
        try {
            f >> t;
        } catch (const json::exception& e) {
            throw CommandError("input", tables.string() + ": " + e.what());
        }
        StrictReader r(t, "tables");
        std::map<std::string, std::string> a, b;
        std::map<std::string, double> q;
        r.get("transcripts_a", a).get("transcripts_b", b).get("quality", q);
        r.finish();
        suite = ScorerSuite::from_tables(std::move(a), std::move(b), std::move(q));
    } else {
        if (s.transcriber_a.empty() || s.transcriber_b.empty() || s.quality.empty()) {
            throw CommandError("config", "filter needs a tables file or all three scorer commands");
        }
        const fs::path work = out_path.parent_path().empty() ? fs::path(".") : out_path.parent_path();
        suite = external_suite(records, ExternalScorer{s.transcriber_a, work}, ExternalScorer{s.transcriber_b, work},
                               ExternalScorer{s.quality, work});
    }
    suite.audio_root = s.audio_root.empty() ? records_path.parent_path() : fs::path(s.audio_root);
    const ScoreOptions opt{s.mode, s.normalize};
    const ScoreReport rep = score_dataset(records, suite, opt, cfg.jobs);
    const std::size_t top_k = s.top_k.value_or(records.size());
    const auto selected = select_records(rep.records, top_k, s.vad_threshold);
    write_records(out_path, selected);
    if (!scored_path.empty()) write_records(scored_path, rep.records);

    std::size_t scored = 0, gated = 0;
    json failures = json::array();
    for (const auto& r : rep.records) {
        if (!r.scored) {
            failures.push_back({{"id", r.id}, {"error", r.error}});
            continue;
        }
        ++scored;
        if (r.vad_proportion > s.vad_threshold) ++gated;
    }
    json ids = json::array();
    for (const auto& r : selected) ids.push_back(r.id);
    return json{{"command", "filter"},
                {"records", records.size()},
                {"scored", scored},
                {"failed", rep.failed},
                {"gated", gated},
                {"selected", selected.size()},
                {"selected_ids", ids},
                {"failures", failures},
                {"out", out_path.string()},
                {"filter", to_json(s)}};
}

json cmd_lpo(const RunConfig& cfg, const fs::path& pairs) {
    require_file(pairs, "pairs file");
    cfg.lpo.validate();
    const auto batch = lpo_batch(read_pairs(pairs), cfg.lpo);
    json out = to_json(batch);
    out["command"] = "lpo";
    out["hyper"] = to_json(cfg.lpo);
    out["gamma"] = cfg.lpo.gamma();
    return out;
}

}  // namespace vqd
