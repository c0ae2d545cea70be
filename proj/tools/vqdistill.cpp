#include <CLI11.hpp>

#include <iostream>
#include <string>
#include <vector>

#include "vqd/cli/commands.hpp"

using json = nlohmann::json;
using namespace vqd;

namespace {

void log_event(const json& j) { std::cerr << j.dump() << std::endl; }

StepCallback step_logger(const std::string& phase, bool quiet) {
    if (quiet) return {};
    return [phase](const StepRecord& r) {
        json j = to_json(r);
        j["event"] = "step";
        j["phase"] = phase;
        log_event(j);
    };
}

template <typename V>
void override_if(const CLI::Option* opt, V& field, const V& value) {
    if (opt->count() > 0) field = value;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Codec distillation toolkit: corpus synthesis, codec training and distillation, "
                 "tokenization, codebook evaluation, data filtering and preference-loss diagnostics"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::uint64_t seed = 0;
    std::size_t jobs = 1;
    bool quiet = false;
    app.add_option("--config", config_path, std::string("JSON run config; defaults to $") + kConfigEnv);
    auto* seed_opt = app.add_option("--seed", seed, "Seed for corpus, codec init and training");
    auto* jobs_opt = app.add_option("--jobs", jobs, "Worker threads for clip-parallel work")->check(CLI::PositiveNumber);
    app.add_flag("--quiet", quiet, "Suppress per-step training logs");

    // synth-corpus
    auto* synth = app.add_subcommand("synth-corpus", "Write a synthetic WAV corpus and manifest");
    std::string synth_out;
    std::size_t n_clips = 0;
    double duration = 0;
    int sample_rate = 0;
    synth->add_option("--out", synth_out, "Output directory")->required();
    auto* n_clips_opt = synth->add_option("--n-clips", n_clips, "Number of clips");
    auto* duration_opt = synth->add_option("--duration", duration, "Clip length in seconds");
    auto* rate_opt = synth->add_option("--sample-rate", sample_rate, "Sample rate in Hz");

    // train-teacher
    auto* teach = app.add_subcommand("train-teacher", "Train the multi-codebook teacher codec");
    std::string teach_corpus, teach_out;
    std::size_t teach_steps = 0;
    double teach_lr = 0;
    teach->add_option("--corpus", teach_corpus, "Corpus manifest (JSONL)")->required();
    teach->add_option("--out", teach_out, "Output directory")->required();
    auto* teach_steps_opt = teach->add_option("--steps", teach_steps, "Training steps");
    auto* teach_lr_opt = teach->add_option("--lr", teach_lr, "Learning rate");

    // distill
    auto* dist = app.add_subcommand("distill", "Train teacher then single-codebook student");
    std::string dist_corpus, dist_out, dist_teacher;
    std::size_t dist_steps = 0;
    bool freeze = false;
    dist->add_option("--corpus", dist_corpus, "Corpus manifest (JSONL)")->required();
    dist->add_option("--out", dist_out, "Output directory")->required();
    dist->add_option("--teacher", dist_teacher, "Trained teacher checkpoint; skips the teacher phase");
    auto* dist_steps_opt = dist->add_option("--steps", dist_steps, "Training steps for each phase");
    auto* freeze_opt = dist->add_flag("--freeze-inherited", freeze, "Keep the inherited encoder and decoder fixed");

    // encode
    auto* enc = app.add_subcommand("encode", "Tokenize WAV files to a codes JSONL file");
    std::string enc_model, enc_out;
    std::vector<std::string> enc_wavs;
    enc->add_option("--model", enc_model, "Codec checkpoint")->required();
    enc->add_option("--out", enc_out, "Output codes JSONL")->required();
    enc->add_option("wavs", enc_wavs, "Input WAV files")->required();

    // decode
    auto* dec = app.add_subcommand("decode", "Render a codes JSONL file to WAV files");
    std::string dec_model, dec_codes, dec_out;
    dec->add_option("--model", dec_model, "Codec checkpoint")->required();
    dec->add_option("--codes", dec_codes, "Codes JSONL")->required();
    dec->add_option("--out", dec_out, "Output directory")->required();

    // eval-codec
    auto* eval = app.add_subcommand("eval-codec", "Mel distance, perplexity, usage and token rates");
    std::string eval_model, eval_manifest, eval_profile;
    eval->add_option("--model", eval_model, "Codec checkpoint");
    eval->add_option("--manifest", eval_manifest, "Evaluation manifest (JSONL)");
    eval->add_option("--profile", eval_profile, "Rates of a named profile without a checkpoint")
        ->check(CLI::IsMember({"full", "desk"}));

    // filter
    auto* filt = app.add_subcommand("filter", "Score records and keep the best by quality");
    std::string filt_records, filt_out, filt_scored, filt_mode, filt_tables, filt_ta, filt_tb, filt_q, filt_root;
    std::size_t top_k = 0;
    double vad_threshold = 0;
    bool normalize = false;
    filt->add_option("--records", filt_records, "Input records JSONL {id, audio, text}")->required();
    filt->add_option("--out", filt_out, "Curated records JSONL")->required();
    filt->add_option("--scored", filt_scored, "Also write every scored record here");
    auto* top_k_opt = filt->add_option("--top-k", top_k, "Records to keep")->check(CLI::PositiveNumber);
    auto* vad_opt = filt->add_option("--vad-threshold", vad_threshold, "Maximum silent proportion");
    auto* mode_opt = filt->add_option("--mode", filt_mode, "CER between transcripts or against the text")
                         ->check(CLI::IsMember({"agreement", "reference"}));
    auto* norm_opt = filt->add_flag("--normalize", normalize, "Normalize transcripts before CER");
    auto* tables_opt = filt->add_option("--tables", filt_tables, "Precomputed scorer answers (JSON)");
    auto* ta_opt = filt->add_option("--transcriber-a", filt_ta, "External transcriber command");
    auto* tb_opt = filt->add_option("--transcriber-b", filt_tb, "Second external transcriber command");
    auto* q_opt = filt->add_option("--quality", filt_q, "External quality model command");
    auto* root_opt = filt->add_option("--audio-root", filt_root, "Directory audio paths resolve against");

    // lpo
    auto* lpo = app.add_subcommand("lpo", "Preference loss diagnostics over a pairs file");
    std::string pairs;
    double beta = 0, r1 = 0, r2 = 0, lambda = 0, eps = 0, clamp = 0;
    lpo->add_option("--pairs", pairs, "Pairs JSONL")->required();
    auto* beta_opt = lpo->add_option("--beta", beta);
    auto* r1_opt = lpo->add_option("--r1", r1);
    auto* r2_opt = lpo->add_option("--r2", r2);
    auto* lambda_opt = lpo->add_option("--lambda", lambda);
    auto* eps_opt = lpo->add_option("--eps", eps);
    auto* clamp_opt = lpo->add_option("--clamp", clamp);

    std::string command = "vqdistill";
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cout << error_json(command, "usage", e.what()).dump() << std::endl;
        return 2;
    }
    for (auto* sub : app.get_subcommands()) command = sub->get_name();

    try {
        RunConfig cfg = load_run_config(config_path);
        if (seed_opt->count() > 0) cfg.seed = seed;
        override_if(jobs_opt, cfg.jobs, jobs);

        override_if(n_clips_opt, cfg.synth.n_clips, n_clips);
        override_if(duration_opt, cfg.synth.duration, duration);
        override_if(rate_opt, cfg.synth.sample_rate, sample_rate);

        override_if(teach_steps_opt, cfg.distill.teacher_train.steps, teach_steps);
        override_if(teach_lr_opt, cfg.distill.teacher_train.optim.lr, teach_lr);
        override_if(dist_steps_opt, cfg.distill.teacher_train.steps, dist_steps);
        override_if(dist_steps_opt, cfg.distill.student_train.steps, dist_steps);
        override_if(freeze_opt, cfg.distill.freeze_inherited, freeze);

        if (top_k_opt->count() > 0) cfg.filter.top_k = top_k;
        override_if(vad_opt, cfg.filter.vad_threshold, vad_threshold);
        if (mode_opt->count() > 0) cfg.filter.mode = filt_mode == "reference" ? CerMode::reference : CerMode::agreement;
        override_if(norm_opt, cfg.filter.normalize, normalize);
        override_if(tables_opt, cfg.filter.tables, filt_tables);
        override_if(ta_opt, cfg.filter.transcriber_a, filt_ta);
        override_if(tb_opt, cfg.filter.transcriber_b, filt_tb);
        override_if(q_opt, cfg.filter.quality, filt_q);
        override_if(root_opt, cfg.filter.audio_root, filt_root);

        override_if(beta_opt, cfg.lpo.beta, beta);
        override_if(r1_opt, cfg.lpo.r1, r1);
        override_if(r2_opt, cfg.lpo.r2, r2);
        override_if(lambda_opt, cfg.lpo.lambda, lambda);
        override_if(eps_opt, cfg.lpo.eps, eps);
        override_if(clamp_opt, cfg.lpo.clamp, clamp);

        cfg.resolve();
        try {
            cfg.validate();
        } catch (const std::invalid_argument& e) {
            throw CommandError("config", e.what());
        }
        log_event(json{{"event", "config"}, {"command", command}, {"config", to_json(cfg)}});

        json out;
        if (synth->parsed()) {
            out = cmd_synth_corpus(cfg, synth_out);
        } else if (teach->parsed()) {
            out = cmd_train_teacher(cfg, teach_corpus, teach_out, step_logger("teacher", quiet));
        } else if (dist->parsed()) {
            out = cmd_distill(cfg, dist_corpus, dist_out, dist_teacher,
                              DmsCallbacks{step_logger("teacher", quiet), step_logger("student", quiet)});
        } else if (enc->parsed()) {
            out = cmd_encode(cfg, enc_model, std::vector<std::filesystem::path>(enc_wavs.begin(), enc_wavs.end()), enc_out);
        } else if (dec->parsed()) {
            out = cmd_decode(cfg, dec_model, dec_codes, dec_out);
        } else if (eval->parsed()) {
            if (eval_model.empty()) {
                if (eval_profile.empty()) throw CommandError("usage", "eval-codec needs --model and --manifest, or --profile");
                out = profile_rate_report(eval_profile);
                out["command"] = "eval-codec";
            } else {
                if (eval_manifest.empty()) throw CommandError("usage", "eval-codec --model needs --manifest");
                out = cmd_eval_codec(cfg, eval_model, eval_manifest);
            }
        } else if (filt->parsed()) {
            out = cmd_filter(cfg, filt_records, filt_out, filt_scored);
        } else if (lpo->parsed()) {
            out = cmd_lpo(cfg, pairs);
        }
        std::cout << out.dump(2) << std::endl;
        return 0;
    } catch (const CommandError& e) {
        std::cout << error_json(command, e.kind(), e.what()).dump() << std::endl;
        return e.kind() == "usage" ? 2 : 1;
    } catch (const std::invalid_argument& e) {
        std::cout << error_json(command, "input", e.what()).dump() << std::endl;
        return 1;
    } catch (const std::exception& e) {
        std::cout << error_json(command, "runtime", e.what()).dump() << std::endl;
        return 1;
    }
}
