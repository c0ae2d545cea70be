#include "vqd/distill/dms.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <stdexcept>

#include "vqd/util/strict_json.hpp"

namespace vqd {

using nlohmann::json;

namespace {

std::set<std::pair<std::string, Shape>> part_shapes(const std::vector<ParamInfo>& inv, const std::string& part) {
    std::set<std::pair<std::string, Shape>> out;
    for (const auto& p : inv) {
        if (p.name.rfind(part + "/", 0) == 0) out.emplace(p.name, p.shape);
    }
    return out;
}

// Names the first tensor present in one set and absent or reshaped in the other.
void require_same_part(const CodecSpec& teacher, const CodecSpec& student, const std::string& part) {
    const auto a = part_shapes(codec_inventory(teacher), part);
    const auto b = part_shapes(codec_inventory(student), part);
    for (const auto& [name, shape] : a) {
        if (!b.count({name, shape})) {
            throw ShapeError("student " + part + " differs from teacher at tensor '" + name + "' (teacher " +
                             shape_str(shape) + ")");
        }
    }
    for (const auto& [name, shape] : b) {
        if (!a.count({name, shape})) {
            throw ShapeError("student " + part + " differs from teacher at tensor '" + name + "' (student " +
                             shape_str(shape) + ")");
        }
    }
}

json phase_metrics(const TrainResult& r) {
    json j{{"steps", r.log.size()}, {"skipped", r.skipped}};
    const bool any = r.log.size() > r.skipped;
    j["first_mel"] = any ? r.first_mel() : 0.0;
    j["final_mel"] = any ? r.final_mel() : 0.0;
    j["final_usage"] = r.epochs.empty() ? 0.0 : r.final_usage();
    j["final_perplexity"] = r.epochs.empty() ? 0.0 : r.final_perplexity();
    json epochs = json::array();
    for (const auto& e : r.epochs) epochs.push_back(to_json(e));
    j["epochs"] = std::move(epochs);
    return j;
}

}  // namespace

void DistillPlan::validate() const {
    teacher.validate();
    student.validate();
    if (student.n_residual != 1 || student.n_group != 1) {
        throw std::invalid_argument("distill: student must use a single codebook (n_group = n_residual = 1), got (" +
                                    std::to_string(student.n_group) + ", " + std::to_string(student.n_residual) +
                                    ")");
    }
    require_same_part(teacher, student, "encoder");
    require_same_part(teacher, student, "decoder");
    teacher_train.validate();
    student_train.validate();
    bank.validate();
}

DistillPlan DistillPlan::desk() {
    DistillPlan p;
    p.teacher = CodecSpec::desk_teacher();
    p.student = CodecSpec::desk_student({});
    p.student.encoder_init = InitSource::scratch();
    p.student.decoder_init = InitSource::scratch();
    p.teacher_train = desk_train_config();
    p.student_train = desk_train_config();
    p.bank = DiscriminatorBankSpec::desk();
    return p;
}

json to_json(const DistillPlan& p) {
    return json{{"teacher", to_json(p.teacher)},
                {"student", to_json(p.student)},
                {"teacher_train", to_json(p.teacher_train)},
                {"student_train", to_json(p.student_train)},
                {"discriminators", to_json(p.bank)},
                {"corpus", p.corpus},
                {"freeze_inherited", p.freeze_inherited}};
}

DistillPlan distill_plan_from_json(const json& j, DistillPlan p, const std::string& context) {
    StrictReader r(j, context);
    r.section("teacher", [&](const json& s, const std::string& ctx) { p.teacher = codec_spec_from_json(s, p.teacher, ctx); });
    r.section("student", [&](const json& s, const std::string& ctx) { p.student = codec_spec_from_json(s, p.student, ctx); });
    r.section("teacher_train",
              [&](const json& s, const std::string& ctx) { p.teacher_train = train_config_from_json(s, p.teacher_train, ctx); });
    r.section("student_train",
              [&](const json& s, const std::string& ctx) { p.student_train = train_config_from_json(s, p.student_train, ctx); });
    r.section("discriminators", [&](const json& s, const std::string& ctx) { p.bank = bank_spec_from_json(s, p.bank, ctx); });
    r.get("corpus", p.corpus).get("freeze_inherited", p.freeze_inherited);
    r.finish();
    return p;
}

std::unique_ptr<CodecModel<float>> inherit_params(const CodecModel<float>& teacher, const CodecSpec& student_spec) {
    require_same_part(teacher.spec(), student_spec, "encoder");
    require_same_part(teacher.spec(), student_spec, "decoder");
    auto student = std::make_unique<CodecModel<float>>(student_spec);
    const Checkpoint ckpt = teacher.to_checkpoint();
    student->load_part(ckpt, "encoder");
    student->load_part(ckpt, "decoder");
    return student;
}

json training_record(const TrainResult& r, const TrainConfig& cfg) {
    json j = phase_metrics(r);
    j.erase("epochs");
    j["config"] = to_json(cfg);
    return j;
}

json PhaseSummary::to_json(const CodecSpec& spec) const {
    json j = phase_metrics(result);
    j["checkpoint"] = checkpoint.string();
    j["tokens_per_second"] = spec.tokens_per_second();
    j["bandwidth_bps"] = spec.bandwidth_bps();
    j["codebook"] = json{{"n_group", spec.n_group}, {"n_residual", spec.n_residual}, {"n_codes", spec.n_codes},
                         {"code_dim", spec.code_dim}};
    return j;
}

namespace {

std::filesystem::path prepare_dir(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());
    return dir;
}

void save_trained(const CodecModel<float>& model, const TrainResult& r, const TrainConfig& cfg,
                  const std::filesystem::path& path) {
    Checkpoint c = model.to_checkpoint();
    c.metadata["training"] = training_record(r, cfg);
    save_checkpoint(path, c);
}

}  // namespace

PhaseSummary train_teacher_phase(const DistillPlan& plan, const std::vector<AudioBuffer>& corpus,
                                 const std::filesystem::path& out_dir, const StepCallback& on_step) {
    plan.validate();
    if (corpus.empty()) throw std::invalid_argument("distill: corpus is empty");
    auto teacher = build_codec(plan.teacher);
    DiscriminatorBank<float> bank(plan.bank);
    PhaseSummary s;
    s.result = dlt_train(corpus, *teacher, &bank, plan.teacher_train, on_step);
    s.checkpoint = prepare_dir(out_dir) / "teacher.ckpt";
    save_trained(*teacher, s.result, plan.teacher_train, s.checkpoint);
    return s;
}

namespace {

std::unique_ptr<CodecModel<float>> load_trained_teacher(const std::filesystem::path& teacher_ckpt) {
    if (!std::filesystem::exists(teacher_ckpt)) {
        throw std::runtime_error("student phase needs a trained teacher checkpoint; '" + teacher_ckpt.string() +
                                 "' does not exist");
    }
    const Checkpoint ckpt = load_checkpoint(teacher_ckpt);
    const auto& meta = ckpt.metadata;
    if (!meta.contains("training") || meta["training"].value("steps", 0) == 0) {
        throw std::runtime_error("teacher checkpoint '" + teacher_ckpt.string() +
                                 "' has no training record; train the teacher first");
    }
    return codec_from_checkpoint(ckpt);
}

CodecSpec student_spec_for(const DistillPlan& plan, const std::filesystem::path& teacher_ckpt) {
    CodecSpec spec = plan.student;
    spec.encoder_init = InitSource::from(teacher_ckpt);
    spec.decoder_init = InitSource::from(teacher_ckpt);
    return spec;
}

TrainConfig student_config(const DistillPlan& plan) {
    TrainConfig cfg = plan.student_train;
    if (plan.freeze_inherited) {
        for (const char* part : {"encoder", "decoder"}) {
            if (std::find(cfg.frozen_parts.begin(), cfg.frozen_parts.end(), part) == cfg.frozen_parts.end()) {
                cfg.frozen_parts.emplace_back(part);
            }
        }
    }
    return cfg;
}

}  // namespace

PhaseSummary train_student_phase(const DistillPlan& plan, const std::vector<AudioBuffer>& corpus,
                                 const std::filesystem::path& teacher_ckpt, const std::filesystem::path& out_dir,
                                 const StepCallback& on_step) {
    plan.validate();
    if (corpus.empty()) throw std::invalid_argument("distill: corpus is empty");
    const auto teacher = load_trained_teacher(teacher_ckpt);
    require_same_part(teacher->spec(), plan.student, "encoder");
    require_same_part(teacher->spec(), plan.student, "decoder");
    auto student = inherit_params(*teacher, student_spec_for(plan, teacher_ckpt));
    DiscriminatorBank<float> bank(plan.bank);
    const TrainConfig cfg = student_config(plan);
    PhaseSummary s;
    s.result = dlt_train(corpus, *student, &bank, cfg, on_step);
    s.checkpoint = prepare_dir(out_dir) / "student.ckpt";
    save_trained(*student, s.result, cfg, s.checkpoint);
    return s;
}

double scratch_student_first_mel(const DistillPlan& plan, const std::vector<AudioBuffer>& corpus) {
    CodecSpec spec = plan.student;
    spec.encoder_init = InitSource::scratch();
    spec.decoder_init = InitSource::scratch();
    spec.vq_init = InitSource::scratch();
    auto scratch = build_codec(spec);
    DiscriminatorBank<float> bank(plan.bank);
    TrainConfig cfg = student_config(plan);
    cfg.steps = 1;
    return dlt_train(corpus, *scratch, &bank, cfg).first_mel();
}

DmsResult run_dms(const DistillPlan& plan, const std::vector<AudioBuffer>& corpus,
                  const std::filesystem::path& out_dir, const DmsCallbacks& callbacks) {
    DmsResult r;
    r.teacher = train_teacher_phase(plan, corpus, out_dir, callbacks.teacher_step);
    r.student = train_student_phase(plan, corpus, r.teacher.checkpoint, out_dir, callbacks.student_step);
    r.scratch_first_mel = scratch_student_first_mel(plan, corpus);
    const CodecSpec student_spec = student_spec_for(plan, r.teacher.checkpoint);
    r.summary = json{{"teacher", r.teacher.to_json(plan.teacher)}, {"student", r.student.to_json(student_spec)}};
    r.summary["student"]["scratch_first_mel"] = r.scratch_first_mel;
    r.summary["student"]["frozen_inherited"] = plan.freeze_inherited;
    r.summary["plan"] = to_json(plan);
    std::ofstream out(out_dir / "summary.json");
    out << r.summary.dump(2) << '\n';
    if (!out) throw std::runtime_error("cannot write " + (out_dir / "summary.json").string());
    return r;
}

}  // namespace vqd
