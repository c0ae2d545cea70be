#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <string>

#include <nlohmann/json.hpp>

#include "vqd/adversary/train.hpp"
#include "vqd/codec/codec.hpp"

namespace vqd {

struct DistillPlan {
    CodecSpec teacher = CodecSpec::desk_teacher();
    /// Init sources of encoder and decoder are filled in from the teacher checkpoint.
    CodecSpec student = CodecSpec::desk_student({});
    TrainConfig teacher_train;
    TrainConfig student_train;
    DiscriminatorBankSpec bank = DiscriminatorBankSpec::desk();
    /// Manifest the corpus was read from; informational.
    std::string corpus;
    /// Student keeps the inherited encoder and decoder fixed.
    bool freeze_inherited = false;

    /// Student must be single-codebook with the teacher's encoder/decoder shapes.
    void validate() const;

    static DistillPlan desk();
};

nlohmann::json to_json(const DistillPlan& p);
DistillPlan distill_plan_from_json(const nlohmann::json& j, DistillPlan base = DistillPlan::desk(),
                                   const std::string& context = "distill");

/// A student-spec model whose encoder and decoder tensors are bitwise copies of
/// the teacher's and whose quantizer is freshly seeded and uninitialized.
std::unique_ptr<CodecModel<float>> inherit_params(const CodecModel<float>& teacher, const CodecSpec& student_spec);

/// Checkpoint metadata block recording a finished training phase.
nlohmann::json training_record(const TrainResult& r, const TrainConfig& cfg);

struct PhaseSummary {
    TrainResult result;
    std::filesystem::path checkpoint;
    nlohmann::json to_json(const CodecSpec& spec) const;
};

struct DmsResult {
    PhaseSummary teacher;
    PhaseSummary student;
    /// Step-1 mel distance of a scratch-initialized student on the student's first batch.
    double scratch_first_mel = 0.0;
    nlohmann::json summary;
};

struct DmsCallbacks {
    StepCallback teacher_step;
    StepCallback student_step;
};

/// Trains the teacher and saves it with its training record.
PhaseSummary train_teacher_phase(const DistillPlan& plan, const std::vector<AudioBuffer>& corpus,
                                 const std::filesystem::path& out_dir, const StepCallback& on_step = {});

/// Builds the student from a trained teacher checkpoint and trains it. A
/// missing checkpoint or one without a training record is refused.
PhaseSummary train_student_phase(const DistillPlan& plan, const std::vector<AudioBuffer>& corpus,
                                 const std::filesystem::path& teacher_ckpt, const std::filesystem::path& out_dir,
                                 const StepCallback& on_step = {});

/// Step-1 mel distance of a student with every part built from scratch.
double scratch_student_first_mel(const DistillPlan& plan, const std::vector<AudioBuffer>& corpus);

/// Teacher phase, inheritance, student phase; writes teacher.ckpt,
/// student.ckpt and summary.json under out_dir.
DmsResult run_dms(const DistillPlan& plan, const std::vector<AudioBuffer>& corpus,
                  const std::filesystem::path& out_dir, const DmsCallbacks& callbacks = {});

}  // namespace vqd
