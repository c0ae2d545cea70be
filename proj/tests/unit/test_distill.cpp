#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "support/tiny.hpp"
#include "vqd/distill/dms.hpp"

using namespace vqd;
using vqd::testing::tiny_bank;
using vqd::testing::tiny_codec;

namespace {

CodecSpec tiny_student() {
    CodecSpec s = tiny_codec();
    s.n_group = 1;
    s.n_residual = 1;
    s.n_codes = 32;
    s.code_dim = 12;
    s.seed = 1;
    return s;
}

TrainConfig tiny_train(std::size_t steps) {
    TrainConfig c;
    c.steps = steps;
    c.batch_size = 2;
    c.segment = 96;
    c.optim.lr = 2e-3;
    c.mel_scales = {{16, 4}, {32, 8}};
    return c;
}

DistillPlan tiny_plan(std::size_t steps) {
    DistillPlan p;
    p.teacher = tiny_codec();
    p.student = tiny_student();
    p.teacher_train = tiny_train(steps);
    p.student_train = tiny_train(steps);
    p.bank = tiny_bank();
    return p;
}

std::vector<AudioBuffer> tones(std::size_t n) {
    std::vector<AudioBuffer> out;
    for (std::size_t i = 0; i < n; ++i) {
        AudioBuffer a;
        a.sample_rate = 8000;
        for (int t = 0; t < 160; ++t) a.samples.push_back(static_cast<float>(0.4 * std::sin(0.07 * (i + 2) * t)));
        out.push_back(std::move(a));
    }
    return out;
}

std::filesystem::path temp_dir(const std::string& name) {
    auto d = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(d);
    return d;
}

bool same_tensor(const Tensor<float>& a, const Tensor<float>& b) {
    return a.shape() == b.shape() && std::ranges::equal(a.values(), b.values());
}

}  // namespace

TEST_CASE("plan validation") {
    CHECK_NOTHROW(tiny_plan(1).validate());
    CHECK_NOTHROW(DistillPlan::desk().validate());
    auto p = tiny_plan(1);
    p.student.n_group = 2;
    p.student.code_dim = 6;
    CHECK_THROWS_WITH(p.validate(), doctest::Contains("single codebook"));
    p = tiny_plan(1);
    p.student.encoder.dims = {6, 10};
    p.student.decoder.channels = 8;
    CHECK_THROWS_WITH(p.validate(), doctest::Contains("student encoder differs from teacher at tensor 'encoder/"));
    p = tiny_plan(1);
    p.student.decoder.rates = {2, 4};
    CHECK_THROWS_WITH(p.validate(), doctest::Contains("decoder/up/0/weight"));
}

TEST_CASE("plan JSON round trip rejects unknown keys") {
    auto p = tiny_plan(3);
    p.freeze_inherited = true;
    p.corpus = "corpus/manifest.jsonl";
    const auto back = distill_plan_from_json(to_json(p));
    CHECK(to_json(back) == to_json(p));
    CHECK_THROWS_WITH(distill_plan_from_json(nlohmann::json{{"student", {{"n_codez", 3}}}}),
                      doctest::Contains("distill.student.n_codez"));
}

TEST_CASE("identity inheritance reproduces the teacher through encoder and decoder") {
    CodecModel<float> teacher(tiny_codec());
    CodecSpec same = tiny_codec();
    same.seed = 5;
    const auto student = inherit_params(teacher, same);
    Rng rng(3);
    Tensor<float> audio(Shape{96});
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    for (auto& v : audio.values()) v = static_cast<float>(u(rng));
    const auto x = Var<float>::constant(audio);
    const auto zt = teacher.encode(x), zs = student->encode(x);
    CHECK(std::ranges::equal(zt.value().values(), zs.value().values()));
    CHECK(std::ranges::equal(teacher.decode(zt).value().values(), student->decode(zt).value().values()));
    // quantizer parameters come from the student's own seed
    bool differs = false;
    for (const auto& name : teacher.part_names("vq")) {
        if (!teacher.params().contains(name)) continue;
        differs = differs || !std::ranges::equal(teacher.params().get(name).value().values(), student->params().get(name).value().values());
    }
    CHECK(differs);
    for (const auto& cb : student->quantizer().codebooks()) CHECK_FALSE(cb.initialized);
}

TEST_CASE("desk inheritance copies exactly the encoder and decoder tensors") {
    const CodecModel<float> teacher(CodecSpec::desk_teacher());
    CodecSpec student_spec = CodecSpec::desk_student({});
    student_spec.encoder_init = InitSource::scratch();
    student_spec.decoder_init = InitSource::scratch();
    const auto student = inherit_params(teacher, student_spec);
    const Checkpoint t = teacher.to_checkpoint(), s = student->to_checkpoint();

    std::set<std::string> teacher_parts, copied;
    for (const auto& [name, tensor] : t.tensors) {
        if (name.rfind("encoder/", 0) == 0 || name.rfind("decoder/", 0) == 0) teacher_parts.insert(name);
    }
    for (const auto& [name, tensor] : s.tensors) {
        const Tensor<float>* other = t.find(name);
        if (other && same_tensor(*other, tensor)) copied.insert(name);
    }
    CHECK(copied == teacher_parts);
    CHECK(s.at("vq/0/pre/weight").shape() == Shape{16, 32});
    CHECK(t.at("vq/0/pre/weight").shape() == Shape{8, 16});
}

TEST_CASE("full-scale plan shapes") {
    DistillPlan p;
    p.teacher = CodecSpec::full_teacher();
    p.student = CodecSpec::full_student("teacher.ckpt");
    CHECK_NOTHROW(p.validate());
    CHECK(p.student.n_codes == 32768);
    CHECK(p.student.code_dim == 3584);
    CHECK(p.teacher.n_group == 4);
    CHECK(p.teacher.n_residual == 8);
    CHECK(p.teacher.n_codes == 1024);
    CHECK(p.teacher.code_dim == 512);
}

TEST_CASE("student phase refuses a missing or untrained teacher") {
    const auto dir = temp_dir("vqd_distill_refuse");
    std::filesystem::create_directories(dir);
    const auto plan = tiny_plan(2);
    const auto corpus = tones(3);
    CHECK_THROWS_WITH(train_student_phase(plan, corpus, dir / "absent.ckpt", dir),
                      doctest::Contains("does not exist"));
    save_codec(*build_codec(plan.teacher), dir / "untrained.ckpt");
    CHECK_THROWS_WITH(train_student_phase(plan, corpus, dir / "untrained.ckpt", dir),
                      doctest::Contains("no training record"));
    CHECK_THROWS(train_teacher_phase(plan, {}, dir));
    std::filesystem::remove_all(dir);
}

TEST_CASE("run_dms writes checkpoints and a reproducible summary") {
    const auto corpus = tones(4);
    auto plan = tiny_plan(3);
    const auto a = temp_dir("vqd_dms_a"), b = temp_dir("vqd_dms_b");
    std::size_t teacher_steps = 0, student_steps = 0;
    DmsCallbacks cb{[&](const StepRecord&) { ++teacher_steps; }, [&](const StepRecord&) { ++student_steps; }};
    const auto r1 = run_dms(plan, corpus, a, cb);
    const auto r2 = run_dms(plan, corpus, b);
    CHECK(teacher_steps == 3);
    CHECK(student_steps == 3);
    for (const char* f : {"teacher.ckpt", "student.ckpt", "summary.json"}) CHECK(std::filesystem::exists(a / f));
    CHECK(serialize_checkpoint(load_checkpoint(a / "student.ckpt")).size() > 0);
    CHECK(load_checkpoint(a / "teacher.ckpt").tensors == load_checkpoint(b / "teacher.ckpt").tensors);
    CHECK(load_checkpoint(a / "student.ckpt").tensors == load_checkpoint(b / "student.ckpt").tensors);
    CHECK(r1.summary["student"]["final_mel"] == r2.summary["student"]["final_mel"]);
    CHECK(r1.summary.contains("teacher"));
    CHECK(r1.summary["student"]["codebook"]["n_codes"] == 32);
    CHECK(r1.summary["student"]["epochs"].size() >= 1);
    CHECK(r1.summary["student"]["epochs"][0].contains("ppl"));
    CHECK(r1.scratch_first_mel > 0);
    const auto meta = load_checkpoint(a / "student.ckpt").metadata;
    CHECK(meta["training"]["steps"] == 3);
    CHECK(meta["spec"]["encoder_init"] == "from:" + (a / "teacher.ckpt").string());
    for (const auto& d : {a, b}) std::filesystem::remove_all(d);
}

TEST_CASE("freeze flag keeps inherited tensors equal to the teacher checkpoint") {
    const auto corpus = tones(4);
    auto plan = tiny_plan(3);
    plan.freeze_inherited = true;
    const auto dir = temp_dir("vqd_dms_frozen");
    run_dms(plan, corpus, dir);
    const Checkpoint t = load_checkpoint(dir / "teacher.ckpt"), s = load_checkpoint(dir / "student.ckpt");
    std::size_t compared = 0;
    for (const auto& [name, tensor] : t.tensors) {
        if (name.rfind("encoder/", 0) != 0 && name.rfind("decoder/", 0) != 0) continue;
        CHECK_MESSAGE(same_tensor(tensor, s.at(name)), name);
        ++compared;
    }
    CHECK(compared > 10);
    std::filesystem::remove_all(dir);
}
