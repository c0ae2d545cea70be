"""End-to-end runs of the vqdistill binary; every document it prints or writes
is validated against the shipped schemas."""

import json
import math
import os
import subprocess
import tempfile
import unittest
from collections import Counter
from pathlib import Path

import jsonschema
from referencing import Registry, Resource

BINARY = os.environ["VQDISTILL"]
SCHEMAS = Path(os.environ["VQD_SCHEMAS"])

_docs = {p.name: json.loads(p.read_text()) for p in SCHEMAS.glob("*.schema.json")}
_registry = Registry().with_resources((name, Resource.from_contents(d)) for name, d in _docs.items())


def validate(doc, name):
    jsonschema.Draft202012Validator(_docs[name + ".schema.json"], registry=_registry).validate(doc)


def run(args, cwd, env=None, ok=True):
    full_env = dict(os.environ)
    full_env.pop("VQDISTILL_CONFIG", None)
    full_env.update(env or {})
    p = subprocess.run([BINARY, *args], cwd=cwd, env=full_env, capture_output=True, text=True, timeout=600)
    out = json.loads(p.stdout)
    logs = [json.loads(line) for line in p.stderr.splitlines() if line.startswith("{")]
    for event in logs:
        validate(event, "log_event")
    if ok:
        assert p.returncode == 0, p.stdout + p.stderr
    else:
        assert p.returncode != 0, p.stdout
        validate(out, "error")
    return out, logs


def jsonl(path):
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


TINY = {"distill": {"teacher_train": {"steps": 2}, "student_train": {"steps": 2}}}


class Pipeline(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.tmp = tempfile.TemporaryDirectory()
        cls.dir = Path(cls.tmp.name)
        (cls.dir / "tiny.json").write_text(json.dumps(TINY))
        out, _ = run(["synth-corpus", "--out", "corpus", "--n-clips", "4", "--seed", "5"], cls.dir)
        validate(out, "synth_report")
        cls.manifest = cls.dir / "corpus" / "manifest.jsonl"
        out, cls.distill_logs = run(["--config", "tiny.json", "--quiet", "distill", "--corpus", str(cls.manifest), "--out", "dms"],
                                    cls.dir)
        validate(out, "distill_report")
        cls.distill = out

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()

    def test_manifest_lines(self):
        lines = jsonl(self.manifest)
        self.assertEqual(len(lines), 4)
        for line in lines:
            validate(line, "manifest_entry")

    def test_distill_outputs(self):
        for f in ["teacher.ckpt", "student.ckpt", "summary.json", "config.json"]:
            self.assertTrue((self.dir / "dms" / f).exists(), f)
        validate(json.loads((self.dir / "dms" / "config.json").read_text()), "run_config")
        self.assertEqual(self.distill["student"]["codebook"]["n_group"], 1)
        self.assertEqual(self.distill["student"]["steps"], 2)
        self.assertEqual(self.distill["teacher"]["steps"], 2)
        config_events = [e for e in self.distill_logs if e["event"] == "config"]
        self.assertEqual(len(config_events), 1)
        self.assertEqual(config_events[0]["config"]["distill"]["student_train"]["steps"], 2)

    def test_student_phase_from_existing_teacher(self):
        out, logs = run(["--config", "tiny.json", "distill", "--corpus", str(self.manifest), "--out", "student_only",
                         "--teacher", "dms/teacher.ckpt", "--freeze-inherited"], self.dir)
        validate(out, "distill_report")
        self.assertTrue(out["student"]["frozen_inherited"])
        self.assertEqual(sum(1 for e in logs if e["event"] == "step" and e["phase"] == "student"), 2)

    def test_untrained_or_missing_teacher_is_refused(self):
        out, _ = run(["--config", "tiny.json", "distill", "--corpus", str(self.manifest), "--out", "x", "--teacher", "nope.ckpt"],
                     self.dir, ok=False)
        self.assertIn("does not exist", out["error"]["message"])

    def test_encode_decode_eval(self):
        wavs = [str(self.dir / "corpus" / f"clip_0000{i}.wav") for i in range(4)]
        model = "dms/student.ckpt"
        out, _ = run(["encode", "--model", model, "--out", "codes.jsonl", *wavs], self.dir)
        validate(out, "encode_report")
        out2, _ = run(["--jobs", "3", "encode", "--model", model, "--out", "codes_par.jsonl", *wavs], self.dir)
        self.assertEqual((self.dir / "codes.jsonl").read_bytes(), (self.dir / "codes_par.jsonl").read_bytes())
        lines = jsonl(self.dir / "codes.jsonl")
        for line in lines:
            validate(line, "codes_line")
        self.assertEqual([l["id"] for l in lines], [f"clip_0000{i}" for i in range(4)])

        out, _ = run(["decode", "--model", model, "--codes", "codes.jsonl", "--out", "decoded"], self.dir)
        validate(out, "decode_report")
        self.assertEqual(out["files"], 4)

        report, _ = run(["eval-codec", "--model", model, "--manifest", str(self.manifest)], self.dir)
        validate(report, "eval_report")
        # perplexity and usage recomputed from the token file
        counts = Counter(c for l in lines for c in l["codes"][0])
        total = sum(counts.values())
        ppl = math.exp(-sum(n / total * math.log(n / total) for n in counts.values()))
        self.assertAlmostEqual(report["perplexity"], ppl, delta=1e-9)
        self.assertAlmostEqual(report["usage"], len(counts) / report["n_codes"], delta=1e-12)
        self.assertEqual(report["frames"], total)
        self.assertEqual(report["tokens_per_second"], 8000 / 64)
        self.assertEqual(report["bandwidth_bps"], 125.0 * 6)

    def test_eval_reports_missing_entries(self):
        lines = jsonl(self.manifest)
        lines[1]["audio"] = "gone.wav"
        (self.dir / "corpus" / "partial.jsonl").write_text("".join(json.dumps(l) + "\n" for l in lines))
        report, _ = run(["eval-codec", "--model", "dms/student.ckpt", "--manifest", "corpus/partial.jsonl"], self.dir)
        validate(report, "eval_report")
        self.assertEqual(report["clips"], 3)
        self.assertEqual(report["errors"][0]["id"], lines[1]["id"])


class Standalone(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_empty_corpus(self):
        out, _ = run(["synth-corpus", "--out", "c", "--n-clips", "0"], self.dir)
        validate(out, "synth_report")
        self.assertEqual((self.dir / "c" / "manifest.jsonl").read_text(), "")

    def test_seeded_corpus_is_bitwise_reproducible(self):
        run(["--seed", "11", "synth-corpus", "--out", "a", "--n-clips", "3"], self.dir)
        run(["synth-corpus", "--out", "b", "--n-clips", "3", "--seed", "11"], self.dir)
        for i in range(3):
            name = f"clip_0000{i}.wav"
            self.assertEqual((self.dir / "a" / name).read_bytes(), (self.dir / "b" / name).read_bytes())

    def test_config_from_environment_and_flag_precedence(self):
        (self.dir / "cfg.json").write_text(json.dumps({"synth": {"n_clips": 2, "duration": 0.5}}))
        out, logs = run(["synth-corpus", "--out", "env"], self.dir, env={"VQDISTILL_CONFIG": "cfg.json"})
        self.assertEqual(out["clips"], 2)
        self.assertEqual(out["synth"]["duration"], 0.5)
        self.assertEqual(logs[0]["config"]["synth"]["n_clips"], 2)
        out, _ = run(["synth-corpus", "--out", "flag", "--n-clips", "3"], self.dir, env={"VQDISTILL_CONFIG": "cfg.json"})
        self.assertEqual(out["clips"], 3)
        self.assertEqual(out["synth"]["duration"], 0.5)
        (self.dir / "other.json").write_text(json.dumps({"synth": {"n_clips": 1}}))
        out, _ = run(["--config", "other.json", "synth-corpus", "--out", "explicit"], self.dir,
                     env={"VQDISTILL_CONFIG": "cfg.json"})
        self.assertEqual(out["clips"], 1)

    def test_errors_are_json(self):
        (self.dir / "bad.json").write_text(json.dumps({"filter": {"top_kk": 3}}))
        out, _ = run(["--config", "bad.json", "lpo", "--pairs", "p.jsonl"], self.dir, ok=False)
        self.assertEqual(out["error"]["kind"], "config")
        self.assertIn("filter.top_kk", out["error"]["message"])
        out, _ = run(["lpo", "--pairs", "missing.jsonl"], self.dir, ok=False)
        self.assertEqual(out["error"]["kind"], "io")
        out, _ = run(["no-such-command"], self.dir, ok=False)
        self.assertEqual(out["error"]["kind"], "usage")
        out, _ = run(["eval-codec"], self.dir, ok=False)
        self.assertEqual(out["error"]["kind"], "usage")
        out, _ = run(["train-teacher", "--corpus", "none.jsonl", "--out", "t"], self.dir, ok=False)
        self.assertIn("none.jsonl", out["error"]["message"])

    def test_full_rates(self):
        out, _ = run(["eval-codec", "--profile", "full"], self.dir)
        validate(out, "eval_report")
        self.assertEqual(out["tokens_per_second"], 93.75)
        self.assertEqual(out["bandwidth_bps"], 1406.25)
        self.assertEqual(out["reported"], {"tokens_per_second": 93, "bandwidth_bps": 1300})

    def test_teacher_training_is_seed_reproducible(self):
        run(["synth-corpus", "--out", "c", "--n-clips", "2"], self.dir)
        for d in ["r1", "r2"]:
            out, logs = run(["--seed", "4", "train-teacher", "--corpus", "c/manifest.jsonl", "--out", d, "--steps", "2"], self.dir)
            validate(out, "train_report")
            self.assertEqual([e["step"] for e in logs if e["event"] == "step"], [1, 2])
        self.assertEqual((self.dir / "r1" / "teacher.ckpt").read_bytes(), (self.dir / "r2" / "teacher.ckpt").read_bytes())

    def test_lpo(self):
        pairs = [
            {"id": "a", "logp_policy_w": -10, "logp_ref_w": -11, "logp_policy_l": -12, "logp_ref_l": -11.5},
            {"id": "b", "logp_policy_w": -4.1, "logp_ref_w": -4, "logp_policy_l": -6, "logp_ref_l": -6.2},
        ]
        for p in pairs:
            validate(p, "pair")
        (self.dir / "pairs.jsonl").write_text("".join(json.dumps(p) + "\n" for p in pairs))
        out, _ = run(["lpo", "--pairs", "pairs.jsonl", "--beta", "0.3"], self.dir)
        validate(out, "lpo_report")
        self.assertEqual(out["hyper"]["beta"], 0.3)
        self.assertAlmostEqual(out["gamma"], 2 * 0.3 * 2 / 1.4, delta=1e-15)
        self.assertAlmostEqual(out["mean_loss"], sum(p["loss"] for p in out["pairs"]) / 2, delta=1e-12)
        self.assertAlmostEqual(out["pairs"][1]["x1"], math.exp(-0.1), delta=1e-15)

    def test_filter_with_tables(self):
        run(["synth-corpus", "--out", "c", "--n-clips", "3"], self.dir)
        recs = [{"id": f"clip_0000{i}", "audio": f"c/clip_0000{i}.wav", "text": "kitten"} for i in range(3)]
        for r in recs:
            validate(r, "record")
        (self.dir / "records.jsonl").write_text("".join(json.dumps(r) + "\n" for r in recs))
        (self.dir / "tables.json").write_text(json.dumps({
            "transcripts_a": {"clip_00000": "kitten", "clip_00001": "kitten", "clip_00002": "kitten"},
            "transcripts_b": {"clip_00000": "sitting", "clip_00001": "kitten", "clip_00002": "kitten"},
            "quality": {"clip_00000": 4.0, "clip_00001": 3.2, "clip_00002": 3.1},
        }))
        out, _ = run(["filter", "--records", "records.jsonl", "--out", "cur.jsonl", "--tables", "tables.json",
                      "--vad-threshold", "1", "--top-k", "2", "--scored", "scored.jsonl"], self.dir)
        validate(out, "filter_report")
        self.assertEqual(out["selected_ids"], ["clip_00000", "clip_00001"])
        scored = {r["id"]: r for r in jsonl(self.dir / "scored.jsonl")}
        for r in scored.values():
            validate(r, "record")
        self.assertAlmostEqual(scored["clip_00000"]["cer"], 0.5, delta=1e-15)
        self.assertAlmostEqual(scored["clip_00000"]["quality"], 3.5, delta=1e-15)
        selected = jsonl(self.dir / "cur.jsonl")
        self.assertEqual([r["id"] for r in selected], out["selected_ids"])
        out, _ = run(["filter", "--records", "records.jsonl", "--out", "cur2.jsonl", "--tables", "tables.json",
                      "--vad-threshold", "1", "--mode", "reference", "--scored", "scored2.jsonl"], self.dir)
        scored = {r["id"]: r for r in jsonl(self.dir / "scored2.jsonl")}
        # mean of cer(kitten, kitten) and cer(kitten, sitting)
        self.assertAlmostEqual(scored["clip_00000"]["cer"], 0.25, delta=1e-15)
        self.assertEqual(out["selected_ids"], ["clip_00000", "clip_00001", "clip_00002"])


if __name__ == "__main__":
    unittest.main()
