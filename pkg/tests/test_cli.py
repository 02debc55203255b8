import json

import pytest

from softwrist.cli import main
from softwrist.nn import load_checkpoint
from softwrist.nn.checkpoint import to_bytes

TINY = {
    "workers": 2, "env": {"contact": False},
    "rl": {"steps_per_iteration": 40, "minibatch": 20, "epochs": 1, "hidden": [16, 16]},
    "distill": {"steps_per_iteration": 40, "minibatch": 20, "epochs": 1, "channels": 8, "heldout_steps": 20},
    "eval": {"n_trials": 1, "shapes": ["circle"]},
}


@pytest.fixture
def tiny(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(TINY))
    return path


@pytest.fixture
def teacher(tiny, tmp_path):
    assert main(["train-teacher", "--config", str(tiny), "--out", str(tmp_path / "t"), "--iterations", "1"]) == 0
    return tmp_path / "t" / "teacher.swck"


def test_missing_config(capsys, tmp_path):
    assert main(["train-teacher", "--config", str(tmp_path / "nope.json")]) == 2
    assert "config not found" in capsys.readouterr().err


def test_print_config_has_constants(capsys):
    assert main(["--print-config"]) == 0
    cfg = json.loads(capsys.readouterr().out)
    assert cfg["physics"]["wrist"]["k_z"] == 1000.0
    assert cfg["env"]["termination"]["align_threshold"] == 0.007
    assert cfg["env"]["termination"]["success_threshold"] == 0.005
    assert cfg["randomization"]["gain_range"] == [1000.0, 10000.0]
    assert cfg["distill"]["history"] == 20 and cfg["distill"]["align_weight"] == 0.1
    assert cfg["env"]["termination"]["max_steps"] == 200


def test_unknown_key(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"rl": {"iterationz": 3}}))
    assert main(["train-teacher", "--config", str(bad)]) == 2
    assert "invalid config" in capsys.readouterr().err


def test_bad_log_level(monkeypatch):
    monkeypatch.setenv("SOFTWRIST_LOG", "verbose")
    assert main(["physics-check"]) == 2


class TestPhysicsCheck:
    def test_default_passes(self, capsys):
        assert main(["physics-check"]) == 0
        out = capsys.readouterr().out
        assert out.count("PASS") == 5 and "FAIL" not in out

    def test_stiff_contact_fails(self, tmp_path, capsys):
        path = tmp_path / "stiff.json"
        path.write_text(json.dumps({"physics": {"contact": {"k_c": 1e9}}}))
        assert main(["physics-check", "--config", str(path)]) == 1
        assert "FAIL  integrator stability" in capsys.readouterr().out

    def test_negative_stiffness_is_config_error(self, tmp_path, capsys):
        path = tmp_path / "neg.json"
        path.write_text(json.dumps({"physics": {"wrist": {"kappa_x": -0.5}}}))
        assert main(["physics-check", "--config", str(path)]) == 2
        assert "PASS" not in capsys.readouterr().out


class TestTraining:
    def test_teacher_outputs(self, teacher):
        out = teacher.parent
        assert (out / "learning_curve.csv").is_file() and (out / "config.resolved.json").is_file()
        assert load_checkpoint(teacher).arch["in_dim"] == 16

    def test_no_alignment_width(self, tiny, tmp_path):
        out = tmp_path / "na"
        assert main(["train-teacher", "--config", str(tiny), "--out", str(out), "--iterations", "1",
                     "--ablation", "no-alignment"]) == 0
        ckpt = load_checkpoint(out / "teacher.swck")
        assert ckpt.arch["in_dim"] == 15 and ckpt.metadata["ablation"] == "no-alignment"
        # a student for the full-width configuration cannot use it
        assert main(["train-student", "--config", str(tiny), "--teacher", str(out / "teacher.swck"),
                     "--out", str(tmp_path / "s"), "--iterations", "1"]) == 3
        assert main(["train-student", "--config", str(tiny), "--teacher", str(out / "teacher.swck"),
                     "--ablation", "no-alignment", "--out", str(tmp_path / "s"), "--iterations", "1"]) == 0

    def test_student_deterministic(self, tiny, teacher, tmp_path):
        for name in ("a", "b"):
            assert main(["train-student", "--config", str(tiny), "--teacher", str(teacher),
                         "--out", str(tmp_path / name), "--iterations", "2", "--workers", "1"]) == 0
        a, b = (load_checkpoint(tmp_path / n / "encoder.swck") for n in "ab")
        assert to_bytes(a) == to_bytes(b)

    def test_resolved_config_reproduces(self, tiny, tmp_path):
        first = tmp_path / "r1"
        assert main(["train-teacher", "--config", str(tiny), "--out", str(first), "--iterations", "2",
                     "--workers", "1", "--seed", "5"]) == 0
        snap = first / "config.resolved.json"
        assert json.loads(snap.read_text())["seed"] == 5
        second = tmp_path / "r2"
        assert main(["train-teacher", "--config", str(snap), "--out", str(second), "--iterations", "2"]) == 0
        assert (first / "teacher.swck").read_bytes() == (second / "teacher.swck").read_bytes()


class TestEval:
    def test_teacher_only(self, tiny, teacher, tmp_path, capsys):
        rep = tmp_path / "rep"
        assert main(["eval", "--config", str(tiny), "--policy", str(teacher), "--report", str(rep)]) == 0
        assert {p.name for p in rep.iterdir()} >= {"eval.csv", "eval.json", "table_grid.csv", "config.resolved.json"}
        assert (rep / "table_grid.csv").read_text().splitlines()[0] == "shape,n_trials,-5deg,+0deg,+5deg"

    def test_student_needs_encoder(self, tiny, teacher, tmp_path, capsys):
        assert main(["eval", "--config", str(tiny), "--policy", str(teacher), "--student",
                     "--report", str(tmp_path / "r")]) == 2
        assert "--encoder" in capsys.readouterr().err

    def test_mismatch_exit(self, tiny, teacher, tmp_path):
        assert main(["eval", "--config", str(tiny), "--policy", str(teacher), "--encoder", str(teacher),
                     "--report", str(tmp_path / "r")]) == 3

    def test_rollout_with_encoder(self, tiny, teacher, tmp_path):
        assert main(["train-student", "--config", str(tiny), "--teacher", str(teacher),
                     "--out", str(tmp_path / "s"), "--iterations", "1"]) == 0
        trace = tmp_path / "roll" / "trace.csv"
        assert main(["rollout", "--config", str(tiny), "--policy", str(teacher), "--encoder",
                     str(tmp_path / "s" / "encoder.swck"), "--trace", str(trace), "--episodes", "2",
                     "--physics-trace", str(tmp_path / "roll" / "physics.csv")]) == 0
        assert trace.read_text().startswith("t,obs_0")
        physics = (tmp_path / "roll" / "physics.csv").read_text().splitlines()
        assert physics[0].startswith("t,base_x,base_y,base_z,q_z")
        # 25 substeps per control step
        assert len(physics) - 1 == 25 * (len(trace.read_text().splitlines()) - 1)
        pred = trace.with_name("trace_prediction.csv")
        assert pred.read_text().splitlines()[0] == "t,pred_x,true_x,pred_y,true_y,pred_z,true_z,pred_align_prob,true_align"
        assert main(["eval", "--config", str(tiny), "--policy", str(teacher), "--student", "--encoder",
                     str(tmp_path / "s" / "encoder.swck"), "--report", str(tmp_path / "rep"), "--grid", "train"]) == 0
