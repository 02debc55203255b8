"""Acceptance gate: one test per criterion, each recording a PASS/FAIL line.

Criteria 5, 6 and 10 re-evaluate the stored desk-scale artifacts under
``artifacts/desk``; when those are missing they are trained first (hours of CPU).
Criterion 7 needs several full training runs and only runs with SOFTWRIST_ABLATION=1.
"""

import csv
import json
import math
import os
from pathlib import Path

import numpy as np
import pytest
from test_nn import finite_difference_check

from softwrist import seeding
from softwrist.cli import main
from softwrist.config import ExperimentConfig, load_config
from softwrist.distill import TRACE_COLUMNS, collect_distill_data, evaluate_encoder, train_student
from softwrist.env import (
    Termination,
    alignment_state,
    check_termination,
    compute_reward,
    weighted_distance,
)
from softwrist.evalsuite import (
    EvalCondition,
    ScriptedOracle,
    StudentAgent,
    TeacherAgent,
    load_agent,
    run_eval,
    summarize_seeds,
    training_condition,
)
from softwrist.geometry import rotation_to_6d
from softwrist.nn import Mlp, TcnNet, load_checkpoint, network_from_checkpoint, student_loss
from softwrist.physcheck import check_energy, check_gravity_sag, check_oscillator
from softwrist.rl import evaluate_policy, train_teacher

ROOT = Path(__file__).resolve().parents[1]
DESK_CONFIG = ROOT / "configs" / "desk.json"
DESK = ROOT / "artifacts" / "desk"
TEACHER = DESK / "teacher" / "teacher_best.swck"
# the student is distilled from the final teacher checkpoint of the same run
FINAL_TEACHER = DESK / "teacher" / "teacher.swck"
CURVE = DESK / "teacher" / "learning_curve.csv"
ENCODER = DESK / "student" / "encoder.swck"
NO_RAND = (("angle", False), ("hole", False), ("stiffness", False), ("init", False))
FULL_RAND = (("angle", True), ("hole", True), ("stiffness", True), ("init", True))


def desk_config() -> ExperimentConfig:
    return load_config(DESK_CONFIG)


def ensure_teacher():
    if not (TEACHER.is_file() and FINAL_TEACHER.is_file()):
        cfg = desk_config()
        train_teacher(cfg, TEACHER.parent)
    return TEACHER


def ensure_student():
    if not ENCODER.is_file():
        ensure_teacher()
        ckpt = load_checkpoint(FINAL_TEACHER)
        train_student(desk_config(), network_from_checkpoint(ckpt), ENCODER.parent,
                      teacher_normalization=ckpt.normalization)
    return ENCODER


def read_curve(path):
    with open(path) as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]


# ---------------------------------------------------------------- 1. physics fidelity

def test_physics_fidelity(criterion):
    results = [check_oscillator(ExperimentConfig(), tol=0.02), check_energy(ExperimentConfig(), rtol=1e-9),
               check_gravity_sag(ExperimentConfig(), tol=1e-4)]
    ok = all(r.passed for r in results)
    criterion(1, ok, "; ".join(f"{r.name}: {r.detail}" for r in results))
    assert ok


# ---------------------------------------------------------------- 2. formula exactness

def test_formula_exactness(criterion):
    checks = []

    def close(a, b):
        checks.append(bool(np.all(np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)) <= 1e-9)))

    close(weighted_distance((0.01, 0, 0)), 0.01)
    close(weighted_distance((0, 0, 0.01)), math.sqrt(10) * 0.01)
    checks += [alignment_state((0, 0, 0.05)), not alignment_state((0.007, 0, 0.01)),
               alignment_state((0.004, 0.004, 0.02))]
    close(compute_reward(0.020, 0.019, np.zeros(3), np.zeros(3), False, False), 1.0)
    close(compute_reward(0.02, 0.02, (0, 0, -1), (0, 0, -1), False, False), -1.0)
    close(compute_reward(0.02, 0.02, (0, 0, -1), (0, 0, -1), True, True), 0.999)
    checks += [check_termination(0.01, 0.02, (0.004, 0, 0), 5) == Termination.SUCCESS,
               check_termination(0.025, 0.020, (0.02, 0, 0), 5) == Termination.FAIL_DIVERGENCE,
               check_termination(0.02, 0.02, (0.01, 0, 0), 200) == Termination.FAIL_TIMEOUT]
    c, s = math.cos(math.pi / 2), math.sin(math.pi / 2)
    close(rotation_to_6d([[c, -s, 0], [s, c, 0], [0, 0, 1]]), [0, 1, 0, -1, 0, 0])
    c, s = math.cos(math.radians(5)), math.sin(math.radians(5))
    close(rotation_to_6d([[1, 0, 0], [0, c, -s], [0, s, c]]), [1, 0, 0, 0, c, s])
    truth = np.linspace(-0.4, 0.4, 9)
    off = truth.copy()
    off[3] += 0.1
    close(student_loss(truth, 50.0, truth, 1), 0.0)
    close(student_loss(off, 800.0, truth, 1), 0.01 / 9)
    close(student_loss(truth, 0.0, truth, 1), 0.1 * math.log(2))
    ok = all(checks)
    criterion(2, ok, f"{sum(checks)}/{len(checks)} hand-computed examples within 1e-9")
    assert ok


# ---------------------------------------------------------------- 3. gradients

def test_gradient_correctness(criterion):
    rng = np.random.default_rng(0)
    mlp = Mlp([16, 256, 256, 3], rng, out_gain=1.0)
    x, target = rng.normal(size=(7, 16)), rng.normal(size=(7, 3))
    out, acts = mlp.forward(x)
    mlp_err = finite_difference_check(mlp.params, lambda: 0.5 * np.sum((mlp(x) - target) ** 2),
                                      mlp.backward(acts, out - target), n=200)

    tcn = TcnNet(6, {"pose": 9, "align": 1}, rng=rng)
    for v in tcn.params.values():
        v += 0.05 * rng.normal(size=v.shape)
    h, tp, ta = rng.normal(size=(5, 20, 6)), rng.normal(size=(5, 9)), rng.integers(0, 2, size=5)

    def tcn_loss():
        o = tcn(h)
        return student_loss(o["pose"], o["align"][:, 0], tp, ta)

    outs, cache = tcn.forward(h)
    _, _, d_pose, d_logit = student_loss(outs["pose"], outs["align"][:, 0], tp, ta, with_grad=True)
    tcn_err = finite_difference_check(tcn.params, tcn_loss, tcn.backward(cache, {"pose": d_pose, "align": d_logit}),
                                      n=200)
    ok = mlp_err < 1e-4 and tcn_err < 1e-4
    criterion(3, ok, f"worst relative error over 200 parameters: MLP {mlp_err:.1e}, TCN {tcn_err:.1e}")
    assert ok


# ---------------------------------------------------------------- 4. reach toy

def test_rl_reach_toy(criterion, tmp_path):
    cfg = ExperimentConfig.model_validate({"env": {"contact": False}, "rl": {"iterations": 100}})
    run = train_teacher(cfg, tmp_path)
    rate, _ = evaluate_policy(run.policy, cfg, 100, seeding.derived_seed(cfg.seed, "acceptance"))
    ok = rate >= 0.95 and run.curve[-1]["timesteps"] <= 100_000
    criterion(4, ok, f"contact-free reach: {rate:.2f} eval success after {len(run.curve)} iterations "
                     f"({run.curve[-1]['timesteps']} steps)")
    assert ok


# ---------------------------------------------------------------- 5. desk teacher

def smoothed(curve, iteration, window=10):
    vals = [r["mean_return"] for r in curve if iteration - window < r["iteration"] <= iteration]
    return float(np.mean(vals))


def test_desk_teacher(criterion):
    cfg = desk_config()
    ckpt = load_checkpoint(ensure_teacher())
    agent = TeacherAgent(network_from_checkpoint(ckpt), ckpt.normalization)
    rate = run_eval(agent, [training_condition(cfg, 100)], cfg).rows[0].success_rate
    best = int(ckpt.metadata["iteration"])
    curve = read_curve(CURVE)
    r100, rbest = smoothed(curve, 100), smoothed(curve, best)
    ok = rate >= 0.6 and best <= 1500 and rbest > r100
    criterion(5, ok, f"teacher (iteration {best}) success {rate:.2f} over 100 trials; "
                     f"10-iteration mean return {r100:.1f} at 100 -> {rbest:.1f} at {best}")
    assert ok


# ---------------------------------------------------------------- 6. distillation

def test_distillation_quality(criterion):
    cfg = desk_config()
    ensure_student()
    student = load_agent(FINAL_TEACHER, ENCODER)
    teacher = load_agent(FINAL_TEACHER)
    assert isinstance(student, StudentAgent)
    heldout = collect_distill_data(student.encoder, student.teacher, cfg, cfg.distill.heldout_steps,
                                   seed=seeding.derived_seed(cfg.seed, "acceptance-heldout"))
    acc = evaluate_encoder(student.encoder, heldout)["align_accuracy"]
    conds = [training_condition(cfg, 100)]
    t_rate = run_eval(teacher, conds, cfg).rows[0].success_rate
    s_rate = run_eval(student, conds, cfg).rows[0].success_rate
    ok = acc >= 0.9 and s_rate >= t_rate - 0.2
    criterion(6, ok, f"held-out alignment accuracy {acc:.3f}; success teacher {t_rate:.2f}, student {s_rate:.2f}")
    assert ok


# ---------------------------------------------------------------- 7. ablation trend (optional)

@pytest.mark.skipif(os.environ.get("SOFTWRIST_ABLATION") != "1", reason="extended run; set SOFTWRIST_ABLATION=1")
def test_alignment_ablation_trend(criterion, tmp_path):
    seeds = [0, 1, 2]
    reports = {"with": [], "without": []}
    for seed in seeds:
        for key, ablation in (("with", "none"), ("without", "no-alignment")):
            cfg = desk_config().model_copy(update={"seed": seed, "ablation": ablation})
            out = tmp_path / f"{key}{seed}"
            t = train_teacher(cfg, out / "teacher")
            ckpt = load_checkpoint(t.best_checkpoint or t.checkpoint)
            s = train_student(cfg, network_from_checkpoint(ckpt), out / "student",
                              teacher_normalization=ckpt.normalization)
            agent = StudentAgent(s.encoder, network_from_checkpoint(ckpt), normalization=ckpt.normalization)
            cond = EvalCondition(cfg.env.peg_shape, None, 0.0, cfg.eval.n_trials, agent.kind,
                                 FULL_RAND, include_alignment=ablation == "none")
            rep = run_eval(agent, [cond], cfg, policy_seed=seed)
            rep.rows[0].condition = key
            reports[key].append(rep)
    q = {k: summarize_seeds(v)[k] for k, v in reports.items()}
    ok = q["with"]["median"] >= q["without"]["median"]
    criterion(7, ok, f"median student success with alignment {q['with']['median']:.2f}, "
                     f"without {q['without']['median']:.2f}; quartiles {json.dumps(q)}")
    assert ok


# ---------------------------------------------------------------- 8. oracle

def test_oracle_solvability(criterion):
    cfg = ExperimentConfig()
    rows = run_eval(ScriptedOracle(), [EvalCondition(n_trials=100, policy_kind="oracle", randomization=NO_RAND),
                                       EvalCondition(n_trials=100, policy_kind="oracle", randomization=FULL_RAND)],
                    cfg).rows
    ok = rows[0].success_rate == 1.0 and rows[1].success_rate >= 0.9
    criterion(8, ok, f"scripted oracle: {rows[0].success_rate:.2f} without randomization, "
                     f"{rows[1].success_rate:.2f} with full randomization (100 trials each)")
    assert ok


# ---------------------------------------------------------------- 9. reproducibility

def test_reproducibility(criterion, tmp_path):
    reach = tmp_path / "reach.json"
    reach.write_text(json.dumps({"env": {"contact": False}, "rl": {"iterations": 3}}))
    files = []
    for run in ("a", "b"):
        out = tmp_path / run
        assert main(["train-teacher", "--config", str(reach), "--workers", "1", "--out", str(out / "reach")]) == 0
        assert main(["train-teacher", "--config", str(DESK_CONFIG), "--workers", "1", "--iterations", "2",
                     "--out", str(out / "desk")]) == 0
        assert main(["train-student", "--config", str(DESK_CONFIG), "--workers", "1", "--iterations", "2",
                     "--teacher", str(out / "desk" / "teacher.swck"), "--out", str(out / "student")]) == 0
        assert main(["eval", "--config", str(DESK_CONFIG), "--policy", str(out / "desk" / "teacher.swck"),
                     "--encoder", str(out / "student" / "encoder.swck"), "--trials", "2",
                     "--report", str(out / "report")]) == 0
        files.append(sorted(p for p in out.rglob("*") if p.is_file() and p.name != "config.resolved.json"))
    rel = [[p.relative_to(tmp_path / r) for p in f] for r, f in zip("ab", files)]
    same = rel[0] == rel[1] and all(a.read_bytes() == b.read_bytes() for a, b in zip(*files))
    criterion(9, same, f"{len(files[0])} checkpoint/curve/report files bitwise identical across two single-worker runs")
    assert same


# ---------------------------------------------------------------- 10. report formats

def test_report_formats(criterion, tmp_path):
    ensure_student()
    rep = tmp_path / "report"
    assert main(["eval", "--config", str(DESK_CONFIG), "--policy", str(FINAL_TEACHER), "--encoder", str(ENCODER),
                 "--trials", "2", "--report", str(rep)]) == 0
    grid = list(csv.reader(open(rep / "table_grid.csv")))
    trace = tmp_path / "roll" / "trace.csv"
    assert main(["rollout", "--config", str(DESK_CONFIG), "--policy", str(FINAL_TEACHER), "--encoder", str(ENCODER),
                 "--trace", str(trace), "--episodes", "2"]) == 0
    pred_header = (trace.parent / "trace_prediction.csv").read_text().splitlines()[0].split(",")
    ok = (grid[0] == ["shape", "n_trials", "-5deg", "+0deg", "+5deg"]
          and [r[0] for r in grid[1:]] == ["circle", "square", "triangle", "hexagon"]
          and all(r[1] == "2" for r in grid[1:]) and pred_header == TRACE_COLUMNS)
    criterion(10, ok, f"grid {len(grid) - 1} shapes x {len(grid[0]) - 2} misalignments; prediction trace columns "
                      f"{','.join(pred_header)}")
    assert ok
