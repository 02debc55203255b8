import numpy as np
import pytest

from softwrist.config import ExperimentConfig
from softwrist.distill import (
    LOSS_COLUMNS,
    TRACE_COLUMNS,
    annealed_lr,
    check_teacher,
    collect_distill_data,
    encoder_loss_and_grads,
    make_encoder,
    prediction_trace,
    student_act,
    trace_metrics,
    train_student,
    write_prediction_trace,
)
from softwrist.nn import ActorCritic, load_checkpoint, sigmoid
from softwrist.nn.checkpoint import CheckpointMismatch, to_bytes


def tiny_config(**kw):
    return ExperimentConfig.model_validate({
        "workers": 2, "env": {"contact": False},
        "distill": {"steps_per_iteration": 40, "minibatch": 20, "epochs": 1, "channels": 8, "heldout_steps": 40},
        **kw,
    })


def teacher(in_dim=16, seed=0):
    return ActorCritic("mlp_policy", {"in_dim": in_dim, "hidden": [16, 16]}, np.random.default_rng(seed))


def test_student_act_uses_estimate():
    cfg = tiny_config()
    enc = make_encoder(cfg, np.random.default_rng(0))
    t = teacher()
    rng = np.random.default_rng(1)
    hist, obs = rng.normal(size=(3, 20, 6)), rng.normal(size=(3, 6))
    a = student_act(enc, t, hist, obs)
    pose, logit = enc.predict(hist)
    want = t.mean(np.concatenate([obs, pose, sigmoid(logit)[:, None]], axis=1))
    np.testing.assert_allclose(a, want)
    np.testing.assert_allclose(student_act(enc, t, hist[1], obs[1]), want[1])


def test_threshold_flag():
    cfg = tiny_config()
    enc = make_encoder(cfg, np.random.default_rng(0))
    est = enc.privileged_estimate(np.random.default_rng(2).normal(size=(4, 20, 6)), threshold_alignment=True)
    assert set(np.unique(est[:, 9])) <= {0.0, 1.0}


def test_check_teacher():
    check_teacher(teacher(16), True)
    check_teacher(teacher(15), False)
    with pytest.raises(CheckpointMismatch):
        check_teacher(teacher(15), True)


def test_collected_history_excludes_current_observation():
    cfg = tiny_config()
    batch = collect_distill_data(make_encoder(cfg, np.random.default_rng(0)), teacher(), cfg, 10)
    assert batch.histories.shape == (10, 20, 6)
    assert batch.pose.shape == (10, 9) and batch.align.shape == (10,)
    # the first sample of each env is taken at reset, before anything entered the history
    assert not batch.histories[0].any() and not batch.histories[1].any()
    # one step later exactly one row is filled
    assert np.count_nonzero(np.any(batch.histories[2] != 0, axis=1)) == 1


def test_encoder_gradient_matches_finite_differences():
    cfg = tiny_config()
    enc = make_encoder(cfg, np.random.default_rng(0))
    rng = np.random.default_rng(5)
    h, pose, align = rng.normal(size=(4, 20, 6)), rng.normal(size=(4, 9)), (rng.uniform(size=4) > 0.5).astype(float)
    _, _, grads = encoder_loss_and_grads(enc, h, pose, align, 0.1)
    eps = 1e-6
    for name in ["block0.conv1.W", "head.align.W", "head.pose.b"]:
        flat = enc.params[name].reshape(-1)
        for idx in range(3):
            old = flat[idx]
            flat[idx] = old + eps
            lp = encoder_loss_and_grads(enc, h, pose, align, 0.1)[0]
            flat[idx] = old - eps
            lm = encoder_loss_and_grads(enc, h, pose, align, 0.1)[0]
            flat[idx] = old
            assert grads[name].reshape(-1)[idx] == pytest.approx((lp - lm) / (2 * eps), rel=1e-5, abs=1e-9)


def test_training_is_deterministic(tmp_path):
    cfg = tiny_config()
    a = train_student(cfg, teacher(), tmp_path / "a", iterations=2)
    b = train_student(cfg, teacher(), tmp_path / "b", iterations=2)
    assert to_bytes(load_checkpoint(a.checkpoint)) == to_bytes(load_checkpoint(b.checkpoint))
    assert (tmp_path / "a" / "student_loss.csv").read_bytes() == (tmp_path / "b" / "student_loss.csv").read_bytes()
    header = (tmp_path / "a" / "student_loss.csv").read_text().splitlines()[0]
    assert header.split(",") == LOSS_COLUMNS
    assert (tmp_path / "a" / "heldout.json").is_file()
    ckpt = load_checkpoint(a.checkpoint)
    assert ckpt.kind == "tcn_encoder" and ckpt.normalization


def test_no_alignment_student_has_no_bce(tmp_path):
    cfg = tiny_config(ablation="no-alignment")
    run = train_student(cfg, teacher(15), tmp_path, iterations=1)
    assert run.curve[0]["bce"] == 0.0
    assert "align" not in run.encoder.net.heads


def test_annealed_lr():
    assert annealed_lr(1e-3, None, 7, 10) == 1e-3
    assert annealed_lr(1e-3, 1e-4, 1, 10) == 1e-3
    assert annealed_lr(1e-3, 1e-4, 10, 10) == pytest.approx(1e-4)
    assert annealed_lr(1e-3, 1e-4, 4, 7) == pytest.approx(5.5e-4)


def test_encoder_learns_constant_target():
    # a fixed pose target is learnable from any history
    cfg = tiny_config()
    enc = make_encoder(cfg, np.random.default_rng(0))
    from softwrist.nn import Adam

    opt = Adam(enc.params, lr=1e-2)
    rng = np.random.default_rng(0)
    h = rng.normal(size=(32, 20, 6))
    pose = np.tile(np.linspace(-0.5, 0.5, 9), (32, 1))
    align = np.ones(32)
    first = encoder_loss_and_grads(enc, h, pose, align, 0.1)[1]["mse"]
    for _ in range(150):
        _, parts, g = encoder_loss_and_grads(enc, h, pose, align, 0.1)
        opt.step(enc.params, g)
    assert parts["mse"] < 0.05 * first
    assert parts["align_accuracy"] == 1.0


class TestTrace:
    def test_columns(self, tmp_path):
        cfg = tiny_config()
        eps = prediction_trace(make_encoder(cfg, np.random.default_rng(0)), teacher(), cfg, 2)
        path = write_prediction_trace(eps, tmp_path / "trace.csv")
        lines = path.read_text().splitlines()
        assert lines[0] == "t,pred_x,true_x,pred_y,true_y,pred_z,true_z,pred_align_prob,true_align"
        assert lines[0].split(",") == TRACE_COLUMNS
        assert len(lines) == 1 + sum(len(e) for e in eps)
        assert eps[1][0]["t"] == 0

    def test_metrics(self):
        def ep(truth, pred):
            return [{"t": i, "pred_x": 0.0, "true_x": 0.0, "pred_y": 0.0, "true_y": 0.0, "pred_z": 0.1, "true_z": 0.0,
                     "pred_align_prob": p, "true_align": a} for i, (a, p) in enumerate(zip(truth, pred))]

        on_time = ep([0] * 5 + [1] * 5, [0.1] * 7 + [0.9] * 3)
        late = ep([0] * 5 + [1] * 10, [0.1] * 14 + [0.9])
        m = trace_metrics([on_time, late])
        assert m["transition_hit_rate"] == 0.5
        assert m["rmse"]["z"] == pytest.approx(0.1) and m["rmse"]["x"] == 0.0
