"""Training loops, checkpoints, distillation objectives and the ablation matrix on a toy config."""

import json

import numpy as np
import pytest

from uknowpan import training as tr
from uknowpan.data import make_scene_set
from uknowpan.errors import ConfigError, ContractError, TrainingError
from uknowpan.losses import LossWeights, hard_loss
from uknowpan.networks import FSAStudent, prior_features
from uknowpan.tensor import Tensor

TOY = dict(
    bands=2, base_channels=4, stages=2, multipliers=(1, 2), vector_dim=4, prior_width=4, prior_blocks=1,
    extractor_width=4, height=16, width=16, train_scenes=4, val_scenes=2, batch_size=2, crop=8,
    iterations=6, prior_iterations=4, distill_iterations=4, diffusion_steps=20, ddim_steps=2,
    val_every=0, q_window=4,
)


def toy(**changes):
    return tr.TrainConfig.from_flat({**TOY, **changes})


@pytest.fixture(scope="module")
def data():
    return make_scene_set(0, 4, "train", 2, 16, 16), make_scene_set(0, 2, "val", 2, 16, 16)


@pytest.fixture(scope="module")
def prior(data):
    return tr.train_prior(toy(), data[0])


@pytest.fixture(scope="module")
def teacher(data, prior):
    return tr.train_teacher(toy(), data[0], prior)


def params_equal(a, b):
    sa, sb = a.state_dict(), b.state_dict()
    return sa.keys() == sb.keys() and all(np.array_equal(sa[k], sb[k]) for k in sa)


# -- batches -------------------------------------------------------------------------


def test_batch_is_deterministic_and_aligned(data):
    cfg = toy()
    a = tr.make_batch(data[0], cfg, "teacher-batch", 3)
    b = tr.make_batch(data[0], cfg, "teacher-batch", 3)
    c = tr.make_batch(data[0], cfg, "teacher-batch", 4)
    for name in ("pan", "lrms_up", "x0", "t", "eps"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    assert not np.array_equal(a.eps, c.eps)
    assert a.pan.shape == (2, 1, 8, 8) and a.x0.shape == (2, 2, 8, 8)
    assert a.pan.dtype == np.float32
    assert np.all((a.t >= 1) & (a.t <= 20))


def test_batch_residual_matches_a_crop_of_some_scene(data):
    train = data[0]
    b = tr.make_batch(train, toy(dtype="float64"), "x", 0)
    for k in range(2):
        found = False
        for i in range(len(train)):
            for fh in (0, 1):
                for fv in (0, 1):
                    pan = tr._augment(train.pan[i], fh, fv)
                    for oy in range(0, 9, 4):
                        for ox in range(0, 9, 4):
                            if np.array_equal(pan[:, oy:oy + 8, ox:ox + 8], b.pan[k]):
                                hr = tr._augment(train.hrms[i], fh, fv)[:, oy:oy + 8, ox:ox + 8]
                                up = tr._augment(train.lrms_up[i], fh, fv)[:, oy:oy + 8, ox:ox + 8]
                                np.testing.assert_allclose(b.x0[k], 2.0 * (hr - up))
                                found = True
        assert found


def test_prior_cache_matches_direct_computation(data, prior):
    cache = tr.PriorCache(prior, data[0], np.float32)
    got = cache.get(1, 1, 0)
    pan = np.ascontiguousarray(data[0].pan[1][..., ::-1], dtype=np.float32)[None]
    up = np.ascontiguousarray(data[0].lrms_up[1][..., ::-1], dtype=np.float32)[None]
    np.testing.assert_array_equal(got, prior_features(prior, pan, up)[0])
    assert cache.get(1, 1, 0) is got


def test_crop_validation():
    with pytest.raises(ConfigError):
        toy(crop=6)
    with pytest.raises(ConfigError):
        toy(selector="student_big")


# -- prior and teacher ---------------------------------------------------------------------


def test_prior_loss_decreases(data):
    log = tr.RunLog()
    prior = tr.train_prior(toy(prior_iterations=200), data[0], log)
    losses = [r["loss"] for r in log.of_kind("train")]
    assert len(losses) == 200 and prior.trained
    assert np.mean(losses[-20:]) < np.mean(losses[:20])


def test_teacher_needs_trained_prior(data):
    with pytest.raises(ContractError):
        tr.train_teacher(toy(), data[0], None)
    tr.train_teacher(toy(ffa_on=False, iterations=1), data[0], None)


def test_teacher_training_is_bit_identical(data, prior, teacher):
    again = tr.train_teacher(toy(), data[0], prior)
    assert params_equal(teacher, again)


def test_resume_matches_uninterrupted_run(data, prior, teacher, tmp_path):
    cfg = toy()
    half = tr.train_teacher(cfg, data[0], prior, stop_at=3)
    path = tmp_path / "half.ukrs"
    tr.save_checkpoint(path, "teacher", half, cfg, 3, half._optimizer, prior)
    ckpt = tr.load_checkpoint(path)
    assert ckpt.iteration == 3
    resumed = tr.train_teacher(cfg, data[0], ckpt.prior, resume=ckpt)
    assert params_equal(resumed, teacher)


def test_checkpoint_round_trip_gives_identical_outputs(data, prior, teacher, tmp_path):
    cfg = toy()
    path = tmp_path / "teacher.ukrs"
    tr.save_checkpoint(path, "teacher", teacher, cfg, 6, teacher._optimizer, prior)
    manifest = json.loads(tr.manifest_path(path).read_text())
    assert manifest["kind"] == "teacher" and manifest["iteration"] == 6
    assert manifest["train_config"]["base_channels"] == "4"
    ckpt = tr.load_checkpoint(path)
    assert ckpt.train_config().flat == cfg.flat
    a = tr.sharpen(teacher, data[1], cfg, seed=3)
    b = tr.sharpen(ckpt.model, data[1], cfg, seed=3)
    assert np.array_equal(a, b)

    prior_path = tmp_path / "prior.ukrs"
    tr.save_checkpoint(prior_path, "prior", prior, cfg, 4)
    loaded = tr.load_checkpoint(prior_path).model
    assert loaded.trained and params_equal(loaded, prior)


def test_checkpoint_errors(tmp_path, teacher):
    from uknowpan.errors import FormatError

    with pytest.raises(FormatError):
        tr.load_checkpoint(tmp_path / "absent.ukrs")
    path = tmp_path / "t.ukrs"
    tr.save_checkpoint(path, "teacher", teacher, toy(), 6, prior=teacher.prior)
    meta = json.loads(tr.manifest_path(path).read_text())
    meta["model_config"]["base_channels"] = 8
    meta["model_config"]["multipliers"] = [1, 2]
    tr.manifest_path(path).write_text(json.dumps(meta))
    with pytest.raises(Exception) as info:
        tr.load_checkpoint(path)
    assert isinstance(info.value, (FormatError, ValueError))


def test_periodic_checkpoints_and_log_file(data, prior, tmp_path):
    log = tr.RunLog(tmp_path / "run.log")
    tr.train_teacher(toy(checkpoint_every=2, val_every=3), data[0], prior, data[1], log, checkpoint_dir=tmp_path)
    assert sorted(p.name for p in tmp_path.glob("teacher_*.ukrs")) == [
        "teacher_0000002.ukrs", "teacher_0000004.ukrs", "teacher_0000006.ukrs"]
    records = [json.loads(line) for line in (tmp_path / "run.log").read_text().splitlines()]
    assert [r["iteration"] for r in records if r["kind"] == "val"] == [3, 6]
    assert all("theta_mean" in r for r in records if r["kind"] == "train")


def test_non_finite_loss_raises(data, prior):
    bad = data[0].subset(slice(None))
    bad.hrms = bad.hrms.copy()
    bad.hrms[:] = np.nan
    with pytest.raises(TrainingError, match="iteration 0"), np.errstate(invalid="ignore"):
        tr.train_teacher(toy(), bad, prior)


def test_sharpen_range_and_uncertainty(data, teacher):
    fused, theta = tr.sharpen(teacher, data[1], toy(), seed=1, with_uncertainty=True)
    assert fused.shape == data[1].hrms.shape and fused.dtype == np.float64
    assert fused.min() >= 0 and fused.max() <= 1
    assert theta.shape == fused.shape and np.all(theta > 0)


# -- students -------------------------------------------------------------------------------


def test_l1_objective_logs_only_hard(rng):
    x = Tensor(rng.standard_normal((1, 2, 4, 4)))
    loss, parts = tr.student_objective("student_L1", x, [], np.zeros((1, 2, 4, 4)), None, LossWeights())
    assert set(parts) == {"hard"}
    assert loss.item() == pytest.approx(np.mean(np.abs(x.data)))


def test_kd_ignores_uncertainty(rng):
    x = Tensor(rng.standard_normal((1, 2, 4, 4)))
    x0 = rng.standard_normal(x.shape)
    teacher_out = (rng.standard_normal(x.shape), np.full(x.shape, 5.0), [x0])
    w = LossWeights(lambda_s=0.0, lambda_f=0.0)
    loss, _ = tr.student_objective("student_KD", x, [x], x0, teacher_out, w)
    assert loss.item() == pytest.approx(w.tau * np.mean(np.abs(x.data - x0)))


def test_u_know_without_soft_and_feat_is_hard_path(rng):
    x = Tensor(rng.standard_normal((1, 2, 4, 4)))
    x0 = rng.standard_normal(x.shape)
    theta = np.abs(rng.standard_normal(x.shape)) + 0.1
    w = LossWeights(lambda_s=0.0, lambda_f=0.0)
    loss, parts = tr.student_objective("student_UKnow", x, [x], x0, (x0, theta, [x0]), w)
    assert loss.item() == hard_loss(x, x0, theta, w).item()
    assert set(parts) == {"hard", "soft", "feat"}


def test_distillation_leaves_teacher_untouched(data, teacher):
    teacher.zero_grad()
    before = teacher.state_dict()
    tr.distill_students(toy(), teacher, data[0], ["student_UKnow"])
    assert all(p.grad is None for p in teacher.parameters())
    assert all(np.array_equal(before[k], v) for k, v in teacher.state_dict().items())


def test_lockstep_equals_separate_runs(data, teacher):
    cfg = toy()
    together = tr.distill_students(cfg, teacher, data[0], tr.STUDENT_SELECTORS)
    for s in tr.STUDENT_SELECTORS:
        alone = tr.distill_student(toy(selector=s), teacher, data[0])
        assert params_equal(together[s], alone)


def test_student_logs(data, teacher):
    log = tr.RunLog()
    tr.distill_students(toy(val_every=2), teacher, data[0], ["student_L1", "student_UKnow"], data[1], log)
    l1 = [r for r in log.of_kind("train") if r["model"] == "student_L1"]
    uk = [r for r in log.of_kind("train") if r["model"] == "student_UKnow"]
    assert all("soft" not in r for r in l1) and all("feat" in r for r in uk)
    assert len([r for r in log.of_kind("val")]) == 4


def test_distillation_contracts(data):
    with pytest.raises(ContractError):
        tr.distill_students(toy(), None, data[0], ["student_KD"])
    with pytest.raises(ConfigError):
        tr.distill_students(toy(), None, data[0], ["teacher"])
    st = tr.distill_students(toy(), None, data[0], ["student_L1"])["student_L1"]
    assert isinstance(st, FSAStudent)


# -- ablation -------------------------------------------------------------------------------


def test_ablation_run_list():
    runs = tr.ablation_runs()
    assert len(runs) == 9
    assert [r.group for r in runs].count("blocks") == 4
    assert {r.selector for r in runs if r.group == "loss"} == set(tr.STUDENT_SELECTORS)
    assert {r.cond_kind for r in runs if r.group == "conditioning"} == {"SWT", "DWT"}


def test_ablation_matrix_and_csv():
    cfg = toy(iterations=2, prior_iterations=2, distill_iterations=2)
    rows = tr.run_ablation_matrix(cfg, seeds=(0,))
    assert len(rows) == 9
    text = tr.ablation_csv(rows)
    lines = text.strip().splitlines()
    head = lines[0].split(",")
    assert head[:3] == ["group", "label", "count"]
    assert "psnr_mean" in head and "sam_std" in head
    assert len(lines) == 10
    assert all(len(line.split(",")) == len(head) for line in lines[1:])
    # a teacher cell repeated across groups reuses the same trained model
    full = [r for r in rows if r["label"] in ("ffa=on/hqfe=on", "SWT")]
    assert full[0]["report"].values == full[1]["report"].values
