"""Prior, teacher and student training loops, checkpoints, evaluation and the ablation matrix.

Every iteration draws its batch, flips, crops, timesteps and noise from a
stream keyed by ``(seed, purpose, iteration)``. A run resumed from a
checkpoint therefore needs nothing beyond the parameters, the optimizer
moments and the iteration count to continue bit-identically.
"""

from __future__ import annotations

import csv
import io
import json
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import config as C
from . import tensor as T
from .data import SceneSet, make_scene_set, read_rasters, write_rasters
from .diffusion import make_schedule, q_sample, sample
from .errors import ConfigError, ContractError, FormatError, NumericError, TrainingError
from .losses import LossWeights, feat_loss, hard_loss, l1_loss, soft_loss, u_diff_loss
from .metrics import MetricReport, full_resolution_metrics, reduced_metrics
from .networks import (
    RESIDUAL_SCALE, FSAStudent, FSATeacher, ModelConfig, PriorNetwork, prior_features,
)
from .optim import AdamW, step_lr
from .rng import make_rng, sub_seed
from .tensor import Tensor


@dataclass
class TrainConfig:
    iterations: int = 5000
    prior_iterations: int = 1000
    distill_iterations: int = 2000
    batch_size: int = 8
    crop: int = 32
    lr: float = 1e-3
    lr_decay: float = 0.5
    lr_decay_every: int = 10_000
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 1e-4
    adam_eps: float = 1e-8
    seed: int = 0
    selector: str = "teacher"
    diffusion_steps: int = 500
    ddim_steps: int = 25
    beta_start: float = 1e-4
    beta_end: float = 0.02
    val_every: int = 250
    q_window: int = 8
    dtype: str = "float32"
    checkpoint_every: int = 0
    loss: LossWeights = field(default_factory=LossWeights)
    model: ModelConfig = field(default_factory=ModelConfig)
    flat: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.batch_size < 1 or self.iterations < 0:
            raise ConfigError("batch_size must be >= 1 and iterations >= 0")
        if self.crop and (self.crop % 4 or self.crop % (2 ** (self.model.stages - 1))):
            raise ConfigError(f"crop {self.crop} must be a multiple of 4 and of 2^(stages-1)")
        if self.selector not in C.SELECTORS:
            raise ConfigError(f"unknown selector {self.selector!r}")

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def schedule(self):
        return make_schedule(self.diffusion_steps, self.beta_start, self.beta_end, self.ddim_steps)

    @classmethod
    def from_flat(cls, flat: dict) -> "TrainConfig":
        v = dict(C.DEFAULTS)
        v.update(flat)
        model = ModelConfig(
            bands=v["bands"], base_channels=v["base_channels"], stages=v["stages"],
            multipliers=v["multipliers"], vector_dim=v["vector_dim"], prior_width=v["prior_width"],
            prior_blocks=v["prior_blocks"], extractor_width=v["extractor_width"], cond_kind=v["cond_kind"],
            ffa_on=v["ffa_on"], hqfe_on=v["hqfe_on"], seed=v["seed"],
        )
        loss = LossWeights(v["lambda_s"], v["lambda_f"], v["tau"], v["gamma"], v["alpha"])
        names = [f for f in cls.__dataclass_fields__ if f not in ("loss", "model", "flat")]
        return cls(**{k: v[k] for k in names}, loss=loss, model=model, flat=v)


# -- batches ---------------------------------------------------------------------


@dataclass
class Batch:
    pan: np.ndarray
    lrms_up: np.ndarray
    x0: np.ndarray
    t: np.ndarray
    eps: np.ndarray
    prior_out: Optional[np.ndarray] = None


def _augment(a: np.ndarray, fh: int, fv: int) -> np.ndarray:
    if fh:
        a = a[..., ::-1]
    if fv:
        a = a[..., ::-1, :]
    return a


class PriorCache:
    """Frozen-prior features per (scene, flip), computed on the whole scene on first use."""

    def __init__(self, prior: PriorNetwork, data: SceneSet, dtype):
        self.prior = prior
        self.data = data
        self.dtype = dtype
        self._store = {}

    def get(self, idx: int, fh: int, fv: int) -> np.ndarray:
        key = (idx, fh, fv)
        if key not in self._store:
            pan = np.ascontiguousarray(_augment(self.data.pan[idx], fh, fv), dtype=self.dtype)[None]
            up = np.ascontiguousarray(_augment(self.data.lrms_up[idx], fh, fv), dtype=self.dtype)[None]
            self._store[key] = prior_features(self.prior, pan, up)[0]
        return self._store[key]


def make_batch(data: SceneSet, cfg: TrainConfig, purpose: str, iteration: int,
               prior_cache: Optional[PriorCache] = None) -> Batch:
    rng = make_rng(cfg.seed, purpose, iteration)
    n = len(data)
    bs = cfg.batch_size
    idx = rng.choice(n, size=bs, replace=bs > n)
    flips = rng.integers(0, 2, size=(bs, 2))
    h, w = data.pan.shape[-2:]
    crop = cfg.crop or h
    if crop > h or crop > w:
        raise ConfigError(f"crop {crop} exceeds scene size {h}x{w}")
    offsets = rng.integers(0, (min(h, w) - crop) // 4 + 1, size=(bs, 2)) * 4
    t = rng.integers(1, cfg.diffusion_steps + 1, size=bs)
    eps = rng.standard_normal((bs, data.bands, crop, crop))
    dt = cfg.np_dtype
    pans, ups, x0s, priors = [], [], [], []
    for k in range(bs):
        i, (fh, fv), (oy, ox) = int(idx[k]), flips[k], offsets[k]
        win = (slice(None), slice(oy, oy + crop), slice(ox, ox + crop))
        pans.append(_augment(data.pan[i], fh, fv)[win])
        up = _augment(data.lrms_up[i], fh, fv)[win]
        ups.append(up)
        x0s.append(RESIDUAL_SCALE * (_augment(data.hrms[i], fh, fv)[win] - up))
        if prior_cache is not None:
            priors.append(prior_cache.get(i, int(fh), int(fv))[win])
    return Batch(
        pan=np.stack(pans).astype(dt), lrms_up=np.stack(ups).astype(dt), x0=np.stack(x0s).astype(dt),
        t=t, eps=eps.astype(dt), prior_out=np.stack(priors).astype(dt) if priors else None,
    )


# -- logging -------------------------------------------------------------------------


class RunLog:
    """Newline-delimited JSON records, kept in memory and optionally appended to a file."""

    def __init__(self, path=None, echo: Optional[Callable] = None):
        self.records = []
        self.path = Path(path) if path else None
        self.echo = echo
        self._t0 = time.perf_counter()

    def write(self, **record) -> None:
        record.setdefault("wall", round(time.perf_counter() - self._t0, 3))
        self.records.append(record)
        if self.path is not None:
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
        if self.echo is not None:
            self.echo(record)

    def of_kind(self, kind: str) -> list:
        return [r for r in self.records if r.get("kind") == kind]


def _divergence(what: str, iteration: int, batch: Batch, cfg: TrainConfig, detail: str) -> TrainingError:
    return TrainingError(
        f"{what} diverged at iteration {iteration}: {detail}, t={batch.t.tolist()}, "
        f"batch seed=({cfg.seed}, iteration {iteration})"
    )


def _check_finite(value: float, iteration: int, batch: Batch, cfg: TrainConfig, what: str) -> None:
    if not np.isfinite(value):
        raise _divergence(what, iteration, batch, cfg, f"loss={value}")


@contextmanager
def _guard(iteration: int, batch: Batch, cfg: TrainConfig, what: str):
    """Re-raise numeric failures inside a step with the step's coordinates."""
    try:
        yield
    except TrainingError:
        raise
    except NumericError as exc:
        raise _divergence(what, iteration, batch, cfg, str(exc)) from exc


# -- checkpoints ---------------------------------------------------------------------


def save_checkpoint(path, kind: str, model, cfg: TrainConfig, iteration: int,
                    optimizer: Optional[AdamW] = None, prior: Optional[PriorNetwork] = None,
                    extra: Optional[dict] = None) -> None:
    """Parameters (and optimizer moments) in a UKRS file plus a JSON manifest beside it."""
    path = Path(path)
    names = [n for n, _ in model.named_parameters()]
    arrays = {f"param/{n}": p.data for n, p in model.named_parameters()}
    if prior is not None:
        arrays.update({f"prior/{n}": p.data for n, p in prior.named_parameters()})
    if optimizer is not None:
        arrays.update(optimizer.state_arrays(names))
    write_rasters(path, arrays)
    manifest = {
        "kind": kind,
        "iteration": int(iteration),
        "model_config": model._cfg.to_dict() if hasattr(model, "_cfg") else None,
        "train_config": {k: C.format_value(v) for k, v in sorted(cfg.flat.items())},
        "prior_trained": bool(prior.trained) if prior is not None else bool(getattr(model, "trained", False)),
    }
    if kind == "prior":
        manifest["prior_width"] = cfg.model.prior_width
        manifest["prior_blocks"] = cfg.model.prior_blocks
        manifest["bands"] = cfg.model.bands
    if extra:
        manifest.update(extra)
    manifest_path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def manifest_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


@dataclass
class Checkpoint:
    kind: str
    model: object
    manifest: dict
    arrays: dict
    prior: Optional[PriorNetwork] = None

    @property
    def iteration(self) -> int:
        return int(self.manifest["iteration"])

    def train_config(self) -> TrainConfig:
        flat = C.validate(self.manifest["train_config"], "checkpoint manifest")
        return TrainConfig.from_flat(flat)


def _load_params(model, arrays: dict, prefix: str) -> None:
    state = {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}
    if state:
        model.astype(next(iter(state.values())).dtype)
    try:
        model.load_state_dict(state)
    except KeyError as exc:
        raise FormatError(f"checkpoint does not match the model: {exc}") from None


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    mpath = manifest_path(path)
    try:
        manifest = json.loads(mpath.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read checkpoint manifest {mpath}: {exc}") from None
    arrays = read_rasters(path)
    kind = manifest.get("kind")
    cfg = TrainConfig.from_flat(C.validate(manifest["train_config"], str(mpath)))
    prior = None
    if kind == "prior":
        model = PriorNetwork(manifest["bands"], manifest["prior_width"], manifest["prior_blocks"])
        _load_params(model, arrays, "param/")
        model.trained = manifest.get("prior_trained", True)
        return Checkpoint(kind, model, manifest, arrays)
    mcfg = ModelConfig.from_dict(manifest["model_config"])
    if any(k.startswith("prior/") for k in arrays):
        prior = PriorNetwork(mcfg.bands, cfg.model.prior_width, cfg.model.prior_blocks)
        _load_params(prior, arrays, "prior/")
        prior.trained = bool(manifest.get("prior_trained", True))
    if kind == "teacher":
        model = FSATeacher(mcfg, prior)
    elif kind == "student":
        model = FSAStudent(mcfg)
    else:
        raise FormatError(f"unknown checkpoint kind {kind!r} in {mpath}")
    _load_params(model, arrays, "param/")
    return Checkpoint(kind, model, manifest, arrays, prior)


def _restore_optimizer(opt: AdamW, model, ckpt: Checkpoint) -> None:
    names = [n for n, _ in model.named_parameters()]
    opt.load_state_arrays(names, ckpt.arrays)


# -- evaluation -------------------------------------------------------------------------


def teacher_denoiser(teacher: FSATeacher, prior_out: Optional[np.ndarray]) -> Callable:
    def fn(x, pan, up, t):
        return teacher.denoise(x, pan, up, t, prior_out)

    return fn


def student_denoiser(student: FSAStudent) -> Callable:
    return lambda x, pan, up, t: student.denoise(x, pan, up, t)


def sharpen(model, data: SceneSet, cfg: TrainConfig, seed: int, with_uncertainty: bool = False):
    """DDIM-sample every scene of ``data``; returns fused images (and the final uncertainty map)."""
    dt = cfg.np_dtype
    pan = data.pan.astype(dt)
    up = data.lrms_up.astype(dt)
    if isinstance(model, FSATeacher):
        pre = None
        if model._cfg.ffa_on:
            if model.prior is None:
                raise ContractError("teacher has no prior network attached")
            pre = prior_features(model.prior, pan, up)
        fn = teacher_denoiser(model, pre)
    else:
        fn = student_denoiser(model)
    fused, theta = sample(fn, pan, up, cfg.schedule(), seed, residual_scale=RESIDUAL_SCALE,
                          return_uncertainty=True)
    fused = np.clip(fused.astype(np.float64), 0.0, 1.0)
    if with_uncertainty:
        return fused, theta
    return fused


def evaluate_fused(fused: np.ndarray, data: SceneSet, mode: str = "reduced", q_window: int = 8) -> MetricReport:
    rows = []
    for i in range(len(data)):
        if mode == "reduced":
            if data.hrms is None:
                raise ContractError("reduced-resolution evaluation needs ground truth")
            rows.append(reduced_metrics(fused[i], data.hrms[i], q_window=q_window))
        else:
            rows.append(full_resolution_metrics(fused[i], data.lrms[i], data.pan[i]))
    return MetricReport.aggregate(rows, mode)


def _validate(model, val: Optional[SceneSet], cfg: TrainConfig, log: RunLog, iteration: int, tag: str):
    if val is None or len(val) == 0:
        return None
    fused = sharpen(model, val, cfg, sub_seed(cfg.seed, "validation"))
    report = evaluate_fused(fused, val, "reduced", cfg.q_window)
    log.write(kind="val", model=tag, iteration=iteration, **{k: round(v, 6) for k, v in report.values.items()})
    return report


def _due(iteration: int, every: int, last: int) -> bool:
    return iteration == last or (every > 0 and iteration % every == 0)


# -- prior -------------------------------------------------------------------------------


def train_prior(cfg: TrainConfig, train: SceneSet, log: Optional[RunLog] = None) -> PriorNetwork:
    """Direct regression of the residual and its uncertainty with the uncertainty-weighted loss."""
    log = log or RunLog()
    prior = PriorNetwork(cfg.model.bands, cfg.model.prior_width, cfg.model.prior_blocks, seed=cfg.model.seed)
    prior.astype(cfg.np_dtype)
    opt = AdamW(prior.parameters(), cfg.lr, (cfg.beta1, cfg.beta2), cfg.adam_eps, cfg.weight_decay)
    for it in range(cfg.prior_iterations):
        opt.lr = step_lr(cfg.lr, it, cfg.lr_decay, cfg.lr_decay_every)
        b = make_batch(train, cfg, "prior-batch", it)
        with _guard(it, b, cfg, "prior training"):
            res, theta = prior(Tensor(b.pan), Tensor(b.lrms_up))
            loss = u_diff_loss(res, Tensor(b.x0), theta)
        value = loss.item()
        _check_finite(value, it, b, cfg, "prior training")
        opt.zero_grad()
        loss.backward()
        opt.step()
        log.write(kind="train", model="prior", iteration=it + 1, loss=value, lr=opt.lr)
    prior.trained = True
    return prior


# -- teacher -------------------------------------------------------------------------------


def train_teacher(cfg: TrainConfig, train: SceneSet, prior: PriorNetwork, val: Optional[SceneSet] = None,
                  log: Optional[RunLog] = None, resume: Optional[Checkpoint] = None, stop_at: Optional[int] = None,
                  checkpoint_dir=None) -> FSATeacher:
    """Minimize the uncertainty-weighted diffusion loss; returns the trained teacher.

    ``resume`` continues a run from its checkpoint; ``stop_at`` ends the loop
    early (for interruption tests) after that many completed iterations.
    """
    log = log or RunLog()
    if cfg.model.ffa_on and (prior is None or not prior.trained):
        raise ContractError("teacher training needs a trained prior network")
    sched = cfg.schedule()
    if resume is not None:
        teacher, start = resume.model, resume.iteration
        teacher.set_prior(prior)
    else:
        teacher, start = FSATeacher(cfg.model, prior), 0
    teacher.astype(cfg.np_dtype)
    opt = AdamW(teacher.parameters(), cfg.lr, (cfg.beta1, cfg.beta2), cfg.adam_eps, cfg.weight_decay)
    if resume is not None:
        _restore_optimizer(opt, teacher, resume)
    cache = PriorCache(prior, train, cfg.np_dtype) if cfg.model.ffa_on else None
    last = cfg.iterations if stop_at is None else min(stop_at, cfg.iterations)
    for it in range(start, last):
        opt.lr = step_lr(cfg.lr, it, cfg.lr_decay, cfg.lr_decay_every)
        b = make_batch(train, cfg, "teacher-batch", it, cache)
        x_t = q_sample(b.x0, b.t, b.eps, sched).astype(cfg.np_dtype)
        with _guard(it, b, cfg, "teacher training"):
            out = teacher(Tensor(x_t), Tensor(b.pan), Tensor(b.lrms_up), b.t, b.prior_out)
            loss = u_diff_loss(out.x0_hat, Tensor(b.x0), out.theta_hat)
        value = loss.item()
        _check_finite(value, it, b, cfg, "teacher training")
        opt.zero_grad()
        loss.backward()
        opt.step()
        done = it + 1
        log.write(kind="train", model="teacher", iteration=done, loss=value, lr=opt.lr,
                  theta_mean=float(out.theta_hat.data.mean()))
        if checkpoint_dir is not None and cfg.checkpoint_every and done % cfg.checkpoint_every == 0:
            save_checkpoint(Path(checkpoint_dir) / f"teacher_{done:07d}.ukrs", "teacher", teacher, cfg, done, opt, prior)
        if val is not None and _due(done, cfg.val_every, cfg.iterations):
            _validate(teacher, val, cfg, log, done, "teacher")
    teacher._optimizer = opt
    teacher._iteration = last
    return teacher


# -- students ------------------------------------------------------------------------------

STUDENT_SELECTORS = ("student_L1", "student_KD", "student_UKnow")


def student_objective(selector: str, x0_tilde: Tensor, s_feats: list, x0: np.ndarray,
                      teacher_out, w: LossWeights) -> tuple:
    """Loss and logged parts for one distillation selector."""
    if selector == "student_L1":
        loss = l1_loss(x0_tilde, x0)
        return loss, {"hard": loss.item()}
    x0_hat, theta, t_feats = teacher_out
    if selector == "student_KD":
        theta = np.zeros_like(theta)
    elif selector != "student_UKnow":
        raise ConfigError(f"unknown distillation selector {selector!r}")
    hard = hard_loss(x0_tilde, x0, theta, w)
    soft = soft_loss(x0_tilde, x0_hat, theta, w)
    feat = feat_loss(s_feats, t_feats, w)
    total = hard
    if w.lambda_s:
        total = total + w.lambda_s * soft
    if w.lambda_f:
        total = total + w.lambda_f * feat
    return total, {"hard": hard.item(), "soft": soft.item(), "feat": feat.item()}


def distill_students(cfg: TrainConfig, teacher: Optional[FSATeacher], train: SceneSet, selectors,
                     val: Optional[SceneSet] = None, log: Optional[RunLog] = None) -> dict:
    """Train one student per selector in lockstep.

    All students see the same batches; the frozen teacher is evaluated once
    per step and its outputs are shared, so each student ends exactly as it
    would have in a run of its own.
    """
    log = log or RunLog()
    selectors = list(selectors)
    for s in selectors:
        if s not in STUDENT_SELECTORS:
            raise ConfigError(f"unknown distillation selector {s!r}")
    needs_teacher = any(s != "student_L1" for s in selectors)
    if needs_teacher and teacher is None:
        raise ContractError("KD and U-Know distillation need a teacher")
    sched = cfg.schedule()
    students, opts = {}, {}
    for s in selectors:
        st = FSAStudent(cfg.model, teacher._cfg if teacher is not None else None)
        st.astype(cfg.np_dtype)
        students[s] = st
        opts[s] = AdamW(st.parameters(), cfg.lr, (cfg.beta1, cfg.beta2), cfg.adam_eps, cfg.weight_decay)
    cache = None
    if needs_teacher and teacher._cfg.ffa_on:
        cache = PriorCache(teacher.prior, train, cfg.np_dtype)
    teacher_params = teacher.parameters() if teacher is not None else []
    for it in range(cfg.distill_iterations):
        lr = step_lr(cfg.lr, it, cfg.lr_decay, cfg.lr_decay_every)
        b = make_batch(train, cfg, "distill-batch", it, cache)
        x_t = q_sample(b.x0, b.t, b.eps, sched).astype(cfg.np_dtype)
        xt, pan, up = Tensor(x_t), Tensor(b.pan), Tensor(b.lrms_up)
        t_out = None
        if needs_teacher:
            with _guard(it, b, cfg, "distillation"), T.no_grad(), T.frozen(teacher_params):
                o = teacher(xt, pan, up, b.t, b.prior_out)
            t_out = (o.x0_hat.data, o.theta_hat.data, [f.data for f in o.features])
        for s in selectors:
            st, opt = students[s], opts[s]
            opt.lr = lr
            with _guard(it, b, cfg, f"distillation ({s})"):
                x0_tilde, feats = st(xt, pan, up, b.t)
                loss, parts = student_objective(s, x0_tilde, feats, b.x0, t_out, cfg.loss)
            value = loss.item()
            _check_finite(value, it, b, cfg, f"distillation ({s})")
            opt.zero_grad()
            loss.backward()
            opt.step()
            log.write(kind="train", model=s, iteration=it + 1, loss=value, lr=lr, **parts)
            if val is not None and _due(it + 1, cfg.val_every, cfg.distill_iterations):
                _validate(st, val, cfg, log, it + 1, s)
    return students


def distill_student(cfg: TrainConfig, teacher: Optional[FSATeacher], train: SceneSet,
                    val: Optional[SceneSet] = None, log: Optional[RunLog] = None) -> FSAStudent:
    return distill_students(cfg, teacher, train, [cfg.selector], val, log)[cfg.selector]


# -- ablation matrix ----------------------------------------------------------------------


@dataclass(frozen=True)
class AblationRun:
    group: str
    label: str
    ffa_on: bool = True
    hqfe_on: bool = True
    cond_kind: str = "SWT"
    selector: str = "teacher"


def ablation_runs() -> list:
    runs = []
    for ffa in (False, True):
        for hqfe in (False, True):
            runs.append(AblationRun("blocks", f"ffa={'on' if ffa else 'off'}/hqfe={'on' if hqfe else 'off'}",
                                    ffa, hqfe))
    for s in STUDENT_SELECTORS:
        runs.append(AblationRun("loss", s, selector=s))
    for kind in ("SWT", "DWT"):
        runs.append(AblationRun("conditioning", kind, cond_kind=kind))
    return runs


def _with(cfg: TrainConfig, **changes) -> TrainConfig:
    flat = dict(cfg.flat)
    flat.update(changes)
    return TrainConfig.from_flat(flat)


def run_ablation_matrix(cfg: TrainConfig, seeds=(0, 1, 2), log: Optional[RunLog] = None) -> list:
    """Train and evaluate every ablation cell for every seed; rows carry mean and std of the reduced metrics."""
    log = log or RunLog()
    rows = []
    per_run = {run: [] for run in ablation_runs()}
    for seed in seeds:
        base = _with(cfg, seed=seed)
        train = make_scene_set(seed, base.flat["train_scenes"], "train", base.model.bands,
                               base.flat["height"], base.flat["width"])
        val = make_scene_set(seed, base.flat["val_scenes"], "val", base.model.bands,
                             base.flat["height"], base.flat["width"])
        prior = train_prior(base, train, log)
        teachers = {}

        def teacher_for(ffa, hqfe, kind):
            key = (ffa, hqfe, kind)
            if key not in teachers:
                c = _with(base, ffa_on=ffa, hqfe_on=hqfe, cond_kind=kind, val_every=0)
                teachers[key] = (train_teacher(c, train, prior, None, log), c)
            return teachers[key]

        students = None
        for run in per_run:
            if run.group == "loss":
                if students is None:
                    full, c = teacher_for(True, True, "SWT")
                    students = distill_students(_with(c, val_every=0), full, train, STUDENT_SELECTORS, None, log)
                model, c = students[run.selector], base
            else:
                model, c = teacher_for(run.ffa_on, run.hqfe_on, run.cond_kind)
            fused = sharpen(model, val, c, sub_seed(seed, "ablation-eval"))
            report = evaluate_fused(fused, val, "reduced", base.q_window)
            per_run[run].append(report.values)
            log.write(kind="ablation", group=run.group, label=run.label, seed=seed,
                      **{k: round(v, 6) for k, v in report.values.items()})
    for run, values in per_run.items():
        agg = MetricReport.aggregate(values, "reduced")
        rows.append({"group": run.group, "label": run.label, "report": agg})
    return rows


def ablation_csv(rows: list) -> str:
    keys = list(rows[0]["report"].values) if rows else []
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["group", "label", "count"] + [f"{k}_{s}" for k in keys for s in ("mean", "std")])
    for r in rows:
        rep = r["report"]
        w.writerow([r["group"], r["label"], rep.count]
                   + [f"{v:.6f}" for k in keys for v in (rep.values[k], rep.stds[k])])
    return buf.getvalue()


# -- dataset files --------------------------------------------------------------------------


def load_scene_set(path) -> SceneSet:
    return SceneSet.from_rasters(read_rasters(path))


def save_scene_set(path, data: SceneSet) -> None:
    write_rasters(path, data.to_rasters())
