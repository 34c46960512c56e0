"""Fast invariant suite run by ``uknowpan selfcheck``.

Each check returns a short detail string and raises ``AssertionError`` on
failure. The whole suite finishes in well under a minute on one core.
"""

from __future__ import annotations

import traceback

import numpy as np

from . import tensor as T
from .data import decode_rasters, encode_rasters, make_scene_set, wald_degrade
from .diffusion import make_schedule, sample
from .losses import LossWeights, feat_loss, hard_loss, l1_loss, soft_loss, u_diff_loss
from .metrics import full_resolution_metrics, reduced_metrics
from .networks import FFA, FTCA, SWTCA, FSAStudent, FSATeacher, ModelConfig
from .rng import make_rng
from .spectral import dwt2, irfft2, iswt2, rfft2, swt2
from .tensor import Tensor


def _check_autodiff() -> str:
    rng = make_rng(0, "selfcheck-grad")
    x = Tensor(rng.standard_normal((1, 4, 4, 4)))
    v = Tensor(rng.standard_normal((1, 6)))
    ffa, ftca, swtca = FFA(4, 6, rng), FTCA(4, rng), SWTCA(4, 7, rng)
    cond = Tensor(rng.standard_normal((1, 7, 4, 4)))
    worst = 0.0
    for f in (
        lambda a: T.tsum(ffa(a, v) ** 2),
        lambda a: T.tsum(ftca(a) ** 2),
        lambda a: T.tsum(swtca(a, cond) ** 2),
    ):
        worst = max(worst, T.finite_difference_check(f, x))
    target = rng.standard_normal((1, 4, 4, 4))
    theta = np.abs(rng.standard_normal((1, 4, 4, 4))) + 0.1
    w = LossWeights()
    for f in (
        lambda a: u_diff_loss(a, Tensor(target), Tensor(theta)),
        lambda a: hard_loss(a, target, theta, w),
        lambda a: soft_loss(a, target, theta, w),
        lambda a: feat_loss([a], [target], w),
        lambda a: l1_loss(a, target),
    ):
        worst = max(worst, T.finite_difference_check(f, x))
    assert worst <= 1e-4, f"relative gradient error {worst:.2e}"
    return f"max relative error {worst:.1e}"


def _check_transforms() -> str:
    rng = make_rng(0, "selfcheck-transforms")
    x = rng.standard_normal((2, 3, 8, 16))
    spec = rfft2(Tensor(x))
    back = irfft2(spec, 16).data
    rt = float(np.max(np.abs(back - x)))
    assert rt <= 1e-10, f"rfft2 round trip {rt:.1e}"
    ref = np.fft.rfft2(x)
    assert np.allclose(spec.real.data + 1j * spec.imag.data, ref, atol=1e-10), "rfft2 differs from reference FFT"
    b = swt2(Tensor(x))
    swt_rt = float(np.max(np.abs(iswt2(b).data - x)))
    assert swt_rt <= 1e-10, f"swt2 round trip {swt_rt:.1e}"
    shifted = swt2(Tensor(np.roll(x, (1, 3), axis=(-2, -1))))
    eq = max(float(np.max(np.abs(np.roll(s.data, (1, 3), axis=(-2, -1)) - t.data)))
             for s, t in zip(b.subbands(), shifted.subbands()))
    assert eq <= 1e-10, f"swt2 shift equivariance {eq:.1e}"
    d0 = dwt2(Tensor(x)).D.data
    d1 = dwt2(Tensor(np.roll(x, 1, axis=-1))).D.data
    assert float(np.max(np.abs(d0 - d1))) > 1e-3, "dwt2 unexpectedly shift invariant"
    return f"fft round trip {rt:.1e}, swt round trip {swt_rt:.1e}"


def _check_uncertainty_minimizer() -> str:
    rng = make_rng(0, "selfcheck-ulos")
    grid = np.arange(1e-3, 5.0, 1e-3)
    worst = 0.0
    for e in rng.uniform(0.01, 4.0, size=20):
        vals = e / (2 * grid) + 0.5 * np.log(grid)
        worst = max(worst, abs(grid[np.argmin(vals)] - e))
    assert worst <= 1e-3, f"minimizer off by {worst}"
    return f"max deviation {worst:.1e}"


def _check_sampler() -> str:
    sched = make_schedule()
    assert sched.ddim_steps == tuple(range(20, 501, 20)), "DDIM steps are not 20, 40, ..., 500"
    data = make_scene_set(0, 2, "selfcheck", h=16, w=16)
    x0 = 2.0 * (data.hrms - data.lrms_up)
    oracle = lambda x, pan, up, t: x0
    out = sample(oracle, data.pan, data.lrms_up, sched, 7, residual_scale=2.0)
    err = float(np.max(np.abs(out - data.hrms)))
    assert err <= 1e-8, f"oracle reconstruction error {err:.1e}"
    again = sample(oracle, data.pan, data.lrms_up, sched, 7, residual_scale=2.0)
    assert np.array_equal(out, again), "sampler is not deterministic"
    return f"oracle error {err:.1e}"


def _check_metrics() -> str:
    data = make_scene_set(0, 1, "selfcheck", h=32, w=32)
    m = reduced_metrics(data.hrms[0], data.hrms[0])
    assert m["sam"] <= 1e-9 and m["ergas"] <= 1e-9, f"SAM/ERGAS identity: {m}"
    for k in ("ssim", "scc", "q2n"):
        assert abs(m[k] - 1.0) <= 1e-9, f"{k} identity: {m[k]}"
    fr = full_resolution_metrics(data.hrms[0], wald_degrade(data.hrms[0]), data.pan[0])
    assert abs(fr["hqnr"] - (1 - fr["d_lambda"]) * (1 - fr["d_s"])) <= 1e-12, "HQNR is not the product"
    assert abs((1 - 0.017) * (1 - 0.029) - 0.953) <= 0.002, "HQNR arithmetic"
    return "identities hold"


def _check_raster_io() -> str:
    rng = make_rng(0, "selfcheck-io")
    m = {"a": rng.standard_normal((2, 3)), "b": rng.standard_normal(5).astype(np.float32)}
    back = decode_rasters(encode_rasters(m))
    assert all(np.array_equal(m[k], back[k]) and m[k].dtype == back[k].dtype for k in m), "round trip"
    assert decode_rasters(encode_rasters({})) == {}, "empty container"
    return "bit-exact"


def _check_capacity() -> str:
    cfg = ModelConfig()
    t = FSATeacher(cfg).num_parameters()
    s = FSAStudent(cfg).num_parameters()
    assert s < t, f"student {s} >= teacher {t}"
    return f"student {s} < teacher {t}"


CHECKS = [
    ("autodiff", _check_autodiff),
    ("transforms", _check_transforms),
    ("uncertainty-loss", _check_uncertainty_minimizer),
    ("sampler", _check_sampler),
    ("metrics", _check_metrics),
    ("raster-io", _check_raster_io),
    ("capacity", _check_capacity),
]


def run_selfcheck(out=print) -> bool:
    ok = True
    for name, fn in CHECKS:
        try:
            detail = fn()
            out(f"PASS {name}: {detail}")
        except Exception as exc:  # report every failure, keep going
            ok = False
            last = traceback.format_exception_only(type(exc), exc)[-1].strip()
            out(f"FAIL {name}: {last}")
    return ok
