"""Reduced- and full-resolution PAN-sharpening quality metrics.

Every function takes ``B x H x W`` arrays (or tensors) for one image. Images
are assumed to live in ``[0, data_range]``.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.ndimage import correlate, correlate1d

from .errors import ContractError, DimensionError, UndefinedMetricError
from .tensor import Tensor

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
Q2N_WINDOW = 32
RATIO = 4
LAPLACIAN = np.array([[-1.0, -1.0, -1.0], [-1.0, 8.0, -1.0], [-1.0, -1.0, -1.0]])


def _arr(x) -> np.ndarray:
    a = x.data if isinstance(x, Tensor) else np.asarray(x)
    return a.astype(np.float64, copy=False)


def _pair(fused, ref) -> tuple:
    f, r = _arr(fused), _arr(ref)
    if f.shape != r.shape:
        raise DimensionError(f"fused {f.shape} and reference {r.shape} differ in shape")
    if f.ndim != 3:
        raise DimensionError(f"expected B x H x W images, got {f.shape}")
    return f, r


# -- spectral fidelity -------------------------------------------------------


def sam(fused, ref) -> float:
    """Mean spectral angle in degrees over pixels with non-degenerate spectra."""
    f, r = _pair(fused, ref)
    if f.shape[0] < 2:
        raise ContractError(f"SAM needs at least 2 bands, got {f.shape[0]}")
    nf = np.sqrt(np.sum(f * f, axis=0))
    nr = np.sqrt(np.sum(r * r, axis=0))
    valid = (nf >= 1e-12) & (nr >= 1e-12)
    if not np.any(valid):
        raise UndefinedMetricError("SAM: every pixel has a zero-norm spectrum")
    u = f[:, valid] / nf[valid]
    v = r[:, valid] / nr[valid]
    # 2 atan2(|u - v|, |u + v|) equals arccos(u . v) but stays accurate near 0
    angle = 2.0 * np.arctan2(np.sqrt(np.sum((u - v) ** 2, axis=0)), np.sqrt(np.sum((u + v) ** 2, axis=0)))
    return float(np.degrees(np.mean(angle)))


def ergas(fused, ref, scale_ratio: float = 1.0 / RATIO) -> float:
    f, r = _pair(fused, ref)
    mu = r.mean(axis=(1, 2))
    if np.any(mu == 0):
        raise UndefinedMetricError(f"ERGAS: reference band(s) {np.flatnonzero(mu == 0).tolist()} have zero mean")
    rmse2 = np.mean((f - r) ** 2, axis=(1, 2))
    return float(100.0 * scale_ratio * math.sqrt(np.mean(rmse2 / mu**2)))


# -- spatial fidelity ----------------------------------------------------------


def psnr(fused, ref, data_range: float = 1.0) -> float:
    """Band-averaged PSNR; a band with zero error scores ``PSNR_CAP``."""
    f, r = _pair(fused, ref)
    mse = np.mean((f - r) ** 2, axis=(1, 2))
    with np.errstate(divide="ignore"):
        per_band = np.where(mse > 0, 10.0 * np.log10(data_range**2 / np.where(mse > 0, mse, 1.0)), PSNR_CAP)
    return float(np.mean(np.minimum(per_band, PSNR_CAP)))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _valid_filter(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    # separable correlation over the last two axes, keeping fully covered positions only
    k = len(g)
    out = correlate1d(correlate1d(img, g, axis=-1, mode="constant"), g, axis=-2, mode="constant")
    lo = k // 2
    hi_h = img.shape[-2] - (k - 1 - lo)
    hi_w = img.shape[-1] - (k - 1 - lo)
    return out[..., lo:hi_h, lo:hi_w]


def ssim(fused, ref, data_range: float = 1.0) -> float:
    f, r = _pair(fused, ref)
    if min(f.shape[1:]) < SSIM_WINDOW:
        raise ContractError(f"SSIM: images {f.shape[1:]} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    g = gaussian_window()
    c1, c2 = (0.01 * data_range) ** 2, (0.03 * data_range) ** 2
    mu_f, mu_r = _valid_filter(f, g), _valid_filter(r, g)
    s_ff = _valid_filter(f * f, g) - mu_f * mu_f
    s_rr = _valid_filter(r * r, g) - mu_r * mu_r
    s_fr = _valid_filter(f * r, g) - mu_f * mu_r
    num = (2 * mu_f * mu_r + c1) * (2 * s_fr + c2)
    den = (mu_f**2 + mu_r**2 + c1) * (s_ff + s_rr + c2)
    return float(np.mean(np.mean(num / den, axis=(1, 2))))


def high_pass(img: np.ndarray) -> np.ndarray:
    """8-neighbour Laplacian over fully covered positions (H-2 x W-2 per band)."""
    out = correlate(img, LAPLACIAN[None] if img.ndim == 3 else LAPLACIAN, mode="constant")
    return out[..., 1:-1, 1:-1]


def scc(fused, ref) -> float:
    """Mean over bands of the correlation between Laplacian-filtered images."""
    f, r = _pair(fused, ref)
    hf, hr = high_pass(f), high_pass(r)
    values = []
    for b in range(f.shape[0]):
        a = hf[b] - hf[b].mean()
        c = hr[b] - hr[b].mean()
        den = math.sqrt(float(np.sum(a * a)) * float(np.sum(c * c)))
        if den == 0:
            warnings.warn(f"SCC: band {b} has a zero-variance high-pass response; skipped", RuntimeWarning)
            continue
        values.append(float(np.sum(a * c)) / den)
    if not values:
        raise UndefinedMetricError("SCC: every band has a zero-variance high-pass response")
    return float(np.mean(values))


def reference_metrics(fused, ref, data_range: float = 1.0) -> dict:
    return {
        "psnr": psnr(fused, ref, data_range),
        "ssim": ssim(fused, ref, data_range),
        "scc": scc(fused, ref),
    }


# -- hypercomplex quality index ------------------------------------------------


def cd_conj(a: np.ndarray) -> np.ndarray:
    """Cayley-Dickson conjugate along the last axis (negate imaginary parts)."""
    out = -a
    out[..., 0] = a[..., 0]
    return out


def cd_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cayley-Dickson product ``(p, q)(r, s) = (pr - s* q, s p + q r*)`` on the last axis."""
    n = a.shape[-1]
    if n == 1:
        return a * b
    h = n // 2
    p, q = a[..., :h], a[..., h:]
    r, s = b[..., :h], b[..., h:]
    return np.concatenate([cd_mul(p, r) - cd_mul(cd_conj(s), q), cd_mul(s, p) + cd_mul(q, cd_conj(r))], axis=-1)


def _hypercomplex(img: np.ndarray) -> np.ndarray:
    b = img.shape[0]
    dim = 1 << max(b - 1, 0).bit_length()
    out = np.zeros(img.shape[1:] + (dim,))
    out[..., :b] = np.moveaxis(img, 0, -1)
    return out


def _q_factors(mean_z, mean_y, var_z, var_y, cov) -> np.ndarray:
    """Signed universal quality index from hypercomplex moments.

    ``cov`` is the hypercomplex covariance; its modulus carries the sign of
    its real part so that an inverted image scores -1 rather than +1.
    """
    cov_mod = np.sign(cov[..., 0]) * np.sqrt(np.sum(cov * cov, axis=-1))
    mz2 = np.sum(mean_z * mean_z, axis=-1)
    my2 = np.sum(mean_y * mean_y, axis=-1)
    var_sum = var_z + var_y
    structure = np.where(var_sum > 0, 2.0 * cov_mod / np.where(var_sum > 0, var_sum, 1.0), 1.0)
    mean_sum = mz2 + my2
    luminance = np.where(mean_sum > 0, 2.0 * np.sqrt(mz2 * my2) / np.where(mean_sum > 0, mean_sum, 1.0), 1.0)
    return structure * luminance


def q2n(fused, ref, window: int = Q2N_WINDOW) -> float:
    """Q4/Q8-style index averaged over ``window``-sized blocks at stride ``window // 2``."""
    f, r = _pair(fused, ref)
    h, w = f.shape[1:]
    if window < 2 or window > h or window > w:
        raise ContractError(f"Q2n: window {window} does not fit image {h}x{w}")
    step = max(window // 2, 1)
    z, y = _hypercomplex(f), _hypercomplex(r)
    prod = cd_mul(z, cd_conj(y))

    def block_mean(a):
        view = sliding_window_view(a, (window, window), axis=(0, 1))[::step, ::step]
        return view.mean(axis=(-2, -1))

    mz, my = block_mean(z), block_mean(y)
    var_z = block_mean(np.sum(z * z, axis=-1)) - np.sum(mz * mz, axis=-1)
    var_y = block_mean(np.sum(y * y, axis=-1)) - np.sum(my * my, axis=-1)
    cov = block_mean(prod) - cd_mul(mz, cd_conj(my))
    return float(np.mean(_q_factors(mz, my, var_z, var_y, cov)))


# -- full resolution -------------------------------------------------------------


def uiqi(a: np.ndarray, b: np.ndarray) -> float:
    """Single-window universal image quality index of two 2D images."""
    a, b = _arr(a), _arr(b)
    ma, mb = a.mean(), b.mean()
    cov = np.mean((a - ma) * (b - mb))
    q = _q_factors(np.array([ma]), np.array([mb]), np.var(a), np.var(b), np.array([cov]))
    return float(q)


def box_downsample(img: np.ndarray, ratio: int = RATIO) -> np.ndarray:
    h, w = img.shape[-2:]
    return img.reshape(img.shape[:-2] + (h // ratio, ratio, w // ratio, ratio)).mean(axis=(-3, -1))


def hqnr(d_lambda: float, d_s: float) -> float:
    """Hybrid quality with no reference: ``(1 - D_lambda)(1 - D_s)``."""
    for name, d in (("D_lambda", d_lambda), ("D_s", d_s)):
        if not 0.0 <= d <= 1.0:
            raise ContractError(f"{name}={d} outside [0, 1]")
    return (1.0 - d_lambda) * (1.0 - d_s)


def full_resolution_metrics(fused, lrms, pan) -> dict:
    """QNR-style spectral (D_lambda) and spatial (D_s) distortions and their product."""
    f, l, p = _arr(fused), _arr(lrms), _arr(pan)
    if p.ndim == 3:
        if p.shape[0] != 1:
            raise DimensionError(f"pan must have one band, got {p.shape}")
        p = p[0]
    if f.ndim != 3 or l.ndim != 3 or f.shape[0] != l.shape[0]:
        raise DimensionError(f"fused {f.shape} and lrms {l.shape} must be B x H x W with equal B")
    if f.shape[1:] != p.shape or f.shape[1] != RATIO * l.shape[1] or f.shape[2] != RATIO * l.shape[2]:
        raise ContractError(
            f"full-resolution metrics need fused/pan at {RATIO}x the lrms size; got {f.shape}, {p.shape}, {l.shape}"
        )
    b = f.shape[0]
    if b < 2:
        raise ContractError("D_lambda needs at least 2 bands")
    diffs = [abs(uiqi(f[i], f[j]) - uiqi(l[i], l[j])) for i in range(b) for j in range(b) if i != j]
    p_low = box_downsample(p)
    d_s_terms = [abs(uiqi(f[i], p) - uiqi(l[i], p_low)) for i in range(b)]
    d_lambda = min(max(float(np.mean(diffs)), 0.0), 1.0)
    d_s = min(max(float(np.mean(d_s_terms)), 0.0), 1.0)
    return {"d_lambda": d_lambda, "d_s": d_s, "hqnr": hqnr(d_lambda, d_s)}


# -- aggregation -----------------------------------------------------------------

REDUCED_KEYS = ("psnr", "ssim", "scc", "sam", "ergas", "q2n")
FULL_KEYS = ("d_lambda", "d_s", "hqnr")


def reduced_metrics(fused, ref, data_range: float = 1.0, q_window: int = Q2N_WINDOW) -> dict:
    out = reference_metrics(fused, ref, data_range)
    out["sam"] = sam(fused, ref)
    out["ergas"] = ergas(fused, ref)
    out["q2n"] = q2n(fused, ref, q_window)
    return {k: out[k] for k in REDUCED_KEYS}


@dataclass
class MetricReport:
    values: dict
    stds: dict
    resolution_mode: str = "reduced"
    count: int = 1
    per_image: list = field(default_factory=list)

    @classmethod
    def aggregate(cls, rows: list, resolution_mode: str = "reduced") -> "MetricReport":
        if not rows:
            raise UndefinedMetricError("cannot aggregate an empty metric set")
        keys = list(rows[0])
        values = {k: float(np.mean([r[k] for r in rows])) for k in keys}
        stds = {k: float(np.std([r[k] for r in rows])) for k in keys}
        return cls(values, stds, resolution_mode, len(rows), list(rows))

    def to_csv(self, label: str = "") -> str:
        keys = list(self.values)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["label", "mode", "count"] + [f"{k}_{s}" for k in keys for s in ("mean", "std")])
        w.writerow([label, self.resolution_mode, self.count]
                   + [f"{v:.6f}" for k in keys for v in (self.values[k], self.stds[k])])
        return buf.getvalue()

    def table(self, label: str = "") -> str:
        lines = [f"{label} ({self.resolution_mode}, n={self.count})".strip()]
        for k in self.values:
            lines.append(f"  {k:<9} {self.values[k]:10.3f} ± {self.stds[k]:.3f}")
        return "\n".join(lines)
