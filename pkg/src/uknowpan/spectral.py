"""2D real FFT with half-spectrum layout, and level-1 Haar SWT/DWT.

The FFT is an iterative radix-2 decimation-in-time Cooley-Tukey transform on
power-of-two lengths. ``rfft2``/``irfft2`` act on the last two axes and are
differentiable; their backward passes are the exact adjoints of the linear
maps, expressed through the same FFT kernel.

Wavelets use Haar filters normalized to unit DC gain (low-pass
``[0.5, 0.5]``, high-pass ``[0.5, -0.5]``) with circular boundaries, so a
constant image has an exactly constant approximation band and exactly zero
detail bands, and the undecimated transform commutes with circular shifts.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import _kernels
from .errors import ConfigError, ContractError, DimensionError
from .tensor import ComplexTensor, Tensor, add, as_tensor, concat, getitem, make_op, mul, roll, stack

# -- complex FFT kernel ----------------------------------------------------


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@lru_cache(maxsize=None)
def _bitrev(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


@lru_cache(maxsize=None)
def _twiddles(n: int, inverse: bool, ctype) -> np.ndarray:
    sign = 1.0 if inverse else -1.0
    return np.exp(sign * 2j * np.pi * np.arange(n // 2) / n).astype(ctype)


def fft_last(z: np.ndarray, inverse: bool = False) -> np.ndarray:
    """Unnormalized DFT along the last axis (``e^{+i...}`` kernel when ``inverse``)."""
    n = z.shape[-1]
    if not _is_pow2(n):
        raise ContractError(f"fft: length {n} is not a power of two")
    ctype = np.complex64 if z.dtype in (np.float32, np.complex64) else np.complex128
    rows = np.array(z, dtype=ctype, order="C").reshape(-1, n)
    _kernels.fft_rows(rows, _twiddles(n, inverse, ctype), _bitrev(n))
    return rows.reshape(z.shape)


def fft_axis(z: np.ndarray, axis: int, inverse: bool = False) -> np.ndarray:
    if axis in (-1, z.ndim - 1):
        return fft_last(z, inverse)
    return np.moveaxis(fft_last(np.moveaxis(z, axis, -1), inverse), -1, axis)


def _rfft2_array(x: np.ndarray) -> np.ndarray:
    w = x.shape[-1]
    half = fft_last(x)[..., : w // 2 + 1]
    return fft_axis(half, -2)


def _irfft2_array(spec: np.ndarray, w: int) -> np.ndarray:
    h = spec.shape[-2]
    y = fft_axis(spec, -2, inverse=True) / h
    full = np.empty(y.shape[:-1] + (w,), dtype=y.dtype)
    full[..., : w // 2 + 1] = y
    full[..., w // 2 + 1 :] = np.conj(y[..., w // 2 - 1 : 0 : -1])
    return fft_last(full, inverse=True).real / w


def _check_spatial(x: Tensor, name: str) -> tuple:
    if x.ndim < 2:
        raise DimensionError(f"{name}: need at least 2 dims, got {x.shape}")
    h, w = x.shape[-2:]
    if h < 2 or w < 2:
        raise ContractError(f"{name}: spatial dims must be >= 2, got {h}x{w}")
    if w % 2:
        raise ContractError(f"{name}: width {w} must be even")
    if not (_is_pow2(h) and _is_pow2(w)):
        raise ContractError(f"{name}: spatial dims {h}x{w} must be powers of two")
    return h, w


# -- differentiable real transforms ------------------------------------------


def rfft2(x: Tensor) -> ComplexTensor:
    """2D DFT over the last two axes keeping the ``w//2 + 1`` non-redundant columns."""
    x = as_tensor(x)
    h, w = _check_spatial(x, "rfft2")
    spec = _rfft2_array(x.data)
    rdtype = x.dtype
    packed = np.stack([spec.real, spec.imag]).astype(rdtype, copy=False)

    def bw(g):
        gc = g[0] + 1j * g[1]
        padded = np.zeros(gc.shape[:-1] + (w,), dtype=gc.dtype)
        padded[..., : w // 2 + 1] = gc
        gx = fft_last(fft_axis(padded, -2, inverse=True), inverse=True).real
        return (gx.astype(rdtype, copy=False),)

    out = make_op(packed, (x,), bw)
    return ComplexTensor(getitem(out, 0), getitem(out, 1))


def irfft2(spec: ComplexTensor, width: int | None = None) -> Tensor:
    """Inverse of :func:`rfft2`; the omitted half-spectrum is taken as Hermitian."""
    h, wf = spec.shape[-2:]
    w = 2 * (wf - 1) if width is None else width
    if w < 2 or w // 2 + 1 != wf or not _is_pow2(w) or not _is_pow2(h):
        raise ContractError(f"irfft2: {spec.shape} is not an rfft2 layout of a power-of-two image")
    packed = stack([spec.real, spec.imag])
    rdtype = packed.dtype
    out = _irfft2_array(packed.data[0] + 1j * packed.data[1], w).astype(rdtype, copy=False)
    weights = np.full(wf, 2.0)
    weights[0] = weights[-1] = 1.0
    weights /= h * w

    def bw(g):
        gs = _rfft2_array(g) * weights
        return (np.stack([gs.real, gs.imag]).astype(rdtype, copy=False),)

    return make_op(out, (packed,), bw)


# -- wavelets ---------------------------------------------------------------

_FILTERS = {
    "haar": (np.array([0.5, 0.5]), np.array([0.5, -0.5])),
}

SWT = "SWT"
DWT = "DWT"


@dataclass
class WaveletBundle:
    """Approximation ``L`` and horizontal/vertical/diagonal detail bands.

    ``H`` holds variation along rows (high-pass down the height axis),
    ``V`` variation along columns (high-pass across the width axis).
    """

    L: Tensor
    H: Tensor
    V: Tensor
    D: Tensor
    wavelet_kind: str = SWT
    filter_name: str = "haar"

    def subbands(self) -> tuple:
        return self.L, self.H, self.V, self.D


def _filters(name: str):
    try:
        return _FILTERS[name]
    except KeyError:
        raise ConfigError(f"unknown wavelet filter {name!r}; known: {sorted(_FILTERS)}") from None


def _analysis(x: Tensor, taps: np.ndarray, axis: int) -> Tensor:
    # y[n] = sum_k taps[k] * x[n + k]  (circular)
    out = None
    for k, c in enumerate(taps):
        term = mul(roll(x, -k, axis) if k else x, float(c))
        out = term if out is None else add(out, term)
    return out


def _synthesis(lo: Tensor, hi: Tensor, lo_taps, hi_taps, axis: int) -> Tensor:
    # x[n] = sum_k lo_taps[k] * lo[n - k] + hi_taps[k] * hi[n - k]
    out = None
    for k in range(len(lo_taps)):
        a = roll(lo, k, axis) if k else lo
        b = roll(hi, k, axis) if k else hi
        term = add(mul(a, float(lo_taps[k])), mul(b, float(hi_taps[k])))
        out = term if out is None else add(out, term)
    return out


def swt2(x: Tensor, filter: str = "haar") -> WaveletBundle:
    """Level-1 undecimated 2D wavelet decomposition; all bands keep the input size."""
    lo, hi = _filters(filter)
    x = as_tensor(x)
    if x.ndim < 2 or x.shape[-2] < 2 or x.shape[-1] < 2:
        raise ContractError(f"swt2: spatial dims must be >= 2, got {x.shape}")
    lo_w = _analysis(x, lo, -1)
    hi_w = _analysis(x, hi, -1)
    return WaveletBundle(
        L=_analysis(lo_w, lo, -2),
        H=_analysis(lo_w, hi, -2),
        V=_analysis(hi_w, lo, -2),
        D=_analysis(hi_w, hi, -2),
        wavelet_kind=SWT,
        filter_name=filter,
    )


def iswt2(b: WaveletBundle) -> Tensor:
    """Exact inverse of :func:`swt2`."""
    if b.wavelet_kind != SWT:
        raise ContractError(f"iswt2 needs an SWT bundle, got {b.wavelet_kind}")
    lo, hi = _filters(b.filter_name)
    lo_w = _synthesis(b.L, b.H, lo, hi, -2)
    hi_w = _synthesis(b.V, b.D, lo, hi, -2)
    return _synthesis(lo_w, hi_w, lo, hi, -1)


def _decimate(x: Tensor, axis: int) -> Tensor:
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(0, None, 2)
    return getitem(x, tuple(idx))


def dwt2(x: Tensor, filter: str = "haar") -> WaveletBundle:
    """Level-1 decimated 2D wavelet decomposition (half-size bands)."""
    lo, hi = _filters(filter)
    x = as_tensor(x)
    if x.ndim < 2 or x.shape[-2] % 2 or x.shape[-1] % 2:
        raise ContractError(f"dwt2: spatial dims must be even, got {x.shape}")
    lo_w = _decimate(_analysis(x, lo, -1), -1)
    hi_w = _decimate(_analysis(x, hi, -1), -1)
    return WaveletBundle(
        L=_decimate(_analysis(lo_w, lo, -2), -2),
        H=_decimate(_analysis(lo_w, hi, -2), -2),
        V=_decimate(_analysis(hi_w, lo, -2), -2),
        D=_decimate(_analysis(hi_w, hi, -2), -2),
        wavelet_kind=DWT,
        filter_name=filter,
    )


def build_s_cond(pan: Tensor, lrms_up: Tensor, kind: str = SWT, filter: str = "haar") -> Tensor:
    """Channel stack ``[L_MS | H_PAN | V_PAN | D_PAN]``.

    Works on single images (C x H x W) or batches (N x C x H x W). DWT bands
    are half resolution.
    """
    pan, lrms_up = as_tensor(pan), as_tensor(lrms_up)
    if pan.ndim != lrms_up.ndim or pan.shape[-2:] != lrms_up.shape[-2:]:
        raise ContractError(f"build_s_cond: pan {pan.shape} and lrms_up {lrms_up.shape} are not aligned")
    if pan.shape[-3] != 1:
        raise ContractError(f"build_s_cond: pan must have one channel, got {pan.shape}")
    if kind == SWT:
        transform = swt2
    elif kind == DWT:
        transform = dwt2
    else:
        raise ConfigError(f"unknown conditioning kind {kind!r}")
    ms = transform(lrms_up, filter)
    p = transform(pan, filter)
    return concat([ms.L, p.H, p.V, p.D], axis=-3)
