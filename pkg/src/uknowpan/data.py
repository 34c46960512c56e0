"""Synthetic scenes, reduced-resolution degradation, augmentation and raster I/O."""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.ndimage import binary_dilation, correlate1d, gaussian_filter

from .errors import ContractError, DimensionError, FormatError
from .rng import make_rng, sub_seed

RATIO = 4
BLUR_SIGMA = 1.6
BLUR_SIZE = 7
PAN_WEIGHTS_4 = (0.15, 0.30, 0.30, 0.25)


@dataclass
class Scene:
    pan: np.ndarray  # 1 x H x W
    lrms: np.ndarray  # B x H/4 x W/4
    lrms_up: np.ndarray  # B x H x W
    hrms: np.ndarray | None  # B x H x W, ground truth
    edge_mask: np.ndarray | None = None  # H x W bool
    flat_mask: np.ndarray | None = None
    seed: int | None = None

    @property
    def bands(self) -> int:
        return self.lrms.shape[0]

    def residual(self) -> np.ndarray:
        if self.hrms is None:
            raise ContractError("scene has no ground truth")
        return self.hrms - self.lrms_up


def _check_size(h: int, w: int) -> None:
    if h % RATIO or w % RATIO or h < RATIO or w < RATIO:
        raise DimensionError(f"spatial size {h}x{w} must be a positive multiple of {RATIO}")


# -- degradation and interpolation ---------------------------------------------


@lru_cache(maxsize=None)
def blur_kernel(size: int = BLUR_SIZE, sigma: float = BLUR_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    return g / g.sum()


def gaussian_blur(img: np.ndarray) -> np.ndarray:
    """Separable 7x7 Gaussian on the last two axes, half-sample symmetric edges."""
    k = blur_kernel()
    # scipy's "reflect" mirrors about the pixel edge (d c b a | a b c d)
    return correlate1d(correlate1d(img, k, axis=-1, mode="reflect"), k, axis=-2, mode="reflect")


def wald_degrade(hrms: np.ndarray) -> np.ndarray:
    """Blur then reduce each 4x4 block to its mean."""
    hrms = np.asarray(hrms, dtype=np.float64)
    h, w = hrms.shape[-2:]
    _check_size(h, w)
    blurred = gaussian_blur(hrms)
    lead = blurred.shape[:-2]
    return blurred.reshape(lead + (h // RATIO, RATIO, w // RATIO, RATIO)).mean(axis=(-3, -1))


def _keys_cubic(t: np.ndarray, a: float = -0.5) -> np.ndarray:
    t = np.abs(t)
    out = np.zeros_like(t)
    near = t <= 1
    far = (t > 1) & (t < 2)
    out[near] = (a + 2) * t[near] ** 3 - (a + 3) * t[near] ** 2 + 1
    out[far] = a * t[far] ** 3 - 5 * a * t[far] ** 2 + 8 * a * t[far] - 4 * a
    return out


@lru_cache(maxsize=None)
def bicubic_matrix(n_low: int, ratio: int = RATIO) -> np.ndarray:
    """(ratio*n_low) x n_low interpolation matrix.

    Low-resolution sample ``k`` sits at high-resolution coordinate
    ``ratio*k + (ratio-1)/2`` (the centre of its block); edges are mirrored.
    """
    n_high = n_low * ratio
    m = np.zeros((n_high, n_low))
    for i in range(n_high):
        u = (i - (ratio - 1) / 2.0) / ratio
        base = int(np.floor(u))
        for k in range(base - 1, base + 3):
            wgt = float(_keys_cubic(np.array([u - k]))[0])
            if wgt == 0.0:
                continue
            j = k
            while j < 0 or j >= n_low:
                j = -j - 1 if j < 0 else 2 * n_low - 1 - j
            m[i, j] += wgt
    m.setflags(write=False)
    return m


def bicubic_upsample(lrms: np.ndarray, ratio: int = RATIO) -> np.ndarray:
    lrms = np.asarray(lrms, dtype=np.float64)
    mh = bicubic_matrix(lrms.shape[-2], ratio)
    mw = bicubic_matrix(lrms.shape[-1], ratio)
    return np.clip(mh @ lrms @ mw.T, 0.0, 1.0)


# -- synthetic scenes -----------------------------------------------------------


def _smooth_field(rng: np.random.Generator, h: int, w: int, sigma: float) -> np.ndarray:
    f = gaussian_filter(rng.standard_normal((h, w)), sigma, mode="wrap")
    f -= f.min()
    peak = f.max()
    return f / peak if peak > 0 else f


def _pan_weights(b: int) -> np.ndarray:
    if b == 4:
        return np.array(PAN_WEIGHTS_4)
    return np.full(b, 1.0 / b)


def synth_scene(seed: int, bands: int = 4, h: int = 64, w: int = 64) -> Scene:
    """Deterministic scene: smooth band-correlated background, sharp rectangles and thin lines.

    Rectangles and lines carry per-band gains, so their edges are visible in
    every band but their spectra differ. PAN is a fixed positive band
    average plus a faint texture absent from the bands.
    """
    _check_size(h, w)
    rng = make_rng(seed, "scene")
    shared = _smooth_field(rng, h, w, sigma=h / 8)
    hrms = np.empty((bands, h, w))
    base_gain = rng.uniform(0.25, 0.45, size=bands)
    for b in range(bands):
        own = _smooth_field(rng, h, w, sigma=h / 6)
        hrms[b] = base_gain[b] * (0.7 * shared + 0.3 * own) + 0.1

    labels = np.zeros((h, w), dtype=np.int32)
    n_rect = int(rng.integers(4, 8))
    for i in range(n_rect):
        rh, rw = rng.integers(h // 8, h // 3, size=2)
        y0, x0 = rng.integers(0, h - rh), rng.integers(0, w - rw)
        spectrum = rng.uniform(-0.3, 0.45, size=bands)
        hrms[:, y0 : y0 + rh, x0 : x0 + rw] += spectrum[:, None, None]
        labels[y0 : y0 + rh, x0 : x0 + rw] += 1 << i

    line_mask = np.zeros((h, w), dtype=bool)
    n_lines = int(rng.integers(2, 5))
    for _ in range(n_lines):
        spectrum = rng.uniform(0.2, 0.5, size=bands) * rng.choice([-1.0, 1.0])
        kind = rng.integers(0, 3)
        this = np.zeros((h, w), dtype=bool)
        if kind == 0:
            this[rng.integers(0, h), :] = True
        elif kind == 1:
            this[:, rng.integers(0, w)] = True
        else:
            off = int(rng.integers(-h // 2, h // 2))
            yy, xx = np.nonzero(np.eye(h, w, k=off, dtype=bool))
            this[yy, xx] = True
        hrms[:, this] += spectrum[:, None]
        line_mask |= this
    hrms = np.clip(hrms, 0.0, 1.0)

    texture = gaussian_filter(rng.standard_normal((h, w)), 0.7, mode="wrap")
    pan = np.tensordot(_pan_weights(bands), hrms, axes=1) + 0.02 * texture
    pan = np.clip(pan, 0.0, 1.0)[None]

    lrms = wald_degrade(hrms)
    lrms_up = bicubic_upsample(lrms)

    boundary = np.zeros((h, w), dtype=bool)
    boundary[:, 1:] |= labels[:, 1:] != labels[:, :-1]
    boundary[:, :-1] |= labels[:, 1:] != labels[:, :-1]
    boundary[1:, :] |= labels[1:, :] != labels[:-1, :]
    boundary[:-1, :] |= labels[1:, :] != labels[:-1, :]
    edge = boundary | line_mask
    flat = ~binary_dilation(edge, iterations=3)
    return Scene(pan, lrms, lrms_up, hrms, edge, flat, seed)


def augment_flip(scene: Scene, flip_h: bool, flip_v: bool) -> Scene:
    """Mirror every raster left-right (``flip_h``) and/or top-bottom (``flip_v``)."""
    axes = tuple(ax for ax, on in ((-1, flip_h), (-2, flip_v)) if on)
    if not axes:
        return replace(scene)

    def f(a):
        return None if a is None else np.flip(a, axis=axes).copy()

    return replace(
        scene,
        pan=f(scene.pan),
        lrms=f(scene.lrms),
        lrms_up=f(scene.lrms_up),
        hrms=f(scene.hrms),
        edge_mask=f(scene.edge_mask),
        flat_mask=f(scene.flat_mask),
    )


# -- datasets ---------------------------------------------------------------------

SCENE_FIELDS = ("pan", "lrms", "lrms_up", "hrms", "edge_mask", "flat_mask")


@dataclass
class SceneSet:
    """Scenes stacked along a leading axis (masks stored as 0/1 floats)."""

    pan: np.ndarray
    lrms: np.ndarray
    lrms_up: np.ndarray
    hrms: np.ndarray | None
    edge_mask: np.ndarray | None = None
    flat_mask: np.ndarray | None = None

    def __len__(self) -> int:
        return self.pan.shape[0]

    @property
    def bands(self) -> int:
        return self.lrms.shape[1]

    def scene(self, i: int) -> Scene:
        def pick(a, as_bool=False):
            if a is None:
                return None
            return a[i] > 0.5 if as_bool else a[i]

        return Scene(
            self.pan[i], self.lrms[i], self.lrms_up[i], pick(self.hrms),
            pick(self.edge_mask, True), pick(self.flat_mask, True),
        )

    def subset(self, idx) -> "SceneSet":
        return SceneSet(*(None if getattr(self, k) is None else getattr(self, k)[idx] for k in SCENE_FIELDS))

    def to_rasters(self) -> dict:
        return {k: getattr(self, k) for k in SCENE_FIELDS if getattr(self, k) is not None}

    @classmethod
    def from_rasters(cls, m: dict) -> "SceneSet":
        missing = [k for k in ("pan", "lrms", "lrms_up") if k not in m]
        if missing:
            raise FormatError(f"scene file lacks arrays {missing}")
        return cls(*(m.get(k) for k in SCENE_FIELDS))

    @classmethod
    def from_scenes(cls, scenes: list) -> "SceneSet":
        def stack(name, as_float=False):
            vals = [getattr(s, name) for s in scenes]
            if any(v is None for v in vals):
                return None
            return np.stack([v.astype(np.float64) if as_float else v for v in vals])

        return cls(stack("pan"), stack("lrms"), stack("lrms_up"), stack("hrms"),
                   stack("edge_mask", True), stack("flat_mask", True))


def make_scene_set(seed: int, count: int, split: str, bands: int = 4, h: int = 64, w: int = 64) -> SceneSet:
    scenes = [synth_scene(sub_seed(seed, f"scene-{split}", i), bands, h, w) for i in range(count)]
    return SceneSet.from_scenes(scenes)


# -- UKRS raster container ------------------------------------------------------------

MAGIC = b"UKRS"
VERSION = 1
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 1, np.dtype("float64"): 2}


def encode_rasters(rasters: dict) -> bytes:
    if len(rasters) > 0xFFFF:
        raise ContractError(f"too many entries for one container: {len(rasters)}")
    out = [MAGIC, struct.pack("<HH", VERSION, len(rasters))]
    for name, arr in rasters.items():
        arr = np.asarray(arr)
        if arr.dtype not in _CODES:
            raise ContractError(f"raster {name!r}: dtype {arr.dtype} is not float32/float64")
        if not np.all(np.isfinite(arr)):
            raise ContractError(f"raster {name!r} contains non-finite values")
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF or arr.ndim > 0xFF:
            raise ContractError(f"raster {name!r}: name or rank too large")
        out.append(struct.pack("<H", len(raw)))
        out.append(raw)
        out.append(struct.pack("<BB", _CODES[arr.dtype], arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype=_DTYPES[_CODES[arr.dtype]]).tobytes())
    return b"".join(out)


def decode_rasters(buf: bytes) -> dict:
    pos = 0

    def take(n, what, entry=None):
        nonlocal pos
        if pos + n > len(buf):
            raise FormatError(f"truncated {what}: need {n} bytes, have {len(buf) - pos}", pos, entry)
        chunk = buf[pos : pos + n]
        pos += n
        return chunk

    if take(4, "magic") != MAGIC:
        raise FormatError("bad magic, expected b'UKRS'", 0)
    version, count = struct.unpack("<HH", take(4, "header"))
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2, "name length"))
        start = pos
        try:
            name = take(nlen, "name").decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("entry name is not valid UTF-8", start) from None
        code_at = pos
        code, rank = struct.unpack("<BB", take(2, "dtype/rank", name))
        if code not in _DTYPES:
            raise FormatError(f"unknown dtype code {code}", code_at, name)
        dims = struct.unpack(f"<{rank}I", take(4 * rank, "dims", name))
        dt = _DTYPES[code]
        size = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
        payload = take(size, "payload", name)
        arr = np.frombuffer(payload, dtype=dt).reshape(dims)
        out[name] = arr.astype(dt.newbyteorder("="), copy=True)
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} trailing bytes after the last entry", pos)
    return out


def write_rasters(path, rasters: dict) -> None:
    Path(path).write_bytes(encode_rasters(rasters))


def read_rasters(path) -> dict:
    return decode_rasters(Path(path).read_bytes())


# -- previews -----------------------------------------------------------------------------


def stretch_to_uint8(img: np.ndarray, low: float = 1.0, high: float = 99.0) -> np.ndarray:
    lo, hi = np.percentile(img, [low, high])
    if hi <= lo:
        return np.zeros(img.shape, dtype=np.uint8)
    return (np.clip((img - lo) / (hi - lo), 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def save_preview(path, img: np.ndarray, bands=(2, 1, 0)) -> None:
    """Write a percentile-stretched 8-bit PNG of three bands (or one band as grayscale)."""
    from PIL import Image

    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[None]
    if img.shape[0] == 1 or len(bands) == 1:
        b = 0 if img.shape[0] == 1 else bands[0]
        Image.fromarray(stretch_to_uint8(img[b])).save(path)
        return
    if max(bands) >= img.shape[0]:
        raise ContractError(f"preview bands {bands} out of range for {img.shape[0]} bands")
    rgb = np.stack([stretch_to_uint8(img[b]) for b in bands], axis=-1)
    Image.fromarray(rgb).save(path)


def heat_ramp(x: np.ndarray) -> np.ndarray:
    """Black-red-yellow-white colours (H x W x 3, uint8) for values in [0, 1]."""
    x = np.clip(x, 0.0, 1.0)
    rgb = np.stack([np.clip(3 * x, 0, 1), np.clip(3 * x - 1, 0, 1), np.clip(3 * x - 2, 0, 1)], axis=-1)
    return (rgb * 255.0 + 0.5).astype(np.uint8)


def save_heatmap(path, img: np.ndarray) -> None:
    """Write a single-band map (e.g. uncertainty) as a percentile-stretched heat-map PNG."""
    from PIL import Image

    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ContractError(f"heat map needs a 2-D array, got shape {img.shape}")
    Image.fromarray(heat_ramp(stretch_to_uint8(img) / 255.0)).save(path)
