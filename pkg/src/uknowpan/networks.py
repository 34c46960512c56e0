"""Teacher (FSA-T) and student (FSA-S) denoisers and their building blocks.

Both networks share one U-Net skeleton: per encoder stage a timestep-aware
ResBlock, 2x average-pool between stages; per decoder stage a ResBlock on
the upsampled features concatenated with the matching encoder output. The
teacher adds feed-forward attention (FFA) after each encoder ResBlock, the
frequency channel attention / wavelet cross attention pair (HQFE) after each
decoder ResBlock, and a second head producing a positive per-band
uncertainty map.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, DimensionError, NumericError
from .layers import (
    Conv1x1, DWConv3x3, GroupNorm, Linear, Module, PDConv, ResBlock, _param, timestep_embedding,
)
from .rng import make_rng
from .spectral import DWT, SWT, build_s_cond, irfft2, rfft2
from .tensor import ComplexTensor, Tensor

THETA_FLOOR = 1e-3
RESIDUAL_SCALE = 2.0
TEMB_DIM = 32
MODULATION_INIT_SCALE = 0.01


@dataclass
class ModelConfig:
    bands: int = 4
    base_channels: int = 16
    stages: int = 3
    multipliers: tuple = (1, 2, 4)
    vector_dim: int = 32
    prior_width: int = 16
    prior_blocks: int = 4
    extractor_width: int = 16
    cond_kind: str = SWT
    ffa_on: bool = True
    hqfe_on: bool = True
    seed: int = 0

    def __post_init__(self):
        self.multipliers = tuple(int(m) for m in self.multipliers)
        if len(self.multipliers) != self.stages:
            raise ConfigError(f"{self.stages} stages need {self.stages} multipliers, got {self.multipliers}")
        if self.cond_kind not in (SWT, DWT):
            raise ConfigError(f"cond_kind must be SWT or DWT, got {self.cond_kind!r}")
        if self.bands < 1 or self.base_channels < 1 or self.vector_dim < 1:
            raise ConfigError("bands, base_channels and vector_dim must be positive")

    def channels(self) -> list:
        return [self.base_channels * m for m in self.multipliers]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["multipliers"] = list(self.multipliers)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["multipliers"] = tuple(d.get("multipliers", (1, 2, 4)))
        return cls(**d)


@dataclass
class TeacherOutput:
    x0_hat: Tensor
    theta_hat: Tensor
    features: list = field(default_factory=list)


def _positive(pre: Tensor) -> Tensor:
    return T.softplus(pre) + THETA_FLOOR


def channel_attention(q: Tensor, k: Tensor, v: Tensor, temperature: Tensor) -> tuple:
    """``softmax(q k^T / sqrt(C)) v`` over N x C x L inputs.

    Rows of ``q`` and ``k`` are L2-normalized first and the logits are scaled
    by a learnable temperature, so the logits stay bounded whatever the
    magnitude of the (possibly spectral) features.
    """
    c = q.shape[-2]
    qn = T.l2_normalize(q, axis=-1)
    kn = T.l2_normalize(k, axis=-1)
    logits = T.matmul(qn, T.swapaxes(kn, -1, -2)) * temperature * (1.0 / math.sqrt(c))
    attn = T.softmax(logits, axis=-1)
    return T.matmul(attn, v), attn


# -- encoder / decoder blocks -----------------------------------------------


class FFA(Module):
    """Feed-forward attention modulated by a compact vector."""

    def __init__(self, channels: int, vector_dim: int, rng: np.random.Generator):
        self._c = channels
        self.modulation = Linear(vector_dim, 2 * channels, rng)
        # modulation starts near identity: beta -> 0, gamma -> 1; the weight stays
        # small but nonzero so the vector extractor receives gradient from step 0
        self.modulation.weight.data *= MODULATION_INIT_SCALE
        self.modulation.bias.data[:channels] = 0.0
        self.modulation.bias.data[channels:] = 1.0
        self.norm = GroupNorm(channels, affine=False)
        self.gate = PDConv(channels, 2 * channels, rng)

    def modulate(self, f: Tensor, v: Tensor) -> Tensor:
        if v.shape[-1] != self.modulation.weight.shape[1]:
            raise ContractError(f"FFA: vector dim {v.shape[-1]} != {self.modulation.weight.shape[1]}")
        bg = self.modulation(v)
        beta, gamma = T.split(bg, 2, axis=-1)
        beta = T.reshape(beta, beta.shape + (1, 1))
        gamma = T.reshape(gamma, gamma.shape + (1, 1))
        return gamma * self.norm(f) + beta

    def forward(self, f: Tensor, v: Tensor) -> Tensor:
        fp = self.modulate(f, v)
        a, b = T.split(self.gate(fp), 2, axis=1)
        return a * T.gelu(b) + f


class FTCA(Module):
    """Channel self-attention on the real and imaginary half-spectra."""

    def __init__(self, channels: int, rng: np.random.Generator):
        self.qkv = PDConv(channels, 3 * channels, rng)
        self.temperature = _param(np.ones(2))
        self._last_attention = None

    def forward(self, f: Tensor) -> Tensor:
        n, c, h, w = f.shape
        spec = rfft2(self.qkv(f))
        wf = spec.shape[-1]
        outs = []
        maps = []
        for i, part in enumerate((spec.real, spec.imag)):
            q, k, v = T.split(T.reshape(part, (n, 3 * c, h * wf)), 3, axis=1)
            o, attn = channel_attention(q, k, v, self.temperature[i])
            outs.append(T.reshape(o, (n, c, h, wf)))
            maps.append(attn)
        self._last_attention = maps
        return irfft2(ComplexTensor(outs[0], outs[1]), width=w) + f


class SWTCA(Module):
    """Two-stage channel cross attention injecting wavelet conditioning."""

    def __init__(self, channels: int, cond_channels: int, rng: np.random.Generator):
        self.qk1 = PDConv(cond_channels, 2 * channels, rng)
        self.v1 = PDConv(channels, channels, rng)
        self.q2 = PDConv(channels, channels, rng)
        self.kv2 = PDConv(cond_channels, 2 * channels, rng)
        self.temperature = _param(np.ones(2))
        self._last_attention = None

    def forward(self, f: Tensor, s_cond: Tensor) -> Tensor:
        n, c, h, w = f.shape
        if s_cond.shape[-2:] != (h, w):
            raise ContractError(f"SWTCA: conditioning {s_cond.shape} does not match features {f.shape}")
        flat = lambda t: T.reshape(t, (n, t.shape[1], h * w))
        q1, k1 = T.split(flat(self.qk1(s_cond)), 2, axis=1)
        v1 = flat(self.v1(f))
        f1, a1 = channel_attention(q1, k1, v1, self.temperature[0])
        q2 = flat(self.q2(T.reshape(f1, (n, c, h, w))))
        k2, v2 = T.split(flat(self.kv2(s_cond)), 2, axis=1)
        out, a2 = channel_attention(q2, k2, v2, self.temperature[1])
        self._last_attention = [a1, a2]
        return T.reshape(out, (n, c, h, w)) + f


# -- prior network and vector extractor ------------------------------------


class PriorNetwork(Module):
    """Direct-regression network giving a rough residual and uncertainty map."""

    def __init__(self, bands: int, width: int = 16, blocks: int = 4, seed: int = 0):
        rng = make_rng(seed, "prior-init")
        self._bands = bands
        self.stem = PDConv(bands + 1, width, rng)
        self.blocks = [ResBlock(width, width, rng) for _ in range(blocks)]
        self.head_norm = GroupNorm(width)
        self.head = Conv1x1(width, 2 * bands, rng)
        self.head.bias.data[:] = 0.0
        self._trained = False

    @property
    def trained(self) -> bool:
        return self._trained

    @trained.setter
    def trained(self, value: bool) -> None:
        self._trained = bool(value)

    def forward(self, pan: Tensor, lrms_up: Tensor) -> tuple:
        """Return ``(residual, theta)`` with the residual in network units."""
        h = self.stem(T.concat([pan, lrms_up], axis=1))
        for blk in self.blocks:
            h = blk(h)
        out = self.head(T.gelu(self.head_norm(h)))
        res, pre = T.split(out, 2, axis=1)
        return res, _positive(pre)


def prior_features(prior: PriorNetwork, pan, lrms_up) -> np.ndarray:
    """``[theta~ | I~]`` from the frozen prior, as a constant array (N x 2B x H x W)."""
    pan, lrms_up = T.as_tensor(pan), T.as_tensor(lrms_up)
    with T.no_grad():
        res, theta = prior(pan, lrms_up)
    return np.concatenate([theta.data, lrms_up.data + res.data / RESIDUAL_SCALE], axis=1)


class VectorExtractor(Module):
    """Pool ResBlock features of the frozen prior's outputs into one vector per image."""

    def __init__(self, bands: int, width: int, vector_dim: int, rng: np.random.Generator):
        self.stem = PDConv(2 * bands, width, rng)
        self.blocks = [ResBlock(width, width, rng) for _ in range(2)]
        self.proj = Linear(width, vector_dim, rng)

    def forward(self, pan: Tensor, lrms_up: Tensor, prior: PriorNetwork, prior_out=None) -> Tensor:
        """``prior_out`` may carry precomputed :func:`prior_features` for these inputs."""
        if prior is None or not prior.trained:
            raise ContractError("vector extractor needs a trained, frozen prior network")
        if prior_out is None:
            prior_out = prior_features(prior, pan, lrms_up)
        h = self.stem(T.as_tensor(prior_out))
        for blk in self.blocks:
            h = blk(h)
        return self.proj(T.mean(h, axis=(2, 3)))


# -- U-Nets ------------------------------------------------------------------


class _UNet(Module):
    def __init__(self, cfg: ModelConfig, head_channels: int, rng: np.random.Generator):
        chans = cfg.channels()
        b = cfg.bands
        self._cfg = cfg
        self.stem = PDConv(2 * b + 1, chans[0], rng)
        enc, prev = [], chans[0]
        for c in chans:
            enc.append(ResBlock(prev, c, rng, TEMB_DIM))
            prev = c
        self.enc = enc
        dec = []
        for i in reversed(range(cfg.stages)):
            cin = chans[i] if i == cfg.stages - 1 else chans[i + 1] + chans[i]
            dec.append(ResBlock(cin, chans[i], rng, TEMB_DIM))
        self.dec = dec
        self.head_norm = GroupNorm(chans[0])
        self.head = Conv1x1(chans[0], head_channels, rng)
        self.head.bias.data[:] = 0.0

    def _check_inputs(self, x_t: Tensor, pan: Tensor, lrms_up: Tensor) -> None:
        b = self._cfg.bands
        if x_t.shape[1] != b or lrms_up.shape[1] != b or pan.shape[1] != 1:
            raise DimensionError(
                f"expected x_t/lrms_up with {b} bands and 1-band pan, got {x_t.shape}, {lrms_up.shape}, {pan.shape}"
            )
        if not (x_t.shape[2:] == pan.shape[2:] == lrms_up.shape[2:]):
            raise DimensionError(f"inputs not spatially aligned: {x_t.shape}, {pan.shape}, {lrms_up.shape}")
        if x_t.shape[-1] % (2 ** (self._cfg.stages - 1)) or x_t.shape[-2] % (2 ** (self._cfg.stages - 1)):
            raise DimensionError(f"spatial size {x_t.shape[2:]} not divisible by 2^(stages-1)")

    def _run(self, x_t, pan, lrms_up, t, enc_hook=None, dec_hook=None) -> tuple:
        self._check_inputs(x_t, pan, lrms_up)
        emb = timestep_embedding(t, TEMB_DIM, x_t.dtype)
        h = self.stem(T.concat([x_t, pan, lrms_up], axis=1))
        feats, skips = [], []
        for i, blk in enumerate(self.enc):
            h = blk(h, emb)
            if enc_hook is not None:
                h = enc_hook(i, h)
            feats.append(h)
            skips.append(h)
            if i < len(self.enc) - 1:
                h = T.avg_pool2(h)
        for j, blk in enumerate(self.dec):
            i = self._cfg.stages - 1 - j
            if j > 0:
                h = T.concat([T.upsample_nearest2(h), skips[i]], axis=1)
            h = blk(h, emb)
            if dec_hook is not None:
                h = dec_hook(i, h)
            feats.append(h)
        return self.head(T.gelu(self.head_norm(h))), feats

    def topology(self) -> list:
        """(path, layer type, parameter shapes) for every module, head excluded."""
        rows = []
        for path, mod in self.named_modules():
            if path.startswith("head") and not path.startswith("head_norm"):
                continue
            own = tuple(p.shape for n, p in mod.named_parameters() if "." not in n)
            rows.append((path, type(mod).__name__, own))
        return rows


class FSATeacher(_UNet):
    """Frequency-selective attention teacher predicting residual and uncertainty."""

    def __init__(self, cfg: ModelConfig, prior: Optional[PriorNetwork] = None):
        rng = make_rng(cfg.seed, "teacher-init")
        super().__init__(cfg, 2 * cfg.bands, rng)
        chans = cfg.channels()
        cond_ch = cfg.bands + 3
        if cfg.ffa_on:
            self.extractor = VectorExtractor(cfg.bands, cfg.extractor_width, cfg.vector_dim, rng)
            self.ffa = [FFA(c, cfg.vector_dim, rng) for c in chans]
        if cfg.hqfe_on:
            self.ftca = [FTCA(c, rng) for c in chans]
            self.swtca = [SWTCA(c, cond_ch, rng) for c in chans]
            native = 0 if cfg.cond_kind == SWT else 1
            self._cond_native = native
            self.cond_down = [DWConv3x3(cond_ch, rng, stride=2) for _ in range(native + 1, cfg.stages)]
        self._prior = prior

    def set_prior(self, prior: PriorNetwork) -> None:
        self._prior = prior

    @property
    def prior(self) -> Optional[PriorNetwork]:
        return self._prior

    def _cond_pyramid(self, pan: Tensor, lrms_up: Tensor) -> list:
        s = build_s_cond(pan, lrms_up, self._cfg.cond_kind)
        native = self._cond_native
        levels = [None] * self._cfg.stages
        levels[min(native, self._cfg.stages - 1)] = s
        for r in range(native + 1, self._cfg.stages):
            levels[r] = self.cond_down[r - native - 1](levels[r - 1])
        for r in range(native - 1, -1, -1):
            levels[r] = T.upsample_nearest2(levels[r + 1])
        return levels

    def forward(self, x_t: Tensor, pan: Tensor, lrms_up: Tensor, t, prior_out=None) -> TeacherOutput:
        cfg = self._cfg
        enc_hook = dec_hook = None
        if cfg.ffa_on:
            v = self.extractor(pan, lrms_up, self._prior, prior_out)
            enc_hook = lambda i, h: self.ffa[i](h, v)
        if cfg.hqfe_on:
            conds = self._cond_pyramid(pan, lrms_up)
            dec_hook = lambda i, h: self.swtca[i](self.ftca[i](h), conds[i])
        out, feats = self._run(x_t, pan, lrms_up, t, enc_hook, dec_hook)
        x0_hat, pre = T.split(out, 2, axis=1)
        theta = _positive(pre)
        if not (np.all(np.isfinite(x0_hat.data)) and np.all(np.isfinite(theta.data))):
            raise NumericError("teacher produced non-finite output")
        return TeacherOutput(x0_hat, theta, feats)

    def denoise(self, x_t, pan, lrms_up, t, prior_out=None) -> tuple:
        out = self.forward(x_t, pan, lrms_up, t, prior_out)
        return out.x0_hat, out.theta_hat


class FSAStudent(_UNet):
    """ResBlock-only student sharing the teacher's stage layout."""

    def __init__(self, cfg: ModelConfig, teacher_cfg: Optional[ModelConfig] = None):
        rng = make_rng(cfg.seed, "student-init")
        super().__init__(cfg, cfg.bands, rng)
        if teacher_cfg is not None and (
            teacher_cfg.channels() != cfg.channels() or teacher_cfg.bands != cfg.bands
        ):
            raise ContractError(
                f"student stages {cfg.channels()} cannot match teacher stages {teacher_cfg.channels()}"
            )

    def forward(self, x_t: Tensor, pan: Tensor, lrms_up: Tensor, t) -> tuple:
        out, feats = self._run(x_t, pan, lrms_up, t)
        if not np.all(np.isfinite(out.data)):
            raise NumericError("student produced non-finite output")
        return out, feats

    def denoise(self, x_t, pan, lrms_up, t):
        return self.forward(x_t, pan, lrms_up, t)[0]


def fsa_t_forward(x_t, pan, lrms_up, t, cfg: ModelConfig, model: Optional[FSATeacher] = None,
                  prior: Optional[PriorNetwork] = None) -> TeacherOutput:
    model = model if model is not None else FSATeacher(cfg, prior)
    return model(T.as_tensor(x_t), T.as_tensor(pan), T.as_tensor(lrms_up), t)


def fsa_s_forward(x_t, pan, lrms_up, t, cfg: ModelConfig, model: Optional[FSAStudent] = None) -> tuple:
    model = model if model is not None else FSAStudent(cfg)
    return model(T.as_tensor(x_t), T.as_tensor(pan), T.as_tensor(lrms_up), t)


def vector_extractor(pan, lrms_up, prior: PriorNetwork, extractor: VectorExtractor) -> Tensor:
    return extractor(T.as_tensor(pan), T.as_tensor(lrms_up), prior)
