"""Patch-token video denoiser with per-frame caption cross-attention.

Each frame is cut into ``P`` patch tokens. A block pair applies, in order:

* spatial cross-attention: every frame's patch tokens query the caption
  token bank that the frame conditioning assigns to that frame,
* spatial token mixing: an MLP across the ``P`` positions of one frame,
* temporal self-attention: every patch position attends across all frames,
* a position-wise feed-forward layer.

Only the temporal sub-layer moves information between frames, so turning it
off (``temporal=False``) makes frames independent.

With ``precondition`` on, the network output F is wrapped as
``eps_hat = c_skip * z + c_out * F(c_in * z)`` using the training schedule's
signal scale at ``tau``. ``c_skip`` is the linear least-squares estimate of
the noise from ``z`` for data of std ``sigma_data``, and ``c_out`` the std of
what remains, so F always regresses a unit-variance target. Without it a
patch token narrower than the patch cannot even pass ``z`` through at high
noise.

With ``pixel_hidden`` > 0 a per-pixel MLP, fed the pixel's scaled input and
features decoded from its patch token, adds to F. Removing noise at low
``tau`` means snapping every pixel of ``z`` back to clean values, which a
patch token narrower than the patch cannot do alone.
"""
from __future__ import annotations

import functools
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import ConfigError, ShapeError
from .numerics import (
    Tensor, add, broadcast_to, layer_norm, linear, matmul, mse, mul, silu, softmax, stack, take,
    transpose,
)
from .schedule import make_schedule
from .textenc import FrameConditioning, TextEncoder


@dataclass(frozen=True)
class DenoiserConfig:
    frames: int = 32          # capacity of the temporal position table
    channels: int = 3
    height: int = 16
    width: int = 16
    dim: int = 32
    heads: int = 4
    blocks: int = 2
    patch: int = 4
    mix_hidden: int = 32
    ff_mult: int = 4
    temporal: bool = True
    temporal_pos: bool = True
    precondition: bool = True
    pixel_hidden: int = 16    # per-pixel output MLP width; 0 disables it
    pixel_features: int = 4
    pixel_gate: bool = False  # per-pixel linear gain on the input instead
    sigma_data: float = 0.5
    # training schedule the preconditioning coefficients are read from
    schedule_steps: int = 1000
    beta_min: float = 1e-4
    beta_max: float = 2e-2

    def __post_init__(self):
        if self.height % self.patch or self.width % self.patch:
            raise ConfigError(f"frame {self.height}x{self.width} not divisible by patch {self.patch}")
        if self.dim % self.heads:
            raise ConfigError(f"dim {self.dim} not divisible by heads {self.heads}")
        if min(self.frames, self.channels, self.dim, self.blocks, self.patch) < 1:
            raise ConfigError("config sizes must be positive")
        if self.sigma_data <= 0:
            raise ConfigError("sigma_data must be > 0")

    @property
    def positions(self) -> int:
        return (self.height // self.patch) * (self.width // self.patch)

    @property
    def patch_dim(self) -> int:
        return self.channels * self.patch * self.patch

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DenoiserConfig":
        return cls(**d)


@functools.lru_cache(maxsize=8)
def _signal_table(T: int, beta_min: float, beta_max: float) -> np.ndarray:
    return make_schedule(T, beta_min, beta_max).alpha


def preconditioning(taus: Sequence[int], cfg: DenoiserConfig):
    """(c_in, c_skip, c_out) per batch item, each of shape (B,)."""
    table = _signal_table(cfg.schedule_steps, cfg.beta_min, cfg.beta_max)
    t = np.asarray(taus, dtype=np.int64)
    if t.min() < 1 or t.max() > cfg.schedule_steps:
        raise ShapeError(f"timesteps must lie in 1..{cfg.schedule_steps}")
    a = table[t - 1]
    b2 = 1.0 - a * a
    var = a * a * cfg.sigma_data ** 2 + b2
    return 1.0 / np.sqrt(var), np.sqrt(b2) / var, a * cfg.sigma_data / np.sqrt(var)


def _weight(rng, fan_in, fan_out, name):
    return Tensor(rng.normal((fan_in, fan_out)) / math.sqrt(fan_in), requires_grad=True, name=name)


def _zeros(shape, name):
    return Tensor(np.zeros(shape), requires_grad=True, name=name)


def _ones(shape, name):
    return Tensor(np.ones(shape), requires_grad=True, name=name)


def init_params(cfg: DenoiserConfig, rng, text_dim: Optional[int] = None, zero_head: bool = True) -> "OrderedDict[str, Tensor]":
    """Fresh parameters. ``zero_head`` starts with eps_hat == 0."""
    d, t = cfg.dim, text_dim or cfg.dim
    P, hid = cfg.positions, cfg.mix_hidden
    p: "OrderedDict[str, Tensor]" = OrderedDict()

    def put(name, tensor):
        tensor.name = name
        p[name] = tensor

    put("patch.w", _weight(rng, cfg.patch_dim, d, ""))
    put("patch.b", _zeros(d, ""))
    put("pos.space", Tensor(rng.normal((P, d)) * 0.1, requires_grad=True))
    put("pos.time", Tensor(rng.normal((cfg.frames, d)) * 0.1, requires_grad=True))
    put("time.w1", _weight(rng, d, d, ""))
    put("time.b1", _zeros(d, ""))
    put("time.w2", _weight(rng, d, d, ""))
    put("time.b2", _zeros(d, ""))
    for i in range(cfg.blocks):
        b = f"block{i}."
        for part in ("ca", "mix", "ta", "ff"):
            put(b + part + ".ln_g", _ones(d, ""))
            put(b + part + ".ln_b", _zeros(d, ""))
        put(b + "ca.wq", _weight(rng, d, d, ""))
        put(b + "ca.wk", _weight(rng, t, d, ""))
        put(b + "ca.wv", _weight(rng, t, d, ""))
        put(b + "ca.wo", _weight(rng, d, d, ""))
        put(b + "ca.bo", _zeros(d, ""))
        put(b + "mix.w1", _weight(rng, P, hid, ""))
        put(b + "mix.b1", _zeros(hid, ""))
        put(b + "mix.w2", _weight(rng, hid, P, ""))
        put(b + "mix.b2", _zeros(P, ""))
        put(b + "ta.wq", _weight(rng, d, d, ""))
        put(b + "ta.wk", _weight(rng, d, d, ""))
        put(b + "ta.wv", _weight(rng, d, d, ""))
        put(b + "ta.wo", _weight(rng, d, d, ""))
        put(b + "ta.bo", _zeros(d, ""))
        put(b + "ff.w1", _weight(rng, d, d * cfg.ff_mult, ""))
        put(b + "ff.b1", _zeros(d * cfg.ff_mult, ""))
        put(b + "ff.w2", _weight(rng, d * cfg.ff_mult, d, ""))
        put(b + "ff.b2", _zeros(d, ""))
    put("out.ln_g", _ones(d, ""))
    put("out.ln_b", _zeros(d, ""))
    if zero_head:
        put("out.w", _zeros((d, cfg.patch_dim), ""))
    else:
        put("out.w", _weight(rng, d, cfg.patch_dim, ""))
    put("out.b", _zeros(cfg.patch_dim, ""))
    if cfg.pixel_gate:
        put("gate.w", _zeros((d, cfg.patch_dim), ""))
        put("gate.b", _zeros(cfg.patch_dim, ""))
    if cfg.pixel_hidden:
        k, hp, C = cfg.pixel_features, cfg.pixel_hidden, cfg.channels
        put("pix.wf", _weight(rng, d, cfg.patch * cfg.patch * k, ""))
        put("pix.bf", _zeros(cfg.patch * cfg.patch * k, ""))
        put("pix.w1f", _weight(rng, k, hp, ""))
        put("pix.w1u", _weight(rng, C, hp, ""))
        put("pix.b1", _zeros(hp, ""))
        put("pix.w2", _zeros((hp, C), "") if zero_head else _weight(rng, hp, C, ""))
        put("pix.b2", _zeros(C, ""))
    return p


def timestep_features(taus: Sequence[int], dim: int) -> np.ndarray:
    """Sinusoidal features of integer timesteps, shape (len(taus), dim)."""
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half, 1))
    args = np.asarray(taus, dtype=np.float64)[:, None] * freqs[None, :]
    feats = np.concatenate([np.sin(args), np.cos(args)], axis=1)
    if dim % 2:
        feats = np.concatenate([feats, np.zeros((len(taus), 1))], axis=1)
    return feats


def patchify(z: np.ndarray, cfg: DenoiserConfig) -> np.ndarray:
    """(B, L, C, H, W) -> (B, L, P, C*p*p)."""
    B, L, C, H, W = z.shape
    p = cfg.patch
    x = z.reshape(B, L, C, H // p, p, W // p, p).transpose(0, 1, 3, 5, 2, 4, 6)
    return np.ascontiguousarray(x).reshape(B, L, (H // p) * (W // p), C * p * p)


def unpatchify(t: Tensor, cfg: DenoiserConfig, B: int, L: int, channels: Optional[int] = None) -> Tensor:
    p, C = cfg.patch, channels or cfg.channels
    hp, wp = cfg.height // p, cfg.width // p
    x = t.reshape(B, L, hp, wp, C, p, p)
    x = transpose(x, (0, 1, 4, 2, 5, 3, 6))
    return x.reshape(B, L, C, cfg.height, cfg.width)


def _heads(x: Tensor, rows: int, length: int, heads: int, dh: int) -> Tensor:
    """(rows, length, heads*dh) -> (rows, heads, length, dh)."""
    return transpose(x.reshape(rows, length, heads, dh), (0, 2, 1, 3))


def _merge_heads(x: Tensor, rows: int, length: int, dim: int) -> Tensor:
    return transpose(x, (0, 2, 1, 3)).reshape(rows, length, dim)


def cross_attention_block(z: Tensor, conds: Sequence[FrameConditioning], params: Dict[str, Tensor],
                          cfg: DenoiserConfig, prefix: str = "block0.", return_weights: bool = False):
    """Residual multi-head cross-attention of each frame onto its own caption bank.

    ``z`` is (B, L, P, d); ``conds[b]`` holds one caption embedding per frame.
    """
    B, L, P, d = z.shape
    H, dh = cfg.heads, cfg.head_dim
    if len(conds) != B:
        raise ShapeError(f"cross-attention: {len(conds)} conditionings for batch of {B}")
    for c in conds:
        if len(c) != L:
            raise ShapeError(f"cross-attention: conditioning has {len(c)} frames, video has {L}")
    bank, index = [], []
    seen = {}
    for c in conds:
        for emb in c.per_frame:
            k = id(emb)
            if k not in seen:
                seen[k] = len(bank)
                bank.append(emb)
            index.append(seen[k])
    index = np.asarray(index, dtype=np.int64)
    s = bank[0].tokens.shape[0]
    tokens = stack([e.tokens for e in bank])                            # (U, s, t)
    key_mask = np.stack([e.mask for e in bank])[index]                  # (B*L, s)
    U = len(bank)

    h = layer_norm(z, params[prefix + "ca.ln_g"], params[prefix + "ca.ln_b"])
    q = _heads(matmul(h, params[prefix + "ca.wq"]).reshape(B * L, P, d), B * L, P, H, dh)
    k = transpose(matmul(tokens, params[prefix + "ca.wk"]).reshape(U, s, H, dh), (0, 2, 3, 1))  # (U, H, dh, s)
    v = transpose(matmul(tokens, params[prefix + "ca.wv"]).reshape(U, s, H, dh), (0, 2, 1, 3))  # (U, H, s, dh)
    k = take(k.reshape(U, H * dh * s), index).reshape(B * L, H, dh, s)
    v = take(v.reshape(U, H * s * dh), index).reshape(B * L, H, s, dh)
    scores = matmul(q, k) * (1.0 / math.sqrt(dh))                       # (B*L, H, P, s)
    weights = softmax(scores, mask=key_mask[:, None, None, :])
    out = _merge_heads(matmul(weights, v), B * L, P, d).reshape(B, L, P, d)
    out = linear(out, params[prefix + "ca.wo"], params[prefix + "ca.bo"])
    res = add(z, out)
    return (res, weights) if return_weights else res


def temporal_attention_block(z: Tensor, params: Dict[str, Tensor], cfg: DenoiserConfig,
                             prefix: str = "block0.", return_weights: bool = False):
    """Residual self-attention across all frames, independently per patch position."""
    B, L, P, d = z.shape
    H, dh = cfg.heads, cfg.head_dim
    h = layer_norm(z, params[prefix + "ta.ln_g"], params[prefix + "ta.ln_b"])
    h = transpose(h, (0, 2, 1, 3)).reshape(B * P, L, d)
    q = _heads(matmul(h, params[prefix + "ta.wq"]), B * P, L, H, dh)
    k = transpose(matmul(h, params[prefix + "ta.wk"]).reshape(B * P, L, H, dh), (0, 2, 3, 1))
    v = _heads(matmul(h, params[prefix + "ta.wv"]), B * P, L, H, dh)
    weights = softmax(matmul(q, k) * (1.0 / math.sqrt(dh)))             # (B*P, H, L, L)
    out = _merge_heads(matmul(weights, v), B * P, L, d)
    out = transpose(out.reshape(B, P, L, d), (0, 2, 1, 3))
    out = linear(out, params[prefix + "ta.wo"], params[prefix + "ta.bo"])
    res = add(z, out)
    return (res, weights) if return_weights else res


def spatial_mix_block(z: Tensor, params: Dict[str, Tensor], cfg: DenoiserConfig, prefix: str) -> Tensor:
    B, L, P, d = z.shape
    h = layer_norm(z, params[prefix + "mix.ln_g"], params[prefix + "mix.ln_b"])
    h = transpose(h, (0, 1, 3, 2))                                       # (B, L, d, P)
    h = linear(silu(linear(h, params[prefix + "mix.w1"], params[prefix + "mix.b1"])),
               params[prefix + "mix.w2"], params[prefix + "mix.b2"])
    return add(z, transpose(h, (0, 1, 3, 2)))


def feed_forward_block(z: Tensor, params: Dict[str, Tensor], prefix: str) -> Tensor:
    h = layer_norm(z, params[prefix + "ff.ln_g"], params[prefix + "ff.ln_b"])
    h = linear(silu(linear(h, params[prefix + "ff.w1"], params[prefix + "ff.b1"])),
               params[prefix + "ff.w2"], params[prefix + "ff.b2"])
    return add(z, h)


def pixel_head(h: Tensor, z_in: np.ndarray, params: Dict[str, Tensor], cfg: DenoiserConfig) -> Tensor:
    """Per-pixel MLP over the pixel's own input value and features decoded from its patch token."""
    B, L = z_in.shape[:2]
    feats = unpatchify(linear(h, params["pix.wf"], params["pix.bf"]), cfg, B, L, cfg.pixel_features)
    feats = transpose(feats, (0, 1, 3, 4, 2))
    pixels = Tensor(np.ascontiguousarray(z_in.transpose(0, 1, 3, 4, 2)))
    hidden = silu(add(matmul(feats, params["pix.w1f"]), linear(pixels, params["pix.w1u"], params["pix.b1"])))
    return transpose(linear(hidden, params["pix.w2"], params["pix.b2"]), (0, 1, 4, 2, 3))


def forward_batch(taus: Sequence[int], z_tau: np.ndarray, conds: Sequence[FrameConditioning],
                  params: Dict[str, Tensor], cfg: DenoiserConfig) -> Tensor:
    """Noise prediction for a batch of equal-length videos, shape (B, L, C, H, W)."""
    z_tau = np.asarray(z_tau, dtype=np.float64)
    if z_tau.ndim != 5 or z_tau.shape[2:] != (cfg.channels, cfg.height, cfg.width):
        raise ShapeError(f"video batch {z_tau.shape} does not match config "
                         f"(B, L, {cfg.channels}, {cfg.height}, {cfg.width})")
    B, L = z_tau.shape[:2]
    if L > cfg.frames:
        raise ShapeError(f"{L} frames exceed the model's temporal capacity of {cfg.frames}")
    if len(taus) != B:
        raise ShapeError(f"{len(taus)} timesteps for batch of {B}")
    P, d = cfg.positions, cfg.dim
    if cfg.precondition:
        c_in, c_skip, c_out = preconditioning(taus, cfg)
        z_in = z_tau * c_in[:, None, None, None, None]
    else:
        z_in = z_tau

    h = linear(Tensor(patchify(z_in, cfg)), params["patch.w"], params["patch.b"])
    h = add(h, broadcast_to(params["pos.space"].reshape(1, 1, P, d), (B, L, P, d)))
    if cfg.temporal_pos:
        tpos = take(params["pos.time"], np.arange(L)).reshape(1, L, 1, d)
        h = add(h, broadcast_to(tpos, (B, L, P, d)))
    temb = Tensor(timestep_features(taus, d))
    temb = linear(silu(linear(temb, params["time.w1"], params["time.b1"])), params["time.w2"], params["time.b2"])
    h = add(h, broadcast_to(temb.reshape(B, 1, 1, d), (B, L, P, d)))

    for i in range(cfg.blocks):
        pre = f"block{i}."
        h = cross_attention_block(h, conds, params, cfg, pre)
        h = spatial_mix_block(h, params, cfg, pre)
        if cfg.temporal:
            h = temporal_attention_block(h, params, cfg, pre)
        h = feed_forward_block(h, params, pre)

    h = layer_norm(h, params["out.ln_g"], params["out.ln_b"])
    out = unpatchify(linear(h, params["out.w"], params["out.b"]), cfg, B, L)
    if cfg.pixel_gate:
        gate = unpatchify(linear(h, params["gate.w"], params["gate.b"]), cfg, B, L)
        out = add(out, mul(gate, Tensor(z_in)))
    if cfg.pixel_hidden:
        out = add(out, pixel_head(h, z_in, params, cfg))
    if not cfg.precondition:
        return out
    scale = np.broadcast_to(c_out[:, None, None, None, None], out.shape)
    return add(mul(out, Tensor(np.ascontiguousarray(scale))), Tensor(z_tau * c_skip[:, None, None, None, None]))


def forward(tau: int, z_tau: np.ndarray, cond: FrameConditioning, params: Dict[str, Tensor],
            cfg: DenoiserConfig) -> Tensor:
    """Single-video noise prediction; ``z_tau`` is (L, C, H, W)."""
    z_tau = np.asarray(z_tau, dtype=np.float64)
    if z_tau.ndim != 4:
        raise ShapeError(f"expected an (L, C, H, W) video, got {z_tau.shape}")
    out = forward_batch([tau], z_tau[None], [cond], params, cfg)
    return out.reshape(out.shape[1:])


class Denoiser:
    """Config, denoiser parameters and caption encoder bundled together."""

    def __init__(self, cfg: DenoiserConfig, params: Dict[str, Tensor], encoder: TextEncoder):
        self.cfg = cfg
        self.params = params
        self.encoder = encoder

    @classmethod
    def init(cls, cfg: DenoiserConfig, vocab, rng, max_tokens: int = 16, zero_head: bool = True) -> "Denoiser":
        encoder = TextEncoder.init(vocab, cfg.dim, max_tokens, rng.child("text"))
        return cls(cfg, init_params(cfg, rng.child("denoiser"), zero_head=zero_head), encoder)

    def parameters(self) -> "OrderedDict[str, Tensor]":
        out = OrderedDict(self.params)
        out.update(self.encoder.parameters())
        return out

    def __call__(self, taus, z_tau, conds) -> Tensor:
        return forward_batch(taus, z_tau, conds, self.params, self.cfg)

    def loss(self, taus, z_tau, conds, eps) -> Tensor:
        return mse(self(taus, z_tau, conds), eps)
