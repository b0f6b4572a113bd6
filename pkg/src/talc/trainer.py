"""Denoising-objective training with time-aligned or merged-caption plans."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .checkpoint import save_checkpoint
from .conditioning import PLAN_MODES, MultiSceneScript, build_plan, null_plan
from .denoiser import Denoiser, DenoiserConfig, preconditioning
from .errors import ConfigError, NumericError, UsageError
from .numerics import Rng, Tensor, add, mse, mul
from .schedule import NoiseSchedule, add_noise, make_schedule
from .textenc import Vocabulary

log = logging.getLogger(__name__)


def item_weights(taus: Sequence[int], model_cfg: DenoiserConfig, blend: float) -> np.ndarray:
    """Per-item loss weights (1 - blend) + blend / c_out^2.

    ``blend`` 0 is the plain noise MSE. ``blend`` 1 is an unweighted MSE on the
    preconditioned output F, which puts every timestep on an O(1) footing; in
    clean-video terms it adds ``blend / sigma_data^2`` times the x0 error to
    the noise objective's SNR weighting.
    """
    if blend == 0 or not model_cfg.precondition:
        return np.ones(len(taus))
    c_out = preconditioning(taus, model_cfg)[2]
    return (1.0 - blend) + blend / (c_out * c_out)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 20
    learning_rate: float = 1e-5
    warmup_steps: int = 1000
    max_grad_norm: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 1e-2
    adam_eps: float = 1e-8
    steps: int = 1000
    mode: str = "talc"
    null_dropout: float = 0.1
    seed: int = 0
    frames_per_scene: int = 8
    checkpoint_every: int = 0
    schedule_steps: int = 1000
    beta_min: float = 1e-4
    beta_max: float = 2e-2
    loss_blend: float = 0.0       # 0: plain noise MSE; 1: MSE on the network output F

    def __post_init__(self):
        if not 0 <= self.loss_blend <= 1:
            raise ConfigError("loss_blend must be in [0, 1]")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if not 0 <= self.null_dropout < 1:
            raise ConfigError("null_dropout must be in [0, 1)")
        if self.mode not in PLAN_MODES:
            raise ConfigError(f"training mode must be one of {PLAN_MODES}, got {self.mode!r}")
        if self.batch_size < 1 or self.steps < 0 or self.warmup_steps < 0 or self.max_grad_norm <= 0:
            raise ConfigError("batch_size, steps, warmup_steps and max_grad_norm must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    def flagged_defaults(self) -> Dict[str, str]:
        """Choices the source tables leave open; reported with every run."""
        return {
            "timestep_distribution": "uniform over 1..T",
            "null_dropout": f"{self.null_dropout} (classifier-free guidance training)",
            "schedule": f"linear step variance {self.beta_min}..{self.beta_max}, T={self.schedule_steps}",
            "loss_weighting": f"(1 - {self.loss_blend}) + {self.loss_blend} / c_out^2",
        }


class AdamW:
    """Adaptive moments with decoupled weight decay."""

    def __init__(self, params: Dict[str, Tensor], cfg: TrainConfig):
        self.params = params
        self.cfg = cfg
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self, lr: float):
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1 ** self.t
        bc2 = 1.0 - c.beta2 ** self.t
        for k, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m, v = self.m[k], self.v[k]
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            p.data *= 1.0 - lr * c.weight_decay
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + c.adam_eps)


def learning_rate(cfg: TrainConfig, step: int) -> float:
    """Linear warmup to the peak, then constant. ``step`` is 1-based."""
    if cfg.warmup_steps <= 0:
        return cfg.learning_rate
    return cfg.learning_rate * min(1.0, step / cfg.warmup_steps)


def global_grad_norm(params: Dict[str, Tensor]) -> float:
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float(np.sum(p.grad * p.grad))
    return math.sqrt(total)


def clip_grad_norm(params: Dict[str, Tensor], max_norm: float) -> Tuple[float, float]:
    """Rescale gradients to at most ``max_norm``. Returns (norm before, norm after)."""
    norm = global_grad_norm(params)
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * scale
        return norm, global_grad_norm(params)
    return norm, norm


@dataclass
class TrainState:
    model: Denoiser
    schedule: NoiseSchedule
    optimizer: AdamW
    rng: Rng
    step: int = 0
    history: List[dict] = field(default_factory=list)

    @classmethod
    def create(cls, model: Denoiser, schedule: NoiseSchedule, cfg: TrainConfig, rng: Rng) -> "TrainState":
        return cls(model, schedule, AdamW(model.parameters(), cfg), rng)


@dataclass(frozen=True)
class StepResult:
    loss: float
    grad_norm: float
    clipped_norm: float
    lr: float


def training_step(batch: Sequence[Tuple[np.ndarray, MultiSceneScript]], state: TrainState, cfg: TrainConfig,
                  taus: Optional[Sequence[int]] = None, noise: Optional[Sequence[np.ndarray]] = None) -> StepResult:
    """One optimisation step on ``batch``; ``taus``/``noise`` pin the random draws."""
    if not batch:
        raise UsageError("empty batch")
    model, sched, rng = state.model, state.schedule, state.rng
    params = model.parameters()
    for p in params.values():
        p.grad = None
    null_emb = model.encoder.null()

    groups: Dict[int, list] = {}
    for i, (video, script) in enumerate(batch):
        tau = int(taus[i]) if taus is not None else int(rng.integers(1, sched.num_steps + 1))
        eps = noise[i] if noise is not None else rng.normal(video.shape)
        z_tau = add_noise(video, tau, eps, sched)
        plan = build_plan(script, video.shape[0], cfg.mode, model.encoder)
        if cfg.null_dropout > 0 and rng.random() < cfg.null_dropout:
            plan = null_plan(plan, model.encoder, null_emb)
        groups.setdefault(video.shape[0], []).append((tau, z_tau, plan.frame_conditioning, eps))

    total: Optional[Tensor] = None
    n = len(batch)
    for L in sorted(groups):
        items = groups[L]
        item_taus = [t for t, _, _, _ in items]
        pred = model(item_taus, np.stack([z for _, z, _, _ in items]), [c for _, _, c, _ in items])
        target = np.stack([e for _, _, _, e in items])
        if cfg.loss_blend:
            root_w = np.sqrt(item_weights(item_taus, model.cfg, cfg.loss_blend)).reshape(-1, 1, 1, 1, 1)
            scale = np.ascontiguousarray(np.broadcast_to(root_w, pred.shape))
            pred, target = mul(pred, Tensor(scale)), target * scale
        term = mse(pred, target) * (len(items) / n)
        total = term if total is None else add(total, term)

    loss = total.item()
    if not math.isfinite(loss):
        raise NumericError(f"non-finite loss {loss} at step {state.step + 1} "
                           f"(batch of {n}, frame counts {sorted(groups)})")
    total.backward()
    norm, clipped = clip_grad_norm(params, cfg.max_grad_norm)
    state.step += 1
    lr = learning_rate(cfg, state.step)
    state.optimizer.step(lr)
    result = StepResult(loss, norm, clipped, lr)
    state.history.append({"step": state.step, "loss": loss, "grad_norm": norm, "lr": lr})
    return result


def load_training_items(manifest, frames_per_scene: int, size: Tuple[int, int, int]):
    """Decode manifest videos into (video, script) pairs; unreadable entries are counted and skipped."""
    from .datapipe.manifest import resample_scenes
    from .videoio import read_video

    items, skipped = [], 0
    for rec in manifest.records:
        try:
            video = read_video(manifest.resolve(rec))
            if video.shape[1:] != size:
                raise UsageError(f"{rec.video}: frame shape {video.shape[1:]} != model {size}")
            if rec.scenes[-1].end_frame > video.shape[0]:
                raise UsageError(f"{rec.video}: scene ranges exceed {video.shape[0]} frames")
            items.append((resample_scenes(video, rec, frames_per_scene), rec.script()))
        except (OSError, ValueError) as exc:
            log.warning("skipping manifest entry %s: %s", rec.id or rec.video, exc)
            skipped += 1
    return items, skipped


def write_metrics(path, history: Sequence[dict]):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "loss", "grad_norm", "lr"])
        for h in history:
            w.writerow([h["step"], repr(h["loss"]), repr(h["grad_norm"]), repr(h["lr"])])


def fit(manifest, cfg: TrainConfig, model_cfg: DenoiserConfig = None, out_dir=None,
        max_tokens: int = 16, vocab: Optional[Vocabulary] = None, progress=None):
    """Train a fresh model on ``manifest``. Returns (final checkpoint path or None, state, skipped count).

    Batches are drawn from one scene-count bucket at a time so every forward
    pass sees equal-length videos.
    """
    model_cfg = replace(model_cfg or DenoiserConfig(), schedule_steps=cfg.schedule_steps,
                        beta_min=cfg.beta_min, beta_max=cfg.beta_max)
    if len(manifest) == 0:
        raise UsageError("empty manifest")
    items, skipped = load_training_items(manifest, cfg.frames_per_scene,
                                         (model_cfg.channels, model_cfg.height, model_cfg.width))
    if not items:
        raise UsageError("no readable manifest entries")
    if vocab is None:
        vocab = Vocabulary.build(t for _, s in items for t in s.scenes)
    root = Rng(cfg.seed)
    model = Denoiser.init(model_cfg, vocab, root.child("init"), max_tokens=max_tokens)
    schedule = make_schedule(cfg.schedule_steps, cfg.beta_min, cfg.beta_max)
    state = TrainState.create(model, schedule, cfg, root.child("train"))

    buckets: Dict[int, List[int]] = {}
    for i, (video, _) in enumerate(items):
        buckets.setdefault(video.shape[0], []).append(i)
    keys = sorted(buckets)
    weights = np.array([len(buckets[k]) for k in keys], dtype=np.float64)
    weights /= weights.sum()
    pick = root.child("batches")

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    extra = {"train": cfg.to_dict(), "flagged_defaults": cfg.flagged_defaults()}
    for _ in range(cfg.steps):
        key = keys[int(pick.choice(len(keys), p=weights))]
        pool = buckets[key]
        chosen = pick.choice(len(pool), size=min(cfg.batch_size, len(pool)), replace=len(pool) < cfg.batch_size)
        batch = [items[pool[int(j)]] for j in chosen]
        result = training_step(batch, state, cfg)
        if progress is not None:
            progress(state.step, result)
        if out is not None and cfg.checkpoint_every and state.step % cfg.checkpoint_every == 0:
            save_checkpoint(out / f"step_{state.step:06d}.ckpt", model, schedule, extra)
    final = None
    if out is not None:
        final = out / "final.ckpt"
        save_checkpoint(final, model, schedule, extra)
        write_metrics(out / "metrics.csv", state.history)
    return final, state, skipped
