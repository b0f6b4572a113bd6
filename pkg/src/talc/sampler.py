"""Multi-scene generation: time-aligned captions, merged captions, merged videos."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .conditioning import ConditioningPlan, MultiSceneScript, build_plan, null_plan
from .denoiser import Denoiser, forward_batch
from .errors import ConfigError
from .numerics import Rng, no_grad
from .schedule import NoiseSchedule, ancestral_step, respace

SAMPLE_MODES = ("talc", "merge_captions", "merge_videos")


@dataclass(frozen=True)
class SampleConfig:
    mode: str = "talc"
    frames_per_scene: int = 16
    steps: int = 100
    guidance: float = 12.0
    seed: int = 0

    def __post_init__(self):
        if self.mode not in SAMPLE_MODES:
            raise ConfigError(f"unknown sampling mode {self.mode!r}")
        if self.frames_per_scene < 1 or self.steps < 1 or self.guidance < 0:
            raise ConfigError("frames_per_scene and steps must be >= 1, guidance >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


def scene_seed(seed: int, j: int) -> int:
    """Seed of scene ``j``'s independent chain in merge-videos mode."""
    return int(seed) ^ int(j)


def guided_eps(tau: int, z_tau: np.ndarray, plan: ConditioningPlan, model: Denoiser, w: float,
               null: Optional[ConditioningPlan] = None) -> np.ndarray:
    """Classifier-free guidance: eps_null + w * (eps_cond - eps_null)."""
    null = null if null is not None else null_plan(plan, model.encoder)
    with no_grad():
        both = forward_batch([tau, tau], np.stack([z_tau, z_tau]),
                             [plan.frame_conditioning, null.frame_conditioning], model.params, model.cfg)
    eps_cond, eps_null = both.data[0], both.data[1]
    return eps_null + w * (eps_cond - eps_null)


def reverse_chain(plan: ConditioningPlan, model: Denoiser, schedule: NoiseSchedule, steps: int,
                  guidance: float, seed: int) -> np.ndarray:
    """Ancestral sampling of one video under ``plan``; clean estimates are clamped to [-1, 1]."""
    cfg = model.cfg
    L = plan.total_frames
    if L > cfg.frames:
        raise ConfigError(f"{L} frames exceed the checkpoint's temporal capacity of {cfg.frames}")
    sub = respace(schedule, steps)
    rng = Rng(seed).child("sample")
    null = null_plan(plan, model.encoder)
    z = rng.normal((L, cfg.channels, cfg.height, cfg.width))
    for k in range(sub.num_steps, 0, -1):
        tau = int(sub.timesteps[k - 1])
        eps = guided_eps(tau, z, plan, model, guidance, null)
        z = ancestral_step(z, eps, k, sub, rng, clip=1.0)
    return np.clip(z, -1.0, 1.0)


def generate(script: MultiSceneScript, model: Denoiser, schedule: NoiseSchedule, cfg: SampleConfig) -> np.ndarray:
    """Generate an (L, C, H, W) video for ``script`` in the configured mode."""
    fps = cfg.frames_per_scene
    if cfg.mode == "merge_videos":
        parts = []
        for j, caption in enumerate(script.scenes):
            single = MultiSceneScript((caption,), script.scenario, f"{script.id}#{j}")
            plan = build_plan(single, fps, "talc", model.encoder)
            parts.append(reverse_chain(plan, model, schedule, cfg.steps, cfg.guidance, scene_seed(cfg.seed, j)))
        return np.concatenate(parts)
    plan = build_plan(script, script.n * fps, cfg.mode, model.encoder)
    return reverse_chain(plan, model, schedule, cfg.steps, cfg.guidance, cfg.seed)
