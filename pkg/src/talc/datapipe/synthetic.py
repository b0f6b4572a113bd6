"""Moving-shape videos with exact ground-truth scripts.

A video is a sequence of scenes. In each scene one filled shape moves one
pixel per frame in a fixed direction over a flat background. Scripts follow
the grammar ``"a {color} {shape} moves {direction}"`` (``"stays still"`` for
the motionless case), so the caption of every scene is known exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Tuple

import numpy as np

from ..conditioning import MultiSceneScript
from ..errors import SpecError

SHAPES = ("square", "circle", "triangle")
MOTIONS = ("left", "right", "up", "down", "still")
FOREGROUND = {
    "red": (1.0, -1.0, -1.0),
    "green": (-1.0, 1.0, -1.0),
    "blue": (-1.0, -1.0, 1.0),
    "yellow": (1.0, 1.0, -1.0),
}
BACKGROUND = {
    "black": (-0.8, -0.8, -0.8),
    "gray": (0.0, 0.0, 0.0),
    "white": (0.8, 0.8, 0.8),
    "purple": (0.1, -0.7, 0.5),
}
_STEP = {"left": (-1, 0), "right": (1, 0), "up": (0, -1), "down": (0, 1), "still": (0, 0)}


@dataclass(frozen=True)
class SceneSpec:
    shape: str
    color: str
    motion: str
    # top-left (x, y) of the shape at the scene's first frame; None continues
    # from where the previous scene ended (clamped so the scene fits)
    start: Optional[Tuple[int, int]] = None

    def caption(self) -> str:
        if self.motion == "still":
            return f"a {self.color} {self.shape} stays still"
        return f"a {self.color} {self.shape} moves {self.motion}"


@dataclass(frozen=True)
class SyntheticSpec:
    scenes: Tuple[SceneSpec, ...]
    background: str = "gray"
    frames_per_scene: int = 8
    size: int = 16
    shape_size: int = 5
    # optional per-scene background override, used for scene-cut fixtures
    scene_backgrounds: Optional[Tuple[str, ...]] = None
    id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "scenes", tuple(self.scenes))
        if not self.scenes:
            raise SpecError("spec needs at least one scene")
        for sc in self.scenes:
            if sc.shape not in SHAPES:
                raise SpecError(f"unknown shape {sc.shape!r}")
            if sc.color not in FOREGROUND:
                raise SpecError(f"unknown color {sc.color!r}")
            if sc.motion not in MOTIONS:
                raise SpecError(f"unknown motion {sc.motion!r}")
        if self.background not in BACKGROUND:
            raise SpecError(f"unknown background {self.background!r}")
        if self.scene_backgrounds is not None:
            if len(self.scene_backgrounds) != len(self.scenes):
                raise SpecError("scene_backgrounds must give one color per scene")
            for b in self.scene_backgrounds:
                if b not in BACKGROUND:
                    raise SpecError(f"unknown background {b!r}")
        if self.frames_per_scene < 1 or self.shape_size < 1 or self.shape_size > self.size:
            raise SpecError("invalid frame or shape size")

    @property
    def travel(self) -> int:
        return self.frames_per_scene - 1

    def scene_background(self, j: int) -> str:
        return self.scene_backgrounds[j] if self.scene_backgrounds else self.background

    def script(self) -> MultiSceneScript:
        return MultiSceneScript(tuple(s.caption() for s in self.scenes), "synthetic", self.id)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "background": self.background,
            "frames_per_scene": self.frames_per_scene,
            "size": self.size,
            "shape_size": self.shape_size,
            "scene_backgrounds": list(self.scene_backgrounds) if self.scene_backgrounds else None,
            "scenes": [
                {"shape": s.shape, "color": s.color, "motion": s.motion,
                 "start": list(s.start) if s.start is not None else None}
                for s in self.scenes
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        scenes = tuple(
            SceneSpec(s["shape"], s["color"], s["motion"], tuple(s["start"]) if s.get("start") else None)
            for s in d["scenes"]
        )
        sb = d.get("scene_backgrounds")
        return cls(scenes, d.get("background", "gray"), d.get("frames_per_scene", 8), d.get("size", 16),
                   d.get("shape_size", 5), tuple(sb) if sb else None, d.get("id", ""))


def shape_mask(shape: str, size: int) -> np.ndarray:
    """Boolean size x size stencil of a shape."""
    yy, xx = np.mgrid[0:size, 0:size]
    if shape == "square":
        return np.ones((size, size), dtype=bool)
    if shape == "circle":
        c = (size - 1) / 2.0
        return (yy - c) ** 2 + (xx - c) ** 2 <= (size / 2.0) ** 2 - 0.25 * size
    if shape == "triangle":
        mid = (size - 1) / 2.0
        half = (yy // 2).astype(float)
        return np.abs(xx - mid) <= half
    raise SpecError(f"unknown shape {shape!r}")


def _feasible(motion: str, travel: int, limit: int):
    """Inclusive (xmin, xmax, ymin, ymax) for a start position given the motion."""
    dx, dy = _STEP[motion]
    xmin, xmax = (travel, limit) if dx < 0 else (0, limit - travel if dx > 0 else limit)
    ymin, ymax = (travel, limit) if dy < 0 else (0, limit - travel if dy > 0 else limit)
    return xmin, xmax, ymin, ymax


def trajectory(spec: SyntheticSpec, rng=None):
    """Per-scene lists of top-left positions, one per frame."""
    limit = spec.size - spec.shape_size
    travel = spec.travel
    out, prev_end = [], None
    for j, sc in enumerate(spec.scenes):
        xmin, xmax, ymin, ymax = _feasible(sc.motion, travel, limit)
        if xmin > xmax or ymin > ymax:
            raise SpecError(f"scene {j}: a {travel}-pixel {sc.motion} move does not fit in {spec.size}px")
        if sc.start is not None:
            x0, y0 = sc.start
            if not (xmin <= x0 <= xmax and ymin <= y0 <= ymax):
                raise SpecError(f"scene {j}: trajectory from {sc.start} leaves the frame")
        elif prev_end is not None:
            x0 = min(max(prev_end[0], xmin), xmax)
            y0 = min(max(prev_end[1], ymin), ymax)
        elif rng is not None:
            x0 = int(rng.integers(xmin, xmax + 1))
            y0 = int(rng.integers(ymin, ymax + 1))
        else:
            x0, y0 = (xmin + xmax) // 2, (ymin + ymax) // 2
        dx, dy = _STEP[sc.motion]
        pos = [(x0 + dx * f, y0 + dy * f) for f in range(spec.frames_per_scene)]
        out.append(pos)
        prev_end = pos[-1]
    return out


def generate_synthetic(spec: SyntheticSpec, rng=None):
    """Render ``spec``. Returns an (L, 3, H, W) float array in [-1, 1] and its script."""
    traj = trajectory(spec, rng)
    F, S, k = spec.frames_per_scene, spec.size, spec.shape_size
    video = np.empty((F * len(spec.scenes), 3, S, S))
    for j, (sc, positions) in enumerate(zip(spec.scenes, traj)):
        bg = np.asarray(BACKGROUND[spec.scene_background(j)])
        fg = np.asarray(FOREGROUND[sc.color])
        stencil = shape_mask(sc.shape, k)
        for f, (x, y) in enumerate(positions):
            frame = np.empty((3, S, S))
            frame[:] = bg[:, None, None]
            region = frame[:, y:y + k, x:x + k]
            region[:, stencil] = fg[:, None]
            video[j * F + f] = frame
    return video, spec.script()


def random_spec(rng, n_scenes: int, frames_per_scene: int = 8, size: int = 16, shape_size: int = 5,
                distinct_motions: bool = True, id: str = "") -> SyntheticSpec:
    """One entity (shape and color fixed) over ``n_scenes`` scenes on one background."""
    shape = SHAPES[int(rng.integers(len(SHAPES)))]
    color = list(FOREGROUND)[int(rng.integers(len(FOREGROUND)))]
    background = list(BACKGROUND)[int(rng.integers(len(BACKGROUND)))]
    if distinct_motions:
        order = rng.permutation(len(MOTIONS))[:n_scenes]
        motions = [MOTIONS[int(i)] for i in order]
    else:
        motions = [MOTIONS[int(rng.integers(len(MOTIONS)))] for _ in range(n_scenes)]
    limit = size - shape_size
    travel = frames_per_scene - 1
    xmin, xmax, ymin, ymax = _feasible(motions[0], travel, limit)
    if xmin > xmax or ymin > ymax:
        raise SpecError("frames_per_scene too long for the frame size")
    start = (int(rng.integers(xmin, xmax + 1)), int(rng.integers(ymin, ymax + 1)))
    scenes = [SceneSpec(shape, color, m) for m in motions]
    scenes[0] = replace(scenes[0], start=start)
    return SyntheticSpec(tuple(scenes), background, frames_per_scene, size, shape_size, id=id)


def grammar_vocabulary_texts():
    """Every caption the grammar can produce (for building a vocabulary)."""
    return [SceneSpec(s, c, m).caption() for s in SHAPES for c in FOREGROUND for m in MOTIONS]
