"""Deterministic image-analysis judge for synthetic moving-shape videos.

Every category is scored on the three-level {1, 0.5, 0} scale. A scene that
disagrees with the majority of scenes (or is internally unstable) counts as
deviating; no deviation scores 1, a single deviation among three or more
scenes scores 0.5, anything else 0.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from ..conditioning import MultiSceneScript, allocate_frames
from ..datapipe.synthetic import BACKGROUND, FOREGROUND, SyntheticSpec
from ..errors import UsageError

LEVELS = (0.0, 0.5, 1.0)
_BG_NAMES = list(BACKGROUND)
_BG = np.array([BACKGROUND[k] for k in _BG_NAMES])
_FG_NAMES = list(FOREGROUND)
_FG = np.array([FOREGROUND[k] for k in _FG_NAMES])

COLOR_TOL = 0.45
FOREGROUND_DIST = 0.7
MIN_BLOB = 3
MOVE_MIN = 2.5


@dataclass(frozen=True)
class EvalScore:
    entity: Optional[float]
    background: float
    text_adherence: float
    judge: str = "oracle"

    def __post_init__(self):
        for name in ("entity", "background", "text_adherence"):
            v = getattr(self, name)
            if v is None and name == "entity":
                continue
            if v not in LEVELS:
                raise ValueError(f"{name}={v!r} is not on the {{0, 0.5, 1}} scale")

    @property
    def visual_consistency(self) -> float:
        vals = [v for v in (self.entity, self.background) if v is not None]
        return sum(vals) / len(vals)


def three_level(labels: Sequence) -> float:
    """Score a per-scene label list; ``None`` marks an unstable scene."""
    stable = [l for l in labels if l is not None]
    if not stable:
        return 0.0
    counts = Counter(stable)
    top = max(counts.values())
    ref = next(l for l in labels if l is not None and counts[l] == top)
    deviating = sum(1 for l in labels if l != ref)
    if deviating == 0:
        return 1.0
    if deviating == 1 and len(labels) >= 3:
        return 0.5
    return 0.0


def _nearest(colors: np.ndarray, palette: np.ndarray, tol: float) -> np.ndarray:
    """Index of the nearest palette entry per color, -1 beyond ``tol``."""
    d = np.linalg.norm(colors[:, None, :] - palette[None, :, :], axis=2)
    idx = d.argmin(axis=1)
    idx[d[np.arange(len(idx)), idx] > tol] = -1
    return idx


def frame_background(frame: np.ndarray):
    """(label or None, background RGB estimate) from the 1-pixel border ring."""
    _, H, W = frame.shape
    ring = np.concatenate([frame[:, 0, :], frame[:, H - 1, :], frame[:, 1:H - 1, 0], frame[:, 1:H - 1, W - 1]], axis=1).T
    idx = _nearest(ring, _BG, COLOR_TOL)
    counts = Counter(int(i) for i in idx if i >= 0)
    if counts:
        label, c = counts.most_common(1)[0]
        if c >= 0.5 * len(ring):
            return _BG_NAMES[label], _BG[label]
    return None, np.median(ring, axis=0)


def shape_from_mask(mask: np.ndarray) -> str:
    ys, xs = np.nonzero(mask)
    box = (ys.max() - ys.min() + 1) * (xs.max() - xs.min() + 1)
    fill = len(ys) / box
    if fill > 0.92:
        return "square"
    if fill > 0.68:
        return "circle"
    return "triangle"


def frame_entity(frame: np.ndarray, bg_rgb: np.ndarray):
    """(color label, shape label, centroid (x, y)) of the foreground blob, or None."""
    px = frame.reshape(3, -1).T
    fg = np.linalg.norm(px - bg_rgb[None, :], axis=1) > FOREGROUND_DIST
    if fg.sum() < MIN_BLOB:
        return None
    mask = fg.reshape(frame.shape[1:])
    idx = _nearest(px[fg].mean(axis=0, keepdims=True), _FG, 2 * COLOR_TOL)[0]
    color = _FG_NAMES[idx] if idx >= 0 else None
    ys, xs = np.nonzero(mask)
    return color, shape_from_mask(mask), (float(xs.mean()), float(ys.mean()))


def classify_motion(centroids: List[Optional[tuple]]) -> Optional[str]:
    """Direction of the least-squares centroid trajectory over one scene."""
    t = np.array([i for i, c in enumerate(centroids) if c is not None], dtype=np.float64)
    if len(t) < max(2, (len(centroids) + 1) // 2):
        return None
    xy = np.array([c for c in centroids if c is not None])
    span = len(centroids) - 1
    A = np.stack([t, np.ones_like(t)], axis=1)
    (sx, _), (sy, _) = np.linalg.lstsq(A, xy, rcond=None)[0].T
    dx, dy = sx * span, sy * span
    if max(abs(dx), abs(dy)) < MOVE_MIN:
        return "still"
    if abs(dx) >= abs(dy):
        return "right" if dx > 0 else "left"
    return "down" if dy > 0 else "up"


def _mode_label(labels, share):
    counts = Counter(l for l in labels if l is not None)
    if not counts:
        return None
    label, c = counts.most_common(1)[0]
    return label if c >= share * len(labels) else None


def analyse(video: np.ndarray, n_scenes: int):
    """Per-scene background labels, entity labels and motion classes."""
    plan = allocate_frames(video.shape[0], n_scenes)
    bgs, ents, motions = [], [], []
    for a, b in plan.segments:
        frame_bg, frame_ent, cents = [], [], []
        for f in range(a, b):
            label, rgb = frame_background(video[f])
            frame_bg.append(label)
            e = frame_entity(video[f], rgb)
            frame_ent.append((e[0], e[1]) if e is not None and e[0] is not None else None)
            cents.append(e[2] if e is not None else None)
        bgs.append(_mode_label(frame_bg, 0.75))
        ents.append(_mode_label(frame_ent, 0.5))
        motions.append(classify_motion(cents))
    return bgs, ents, motions


def oracle_score(video: np.ndarray, script: MultiSceneScript, spec: SyntheticSpec) -> EvalScore:
    if script.scenario != "synthetic" or spec is None:
        raise UsageError("the oracle judge only scores synthetic videos; use the external judge")
    if script.n != len(spec.scenes):
        raise UsageError("script and spec disagree on the number of scenes")
    bgs, ents, motions = analyse(np.asarray(video), script.n)
    wanted = [s.motion for s in spec.scenes]
    hits = sum(1 for got, want in zip(motions, wanted) if got == want)
    if hits == script.n:
        ta = 1.0
    elif hits * 2 >= script.n:
        ta = 0.5
    else:
        ta = 0.0
    return EvalScore(entity=three_level(ents), background=three_level(bgs), text_adherence=ta, judge="oracle")
