"""Multi-scene scripts, frame allocation and per-frame caption plans.

Two plan modes exist. ``talc`` conditions frame segment j on scene j's
caption only. ``merge_captions`` joins every scene into one caption and
repeats it over all frames. The third generation mode, ``merge_videos``, is a
sampler concern (independent per-scene chains) and needs no plan of its own.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, List, Sequence, Tuple

from .errors import UsageError
from .textenc import CaptionEmbedding, FrameConditioning, TextEncoder, repeat_conditioning

SCENARIOS = ("S1", "S2", "S3", "synthetic")
PLAN_MODES = ("talc", "merge_captions")
MAX_SCENES = 4
MERGE_SEPARATOR = " "


@dataclass(frozen=True)
class MultiSceneScript:
    scenes: Tuple[str, ...]
    scenario: str = "synthetic"
    id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "scenes", tuple(self.scenes))
        if not 1 <= len(self.scenes) <= MAX_SCENES:
            raise UsageError(f"a script holds 1..{MAX_SCENES} scenes, got {len(self.scenes)}")
        if any(not s.strip() for s in self.scenes):
            raise UsageError("scene captions must be non-empty")
        if self.scenario not in SCENARIOS:
            raise UsageError(f"unknown scenario {self.scenario!r}")

    @property
    def n(self) -> int:
        return len(self.scenes)

    def merged_caption(self) -> str:
        return MERGE_SEPARATOR.join(self.scenes)

    def to_json(self) -> str:
        return json.dumps({"id": self.id, "scenario": self.scenario, "scenes": list(self.scenes)})

    @classmethod
    def from_dict(cls, d: dict) -> "MultiSceneScript":
        return cls(scenes=tuple(d["scenes"]), scenario=d.get("scenario", "synthetic"), id=d.get("id", ""))


def read_scripts(path) -> List[MultiSceneScript]:
    with open(path, encoding="utf-8") as fh:
        return [MultiSceneScript.from_dict(json.loads(line)) for line in fh if line.strip()]


def write_scripts(path, scripts: Iterable[MultiSceneScript]):
    with open(path, "w", encoding="utf-8") as fh:
        for s in scripts:
            fh.write(s.to_json() + "\n")


def builtin_scripts() -> List[MultiSceneScript]:
    text = resources.files("talc").joinpath("assets/benchmark.jsonl").read_text(encoding="utf-8")
    return [MultiSceneScript.from_dict(json.loads(line)) for line in text.splitlines() if line.strip()]


@dataclass(frozen=True)
class FramePlan:
    segments: Tuple[Tuple[int, int], ...]
    total_frames: int

    def scene_of(self, frame: int) -> int:
        for j, (a, b) in enumerate(self.segments):
            if a <= frame < b:
                return j
        raise IndexError(frame)

    def lengths(self) -> List[int]:
        return [b - a for a, b in self.segments]


def allocate_frames(L: int, n: int) -> FramePlan:
    """Split L frames into n ordered segments; the first L mod n get one extra."""
    if n < 1:
        raise UsageError("need at least one scene")
    if L < n:
        raise UsageError(f"fewer frames than scenes ({L} < {n})")
    base, extra = divmod(L, n)
    segs, start = [], 0
    for j in range(n):
        end = start + base + (1 if j < extra else 0)
        segs.append((start, end))
        start = end
    return FramePlan(tuple(segs), L)


@dataclass(frozen=True, eq=False)
class ConditioningPlan:
    mode: str
    frame_conditioning: FrameConditioning
    frame_plan: FramePlan
    embeddings: Tuple[CaptionEmbedding, ...] = field(default=())

    @property
    def total_frames(self) -> int:
        return len(self.frame_conditioning)


def build_plan(script: MultiSceneScript, L: int, mode: str, encoder: TextEncoder) -> ConditioningPlan:
    if mode not in PLAN_MODES:
        raise UsageError(f"unknown plan mode {mode!r}")
    frame_plan = allocate_frames(L, script.n)
    if mode == "merge_captions":
        emb = encoder.encode(script.merged_caption())
        return ConditioningPlan(mode, repeat_conditioning(emb, L), frame_plan, (emb,))
    embs = tuple(encoder.encode(text) for text in script.scenes)
    per_frame = []
    for emb, (a, b) in zip(embs, frame_plan.segments):
        per_frame.extend([emb] * (b - a))
    return ConditioningPlan(mode, FrameConditioning(tuple(per_frame)), frame_plan, embs)


def null_plan(plan: ConditioningPlan, encoder: TextEncoder, null_emb: CaptionEmbedding = None) -> ConditioningPlan:
    """Same frame structure with every frame pointing at the NULL caption."""
    emb = null_emb if null_emb is not None else encoder.null()
    return ConditioningPlan(plan.mode, repeat_conditioning(emb, plan.total_frames), plan.frame_plan, (emb,))


def is_null_plan(plan: ConditioningPlan) -> bool:
    return all(e.text == "" for e in plan.embeddings)
