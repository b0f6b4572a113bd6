"""Scene-cut detection, representative frames and the captioning prompt."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from importlib import resources
from typing import List, Tuple

import numpy as np

from ..conditioning import MAX_SCENES
from ..errors import UsageError

DEFAULT_THRESHOLD = 0.3
DEFAULT_MIN_LEN = 4


@dataclass(frozen=True)
class SceneCutResult:
    """Frame indices where scenes begin, plus the end of the used prefix.

    ``end`` equals the video length unless scenes past the fourth were
    discarded, in which case it is the start of the first dropped scene.
    """

    boundaries: Tuple[int, ...]
    end: int

    def __post_init__(self):
        b = tuple(int(x) for x in self.boundaries)
        object.__setattr__(self, "boundaries", b)
        if not b or b[0] != 0:
            raise UsageError("scene boundaries must start at frame 0")
        if any(x >= y for x, y in zip(b, b[1:])) or b[-1] >= self.end:
            raise UsageError(f"scene boundaries {b} must increase strictly and stay below {self.end}")

    @property
    def ranges(self) -> List[Tuple[int, int]]:
        stops = self.boundaries[1:] + (self.end,)
        return list(zip(self.boundaries, stops))

    def __len__(self):
        return len(self.boundaries)

    def to_dict(self) -> dict:
        return {"boundaries": list(self.boundaries), "end": self.end,
                "scenes": [{"start_frame": a, "end_frame": b} for a, b in self.ranges]}


def frame_differences(video: np.ndarray) -> np.ndarray:
    """Mean absolute RGB difference between frame t-1 and t, for t = 1..L-1."""
    video = np.asarray(video, dtype=np.float64)
    if len(video) < 2:
        return np.zeros(0)
    return np.abs(np.diff(video, axis=0)).reshape(len(video) - 1, -1).mean(axis=1)


def detect_scenes(video: np.ndarray, threshold: float = DEFAULT_THRESHOLD,
                  min_len: int = DEFAULT_MIN_LEN, max_scenes: int = MAX_SCENES) -> SceneCutResult:
    """Content-difference shot detector; keeps at most ``max_scenes`` scenes."""
    video = np.asarray(video)
    if video.ndim != 4 or len(video) < 1:
        raise UsageError(f"expected a non-empty (L, C, H, W) video, got shape {video.shape}")
    diffs = frame_differences(video)
    cuts = [0]
    for t in range(1, len(video)):
        if diffs[t - 1] > threshold and t - cuts[-1] >= min_len:
            cuts.append(t)
    end = len(video)
    if len(cuts) > max_scenes:
        end = cuts[max_scenes]
        cuts = cuts[:max_scenes]
    return SceneCutResult(tuple(cuts), end)


def middle_index(start: int, end: int) -> int:
    return (start + end - 1) // 2


def middle_frames(video: np.ndarray, cuts: SceneCutResult) -> List[np.ndarray]:
    """One representative frame per scene: the floor midpoint of its range."""
    return [np.asarray(video[middle_index(a, b)]) for a, b in cuts.ranges]


def caption_template() -> str:
    return resources.files("talc").joinpath("assets/caption_prompt.txt").read_text(encoding="utf-8")


def caption_template_sha256() -> str:
    return hashlib.sha256(caption_template().encode("utf-8")).hexdigest()


def build_caption_prompt(common_caption: str) -> str:
    # plain replace: str.format would choke on braces inside captions
    return caption_template().replace("{caption}", common_caption)
