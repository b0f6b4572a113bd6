"""JSON-lines dataset manifest pairing video scene ranges with captions."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from ..conditioning import MAX_SCENES, MultiSceneScript
from ..errors import UsageError

PROVENANCE = ("synthetic", "captioned")


@dataclass(frozen=True)
class SceneRange:
    start_frame: int
    end_frame: int
    caption: str


@dataclass(frozen=True)
class ManifestRecord:
    video: str
    scenes: tuple
    provenance: str = "synthetic"
    caption: Optional[str] = None
    id: str = ""
    spec: Optional[dict] = None

    def __post_init__(self):
        object.__setattr__(self, "scenes", tuple(self.scenes))
        if not 1 <= len(self.scenes) <= MAX_SCENES:
            raise UsageError(f"record {self.id!r}: 1..{MAX_SCENES} scenes required, got {len(self.scenes)}")
        if self.provenance not in PROVENANCE:
            raise UsageError(f"record {self.id!r}: unknown provenance {self.provenance!r}")
        expect = 0
        for sc in self.scenes:
            if sc.start_frame != expect or sc.end_frame <= sc.start_frame:
                raise UsageError(f"record {self.id!r}: scene ranges must partition a prefix of the video")
            expect = sc.end_frame

    def script(self) -> MultiSceneScript:
        scenario = "synthetic" if self.provenance == "synthetic" else "S3"
        return MultiSceneScript(tuple(s.caption for s in self.scenes), scenario, self.id)

    def to_dict(self) -> dict:
        d = {
            "id": self.id,
            "video": self.video,
            "caption": self.caption,
            "provenance": self.provenance,
            "scenes": [{"start_frame": s.start_frame, "end_frame": s.end_frame, "caption": s.caption}
                       for s in self.scenes],
        }
        if self.spec is not None:
            d["spec"] = self.spec
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ManifestRecord":
        scenes = tuple(SceneRange(int(s["start_frame"]), int(s["end_frame"]), s["caption"]) for s in d["scenes"])
        return cls(d["video"], scenes, d.get("provenance", "synthetic"), d.get("caption"), d.get("id", ""), d.get("spec"))


@dataclass
class DatasetManifest:
    records: List[ManifestRecord] = field(default_factory=list)
    root: Optional[Path] = None

    def __len__(self):
        return len(self.records)

    def resolve(self, record: ManifestRecord) -> Path:
        p = Path(record.video)
        return p if p.is_absolute() or self.root is None else self.root / p

    def write(self, path):
        """Atomic: readers see the old file or the complete new one."""
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            for r in self.records:
                fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)

    @classmethod
    def read(cls, path, strict: bool = False):
        """Parse a manifest. Returns (manifest, number of skipped bad lines)."""
        path = Path(path)
        records, skipped = [], 0
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                try:
                    records.append(ManifestRecord.from_dict(json.loads(line)))
                except (ValueError, KeyError, TypeError):
                    if strict:
                        raise
                    skipped += 1
        return cls(records, path.parent), skipped


def resample_scenes(video: np.ndarray, record: ManifestRecord, frames_per_scene: int) -> np.ndarray:
    """Evenly pick ``frames_per_scene`` frames inside every scene and concatenate."""
    parts = []
    for sc in record.scenes:
        n = sc.end_frame - sc.start_frame
        if frames_per_scene == 1:
            idx = [sc.start_frame + (n - 1) // 2]
        else:
            idx = [sc.start_frame + (k * (n - 1)) // (frames_per_scene - 1) for k in range(frames_per_scene)]
        parts.append(video[idx])
    return np.concatenate(parts)
