"""Write synthetic corpora to disk: videos, a manifest and a script list."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

from ..conditioning import MultiSceneScript
from ..numerics import Rng
from ..videoio import write_video
from .manifest import DatasetManifest, ManifestRecord, SceneRange
from .synthetic import SyntheticSpec, generate_synthetic, random_spec

VIDEO_SUFFIX = ".talcvid"


def random_specs(rng: Rng, scene_counts: Sequence[int], per_count: int, prefix: str,
                 frames_per_scene: int = 8, size: int = 16, shape_size: int = 5,
                 distinct_motions: bool = True) -> List[SyntheticSpec]:
    """``per_count`` specs for every scene count; spec k of count n uses child ("spec", n, k)."""
    return [random_spec(rng.child(("spec", n, k)), n, frames_per_scene, size, shape_size, distinct_motions,
                        id=f"{prefix}-n{n}-{k:04d}")
            for n in scene_counts for k in range(per_count)]


def record_for(spec: SyntheticSpec, script: MultiSceneScript, video_rel: str) -> ManifestRecord:
    F = spec.frames_per_scene
    scenes = tuple(SceneRange(j * F, (j + 1) * F, cap) for j, cap in enumerate(script.scenes))
    return ManifestRecord(video_rel, scenes, "synthetic", None, spec.id, spec.to_dict())


def write_corpus(out_dir, specs: Iterable[SyntheticSpec]) -> DatasetManifest:
    """Render every spec to ``videos/<id>.talcvid`` and index it in ``manifest.jsonl``."""
    out = Path(out_dir)
    (out / "videos").mkdir(parents=True, exist_ok=True)
    records, jobs = [], []
    for spec in specs:
        video, script = generate_synthetic(spec)
        rel = f"videos/{spec.id}{VIDEO_SUFFIX}"
        write_video(out / rel, video)
        records.append(record_for(spec, script, rel))
        jobs.append((script, spec))
    manifest = DatasetManifest(records, out)
    manifest.write(out / "manifest.jsonl")
    write_jobs(out / "scripts.jsonl", jobs)
    return manifest


def write_jobs(path, jobs: Iterable[Tuple[MultiSceneScript, Optional[SyntheticSpec]]]):
    """Script list for ``generate``; synthetic scripts carry their spec for oracle scoring."""
    with open(path, "w", encoding="utf-8") as fh:
        for script, spec in jobs:
            d = {"id": script.id, "scenario": script.scenario, "scenes": list(script.scenes)}
            if spec is not None:
                d["spec"] = spec.to_dict()
            fh.write(json.dumps(d, sort_keys=True) + "\n")


def read_jobs(path) -> List[Tuple[MultiSceneScript, Optional[SyntheticSpec]]]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            d = json.loads(line)
            spec = SyntheticSpec.from_dict(d["spec"]) if d.get("spec") else None
            script = MultiSceneScript.from_dict(d)
            if spec is not None and not script.id:
                script = MultiSceneScript(script.scenes, script.scenario, spec.id)
            out.append((script, spec))
    return out
