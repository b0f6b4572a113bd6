"""Per-scene captions from a multimodal chat model, and the make-dataset pipeline."""
from __future__ import annotations

import logging
import re
from pathlib import Path
from typing import Callable, List, Optional, Sequence

import numpy as np

from ..errors import ParseError, UsageError
from ..remote import ClientConfig, chat
from ..videoio import read_video
from .manifest import DatasetManifest, ManifestRecord, SceneRange
from .scenes import DEFAULT_MIN_LEN, DEFAULT_THRESHOLD, build_caption_prompt, detect_scenes, middle_frames

log = logging.getLogger(__name__)

# "1. text", "1) text", "Image 1: text", "Scene 1 - text", "**1.** text"
_NUMBERED = re.compile(r"^\W*(?:image|scene|frame|caption)?\s*(\d+)\s*[.):\-]\**\s*(.+?)\s*$", re.IGNORECASE)


def parse_captions(reply: str, expected: int) -> List[str]:
    """One caption per frame, in order. Numbered lines win over bare lines."""
    lines = [l.strip() for l in reply.splitlines() if l.strip()]
    numbered = [m for m in (_NUMBERED.match(l) for l in lines) if m]
    if numbered:
        nums = [int(m.group(1)) for m in numbered]
        if nums != list(range(1, len(nums) + 1)):
            raise ParseError(f"caption numbering {nums} is not 1..{len(nums)}", reply)
        caps = [m.group(2).strip().strip('"').strip() for m in numbered]
    else:
        caps = [l.strip('"').strip() for l in lines]
    caps = [c for c in caps if c]
    if len(caps) != expected:
        raise ParseError(f"expected {expected} captions, got {len(caps)}", reply)
    return caps


def caption_scenes(frames: Sequence[np.ndarray], common_caption: str, cfg: ClientConfig,
                   sleep=None) -> List[str]:
    """Ask the configured model for one caption per representative frame."""
    if len(frames) == 0:
        raise UsageError("no frames to caption")
    kwargs = {"sleep": sleep} if sleep is not None else {}
    reply = chat(build_caption_prompt(common_caption), frames, cfg, **kwargs)
    return parse_captions(reply, len(frames))


def discover_videos(directory) -> List[Path]:
    """TALCVID1 files (``*.talcvid``) and PPM frame directories, sorted by name."""
    d = Path(directory)
    if not d.is_dir():
        raise UsageError(f"{directory}: not a directory")
    found = [p for p in d.iterdir() if (p.is_file() and p.suffix == ".talcvid")
             or (p.is_dir() and any(p.glob("*.ppm")))]
    return sorted(found, key=lambda p: p.name)


def common_caption_for(video_path: Path) -> str:
    """Source caption from a ``<name>.txt`` sidecar; empty when absent."""
    side = video_path.with_name(video_path.stem + ".txt")
    return side.read_text(encoding="utf-8").strip() if side.exists() else ""


def make_dataset(directory, manifest_path, captioner: Callable[[List[np.ndarray], str], List[str]],
                 threshold: float = DEFAULT_THRESHOLD, min_len: int = DEFAULT_MIN_LEN,
                 progress: Optional[Callable[[str, int], None]] = None) -> DatasetManifest:
    """Scene-cut, caption and index every video under ``directory``.

    The manifest is written once, atomically, after every video succeeded;
    any failure leaves an existing manifest untouched.
    """
    manifest_path = Path(manifest_path)
    root = manifest_path.parent.resolve()
    records = []
    for path in discover_videos(directory):
        video = read_video(path)
        cuts = detect_scenes(video, threshold, min_len)
        common = common_caption_for(path)
        caps = captioner(middle_frames(video, cuts), common)
        if len(caps) != len(cuts):
            raise ParseError(f"{path.name}: captioner returned {len(caps)} captions for {len(cuts)} scenes",
                             "\n".join(caps))
        scenes = tuple(SceneRange(a, b, c) for (a, b), c in zip(cuts.ranges, caps))
        try:
            rel = str(path.resolve().relative_to(root))
        except ValueError:
            rel = str(path.resolve())
        records.append(ManifestRecord(rel, scenes, "captioned", common, path.stem))
        if progress is not None:
            progress(path.name, len(cuts))
    if not records:
        raise UsageError(f"{directory}: no videos found (expected *.talcvid files or PPM directories)")
    manifest = DatasetManifest(records, root)
    manifest.write(manifest_path)
    return manifest
