"""Video containers: TALCVID1 binary, PPM frame directories, contact sheets.

TALCVID1 layout: ``b"TALCVID1"``, then u32 L, C, H, W (little-endian), then
float32 pixels in [-1, 1], frame-major (L, C, H, W order).
"""
from __future__ import annotations

import os
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import UsageError

MAGIC = b"TALCVID1"
PPM_INDEX = "index.txt"


def _atomic_write(path, data: bytes):
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def encode_video(video: np.ndarray) -> bytes:
    video = np.asarray(video)
    if video.ndim != 4:
        raise UsageError(f"video must be (L, C, H, W), got {video.shape}")
    px = np.clip(video, -1.0, 1.0).astype("<f4")
    return MAGIC + struct.pack("<4I", *video.shape) + px.tobytes()


def decode_video(blob: bytes) -> np.ndarray:
    if blob[:8] != MAGIC:
        raise UsageError("not a TALCVID1 stream")
    shape = struct.unpack("<4I", blob[8:24])
    n = int(np.prod(shape))
    data = np.frombuffer(blob, dtype="<f4", count=n, offset=24)
    return data.astype(np.float64).reshape(shape)


def write_video(path, video: np.ndarray):
    _atomic_write(path, encode_video(video))


def read_video(path) -> np.ndarray:
    """Load a TALCVID1 file or a PPM frame directory."""
    p = Path(path)
    if p.is_dir():
        return read_ppm_dir(p)
    return decode_video(p.read_bytes())


def to_uint8(frame: np.ndarray) -> np.ndarray:
    """(3, H, W) in [-1, 1] -> (H, W, 3) bytes."""
    return np.round((np.clip(frame, -1, 1) + 1.0) * 127.5).astype(np.uint8).transpose(1, 2, 0)


def from_uint8(img: np.ndarray) -> np.ndarray:
    return img.transpose(2, 0, 1).astype(np.float64) / 127.5 - 1.0


def write_ppm(path, img: np.ndarray):
    h, w, _ = img.shape
    _atomic_write(path, f"P6\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(img).tobytes())


def read_ppm(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            pos = blob.index(b"\n", pos) + 1
            continue
        end = pos
        while not blob[end:end + 1].isspace():
            end += 1
        fields.append(blob[pos:end])
        pos = end
    if fields[0] != b"P6" or fields[3] != b"255":
        raise UsageError(f"{path}: only binary 8-bit PPM is supported")
    w, h = int(fields[1]), int(fields[2])
    pos += 1
    return np.frombuffer(blob, dtype=np.uint8, count=w * h * 3, offset=pos).reshape(h, w, 3)


def encode_png(img: np.ndarray) -> bytes:
    """(H, W, 3) bytes -> minimal truecolor PNG (no filtering)."""
    h, w, _ = img.shape

    def chunk(kind: bytes, data: bytes) -> bytes:
        return struct.pack(">I", len(data)) + kind + data + struct.pack(">I", zlib.crc32(kind + data))

    rows = b"".join(b"\x00" + np.ascontiguousarray(img[y]).tobytes() for y in range(h))
    return (b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0))
            + chunk(b"IDAT", zlib.compress(rows, 9)) + chunk(b"IEND", b""))


def write_ppm_dir(directory, video: np.ndarray):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    names = []
    for i, frame in enumerate(video):
        name = f"frame_{i:04d}.ppm"
        write_ppm(d / name, to_uint8(frame))
        names.append(name)
    (d / PPM_INDEX).write_text("".join(n + "\n" for n in names), encoding="utf-8")


def read_ppm_dir(directory) -> np.ndarray:
    d = Path(directory)
    index = d / PPM_INDEX
    if index.exists():
        names = [n for n in index.read_text(encoding="utf-8").splitlines() if n]
    else:
        names = sorted(p.name for p in d.glob("*.ppm"))
    if not names:
        raise UsageError(f"{directory}: no frames")
    return np.stack([from_uint8(read_ppm(d / n)) for n in names])


def contact_sheet(video: np.ndarray, scale: int = 1, gap: int = 1) -> np.ndarray:
    """Frames side by side, left to right, as one (H, W, 3) byte image."""
    L, _, H, W = video.shape
    sheet = np.full((H * scale, L * (W * scale + gap) - gap, 3), 255, dtype=np.uint8)
    for i, frame in enumerate(video):
        img = to_uint8(frame)
        if scale > 1:
            img = img.repeat(scale, axis=0).repeat(scale, axis=1)
        x = i * (W * scale + gap)
        sheet[:, x:x + W * scale] = img
    return sheet
