"""Shot decoding, deterministic frame sampling, sharpness and padded crops.

Frames are ``(H, W, 3)`` uint8 RGB arrays. Frame indices are 1-based
throughout, matching shot/frame notation in the scripts.

Shot layout under a videos directory::

    <videos>/<episode_id>/shot_<k>.mp4
    <videos>/<episode_id>/shot_<k>.webm
    <videos>/<episode_id>/shot_<k>/          # png sequence, sorted by filename
"""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

log = logging.getLogger(__name__)

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])  # ITU-R BT.601
VIDEO_EXTS = (".mp4", ".webm")


class IngestError(RuntimeError):
    def __init__(self, shot_key: tuple[str, int], message: str):
        self.shot_key = shot_key
        super().__init__(f"{shot_key[0]}/shot_{shot_key[1]}: {message}")


class CropError(ValueError):
    pass


def fingerprint(image: np.ndarray) -> str:
    """Content hash of an image buffer (shape + bytes)."""
    h = hashlib.sha256()
    h.update(str(image.shape).encode())
    h.update(np.ascontiguousarray(image).tobytes())
    return h.hexdigest()[:32]


@dataclass
class VideoSource:
    """Decoded frames of one shot. Frames are held in memory and never mutated."""

    episode_id: str
    shot_index: int
    frames: list[np.ndarray]

    def __post_init__(self):
        if not self.frames:
            raise IngestError(self.key, "no frames")
        for f in self.frames:
            f.setflags(write=False)

    @property
    def key(self) -> tuple[str, int]:
        return (self.episode_id, self.shot_index)

    @property
    def num_frames(self) -> int:
        return len(self.frames)

    @property
    def resolution(self) -> tuple[int, int]:
        h, w = self.frames[0].shape[:2]
        return w, h

    def frame(self, index: int) -> np.ndarray:
        if not 1 <= index <= len(self.frames):
            raise IndexError(f"frame {index} outside 1..{len(self.frames)}")
        return self.frames[index - 1]


@dataclass(frozen=True)
class FrameSample:
    index: int
    image: np.ndarray
    sharpness: float


def _read_png_dir(path: Path) -> list[np.ndarray]:
    frames = []
    for p in sorted(path.glob("*.png")):
        bgr = cv2.imread(str(p), cv2.IMREAD_COLOR)
        if bgr is None:
            raise ValueError(f"unreadable frame {p.name}")
        frames.append(cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB))
    return frames


def _read_video(path: Path) -> list[np.ndarray]:
    cap = cv2.VideoCapture(str(path))
    frames = []
    try:
        while True:
            ok, bgr = cap.read()
            if not ok:
                break
            frames.append(cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB))
    finally:
        cap.release()
    return frames


def shot_path(videos_dir: str | Path, episode_id: str, shot_index: int) -> Path | None:
    base = Path(videos_dir) / episode_id
    seq = base / f"shot_{shot_index}"
    if seq.is_dir():
        return seq
    for ext in VIDEO_EXTS:
        p = base / f"shot_{shot_index}{ext}"
        if p.is_file():
            return p
    return None


def open_shot(videos_dir: str | Path, episode_id: str, shot_index: int) -> VideoSource:
    key = (episode_id, shot_index)
    path = shot_path(videos_dir, episode_id, shot_index)
    if path is None:
        raise IngestError(key, "no video found")
    try:
        frames = _read_png_dir(path) if path.is_dir() else _read_video(path)
    except Exception as exc:  # decoder errors carry no useful type
        raise IngestError(key, f"decode failed: {exc}") from exc
    if not frames:
        raise IngestError(key, f"no decodable frames in {path.name}")
    return VideoSource(episode_id, shot_index, frames)


def write_png_sequence(frames: list[np.ndarray], directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, f in enumerate(frames, start=1):
        cv2.imwrite(str(directory / f"frame_{i:04d}.png"), cv2.cvtColor(f, cv2.COLOR_RGB2BGR))


def even_indices(num_frames: int, n: int) -> list[int]:
    """1-based indices floor(1 + (j-1)(F-1)/(n-1)) for j = 1..n."""
    if n < 1 or num_frames < 1:
        raise ValueError("need n >= 1 and at least one frame")
    if n == 1:
        return [1]
    # integer floor division keeps this exact
    return [1 + (j * (num_frames - 1)) // (n - 1) for j in range(n)]


def luminance(image: np.ndarray) -> np.ndarray:
    return image[..., :3].astype(np.float64) @ LUMA_WEIGHTS


def sharpness(image: np.ndarray) -> float:
    """Population variance of the 4-neighbour Laplacian of luminance (interior pixels)."""
    y = luminance(image)
    if y.shape[0] < 3 or y.shape[1] < 3:
        return 0.0
    lap = (y[:-2, 1:-1] + y[2:, 1:-1] + y[1:-1, :-2] + y[1:-1, 2:] - 4.0 * y[1:-1, 1:-1])
    return float(lap.var())


def sample_evenly(source: VideoSource, n: int) -> list[FrameSample]:
    return [FrameSample(i, source.frame(i), sharpness(source.frame(i)))
            for i in even_indices(source.num_frames, n)]


def padded_box(box: tuple[float, float, float, float], width: int, height: int,
               padding: float = 0.10) -> tuple[int, int, int, int]:
    """Expand xyxy box by ``padding`` of its size on each side, clamp, snap to pixels."""
    x1, y1, x2, y2 = box
    bw, bh = x2 - x1, y2 - y1
    if bw <= 0 or bh <= 0:
        raise CropError(f"degenerate box {box}")
    px, py = bw * padding, bh * padding
    nx1 = max(0, math.floor(x1 - px))
    ny1 = max(0, math.floor(y1 - py))
    nx2 = min(width, math.ceil(x2 + px))
    ny2 = min(height, math.ceil(y2 + py))
    if nx2 <= nx1 or ny2 <= ny1:
        raise CropError(f"box {box} lies outside the frame")
    return nx1, ny1, nx2, ny2


def crop_with_padding(image: np.ndarray, box: tuple[float, float, float, float],
                      padding: float = 0.10, size: int = 224) -> np.ndarray:
    h, w = image.shape[:2]
    x1, y1, x2, y2 = padded_box(box, w, h, padding)
    region = np.ascontiguousarray(image[y1:y2, x1:x2])
    return cv2.resize(region, (size, size), interpolation=cv2.INTER_LINEAR)


def area_pct(box: tuple[float, float, float, float], width: int, height: int) -> float:
    x1, y1, x2, y2 = box
    return 100.0 * max(0.0, x2 - x1) * max(0.0, y2 - y1) / (width * height)


def sharpest_frames(source: VideoSource, k: int) -> list[FrameSample]:
    """Top-k frames by sharpness; ties go to the earlier frame."""
    samples = [FrameSample(i, source.frame(i), sharpness(source.frame(i)))
               for i in range(1, source.num_frames + 1)]
    samples.sort(key=lambda s: (-s.sharpness, s.index))
    return samples[:k]
