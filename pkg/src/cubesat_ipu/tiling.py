"""Split a camera frame into 224x224 patches and classify them in batches.

A producer thread cuts and preprocesses tiles into a bounded queue while
the calling thread drains batches into the backend.
"""

from __future__ import annotations

import json
import queue
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .backend import NUM_CLASSES, TILE, BackendFault, ClassifierBackend, softmax

FULL_IMAGE_PATCHES = 400
_EXTRAPOLATION = {1: 400, 100: 4, 400: 1}


@dataclass(frozen=True)
class PatchGrid:
    width_px: int
    height_px: int
    tile_px: int
    cols: int
    rows: int
    discarded_right_px: int
    discarded_bottom_px: int

    @property
    def n_patches(self) -> int:
        return self.rows * self.cols

    def indices(self) -> list[tuple[int, int]]:
        return [(r, c) for r in range(self.rows) for c in range(self.cols)]


@dataclass
class Tile:
    index: tuple[int, int]
    pixels: np.ndarray
    float_pixels: np.ndarray | None = None


@dataclass
class InferenceRunReport:
    grid: PatchGrid
    batch_size: int
    per_patch_logits: np.ndarray  # (rows*cols, classes), row-major patch order
    per_batch_latency_ms: list[float] = field(default_factory=list)
    total_latency_ms: float = 0.0
    patches_inferred: int = 0
    valid: bool = True
    error: str | None = None

    def logits_for(self, row: int, col: int) -> np.ndarray:
        return self.per_patch_logits[row * self.grid.cols + col]

    def to_json(self) -> dict:
        return {
            "rows": self.grid.rows,
            "cols": self.grid.cols,
            "batch_size": self.batch_size,
            "per_patch_logits": self.per_patch_logits.tolist(),
            "per_batch_latency_ms": self.per_batch_latency_ms,
            "total_latency_ms": self.total_latency_ms,
            "patches_inferred": self.patches_inferred,
            "valid": self.valid,
            "error": self.error,
        }


def make_patch_grid(width: int, height: int, tile: int = TILE) -> PatchGrid:
    if width < tile or height < tile:
        raise ValueError(f"frame {width}x{height} is smaller than one {tile}px tile")
    cols, rows = width // tile, height // tile
    return PatchGrid(width, height, tile, cols, rows, width - cols * tile, height - rows * tile)


def _as_frame(frame) -> np.ndarray:
    frame = np.asarray(frame)
    if frame.dtype != np.uint8 or frame.ndim != 3 or frame.shape[2] != 3:
        raise ValueError("frame must be a (height, width, 3) uint8 array")
    return frame


def extract_patch(frame: np.ndarray, row: int, col: int, tile: int = TILE) -> Tile:
    frame = _as_frame(frame)
    grid = make_patch_grid(frame.shape[1], frame.shape[0], tile)
    if not (0 <= row < grid.rows and 0 <= col < grid.cols):
        raise IndexError(f"patch ({row}, {col}) outside {grid.rows}x{grid.cols} grid")
    # one contiguous copy of tile*3 bytes per image row
    y, x = row * tile, col * tile
    out = np.empty((tile, tile, 3), np.uint8)
    out[...] = frame[y:y + tile, x:x + tile]
    return Tile((row, col), out)


def scale_to_unit(tile: Tile | np.ndarray) -> np.ndarray:
    """Map 8-bit values v to v/256 so every result lies in [0, 1)."""
    px = tile.pixels if isinstance(tile, Tile) else tile
    px = np.asarray(px)
    if px.dtype != np.uint8:
        raise ValueError("expected an 8-bit tile")
    return px.astype(np.float32) / np.float32(256.0)


def reassemble(tiles: Iterable[Tile], grid: PatchGrid) -> np.ndarray:
    out = np.zeros((grid.rows * grid.tile_px, grid.cols * grid.tile_px, 3), np.uint8)
    t = grid.tile_px
    for tile in tiles:
        r, c = tile.index
        out[r * t:(r + 1) * t, c * t:(c + 1) * t] = tile.pixels
    return out


_DONE = object()


def run_inference(
    frame: np.ndarray,
    backend: ClassifierBackend,
    batch_size: int = 16,
    queue_capacity: int = 4,
    *,
    clock: Callable[[], float] = time.perf_counter,
    producer_delay: Callable[[], None] | None = None,
    consumer_delay: Callable[[], None] | None = None,
) -> InferenceRunReport:
    """Classify every patch of ``frame``.

    The producer puts whole batches on a queue of ``queue_capacity``
    batches. A short final batch is padded by repeating its last tile and
    the padded outputs are discarded. A backend failure stops the producer
    and returns a report flagged invalid.
    """
    if batch_size < 1 or queue_capacity < 1:
        raise ValueError("batch_size and queue_capacity must be >= 1")
    frame = _as_frame(frame)
    grid = make_patch_grid(frame.shape[1], frame.shape[0])
    order = grid.indices()
    want_float = getattr(backend, "input_precision", "uint8") == "float"
    q: queue.Queue = queue.Queue(maxsize=queue_capacity)
    stop = threading.Event()
    producer_error: list[BaseException] = []

    def put(item):
        while not stop.is_set():
            try:
                q.put(item, timeout=0.05)
                return True
            except queue.Full:
                continue
        return False

    def produce():
        try:
            for start in range(0, len(order), batch_size):
                idx = order[start:start + batch_size]
                n_real = len(idx)
                if n_real < batch_size:
                    idx = idx + [idx[-1]] * (batch_size - n_real)
                if producer_delay is not None:
                    producer_delay()
                tiles = np.stack([extract_patch(frame, r, c).pixels for r, c in idx])
                if want_float:
                    tiles = scale_to_unit(tiles)
                if not put((idx, n_real, tiles)):
                    return
        except BaseException as exc:  # surfaced by the consumer
            producer_error.append(exc)
        finally:
            put(_DONE)

    logits = np.full((grid.n_patches, NUM_CLASSES), np.nan, np.float32)
    report = InferenceRunReport(grid, batch_size, logits)
    t_start = clock()
    worker = threading.Thread(target=produce, name="tile-producer", daemon=True)
    worker.start()
    try:
        while True:
            item = q.get()
            if item is _DONE:
                break
            idx, n_real, tiles = item
            if consumer_delay is not None:
                consumer_delay()
            t0 = clock()
            try:
                out = np.asarray(backend.infer(tiles, idx), np.float32)
            except BackendFault as exc:
                report.valid, report.error = False, str(exc)
                break
            if out.shape != (len(idx), NUM_CLASSES):
                report.valid, report.error = False, f"backend returned shape {out.shape}"
                break
            report.per_batch_latency_ms.append((clock() - t0) * 1000.0)
            for k in range(n_real):
                r, c = idx[k]
                logits[r * grid.cols + c] = out[k]
            report.patches_inferred += n_real
    finally:
        stop.set()
        worker.join()
    if producer_error and report.valid:
        report.valid, report.error = False, f"producer failed: {producer_error[0]!r}"
    report.total_latency_ms = (clock() - t_start) * 1000.0
    return report


def extrapolate_latency(measured_ms: float, patches_measured: int) -> float:
    """Scale a partial-frame latency to a full 400-patch frame."""
    try:
        return measured_ms * _EXTRAPOLATION[patches_measured]
    except KeyError:
        raise ValueError(f"cannot extrapolate from {patches_measured} patches (use 1, 100 or 400)") from None


def select_patches(
    report: InferenceRunReport,
    interest_classes: Iterable[int | str],
    min_confidence: float,
    class_names: Sequence[str] | None = None,
) -> list[tuple[int, int]]:
    """Patch indices worth downlinking, most confident first."""
    if not 0.0 <= min_confidence <= 1.0:
        raise ValueError("min_confidence must be in [0, 1]")
    from .backend import CLASS_NAMES

    names = list(class_names or CLASS_NAMES)
    wanted = {names.index(c) if isinstance(c, str) else int(c) for c in interest_classes}
    probs = softmax(report.per_patch_logits)
    best = probs.argmax(axis=1)
    conf = probs.max(axis=1)
    hits = []
    for k, (r, c) in enumerate(report.grid.indices()):
        if best[k] in wanted and conf[k] >= min_confidence:
            hits.append((-conf[k], r, c))
    hits.sort()
    return [(r, c) for _, r, c in hits]


# -- raw frame files: interleaved RGB8 (or gray8) with a JSON sidecar --

def sidecar_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def write_frame(path: str | Path, frame: np.ndarray) -> None:
    frame = np.ascontiguousarray(frame, np.uint8)
    channels = 1 if frame.ndim == 2 else frame.shape[2]
    Path(path).write_bytes(frame.tobytes())
    header = {"width": frame.shape[1], "height": frame.shape[0], "channels": channels}
    sidecar_path(path).write_text(json.dumps(header))


def read_frame(path: str | Path) -> np.ndarray:
    header = json.loads(sidecar_path(path).read_text())
    w, h, ch = int(header["width"]), int(header["height"]), int(header.get("channels", 3))
    data = Path(path).read_bytes()
    if len(data) != w * h * ch:
        raise ValueError(f"{path}: expected {w * h * ch} bytes, found {len(data)}")
    arr = np.frombuffer(data, np.uint8)
    return arr.reshape(h, w) if ch == 1 else arr.reshape(h, w, ch)
