"""Cosmic-ray hit detection in dark frames: Otsu threshold + 4-connected clusters."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import ndimage

_FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], bool)


class OtsuResult(NamedTuple):
    threshold: int
    degenerate: bool


def histogram(gray: np.ndarray) -> np.ndarray:
    gray = np.asarray(gray)
    if gray.dtype != np.uint8:
        raise ValueError("expected an 8-bit image")
    return np.bincount(gray.ravel(), minlength=256)


def otsu_threshold(hist) -> OtsuResult:
    """Threshold t maximising between-class variance of {<= t} vs {> t}.

    Computed in exact integer arithmetic so ties are real ties; the smallest
    maximiser wins. A histogram with no separable split (zero variance
    everywhere) returns 0 flagged as degenerate.
    """
    counts = [int(c) for c in hist]
    if len(counts) != 256:
        raise ValueError("histogram must have 256 bins")
    if any(c < 0 for c in counts):
        raise ValueError("negative histogram count")
    total = sum(counts)
    if total == 0:
        raise ValueError("empty histogram")
    total_sum = sum(i * c for i, c in enumerate(counts))
    # variance(t) is proportional to (S0*N1 - S1*N0)^2 / (N0*N1); compare as fractions
    best_t, best_num, best_den = 0, 0, 1
    n0 = s0 = 0
    for t in range(256):
        n0 += counts[t]
        s0 += t * counts[t]
        n1 = total - n0
        if n0 == 0 or n1 == 0:
            continue
        num = (s0 * n1 - (total_sum - s0) * n0) ** 2
        den = n0 * n1
        if num * best_den > best_num * den:
            best_t, best_num, best_den = t, num, den
    if best_num == 0:
        return OtsuResult(0, True)
    return OtsuResult(best_t, False)


@dataclass(frozen=True)
class Cluster:
    bbox: tuple[int, int, int, int]  # y0, x0, y1, x1 (half-open)
    pixel_count: int
    peak_intensity: int


@dataclass
class RayDetection:
    threshold: int
    clusters: list[Cluster]
    image_id: str = ""
    timestamp: float = field(default_factory=time.time)
    degenerate: bool = False

    def to_json(self) -> dict:
        return {
            "threshold": self.threshold,
            "image_id": self.image_id,
            "timestamp": self.timestamp,
            "degenerate": self.degenerate,
            "clusters": [{"bbox": list(c.bbox), "pixel_count": c.pixel_count, "peak_intensity": c.peak_intensity}
                         for c in self.clusters],
        }


def detect_clusters(gray: np.ndarray, threshold: int | None = None, image_id: str = "",
                    timestamp: float | None = None) -> RayDetection:
    """Label 4-connected regions of pixels brighter than ``threshold``.

    Without an explicit threshold the Otsu threshold of the image is used.
    Clusters come back largest first, ties ordered by bounding-box origin.
    """
    gray = np.asarray(gray)
    if gray.ndim != 2 or gray.dtype != np.uint8:
        raise ValueError("expected a 2-D uint8 image")
    degenerate = False
    if threshold is None:
        threshold, degenerate = otsu_threshold(histogram(gray))
    if not 0 <= threshold <= 255:
        raise ValueError("threshold must be in [0, 255]")
    labels, n = ndimage.label(gray > threshold, structure=_FOUR_CONNECTED)
    clusters = []
    if n:
        idx = np.arange(1, n + 1)
        sizes = ndimage.sum_labels(np.ones_like(labels), labels, idx)
        peaks = ndimage.maximum(gray, labels, idx)
        for k, sl in enumerate(ndimage.find_objects(labels)):
            ys, xs = sl
            clusters.append(Cluster((ys.start, xs.start, ys.stop, xs.stop), int(sizes[k]), int(peaks[k])))
    clusters.sort(key=lambda c: (-c.pixel_count, c.bbox))
    ts = time.time() if timestamp is None else timestamp
    return RayDetection(int(threshold), clusters, image_id, ts, degenerate)


def crop(gray: np.ndarray, cluster: Cluster) -> np.ndarray:
    y0, x0, y1, x1 = cluster.bbox
    return np.array(gray[y0:y1, x0:x1], copy=True)
