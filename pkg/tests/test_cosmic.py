import numpy as np
import pytest

from cubesat_ipu.services.cosmic import crop, detect_clusters, histogram, otsu_threshold
from oracles import flood_fill_clusters, otsu_brute


def test_otsu_matches_exhaustive_search_on_random_histograms():
    rng = np.random.default_rng(11)
    for k in range(100):
        if k % 3 == 0:
            hist = np.zeros(256, int)
            hist[rng.integers(0, 256, size=rng.integers(1, 6))] = rng.integers(1, 50, size=1)
        else:
            hist = rng.integers(0, 40, size=256) * (rng.random(256) < rng.uniform(0.05, 1.0))
            if hist.sum() == 0:
                hist[0] = 1
        got = otsu_threshold(hist)
        assert got.threshold == otsu_brute([int(v) for v in hist]), k


def test_two_spikes_pick_the_smallest_maximiser():
    hist = np.zeros(256, int)
    hist[0] = hist[255] = 50
    assert otsu_threshold(hist) == (0, False)


def test_constant_image_is_degenerate():
    img = np.full((16, 16), 37, np.uint8)
    assert otsu_threshold(histogram(img)) == (0, True)
    det = detect_clusters(img)
    assert det.degenerate


def test_histogram_validation():
    with pytest.raises(ValueError):
        otsu_threshold([0] * 256)
    with pytest.raises(ValueError):
        otsu_threshold([1] * 10)
    with pytest.raises(ValueError):
        histogram(np.zeros((4, 4), np.uint16))


def _as_tuples(det):
    return [(c.pixel_count, c.bbox, c.peak_intensity) for c in det.clusters]


def test_clusters_match_flood_fill_on_random_images():
    rng = np.random.default_rng(5)
    for k in range(100):
        h, w = rng.integers(1, 65, size=2)
        img = (rng.random((h, w)) < rng.uniform(0.05, 0.6)) * rng.integers(0, 256, size=(h, w))
        img = img.astype(np.uint8)
        thr = int(rng.integers(0, 200))
        det = detect_clusters(img, thr, timestamp=0.0)
        assert _as_tuples(det) == flood_fill_clusters((img > thr).tolist(), img.tolist()), k


def test_all_dark_image_has_no_clusters():
    det = detect_clusters(np.zeros((32, 32), np.uint8), 10)
    assert det.clusters == []


def test_diagonal_streak_is_not_4_connected():
    img = np.zeros((8, 8), np.uint8)
    for i in range(5):
        img[i + 1, i + 2] = 200
    det = detect_clusters(img, 50)
    assert len(det.clusters) == 5
    assert all(c.pixel_count == 1 for c in det.clusters)


def test_two_squares_with_crops():
    img = np.full((20, 20), 3, np.uint8)
    img[2:5, 2:5] = 180
    img[12:15, 10:13] = 240
    img[13, 11] = 250
    det = detect_clusters(img)
    assert det.threshold >= 3 and not det.degenerate
    assert _as_tuples(det) == [(9, (2, 2, 5, 5), 180), (9, (12, 10, 15, 13), 250)]
    patch = crop(img, det.clusters[1])
    assert patch.shape == (3, 3) and patch.max() == 250


def test_bad_inputs():
    with pytest.raises(ValueError):
        detect_clusters(np.zeros((4, 4, 3), np.uint8))
    with pytest.raises(ValueError):
        detect_clusters(np.zeros((4, 4), np.uint8), 300)
