import math

import numpy as np
import pytest

from battrack.boxcloud import batched_distance_map, compute_boxcloud, compute_offset_boxcloud, pairwise_distance_map
from battrack.geometry import Box7, box_points, local_box_points, rotation_z
from battrack.tensor import ShapeError

from conftest import random_box


def naive_distance_map(ct, cs):
    out = np.zeros((len(ct), len(cs)))
    for i in range(len(ct)):
        for j in range(len(cs)):
            s = 0.0
            for c in range(ct.shape[1]):
                d = ct[i, c] - cs[j, c]
                s += d * d
            out[i, j] = math.sqrt(s)
    return out


def test_center_row_is_half_diagonal():
    row = compute_boxcloud([[0, 0, 0]], Box7(0, 0, 0, 3, 4, 12, 0))[0]
    np.testing.assert_allclose(row[:8], 6.5)
    assert row[8] == 0.0


def test_corner_row():
    b = Box7(0.3, -1, 2, 1.5, 2.5, 1.2, 0.4)
    row = compute_boxcloud(box_points(b)[0:1], b)[0]
    assert row[0] == pytest.approx(0.0, abs=1e-12)
    assert row[7] == pytest.approx(math.sqrt(1.5**2 + 2.5**2 + 1.2**2))


def test_matches_recomputation(rng):
    for _ in range(20):
        b = random_box(rng)
        pts = rng.normal(size=(15, 3)) * 3
        q = box_points(b)
        expect = np.array([[np.linalg.norm(p - qj) for qj in q] for p in pts])
        np.testing.assert_allclose(compute_boxcloud(pts, b), expect, atol=1e-12)


def random_rigid(rng):
    return rotation_z(rng.uniform(-np.pi, np.pi)), rng.normal(size=3) * 5


def test_rigid_invariance_and_offsets(rng):
    for _ in range(20):
        b = random_box(rng)
        pts = rng.normal(size=(10, 3)) * 3
        r, t = random_rigid(rng)
        theta = math.atan2(r[1, 0], r[0, 0])
        moved = Box7(*(r @ b.center + t), *b.size, b.heading + theta)
        pts2 = pts @ r.T + t
        np.testing.assert_allclose(compute_boxcloud(pts2, moved), compute_boxcloud(pts, b), atol=1e-9)
        np.testing.assert_allclose(compute_offset_boxcloud(pts2, moved), compute_offset_boxcloud(pts, b), atol=1e-9)
        norms = np.linalg.norm(compute_offset_boxcloud(pts, b).reshape(-1, 9, 3), axis=2)
        np.testing.assert_allclose(norms, compute_boxcloud(pts, b), atol=1e-9)


def test_offset_center_point():
    b = Box7(1, 2, 3, 2, 4, 6, 0.5)
    off = compute_offset_boxcloud([b.center], b).reshape(9, 3)
    np.testing.assert_allclose(off[:8], -local_box_points(b.size)[:8], atol=1e-12)
    np.testing.assert_allclose(off[8], 0.0, atol=1e-12)


def test_distance_map_hand_cases():
    assert pairwise_distance_map(np.ones((1, 9)), np.ones((1, 9)))[0, 0] == 0.0
    assert pairwise_distance_map(np.ones((1, 9)), np.zeros((1, 9)))[0, 0] == 3.0
    with pytest.raises(ShapeError):
        pairwise_distance_map(np.ones((2, 9)), np.ones((2, 27)))


def test_distance_map_matches_naive_exactly(rng):
    for _ in range(10):
        ct, cs = rng.uniform(0, 5, (8, 9)), rng.uniform(0, 5, (16, 9))
        np.testing.assert_array_equal(pairwise_distance_map(ct, cs), naive_distance_map(ct, cs))


def test_batched_distance_map(rng):
    ct, cs = rng.uniform(0, 5, (3, 5, 27)), rng.uniform(0, 5, (3, 7, 27))
    out = batched_distance_map(ct, cs)
    for i in range(3):
        np.testing.assert_array_equal(out[i], pairwise_distance_map(ct[i], cs[i]))
