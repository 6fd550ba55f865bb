import itertools

import numpy as np
import pytest

from roughfilter.paths import (
    CadlagPath,
    Partition,
    d_p,
    merge_difference,
    p_variation,
    p_variation_of_points,
    read_path_csv,
    skorokhod_sigma_p,
    variation_sum,
    visited_points,
    write_path_csv,
)


def brute_force_p_variation(points, p):
    """Exhaustive max over all subsequences keeping both endpoints."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    m = len(pts)
    if m < 2:
        return 0.0
    best = 0.0
    interior = range(1, m - 1)
    for r in range(len(list(interior)) + 1):
        for combo in itertools.combinations(range(1, m - 1), r):
            idx = [0, *combo, m - 1]
            seg = np.diff(pts[idx], axis=0)
            best = max(best, float(np.sum(np.linalg.norm(seg, axis=1) ** p)))
    return best ** (1.0 / p)


def random_path(rng, n, d, with_jumps=False):
    times = np.concatenate([[0.0], np.sort(rng.uniform(0.05, 1.0, n - 2)), [1.0]])
    values = rng.standard_normal((n, d))
    pre = None
    if with_jumps:
        pre = values.copy()
        for i in rng.choice(np.arange(1, n), size=max(1, n // 4), replace=False):
            pre[i] = values[i] + rng.standard_normal(d)
    return CadlagPath(times, values, pre, "linear")


def test_construction_validation():
    with pytest.raises(ValueError):
        CadlagPath([0.0, 0.0], [[1.0], [2.0]])
    with pytest.raises(ValueError):
        CadlagPath([0.0, 1.0], [[1.0], [np.inf]])
    with pytest.raises(ValueError):
        CadlagPath([0.0, 1.0], [[1.0], [2.0]], [[0.0], [2.0]])  # jump at t=0
    with pytest.raises(ValueError):
        CadlagPath([0.0, 1.0], [[1.0], [2.0]], interp="spline")


def test_evaluate_linear_and_left_limits():
    x = CadlagPath([0.0, 1.0, 2.0], [[0.0], [1.0], [3.0]],
                   [[0.0], [0.5], [3.0]], "linear")
    assert x.evaluate(0.5)[0] == pytest.approx(0.25)  # toward the left limit 0.5
    assert x.evaluate(1.0)[0] == 1.0
    assert x.evaluate_left(1.0)[0] == 0.5
    assert x.evaluate(1.5)[0] == pytest.approx(2.0)
    assert x.evaluate_left(0.0)[0] == 0.0
    assert np.array_equal(x.jump_indices, [1])


def test_evaluate_constant_interp():
    x = CadlagPath.rectangular([0.0, 1.0, 2.0], [0.0, 1.0, 3.0])
    assert x.evaluate(0.5)[0] == 0.0
    assert x.evaluate(1.0)[0] == 1.0
    assert x.evaluate_left(1.0)[0] == 0.0
    assert x.evaluate(1.99)[0] == 1.0
    assert x.evaluate_left(2.0)[0] == 1.0


def test_visited_points_interleaves_jumps():
    x = CadlagPath([0.0, 1.0, 2.0], [[0.0], [2.0], [2.5]], [[0.0], [1.0], [2.5]])
    assert np.allclose(visited_points(x), [[0.0], [1.0], [2.0], [2.5]])


def test_p_variation_trivial_cases():
    x = CadlagPath([0.0, 0.5, 1.0], np.ones((3, 2)))
    assert p_variation(x, 2.0) == 0.0
    y = CadlagPath([0.0, 0.5, 1.0], [[0.0], [1.0], [0.0]])
    assert p_variation(y, 1.0) == pytest.approx(2.0, abs=1e-14)


def test_p_variation_rejects_bad_p():
    x = CadlagPath([0.0, 1.0], [[0.0], [1.0]])
    with pytest.raises(ValueError):
        p_variation(x, 0.5)


def test_p_variation_matches_brute_force():
    rng = np.random.default_rng(10)
    for _ in range(40):
        n = rng.integers(3, 11)
        d = int(rng.integers(1, 3))
        x = random_path(rng, int(n), d, with_jumps=bool(rng.integers(0, 2)))
        p = float(rng.uniform(1.0, 3.0))
        pts = visited_points(x)
        assert p_variation(x, p) == pytest.approx(
            brute_force_p_variation(pts, p), abs=1e-12)


def test_p_variation_monotone_in_p():
    rng = np.random.default_rng(11)
    x = random_path(rng, 9, 2, with_jumps=True)
    vals = [p_variation(x, p) for p in (1.0, 1.5, 2.0, 2.5)]
    assert all(a >= b - 1e-12 for a, b in zip(vals, vals[1:]))


def test_p_variation_reparameterization_invariant():
    rng = np.random.default_rng(12)
    values = rng.standard_normal((8, 2))
    t1 = np.linspace(0.0, 1.0, 8)
    t2 = np.concatenate([[0.0], np.sort(rng.uniform(0, 1, 6)), [1.0]])
    a = CadlagPath(t1, values)
    b = CadlagPath(t2, values)
    assert p_variation(a, 2.2) == pytest.approx(p_variation(b, 2.2), abs=1e-14)


def test_partition_and_variation_sum():
    x = CadlagPath([0.0, 0.5, 1.0], [[0.0], [1.0], [0.0]])
    part = Partition([0, 2])
    assert variation_sum(x, part, 1.0) == 0.0
    with pytest.raises(ValueError):
        Partition([1, 2])
    with pytest.raises(ValueError):
        Partition([0, 0, 2])


def test_d_p_degeneracies_and_symmetry():
    rng = np.random.default_rng(13)
    x = random_path(rng, 7, 2, with_jumps=True)
    y = random_path(rng, 6, 2)
    assert d_p(x, x, 2.0) == 0.0
    shifted = CadlagPath(x.times, x.values + 3.0, x.pre_values + 3.0)
    assert d_p(x, shifted, 2.0) < 1e-14
    assert d_p(x, y, 2.0) == pytest.approx(d_p(y, x, 2.0), abs=1e-12)
    with pytest.raises(ValueError):
        d_p(x, random_path(rng, 5, 3), 2.0)


def test_d_p_matches_brute_force_on_merged_grid():
    rng = np.random.default_rng(14)
    for _ in range(20):
        x = random_path(rng, 5, 1, with_jumps=True)
        y = random_path(rng, 5, 1)
        p = float(rng.uniform(1.0, 2.5))
        diff = merge_difference(x, y)
        expected = brute_force_p_variation(visited_points(diff), p)
        assert d_p(x, y, p) == pytest.approx(expected, abs=1e-12)


def test_d_p_triangle_inequality():
    rng = np.random.default_rng(15)
    for _ in range(10):
        x, y, z = (random_path(rng, 6, 2, with_jumps=True) for _ in range(3))
        p = 2.0
        assert d_p(x, z, p) <= d_p(x, y, p) + d_p(y, z, p) + 1e-10


def test_sigma_p_identity_and_grid_one():
    rng = np.random.default_rng(16)
    x = random_path(rng, 8, 2, with_jumps=True)
    assert skorokhod_sigma_p(x, x, 2.0, 4) == 0.0
    y = random_path(rng, 8, 2)
    assert skorokhod_sigma_p(x, y, 2.0, 1) == pytest.approx(d_p(x, y, 2.0), abs=1e-12)


def test_sigma_p_shifted_jump():
    # same unit jump at 0.5 vs 0.5+h: a warp aligns them, so sigma_p ~ h << d_p
    h = 0.05
    x = CadlagPath([0.0, 0.5, 1.0], [[0.0], [1.0], [1.0]], [[0.0], [0.0], [1.0]])
    y = CadlagPath([0.0, 0.5 + h, 1.0], [[0.0], [1.0], [1.0]], [[0.0], [0.0], [1.0]])
    dist = d_p(x, y, 2.0)
    sig = skorokhod_sigma_p(x, y, 2.0, 8)
    assert dist >= 1.0  # unaligned jumps cost a full unit
    assert sig <= 1.3 * h
    assert sig < dist


def test_sigma_p_monotone_in_dyadic_warp_grid():
    rng = np.random.default_rng(17)
    x = random_path(rng, 7, 1, with_jumps=True)
    y = random_path(rng, 7, 1, with_jumps=True)
    vals = [skorokhod_sigma_p(x, y, 2.0, m) for m in (1, 2, 4, 8)]
    assert all(a >= b - 1e-12 for a, b in zip(vals, vals[1:]))


def test_sigma_p_validation():
    x = CadlagPath([0.0, 1.0], [[0.0], [1.0]])
    with pytest.raises(ValueError):
        skorokhod_sigma_p(x, x, 2.0, 0)
    y = CadlagPath([0.0, 2.0], [[0.0], [1.0]])
    with pytest.raises(ValueError):
        skorokhod_sigma_p(x, y, 2.0, 2)


def test_csv_round_trip_exact(tmp_path):
    rng = np.random.default_rng(18)
    x = random_path(rng, 9, 3, with_jumps=True)
    f = tmp_path / "path.csv"
    write_path_csv(x, str(f))
    back = read_path_csv(str(f))
    assert np.array_equal(back.times, x.times)
    assert np.array_equal(back.values, x.values)
    assert np.array_equal(back.pre_values, x.pre_values)

    cont = random_path(rng, 5, 1)
    write_path_csv(cont, str(f))
    header = f.read_text().splitlines()[0]
    assert header == "t,v1"
    back = read_path_csv(str(f))
    assert not back.has_jumps()
