"""Level-2 geometric rough paths: Stratonovich and Marcus lifts, the rough
p-variation distance rho_p, and JSON serialization.

A RoughPath stores the running signature from time 0 (level-1 vector and
level-2 matrix per grid time), so Chen's relation holds structurally for grid
increments. Jump times additionally carry the pre-jump running signature.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .paths import CadlagPath, _pvar_sum_dp
from .tensor_group import (
    NORM_CONVENTION,
    GroupElement,
    group_exp_tensor,
    group_log,
    scale_tensor,
)

FORMAT_VERSION = 1


@dataclass(frozen=True)
class RoughPath:
    """Path in G2(R^d) sampled on a grid, as running signatures from time 0."""

    times: np.ndarray
    level1: np.ndarray  # (n, d) running level-1
    level2: np.ndarray  # (n, d, d) running level-2
    jump_flags: np.ndarray = field(default=None)  # type: ignore[assignment]
    pre_level1: np.ndarray = field(default=None)  # type: ignore[assignment]
    pre_level2: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        l1 = np.asarray(self.level1, dtype=float)
        l2 = np.asarray(self.level2, dtype=float)
        n = len(t)
        if l1.ndim != 2 or l1.shape[0] != n:
            raise ValueError("level1 must be (n, d)")
        d = l1.shape[1]
        if l2.shape != (n, d, d):
            raise ValueError("level2 must be (n, d, d)")
        if n < 1 or (n > 1 and not np.all(np.diff(t) > 0)):
            raise ValueError("times must be strictly increasing")
        if np.any(l1[0] != 0.0) or np.any(l2[0] != 0.0):
            raise ValueError("a rough path must start at the group identity")
        flags = self.jump_flags
        flags = np.zeros(n, dtype=bool) if flags is None else np.asarray(flags, dtype=bool)
        if flags.shape != (n,):
            raise ValueError("jump_flags must be (n,)")
        if flags[0]:
            raise ValueError("no jump at the initial time")
        p1 = self.pre_level1
        p2 = self.pre_level2
        p1 = l1.copy() if p1 is None else np.asarray(p1, dtype=float)
        p2 = l2.copy() if p2 is None else np.asarray(p2, dtype=float)
        if p1.shape != l1.shape or p2.shape != l2.shape:
            raise ValueError("pre-level arrays must match level arrays in shape")
        for name, arr in (("times", t), ("level1", l1), ("level2", l2),
                          ("pre_level1", p1), ("pre_level2", p2)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite entries in {name}")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "level1", l1)
        object.__setattr__(self, "level2", l2)
        object.__setattr__(self, "jump_flags", flags)
        object.__setattr__(self, "pre_level1", p1)
        object.__setattr__(self, "pre_level2", p2)

    # -- queries ----------------------------------------------------------

    @property
    def dim(self) -> int:
        return self.level1.shape[1]

    @property
    def T(self) -> float:
        return float(self.times[-1])

    def has_jumps(self) -> bool:
        return bool(np.any(self.jump_flags))

    def point(self, i: int) -> GroupElement:
        return GroupElement(self.level1[i], self.level2[i])

    def pre_point(self, i: int) -> GroupElement:
        return GroupElement(self.pre_level1[i], self.pre_level2[i])

    def increment(self, i: int, j: int) -> GroupElement:
        """Group increment between grid indices i <= j."""
        g1 = self.level1[j] - self.level1[i]
        g2 = self.level2[j] - self.level2[i] - np.outer(self.level1[i], g1)
        return GroupElement(g1, g2)

    def jump_increment(self, i: int) -> GroupElement:
        """Increment across the jump at index i (identity off jumps)."""
        g1 = self.level1[i] - self.pre_level1[i]
        g2 = self.level2[i] - self.pre_level2[i] - np.outer(self.pre_level1[i], g1)
        return GroupElement(g1, g2)

    def segment_increments(self):
        """(g1, g2) arrays of grid-step increments, shapes (n-1, d), (n-1, d, d)."""
        g1 = np.diff(self.level1, axis=0)
        g2 = self.level2[1:] - self.level2[:-1] - self.level1[:-1, :, None] * g1[:, None, :]
        return g1, g2

    # -- evaluation between grid points ----------------------------------

    def running_at(self, t, left: bool = False):
        """Running signature at arbitrary times: stored values on the grid,
        one-parameter-subgroup (log-linear) interpolation inside segments,
        pre-jump values when left=True at flagged times."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        n, d = self.level1.shape
        L1 = np.empty((len(t), d))
        L2 = np.empty((len(t), d, d))
        idx = np.searchsorted(self.times, t, side="right") - 1
        idx = np.clip(idx, 0, n - 1)
        for k, (i, tk) in enumerate(zip(idx, t)):
            if self.times[i] == tk:
                if left:
                    L1[k], L2[k] = self.pre_level1[i], self.pre_level2[i]
                else:
                    L1[k], L2[k] = self.level1[i], self.level2[i]
                continue
            if i >= n - 1:
                L1[k], L2[k] = self.level1[-1], self.level2[-1]
                continue
            theta = (tk - self.times[i]) / (self.times[i + 1] - self.times[i])
            base1, base2 = self.level1[i], self.level2[i]
            g1 = self.pre_level1[i + 1] - base1
            g2 = self.pre_level2[i + 1] - self.level2[i] - np.outer(base1, g1)
            part = group_exp_tensor(scale_tensor(group_log(GroupElement(g1, g2)), theta))
            L1[k] = base1 + part.level1
            L2[k] = base2 + part.level2 + np.outer(base1, part.level1)
        return L1, L2


# -- lift constructors ----------------------------------------------------


def _accumulate_exp_products(vs: np.ndarray):
    """Running signature of the product exp(vs[0]) * exp(vs[1]) * ...; returns
    prefix arrays including the leading identity."""
    m, d = vs.shape
    L1 = np.vstack([np.zeros((1, d)), np.cumsum(vs, axis=0)])
    base = L1[:-1]  # prefix level-1 before each factor
    terms = base[:, :, None] * vs[:, None, :] + 0.5 * vs[:, :, None] * vs[:, None, :]
    L2 = np.concatenate([np.zeros((1, d, d)), np.cumsum(terms, axis=0)], axis=0)
    return L1, L2


def stratonovich_lift(x: CadlagPath) -> RoughPath:
    """Level-2 lift of a continuous sampled path, piecewise-linear between
    samples (each segment contributes exp of its chord)."""
    if x.has_jumps():
        raise ValueError("stratonovich_lift requires a path without jumps")
    deltas = np.diff(x.values, axis=0)
    L1, L2 = _accumulate_exp_products(deltas if len(deltas) else np.zeros((0, x.dim)))
    return RoughPath(x.times, L1, L2)


def marcus_lift(x: CadlagPath) -> RoughPath:
    """Cadlag lift: continuous stretches as in stratonovich_lift, each jump
    contributing exp(x_t - x_{t-}) so the jump log has zero level-2 part."""
    if not x.has_jumps():
        return stratonovich_lift(x.with_interp("linear"))
    n, d = x.values.shape
    chords = x.pre_values[1:] - x.values[:-1]
    jumps = x.values[1:] - x.pre_values[1:]
    vs = np.empty((2 * (n - 1), d))
    vs[0::2] = chords
    vs[1::2] = jumps
    L1, L2 = _accumulate_exp_products(vs)
    post = np.arange(0, 2 * n - 1, 2)  # prefix index after both factors of each step
    pre = np.maximum(post - 1, 0)  # prefix index after the chord, before the jump
    flags = np.concatenate([[False], np.any(jumps != 0.0, axis=1)])
    return RoughPath(x.times, L1[post], L2[post], flags, L1[pre], L2[pre])


def reverse_rough_path(X: RoughPath) -> RoughPath:
    """Time reversal of a continuous rough path on [0, T]."""
    if X.has_jumps():
        raise ValueError("time reversal is only defined here for continuous paths")
    n = len(X.times)
    d = X.dim
    L1 = np.empty((n, d))
    L2 = np.empty((n, d, d))
    end1, end2 = X.level1[-1], X.level2[-1]
    for k in range(n):
        i = n - 1 - k
        g1 = end1 - X.level1[i]
        g2 = end2 - X.level2[i] - np.outer(X.level1[i], g1)
        # group inverse of the increment (i, n-1)
        L1[k] = -g1
        L2[k] = -g2 + np.outer(g1, g1)
    times = X.T - X.times[::-1]
    return RoughPath(times, L1, L2)


# -- consistency checks ---------------------------------------------------


def chen_defect(X: RoughPath, triples=None) -> float:
    """Max violation of increment(i,k) = increment(i,j) o increment(j,k)."""
    n = len(X.times)
    if triples is None:
        triples = [(i, (i + k) // 2, k) for i in range(n) for k in range(i + 2, n)
                   ] if n <= 40 else [(0, j, n - 1) for j in range(1, n - 1)]
    worst = 0.0
    for i, j, k in triples:
        a = X.increment(i, j)
        b = X.increment(j, k)
        c = X.increment(i, k)
        l1 = a.level1 + b.level1
        l2 = a.level2 + b.level2 + np.outer(a.level1, b.level1)
        worst = max(worst, float(np.max(np.abs(l1 - c.level1))),
                    float(np.max(np.abs(l2 - c.level2))))
    return worst


def geometric_defect_max(X: RoughPath) -> float:
    """Max violation of the shuffle identity over all grid points."""
    resid = X.level2 + np.swapaxes(X.level2, 1, 2) \
        - X.level1[:, :, None] * X.level1[:, None, :]
    return float(np.max(np.abs(resid))) if resid.size else 0.0


def marcus_jump_defect(X: RoughPath) -> float:
    """Max level-2 magnitude of log of jump increments (zero for Marcus lifts)."""
    worst = 0.0
    for i in np.nonzero(X.jump_flags)[0]:
        lg = group_log(X.jump_increment(int(i)))
        worst = max(worst, float(np.max(np.abs(lg.level2))))
    return worst


# -- rough p-variation distance -------------------------------------------


def _merged_running(X: RoughPath, Y: RoughPath):
    """Running signatures of X and Y along the interleaved visited sequence of
    the merged grid (left limits inserted before joint jump times)."""
    times = np.union1d(X.times, Y.times)
    jumpy = set(X.times[X.jump_flags]) | set(Y.times[Y.jump_flags])
    tv, is_left = [], []
    for t in times:
        if t in jumpy and t != times[0]:
            tv.append(t)
            is_left.append(True)
        tv.append(t)
        is_left.append(False)
    tv = np.asarray(tv)
    is_left = np.asarray(is_left, dtype=bool)
    outs = []
    for Z in (X, Y):
        L1 = np.empty((len(tv), Z.dim))
        L2 = np.empty((len(tv), Z.dim, Z.dim))
        for flag in (False, True):
            sel = is_left == flag
            if np.any(sel):
                L1[sel], L2[sel] = Z.running_at(tv[sel], left=flag)
        outs.append((L1, L2))
    return tv, outs[0], outs[1]


def rho_p(X: RoughPath, Y: RoughPath, p: float) -> float:
    """Rough p-variation distance: max over levels k=1,2 of the DP-sup of
    (sum |X^k - Y^k|^{p/k})^{k/p} over merged-grid partitions."""
    if not 2.0 <= p < 3.0:
        raise ValueError(f"rho_p requires p in [2, 3), got {p}")
    if X.dim != Y.dim:
        raise ValueError(f"dimension mismatch: {X.dim} vs {Y.dim}")
    if abs(X.T - Y.T) > 1e-12 * max(1.0, X.T):
        raise ValueError("rough paths must share the time horizon")
    _, (A1, A2), (B1, B2) = _merged_running(X, Y)
    m = len(A1)
    if m < 2:
        return 0.0

    diff1 = A1 - B1

    def powdist1(j):
        return np.linalg.norm(diff1[:j] - diff1[j], axis=1) ** p

    lvl1 = _pvar_sum_dp(m, powdist1) ** (1.0 / p)

    q = p / 2.0

    def powdist2(j):
        dx2 = A2[j] - A2[:j] - A1[:j, :, None] * (A1[j] - A1[:j])[:, None, :]
        dy2 = B2[j] - B2[:j] - B1[:j, :, None] * (B1[j] - B1[:j])[:, None, :]
        return np.linalg.norm((dx2 - dy2).reshape(j, -1), axis=1) ** q

    lvl2 = _pvar_sum_dp(m, powdist2) ** (1.0 / q)
    return max(lvl1, lvl2)


# -- JSON serialization ---------------------------------------------------


def rough_path_to_dict(X: RoughPath) -> dict:
    out = {
        "format_version": FORMAT_VERSION,
        "norm": NORM_CONVENTION,
        "dim": X.dim,
        "times": X.times.tolist(),
        "level1": X.level1.tolist(),
        "level2": X.level2.reshape(len(X.times), -1).tolist(),  # row-major
        "jump_flags": X.jump_flags.astype(int).tolist(),
    }
    if X.has_jumps():
        out["pre_level1"] = X.pre_level1.tolist()
        out["pre_level2"] = X.pre_level2.reshape(len(X.times), -1).tolist()
    return out


def rough_path_from_dict(obj: dict) -> RoughPath:
    d = int(obj["dim"])
    n = len(obj["times"])
    level2 = np.asarray(obj["level2"], dtype=float).reshape(n, d, d)
    pre1 = obj.get("pre_level1")
    pre2 = obj.get("pre_level2")
    return RoughPath(
        np.asarray(obj["times"], dtype=float),
        np.asarray(obj["level1"], dtype=float),
        level2,
        np.asarray(obj["jump_flags"], dtype=bool),
        None if pre1 is None else np.asarray(pre1, dtype=float),
        None if pre2 is None else np.asarray(pre2, dtype=float).reshape(n, d, d),
    )


def write_rough_path_json(X: RoughPath, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(rough_path_to_dict(X), fh)


def read_rough_path_json(path: str) -> RoughPath:
    with open(path, encoding="utf-8") as fh:
        return rough_path_from_dict(json.load(fh))
