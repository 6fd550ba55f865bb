"""Arithmetic in the step-2 truncated tensor algebra T2(R^d) and the group G2(R^d).

A group element is stored as (level1, level2) with the scalar part fixed at 1;
a tensor element carries an explicit scalar. All operations are pure functions
of immutable inputs and safe to call concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Formula of the homogeneous norm used everywhere in place of the (non-computable)
# Carnot-Caratheodory norm; recorded in output metadata so ratios are comparable
# across runs.
NORM_CONVENTION = "max(|level1|_2, sqrt(2*|antisym(level2)|_F))"


def _as_vector(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size < 1:
        raise ValueError(f"expected a 1-d vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("non-finite entries in level-1 data")
    return v


def _as_matrix(m, d: int) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.shape != (d, d):
        raise ValueError(f"expected a {d}x{d} matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("non-finite entries in level-2 data")
    return m


@dataclass(frozen=True)
class TensorElement:
    """Element of T2(R^d): scalar + level-1 vector + level-2 matrix."""

    scalar: float
    level1: np.ndarray
    level2: np.ndarray

    def __post_init__(self):
        v = _as_vector(self.level1)
        object.__setattr__(self, "level1", v)
        object.__setattr__(self, "level2", _as_matrix(self.level2, v.size))
        object.__setattr__(self, "scalar", float(self.scalar))

    @property
    def dim(self) -> int:
        return self.level1.size


@dataclass(frozen=True)
class GroupElement:
    """Point of G2(R^d); the scalar part is implicitly 1."""

    level1: np.ndarray
    level2: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        v = _as_vector(self.level1)
        object.__setattr__(self, "level1", v)
        m = np.zeros((v.size, v.size)) if self.level2 is None else self.level2
        object.__setattr__(self, "level2", _as_matrix(m, v.size))

    @property
    def dim(self) -> int:
        return self.level1.size


def identity_element(d: int) -> GroupElement:
    return GroupElement(np.zeros(d), np.zeros((d, d)))


def group_mul(a: GroupElement, b: GroupElement) -> GroupElement:
    """Truncated tensor product a*b (realizes Chen's relation on increments)."""
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    level1 = a.level1 + b.level1
    level2 = a.level2 + b.level2 + np.outer(a.level1, b.level1)
    return GroupElement(level1, level2)


def group_inv(g: GroupElement) -> GroupElement:
    # (1 + v + m)^(-1) = 1 - v - m + v (x) v at truncation level 2
    return GroupElement(-g.level1, -g.level2 + np.outer(g.level1, g.level1))


def group_exp(v) -> GroupElement:
    """exp of a level-1 Lie element: exp(v) = (v, v(x)v / 2)."""
    v = _as_vector(v)
    return GroupElement(v, 0.5 * np.outer(v, v))


def group_exp_tensor(t: TensorElement) -> GroupElement:
    """exp of a tensor with zero scalar part: level2 + v(x)v / 2 on top of level1."""
    if t.scalar != 0.0:
        raise ValueError("exp is only taken of tensors with zero scalar part")
    return GroupElement(t.level1, t.level2 + 0.5 * np.outer(t.level1, t.level1))


def group_log(g: GroupElement) -> TensorElement:
    """log in T2: (v, m) -> (v, m - v(x)v / 2), scalar part 0."""
    return TensorElement(0.0, g.level1, g.level2 - 0.5 * np.outer(g.level1, g.level1))


def scale_tensor(t: TensorElement, s: float) -> TensorElement:
    return TensorElement(s * t.scalar, s * t.level1, s * t.level2)


def dilate(g: GroupElement, lam: float) -> GroupElement:
    """Group dilation: level1 -> lam*level1, level2 -> lam^2*level2."""
    return GroupElement(lam * g.level1, lam * lam * g.level2)


def homogeneous_norm(g: GroupElement) -> float:
    """Homogeneous norm equivalent to the CC norm (see NORM_CONVENTION)."""
    antisym = 0.5 * (g.level2 - g.level2.T)
    n1 = float(np.linalg.norm(g.level1))
    n2 = float(np.sqrt(2.0 * np.linalg.norm(antisym)))
    return max(n1, n2)


def group_distance(a: GroupElement, b: GroupElement) -> float:
    """Left-invariant homogeneous distance: norm of a^{-1} b."""
    return homogeneous_norm(group_mul(group_inv(a), b))


def geometric_defect(g: GroupElement) -> float:
    """Max-abs violation of the shuffle identity level2 + level2^T = level1 (x) level1."""
    resid = g.level2 + g.level2.T - np.outer(g.level1, g.level1)
    return float(np.max(np.abs(resid))) if resid.size else 0.0
