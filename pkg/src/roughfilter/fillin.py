"""Cadlag-to-continuous machinery: path functions, jump-slot time extension,
continuous representatives, the inverse time change, and the alpha_p/beta_p
metric estimators between jump-filled representatives.

Jumps are opened into fictitious-time slots ordered by decreasing jump size
(ties: earlier jump first); slot k gets width delta * r_k from a summable
sequence. Solutions of canonical RDEs are independent of these choices, which
the rde module's tests exercise.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .lift import RoughPath, rho_p
from .paths import CadlagPath, skorokhod_sigma_p
from .tensor_group import (
    GroupElement,
    group_exp_tensor,
    group_inv,
    group_log,
    group_mul,
    homogeneous_norm,
    scale_tensor,
)


# -- path functions -------------------------------------------------------


@dataclass(frozen=True)
class PathFunction:
    """Interpolation rule phi(a, b)_s with phi_0 = a, phi_1 = b."""

    kind: str  # "log_linear" | "linear" | "tabulated"
    profile: callable = field(default=None)  # type: ignore[assignment]

    def __call__(self, a: GroupElement, b: GroupElement, s: float) -> GroupElement:
        if s <= 0.0:
            return a
        if s >= 1.0:
            return b
        w = s if self.profile is None else float(self.profile(s))
        chi = group_log(group_mul(group_inv(a), b))
        return group_mul(a, group_exp_tensor(scale_tensor(chi, w)))


def log_linear_path_function() -> PathFunction:
    """phi(a,b)_s = a * exp(s * log(a^{-1} b)): the straight chord in
    log-coordinates, geometric for every s."""
    return PathFunction("log_linear")


def linear_path_function() -> PathFunction:
    """Straight chord of the underlying level-1 values. Only admissible for
    jump pairs whose group increment is exp of a vector (zero level-2 log),
    where it coincides with the log-linear rule."""
    return PathFunction("linear")


def tabulated_path_function(s_table, w_table) -> PathFunction:
    """Custom traversal profile: phi(a,b)_s = a * exp(w(s) * log(a^{-1} b))
    with w interpolated from a monotone table, w(0)=0, w(1)=1."""
    s_table = np.asarray(s_table, dtype=float)
    w_table = np.asarray(w_table, dtype=float)
    if s_table.shape != w_table.shape or s_table.ndim != 1 or len(s_table) < 2:
        raise ValueError("profile tables must be equal-length 1-d arrays")
    if s_table[0] != 0.0 or s_table[-1] != 1.0 or w_table[0] != 0.0 or w_table[-1] != 1.0:
        raise ValueError("profile must map [0,1] onto [0,1] with fixed endpoints")
    if not (np.all(np.diff(s_table) > 0) and np.all(np.diff(w_table) >= 0)):
        raise ValueError("profile must be monotone")
    return PathFunction("tabulated", lambda s: np.interp(s, s_table, w_table))


# -- admissible pairs and slot geometry -----------------------------------


@dataclass(frozen=True)
class RSeq:
    """Summable positive sequence r_k: explicit prefix, then geometric tail."""

    prefix: tuple = (0.5,)
    ratio: float = 0.5

    def __post_init__(self):
        if not self.prefix or any(r <= 0 for r in self.prefix):
            raise ValueError("r_seq prefix must be non-empty and positive")
        if not 0.0 < self.ratio < 1.0:
            raise ValueError("geometric tail ratio must lie in (0, 1) for summability")

    @staticmethod
    def geometric(base: float) -> "RSeq":
        """r_k = base^{-k}."""
        if base <= 1.0:
            raise ValueError("base must exceed 1")
        return RSeq((1.0 / base,), 1.0 / base)

    def term(self, k: int) -> float:
        """k-th term, 1-based."""
        if k < 1:
            raise ValueError("terms are 1-based")
        if k <= len(self.prefix):
            return float(self.prefix[k - 1])
        return float(self.prefix[-1] * self.ratio ** (k - len(self.prefix)))


@dataclass(frozen=True)
class AdmissiblePair:
    """A cadlag rough path together with its fill-in rule."""

    rough: RoughPath
    phi: PathFunction = field(default_factory=log_linear_path_function)
    r_seq: RSeq = field(default_factory=RSeq)
    delta: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.delta <= 1.0:
            raise ValueError("delta must lie in (0, 1]")
        if self.phi.kind == "linear":
            for i in np.nonzero(self.rough.jump_flags)[0]:
                chi = group_log(self.rough.jump_increment(int(i)))
                scale = 1.0 + float(np.dot(chi.level1, chi.level1))
                if np.max(np.abs(chi.level2)) > 1e-10 * scale:
                    raise ValueError(
                        "linear path function is inadmissible: jump log has a "
                        "level-2 part"
                    )


def ordered_jumps(pair: AdmissiblePair):
    """Jump indices ordered by decreasing jump size, earlier time first on
    ties; returns (indices_in_rank_order, sizes_in_rank_order)."""
    X = pair.rough
    idx = np.nonzero(X.jump_flags)[0]
    sizes = np.array([homogeneous_norm(X.jump_increment(int(i))) for i in idx])
    order = sorted(range(len(idx)), key=lambda k: (-sizes[k], X.times[idx[k]]))
    return idx[order], sizes[order]


@dataclass(frozen=True)
class TimeExtension:
    """The increasing cadlag map tau(t) = t + sum_{t_k <= t} delta*r_k."""

    T: float
    jump_times: np.ndarray  # in time order
    widths: np.ndarray  # slot widths, aligned with jump_times

    @property
    def r_total(self) -> float:
        return float(np.sum(self.widths))

    @property
    def T_ext(self) -> float:
        return self.T + self.r_total

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        offs = np.concatenate([[0.0], np.cumsum(self.widths)])
        k = np.searchsorted(self.jump_times, t, side="right")
        out = t + offs[k]
        return float(out) if out.ndim == 0 else out

    def slots(self):
        """Extended-time slot intervals [tau(t_k-), tau(t_k)] in time order."""
        offs = np.concatenate([[0.0], np.cumsum(self.widths)])
        return [
            (float(t + offs[j]), float(t + offs[j + 1]))
            for j, t in enumerate(self.jump_times)
        ]


# Relative floor on slot widths: geometric r-sequences underflow the float
# resolution of the extended time axis around rank 50, which would collapse
# representative grid points for paths with very many jumps.
WIDTH_FLOOR = 1e-10


def time_extension(pair: AdmissiblePair):
    """Slot layout for a pair: (tau, jump_slots)."""
    X = pair.rough
    idx_rank, _ = ordered_jumps(pair)
    floor = WIDTH_FLOOR * max(X.T, 1.0)
    widths_by_rank = np.array(
        [max(pair.delta * pair.r_seq.term(k + 1), floor) for k in range(len(idx_rank))]
    )
    order = np.argsort(idx_rank)  # back to time order
    ext = TimeExtension(X.T, X.times[idx_rank[order]], widths_by_rank[order])
    return ext, ext.slots()


# -- continuous representative --------------------------------------------


@dataclass(frozen=True)
class Representative:
    """Continuous representative on [0, T] with its bookkeeping: where the
    original sample times landed and which segments are fictitious slots."""

    rough: RoughPath
    pair: AdmissiblePair
    extension: TimeExtension
    orig_indices: np.ndarray  # rep grid index of each original grid time
    orig_times: np.ndarray  # original time attached to every rep grid point
    slot_segments: tuple  # (start_idx, end_idx, original_jump_index) per jump

    @property
    def scale(self) -> float:
        return self.extension.T_ext / self.extension.T if self.extension.T > 0 else 1.0


def build_representative(pair: AdmissiblePair, slot_steps: int = 8) -> Representative:
    """Open jumps into phi-filled slots, then rescale [0, T+r] back to [0, T]."""
    if slot_steps < 1:
        raise ValueError("slot_steps must be >= 1")
    X = pair.rough
    ext, _ = time_extension(pair)
    n = len(X.times)
    if not X.has_jumps():
        return Representative(
            RoughPath(X.times, X.level1, X.level2),
            pair, ext, np.arange(n), X.times.copy(), ()
        )

    idx_rank, _ = ordered_jumps(pair)
    width_of_index = {
        int(i): float(ext.widths[j]) for j, i in enumerate(sorted(idx_rank))
    }

    squash = X.T / ext.T_ext
    t_ext, L1, L2, orig_t = [], [], [], []
    orig_indices = np.empty(n, dtype=int)
    slot_segments = []

    def emit(te, l1, l2, to):
        t_ext.append(te)
        L1.append(np.asarray(l1, dtype=float))
        L2.append(np.asarray(l2, dtype=float))
        orig_t.append(to)

    emit(0.0, X.level1[0], X.level2[0], X.times[0])
    orig_indices[0] = 0
    for i in range(1, n):
        ti = float(X.times[i])
        tau_i = float(ext(ti))
        if not X.jump_flags[i]:
            emit(tau_i, X.level1[i], X.level2[i], ti)
            orig_indices[i] = len(t_ext) - 1
            continue
        w = width_of_index[i]
        slot_start = tau_i - w
        emit(slot_start, X.pre_level1[i], X.pre_level2[i], ti)
        start_idx = len(t_ext) - 1
        a = X.pre_point(i)
        b = X.point(i)
        for j in range(1, slot_steps):
            s = j / slot_steps
            g = pair.phi(a, b, s)
            emit(slot_start + s * w, g.level1, g.level2, ti)
        emit(tau_i, X.level1[i], X.level2[i], ti)
        orig_indices[i] = len(t_ext) - 1
        slot_segments.append((start_idx, len(t_ext) - 1, i))

    times = np.asarray(t_ext) * squash
    rough = RoughPath(times, np.asarray(L1), np.asarray(L2))
    return Representative(rough, pair, ext, orig_indices, np.asarray(orig_t),
                          tuple(slot_segments))


def continuous_representative(pair: AdmissiblePair, slot_steps: int = 8) -> RoughPath:
    """The jump-filled continuous rough path x^phi on [0, T]."""
    return build_representative(pair, slot_steps).rough


@dataclass(frozen=True)
class TimeChange:
    """tau_x = tau_r^{-1} o tau: [0, T] -> [0, T]; skips slot interiors."""

    extension: TimeExtension

    def __call__(self, t):
        ext = self.extension
        squash = ext.T / ext.T_ext if ext.T > 0 else 1.0
        out = np.asarray(ext(t), dtype=float) * squash
        return float(out) if out.ndim == 0 else out


def time_change_back(pair: AdmissiblePair) -> TimeChange:
    ext, _ = time_extension(pair)
    return TimeChange(ext)


# -- alpha_p / beta_p ------------------------------------------------------


@dataclass(frozen=True)
class DeltaSweep:
    """Per-delta metric values with the limit estimate (the finest delta)."""

    estimate: float
    per_delta: tuple  # ((delta, value), ...)
    stagnated: bool
    jump_count_mismatch: bool


def _delta_sweep(X: AdmissiblePair, Y: AdmissiblePair, delta_seq, metric,
                 slot_steps: int) -> DeltaSweep:
    deltas = list(delta_seq)
    if not deltas:
        raise ValueError("delta_seq must be non-empty")
    if any(d2 >= d1 for d1, d2 in zip(deltas, deltas[1:])):
        raise ValueError("delta_seq must be strictly decreasing")
    if X.rough.dim != Y.rough.dim:
        raise ValueError("dimension mismatch between pairs")
    values = []
    for d in deltas:
        rx = build_representative(replace(X, delta=d), slot_steps)
        ry = build_representative(replace(Y, delta=d), slot_steps)
        values.append((float(d), float(metric(rx.rough, ry.rough))))
    vs = [v for _, v in values]
    if len(vs) >= 3:
        d0 = abs(vs[1] - vs[0])
        d1 = abs(vs[-1] - vs[-2])
        stagnated = d1 <= max(1e-12, d0)
    else:
        stagnated = len(vs) < 2 or abs(vs[-1] - vs[-2]) <= 1e-10
    mismatch = int(np.sum(X.rough.jump_flags)) != int(np.sum(Y.rough.jump_flags))
    return DeltaSweep(vs[-1], tuple(values), stagnated, mismatch)


def beta_p(X: AdmissiblePair, Y: AdmissiblePair, p: float,
           delta_seq=(1.0, 0.5, 0.25, 0.125), slot_steps: int = 8) -> DeltaSweep:
    """rho_p between delta-scaled continuous representatives, swept over
    delta; the estimate is the finest-delta value. When the two pairs carry
    different jump counts the slots are rank-aligned (absent ranks are
    zero-width no-ops) and the mismatch is flagged."""
    return _delta_sweep(X, Y, delta_seq, lambda a, b: rho_p(a, b, p), slot_steps)


def alpha_p(X: AdmissiblePair, Y: AdmissiblePair, p: float,
            delta_seq=(1.0, 0.5, 0.25, 0.125), slot_steps: int = 8,
            warp_grid: int = 8) -> DeltaSweep:
    """Like beta_p but with the Skorokhod sigma_p metric on the level-1
    representatives (reported with the warp_grid used)."""

    def metric(a: RoughPath, b: RoughPath) -> float:
        pa = CadlagPath(a.times, a.level1, None, "linear")
        pb = CadlagPath(b.times, b.level1, None, "linear")
        return skorokhod_sigma_p(pa, pb, p, warp_grid)

    return _delta_sweep(X, Y, delta_seq, metric, slot_steps)
