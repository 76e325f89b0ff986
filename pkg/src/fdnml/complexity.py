"""Lempel-Ziv (1976) complexity of binarised coupling trajectories.

A trajectory of ``W`` flattened coupling matrices is vectorised row-major into
``n = W * n_channels**2`` values, thresholded at its median, and parsed into
LZ76 phrases.  The complexity index is ``ci = c * log2(n) / n``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import DataError


@dataclass(frozen=True)
class BinarySequence:
    bits: np.ndarray
    threshold_used: float
    degenerate: bool = False

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=np.uint8)
        if bits.ndim != 1 or bits.size < 2:
            raise DataError(f"binary sequence needs at least 2 symbols, got {bits.size}")
        if np.any(bits > 1):
            raise DataError("binary sequence holds symbols other than 0 and 1")
        object.__setattr__(self, "bits", bits)

    @property
    def n(self) -> int:
        return int(self.bits.size)

    @classmethod
    def from_string(cls, text: str) -> "BinarySequence":
        return cls(np.frombuffer(text.encode(), dtype=np.uint8) - ord("0"), float("nan"))

    def __str__(self) -> str:
        return (self.bits + ord("0")).tobytes().decode()


@dataclass(frozen=True)
class ComplexityResult:
    c: int
    ci: float
    n: int


def binarize(values) -> BinarySequence:
    """Threshold at the median with strict ``>``.

    Args:
        values: A :class:`~fdnml.fracnet.CouplingTrajectory` (its valid rows
            are used) or any array, flattened row-major.
    """
    if hasattr(values, "valid_matrices"):
        values = values.valid_matrices()
    x = np.asarray(values, dtype=float).ravel()
    x = x[np.isfinite(x)]
    if x.size < 2:
        raise DataError(f"need at least 2 finite entries to binarise, got {x.size}")
    m = float(np.median(x))
    bits = (x > m).astype(np.uint8)
    return BinarySequence(bits=bits, threshold_used=m, degenerate=bool(np.all(x == x[0])))


_MAX_CODED = 62


class _FirstOccurrence:
    """``first(l)[j]``: earliest start of the length-``l`` word found at ``j``.

    Words of up to ``_MAX_CODED`` bits are packed into integers, so one sort
    per length answers every "does this word occur earlier?" query.
    """

    def __init__(self, bits: np.ndarray):
        self.bits = bits.astype(np.uint64)
        self.codes = np.zeros(bits.size, dtype=np.uint64)
        self.tables: list[np.ndarray] = []

    def first(self, length: int) -> np.ndarray:
        while len(self.tables) < length:
            l = len(self.tables) + 1
            m = self.bits.size - l + 1
            self.codes = (self.codes[:m] << np.uint64(1)) | self.bits[l - 1:]
            _, index, inverse = np.unique(self.codes, return_index=True, return_inverse=True)
            self.tables.append(index[inverse])
        return self.tables[length - 1]


def lz76_phrase_count(bits) -> int:
    """Number of phrases in the LZ76 exhaustive-history parsing.

    A phrase starting at ``i`` is extended while it can be copied from a
    source that starts before ``i`` (the copy may overlap the phrase itself);
    the first symbol that breaks the copy closes the phrase.  A trailing
    phrase that reaches the end of the sequence still counts.
    """
    b = np.asarray(bits, dtype=np.uint8).ravel()
    n = b.size
    s = b.tobytes()
    occ = _FirstOccurrence(b)

    def copyable(i: int, length: int) -> bool:
        if length <= _MAX_CODED:
            return occ.first(length)[i] < i
        return s.find(s[i:i + length], 0, i + length - 1) != -1

    c, i = 0, 0
    while i < n:
        length = 1
        while length <= _MAX_CODED and i + length <= n and copyable(i, length):
            length += 1
        if length > _MAX_CODED and i + length <= n and copyable(i, length):
            # Long repeats: copyability is monotone in length, so gallop then bisect.
            lo, step = length, 1
            while i + lo + step <= n and copyable(i, lo + step):
                lo, step = lo + step, step * 2
            hi = min(lo + step, n - i + 1)  # first length known (or assumed) not copyable
            while hi - lo > 1:
                mid = (lo + hi) // 2
                if copyable(i, mid):
                    lo = mid
                else:
                    hi = mid
            length = hi
        c += 1
        i += length
    return c


def lz76(seq) -> ComplexityResult:
    """LZ76 phrase count and normalised index ``c / (n / log2 n)``."""
    if not isinstance(seq, BinarySequence):
        seq = BinarySequence(np.asarray(seq), float("nan"))
    n = seq.n
    c = lz76_phrase_count(seq.bits)
    return ComplexityResult(c=c, ci=c * np.log2(n) / n, n=n)


@dataclass
class GroupReport:
    """Kruskal-Wallis comparison of complexity values across fatigue levels."""

    statistic: float
    p_value: float
    means: dict
    counts: dict
    density: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "kruskal_h": self.statistic,
            "p_value": self.p_value,
            "means": {str(k): v for k, v in self.means.items()},
            "counts": {str(k): v for k, v in self.counts.items()},
            "density": {str(k): v for k, v in self.density.items()},
        }


def group_compare(ci_by_level: dict, grid_points: int = 128) -> GroupReport:
    """Kruskal-Wallis H test (tie-corrected) with per-level means and KDEs.

    Densities use a Gaussian kernel with Silverman's bandwidth evaluated on a
    shared grid; a level whose values are all equal gets no density.
    """
    levels = sorted(ci_by_level)
    groups = [np.asarray(ci_by_level[k], dtype=float) for k in levels]
    if len(groups) < 2:
        raise DataError("group comparison needs at least two levels")
    for k, g in zip(levels, groups):
        if g.size < 2:
            raise DataError(f"level {k} has {g.size} value(s); need at least 2")
    pooled = np.concatenate(groups)
    if np.all(pooled == pooled[0]):
        raise DataError("all complexity values are identical; no ranks to compare")
    h, p = stats.kruskal(*groups)

    pad = 0.1 * (pooled.max() - pooled.min())
    grid = np.linspace(pooled.min() - pad, pooled.max() + pad, grid_points)
    density = {}
    for k, g in zip(levels, groups):
        if np.ptp(g) == 0:
            continue
        kde = stats.gaussian_kde(g, bw_method="silverman")
        density[k] = {"x": grid.tolist(), "pdf": kde(grid).tolist(),
                      "bandwidth": float(kde.factor * g.std(ddof=1))}
    return GroupReport(
        statistic=float(h),
        p_value=float(p),
        means={k: float(g.mean()) for k, g in zip(levels, groups)},
        counts={k: int(g.size) for k, g in zip(levels, groups)},
        density=density,
    )
