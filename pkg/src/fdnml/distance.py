"""Wasserstein distances between D_q distributions and feature assembly.

Feature files are CSV with a first line ``# fdnml-features <version>`` and a
header row naming every column; readers refuse files whose version differs
from the one they expect.
"""

from __future__ import annotations

import io
import itertools
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .complexity import binarize, lz76
from .errors import DataError

logger = logging.getLogger(__name__)

LAYOUT_VERSION = "1"
_FEATURE_PREFIX = "# fdnml-features"
CUMULANT_NAMES = ("c1", "c2", "c3")


@dataclass(frozen=True)
class DqDistribution:
    """Samples of D_q at one fatigue level.

    ``values`` is either a vector of scalars or a (samples, len(q)) array of
    curves.
    """

    values: np.ndarray
    level: int
    q: np.ndarray | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim not in (1, 2):
            raise DataError(f"D_q samples must be 1-D or 2-D, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise DataError(f"level {self.level}: D_q samples are not all finite")
        object.__setattr__(self, "values", values)
        if self.q is not None:
            q = np.asarray(self.q, dtype=float)
            if values.ndim != 2 or q.size != values.shape[1]:
                raise DataError("q grid does not match the curve width")
            object.__setattr__(self, "q", q)

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]


def wasserstein1(a, b) -> float:
    """W1 between two empirical distributions on the line, ``int |F_a - F_b|``.

    The integral is taken exactly over the intervals between pooled sorted
    samples, so unequal sample sizes need no interpolation.
    """
    a = np.sort(np.asarray(getattr(a, "values", a), dtype=float).ravel())
    b = np.sort(np.asarray(getattr(b, "values", b), dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise DataError("W1 needs two nonempty samples")
    pooled = np.sort(np.concatenate([a, b]))
    widths = np.diff(pooled)
    cdf_a = np.searchsorted(a, pooled[:-1], side="right") / a.size
    cdf_b = np.searchsorted(b, pooled[:-1], side="right") / b.size
    return float(np.sum(np.abs(cdf_a - cdf_b) * widths))


@dataclass
class DistanceTable:
    """Symmetric W1 table over fatigue levels."""

    levels: list
    matrix: np.ndarray
    mode: str
    q: float | None = None

    def pairs(self) -> dict:
        out = {}
        for i, j in itertools.combinations(range(len(self.levels)), 2):
            out[(self.levels[i], self.levels[j])] = float(self.matrix[i, j])
        return out

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "q": self.q,
            "levels": list(self.levels),
            "matrix": self.matrix.tolist(),
            "pairs": {f"{a}-{b}": v for (a, b), v in self.pairs().items()},
        }


def _curve_w1(a: DqDistribution, b: DqDistribution) -> float:
    if a.values.ndim == 1:
        return wasserstein1(a.values, b.values)
    return float(np.mean([wasserstein1(a.values[:, k], b.values[:, k])
                          for k in range(a.values.shape[1])]))


def pairwise_level_distances(dqs: dict, mode: str = "curve", q: float = 2.0) -> DistanceTable:
    """W1 between every pair of levels.

    Args:
        dqs: Mapping level -> :class:`DqDistribution`.
        mode: ``"curve"`` averages W1 over the q grid; ``"scalar"`` compares
            the single column at ``q``.
        q: Moment order used in scalar mode.
    """
    if mode not in ("curve", "scalar"):
        raise DataError(f"unknown distance mode {mode!r}")
    levels = sorted(dqs)
    if len(levels) < 2:
        raise DataError("need at least two levels to compare")
    dists = []
    for level in levels:
        d = dqs[level]
        if not isinstance(d, DqDistribution):
            d = DqDistribution(d, level)
        if d.n_samples < 2:
            raise DataError(f"level {level} has {d.n_samples} sample(s); need at least 2")
        if mode == "scalar" and d.values.ndim == 2:
            if d.q is None:
                raise DataError("scalar mode on curves needs the q grid")
            k = np.flatnonzero(np.isclose(d.q, q))
            if k.size != 1:
                raise DataError(f"q={q} is not on the grid")
            d = DqDistribution(d.values[:, k[0]], level)
        dists.append(d)
    widths = {d.values.shape[1:] for d in dists}
    if len(widths) != 1:
        raise DataError("levels have D_q curves of different widths")
    m = np.zeros((len(levels), len(levels)))
    for i, j in itertools.combinations(range(len(levels)), 2):
        m[i, j] = m[j, i] = _curve_w1(dists[i], dists[j])
    return DistanceTable(levels=levels, matrix=m, mode=mode, q=q if mode == "scalar" else None)


def feature_qgrid(qs) -> np.ndarray:
    """Grid used for D_q features: ``q = 1`` is left out (undefined in general)."""
    qs = np.asarray(qs, dtype=float)
    return qs[~np.isclose(qs, 1.0)]


def feature_names(channels, qs) -> list[str]:
    """Column names of the feature vector, in storage order."""
    qf = feature_qgrid(qs)
    names = []
    for ch in channels:
        names += [f"{ch}_D{q:+g}" for q in qf]
        names += [f"{ch}_{c}" for c in CUMULANT_NAMES]
        names.append(f"{ch}_dDq")
    names += [f"A_{i}{j}" for i in range(len(channels)) for j in range(len(channels))]
    names += [f"{ch}_alpha" for ch in channels]
    names.append("lzc_window")
    return names


@dataclass
class FeatureSet:
    """Per-window feature matrix for one trial (or a stack of trials)."""

    X: np.ndarray
    names: list[str]
    labels: np.ndarray
    trial_ids: np.ndarray
    window_index: np.ndarray
    version: str = LAYOUT_VERSION
    dropped: int = 0
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.X.shape[0]

    @staticmethod
    def concat(sets: list["FeatureSet"]) -> "FeatureSet":
        if not sets:
            raise DataError("no feature sets to combine")
        names, version = sets[0].names, sets[0].version
        for s in sets[1:]:
            if s.names != names or s.version != version:
                raise DataError("feature sets have different layouts")
        return FeatureSet(
            X=np.concatenate([s.X for s in sets]),
            names=list(names),
            labels=np.concatenate([s.labels for s in sets]),
            trial_ids=np.concatenate([s.trial_ids for s in sets]),
            window_index=np.concatenate([s.window_index for s in sets]),
            version=version,
            dropped=sum(s.dropped for s in sets),
        )


def window_lzc(A) -> float:
    """Complexity index of one binarised coupling matrix."""
    return lz76(binarize(np.asarray(A).ravel())).ci


def assemble_features(summaries, trajectory, alphas, lzc=None, qs=None) -> FeatureSet:
    """Concatenate the per-window features of one trial.

    Args:
        summaries: One entry per window, each a per-channel list of
            :class:`~fdnml.multifractal.MultifractalSummary` (``None`` marks a
            window whose analysis failed).
        trajectory: :class:`~fdnml.fracnet.CouplingTrajectory` of the trial.
        alphas: Fractional order per channel.
        lzc: Per-window complexity index; computed from the local A when
            omitted.
        qs: Moment grid; taken from the first summary when omitted.

    Windows with an invalid fit, a failed analysis or any non-finite feature
    are dropped and counted.
    """
    W = trajectory.n_windows
    if len(summaries) != W:
        raise DataError(f"{len(summaries)} multifractal summaries for {W} fitted windows")
    if lzc is not None and len(lzc) != W:
        raise DataError(f"{len(lzc)} complexity values for {W} fitted windows")
    channels = trajectory.channels
    alphas = np.asarray(alphas, dtype=float)
    if alphas.shape != (len(channels),):
        raise DataError(f"need one alpha per channel ({len(channels)}), got {alphas.shape}")
    if qs is None:
        first = next((s for s in summaries if s is not None), None)
        if first is None:
            raise DataError(f"trial {trajectory.trial_id}: no window has a multifractal summary")
        qs = first[0].qs
    qs = np.asarray(qs, dtype=float)
    qf = feature_qgrid(qs)
    names = feature_names(channels, qs)

    rows, kept = [], []
    for w in range(W):
        if not trajectory.valid[w] or summaries[w] is None:
            continue
        parts = []
        for s in summaries[w]:
            if not np.allclose(s.qs, qs):
                raise DataError("multifractal summaries use different q grids")
            parts.append(s.dq.D[np.isin(s.qs, qf)])
            parts.append(np.asarray(s.cumulants, dtype=float))
            parts.append([s.delta_dq])
        A = trajectory.matrices[w]
        parts.append(A)
        parts.append(alphas)
        parts.append([lzc[w] if lzc is not None else window_lzc(A)])
        row = np.concatenate([np.asarray(p, dtype=float).ravel() for p in parts])
        if row.size != len(names):
            raise DataError(f"window {w}: {row.size} features for a layout of {len(names)}")
        if not np.all(np.isfinite(row)):
            logger.info("trial %s window %d: non-finite feature, dropped", trajectory.trial_id, w)
            continue
        rows.append(row)
        kept.append(w)
    dropped = W - len(kept)
    X = np.asarray(rows).reshape(len(rows), len(names))
    return FeatureSet(
        X=X,
        names=names,
        labels=np.full(len(kept), trajectory.fatigue_level, dtype=int),
        trial_ids=np.full(len(kept), trajectory.trial_id, dtype=object),
        window_index=np.asarray(kept, dtype=int),
        dropped=dropped,
    )


def write_features(fs: FeatureSet, path) -> Path:
    path = Path(path)
    frame = pd.DataFrame(fs.X, columns=fs.names)
    frame.insert(0, "window", fs.window_index)
    frame.insert(0, "trial_id", fs.trial_ids)
    frame.insert(0, "label", fs.labels)
    buf = io.StringIO()
    frame.to_csv(buf, index=False, float_format="%.17g", lineterminator="\n")
    path.write_text(f"{_FEATURE_PREFIX} {fs.version}\n" + buf.getvalue())
    return path


def read_features(path, expected_version: str = LAYOUT_VERSION,
                  expected_names: list[str] | None = None) -> FeatureSet:
    """Load a feature file, refusing a layout other than the expected one."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"feature file not found: {path}")
    with open(path) as fh:
        first = fh.readline().strip()
    if not first.startswith(_FEATURE_PREFIX):
        raise DataError(f"{path} has no feature layout line")
    version = first[len(_FEATURE_PREFIX):].strip()
    if version != expected_version:
        raise DataError(f"{path}: feature layout {version!r}, expected {expected_version!r}")
    frame = pd.read_csv(path, skiprows=1, dtype={"trial_id": str}, float_precision="round_trip")
    names = [c for c in frame.columns if c not in ("label", "trial_id", "window")]
    if expected_names is not None and names != list(expected_names):
        raise DataError(f"{path}: feature columns differ from the expected layout")
    return FeatureSet(
        X=frame[names].to_numpy(dtype=float),
        names=names,
        labels=frame["label"].to_numpy(dtype=int),
        trial_ids=frame["trial_id"].to_numpy(dtype=object),
        window_index=frame["window"].to_numpy(dtype=int),
        version=version,
    )
