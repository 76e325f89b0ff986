"""Fractional dynamical networks: Grunwald-Letnikov operators and identification.

The model for an n-channel window is

    Delta^alpha x[k+1] = A x[k] + B u[k],     y[k] = x[k]

with per-channel orders ``alpha``, coupling ``A`` (n x n), input map ``B``
(n x p, p < n) and unobserved inputs ``u``.  :func:`fit` alternates a
least-squares estimate of ``u`` given ``(A, B)`` with a joint least-squares
estimate of ``[A B]`` given ``u``; every step minimises the same residual, so
the residual trace never increases.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, NumericalError

logger = logging.getLogger(__name__)

DEFAULT_MEMORY = 100
ALPHA_RANGE = (0.1, 1.4)


def psi_weights(alpha: float, J_mem: int) -> np.ndarray:
    """GL weights ``psi(alpha, i) = Gamma(i - alpha) / (Gamma(-alpha) Gamma(i + 1))``.

    Evaluated with the recurrence ``psi(i) = psi(i - 1) (i - 1 - alpha) / i``,
    which stays finite where the gamma functions have poles.

    Returns:
        Array of length ``J_mem + 1`` with ``psi[0] == 1``.
    """
    if not alpha > -1:
        raise ValueError(f"alpha must exceed -1, got {alpha}")
    if J_mem < 1:
        raise ValueError(f"J_mem must be >= 1, got {J_mem}")
    i = np.arange(1, J_mem + 1, dtype=float)
    ratios = (i - 1.0 - alpha) / i
    return np.concatenate([[1.0], np.cumprod(ratios)])


def gl_difference(x, alpha: float, J_mem: int, return_warmup: bool = False):
    """Truncated GL difference ``sum_{i=0}^{min(k, J_mem)} psi(alpha, i) x[k - i]``.

    The first ``J_mem`` outputs use a shorter history than the rest; pass
    ``return_warmup=True`` to get the boolean mask marking them.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DataError("gl_difference expects a 1-D series")
    if x.size <= J_mem:
        raise DataError(f"series of length {x.size} is not longer than J_mem={J_mem}")
    psi = psi_weights(alpha, J_mem)
    out = np.convolve(x, psi)[: x.size]
    if return_warmup:
        warm = np.zeros(x.size, dtype=bool)
        warm[:J_mem] = True
        return out, warm
    return out


@dataclass
class AlphaEstimate:
    alpha: float
    slope: float
    r2: float


def estimate_alpha(x, wavelet: str = "db3", scales: tuple[int, int] | None = None) -> AlphaEstimate:
    """Fractional order of one channel from its wavelet spectrum.

    ``s`` is the slope of ``log2`` of the per-scale standard deviation of the
    (L2-normalised) detail coefficients against scale, and
    ``alpha = (s + 1) / 2`` clamped to ``ALPHA_RANGE``.  White noise gives
    ``s = 0`` and a random walk ``s = 1``.
    """
    from .multifractal import dwt  # deferred: multifractal imports nothing from here

    x = np.asarray(x, dtype=float)
    if x.size < 256:
        raise DataError(f"need at least 256 samples to estimate alpha, got {x.size}")
    if np.ptp(x) == 0:
        raise DataError("degenerate variance: constant channel")
    dec = dwt(x, family=wavelet, normalization=2)
    J = dec.max_scale
    if scales is None:
        j1, j2 = (2, J - 1) if J >= 5 else (1, J)
    else:
        j1, j2 = scales
    js = np.arange(j1, j2 + 1)
    logsd = []
    for j in js:
        d = dec.valid(j)
        if d.size < 2:
            raise DataError(f"scale {j} has fewer than two interior coefficients")
        var = np.var(d)
        if var <= 0:
            raise DataError("degenerate variance: all detail coefficients vanish")
        logsd.append(0.5 * np.log2(var))
    logsd = np.asarray(logsd)
    slope, intercept = np.polyfit(js, logsd, 1)
    fitted = slope * js + intercept
    ss_tot = np.sum((logsd - logsd.mean()) ** 2)
    r2 = 1.0 - np.sum((logsd - fitted) ** 2) / ss_tot if ss_tot > 0 else 1.0
    alpha = float(np.clip((slope + 1.0) / 2.0, *ALPHA_RANGE))
    return AlphaEstimate(alpha=alpha, slope=float(slope), r2=float(r2))


@dataclass
class EMOptions:
    p: int = 1
    tol: float = 1e-6
    max_iter: int = 200
    J_mem: int | None = None
    ridge: float = 1e-6


@dataclass
class FractionalModel:
    """Identified window model.

    ``C`` is the identity (every channel is an observed state).  ``U`` rows
    have unit RMS; the input scale lives in ``B``.
    """

    alpha: np.ndarray
    A: np.ndarray
    B: np.ndarray
    U: np.ndarray
    residual_rms: float
    iterations: int
    converged: bool
    residual_trace: list = field(default_factory=list)
    condition_number: float = float("nan")

    @property
    def C(self) -> np.ndarray:
        return np.eye(self.A.shape[0])


def regression_targets(window: np.ndarray, alpha, J_mem: int):
    """Regressors ``x[k]`` and GL targets ``z[k] = Delta^alpha x[k+1]``.

    Only instants whose full ``J_mem``-lag history lies inside the window are
    kept, i.e. ``k + 1 >= J_mem``.
    """
    window = np.asarray(window, dtype=float)
    n, L = window.shape
    z_full = np.stack([gl_difference(window[c], alpha[c], J_mem) for c in range(n)])
    start = J_mem  # index of the first target with full history
    Z = z_full[:, start:]
    X = window[:, start - 1: L - 1]
    return X, Z


def _lstsq(design: np.ndarray, target: np.ndarray):
    """Solve ``target ~ coef @ design`` for ``coef``; returns (coef, cond)."""
    coef, _, rank, sv = np.linalg.lstsq(design.T, target.T, rcond=None)
    cond = sv[0] / sv[-1] if sv[-1] > 0 else np.inf
    if rank < design.shape[0]:
        raise NumericalError(
            f"rank-deficient least squares (rank {rank} < {design.shape[0]}, cond={cond:.3g})"
        )
    return coef.T, cond


def _normalise_gauge(B: np.ndarray, U: np.ndarray):
    scale = np.sqrt(np.mean(U ** 2, axis=1))
    scale = np.where(scale > 0, scale, 1.0)
    return B * scale, U / scale[:, None]


def fit(window, alpha, p: int = 1, opts: EMOptions | None = None) -> FractionalModel:
    """Identify ``(A, B, U)`` for one window with alternating least squares.

    Args:
        window: Array (n_channels, L).
        alpha: Fractional order per channel.
        p: Latent input dimension, ``0 <= p < n``.
        opts: Iteration options; ``opts.p`` is ignored in favour of ``p``.
    """
    opts = opts or EMOptions()
    window = np.asarray(window, dtype=float)
    n, L = window.shape
    alpha = np.broadcast_to(np.asarray(alpha, dtype=float), (n,)).copy()
    J_mem = opts.J_mem if opts.J_mem is not None else min(L - 1, DEFAULT_MEMORY)
    if not L > J_mem + 10 * n:
        raise DataError(f"window length {L} must exceed J_mem + 10 n = {J_mem + 10 * n}")
    if not 0 <= p < n:
        raise DataError(f"latent dimension p={p} must satisfy 0 <= p < n={n}")
    if not np.all(np.isfinite(window)):
        raise DataError("window contains non-finite samples")

    X, Z = regression_targets(window, alpha, J_mem)
    T = X.shape[1]

    def rms(A, B, U):
        R = Z - A @ X - (B @ U if p else 0.0)
        return float(np.sqrt(np.mean(R ** 2)))

    # Start from least squares with inputs ignored.  The ridge is applied only
    # to a near-singular Gram matrix: on noise-free data any start bias puts U
    # in the row space of X and makes the joint M-step rank deficient.
    gram = X @ X.T
    lam = opts.ridge * np.trace(gram) / n if np.linalg.cond(gram) > 1e10 else 0.0
    A = np.linalg.solve(gram + lam * np.eye(n), X @ Z.T).T
    if p == 0:
        A, cond = _lstsq(X, Z)
        res = rms(A, np.zeros((n, 0)), np.zeros((0, T)))
        return FractionalModel(alpha, A, np.zeros((n, 0)), np.zeros((0, T)), res, 1, True,
                               [res], cond)

    left, sv, _ = np.linalg.svd(Z - A @ X, full_matrices=False)
    B = left[:, :p] * sv[:p]
    B_pinv = np.linalg.pinv(B)
    U = B_pinv @ (Z - A @ X)
    trace = [rms(A, B, U)]
    best = (A, B, U, trace[0])
    converged = False
    rises = 0
    cond = np.nan
    it = 0
    if trace[0] <= 1e-12 * float(np.sqrt(np.mean(Z ** 2))):
        # Exact fit already: further steps would only trade roundoff.
        B, U = _normalise_gauge(B, U)
        return FractionalModel(alpha, A, B, U, trace[0], 0, True, trace, np.nan)
    for it in range(1, opts.max_iter + 1):
        # E-step: inputs given the current (A, B).
        U = np.linalg.pinv(B) @ (Z - A @ X)
        # M-step: [A B] jointly given U.
        coef, cond = _lstsq(np.vstack([X, U]), Z)
        A_new, B_new = coef[:, :n], coef[:, n:]
        B_new, U = _normalise_gauge(B_new, U)
        res = rms(A_new, B_new, U)
        change = np.linalg.norm(np.hstack([A_new - A, B_new - B])) / max(
            np.linalg.norm(np.hstack([A, B])), 1e-300)
        A, B = A_new, B_new
        trace.append(res)
        if res > trace[-2] * (1.0 + 1e-10):
            rises += 1
            if rises >= 2:
                logger.warning("residual rose twice; reverting to best iterate")
                A, B, U, _ = best
                trace.append(best[3])
                break
        else:
            rises = 0
            if res <= best[3]:
                best = (A, B, U, res)
        if change < opts.tol:
            converged = True
            break
    if not np.all(np.isfinite(A)):
        raise NumericalError("non-finite coupling estimate")
    return FractionalModel(
        alpha=alpha, A=A, B=B, U=U, residual_rms=trace[-1], iterations=it,
        converged=converged, residual_trace=trace, condition_number=float(cond),
    )


@dataclass
class CouplingTrajectory:
    """Window-ordered coupling matrices, each flattened row-major.

    ``matrices[w, i * n + j]`` is ``A[i, j]`` of window ``w``.  Rows of
    invalid windows are NaN and ``valid[w]`` is False.
    """

    matrices: np.ndarray
    valid: np.ndarray
    trial_id: str
    fatigue_level: int
    channels: list[str] = field(default_factory=list)
    diagnostics: list[dict] = field(default_factory=list)

    @property
    def n_windows(self) -> int:
        return self.matrices.shape[0]

    def valid_matrices(self) -> np.ndarray:
        return self.matrices[self.valid]


def coupling_trajectory(series, alpha, p: int = 1, opts: EMOptions | None = None,
                        max_invalid_fraction: float = 0.2) -> CouplingTrajectory:
    """Fit every window of a :class:`~fdnml.ingest.WindowedSeries`."""
    windows = series.windows
    if len(windows) < 1:
        raise DataError("no windows to fit")
    n = windows.shape[1]
    rows, valid, diags = [], [], []
    for w, win in enumerate(windows):
        try:
            model = fit(win, alpha, p=p, opts=opts)
        except (NumericalError, np.linalg.LinAlgError) as exc:
            logger.warning("window %d of %s failed: %s", w, series.trial_id, exc)
            rows.append(np.full(n * n, np.nan))
            valid.append(False)
            diags.append({"window": w, "error": str(exc)})
            continue
        rows.append(model.A.ravel())
        valid.append(True)
        diags.append({"window": w, "iterations": model.iterations,
                      "converged": model.converged, "residual_rms": model.residual_rms})
    valid = np.asarray(valid)
    if (~valid).mean() > max_invalid_fraction:
        raise NumericalError(
            f"{(~valid).sum()} of {valid.size} windows of {series.trial_id} failed to fit"
        )
    return CouplingTrajectory(
        matrices=np.asarray(rows), valid=valid, trial_id=series.trial_id,
        fatigue_level=series.label, channels=list(series.channels), diagnostics=diags,
    )


def trajectory_rows(traj: CouplingTrajectory) -> list[dict]:
    """One record per window: ids, validity, ``A_ij`` columns and fit diagnostics."""
    n = int(round(np.sqrt(traj.matrices.shape[1])))
    rows = []
    for w in range(traj.n_windows):
        row = {"trial_id": traj.trial_id, "level": traj.fatigue_level, "window": w,
               "valid": bool(traj.valid[w])}
        row.update({f"A_{i}{j}": traj.matrices[w, i * n + j] for i in range(n) for j in range(n)})
        d = traj.diagnostics[w]
        row.update({"iterations": d.get("iterations", ""), "converged": d.get("converged", ""),
                    "residual_rms": d.get("residual_rms", "")})
        rows.append(row)
    return rows


def read_trajectory(path) -> CouplingTrajectory:
    """Inverse of :func:`trajectory_rows` written as CSV."""
    import pandas as pd

    frame = pd.read_csv(path, dtype={"trial_id": str}, float_precision="round_trip")
    cols = [c for c in frame.columns if c.startswith("A_")]
    if not cols or "level" not in frame:
        raise DataError(f"{path} is not a trajectory file")
    valid = frame["valid"].astype(str).str.lower().eq("true").to_numpy()
    return CouplingTrajectory(frame[cols].to_numpy(float), valid, str(frame["trial_id"].iloc[0]),
                              int(frame["level"].iloc[0]))
