"""Wavelet-leader multifractal analysis.

Scale ``j = 1`` is the finest dyadic scale.  Detail coefficients are stored in
the L1 normalisation (``2**(-j/2)`` times the orthonormal ones) so that
``log2 S_L(j, q)`` grows like ``j * zeta(q)`` with ``zeta(q) = q H`` for a
monofractal of Hurst exponent ``H``.

Coefficients whose filter support reaches past either end of the signal are
marked invalid.  A leader is kept only when every coefficient in its cone is
valid, so boundary effects never enter the moments.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import pywt
from scipy.special import logsumexp

from .errors import ConfigError, DataError, NumericalError

logger = logging.getLogger(__name__)

DEFAULT_Q = np.array([q for q in np.arange(-5.0, 5.01, 0.5) if abs(q) > 1e-9])
MIN_LEADERS = 4
ZERO_LEADER_FACTOR = 1e-3


def default_qgrid() -> np.ndarray:
    return DEFAULT_Q.copy()


def validate_qgrid(qs) -> np.ndarray:
    qs = np.asarray(qs, dtype=float).ravel()
    if qs.size < 1:
        raise ConfigError("q-grid is empty")
    if np.any(np.diff(qs) <= 0):
        raise ConfigError("q-grid must be strictly increasing")
    return qs


@dataclass
class WaveletDecomposition:
    """Detail coefficients per scale with boundary flags.

    ``details[j - 1]`` and ``valid_mask[j - 1]`` belong to scale ``j``.
    """

    details: list
    valid_mask: list
    family: str
    normalization: int
    boundary: str = "exclude-edge-support"
    degenerate: bool = False
    requested_scale: int | None = None

    @property
    def max_scale(self) -> int:
        return len(self.details)

    @property
    def counts(self) -> list[int]:
        return [d.size for d in self.details]

    def coeffs(self, j: int) -> np.ndarray:
        return self.details[j - 1]

    def valid(self, j: int) -> np.ndarray:
        return self.details[j - 1][self.valid_mask[j - 1]]


def _filters(family: str):
    try:
        wav = pywt.Wavelet(family)
    except ValueError as exc:
        raise ConfigError(f"unknown wavelet family {family!r}") from exc
    if not wav.orthogonal:
        raise ConfigError(f"wavelet {family!r} is not orthogonal")
    moments = wav.vanishing_moments_psi or 0
    if moments < 1:
        raise ConfigError(f"wavelet {family!r} has no vanishing moments")
    if moments < 2:
        logger.debug("wavelet %s has a single vanishing moment", family)
    return np.asarray(wav.dec_lo), np.asarray(wav.dec_hi)


def dwt(signal, family: str = "db3", J: int | None = None,
        normalization: int = 1) -> WaveletDecomposition:
    """Decimated DWT of ``signal`` down to scale ``J``.

    Position ``k`` at scale ``j`` is computed from approximation samples
    ``2k + 1 - (len(filter) - 1) .. 2k + 1`` of scale ``j - 1``, so
    ``n_{j+1} = floor(n_j / 2)``.  Without ``J`` the transform runs while at
    least one interior coefficient survives.
    """
    x = np.asarray(signal, dtype=float).ravel()
    if normalization not in (1, 2):
        raise ConfigError("normalization must be 1 (L1) or 2 (L2)")
    if not np.all(np.isfinite(x)):
        raise DataError("signal contains non-finite values")
    lo, hi = _filters(family)
    flen = lo.size
    if J is not None:
        if J < 1:
            raise ConfigError("J must be >= 1")
        if x.size < 2 ** J:
            raise DataError(f"signal of length {x.size} is too short for J={J}")
    elif x.size < 2 * flen:
        raise DataError(f"signal of length {x.size} is too short for {family}")

    approx = x
    mask = np.ones(x.size, dtype=bool)
    details, masks = [], []
    peak = 0.0
    j = 0
    while True:
        if J is not None and j == J:
            break
        m = approx.size // 2
        if m < 1:
            break
        idx = 2 * np.arange(m) + 1
        full_valid = np.convolve(mask.astype(float), np.ones(flen))[idx] > flen - 0.5
        if J is None and not full_valid.any():
            break
        d = np.convolve(approx, hi)[idx]
        approx = np.convolve(approx, lo)[idx]
        mask = full_valid
        if full_valid.any():
            peak = max(peak, float(np.max(np.abs(d[full_valid]))))
        j += 1
        scale = 2.0 ** (-j / 2) if normalization == 1 else 1.0
        details.append(d * scale)
        masks.append(full_valid)

    degenerate = peak <= 1e-10 * max(np.max(np.abs(x)), 1e-300)
    return WaveletDecomposition(details, masks, family, normalization,
                                degenerate=bool(degenerate), requested_scale=J)


@dataclass
class LeaderField:
    """Retained wavelet leaders per scale.

    ``values[j - 1]`` holds the leaders of scale ``j`` at the coefficient
    positions ``positions[j - 1]``.
    """

    values: list
    positions: list
    replaced: list = field(default_factory=list)

    @property
    def max_scale(self) -> int:
        return len(self.values)

    @property
    def counts(self) -> np.ndarray:
        return np.array([v.size for v in self.values])

    def at(self, j: int) -> np.ndarray:
        return self.values[j - 1]

    def with_values(self, values) -> "LeaderField":
        return LeaderField(list(values), self.positions, self.replaced)


def leaders(dec: WaveletDecomposition) -> LeaderField:
    """Supremum of ``|d|`` over the 3-interval neighbourhood and all finer scales."""
    if dec.degenerate:
        raise DataError("decomposition is degenerate (all details vanish)")
    sup, sup_ok = None, None
    values, positions, replaced = [], [], []
    for j in range(1, dec.max_scale + 1):
        mag = np.abs(dec.coeffs(j))
        ok = dec.valid_mask[j - 1].copy()
        if sup is not None:
            n = mag.size
            child = np.maximum(sup[0: 2 * n: 2], sup[1: 2 * n: 2])
            mag = np.maximum(mag, child)
            ok &= sup_ok[0: 2 * n: 2] & sup_ok[1: 2 * n: 2]
        sup, sup_ok = mag, ok
        if mag.size < 3:
            break
        lead = np.maximum(np.maximum(mag[:-2], mag[1:-1]), mag[2:])
        keep = ok[:-2] & ok[1:-1] & ok[2:]
        lead = lead[keep]
        pos = np.arange(1, mag.size - 1)[keep]
        if lead.size < MIN_LEADERS:
            break
        zero = lead <= 0
        n_zero = int(zero.sum())
        if n_zero:
            if n_zero == lead.size:
                raise DataError(f"all leaders vanish at scale {j}")
            lead = lead.copy()
            lead[zero] = lead[~zero].min() * ZERO_LEADER_FACTOR
            logger.info("scale %d: replaced %d zero leaders", j, n_zero)
        values.append(lead)
        positions.append(pos)
        replaced.append(n_zero)
    if not values:
        raise DataError(f"fewer than {MIN_LEADERS} leaders at every scale")
    if dec.requested_scale is not None and len(values) < dec.requested_scale:
        raise DataError(
            f"fewer than {MIN_LEADERS} leaders at scale {len(values) + 1} "
            f"(requested J={dec.requested_scale})"
        )
    return LeaderField(values, positions, replaced)


@dataclass
class StructureFunctions:
    """``log2 S_L(j, q)`` for scales ``1..J`` (rows) and the q-grid (columns)."""

    log2_S: np.ndarray
    qs: np.ndarray
    counts: np.ndarray

    @property
    def scales(self) -> np.ndarray:
        return np.arange(1, self.log2_S.shape[0] + 1)

    @property
    def S(self) -> np.ndarray:
        return np.exp2(self.log2_S)


def structure_functions(lf: LeaderField, qs) -> StructureFunctions:
    """``S_L(j, q) = mean_k L(j, k)**q``; moments with ``|q| > 3`` go through log-sum-exp."""
    qs = np.asarray(qs, dtype=float).ravel()
    out = np.empty((lf.max_scale, qs.size))
    for j in range(1, lf.max_scale + 1):
        L = lf.at(j)
        if np.any(L <= 0):
            raise DataError(f"non-positive leaders at scale {j}")
        lnL = np.log(L)
        for iq, q in enumerate(qs):
            if abs(q) <= 3:
                s = np.mean(L ** q)
                if not (np.isfinite(s) and s > 0):
                    raise NumericalError(f"S_L({j}, {q}) overflowed")
                out[j - 1, iq] = np.log2(s)
            else:
                out[j - 1, iq] = (logsumexp(q * lnL) - math.log(L.size)) / math.log(2)
    if not np.all(np.isfinite(out)):
        raise NumericalError("structure functions overflowed in the log domain")
    return StructureFunctions(out, qs, lf.counts)


def _wls_slope(x: np.ndarray, Y: np.ndarray, w: np.ndarray):
    """Weighted least-squares slopes of each column of ``Y`` on ``x`` and their R^2."""
    w = w / w.sum()
    xm = np.sum(w * x)
    ym = w @ Y
    dx = x - xm
    sxx = np.sum(w * dx * dx)
    if sxx <= 0:
        raise NumericalError("degenerate regression: all scales identical")
    slope = (w * dx) @ (Y - ym) / sxx
    resid = Y - ym - np.outer(dx, slope)
    ss_res = w @ resid ** 2
    ss_tot = w @ (Y - ym) ** 2
    with np.errstate(invalid="ignore", divide="ignore"):
        r2 = np.where(ss_tot > 0, 1.0 - ss_res / ss_tot, 1.0)
    return slope, r2


def default_scale_range(J: int) -> tuple[int, int]:
    """``(2, J - 2)`` when that spans at least 3 octaves, else ``(1, J)``."""
    if J - 4 >= 3:
        return 2, J - 2
    if J - 1 >= 3:
        return 1, J
    raise DataError(f"only {J} usable scales; need at least 4 for a scaling fit")


def _check_range(j1: int, j2: int, J: int):
    if j2 - j1 < 3:
        raise ConfigError(f"scale range [{j1}, {j2}] spans fewer than 3 octaves")
    if j1 < 1 or j2 > J:
        raise DataError(f"scale range [{j1}, {j2}] outside available scales 1..{J}")


def scaling_exponents(sf: StructureFunctions, j1: int, j2: int, weighted: bool = True,
                      r2_warn: float = 0.95):
    """Slopes of ``log2 S_L(j, q)`` against ``j`` over ``[j1, j2]``.

    Returns:
        ``(zeta, r2)``, one entry per q.
    """
    _check_range(j1, j2, sf.log2_S.shape[0])
    sl = slice(j1 - 1, j2)
    js = sf.scales[sl].astype(float)
    w = sf.counts[sl].astype(float) if weighted else np.ones(js.size)
    zeta, r2 = _wls_slope(js, sf.log2_S[sl], w)
    poor = r2 < r2_warn
    if np.any(poor):
        warnings.warn(f"scaling fit R^2 below {r2_warn} for q={sf.qs[poor].tolist()}",
                      RuntimeWarning, stacklevel=2)
    return zeta, r2


@dataclass
class Spectrum:
    h: np.ndarray
    D: np.ndarray
    q: np.ndarray
    clipped: int = 0
    max_violation: float = 0.0

    @property
    def width(self) -> float:
        return float(self.h.max() - self.h.min()) if self.h.size else 0.0


def legendre_spectrum(zeta, qs, tol: float = 1e-8) -> Spectrum:
    """Parametric Legendre transform ``h = zeta'(q)``, ``D = 1 + q h - zeta(q)``.

    ``q = 0`` is left out.  Values of ``D`` above 1 are clipped; if the excess
    is beyond ``tol`` a warning is emitted and the count kept in ``clipped``.
    """
    qs = validate_qgrid(qs)
    zeta = np.asarray(zeta, dtype=float)
    if zeta.shape != qs.shape:
        raise ConfigError("zeta and q-grid differ in length")
    if qs.size < 3:
        raise ConfigError("need at least 3 q values for a derivative")
    h = np.gradient(zeta, qs, edge_order=2)
    D = 1.0 + qs * h - zeta
    excess = D - 1.0
    max_violation = float(max(excess.max(), 0.0))
    clipped = int(np.sum(excess > tol))
    if clipped:
        warnings.warn(f"D(h) exceeded 1 by up to {max_violation:.3g}; clipped",
                      RuntimeWarning, stacklevel=2)
    D = np.minimum(D, 1.0)
    keep = np.abs(qs) > 1e-12
    order = np.argsort(h[keep], kind="stable")
    return Spectrum(h[keep][order], D[keep][order], qs[keep][order], clipped, max_violation)


@dataclass
class GeneralizedDimensions:
    q: np.ndarray
    D: np.ndarray
    delta: float
    convention: str
    undefined: list = field(default_factory=list)


def generalized_dimensions(zeta, qs, convention: str = "partition",
                           limit_tol: float = 1e-6) -> GeneralizedDimensions:
    """Generalized dimensions from scaling exponents.

    ``partition``: ``tau(q) = zeta(q) - 1`` and ``D_q = tau(q) / (q - 1)``;
    at ``q = 1`` the limit ``tau'(1)``, defined only when ``tau(1) = 0``
    (otherwise the entry is NaN and listed in ``undefined``).

    ``hurst``: ``D_q = zeta(q) / q`` with ``zeta'(0)`` at ``q = 0``.

    ``delta`` is ``D(q_max) - D(q_min)`` over the grid.
    """
    qs = validate_qgrid(qs)
    zeta = np.asarray(zeta, dtype=float)
    if qs.size < 2:
        raise ConfigError("need at least two q values for Delta D_q")
    if convention == "partition":
        pole, num = 1.0, zeta - 1.0
    elif convention == "hurst":
        pole, num = 0.0, zeta
    else:
        raise ConfigError(f"unknown D_q convention {convention!r}")
    D = np.empty_like(zeta)
    undefined = []
    at_pole = np.abs(qs - pole) < 1e-12
    D[~at_pole] = num[~at_pole] / (qs[~at_pole] - pole)
    for i in np.flatnonzero(at_pole):
        if abs(num[i]) > limit_tol or qs.size < 3:
            warnings.warn(f"D_q limit at q={pole} undefined (numerator {num[i]:.3g})",
                          RuntimeWarning, stacklevel=2)
            D[i] = np.nan
            undefined.append(float(qs[i]))
        else:
            D[i] = np.gradient(num, qs, edge_order=2)[i]
    return GeneralizedDimensions(qs, D, float(D[-1] - D[0]), convention, undefined)


def _cumulant_table(lf: LeaderField, j1: int, j2: int) -> np.ndarray:
    rows = []
    for j in range(j1, j2 + 1):
        ln = np.log(lf.at(j))
        # Shifted by the first value so a constant scale gives exact zeros.
        s = ln - ln[0]
        c = s - s.mean()
        rows.append([ln[0] + s.mean(), np.mean(c ** 2), np.mean(c ** 3)])
    return np.asarray(rows)


def log_cumulants(lf: LeaderField, j1: int, j2: int, weighted: bool = True) -> np.ndarray:
    """``(c1, c2, c3)``: slopes of the per-scale cumulants of ``ln L`` on ``j ln 2``."""
    _check_range(j1, j2, lf.max_scale)
    for j in range(j1, j2 + 1):
        if np.any(lf.at(j) <= 0):
            raise DataError(f"non-positive leaders at scale {j}")
    table = _cumulant_table(lf, j1, j2)
    x = np.arange(j1, j2 + 1) * math.log(2.0)
    w = lf.counts[j1 - 1: j2].astype(float) if weighted else np.ones(x.size)
    slopes, _ = _wls_slope(x, table, w)
    return slopes


STATISTICS = ("c1", "c2", "c3", "cumulants", "zeta", "dq")


@dataclass
class BootstrapResult:
    statistic: str
    estimate: np.ndarray
    low: np.ndarray
    high: np.ndarray
    replicates: np.ndarray
    level: float
    p_value_c2: float | None = None


def _resample(lf: LeaderField, j1: int, j2: int, rng: np.random.Generator,
              block_length: int | None, mode: str = "time") -> LeaderField:
    values = list(lf.values)
    if mode == "time":
        # Blocks are drawn at the coarsest scale and mapped onto the same time
        # span at every finer scale, keeping the time-scale dependence intact.
        n_top = lf.at(j2).size
        b = block_length or max(1, math.ceil(n_top ** (1.0 / 3.0)))
        starts = rng.integers(0, n_top, size=-(-n_top // b))
        for j in range(j1, j2 + 1):
            L = lf.at(j)
            f = 2 ** (j2 - j)
            idx = ((starts[:, None] * f + np.arange(b * f)[None, :]) % L.size).ravel()
            values[j - 1] = L[idx[: L.size]]
        return lf.with_values(values)
    for j in range(j1, j2 + 1):
        L = lf.at(j)
        n = L.size
        b = block_length or max(1, math.ceil(n ** (1.0 / 3.0)))
        starts = rng.integers(0, n, size=-(-n // b))
        idx = ((starts[:, None] + np.arange(b)[None, :]) % n).ravel()[:n]
        values[j - 1] = L[idx]
    return lf.with_values(values)


def _statistic(lf, statistic, j1, j2, qs, weighted, convention):
    if statistic in ("c1", "c2", "c3", "cumulants"):
        c = log_cumulants(lf, j1, j2, weighted)
        return c if statistic == "cumulants" else c[["c1", "c2", "c3"].index(statistic):
                                                      ["c1", "c2", "c3"].index(statistic) + 1]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        zeta, _ = scaling_exponents(structure_functions(lf, qs), j1, j2, weighted)
        if statistic == "zeta":
            return zeta
        return generalized_dimensions(zeta, qs, convention).D


def bootstrap_ci(lf: LeaderField, statistic: str = "cumulants", resamples: int = 200,
                 level: float = 0.95, j1: int | None = None, j2: int | None = None,
                 qs=None, seed: int = 0, block_length: int | None = None,
                 weighted: bool = True, convention: str = "partition",
                 mode: str = "time") -> BootstrapResult:
    """Circular block bootstrap of the leader field.

    ``mode="time"`` draws blocks of ``ceil(n_j2 ** (1/3))`` leaders at the
    coarsest fitted scale and reuses the same time spans (``2**(j2 - j)``
    times longer) at each finer scale.  ``mode="scale"`` resamples every
    scale independently with blocks of ``ceil(n_j ** (1/3))``.
    ``block_length`` overrides the rule.  Each replicate draws from its own
    child of ``SeedSequence(seed)``.
    For cumulant statistics the two-sided p-value of ``c2 = 0`` is the share
    of centred replicates ``|c2* - c2|`` at least as large as ``|c2|``.
    """
    if mode not in ("time", "scale"):
        raise ConfigError(f"unknown bootstrap mode {mode!r}")
    if statistic not in STATISTICS:
        raise ConfigError(f"unknown bootstrap statistic {statistic!r}; choose from {STATISTICS}")
    if resamples < 1:
        raise ConfigError("resamples must be positive")
    if resamples < 100:
        logger.warning("only %d bootstrap resamples; intervals will be coarse", resamples)
    if j1 is None or j2 is None:
        d1, d2 = default_scale_range(lf.max_scale)
        j1, j2 = j1 or d1, j2 or d2
    qs = default_qgrid() if qs is None else validate_qgrid(qs)
    args = (j1, j2, qs, weighted, convention)
    estimate = np.atleast_1d(_statistic(lf, statistic, *args))
    reps = np.empty((resamples, estimate.size))
    children = np.random.SeedSequence(seed).spawn(resamples)
    for r, child in enumerate(children):
        rng = np.random.default_rng(child)
        reps[r] = _statistic(_resample(lf, j1, j2, rng, block_length, mode), statistic, *args)
    alpha = 1.0 - level
    low = np.quantile(reps, alpha / 2, axis=0)
    high = np.quantile(reps, 1 - alpha / 2, axis=0)
    p_c2 = None
    if statistic in ("c2", "cumulants"):
        k = 0 if statistic == "c2" else 1
        c2 = estimate[k]
        p_c2 = float(np.mean(np.abs(reps[:, k] - c2) >= abs(c2)))
    return BootstrapResult(statistic, estimate, low, high, reps, level, p_c2)


@dataclass
class MFAConfig:
    family: str = "db3"
    qs: np.ndarray = field(default_factory=default_qgrid)
    j1: int | None = None
    j2: int | None = None
    weighted: bool = True
    dq_convention: str = "partition"
    bootstrap_resamples: int = 0
    bootstrap_level: float = 0.95
    seed: int = 0


@dataclass
class MultifractalSummary:
    """Everything the leader analysis reports for one signal.

    Bootstrap intervals (``*_ci``) are per-signal resampling intervals, not
    across-subject spreads.
    """

    qs: np.ndarray
    zeta: np.ndarray
    r2: np.ndarray
    spectrum: Spectrum
    dq: GeneralizedDimensions
    cumulants: np.ndarray
    scale_range: tuple
    zeta_ci: np.ndarray | None = None
    cumulants_ci: np.ndarray | None = None
    dq_ci: np.ndarray | None = None
    p_value_c2: float | None = None
    replaced_leaders: int = 0

    @property
    def delta_dq(self) -> float:
        return self.dq.delta

    def to_dict(self) -> dict:
        def arr(a):
            return None if a is None else np.asarray(a).tolist()
        return {
            "q": arr(self.qs), "zeta": arr(self.zeta), "r2": arr(self.r2),
            "h": arr(self.spectrum.h), "D_h": arr(self.spectrum.D),
            "spectrum_clipped": self.spectrum.clipped,
            "dq": arr(self.dq.D), "dq_convention": self.dq.convention,
            "dq_undefined_at": self.dq.undefined, "delta_dq": self.dq.delta,
            "c1": float(self.cumulants[0]), "c2": float(self.cumulants[1]),
            "c3": float(self.cumulants[2]), "scale_range": list(self.scale_range),
            "zeta_ci": arr(self.zeta_ci), "cumulants_ci": arr(self.cumulants_ci),
            "dq_ci": arr(self.dq_ci), "p_value_c2": self.p_value_c2,
            "replaced_leaders": self.replaced_leaders,
        }


def analyze(signal, config: MFAConfig | None = None) -> MultifractalSummary:
    """Run the full leader analysis on one signal."""
    cfg = config or MFAConfig()
    qs = validate_qgrid(cfg.qs)
    lf = leaders(dwt(signal, cfg.family))
    d1, d2 = default_scale_range(lf.max_scale)
    j1 = cfg.j1 if cfg.j1 is not None else d1
    j2 = min(cfg.j2 if cfg.j2 is not None else d2, lf.max_scale)
    sf = structure_functions(lf, qs)
    zeta, r2 = scaling_exponents(sf, j1, j2, cfg.weighted)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        spectrum = legendre_spectrum(zeta, qs)
        dq = generalized_dimensions(zeta, qs, cfg.dq_convention)
    cumulants = log_cumulants(lf, j1, j2, cfg.weighted)
    summary = MultifractalSummary(qs, zeta, r2, spectrum, dq, cumulants, (j1, j2),
                                  replaced_leaders=int(sum(lf.replaced)))
    if cfg.bootstrap_resamples:
        kw = dict(resamples=cfg.bootstrap_resamples, level=cfg.bootstrap_level, j1=j1, j2=j2,
                  qs=qs, weighted=cfg.weighted, convention=cfg.dq_convention)
        cb = bootstrap_ci(lf, "cumulants", seed=cfg.seed, **kw)
        zb = bootstrap_ci(lf, "zeta", seed=cfg.seed + 1, **kw)
        db = bootstrap_ci(lf, "dq", seed=cfg.seed + 2, **kw)
        summary.cumulants_ci = np.stack([cb.low, cb.high], axis=1)
        summary.zeta_ci = np.stack([zb.low, zb.high], axis=1)
        summary.dq_ci = np.stack([db.low, db.high], axis=1)
        summary.p_value_c2 = cb.p_value_c2
    return summary
