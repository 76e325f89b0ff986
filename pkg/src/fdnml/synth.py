"""Synthetic signals with known scaling, used as ground truth for the estimators.

``gen_fbm`` draws exact fractional Brownian motion by circulant embedding of
fractional Gaussian noise, ``gen_cascade`` integrates a random binomial
multiplicative measure, and ``simulate_fdn`` runs the fractional network
forward by inverting the Grunwald-Letnikov expansion.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import ConfigError, NumericalError
from .fracnet import psi_weights


@dataclass(frozen=True)
class FbmSpec:
    hurst: float
    n: int = 4096
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.hurst < 1:
            raise ConfigError(f"hurst must lie in (0, 1), got {self.hurst}")
        if self.n < 256 or self.n & (self.n - 1):
            raise ConfigError(f"n must be a power of two >= 256, got {self.n}")


@dataclass(frozen=True)
class CascadeSpec:
    depth: int = 14
    weight: float = 0.7
    seed: int = 0

    def __post_init__(self):
        if self.depth < 8:
            raise ConfigError(f"cascade depth must be >= 8, got {self.depth}")
        # 0.5 is accepted as the degenerate (uniform) control case.
        if not 0.5 <= self.weight < 1:
            raise ConfigError(f"cascade weight must lie in [0.5, 1), got {self.weight}")


@dataclass(frozen=True)
class CascadePath:
    """A cascade realisation: the measure, its running sum, and the exact scaling."""

    measure: np.ndarray
    path: np.ndarray
    weight: float

    def zeta(self, q):
        """Scaling exponents of the integrated cascade.

        The dyadic masses at any level form the same multiset for every
        realisation, so the structure function is deterministic:
        ``zeta(q) = 1 - log2(w**q + (1 - w)**q)``.
        """
        q = np.asarray(q, dtype=float)
        w = self.weight
        return 1.0 - np.log2(w ** q + (1.0 - w) ** q)


def fgn_autocovariance(hurst: float, n: int) -> np.ndarray:
    k = np.arange(n, dtype=float)
    two_h = 2.0 * hurst
    return 0.5 * (np.abs(k + 1) ** two_h - 2 * k ** two_h + np.abs(k - 1) ** two_h)


def gen_fgn(hurst: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """Unit-variance fractional Gaussian noise of length ``n`` (Davies-Harte)."""
    gamma = fgn_autocovariance(hurst, n + 1)
    row = np.concatenate([gamma[:n + 1], gamma[n - 1:0:-1]])  # length 2n
    eig = np.fft.fft(row).real
    if eig.min() < -1e-10 * eig.max():
        warnings.warn(
            f"circulant embedding not nonnegative definite (H={hurst}, n={n}); "
            "falling back to Cholesky",
            RuntimeWarning,
            stacklevel=2,
        )
        cov = linalg.toeplitz(gamma[:n])
        return linalg.cholesky(cov, lower=True) @ rng.standard_normal(n)
    eig = np.clip(eig, 0.0, None)
    m = row.size
    w = rng.standard_normal(m) + 1j * rng.standard_normal(m)
    z = np.fft.fft(np.sqrt(eig / m) * w)
    return z.real[:n]


def gen_fbm(spec: FbmSpec) -> np.ndarray:
    """Fractional Brownian motion sample path of length ``spec.n``."""
    rng = np.random.default_rng(spec.seed)
    return np.cumsum(gen_fgn(spec.hurst, spec.n, rng))


def gen_cascade(spec: CascadeSpec) -> CascadePath:
    """Random binomial cascade on ``2**depth`` cells, integrated to a path.

    At every split the left child receives ``w`` or ``1 - w`` of the parent
    mass with equal probability.
    """
    rng = np.random.default_rng(spec.seed)
    w = spec.weight
    measure = np.ones(1)
    for _ in range(spec.depth):
        left = np.where(rng.random(measure.size) < 0.5, w, 1.0 - w)
        measure = np.column_stack([measure * left, measure * (1.0 - left)]).ravel()
    return CascadePath(measure=measure, path=np.cumsum(measure), weight=w)


def simulate_fdn(alpha, A, B=None, u=None, x0=None, T: int = 1024,
                 noise_std: float = 0.0, memory: int | None = None,
                 seed: int = 0) -> np.ndarray:
    """Simulate ``Delta^alpha x[k+1] = A x[k] + B u[k] + noise``.

    Args:
        alpha: Fractional order per channel, shape (n,).
        A: Coupling matrix (n, n).
        B: Input map (n, p); omitted means no input.
        u: Inputs (p, T).
        x0: Initial state; zeros when omitted.
        T: Number of samples returned, including ``x0``.
        noise_std: Standard deviation of additive Gaussian state noise.
        memory: Truncation of the GL sum (number of past lags); ``None`` keeps
            the full history.
        seed: Seed for the noise draw.

    Returns:
        States of shape (n, T).
    """
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    if alpha.size == 1:
        alpha = np.full(n, alpha[0])
    if A.shape != (n, n) or alpha.shape != (n,):
        raise ConfigError(f"A must be square and alpha length n; got {A.shape}, {alpha.shape}")
    drive = np.zeros((n, T))
    if B is not None:
        B = np.asarray(B, dtype=float).reshape(n, -1)
        u = np.asarray(u, dtype=float).reshape(B.shape[1], -1)
        if u.shape[1] < T - 1:
            raise ConfigError(f"need {T - 1} input samples, got {u.shape[1]}")
        drive[:, : T - 1] = B @ u[:, : T - 1]
    if noise_std > 0:
        rng = np.random.default_rng(seed)
        drive[:, : T - 1] += noise_std * rng.standard_normal((n, T - 1))

    horizon = T if memory is None else min(memory, T)
    psi = np.stack([psi_weights(a, horizon) for a in alpha])  # (n, horizon + 1)
    x = np.zeros((n, T))
    if x0 is not None:
        x[:, 0] = x0
    for k in range(T - 1):
        lags = min(k + 1, horizon)
        # sum_{i=1}^{lags} psi(i) x[k+1-i]  ==  psi[:, 1:lags+1] . x[:, k::-1][:lags]
        past = x[:, k - lags + 1: k + 1][:, ::-1]
        memory_term = np.einsum("ij,ij->i", psi[:, 1: lags + 1], past)
        x[:, k + 1] = A @ x[:, k] + drive[:, k] - memory_term
        if not np.all(np.abs(x[:, k + 1]) < 1e9):
            raise NumericalError(f"simulation diverged at step {k + 1}")
    return x


@dataclass(frozen=True)
class LevelProfile:
    """Generating parameters of one synthetic fatigue level."""

    alpha: float
    cascade_weight: float
    coupling: np.ndarray


def _ring(n: int, strength: float, shift: int = 1) -> np.ndarray:
    return strength * np.roll(np.eye(n), shift, axis=1)


def default_profiles(n_channels: int = 4) -> dict[int, LevelProfile]:
    """Three levels that differ in memory (c1), intermittency (c2) and coupling layout.

    Level 0 is monofractal with weak nearest-neighbour coupling; level 1 adds
    mild intermittency and a reversed ring; level 2 is strongly intermittent
    with long-range coupling between opposite channels.
    """
    n = n_channels
    base = -0.6 * np.eye(n)
    return {
        0: LevelProfile(0.55, 0.50, base + _ring(n, 0.10)),
        1: LevelProfile(0.70, 0.62, base + _ring(n, 0.15, -1)),
        2: LevelProfile(0.85, 0.72, base + _ring(n, 0.20, n // 2) + _ring(n, 0.05)),
    }


def synthetic_recording(profile: LevelProfile, level: int, n_samples: int = 4096,
                        channels=("TP9", "AF7", "AF8", "TP10"), sample_rate_hz: float = 256.0,
                        trial_id: str = "synthetic", jitter: float = 0.03, memory: int = 100,
                        seed: int = 0):
    """One multichannel trial from a fractional network with intermittent drive.

    The innovations are Gaussian noise scaled by the square root of a random
    binomial cascade, so ``profile.cascade_weight`` sets the intermittency;
    ``jitter`` perturbs alpha and the coupling per trial.
    """
    from .ingest import EegRecording  # deferred: ingest is not needed for the generators

    if n_samples < 256 or n_samples & (n_samples - 1):
        raise ConfigError(f"n_samples must be a power of two >= 256, got {n_samples}")
    n = len(channels)
    rng = np.random.default_rng(seed)
    alpha = np.clip(profile.alpha + jitter * rng.standard_normal(n), 0.1, 1.4)
    A = profile.coupling + jitter * rng.standard_normal((n, n)) * (profile.coupling != 0)
    depth = int(np.log2(n_samples))
    drive = np.empty((n, n_samples))
    for c in range(n):
        cascade = gen_cascade(CascadeSpec(depth, profile.cascade_weight, int(rng.integers(2**31))))
        volatility = np.sqrt(cascade.measure * n_samples)
        drive[c] = volatility * rng.standard_normal(n_samples)
    x = simulate_fdn(alpha, A, B=np.eye(n), u=drive, x0=np.zeros(n), T=n_samples,
                     memory=memory)
    return EegRecording(channels=list(channels), samples=10.0 * x,
                        sample_rate_hz=sample_rate_hz, trial_id=trial_id, fatigue_level=level,
                        diagnostics={"rows_read": n_samples, "rows_dropped": 0, "channels": n})


def synthetic_cohort(subjects: int = 3, trials_per_level: int = 2, n_samples: int = 4096,
                     profiles: dict | None = None, seed: int = 0) -> list:
    """Recordings for ``subjects`` fake subjects, every level, ``trials_per_level`` each."""
    profiles = profiles or default_profiles()
    seeds = np.random.SeedSequence(seed).generate_state(subjects * len(profiles) * trials_per_level)
    out, k = [], 0
    for s in range(subjects):
        for level in sorted(profiles):
            for t in range(trials_per_level):
                out.append(synthetic_recording(profiles[level], level, n_samples,
                                               trial_id=f"s{s}_l{level}_t{t}", seed=int(seeds[k])))
                k += 1
    return out
