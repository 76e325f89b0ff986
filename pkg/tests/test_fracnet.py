import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special

from fdnml.errors import DataError, NumericalError
from fdnml.fracnet import (EMOptions, coupling_trajectory, estimate_alpha, fit, gl_difference,
                           psi_weights, read_trajectory, trajectory_rows)
from fdnml.ingest import WindowedSeries
from fdnml.synth import simulate_fdn

C = np.array([[0, .15, 0, .1], [.1, 0, .15, 0], [0, .1, 0, .15], [.15, 0, .1, 0]])
A_TRUE = -1.2 * np.eye(4) + C
ALPHA = np.array([0.6, 0.7, 0.8, 0.9])
B_TRUE = np.array([[.6], [.3], [-.5], [.55]])


def _gamma_psi(alpha, i):
    """Log-gamma evaluation of the GL weight for 0 < alpha < 1 and i >= 1 (negative sign)."""
    return -np.exp(special.gammaln(i - alpha) - special.gammaln(-alpha) - special.gammaln(i + 1))


def _rel(A):
    return np.linalg.norm(A - A_TRUE) / np.linalg.norm(A_TRUE)


def _noisy_window(seed, T=1024):
    rng = np.random.default_rng(seed)
    u = 0.02 * rng.standard_normal((1, T))
    return simulate_fdn(ALPHA, A_TRUE, B=B_TRUE, u=u, x0=rng.standard_normal(4), T=T,
                        noise_std=0.01, memory=100, seed=100 + seed)


def _series(windows, label=1, trial="t"):
    windows = np.asarray(windows)
    return WindowedSeries(windows, np.arange(len(windows)), label,
                          [f"c{i}" for i in range(windows.shape[1])], trial, 256.0)


# ------------------------------------------------------------------ psi


def test_psi_examples():
    np.testing.assert_array_equal(psi_weights(1.0, 5), [1, -1, 0, 0, 0, 0])
    w = psi_weights(0.5, 2)
    assert w[1] == -0.5
    assert w[2] == pytest.approx(special.gamma(1.5) / (special.gamma(-0.5) * special.gamma(3)),
                                 abs=1e-15)
    assert w[2] == -0.125


@pytest.mark.parametrize("alpha", np.round(np.arange(0.1, 0.95, 0.1), 2))
def test_psi_recurrence_matches_log_gamma(alpha):
    i = np.arange(1, 101)
    np.testing.assert_allclose(psi_weights(alpha, 100)[1:], _gamma_psi(alpha, i),
                               rtol=1e-12, atol=0)


def test_psi_rejects_bad_arguments():
    with pytest.raises(ValueError):
        psi_weights(-1.5, 10)
    with pytest.raises(ValueError):
        psi_weights(0.5, 0)


# ------------------------------------------------------------ gl operator


def test_gl_examples():
    np.testing.assert_array_equal(gl_difference([1.0, 2.0, 4.0], 1.0, 2), [1.0, 1.0, 2.0])
    x = np.random.default_rng(0).standard_normal(300)
    np.testing.assert_array_equal(gl_difference(x, 0.0, 50), x)
    out, warm = gl_difference(np.full(300, 2.5), 0.5, 100, return_warmup=True)
    assert out[-1] == pytest.approx(2.5 * psi_weights(0.5, 100).sum(), rel=1e-13)
    assert warm.sum() == 100 and warm[:100].all()


def test_gl_first_difference_is_bit_exact():
    x = np.random.default_rng(1).standard_normal(5000) * 1e3
    out = gl_difference(x, 1.0, 100)
    assert np.array_equal(out[1:], x[1:] - x[:-1])
    assert out[0] == x[0]


def test_gl_errors():
    with pytest.raises(DataError):
        gl_difference(np.zeros((2, 10)), 0.5, 3)
    with pytest.raises(DataError):
        gl_difference(np.zeros(10), 0.5, 10)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), alpha=st.floats(0.05, 1.4),
       a=st.floats(-10, 10), b=st.floats(-10, 10))
def test_gl_is_linear(seed, alpha, a, b):
    rng = np.random.default_rng(seed)
    x, y = rng.standard_normal((2, 400))
    lhs = gl_difference(a * x + b * y, alpha, 100)
    rhs = a * gl_difference(x, alpha, 100) + b * gl_difference(y, alpha, 100)
    np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-12 * (1 + abs(a) + abs(b)) * 10)


# --------------------------------------------------------- alpha estimate


def test_alpha_of_white_noise():
    est = [estimate_alpha(np.random.default_rng(s).standard_normal(4096)).alpha for s in range(10)]
    assert abs(np.mean(est) - 0.5) < 0.1


def test_alpha_of_random_walk():
    x = simulate_fdn([1.0], [[0.0]], noise_std=1.0, T=4096, seed=3)[0]
    assert abs(estimate_alpha(x).alpha - 1.0) < 0.15


def test_alpha_of_constant_channel():
    with pytest.raises(DataError, match="degenerate variance"):
        estimate_alpha(np.full(1024, 4.0))
    with pytest.raises(DataError):
        estimate_alpha(np.zeros(100))


# -------------------------------------------------------------- EM fit


def test_inverse_crime_without_noise():
    x0 = np.random.default_rng(0).standard_normal(4)
    window = simulate_fdn(ALPHA, A_TRUE, x0=x0, T=1024, memory=100)
    model = fit(window, ALPHA, p=1, opts=EMOptions(J_mem=100))
    assert _rel(model.A) < 1e-6
    assert np.linalg.norm(model.B) < 1e-6
    assert np.all(np.diff(model.residual_trace) <= 1e-10 * model.residual_trace[0])


@pytest.mark.parametrize("seed", range(5))
def test_inverse_crime_with_inputs_and_noise(seed):
    model = fit(_noisy_window(seed), ALPHA, p=1, opts=EMOptions(J_mem=100))
    assert _rel(model.A) < 0.10
    trace = np.asarray(model.residual_trace)
    assert np.all(np.diff(trace) <= 1e-10 * trace[:-1])
    np.testing.assert_allclose(np.sqrt(np.mean(model.U ** 2, axis=1)), 1.0)
    np.testing.assert_array_equal(model.C, np.eye(4))


def test_zero_latent_inputs_is_ordinary_least_squares():
    window = _noisy_window(7)
    model = fit(window, ALPHA, p=0, opts=EMOptions(J_mem=100))
    # Independent targets: direct sums with gamma-function weights.
    J = 100
    psi = np.stack([np.r_[1.0, _gamma_psi(a, np.arange(1, J + 1))] for a in ALPHA])
    L = window.shape[1]
    Z = np.stack([[psi[c] @ window[c, k - J: k + 1][::-1] for k in range(J, L)]
                  for c in range(4)])
    X = window[:, J - 1: L - 1]
    ols = np.linalg.lstsq(X.T, Z.T, rcond=None)[0].T
    np.testing.assert_allclose(model.A, ols, rtol=0, atol=1e-10)
    assert model.B.shape == (4, 0)


def test_fit_preconditions():
    with pytest.raises(DataError):
        fit(np.zeros((4, 139)), ALPHA, opts=EMOptions(J_mem=100))
    window = _noisy_window(0, T=300)
    with pytest.raises(DataError):
        fit(window, ALPHA, p=4)
    bad = window.copy()
    bad[0, 5] = np.inf
    with pytest.raises(DataError):
        fit(bad, ALPHA)


# --------------------------------------------------------- trajectories


def test_trajectory_shape_for_many_windows():
    x = _noisy_window(1, T=160 + 201 * 32)
    windows = np.stack([x[:, s:s + 160] for s in range(0, 202 * 32, 32)])
    traj = coupling_trajectory(_series(windows), ALPHA, opts=EMOptions(max_iter=20))
    assert traj.matrices.shape == (202, 16)
    assert traj.valid.all()
    np.testing.assert_array_equal(traj.matrices[0].reshape(4, 4),
                                  fit(windows[0], ALPHA, opts=EMOptions(max_iter=20)).A)


def test_single_window_trajectory_and_round_trip(tmp_path):
    traj = coupling_trajectory(_series(_noisy_window(2, T=400)[None], label=2, trial="abc"), ALPHA)
    assert traj.n_windows == 1
    path = tmp_path / "traj.csv"
    pd.DataFrame(trajectory_rows(traj)).to_csv(path, index=False, float_format="%.17g")
    back = read_trajectory(path)
    np.testing.assert_array_equal(back.matrices, traj.matrices)
    assert back.trial_id == "abc" and back.fatigue_level == 2 and back.valid.all()


def test_read_trajectory_rejects_other_files(tmp_path):
    path = tmp_path / "x.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(DataError):
        read_trajectory(path)


def test_failed_windows_are_marked_or_abort():
    good = _noisy_window(3, T=300)
    windows = np.stack([good, np.zeros_like(good), good, good, good])
    traj = coupling_trajectory(_series(windows), ALPHA, max_invalid_fraction=0.25)
    assert traj.valid.tolist() == [True, False, True, True, True]
    assert np.isnan(traj.matrices[1]).all()
    assert traj.valid_matrices().shape == (4, 16)
    with pytest.raises(NumericalError):
        coupling_trajectory(_series(windows), ALPHA, max_invalid_fraction=0.1)


def test_stationary_dispersion_within_noise_floor():
    L, W = 400, 12
    long = _noisy_window(11, T=L * W)
    traj = coupling_trajectory(_series(long.reshape(4, W, L).transpose(1, 0, 2)), ALPHA)
    spread = np.linalg.norm(traj.matrices - traj.matrices.mean(axis=0), axis=1).mean()
    single = np.stack([fit(_noisy_window(50 + s, T=L), ALPHA).A.ravel() for s in range(W)])
    floor = np.linalg.norm(single - single.mean(axis=0), axis=1).mean()
    assert spread < 3 * floor
