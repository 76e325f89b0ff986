import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from fdnml.complexity import BinarySequence, binarize, group_compare, lz76, lz76_phrase_count
from fdnml.errors import DataError
from fdnml.fracnet import CouplingTrajectory

from lz_oracle import lz76_brute

bitstrings = st.text(alphabet="01", min_size=2, max_size=300)


def _c(s: str) -> int:
    return lz76(BinarySequence.from_string(s)).c


def test_examples():
    assert _c("0" * 16) == 2 == lz76_brute("0" * 16)
    assert _c("01") == 2
    assert lz76_brute("0001101001000101") == _c("0001101001000101") == 6


def test_complexity_index_formula():
    r = lz76(BinarySequence.from_string("0001101001000101"))
    assert r.n == 16
    assert r.ci == pytest.approx(6 * 4 / 16, abs=1e-15)


@pytest.mark.parametrize("seed", range(3))
def test_matches_oracle_on_random_strings(seed):
    rng = np.random.default_rng(seed)
    for _ in range(150):
        n = int(rng.integers(2, 400))
        p = rng.uniform(0.05, 0.95)
        s = "".join("1" if b else "0" for b in rng.random(n) < p)
        assert _c(s) == lz76_brute(s), s


def test_long_phrases_beyond_packed_words():
    # Periodic blocks and long repeats exercise the byte-search path.
    rng = np.random.default_rng(7)
    base = "".join(rng.choice(["0", "1"], 100))
    for s in (base * 5, base + base[::-1] * 3, "0" * 500 + "1" + "0" * 500,
              base + "1" * 200 + base):
        assert _c(s) == lz76_brute(s)


@settings(max_examples=200, deadline=None)
@given(bitstrings)
def test_oracle_equivalence_property(s):
    assert _c(s) == lz76_brute(s)


@settings(max_examples=100, deadline=None)
@given(bitstrings)
def test_bit_flip_invariance(s):
    flipped = s.translate(str.maketrans("01", "10"))
    assert _c(s) == _c(flipped)


@settings(max_examples=100, deadline=None)
@given(bitstrings, st.text(alphabet="01", min_size=0, max_size=100))
def test_extension_never_lowers_complexity(s, t):
    assert _c(s) <= _c(s + t)


def test_period_two_is_simple():
    s = "01" * 512
    assert lz76_brute(s) <= 6
    assert _c(s) <= 6


def test_random_bits_approach_entropy_rate():
    gaps = []
    for e in (10, 12, 14, 16):
        ci = [lz76(np.random.default_rng(s).integers(0, 2, 2 ** e)).ci for s in range(10)]
        gaps.append(abs(np.median(ci) - 1.0))
    assert all(b < a for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] < 0.05


def test_phrase_count_accepts_arrays():
    bits = np.random.default_rng(0).integers(0, 2, 500)
    s = "".join(map(str, bits))
    assert lz76_phrase_count(bits) == lz76_brute(s)


def test_binary_sequence_validation():
    with pytest.raises(DataError):
        BinarySequence(np.array([1]), 0.0)
    with pytest.raises(DataError):
        BinarySequence(np.array([0, 2]), 0.0)
    assert str(BinarySequence.from_string("0110")) == "0110"


# ------------------------------------------------------------ binarize


def test_binarize_examples():
    b = binarize([1, 2, 3, 4])
    assert b.bits.tolist() == [0, 0, 1, 1]
    assert b.threshold_used == 2.5
    assert not b.degenerate
    c = binarize(np.full(10, 7.0))
    assert c.degenerate and not c.bits.any()


def test_binarize_trajectory_uses_valid_rows():
    rng = np.random.default_rng(0)
    m = rng.standard_normal((202, 16))
    traj = CouplingTrajectory(m, np.ones(202, dtype=bool), "t", 0)
    assert binarize(traj).n == 3232
    valid = np.ones(202, dtype=bool)
    valid[5] = False
    m2 = m.copy()
    m2[5] = np.nan
    b = binarize(CouplingTrajectory(m2, valid, "t", 0))
    assert b.n == 201 * 16
    np.testing.assert_array_equal(b.bits, binarize(np.delete(m, 5, axis=0)).bits)


# ------------------------------------------------------- group compare


def test_kruskal_hand_computation():
    rep = group_compare({0: [1, 2, 3], 1: [101, 102, 103]})
    # ranks 1..3 and 4..6: H = 12 / (6 * 7) * (6**2 / 3 + 15**2 / 3) - 3 * 7
    assert rep.statistic == pytest.approx(12 / 42 * (36 / 3 + 225 / 3) - 21, abs=1e-12)
    assert rep.statistic == pytest.approx(3.857, abs=1e-3)
    assert rep.p_value == pytest.approx(stats.chi2.sf(rep.statistic, 1), abs=1e-12)
    assert rep.p_value < 0.05
    assert rep.means == {0: 2.0, 1: 102.0}
    assert rep.counts == {0: 3, 1: 3}
    assert set(rep.density) == {0, 1}
    assert np.trapezoid(rep.density[0]["pdf"], rep.density[0]["x"]) == pytest.approx(1, abs=0.05)
    assert set(rep.to_dict()) >= {"kruskal_h", "p_value", "means"}


def test_identical_groups_show_no_effect():
    rep = group_compare({0: [1.0, 2.0, 3.0], 1: [1.0, 2.0, 3.0], 2: [1.0, 2.0, 3.0]})
    assert rep.statistic == pytest.approx(0.0, abs=1e-12)
    assert rep.p_value == pytest.approx(1.0)


def test_group_compare_errors():
    with pytest.raises(DataError):
        group_compare({0: [1.0, 2.0]})
    with pytest.raises(DataError):
        group_compare({0: [1.0, 2.0], 1: [3.0]})
    with pytest.raises(DataError):
        group_compare({0: [1.0, 1.0], 1: [1.0, 1.0]})
