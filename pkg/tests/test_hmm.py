import itertools
import math
from collections import defaultdict

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from unipolar import hmm
from unipolar.errors import DomainError, ValidationError


def path_mi(h, k, observed_ends=False):
    """Conditional mutual information by enumerating every state path."""
    pi = hmm.stationary(h)
    t = h.transition
    n = h.n_states
    joint = defaultdict(float)
    length = k if observed_ends else k + 2
    for path in itertools.product(range(n), repeat=length):
        p = pi[path[0]]
        for a, b in zip(path, path[1:]):
            p *= t[a, b]
        if p == 0:
            continue
        word = path if observed_ends else path[1:-1]
        key = tuple(h.obs_map[s] for s in word)
        joint[(key, path[0], path[-1])] += p
    pb, pab, pbc = defaultdict(float), defaultdict(float), defaultdict(float)
    for (w, a, c), p in joint.items():
        pb[w] += p
        pab[(w, a)] += p
        pbc[(w, c)] += p
    return sum(p * math.log2(p * pb[w] / (pab[(w, a)] * pbc[(w, c)])) for (w, a, c), p in joint.items())


def params(n_star=2, delta=0.5, tau=0.5):
    return hmm.KhmmParams(n_star, delta, tau, (), 1, 0.5, 1.0, delta)


@st.composite
def stochastic(draw, n):
    rows = draw(st.lists(st.lists(st.floats(0.05, 1.0), min_size=n, max_size=n), min_size=n, max_size=n))
    m = np.array(rows)
    return m / m.sum(axis=1, keepdims=True)


class TestModel:
    def test_rejects_non_stochastic(self):
        with pytest.raises(ValidationError):
            hmm.HiddenMarkovModel(np.array([[0.5, 0.4], [0.5, 0.5]]), (0, 1))

    def test_rejects_periodic(self):
        with pytest.raises(ValidationError):
            hmm.HiddenMarkovModel(np.array([[0.0, 1.0], [1.0, 0.0]]), (0, 1))

    def test_json_roundtrip(self):
        h = hmm.gilbert_elliott_hmm(0.1, 0.2, 0.05, 0.3)
        back = hmm.HiddenMarkovModel.from_json(h.to_json())
        assert np.array_equal(back.transition, h.transition)
        assert back.obs_map == h.obs_map

    def test_primitivity(self):
        assert hmm.primitivity_index(np.array([[0.5, 0.5], [1.0, 0.0]])) == 2
        assert hmm.primitivity_index(np.array([[0.0, 1.0], [1.0, 0.0]])) is None


class TestDecompose:
    def test_one_state(self):
        h = hmm.HiddenMarkovModel(np.ones((1, 1)), ("z",))
        assert np.array_equal(hmm.decompose(h)["z"], [[1.0]])

    def test_kaijser_columns(self):
        h = hmm.kaijser()
        m = hmm.decompose(h)["a"]
        assert np.array_equal(m[:, :2], h.transition[:, :2])
        assert not m[:, 2:].any()

    def test_gilbert_elliott_columns(self):
        h = hmm.gilbert_elliott_hmm(0.1, 0.2, 0.05, 0.3)
        m = hmm.decompose(h)[(0, 0)]
        nonzero = np.flatnonzero(m.any(axis=0))
        assert list(nonzero) == [0, 4]

    def test_sum_is_transition(self):
        h = hmm.gilbert_elliott_hmm(0.1, 0.2, 0.05, 0.3)
        assert np.allclose(hmm.decompose(h).matrices.sum(axis=0), h.transition)


class TestStationary:
    def test_symmetric(self):
        assert np.allclose(hmm.stationary(np.full((2, 2), 0.5)), [0.5, 0.5])

    def test_kaijser(self):
        assert np.allclose(hmm.stationary(hmm.kaijser()), 0.25)

    def test_gilbert_elliott(self):
        g, b = 0.05, 0.3
        pi = hmm.stationary(hmm.gilbert_elliott_hmm(0.1, 0.2, g, b))
        good = np.array([1 - g, g, g, 1 - g]) / 2 * (2 / 3)
        bad = np.array([1 - b, b, b, 1 - b]) / 2 * (1 / 3)
        assert np.allclose(pi, np.concatenate([good, bad]))

    @settings(max_examples=50)
    @given(stochastic(4))
    def test_fixed_point(self, m):
        pi = hmm.stationary(m)
        assert np.allclose(pi @ m, pi, atol=1e-12)
        assert pi.sum() == pytest.approx(1.0)


class TestSequenceProbability:
    def test_empty(self):
        assert hmm.seq_prob(hmm.kaijser(), []) == 1.0

    def test_kaijser_single(self):
        assert hmm.seq_prob(hmm.kaijser(), ["a"]) == pytest.approx(0.5)

    @pytest.mark.parametrize("n", [1, 3, 6])
    def test_normalization(self, n):
        h = hmm.gilbert_elliott_hmm(0.1, 0.2, 0.05, 0.3)
        total = sum(hmm.seq_prob(h, w) for w in itertools.product(h.alphabet, repeat=n))
        assert total == pytest.approx(1.0)

    def test_posterior_sums_to_one(self):
        h = hmm.kaijser()
        post = hmm.state_posterior(h, ["a", "b", "b"])
        assert post.sum() == pytest.approx(1.0)

    def test_impossible_word(self):
        h = hmm.HiddenMarkovModel(np.array([[0.5, 0.5], [1.0, 0.0]]), ("a", "b"))
        with pytest.raises(DomainError):
            hmm.state_posterior(h, ["b", "b"])


class TestMixing:
    def test_iid(self):
        ms = hmm.mixing_sequences(np.tile([0.3, 0.7], (2, 1)), 5)
        assert np.allclose(ms.psi[1:], 1.0) and np.allclose(ms.phi[1:], 1.0)

    def test_kaijser_power(self):
        h = hmm.kaijser()
        ratio = np.linalg.matrix_power(h.transition, 3) / 0.25
        ms = hmm.mixing_sequences(h, 3)
        assert ms.psi[3] == pytest.approx(ratio.max())
        assert ms.phi[3] == pytest.approx(ratio.min())

    def test_geometric_tail(self):
        h = hmm.gilbert_elliott_hmm(0.1, 0.2, 0.05, 0.3)
        ms = hmm.mixing_sequences(h, 30)
        k = np.arange(10, 31)
        for seq in (np.log(ms.psi[k] - 1), np.log(1 - ms.phi[k])):
            slope, icpt = np.polyfit(k, seq, 1)
            resid = seq - (slope * k + icpt)
            r2 = 1 - resid.var() / seq.var()
            assert slope < 0 and r2 >= 0.99


class TestDetFromProb:
    def test_deterministic_emission(self):
        chain = np.array([[0.3, 0.7], [0.6, 0.4]])
        h = hmm.det_from_prob(chain, np.eye(2))
        assert np.allclose(h.transition, chain)

    def test_gilbert_elliott_rows(self):
        p, q, g, b = 0.1, 0.2, 0.05, 0.3
        h = hmm.gilbert_elliott_hmm(p, q, g, b)
        pattern = np.array([(1 - p) * (1 - g), (1 - p) * g, (1 - p) * g, (1 - p) * (1 - g), p * (1 - b), p * b, p * b, p * (1 - b)]) / 2
        assert np.allclose(h.transition[0], pattern)

    def test_symmetric_emission(self):
        h = hmm.det_from_prob(np.ones((1, 1)), [[0.5, 0.5]])
        assert np.allclose(h.transition, 0.5)


class TestConditionK:
    def test_positive_matrix(self):
        h = hmm.HiddenMarkovModel(np.array([[0.3, 0.7], [0.6, 0.4]]), ("a", "a"))
        assert len(hmm.find_subrectangular_word(h)) == 1

    def test_kaijser_none(self):
        assert hmm.find_condition_k(hmm.kaijser()) is None

    def test_gilbert_elliott(self):
        k = hmm.find_condition_k(hmm.gilbert_elliott_hmm(0.1, 0.2, 0.05, 0.3))
        assert len(k.witness_word) == 1 and k.k0 == 1
        assert k.delta_bound == pytest.approx(1 - k.alpha0 * k.gamma0)
        assert k.delta_star <= k.delta_bound


class TestBounds:
    def test_tau_zero(self):
        k = params(tau=0.0)
        n, m = 20, 3
        tail = k.alpha(4) * (k.gamma * n) ** m * k.rho ** (n + 1) / math.factorial(m)
        assert hmm.mi_upper_bound(k, 4, n, m) == pytest.approx(tail)

    def test_m_zero(self):
        k = params()
        n = 7
        expect = 4 * math.log2(3) + k.alpha(4) * k.rho ** (n + 1)
        assert hmm.mi_upper_bound(k, 4, n, 0) == pytest.approx(expect)

    def test_fixed_params_mpmath(self):
        mp.mp.dps = 40
        n_star, d, t, a, n, m = 2, mp.mpf("0.5"), mp.mpf("0.5"), 4, 200, 10
        g = 1 / d
        rho = d ** (mp.mpf(1) / n_star)
        expect = 4 * mp.log((1 + t) / (1 - t), 2) * t**m + g * mp.log(a, 2) * (g * n) ** m * rho ** (n + 1) / mp.factorial(m)
        got = hmm.mi_upper_bound(params(), a, n, m)
        assert got == pytest.approx(float(expect), rel=1e-12)

    def test_bad_m(self):
        with pytest.raises(DomainError):
            hmm.mi_upper_bound(params(), 4, 3, 4)


class TestRecollection:
    def test_delta_zero(self):
        k = params(n_star=3, delta=0.0, tau=0.5)
        eps = 2 * 4 * math.log2(3) * 0.5**3.5
        assert hmm.recollection(k, 4, eps) == 15

    def test_scan_oracle(self):
        k = params()
        eps = 1e-3
        m = math.ceil(math.log(eps / 2 / (4 * math.log2(3))) / math.log(0.5))
        tail = [hmm.mi_upper_bound(k, 4, n, m) - 4 * math.log2(3) * 0.5**m for n in range(m, 2000)]
        last_bad = max((m + i for i, v in enumerate(tail) if v > eps / 2), default=m - 1)
        assert hmm.recollection(k, 4, eps) == last_bad + 1
        assert hmm.mi_upper_bound(k, 4, last_bad + 1, m) <= eps

    @given(st.floats(1e-8, 0.5))
    def test_monotone(self, eps):
        k = params(delta=0.3, tau=0.4)
        assert hmm.recollection(k, 4, eps / 10) >= hmm.recollection(k, 4, eps)


class TestExactMi:
    def test_iid(self):
        h = hmm.HiddenMarkovModel(np.tile([0.3, 0.7], (2, 1)), ("a", "b"))
        assert hmm.exact_state_mi(h, 3) == pytest.approx(0.0, abs=1e-12)

    def test_kaijser_does_not_forget(self):
        assert hmm.exact_state_mi(hmm.kaijser(), 6, observed_ends=True) >= 0.9

    @pytest.mark.parametrize("k", [1, 2, 3])
    @pytest.mark.parametrize("ends", [False, True])
    def test_matches_path_enumeration(self, k, ends):
        h = hmm.gilbert_elliott_hmm(0.1, 0.2, 0.05, 0.3)
        assert hmm.exact_state_mi(h, k, ends) == pytest.approx(path_mi(h, k, ends), abs=1e-10)

    def test_capped(self):
        h = hmm.kaijser()
        for k in range(1, 6):
            assert hmm.exact_state_mi(h, k) <= math.log2(h.n_states) + 1e-12
