import itertools
import json
import math
from collections import defaultdict

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from unipolar import process as pr
from unipolar.errors import DomainError, SizeLimitError, ValidationError


def h2(p):
    return 0.0 if p in (0, 1) else -p * math.log2(p) - (1 - p) * math.log2(1 - p)


def brute_window_entropy(m, l0):
    """Window entropy from an explicit sum over state paths and symbol strings."""
    n = 2 * l0 + 1
    joint = defaultdict(float)
    ns, nx, ny = m.n_states, m.nx, m.ny
    for path in itertools.product(range(ns), repeat=n + 1):
        ps = m.pi[path[0]]
        for a, b in zip(path, path[1:]):
            ps *= m.chain[a, b]
        if ps == 0:
            continue
        for xs in itertools.product(range(nx), repeat=n):
            for ys in itertools.product(range(ny), repeat=n):
                p = ps
                for t in range(n):
                    p *= m.emission[path[t + 1], xs[t], ys[t]]
                if p:
                    joint[(xs[: l0 + 1], ys)] += p
    cond = defaultdict(float)
    for (xs, ys), p in joint.items():
        cond[(xs[:-1], ys)] += p
    return -sum(p * math.log2(p / cond[(xs[:-1], ys)]) for (xs, ys), p in joint.items())


def mc_entropy_rate(m, n, trials, seed):
    """Per-symbol ``-log2 P(x | y)`` of long blocks, via scaled forward recursions."""
    rng = np.random.default_rng(seed)
    x, y, _ = pr.sample_blocks(m, n, trials, rng)
    a = m.step_matrices()
    ay = a.sum(axis=0)
    vxy = np.tile(m.pi, (trials, 1))
    vy = vxy.copy()
    lxy = np.zeros(trials)
    ly = np.zeros(trials)
    for t in range(n):
        vxy = np.einsum("ts,tsu->tu", vxy, a[x[:, t], y[:, t]])
        vy = np.einsum("ts,tsu->tu", vy, ay[y[:, t]])
        sx, sy = vxy.sum(1), vy.sum(1)
        lxy += np.log2(sx)
        ly += np.log2(sy)
        vxy /= sx[:, None]
        vy /= sy[:, None]
    vals = (ly - lxy) / n
    return vals.mean(), vals.std(ddof=1) / math.sqrt(trials)


GE = pr.gilbert_elliott(0.1, 0.2, 0.05, 0.3)


class TestModel:
    def test_json_roundtrip(self):
        back = pr.FaimModel.from_json(json.loads(json.dumps(GE.to_json())))
        assert np.allclose(back.chain, GE.chain) and np.allclose(back.emission, GE.emission)

    def test_from_hmm_json(self):
        h = pr.kaijser_faim().hmm_xy()
        m = pr.FaimModel.from_json(h.to_json())
        back = m.hmm_xy()
        assert np.allclose(back.transition, h.transition) and back.alphabet == h.alphabet

    def test_rejects_bad_emission(self):
        with pytest.raises(ValidationError):
            pr.FaimModel(np.ones((1, 1)), np.ones((1, 2, 2)))

    def test_symmetric_input(self):
        assert GE.is_symmetric_input()
        assert not pr.kaijser_faim().is_symmetric_input()

    def test_step_matrices_sum_to_chain(self):
        assert np.allclose(GE.step_matrices().sum(axis=(0, 1)), GE.chain)


class TestSampling:
    def test_shapes_and_determinism(self):
        a = pr.sample_block(GE, 50, seed=4)
        b = pr.sample_block(GE, 50, seed=4)
        assert a.x.shape == (50,) and a.s.shape == (51,)
        assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)

    def test_near_deterministic_chain_follows_orbit(self):
        eps = 1e-12
        chain = np.array([[eps, 1 - eps, 0], [0, eps, 1 - eps], [1 - eps, 0, eps]])
        m = pr.FaimModel(chain, np.full((3, 2, 1), 0.5))
        s = pr.sample_block(m, 30, seed=1).s
        assert np.all((s[1:] - s[:-1]) % 3 == 1)

    def test_input_marginal(self):
        s = pr.sample_block(GE, 100000, seed=2)
        sigma = math.sqrt(0.25 / 100000)
        assert abs(s.x.mean() - 0.5) <= 3 * sigma

    def test_emission_given_state(self):
        s = pr.sample_block(GE, 100000, seed=3)
        state = s.s[1:]
        flip = s.x != s.y
        for st_, p in ((0, 0.05), (1, 0.3)):
            sel = flip[state == st_]
            assert abs(sel.mean() - p) <= 3 * math.sqrt(p * (1 - p) / sel.size)

    def test_bi_single_block_matches(self):
        rng1, rng2 = np.random.default_rng(5), np.random.default_rng(5)
        x1, y1, _ = pr.sample_bi_blocks(GE, 12, 1, 40, rng1)
        x2, y2, _ = pr.sample_blocks(GE, 12, 40, rng2)
        assert np.array_equal(x1, x2) and np.array_equal(y1, y2)

    def test_bi_memoryless_moments(self):
        m = pr.bsc(0.2)
        x, y, _ = pr.sample_bi_blocks(m, 4, 5, 4000, np.random.default_rng(6))
        xs, ys, _ = pr.sample_blocks(m, 20, 4000, np.random.default_rng(7))
        f1, f2 = (x != y).mean(), (xs != ys).mean()
        se = math.sqrt(0.16 / x.size) * math.sqrt(2)
        assert abs(f1 - f2) <= 4 * se

    def test_bi_boundary_decorrelated(self):
        m = pr.gilbert_elliott(0.02, 0.02, 0.0, 0.5)
        x, y, _ = pr.sample_bi_blocks(m, 8, 2, 20000, np.random.default_rng(8))
        e = (x != y).astype(float)
        across = np.corrcoef(e[:, 7], e[:, 8])[0, 1]
        within = np.corrcoef(e[:, 6], e[:, 7])[0, 1]
        assert abs(across) <= 4 / math.sqrt(20000)
        assert within > 0.2

    def test_transmit_rejects_asymmetric(self):
        with pytest.raises(ValidationError):
            pr.transmit(pr.kaijser_faim(), np.zeros((1, 4)), np.random.default_rng(0))

    def test_transmit_noiseless(self):
        m = pr.gilbert_elliott(0.1, 0.1, 0.0, 0.0)
        x = np.random.default_rng(1).integers(0, 2, (3, 40))
        assert np.array_equal(pr.transmit(m, x, np.random.default_rng(2)), x)


class TestWindowEntropy:
    @pytest.mark.parametrize("p", [0.05, 0.11, 0.3])
    def test_bsc(self, p):
        assert pr.window_entropy(pr.bsc(p), 0) == pytest.approx(h2(p))

    @pytest.mark.parametrize("l0", [0, 1, 3])
    def test_identical_states(self, l0):
        assert pr.window_entropy(pr.gilbert_elliott(0.1, 0.3, 0.2, 0.2), l0) == pytest.approx(h2(0.2))

    def test_noiseless(self):
        assert pr.window_entropy(pr.gilbert_elliott(0.1, 0.3, 0.0, 0.0), 2) == pytest.approx(0.0, abs=1e-12)

    @pytest.mark.parametrize("l0", [0, 1, 2])
    def test_matches_brute_force(self, l0):
        assert pr.window_entropy(GE, l0) == pytest.approx(brute_window_entropy(GE, l0), abs=1e-12)

    def test_asymmetric_model(self):
        chain = np.array([[0.7, 0.3], [0.4, 0.6]])
        q = np.array([[[0.5, 0.1], [0.1, 0.3]], [[0.1, 0.2], [0.3, 0.4]]])
        m = pr.FaimModel(chain, q)
        assert pr.window_entropy(m, 1) == pytest.approx(brute_window_entropy(m, 1), abs=1e-12)

    def test_anchor_invariant(self):
        assert pr.window_entropy(GE, 2, anchor=5) == pytest.approx(pr.window_entropy(GE, 2))

    def test_nonincreasing_in_window(self):
        vals = [pr.window_entropy(GE, l0) for l0 in range(5)]
        assert all(b <= a + 1e-12 for a, b in zip(vals, vals[1:]))

    def test_mc_agrees(self):
        mean, se = pr.window_entropy_mc(GE, 2, 20000, seed=9)
        assert abs(mean - pr.window_entropy(GE, 2)) <= 3 * se

    def test_size_limit(self):
        with pytest.raises(SizeLimitError):
            pr.window_entropy(GE, 12)

    def test_block_entropy_chain_rule(self):
        h1 = pr.exact_block_entropy(pr.bsc(0.1), 3)
        assert h1 == pytest.approx(3 * h2(0.1))


class TestForgetfulness:
    def test_gilbert_elliott_certified(self):
        r = pr.forgetfulness_report(GE, 1e-3)
        assert r.certified
        assert len(r.xy_params.witness_word) == 1 and len(r.y_params.witness_word) == 1

    def test_kaijser_state_symbol_fails_y(self):
        r = pr.forgetfulness_report(pr.kaijser_faim("state_symbol"), 1e-3)
        assert not r.certified and r.failed_sides == ("y",)
        assert r.xy_params is not None

    def test_kaijser_observation_symbol_fails_xy(self):
        r = pr.forgetfulness_report(pr.kaijser_faim("observation_symbol"), 1e-3)
        assert r.failed_sides == ("xy",) and r.y_params is not None

    def test_eps_positive(self):
        with pytest.raises(DomainError):
            pr.forgetfulness_report(GE, 0.0)

    def test_memoryless_degenerate_bracket(self):
        m = pr.bsc(0.1)
        r = pr.forgetfulness_for_l0(m, 4)
        assert r.epsilon == 0.0
        lo, hi = pr.entropy_rate_bracket(m, 4, r)
        assert lo == hi == pytest.approx(h2(0.1))

    def test_eps_monotone_in_l0(self):
        eps = [pr.forgetfulness_for_l0(GE, l0).epsilon for l0 in range(8, 40, 4)]
        assert all(b <= a for a, b in zip(eps, eps[1:]))

    @settings(max_examples=20, deadline=None)
    @given(st.floats(1e-9, 1e-1))
    def test_recollection_fits_l0(self, eps):
        r = pr.forgetfulness_report(GE, eps)
        back = pr.forgetfulness_for_l0(GE, r.recollection)
        assert back.recollection <= r.recollection and back.epsilon <= eps * (1 + 1e-9)

    def test_bracket_contains_rate(self):
        m = pr.gilbert_elliott(0.49, 0.49, 0.08, 0.25)
        r = pr.forgetfulness_for_l0(m, 6)
        lo, hi = pr.entropy_rate_bracket(m, 6, r)
        mean, se = mc_entropy_rate(m, 2000, 200, seed=10)
        assert lo - 3 * se <= mean <= hi + 3 * se

    def test_bracket_needs_certificate(self):
        r = pr.forgetfulness_for_l0(GE, 40)
        with pytest.raises(DomainError):
            pr.entropy_rate_bracket(GE, 10, r)
