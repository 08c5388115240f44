"""Fast stage: Arikan transform, Bhattacharyya-bound evolution and universal constants.

Fast-stage indices are decoding positions ``k = 0 .. Nhat-1``. The binary
expansion of ``k`` (most significant bit first) lists the polarization steps in
the order they are applied: bit 1 is the upgraded branch (``Z -> kappa Z^2``)
and bit 0 the degraded one (``Z -> kappa Z``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from unipolar.errors import ValidationError


def _log2_exact(n: int) -> int:
    if n < 1 or n & (n - 1):
        raise ValidationError(f"length {n} is not a power of two")
    return n.bit_length() - 1


def bit_reversal(n: int) -> np.ndarray:
    """Permutation ``s -> bitrev(s)`` for length ``n`` (a power of two)."""
    m = _log2_exact(n)
    idx = np.arange(n)
    out = np.zeros(n, dtype=np.int64)
    for b in range(m):
        out |= ((idx >> b) & 1) << (m - 1 - b)
    return out


def polar_transform(u) -> np.ndarray:
    """``u G^{(x)n}`` over GF(2) with kernel ``[[1, 0], [1, 1]]``, along the last axis."""
    x = np.array(u, dtype=np.uint8, copy=True)
    n = x.shape[-1]
    _log2_exact(n)
    h = 1
    while h < n:
        v = x.reshape(x.shape[:-1] + (n // (2 * h), 2, h))
        v[..., 0, :] ^= v[..., 1, :]
        h *= 2
    return x


def arikan(u) -> np.ndarray:
    """Bit-reversed Kronecker-power transform; it is an involution."""
    x = polar_transform(u)
    return x[..., bit_reversal(x.shape[-1])]


def arikan_matrix(n: int) -> np.ndarray:
    """Matrix ``A`` with ``arikan(u) = A u mod 2``."""
    return arikan(np.eye(n, dtype=np.uint8)).T


# ---------------------------------------------------------------------------
# Bhattacharyya bounds


@dataclass(frozen=True, eq=False)
class ZDesign:
    kappa: float
    nhat: int
    z0: float
    log_bounds: np.ndarray  # unclipped natural-log bounds per decoding position

    @property
    def bounds(self) -> np.ndarray:
        return np.exp(np.minimum(self.log_bounds, 0.0))

    @property
    def size(self) -> int:
        return 2**self.nhat


def branch_bits(k: int, nhat: int) -> list[int]:
    """Recursion branches ``B_1..B_nhat`` (0 squares) of decoding position ``k``."""
    return [1 - ((k >> (nhat - 1 - t)) & 1) for t in range(nhat)]


def z_evolution(z0: float, kappa: float, nhat: int) -> ZDesign:
    if not 0.0 <= z0 <= 1.0:
        raise ValidationError("z0 must lie in [0, 1]")
    if kappa <= 1:
        raise ValidationError("kappa must exceed 1")
    if nhat < 0:
        raise ValidationError("nhat must be nonnegative")
    lk = math.log(kappa)
    with np.errstate(divide="ignore"):
        lz = np.array([np.log(z0)])
    for _ in range(nhat):
        lz = np.stack([lz + lk, 2 * lz + lk], axis=1).reshape(-1)
    return ZDesign(float(kappa), int(nhat), float(z0), lz)


@dataclass(frozen=True, eq=False)
class FrozenSets:
    frozen: np.ndarray
    unfrozen: np.ndarray
    threshold: float

    @property
    def rate(self) -> float:
        return len(self.unfrozen) / (len(self.frozen) + len(self.unfrozen))


def select_frozen(design: ZDesign, threshold: float) -> FrozenSets:
    """Unfreeze every position whose clipped bound is at most ``threshold``."""
    if threshold >= 1:
        ok = np.ones(design.size, dtype=bool)
    elif threshold <= 0:
        ok = np.isneginf(design.log_bounds) if threshold == 0 else np.zeros(design.size, dtype=bool)
    else:
        ok = design.log_bounds <= math.log(threshold)
    return FrozenSets(np.flatnonzero(~ok), np.flatnonzero(ok), float(threshold))


def select_by_rate(scores: np.ndarray, n_unfrozen: int) -> FrozenSets:
    """Unfreeze the ``n_unfrozen`` positions with the smallest scores (ties by index)."""
    scores = np.asarray(scores, dtype=float)
    if not 0 <= n_unfrozen <= len(scores):
        raise ValidationError("n_unfrozen out of range")
    order = np.lexsort((np.arange(len(scores)), scores))
    ok = np.zeros(len(scores), dtype=bool)
    ok[order[:n_unfrozen]] = True
    thr = float(scores[order[n_unfrozen - 1]]) if n_unfrozen else -math.inf
    return FrozenSets(np.flatnonzero(~ok), np.flatnonzero(ok), thr)


# ---------------------------------------------------------------------------
# Universal fast-polarization constants


@dataclass(frozen=True)
class UniversalParams:
    kappa: float
    delta_prime: float
    eps_a: float
    r: float
    eta: float
    n_a: int
    zeta: float
    theta: float
    mu: float
    gamma: float

    def to_json(self) -> dict:
        return {"r": self.r, "eta": self.eta, "n_a": self.n_a}


def lundberg_exponent(kappa: float, zeta: float) -> float:
    """Largest positive root of ``((kappa zeta)^r + kappa^r) / 2 = 1``."""
    if not (kappa > 1 and 0 < zeta < 1 / kappa**2):
        raise ValidationError("need kappa > 1 and 0 < zeta < 1/kappa^2")
    a, c = math.log(kappa), math.log(kappa * zeta)

    def g(r):
        return 0.5 * (math.exp(c * r) + math.exp(a * r)) - 1.0

    hi = 1.0
    while g(hi) <= 0:
        hi *= 2
    # g is convex with g(0) = 0 and g'(0) < 0, so the positive root is unique.
    lo = hi / 2
    while g(lo) > 0:
        lo /= 2
    return brentq(g, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)


def universal_params(kappa: float, delta_prime: float, eps_a: float, gamma: float = 0.5, zeta: float | None = None) -> UniversalParams:
    if kappa <= 1:
        raise ValidationError("kappa must exceed 1")
    if not (0 < delta_prime < 1 and 0 < eps_a < 1 and 0 < gamma < 1):
        raise ValidationError("delta_prime, eps_a and gamma must lie in (0, 1)")
    zeta = 1.0 / (2 * kappa**2) if zeta is None else zeta
    r = lundberg_exponent(kappa, zeta)
    mu = 0.5 * math.log(kappa**2 * zeta)
    a, b = math.log(kappa), -math.log(kappa * zeta)
    theta = abs(mu) / (a + b)
    j0 = math.log(zeta) + math.log(delta_prime / 2) / r
    t1 = (j0 - math.log(eps_a)) / ((1 - gamma) * abs(mu))
    g2 = 2 * gamma**2 * theta**2
    t2 = math.log(2 / (delta_prime * (1 - math.exp(-g2)))) / g2
    n_a = max(0, math.ceil(max(t1, t2)))
    return UniversalParams(kappa, delta_prime, eps_a, r, math.exp(j0), n_a, zeta, theta, mu, gamma)


def _walk_branches(rng: np.random.Generator, trials: int, steps: int) -> np.ndarray:
    return rng.integers(0, 2, size=(trials, steps), dtype=np.int8)


def fast_polarization_check(
    params: UniversalParams,
    kappa: float,
    z0: float,
    nhat: int,
    beta: float,
    trials: int,
    seed: int,
    chunk: int = 4096,
) -> tuple[float, float]:
    """Monte-Carlo rate of branches with ``Zbar_n > ln 2^{-2^{n beta}}`` for some ``n`` in ``[n_a, nhat]``.

    Returns ``(rate, standard error)``.
    """
    if not 0 < beta < 0.5:
        raise ValidationError("beta must lie in (0, 1/2)")
    if nhat < params.n_a:
        raise ValidationError(f"nhat {nhat} below n_a {params.n_a}: empty window")
    if z0 > params.eta:
        raise ValidationError("z0 must not exceed eta")
    if z0 == 0:
        return 0.0, 0.0
    lk = math.log(kappa)
    target = -(2.0 ** (np.arange(nhat + 1) * beta)) * math.log(2)
    rng = np.random.default_rng(seed)
    bad = 0
    for start in range(0, trials, chunk):
        t = min(chunk, trials - start)
        br = _walk_branches(rng, t, nhat)
        z = np.full(t, math.log(z0))
        viol = np.zeros(t, dtype=bool)
        if params.n_a == 0:
            viol |= z > target[0]
        for n in range(1, nhat + 1):
            z = np.where(br[:, n - 1] == 0, 2 * z, z) + lk
            if n >= params.n_a:
                viol |= z > target[n]
        bad += int(viol.sum())
    rate = bad / trials
    return rate, math.sqrt(max(rate * (1 - rate), 1.0 / trials) / trials)


def lundberg_check(kappa: float, alpha: float, trials: int, seed: int, steps: int = 400, zeta: float | None = None):
    """Frequency of the walk ``J_n`` reaching ``alpha`` against the bound ``exp(-r alpha)``.

    Returns ``(frequency, standard error, bound)``; paths are truncated at ``steps``.
    """
    zeta = 1.0 / (2 * kappa**2) if zeta is None else zeta
    r = lundberg_exponent(kappa, zeta)
    steps_val = np.array([math.log(kappa) + math.log(zeta), math.log(kappa)])
    rng = np.random.default_rng(seed)
    walk = np.cumsum(steps_val[_walk_branches(rng, trials, steps)], axis=1)
    hit = (walk >= alpha).any(axis=1)
    freq = float(hit.mean())
    return freq, math.sqrt(max(freq * (1 - freq), 1.0 / trials) / trials), math.exp(-r * alpha)
