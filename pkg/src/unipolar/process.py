"""FAIM processes: a hidden Markov state driving (symbol, observation) pairs.

``S_j`` is a primitive Markov chain and ``(X_j, Y_j)`` is drawn from
``q(x, y | S_j)``. Symbols and observations are integer indices; coding
requires ``X`` binary, while the analysis routines accept any finite ``X``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from unipolar import hmm as _hmm
from unipolar.errors import DomainError, SizeLimitError, ValidationError

WINDOW_LIMIT = 10**7


@dataclass(frozen=True, eq=False)
class FaimModel:
    """State chain ``P[s, s']`` and emission table ``q[s, x, y]``."""

    chain: np.ndarray
    emission: np.ndarray
    name: str = "faim"
    pi: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        chain = _hmm._check_stochastic(self.chain, "state chain")
        if _hmm.primitivity_index(chain) is None:
            raise ValidationError("state chain is not primitive")
        q = np.asarray(self.emission, dtype=float)
        if q.ndim != 3 or q.shape[0] != chain.shape[0]:
            raise ValidationError("emission must have shape (|S|, |X|, |Y|)")
        if np.any(q < 0) or np.max(np.abs(q.sum(axis=(1, 2)) - 1.0)) > _hmm.ROW_TOL:
            raise ValidationError("emission rows must be distributions over (x, y)")
        for arr in (chain, q):
            arr.setflags(write=False)
        object.__setattr__(self, "chain", chain)
        object.__setattr__(self, "emission", q)
        pi = _hmm.stationary(chain)
        pi.setflags(write=False)
        object.__setattr__(self, "pi", pi)

    @property
    def n_states(self) -> int:
        return self.chain.shape[0]

    @property
    def nx(self) -> int:
        return self.emission.shape[1]

    @property
    def ny(self) -> int:
        return self.emission.shape[2]

    @property
    def x_marginal(self) -> np.ndarray:
        """``q(x | s)`` with shape (|S|, |X|)."""
        return self.emission.sum(axis=2)

    def is_symmetric_input(self, tol: float = 1e-12) -> bool:
        """True when the symbol law does not depend on the state and is uniform."""
        return bool(np.max(np.abs(self.x_marginal - 1.0 / self.nx)) <= tol)

    def hmm_xy(self) -> _hmm.HiddenMarkovModel:
        """Model with state ``(S, X, Y)`` and observation ``(X, Y)``."""
        symbols = [(x, y) for x in range(self.nx) for y in range(self.ny)]
        return _hmm.det_from_prob(self.chain, self.emission.reshape(self.n_states, -1), symbols)

    def hmm_y(self) -> _hmm.HiddenMarkovModel:
        """Same state as ``hmm_xy`` with only ``Y`` observed."""
        h = self.hmm_xy()
        return _hmm.HiddenMarkovModel(h.transition, tuple(o[1] for o in h.obs_map), h.state_labels)

    def step_matrices(self) -> np.ndarray:
        """``A[x, y][s, s'] = P[s, s'] q[s', x, y]`` with shape (|X|, |Y|, |S|, |S|)."""
        q = np.moveaxis(self.emission, 0, -1)  # (X, Y, S')
        return self.chain[None, None] * q[:, :, None, :]

    def to_json(self) -> dict:
        return {
            "kind": "faim",
            "name": self.name,
            "chain": self.chain.tolist(),
            "emission": self.emission.tolist(),
        }

    @classmethod
    def from_json(cls, data: dict) -> "FaimModel":
        if "chain" in data and "emission" in data:
            return cls(np.asarray(data["chain"]), np.asarray(data["emission"]), data.get("name", "faim"))
        if "transition" in data:
            return cls.from_hmm(_hmm.HiddenMarkovModel.from_json(data))
        raise ValidationError("model JSON needs chain/emission or transition/obs_map")

    @classmethod
    def from_hmm(cls, h: _hmm.HiddenMarkovModel, name: str = "faim") -> "FaimModel":
        """FAIM process whose pair ``(x, y)`` is a deterministic function of the state."""
        pairs = []
        for o in h.obs_map:
            if not (isinstance(o, tuple) and len(o) == 2):
                raise ValidationError("observation labels must be (x, y) pairs")
            pairs.append((int(o[0]), int(o[1])))
        nx = max(p[0] for p in pairs) + 1
        ny = max(p[1] for p in pairs) + 1
        q = np.zeros((h.n_states, nx, ny))
        for s, (x, y) in enumerate(pairs):
            q[s, x, y] = 1.0
        return cls(h.transition, q, name)


# ---------------------------------------------------------------------------
# Constructors


def gilbert_elliott(p: float, q: float, gamma: float, beta: float) -> FaimModel:
    """Two-state channel with uniform binary input: good state 0, bad state 1."""
    chain, emit = _hmm.gilbert_elliott_table(p, q, gamma, beta)
    return FaimModel(chain, emit.reshape(2, 2, 2), f"gilbert_elliott({p},{q},{gamma},{beta})")


def bsc(p: float) -> FaimModel:
    """Memoryless binary symmetric channel with uniform input."""
    if not 0.0 <= p <= 1.0:
        raise ValidationError("crossover must lie in [0, 1]")
    emit = np.array([[[1 - p, p], [p, 1 - p]]]) / 2.0
    return FaimModel(np.ones((1, 1)), emit, f"bsc({p})")


def kaijser_faim(variant: str = "state_symbol") -> FaimModel:
    """The four-state two-letter chain recast as a FAIM process.

    ``state_symbol``: X is the state itself and Y the two-letter observation.
    ``observation_symbol``: X is the two-letter observation (as a bit) and Y is constant.
    """
    h = _hmm.kaijser()
    letter = np.array([0, 0, 1, 1])
    if variant == "state_symbol":
        q = np.zeros((4, 4, 2))
        q[np.arange(4), np.arange(4), letter] = 1.0
    elif variant == "observation_symbol":
        q = np.zeros((4, 2, 1))
        q[np.arange(4), letter, 0] = 1.0
    else:
        raise ValidationError(f"unknown variant {variant!r}")
    return FaimModel(h.transition, q, f"kaijser:{variant}")


# ---------------------------------------------------------------------------
# Sampling


@dataclass(frozen=True, eq=False)
class SoBlockSample:
    x: np.ndarray
    y: np.ndarray
    s: np.ndarray | None = None


def _categorical(rng: np.random.Generator, probs: np.ndarray) -> np.ndarray:
    """One draw per row of ``probs`` (shape (T, K))."""
    cum = np.cumsum(probs, axis=1)
    u = rng.random(probs.shape[0]) * cum[:, -1]
    return np.minimum((u[:, None] >= cum).sum(axis=1), probs.shape[1] - 1)


def sample_blocks(m: FaimModel, n: int, trials: int, rng: np.random.Generator):
    """Stationary draws of ``trials`` independent blocks of length ``n``.

    Returns ``(x, y, s)`` with shapes (T, n), (T, n), (T, n+1).
    """
    if n < 1 or trials < 1:
        raise ValidationError("need n >= 1 and trials >= 1")
    s = np.empty((trials, n + 1), dtype=np.int64)
    x = np.empty((trials, n), dtype=np.int64)
    y = np.empty((trials, n), dtype=np.int64)
    s[:, 0] = _categorical(rng, np.broadcast_to(m.pi, (trials, m.n_states)))
    flat = m.emission.reshape(m.n_states, -1)
    for t in range(n):
        s[:, t + 1] = _categorical(rng, m.chain[s[:, t]])
        xy = _categorical(rng, flat[s[:, t + 1]])
        x[:, t], y[:, t] = np.divmod(xy, m.ny)
    return x, y, s


def sample_block(m: FaimModel, n: int, seed: int) -> SoBlockSample:
    x, y, s = sample_blocks(m, n, 1, np.random.default_rng(seed))
    return SoBlockSample(x[0], y[0], s[0])


def sample_bi_blocks(m: FaimModel, n0: int, block_count: int, trials: int, rng: np.random.Generator):
    """Block-independent draws: ``block_count`` independent length-``n0`` blocks per trial."""
    if n0 < 1 or block_count < 1:
        raise ValidationError("need n0 >= 1 and block_count >= 1")
    x, y, s = sample_blocks(m, n0, trials * block_count, rng)
    x = x.reshape(trials, block_count * n0)
    y = y.reshape(trials, block_count * n0)
    return x, y, s.reshape(trials, block_count, n0 + 1)


def sample_bi_block(m: FaimModel, n0: int, block_count: int, seed: int) -> SoBlockSample:
    x, y, s = sample_bi_blocks(m, n0, block_count, 1, np.random.default_rng(seed))
    return SoBlockSample(x[0], y[0], None)


def transmit(m: FaimModel, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Channel outputs for given inputs ``x`` (shape (T, n)).

    The state evolves independently of the input only when the symbol law is
    uniform in every state, so other models are rejected.
    """
    if not m.is_symmetric_input():
        raise ValidationError("transmission needs a model with uniform, state-independent input")
    x = np.atleast_2d(np.asarray(x, dtype=np.int64))
    trials, n = x.shape
    chan = m.emission * m.nx  # q(y | s, x)
    y = np.empty_like(x)
    s = _categorical(rng, np.broadcast_to(m.pi, (trials, m.n_states)))
    for t in range(n):
        s = _categorical(rng, m.chain[s])
        y[:, t] = _categorical(rng, chan[s, x[:, t]])
    return y


# ---------------------------------------------------------------------------
# Window entropy


def _window_batches(m: FaimModel, l0: int, start: np.ndarray, chunk: int = 1 << 16) -> Iterator[np.ndarray]:
    """Yield joint tables ``P(x_<c, y_window, x_c)`` with shape (n, |X|).

    The window has ``2 l0 + 1`` positions with the center at index ``l0``.
    """
    a = m.step_matrices()  # (X, Y, S, S)
    nx, ny, ns = a.shape[0], a.shape[1], a.shape[2]
    before = a.reshape(nx * ny, ns, ns)
    after = a.sum(axis=0)  # (Y, S, S)
    total = 2 * l0 + 1

    def expand(v: np.ndarray, t: int) -> np.ndarray:
        if t < l0:
            return np.matmul(v[:, None, None, :], before[None]).reshape(-1, ns)
        if t == l0:
            out = np.matmul(v[:, None, None, None, :], a[None])  # (n, X, Y, 1, S)
            return out[:, :, :, 0, :].transpose(0, 2, 1, 3).reshape(-1, nx, ns)
        out = np.matmul(v[:, None, :, None, :], after[None, :, None])  # (n, Y, X, 1, S)
        return out[:, :, :, 0, :].reshape(-1, nx, ns)

    def width(t: int) -> int:
        return nx * ny if t < l0 else ny

    def rec(v: np.ndarray, t: int):
        if t == total:
            yield v.sum(axis=-1)
            return
        k = width(t)
        if v.shape[0] * k > chunk and v.shape[0] > 1:
            step = max(1, chunk // k)
            for i in range(0, v.shape[0], step):
                yield from rec(expand(v[i : i + step], t), t + 1)
        else:
            yield from rec(expand(v, t), t + 1)

    yield from rec(np.asarray(start, dtype=float)[None, :], 0)


def window_entropy(m: FaimModel, l0: int, anchor: int = 0) -> float:
    """``H(X_i | X_{i-L0}^{i-1}, Y_{i-L0}^{i+L0})`` in bits, by exact enumeration.

    ``anchor`` shifts the window start by that many steps from stationarity;
    the value does not depend on it.
    """
    if l0 < 0:
        raise ValidationError("L0 must be nonnegative")
    size = m.nx ** (l0 + 1) * m.ny ** (2 * l0 + 1)
    if size > WINDOW_LIMIT:
        raise SizeLimitError(f"window enumeration of {size} terms exceeds {WINDOW_LIMIT}")
    start = m.pi @ np.linalg.matrix_power(m.chain, anchor)
    h = 0.0
    for joint in _window_batches(m, l0, start):
        marg = joint.sum(axis=1, keepdims=True)
        mask = joint > 0
        h -= np.sum(np.where(mask, joint * np.log2(np.where(mask, joint / np.where(marg > 0, marg, 1), 1)), 0))
    return float(min(max(h, 0.0), math.log2(m.nx)))


def window_posteriors(m: FaimModel, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """``P(X_c = x_c | x_<c, y)`` for windows ``x`` (T, L0+1) and ``y`` (T, 2L0+1)."""
    l0 = x.shape[1] - 1
    a = m.step_matrices()
    after = a.sum(axis=0)
    alpha = np.broadcast_to(m.pi, (x.shape[0], m.n_states)).copy()
    for t in range(l0):
        alpha = np.einsum("ts,tsu->tu", alpha, a[x[:, t], y[:, t]])
        alpha /= alpha.sum(axis=1, keepdims=True)
    hyp = np.einsum("ts,xtsu->txu", alpha, a[:, y[:, l0]])  # (T, X, S)
    for t in range(l0 + 1, 2 * l0 + 1):
        hyp = np.einsum("txs,tsu->txu", hyp, after[y[:, t]])
        hyp /= hyp.sum(axis=(1, 2), keepdims=True)
    p = hyp.sum(axis=2)
    p /= p.sum(axis=1, keepdims=True)
    return p[np.arange(x.shape[0]), x[:, l0]]


def window_entropy_mc(m: FaimModel, l0: int, trials: int, seed: int) -> tuple[float, float]:
    """Plug-in estimate of the window entropy and its standard error."""
    rng = np.random.default_rng(seed)
    x, y, _ = sample_blocks(m, 2 * l0 + 1, trials, rng)
    post = window_posteriors(m, x[:, : l0 + 1], y)
    vals = -np.log2(post)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0


def exact_block_entropy(m: FaimModel, n: int) -> float:
    """``H(X_1^n | Y_1^n)`` in bits, enumerating all ``(x, y)``."""
    size = (m.nx * m.ny) ** n
    if size > WINDOW_LIMIT:
        raise SizeLimitError("block enumeration too large")
    joint = block_joint(m, n)  # (X^n, Y^n)
    py = joint.sum(axis=0, keepdims=True)
    mask = joint > 0
    return float(-np.sum(np.where(mask, joint * np.log2(np.where(mask, joint / np.where(py > 0, py, 1), 1)), 0)))


def block_joint(m: FaimModel, n: int) -> np.ndarray:
    """Table ``P(x_1^n, y_1^n)`` indexed by the big-endian integer codes of x and y."""
    a = m.step_matrices()
    v = m.pi[None, None, :]  # (x-code, y-code, S)
    for _ in range(n):
        v = np.einsum("abs,xysu->axbyu", v, a)
        v = v.reshape(v.shape[0] * m.nx, v.shape[2] * m.ny, m.n_states)
    return v.sum(axis=2)


# ---------------------------------------------------------------------------
# Forgetfulness


@dataclass(frozen=True)
class ForgetfulnessReport:
    """Certificate for the two forgetting conditions of a FAIM process.

    ``recollection`` indexes the state pair ``(S_1, S_k)``: both conditional
    mutual informations are at most ``epsilon`` for every ``k >= recollection``.
    """

    epsilon: float
    recollection: int | None
    certified: bool
    failed_sides: tuple
    xy_params: _hmm.KhmmParams | None
    y_params: _hmm.KhmmParams | None
    state_count: int

    @property
    def channels(self) -> dict:
        return {
            "xy": self.xy_params is not None,
            "y": self.y_params is not None,
        }


def _side_params(m: FaimModel, search_budget: int):
    hxy = m.hmm_xy()
    hy = m.hmm_y()
    return (
        hxy.n_states,
        _hmm.find_condition_k(hxy, search_budget),
        _hmm.find_condition_k(hy, search_budget),
    )


def _faim_recollection(kxy, ky, state_count: int, eps: float) -> int:
    # The bound on I(A_0; A_{n+1} | B_1^n) controls I(S_1; S_{n+2} | B_1^{n+2}).
    return max(
        _hmm.recollection(kxy, state_count, eps),
        _hmm.recollection(ky, state_count, eps),
    ) + 2


def forgetfulness_report(m: FaimModel, eps: float, search_budget: int = 100000) -> ForgetfulnessReport:
    """Certify forgetfulness through Condition K on both derived models."""
    if eps <= 0:
        raise DomainError("eps must be positive")
    count, kxy, ky = _side_params(m, search_budget)
    failed = tuple(side for side, k in (("xy", kxy), ("y", ky)) if k is None)
    if failed:
        return ForgetfulnessReport(eps, None, False, failed, kxy, ky, count)
    rec = _faim_recollection(kxy, ky, count, eps)
    return ForgetfulnessReport(eps, rec, True, (), kxy, ky, count)


def forgetfulness_for_l0(m: FaimModel, l0: int, search_budget: int = 100000) -> ForgetfulnessReport:
    """Smallest certified epsilon whose recollection is at most ``l0``.

    Found by bisection over ``log eps``; returns epsilon 0 when the
    recollection does not depend on epsilon and already fits.
    """
    count, kxy, ky = _side_params(m, search_budget)
    failed = tuple(side for side, k in (("xy", kxy), ("y", ky)) if k is None)
    if failed:
        return ForgetfulnessReport(math.nan, None, False, failed, kxy, ky, count)

    def rec(eps: float) -> int:
        return _faim_recollection(kxy, ky, count, eps)

    lo, hi = math.log(1e-300), math.log(1e6)
    if rec(math.exp(hi)) > l0:
        raise DomainError(f"no epsilon certifies recollection {l0}")
    if rec(math.exp(lo)) <= l0:
        return ForgetfulnessReport(0.0, rec(math.exp(lo)), True, (), kxy, ky, count)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if rec(math.exp(mid)) <= l0:
            hi = mid
        else:
            lo = mid
        if hi - lo < 1e-12:
            break
    eps = math.exp(hi)
    return ForgetfulnessReport(eps, rec(eps), True, (), kxy, ky, count)


def entropy_rate_bracket(m: FaimModel, l0: int, report: ForgetfulnessReport, h0: float | None = None):
    """Bracket ``[H0 - 2 eps, H0 + 2 eps]`` on the conditional entropy rate.

    ``report`` must certify a recollection of at most ``l0``. The bracket is
    clipped to ``[0, log2 |X|]``.
    """
    if not report.certified or report.recollection is None or report.recollection > l0:
        raise DomainError(f"no forgetfulness certificate for L0 = {l0}")
    if h0 is None:
        h0 = window_entropy(m, l0)
    eps = report.epsilon
    return max(0.0, h0 - 2 * eps), min(math.log2(m.nx), h0 + 2 * eps)
