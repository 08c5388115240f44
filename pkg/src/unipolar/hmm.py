"""Hidden Markov models with deterministic observations.

A model is a primitive row-stochastic matrix ``M`` on states ``0..|A|-1`` and a
map ``f`` from states to observation labels. The observation matrices
``M(b)`` keep the columns ``j`` of ``M`` with ``f(j) = b`` and zero the rest.

Mutual-information quantities are reported in bits.
"""

from __future__ import annotations

import itertools
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Hashable, Iterator, Sequence

import numpy as np
from scipy.linalg import null_space

from unipolar.contraction import ZERO_TOL, birkhoff, birkhoff_batch, is_subrectangular
from unipolar.errors import DomainError, IndeterminateError, SizeLimitError, ValidationError

ROW_TOL = 1e-12
ENUM_LIMIT = 10**6


def _freeze(label):
    """Turn JSON lists into hashable tuples, recursively."""
    if isinstance(label, list):
        return tuple(_freeze(v) for v in label)
    return label


def wielandt_bound(n: int) -> int:
    return (n - 1) ** 2 + 1


def primitivity_index(m: np.ndarray) -> int | None:
    """Smallest ``k`` with ``m**k`` entrywise positive, or None if not primitive."""
    pattern = (np.asarray(m) > 0).astype(np.int64)
    cur = pattern.copy()
    for k in range(1, wielandt_bound(pattern.shape[0]) + 1):
        if cur.all():
            return k
        cur = ((cur @ pattern) > 0).astype(np.int64)
    return None


def _check_stochastic(m: np.ndarray, what: str = "transition") -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] == 0:
        raise ValidationError(f"{what} must be a non-empty square matrix")
    if np.any(m < 0) or not np.all(np.isfinite(m)):
        raise ValidationError(f"{what} must have finite nonnegative entries")
    if np.max(np.abs(m.sum(axis=1) - 1.0)) > ROW_TOL:
        raise ValidationError(f"{what} rows must sum to 1")
    return m


@dataclass(frozen=True, eq=False)
class HiddenMarkovModel:
    """Primitive Markov chain plus a deterministic observation map."""

    transition: np.ndarray
    obs_map: tuple
    state_labels: tuple | None = None
    alphabet: tuple = field(init=False)
    obs_index: np.ndarray = field(init=False)

    def __post_init__(self):
        m = _check_stochastic(self.transition)
        obs = tuple(_freeze(o) for o in self.obs_map)
        if len(obs) != m.shape[0]:
            raise ValidationError("obs_map length must equal the number of states")
        if primitivity_index(m) is None:
            raise ValidationError("transition matrix is not primitive")
        alphabet = tuple(dict.fromkeys(obs))
        pos = {b: i for i, b in enumerate(alphabet)}
        m = m.copy()
        m.setflags(write=False)
        idx = np.array([pos[o] for o in obs], dtype=np.int64)
        idx.setflags(write=False)
        object.__setattr__(self, "transition", m)
        object.__setattr__(self, "obs_map", obs)
        object.__setattr__(self, "alphabet", alphabet)
        object.__setattr__(self, "obs_index", idx)
        if self.state_labels is not None:
            labels = tuple(_freeze(s) for s in self.state_labels)
            if len(labels) != m.shape[0]:
                raise ValidationError("state_labels length must equal the number of states")
            object.__setattr__(self, "state_labels", labels)

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    def symbol_index(self, b: Hashable) -> int:
        try:
            return self.alphabet.index(_freeze(b))
        except ValueError:
            raise ValidationError(f"unknown observation symbol {b!r}") from None

    def encode_word(self, word: Sequence) -> np.ndarray:
        return np.array([self.symbol_index(b) for b in word], dtype=np.int64)

    def to_json(self) -> dict:
        def plain(v):
            return list(map(plain, v)) if isinstance(v, tuple) else v

        out = {
            "states": self.n_states,
            "transition": self.transition.tolist(),
            "obs_map": [plain(o) for o in self.obs_map],
        }
        if self.state_labels is not None:
            out["labels"] = [plain(s) for s in self.state_labels]
        return out

    @classmethod
    def from_json(cls, data: dict) -> "HiddenMarkovModel":
        try:
            transition = np.asarray(data["transition"], dtype=float)
            obs_map = data["obs_map"]
        except KeyError as exc:
            raise ValidationError(f"model JSON missing field {exc}") from None
        if "states" in data and int(data["states"]) != transition.shape[0]:
            raise ValidationError("'states' does not match the transition size")
        return cls(transition, tuple(obs_map), data.get("labels"))


@dataclass(frozen=True, eq=False)
class ObsMatrixSet:
    alphabet: tuple
    matrices: np.ndarray  # (|B|, |A|, |A|)

    def __getitem__(self, b) -> np.ndarray:
        return self.matrices[self.alphabet.index(_freeze(b))]

    def word_product(self, word: Sequence) -> np.ndarray:
        n = self.matrices.shape[1]
        out = np.eye(n)
        for b in word:
            out = out @ self[b]
        return out


def decompose(h: HiddenMarkovModel) -> ObsMatrixSet:
    """Split the transition matrix into one matrix per observation symbol."""
    nb = len(h.alphabet)
    mats = np.zeros((nb,) + h.transition.shape)
    for b in range(nb):
        cols = h.obs_index == b
        mats[b][:, cols] = h.transition[:, cols]
    return ObsMatrixSet(h.alphabet, mats)


def stationary(h: HiddenMarkovModel | np.ndarray) -> np.ndarray:
    """Unique stationary distribution of a primitive chain."""
    m = h.transition if isinstance(h, HiddenMarkovModel) else np.asarray(h, dtype=float)
    n = m.shape[0]
    pi = None
    ns = null_space(m.T - np.eye(n))
    if ns.shape[1] == 1:
        v = ns[:, 0]
        v = v / v.sum()
        if np.all(v > 0) and np.max(np.abs(v @ m - v)) <= 1e-12:
            pi = v
    if pi is None:
        v = np.full(n, 1.0 / n)
        for _ in range(100000):
            nxt = v @ m
            if np.max(np.abs(nxt - v)) < 1e-14:
                v = nxt
                break
            v = nxt
        pi = v / v.sum()
    return pi


def _forward(h: HiddenMarkovModel, word: Sequence, start: np.ndarray) -> tuple[np.ndarray, float]:
    mats = decompose(h).matrices
    alpha = np.asarray(start, dtype=float).copy()
    log_scale = 0.0
    for b in h.encode_word(word):
        alpha = alpha @ mats[b]
        total = alpha.sum()
        if total <= 0:
            return np.zeros_like(alpha), -math.inf
        alpha /= total
        log_scale += math.log(total)
    return alpha, log_scale


def seq_log_prob(h: HiddenMarkovModel, word: Sequence, start: int | None = None) -> float:
    """Natural log of ``P(b_1^n)``, or of ``P(b_1^n | A_0 = start)``."""
    if start is None:
        init = stationary(h)
    else:
        init = np.zeros(h.n_states)
        init[start] = 1.0
    return _forward(h, word, init)[1]


def seq_prob(h: HiddenMarkovModel, word: Sequence, start: int | None = None) -> float:
    """``||pi^T M(b_1^n)||_1``, or ``||e_start^T M(b_1^n)||_1`` when ``start`` is given."""
    return math.exp(seq_log_prob(h, word, start))


def state_posterior(h: HiddenMarkovModel, word: Sequence, start: int | None = None) -> np.ndarray:
    """``P(A_n = a | b_1^n)``, i.e. the entries ``||pi^T M(b) T_a||_1`` normalized."""
    if start is None:
        init = stationary(h)
    else:
        init = np.zeros(h.n_states)
        init[start] = 1.0
    alpha, ls = _forward(h, word, init)
    if ls == -math.inf:
        raise DomainError("observation sequence has probability zero")
    return alpha


# ---------------------------------------------------------------------------
# Mixing sequences


@dataclass(frozen=True, eq=False)
class MixingSequences:
    psi: np.ndarray
    phi: np.ndarray


def mixing_sequences(h: HiddenMarkovModel | np.ndarray, k_max: int) -> MixingSequences:
    """Joint-to-product ratio extremes of ``(S_0, S_k)`` for ``k = 0..k_max``."""
    m = h.transition if isinstance(h, HiddenMarkovModel) else np.asarray(h, dtype=float)
    pi = stationary(m)
    psi = np.empty(k_max + 1)
    phi = np.empty(k_max + 1)
    psi[0] = np.max(1.0 / pi)
    phi[0] = 0.0
    power = np.eye(m.shape[0])
    for k in range(1, k_max + 1):
        power = power @ m
        ratio = power / pi[None, :]
        psi[k] = ratio.max()
        phi[k] = ratio.min()
    # Both sequences are monotone in exact arithmetic; strip rounding noise.
    psi = np.minimum.accumulate(psi)
    phi = np.maximum.accumulate(phi)
    return MixingSequences(psi, phi)


# ---------------------------------------------------------------------------
# Constructors


def det_from_prob(state_chain, q, symbols: Sequence | None = None) -> HiddenMarkovModel:
    """Deterministic-observation model equivalent to a probabilistic-emission chain.

    ``q[j, b]`` is the probability of emitting symbol ``b`` in state ``j``. The
    new states are the viable pairs ``(j, b)``, ordered by ``j`` then ``b``.
    """
    chain = _check_stochastic(state_chain, "state chain")
    if primitivity_index(chain) is None:
        raise ValidationError("state chain is not primitive")
    q = np.asarray(q, dtype=float)
    if q.ndim != 2 or q.shape[0] != chain.shape[0]:
        raise ValidationError("emission table must have one row per state")
    if np.any(q < 0) or np.max(np.abs(q.sum(axis=1) - 1.0)) > ROW_TOL:
        raise ValidationError("emission rows must be distributions")
    if symbols is None:
        symbols = tuple(range(q.shape[1]))
    symbols = tuple(_freeze(s) for s in symbols)
    if len(symbols) != q.shape[1]:
        raise ValidationError("need one symbol label per emission column")
    pairs = [(j, b) for j in range(q.shape[0]) for b in range(q.shape[1]) if q[j, b] > 0]
    src = np.array([j for j, _ in pairs])
    dst_b = np.array([b for _, b in pairs])
    trans = chain[np.ix_(src, src)] * q[src, dst_b][None, :]
    return HiddenMarkovModel(
        trans,
        tuple(symbols[b] for b in dst_b),
        tuple((j, symbols[b]) for j, b in pairs),
    )


def kaijser() -> HiddenMarkovModel:
    """Four-state chain whose two-letter observation never forgets the state."""
    m = np.array(
        [
            [0.5, 0.0, 0.5, 0.0],
            [0.0, 0.5, 0.0, 0.5],
            [0.5, 0.0, 0.0, 0.5],
            [0.0, 0.5, 0.5, 0.0],
        ]
    )
    return HiddenMarkovModel(m, ("a", "a", "b", "b"), (1, 2, 3, 4))


def gilbert_elliott_table(p: float, q: float, gamma: float, beta: float) -> tuple[np.ndarray, np.ndarray]:
    """State chain and ``(x, y)`` emission table of a Gilbert-Elliott channel.

    State 0 is good (crossover ``gamma``), state 1 is bad (crossover ``beta``),
    the input is uniform, and columns are ordered (0,0), (0,1), (1,0), (1,1).
    """
    for name, v in (("p", p), ("q", q), ("gamma", gamma), ("beta", beta)):
        if not 0.0 <= v <= 1.0:
            raise ValidationError(f"{name} must lie in [0, 1]")
    chain = np.array([[1 - p, p], [q, 1 - q]])
    emit = np.array(
        [
            [1 - gamma, gamma, gamma, 1 - gamma],
            [1 - beta, beta, beta, 1 - beta],
        ]
    ) / 2.0
    return chain, emit


XY_SYMBOLS = ((0, 0), (0, 1), (1, 0), (1, 1))


def gilbert_elliott_hmm(p: float, q: float, gamma: float, beta: float) -> HiddenMarkovModel:
    chain, emit = gilbert_elliott_table(p, q, gamma, beta)
    return det_from_prob(chain, emit, XY_SYMBOLS)


BUILTIN_MODELS = {
    "kaijser": kaijser,
    "gilbert_elliott": gilbert_elliott_hmm,
}


# ---------------------------------------------------------------------------
# Word enumeration


def iter_word_products(mats: np.ndarray, length: int, chunk: int = 1 << 14) -> Iterator[np.ndarray]:
    """Yield products ``M(w_1)...M(w_length)`` for all words in lexicographic order.

    Batches have shape (n, |A|, |A|); the last symbol varies fastest.
    """
    nb, na = mats.shape[0], mats.shape[1]
    suffix_len = 0
    while suffix_len < length and nb ** (suffix_len + 1) <= chunk:
        suffix_len += 1
    suffix = np.eye(na)[None]
    for _ in range(suffix_len):
        suffix = np.matmul(suffix[:, None], mats[None]).reshape(-1, na, na)
    prefix_len = length - suffix_len
    for word in itertools.product(range(nb), repeat=prefix_len):
        pre = np.eye(na)
        for b in word:
            pre = pre @ mats[b]
        yield pre[None] @ suffix


# ---------------------------------------------------------------------------
# Condition K and KHMM parameters


@dataclass(frozen=True)
class KhmmParams:
    """Certified (n*, delta*, tau*) triple plus the data it was derived from."""

    n_star: int
    delta_star: float
    tau_star: float
    witness_word: tuple
    k0: int
    gamma0: float
    alpha0: float
    delta_bound: float
    delta_exact: float | None = None

    @property
    def gamma(self) -> float:
        return math.inf if self.delta_star == 0 else 1.0 / self.delta_star

    @property
    def rho(self) -> float:
        return self.delta_star ** (1.0 / self.n_star)

    def alpha(self, state_count: int) -> float:
        return self.gamma * math.log2(state_count)


def _subrect_pattern(p: np.ndarray) -> bool:
    rows = p.any(axis=1)
    cols = p.any(axis=0)
    return bool(np.array_equal(p, np.outer(rows, cols)))


def find_subrectangular_word(h: HiddenMarkovModel, search_budget: int = 100000) -> tuple | None:
    """Shortest word whose matrix product is nonzero and subrectangular.

    Breadth-first search over the support patterns of word products. Returns
    None when the reachable pattern set closes without a witness, and raises
    ``IndeterminateError`` if more than ``search_budget`` patterns are visited.
    """
    obs = decompose(h)
    supports = [(m > ZERO_TOL) for m in obs.matrices]
    queue: deque = deque()
    seen: set = set()
    for b, s in enumerate(supports):
        if not s.any():
            continue
        if _subrect_pattern(s):
            return (obs.alphabet[b],)
        key = s.tobytes()
        if key not in seen:
            seen.add(key)
            queue.append((s, (b,)))
    sup_int = [s.astype(np.int64) for s in supports]
    while queue:
        pat, word = queue.popleft()
        pat_int = pat.astype(np.int64)
        for b, s in enumerate(sup_int):
            nxt = (pat_int @ s) > 0
            if not nxt.any():
                continue
            if _subrect_pattern(nxt):
                return tuple(obs.alphabet[c] for c in word + (b,))
            key = nxt.tobytes()
            if key in seen:
                continue
            seen.add(key)
            if len(seen) > search_budget:
                raise IndeterminateError(
                    f"support search visited more than {search_budget} patterns without closing"
                )
            queue.append((nxt, word + (b,)))
    return None


def khmm_success_probability(h: HiddenMarkovModel, n_star: int, tau_star: float) -> np.ndarray:
    """Per-start-state probability that ``beta(M(B_1^{n*})) <= tau*``, exhaustively."""
    obs = decompose(h)
    if len(obs.alphabet) ** n_star > ENUM_LIMIT:
        raise SizeLimitError("word enumeration exceeds the exhaustive limit")
    prob = np.zeros(h.n_states)
    for batch in iter_word_products(obs.matrices, n_star, chunk=4096):
        good = birkhoff_batch(batch) <= tau_star + 1e-12
        prob += batch[good].sum(axis=(0, 2))
    return prob


def find_condition_k(
    h: HiddenMarkovModel, search_budget: int = 100000, tighten: bool = True
) -> KhmmParams | None:
    """Certify Condition K and derive KHMM parameters.

    Returns None when no nonzero subrectangular word product exists. When
    the words of length n* can be enumerated, delta* is replaced by the exact
    failure probability if that is smaller.
    """
    word = find_subrectangular_word(h, search_budget)
    if word is None:
        return None
    obs = decompose(h)
    k0 = primitivity_index(h.transition)
    gamma0 = float(np.linalg.matrix_power(h.transition, k0).min())
    mw = obs.word_product(word)
    rows = mw.sum(axis=1)
    alpha0 = float(rows[rows > ZERO_TOL].min())
    n_star = k0 + len(word)
    tau = birkhoff(mw)
    delta_bound = 1.0 - alpha0 * gamma0
    delta = delta_bound
    delta_exact = None
    if tighten and len(obs.alphabet) ** n_star <= ENUM_LIMIT:
        succ = khmm_success_probability(h, n_star, tau)
        delta_exact = float(max(0.0, 1.0 - succ.min()))
        if delta_exact < 1e-12:
            delta_exact = 0.0
        delta = min(delta, delta_exact)
    return KhmmParams(
        n_star=n_star,
        delta_star=float(delta),
        tau_star=float(tau),
        witness_word=word,
        k0=k0,
        gamma0=gamma0,
        alpha0=alpha0,
        delta_bound=float(delta_bound),
        delta_exact=delta_exact,
    )


# ---------------------------------------------------------------------------
# Mutual-information bounds


def _log_term(tau: float) -> float:
    return 4.0 * math.log2((1.0 + tau) / (1.0 - tau))


def _log_tail(k: KhmmParams, state_count: int, n: int, m: int) -> float:
    """Natural log of ``alpha (gamma n)^m rho^(n+1) / m!``."""
    if state_count == 1:
        return -math.inf
    g = k.gamma
    out = math.log(k.alpha(state_count)) + (n + 1) * math.log(k.rho) - math.lgamma(m + 1)
    if m > 0:
        if n == 0:
            return -math.inf
        out += m * math.log(g * n)
    return out


def mi_upper_bound(k: KhmmParams, state_count: int, n: int, m: int) -> float:
    """Upper bound on ``I(A_0; A_{n+1} | B_1^n)`` in bits, valid for ``0 <= m <= n``."""
    if not 0 <= m <= n:
        raise DomainError("need 0 <= m <= n")
    if k.delta_star <= 0:
        raise DomainError("delta* = 0: use the pure tau*^m bound of the recollection")
    head = _log_term(k.tau_star) * k.tau_star**m
    return head + math.exp(_log_tail(k, state_count, n, m))


def best_mi_bound(k: KhmmParams, state_count: int, n: int) -> float:
    """Smallest available bound on ``I(A_0; A_{n+1} | B_1^n)`` over admissible m."""
    head = _log_term(k.tau_star)
    if k.delta_star == 0:
        m = n // k.n_star - 1
        if m < 0:
            return math.log2(state_count)
        return min(math.log2(state_count), head * k.tau_star**m)
    best = math.log2(state_count)
    for m in range(n + 1):
        best = min(best, mi_upper_bound(k, state_count, n, m))
    return best


def _recollection_m(k: KhmmParams, eps: float) -> int:
    tau = k.tau_star
    if tau == 0:
        return 0
    target = (eps / 2.0) / _log_term(tau)
    return max(0, math.ceil(math.log(target) / math.log(tau)))


def recollection(k: KhmmParams, state_count: int, eps: float) -> int:
    """Smallest ``N`` with the mutual-information bound at most ``eps`` for all ``n >= N``."""
    if eps <= 0:
        raise DomainError("eps must be positive")
    m = _recollection_m(k, eps)
    if k.delta_star == 0:
        return (m + 1) * k.n_star
    limit = math.log(eps / 2.0)

    def ok(n: int) -> bool:
        return _log_tail(k, state_count, n, m) <= limit

    # The tail rises up to n = m / (-ln rho) and falls afterwards.
    peak = m / -math.log(k.rho) if m > 0 else 0.0
    start = max(m, math.ceil(peak))
    if ok(start) and (start == m or ok(max(m, math.floor(peak)))):
        return m
    hi = start
    step = 1
    while not ok(hi):
        hi += step
        step *= 2
    lo = max(start, hi - step // 2 if step > 1 else start)
    while lo < hi:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid + 1
    return hi


# ---------------------------------------------------------------------------
# Exact conditional mutual information


def _mi_from_joints(joint: np.ndarray) -> float:
    """Sum of ``J log2(J P(b) / (P(a,b) P(b,c)))`` over a batch of joints ``J[w, a, c]``."""
    pb = joint.sum(axis=(1, 2), keepdims=True)
    pab = joint.sum(axis=2, keepdims=True)
    pbc = joint.sum(axis=1, keepdims=True)
    mask = joint > 0
    num = np.where(mask, joint * pb, 1.0)
    den = np.where(mask, pab * pbc, 1.0)
    return float(np.sum(np.where(mask, joint * np.log2(num / den), 0.0)))


def exact_state_mi(h: HiddenMarkovModel, k: int, observed_ends: bool = False) -> float:
    """Exact conditional mutual information between distant states, in bits.

    By default returns ``I(A_0; A_{k+1} | B_1^k)``. With ``observed_ends`` it
    returns ``I(A_1; A_k | B_1^k)`` (``k >= 1``), where the end states are
    themselves observed.
    """
    obs = decompose(h)
    nb = len(obs.alphabet)
    if nb**k > ENUM_LIMIT:
        raise SizeLimitError(f"{nb}^{k} observation words exceed the enumeration limit")
    pi = stationary(h)
    total = 0.0
    if not observed_ends:
        for batch in iter_word_products(obs.matrices, k):
            joint = pi[None, :, None] * (batch @ h.transition)
            total += _mi_from_joints(joint)
    else:
        if k < 1:
            raise DomainError("observed_ends needs k >= 1")
        first = np.stack([np.diag(pi * (h.obs_index == b)) for b in range(nb)])
        for batch in iter_word_products(obs.matrices, k - 1):
            joint = (first[:, None] @ batch[None]).reshape(-1, h.n_states, h.n_states)
            total += _mi_from_joints(joint)
    return max(total, 0.0)
