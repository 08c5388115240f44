"""Universal polar code: BST slow stage composed with Arikan fast-stage codes.

Layout
------
The channel input has ``N * Nhat`` symbols made of ``Nhat`` consecutive BST
copies of length ``N``. ``T[i, k]`` is transformed bit ``k`` of slow index
``i`` (1-based ``i`` in the API, 0-based arrays). For each slow index the
copies carry ``F[i, :] = arikan(T[i, :])`` and copy ``c`` is
``x_c = bst_inverse(F[:, c])``. Bits are decoded in composed order
``r = (i - 1) * Nhat + k + 1``.

Decoder
-------
Every belief is a pair of ``|S| x |S|`` matrices (one per bit value) giving the
weight of the evidence between the boundary states of a time segment. Beliefs
carry arbitrary positive scale factors, which cancel in every posterior.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from unipolar import faststage as fs
from unipolar import slowstage as ss
from unipolar.errors import SizeLimitError, ValidationError
from unipolar.process import FaimModel, block_joint, sample_blocks

ORACLE_BITS = 20

TARGETS = {"low": ss.MED_PLUS, "high": ss.MED_MINUS}


# ---------------------------------------------------------------------------
# Code description


@dataclass(frozen=True, eq=False)
class CodeSpec:
    """A BST plan, a fast-stage size and the unfrozen fast positions per slow index.

    ``unfrozen`` maps a 1-based slow index to the 0-based fast positions that
    carry message bits. Only indices in the target set may appear.
    """

    plan: ss.BstPlan
    nhat: int
    target: str = "low"
    unfrozen: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.target not in TARGETS:
            raise ValidationError(f"target must be one of {sorted(TARGETS)}")
        if self.nhat < 0:
            raise ValidationError("nhat must be nonnegative")
        allowed = set(int(i) for i in self.plan.index_set(TARGETS[self.target]))
        clean = {}
        for i, ks in self.unfrozen.items():
            i = int(i)
            if i not in allowed:
                raise ValidationError(f"slow index {i} is not in the target set")
            ks = tuple(sorted(int(k) for k in ks))
            if ks and (ks[0] < 0 or ks[-1] >= self.Nhat or len(set(ks)) != len(ks)):
                raise ValidationError(f"bad fast positions for slow index {i}")
            if ks:
                clean[i] = ks
        object.__setattr__(self, "unfrozen", clean)

    @property
    def N(self) -> int:
        return self.plan.N()

    @property
    def Nhat(self) -> int:
        return 2**self.nhat

    @property
    def length(self) -> int:
        return self.N * self.Nhat

    @property
    def frozen_mask(self) -> np.ndarray:
        mask = np.ones((self.N, self.Nhat), dtype=bool)
        for i, ks in self.unfrozen.items():
            mask[i - 1, list(ks)] = False
        return mask

    @property
    def message_positions(self) -> np.ndarray:
        """Flat composed positions (0-based) of message bits, in decoding order."""
        return np.flatnonzero(~self.frozen_mask.reshape(-1))

    @property
    def k(self) -> int:
        return len(self.message_positions)

    @property
    def rate(self) -> float:
        return self.k / self.length

    def to_json(self) -> dict:
        return {
            "plan": self.plan.to_json(),
            "nhat": self.nhat,
            "target": self.target,
            "unfrozen": {str(i): list(ks) for i, ks in sorted(self.unfrozen.items())},
            "meta": self.meta,
        }

    @classmethod
    def from_json(cls, data: dict) -> "CodeSpec":
        try:
            p = data["plan"]
            plan = ss.make_plan(p["L0"], p["M0"], p["n"])
            return cls(plan, int(data["nhat"]), data.get("target", "low"), data.get("unfrozen", {}), data.get("meta", {}))
        except KeyError as exc:
            raise ValidationError(f"spec JSON lacks {exc}") from None


def uniform_spec(plan: ss.BstPlan, nhat: int, positions, target: str = "low") -> CodeSpec:
    """Same unfrozen fast positions for every slow index of the target set."""
    idx = plan.index_set(TARGETS[target])
    return CodeSpec(plan, nhat, target, {int(i): tuple(positions) for i in idx})


def frozen_spec(plan: ss.BstPlan, nhat: int = 0) -> CodeSpec:
    return CodeSpec(plan, nhat, "low", {})


# ---------------------------------------------------------------------------
# Transforms between x and the transformed bits


def transformed_to_x(spec: CodeSpec, t) -> np.ndarray:
    """``T`` with shape (..., N, Nhat) to the channel input (..., N * Nhat)."""
    t = np.asarray(t, dtype=np.uint8)
    if t.shape[-2:] != (spec.N, spec.Nhat):
        raise ValidationError(f"expected trailing shape {(spec.N, spec.Nhat)}")
    f = fs.arikan(t)
    x = ss.bst_inverse(spec.plan, np.swapaxes(f, -1, -2))
    return x.reshape(t.shape[:-2] + (spec.length,))


def x_to_transformed(spec: CodeSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.uint8)
    if x.shape[-1] != spec.length:
        raise ValidationError(f"expected length {spec.length}")
    f = ss.bst_forward(spec.plan, x.reshape(x.shape[:-1] + (spec.Nhat, spec.N)))
    return fs.arikan(np.swapaxes(f, -1, -2))


def encode(spec: CodeSpec, message, frozen_values=None) -> np.ndarray:
    """Channel input for ``message`` (shape (..., K)); frozen bits default to 0."""
    msg = np.asarray(message, dtype=np.uint8)
    if msg.shape[-1] != spec.k:
        raise ValidationError(f"message must have {spec.k} bits, got {msg.shape[-1]}")
    if msg.size and msg.max() > 1:
        raise ValidationError("message entries must be bits")
    batch = msg.shape[:-1]
    if frozen_values is None:
        t = np.zeros(batch + (spec.N * spec.Nhat,), dtype=np.uint8)
    else:
        t = np.broadcast_to(np.asarray(frozen_values, dtype=np.uint8).reshape(-1), batch + (spec.length,)).copy()
    t[..., spec.message_positions] = msg
    return transformed_to_x(spec, t.reshape(batch + (spec.N, spec.Nhat)))


# ---------------------------------------------------------------------------
# Trellis decoder


def _normalize(b: np.ndarray, axes) -> np.ndarray:
    s = b.sum(axis=axes, keepdims=True)
    return b / np.where(s > 0, s, 1.0)


def _norm_belief(b):
    return _normalize(b, (0, -2, -1))


def _select(b: np.ndarray, f: np.ndarray) -> np.ndarray:
    """``b[f]`` elementwise over the batch axes; ``b`` has a leading bit axis."""
    return np.where(f[..., None, None] == 0, b[0], b[1])


def _flip(b: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Bit axis relabelled by ``v -> v ^ f``."""
    m = (f[..., None, None] == 0)
    return np.stack([np.where(m, b[0], b[1]), np.where(m, b[1], b[0])])


class _Leaf:
    """A base block: ``F = X`` and beliefs from emission-weighted transitions."""

    def __init__(self, model: FaimModel, y: np.ndarray):
        self.chain = model.chain
        self.q = model.emission  # (S, X, Y)
        self.y = y  # (B, C, N0)
        n0 = y.shape[-1]
        shape = y.shape[:-1]
        s = model.n_states
        suf = np.empty((n0 + 1,) + shape + (s, s))
        suf[n0] = np.eye(s)
        for t in range(n0 - 1, -1, -1):
            suf[t] = _normalize(self._step(t).sum(axis=0) @ suf[t + 1], (-2, -1))
        self.suf = suf
        self.prefix = np.broadcast_to(np.eye(s), shape + (s, s)).copy()
        self.ndec = 0
        self._cache = None

    def _step(self, t: int) -> np.ndarray:
        # A_t(x)[s, s'] = P[s, s'] q[s', x, y_t]; returns (2, B, C, S, S)
        e = self.q[:, :, self.y[..., t]]  # (S', X, B, C)
        e = np.moveaxis(e, (0, 1), (-1, 0))  # (X, B, C, S')
        return self.chain * e[..., None, :]

    def belief(self, j: int) -> np.ndarray:
        if self._cache is None:
            assert self.ndec == j - 1
            a = self._step(j - 1)
            self._cache = _norm_belief(self.prefix @ a @ self.suf[j])
        return self._cache

    def marginal(self) -> np.ndarray:
        if self.ndec == 0:
            return self.belief(1).sum(axis=0)
        return self._marg

    def decide(self, j: int, f: np.ndarray):
        b = self.belief(j)
        self._marg = _select(b, f)
        a = _select(self._step(j - 1), f)
        self.prefix = _normalize(self.prefix @ a, (-2, -1))
        self.ndec = j
        self._cache = None


class _Node:
    """Level ``level`` BST node over two level-``level-1`` children."""

    def __init__(self, plan: ss.BstPlan, level: int, u, v):
        self.u, self.v = u, v
        self.ndec = 0
        self._cache = None
        self._pending = None
        self.rules = _rules(plan, level)

    def belief(self, i: int) -> np.ndarray:
        if self._cache is not None:
            return self._cache
        assert self.ndec == i - 1
        kind, j, minus = self.rules[i - 1]
        u, v = self.u, self.v
        if kind == 0:  # F = U_j after (U_1^{j-1}, V_1^{j-1})
            b = u.belief(j) @ v.marginal()[None]
        elif kind == 1:  # F = V_j after (U_1^j, V_1^{j-1})
            b = u.marginal()[None] @ v.belief(j)
        elif kind == 2:  # F = U_{j+1} ^ V_j
            bu, bv = u.belief(j + 1), v.belief(j)
            b = np.stack([bu[0] @ bv[0] + bu[1] @ bv[1], bu[0] @ bv[1] + bu[1] @ bv[0]])
        else:
            bu, bv = u.belief(j + 1), v.belief(j)
            fe = self._pending
            if minus:  # F = V_j, U_{j+1} = F ^ f_even
                b = _flip(bu, fe) @ bv
            else:  # F = U_{j+1}, V_j = F ^ f_even
                b = bu @ _flip(bv, fe)
        self._cache = _norm_belief(b)
        return self._cache

    def marginal(self) -> np.ndarray:
        if self.ndec == 0:
            return self.belief(1).sum(axis=0)
        return self._marg

    def decide(self, i: int, f: np.ndarray):
        b = self.belief(i)
        self._marg = _select(b, f)
        kind, j, minus = self.rules[i - 1]
        if kind == 0:
            self.u.decide(j, f)
        elif kind == 1:
            self.v.decide(j, f)
        elif kind == 2:
            self._pending = f
        else:
            other = f ^ self._pending
            uval, vval = (other, f) if minus else (f, other)
            self.u.decide(j + 1, uval)
            self.v.decide(j, vval)
        self.ndec = i
        self._cache = None


_RULE_CACHE: dict = {}


def _rules(plan: ss.BstPlan, level: int):
    """Per output index: (kind, j, j in Med-) for the step into ``level``."""
    key = (plan.L0, plan.M0, level)
    if key not in _RULE_CACHE:
        out = []
        for i in range(1, plan.N(level) + 1):
            if not plan.is_medial(i, level):
                out.append((0, (i + 1) // 2, False) if i % 2 else (1, i // 2, False))
            elif i % 2 == 0:
                out.append((2, i // 2, False))
            else:
                j = (i - 1) // 2
                out.append((3, j, plan.classify(j, level - 1) == ss.MED_MINUS))
        _RULE_CACHE[key] = out
    return _RULE_CACHE[key]


def _build_tree(plan: ss.BstPlan, model: FaimModel, y: np.ndarray):
    """Root node for ``y`` with shape (B, C, N); leaves follow time order."""
    blocks = y.reshape(y.shape[:-1] + (2**plan.n, plan.N0))
    nodes = [_Leaf(model, blocks[..., b, :]) for b in range(2**plan.n)]
    for level in range(1, plan.n + 1):
        nodes = [_Node(plan, level, nodes[2 * m], nodes[2 * m + 1]) for m in range(len(nodes) // 2)]
    return nodes[0]


def _fast_sc(w, pi, frozen, fval, forced):
    """Successive cancellation over matrix channels.

    ``w`` has shape (2, B, n, S, S) in transform order (adjacent-in-time pairs
    at distance n/2). Returns decisions ``u``, re-encoded ``x`` and ``P(u=0)``.
    """
    n = w.shape[2]
    if n == 1:
        p = np.einsum("s,fbst->fb", pi, w[:, :, 0])
        tot = p[0] + p[1]
        post = np.where(tot > 0, p[0] / np.where(tot > 0, tot, 1.0), 0.5)
        if forced is not None:
            u = forced[:, 0]
        elif frozen[0]:
            u = fval[:, 0]
        else:
            u = (p[1] > p[0]).astype(np.uint8)
        return u[:, None], u[:, None], post[:, None]
    h = n // 2
    a, b = w[:, :, :h], w[:, :, h:]
    wm = np.stack([a[0] @ b[0] + a[1] @ b[1], a[1] @ b[0] + a[0] @ b[1]])
    sub = lambda arr, s: None if arr is None else arr[:, s]  # noqa: E731
    u1, p1, q1 = _fast_sc(_norm_belief(wm), pi, frozen[:h], sub(fval, slice(0, h)), sub(forced, slice(0, h)))
    wp = _flip(a, p1) @ b
    u2, p2, q2 = _fast_sc(_norm_belief(wp), pi, frozen[h:], sub(fval, slice(h, n)), sub(forced, slice(h, n)))
    return (
        np.concatenate([u1, u2], axis=1),
        np.concatenate([p1 ^ p2, p2], axis=1),
        np.concatenate([q1, q2], axis=1),
    )


@dataclass(frozen=True, eq=False)
class DecodeResult:
    message: np.ndarray  # (B, K)
    bits: np.ndarray  # (B, N, Nhat) decided transformed bits
    post0: np.ndarray  # (B, N, Nhat) P(T = 0 | earlier bits, y)


def sc_decode(spec: CodeSpec, model: FaimModel, y, frozen_values=None, genie=None) -> DecodeResult:
    """Successive-cancellation trellis decoding of ``y`` (shape (B, N*Nhat) or (N*Nhat,)).

    ``genie`` (shape (B, N, Nhat)) forces every decision to the given bits, which
    turns ``post0`` into genie-aided posteriors at all indices.
    """
    if model.nx != 2:
        raise ValidationError("coding needs a binary symbol alphabet")
    y = np.asarray(y, dtype=np.int64)
    single = y.ndim == 1
    y = np.atleast_2d(y)
    if y.shape[-1] != spec.length:
        raise ValidationError(f"expected {spec.length} observations, got {y.shape[-1]}")
    if y.size and (y.min() < 0 or y.max() >= model.ny):
        raise ValidationError("observation symbols out of range")
    B, N, C = y.shape[0], spec.N, spec.Nhat
    frozen = spec.frozen_mask
    if frozen_values is None:
        fvals = np.zeros((B, N, C), dtype=np.uint8)
    else:
        fvals = np.broadcast_to(np.asarray(frozen_values, dtype=np.uint8).reshape(-1, N, C), (B, N, C))
    if genie is not None:
        genie = np.broadcast_to(np.asarray(genie, dtype=np.uint8), (B, N, C))
    root = _build_tree(spec.plan, model, y.reshape(B, C, N))
    order = fs.bit_reversal(C)
    bits = np.zeros((B, N, C), dtype=np.uint8)
    post = np.zeros((B, N, C))
    pi = model.pi
    for i in range(1, N + 1):
        w = root.belief(i)[:, :, order]  # (2, B, C, S, S)
        u, x, p = _fast_sc(w, pi, frozen[i - 1], fvals[:, i - 1], None if genie is None else genie[:, i - 1])
        bits[:, i - 1] = u
        post[:, i - 1] = p
        root.decide(i, x[:, order])
    msg = bits.reshape(B, -1)[:, spec.message_positions]
    if single:
        return DecodeResult(msg[0], bits[0], post[0])
    return DecodeResult(msg, bits, post)


def sc_decode_batched(spec, model, y, frozen_values=None, genie=None, batch: int = 256) -> DecodeResult:
    """``sc_decode`` in chunks of ``batch`` rows to bound memory."""
    y = np.atleast_2d(np.asarray(y))
    parts = []
    for s in range(0, y.shape[0], batch):
        g = None if genie is None else np.asarray(genie)[s : s + batch]
        parts.append(sc_decode(spec, model, y[s : s + batch], frozen_values, g))
    return DecodeResult(*(np.concatenate([getattr(p, k) for p in parts]) for k in ("message", "bits", "post0")))


# ---------------------------------------------------------------------------
# Exact oracles


def _as_spec(spec_or_plan) -> CodeSpec:
    if isinstance(spec_or_plan, ss.BstPlan):
        return frozen_spec(spec_or_plan)
    return spec_or_plan


def joint_prob(model: FaimModel, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """``P(x, y)`` under the stationary model for rows of ``x`` (M, n) and one ``y`` (n,)."""
    x = np.atleast_2d(x)
    a = model.step_matrices()  # (X, Y, S, S)
    alpha = np.broadcast_to(model.pi, (x.shape[0], model.n_states)).copy()
    log_scale = np.zeros(x.shape[0])
    for t in range(x.shape[1]):
        alpha = np.einsum("ms,msu->mu", alpha, a[x[:, t], y[t]])
        s = alpha.sum(axis=1)
        ok = s > 0
        alpha[ok] /= s[ok, None]
        log_scale = np.where(ok, log_scale + np.log(np.where(ok, s, 1.0)), -np.inf)
    return np.exp(log_scale)


def exact_posterior(model: FaimModel, spec_or_plan, r: int, prior_bits, y) -> float:
    """``P(T_r = 0 | T_1^{r-1}, y)`` by enumerating every completion of the transformed bits."""
    spec = _as_spec(spec_or_plan)
    total = spec.length
    if not 1 <= r <= total:
        raise ValidationError(f"index {r} outside 1..{total}")
    free = total - r + 1
    if free > ORACLE_BITS:
        raise SizeLimitError(f"{free} free bits exceed the oracle limit of {ORACLE_BITS}")
    prior = np.asarray(prior_bits, dtype=np.uint8).reshape(-1)
    if prior.size != r - 1:
        raise ValidationError("prior_bits must hold r-1 bits")
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    codes = np.arange(2**free)
    tail = ((codes[:, None] >> np.arange(free - 1, -1, -1)) & 1).astype(np.uint8)
    t = np.concatenate([np.broadcast_to(prior, (len(codes), r - 1)), tail], axis=1)
    x = transformed_to_x(spec, t.reshape(-1, spec.N, spec.Nhat))
    p = joint_prob(model, x, y)
    tot = p.sum()
    if tot <= 0:
        return 0.5
    return float(p[tail[:, 0] == 0].sum() / tot)


def exact_posterior_table(model: FaimModel, spec_or_plan) -> list[np.ndarray]:
    """All exact genie posteriors at once for a tiny code.

    Entry ``r - 1`` has shape (2^{r-1}, |Y|^K): ``P(T_r = 0 | prefix code, y code)``
    with big-endian codes in composed order.
    """
    spec = _as_spec(spec_or_plan)
    k = spec.length
    if (model.nx * model.ny) ** k > 2**ORACLE_BITS * 16:
        raise SizeLimitError("table too large")
    joint_x = block_joint(model, k)  # (2^K x-codes, |Y|^K)
    codes = np.arange(2**k)
    t = ((codes[:, None] >> np.arange(k - 1, -1, -1)) & 1).astype(np.uint8)
    x = transformed_to_x(spec, t.reshape(-1, spec.N, spec.Nhat))
    xcode = x.astype(np.int64) @ (1 << np.arange(k - 1, -1, -1))
    joint_t = joint_x[xcode]  # rows indexed by the T code
    out = []
    for r in range(1, k + 1):
        v = joint_t.reshape(2 ** (r - 1), 2, 2 ** (k - r), -1).sum(axis=2)
        tot = v.sum(axis=1)
        out.append(np.where(tot > 0, v[:, 0] / np.where(tot > 0, tot, 1.0), 0.5))
    return out


# ---------------------------------------------------------------------------
# Genie-aided estimates


@dataclass(frozen=True, eq=False)
class GenieEstimate:
    """Per-index estimates with standard errors; shape (N, Nhat)."""

    entropy: np.ndarray
    entropy_se: np.ndarray
    bhattacharyya: np.ndarray
    bhattacharyya_se: np.ndarray
    trials: int


def _true_post(post0: np.ndarray, bits: np.ndarray) -> np.ndarray:
    return np.where(bits == 0, post0, 1.0 - post0)


def _neg_log2(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return -np.log2(np.clip(p, 0.0, 1.0))


def genie_estimates(spec_or_plan, model: FaimModel, trials: int, seed: int, batch: int = 256) -> GenieEstimate:
    """Monte-Carlo genie-aided entropies and Bhattacharyya parameters at every index."""
    spec = _as_spec(spec_or_plan)
    if trials < 1:
        raise ValidationError("trials must be at least 1")
    h_sum = np.zeros((spec.N, spec.Nhat))
    h_sq = np.zeros_like(h_sum)
    z_sum = np.zeros_like(h_sum)
    z_sq = np.zeros_like(h_sum)
    done = 0
    chunk_id = 0
    while done < trials:
        b = min(batch, trials - done)
        rng = np.random.default_rng([seed, chunk_id])
        x, y, _ = sample_blocks(model, spec.length, b, rng)
        t = x_to_transformed(spec, x.astype(np.uint8))
        res = sc_decode(spec, model, y, genie=t)
        h = _neg_log2(_true_post(res.post0, t))
        z = 2 * np.sqrt(np.clip(res.post0 * (1 - res.post0), 0, None))
        h_sum += h.sum(0)
        h_sq += (h**2).sum(0)
        z_sum += z.sum(0)
        z_sq += (z**2).sum(0)
        done += b
        chunk_id += 1

    def mean_se(s, sq):
        m = s / trials
        if trials < 2:
            return m, np.zeros_like(m)
        var = np.maximum(sq / trials - m**2, 0) * trials / (trials - 1)
        return m, np.sqrt(var / trials)

    hm, hs = mean_se(h_sum, h_sq)
    zm, zs = mean_se(z_sum, z_sq)
    return GenieEstimate(hm, hs, zm, zs, trials)


def _composed(spec: CodeSpec, index: int) -> tuple[int, int]:
    if not 1 <= index <= spec.length:
        raise ValidationError(f"index {index} outside 1..{spec.length}")
    return divmod(index - 1, spec.Nhat)


def genie_entropy(spec_or_plan, model: FaimModel, index: int, trials: int, seed: int) -> tuple[float, float]:
    """``H(T_index | T_<index, Y)`` estimate and its standard error (composed 1-based index)."""
    spec = _as_spec(spec_or_plan)
    i, k = _composed(spec, index)
    est = genie_estimates(spec, model, trials, seed)
    return float(est.entropy[i, k]), float(est.entropy_se[i, k])


def genie_bhattacharyya(spec_or_plan, model: FaimModel, index: int, trials: int, seed: int) -> tuple[float, float]:
    spec = _as_spec(spec_or_plan)
    i, k = _composed(spec, index)
    est = genie_estimates(spec, model, trials, seed)
    return float(est.bhattacharyya[i, k]), float(est.bhattacharyya_se[i, k])


def exact_genie_entropies(spec_or_plan, model: FaimModel) -> np.ndarray:
    """Exact ``H(T_r | T_<r, Y)`` at every index, enumerating all ``(x, y)``.

    Uses the decoder posteriors; shape (N, Nhat).
    """
    spec = _as_spec(spec_or_plan)
    k = spec.length
    if (model.nx * model.ny) ** k > 2**ORACLE_BITS:
        raise SizeLimitError("enumeration too large")
    joint = block_joint(model, k)  # (x code, y code)
    xc, yc = np.nonzero(joint > 0)
    w = joint[xc, yc]
    x = ((xc[:, None] >> np.arange(k - 1, -1, -1)) & 1).astype(np.uint8)
    y = np.zeros((len(yc), k), dtype=np.int64)
    rem = yc.copy()
    for pos in range(k - 1, -1, -1):
        y[:, pos] = rem % model.ny
        rem //= model.ny
    t = x_to_transformed(spec, x)
    res = sc_decode_batched(spec, model, y, genie=t, batch=4096)
    h = _neg_log2(_true_post(res.post0, t))
    return np.einsum("m,mik->ik", w, h)


# ---------------------------------------------------------------------------
# Block-independent fast path


def _boxplus(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    t = np.tanh(a / 2) * np.tanh(b / 2)
    return 2 * np.arctanh(np.clip(t, -1 + 1e-16, 1 - 1e-16))


def _bit_entropy(llr: np.ndarray, bit: np.ndarray) -> np.ndarray:
    """``-log2 P(bit | llr)`` with ``llr = ln P(0)/P(1)``."""
    signed = np.where(bit == 0, llr, -llr)
    return np.logaddexp(0.0, -signed) / math.log(2)


def bi_medial_entropies(model: FaimModel, n_max: int, trials: int, seed: int):
    """Genie entropies of Med-/Med+ indices of a memoryless model, levels ``0..n_max``.

    Each level-``n`` medial pair combines a Med- and a Med+ quantity of level
    ``n-1`` taken from independent blocks, so one representative pair per
    level captures every medial index. Returns arrays ``(h_minus, se_minus,
    h_plus, se_plus, pair_sum, pair_se)`` indexed by level.
    """
    if model.n_states != 1 or model.nx != 2:
        raise ValidationError("fast path needs a memoryless binary-input model")
    rng = np.random.default_rng(seed)
    leaves = 2**n_max
    q = model.emission[0]  # (X, Y)
    x, y, _ = sample_blocks(model, leaves, trials, rng)
    with np.errstate(divide="ignore"):
        llr = np.log(q[0, y]) - np.log(q[1, y])
    # per slot: (llr, bit) of the Med- and Med+ representatives
    lm, bm, lp, bp = llr, x.astype(np.uint8), llr, x.astype(np.uint8)
    out = np.zeros((6, n_max + 1))

    def record(n, hm, hp):
        s = hm + hp
        for row, v in ((0, hm), (2, hp), (4, s)):
            out[row, n] = v.mean()
            out[row + 1, n] = v.std(ddof=1) / math.sqrt(trials) if trials > 1 else 0.0

    record(0, _bit_entropy(lm[:, 0], bm[:, 0]), _bit_entropy(lp[:, 0], bp[:, 0]))
    for n in range(1, n_max + 1):
        # Med- of slot 2m meets Med+ of slot 2m+1
        la, ba = lm[:, 0::2], bm[:, 0::2]
        lb, bb = lp[:, 1::2], bp[:, 1::2]
        minus_l, minus_b = _boxplus(la, lb), ba ^ bb
        plus_l = la + np.where(minus_b == 0, lb, -lb)
        lm, bm, lp, bp = minus_l, minus_b, plus_l, ba
        record(n, _bit_entropy(lm[:, 0], bm[:, 0]), _bit_entropy(lp[:, 0], bp[:, 0]))
    return tuple(out)


def simulated_design(plan: ss.BstPlan, model: FaimModel, nhat: int, n_unfrozen: int, trials: int, seed: int, target: str = "low") -> CodeSpec:
    """Unfreeze the fast positions with the smallest genie Bhattacharyya estimates.

    Estimates are averaged over the slow indices of the target set, so every
    target index shares one fast-stage frozen set.
    """
    probe = frozen_spec(plan, nhat)
    est = genie_estimates(probe, model, trials, seed)
    idx = plan.index_set(TARGETS[target]) - 1
    score = est.bhattacharyya[idx].mean(axis=0)
    sel = fs.select_by_rate(score, n_unfrozen)
    spec = uniform_spec(plan, nhat, sel.unfrozen, target)
    object.__setattr__(spec, "meta", {"design": "simulated", "trials": trials, "seed": seed, "score": score.tolist()})
    return spec
