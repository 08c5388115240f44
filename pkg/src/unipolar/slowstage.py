"""The basic slow transform (BST): plans, index sets, transforms and base-vectors.

Indices in the public API are 1-based to match the usual description of the
construction; arrays are 0-based internally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.optimize import brentq

from unipolar.errors import DomainError, ValidationError

LAT_TOP = "lat_top"
LAT_BOT = "lat_bot"
MED_MINUS = "med_minus"
MED_PLUS = "med_plus"


# ---------------------------------------------------------------------------
# Binary entropy


def h2(p):
    """Binary entropy in bits; accepts scalars or arrays."""
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = -p * np.log2(p) - (1 - p) * np.log2(1 - p)
    out = np.where((p <= 0) | (p >= 1), 0.0, out)
    return float(out) if out.ndim == 0 else out


def h2inv(y: float) -> float:
    """Inverse of ``h2`` on ``[0, 1/2]``."""
    if not -1e-15 <= y <= 1 + 1e-15:
        raise DomainError(f"h2inv argument {y} outside [0, 1]")
    if y <= 0:
        return 0.0
    if y >= 1:
        return 0.5
    return brentq(lambda p: h2(p) - y, 0.0, 0.5, xtol=1e-16, rtol=4 * np.finfo(float).eps, maxiter=500)


def bconv(a: float, b: float) -> float:
    """Binary convolution ``a * b = a(1-b) + b(1-a)``."""
    return a * (1 - b) + b * (1 - a)


# ---------------------------------------------------------------------------
# Plans


@dataclass(frozen=True)
class BstPlan:
    """Level-``n`` BST with initial lateral size ``L0`` and medial size ``M0``."""

    L0: int
    M0: int
    n: int

    def __post_init__(self):
        for name in ("L0", "M0", "n"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 0:
                raise ValidationError(f"{name} must be a nonnegative integer")
        if self.M0 % 2 or self.M0 < 4:
            raise ValidationError("M0 must be even and at least 4")

    def L(self, level: int | None = None) -> int:
        k = self.n if level is None else level
        return 2**k * self.L0 + 2**k - 1

    def M(self, level: int | None = None) -> int:
        k = self.n if level is None else level
        return 2**k * self.M0 - 2 ** (k + 1) + 2

    def N(self, level: int | None = None) -> int:
        k = self.n if level is None else level
        return 2**k * (2 * self.L0 + self.M0)

    @property
    def N0(self) -> int:
        return 2 * self.L0 + self.M0

    @property
    def medial_fraction(self) -> float:
        return self.M() / self.N()

    def classify(self, i: int, level: int | None = None) -> str:
        k = self.n if level is None else level
        L, M, N = self.L(k), self.M(k), self.N(k)
        if not 1 <= i <= N:
            raise ValidationError(f"index {i} outside 1..{N}")
        if i <= L:
            return LAT_TOP
        if i > L + M:
            return LAT_BOT
        return MED_MINUS if (i - L) % 2 == 1 else MED_PLUS

    def is_medial(self, i: int, level: int | None = None) -> bool:
        return self.classify(i, level) in (MED_MINUS, MED_PLUS)

    def index_set(self, kind: str, level: int | None = None) -> np.ndarray:
        k = self.n if level is None else level
        L, M, N = self.L(k), self.M(k), self.N(k)
        if kind == LAT_TOP:
            return np.arange(1, L + 1)
        if kind == LAT_BOT:
            return np.arange(L + M + 1, N + 1)
        if kind == MED_MINUS:
            return np.arange(L + 1, L + M + 1, 2)
        if kind == MED_PLUS:
            return np.arange(L + 2, L + M + 1, 2)
        raise ValidationError(f"unknown index set {kind!r}")

    @property
    def medial(self) -> np.ndarray:
        return np.arange(self.L() + 1, self.L() + self.M() + 1)

    @cached_property
    def _steps(self):
        return [_step_maps(self.L(k), self.M(k), self.N(k)) for k in range(self.n)]

    def to_json(self) -> dict:
        return {"L0": self.L0, "M0": self.M0, "n": self.n}


def make_plan(L0: int, M0: int, n: int) -> BstPlan:
    return BstPlan(int(L0), int(M0), int(n))


def medial_fraction_min_M0(L0: int, alpha: float) -> int:
    """Smallest even ``M0`` whose medial fraction stays at least ``alpha`` at every level."""
    if not 0 < alpha < 1:
        raise ValidationError("alpha must lie in (0, 1)")
    m = math.ceil(2 * (1 + alpha * L0) / (1 - alpha) - 1e-12)
    m += m % 2
    return max(m, 4)


# ---------------------------------------------------------------------------
# Transforms


def _step_maps(L: int, M: int, N: int):
    """Index maps for one level step from ``(U, V)`` (concatenated) to ``F``.

    Each output is ``src[a] ^ src[b]`` where ``b == -1`` means a single term.
    Returns ``(fa, fb, ia, ib)`` for the forward and inverse directions.
    """
    fa = np.full(2 * N, -1)
    fb = np.full(2 * N, -1)
    ia = np.full(2 * N, -1)
    ib = np.full(2 * N, -1)
    u = lambda k: k - 1  # noqa: E731
    v = lambda k: N + k - 1  # noqa: E731

    def setf(i, a, b=-1):
        fa[i - 1], fb[i - 1] = a, b

    def seti(pos, a, b=-1):
        ia[pos], ib[pos] = a - 1, (b - 1 if b > 0 else -1)

    for k in list(range(1, L + 1)) + list(range(L + M + 1, N + 1)):
        setf(2 * k - 1, u(k))
        setf(2 * k, v(k))
        seti(u(k), 2 * k - 1)
        seti(v(k), 2 * k)
    setf(2 * L + 1, u(L + 1))
    seti(u(L + 1), 2 * L + 1)
    setf(2 * (L + M), v(L + M))
    seti(v(L + M), 2 * (L + M))
    for j in range(L + 1, L + M):
        setf(2 * j, u(j + 1), v(j))
        if (j - L) % 2 == 1:  # j in Med-
            setf(2 * j + 1, v(j))
            seti(v(j), 2 * j + 1)
            seti(u(j + 1), 2 * j, 2 * j + 1)
        else:
            setf(2 * j + 1, u(j + 1))
            seti(u(j + 1), 2 * j + 1)
            seti(v(j), 2 * j, 2 * j + 1)
    assert (fa >= 0).all() and (ia >= 0).all()
    return fa, fb, ia, ib


def _apply(z: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = z[..., a]
    two = b >= 0
    out[..., two] ^= z[..., b[two]]
    return out


def _check_bits(plan: BstPlan, x) -> np.ndarray:
    x = np.asarray(x)
    if x.shape[-1] != plan.N():
        raise ValidationError(f"expected length {plan.N()}, got {x.shape[-1]}")
    if x.size and (x.min() < 0 or x.max() > 1):
        raise ValidationError("entries must be bits")
    return x.astype(np.uint8)


def bst_forward(plan: BstPlan, x) -> np.ndarray:
    """Level-``n`` BST of ``x``; leading axes are batch axes."""
    z = _check_bits(plan, x)
    batch = z.shape[:-1]
    z = z.reshape(batch + (2**plan.n, plan.N0))
    for k, (fa, fb, _, _) in enumerate(plan._steps):
        pairs = z.reshape(batch + (z.shape[-2] // 2, 2 * plan.N(k)))
        z = _apply(pairs, fa, fb)
    return z.reshape(batch + (plan.N(),))


def bst_inverse(plan: BstPlan, f) -> np.ndarray:
    """Inverse of ``bst_forward``."""
    z = _check_bits(plan, f)
    batch = z.shape[:-1]
    z = z.reshape(batch + (1, plan.N()))
    for k in reversed(range(plan.n)):
        _, _, ia, ib = plan._steps[k]
        uv = _apply(z, ia, ib)
        z = uv.reshape(batch + (2 * z.shape[-2], plan.N(k)))
    return z.reshape(batch + (plan.N(),))


def transform_matrix(plan: BstPlan) -> np.ndarray:
    """Binary matrix ``A`` with ``f = A x mod 2``."""
    eye = np.eye(plan.N(), dtype=np.uint8)
    return bst_forward(plan, eye).T


def step_prefix_split(plan: BstPlan, level: int, f_prefix: np.ndarray):
    """Recover the prefixes of ``U`` and ``V`` determined by ``F_1^{i-1}``.

    ``level`` is the level of ``F`` (at least 1) and ``i - 1 = len(f_prefix)``.
    """
    N = plan.N(level - 1)
    _, _, ia, ib = plan._steps[level - 1]
    m = len(f_prefix)
    pad = np.zeros(2 * N, dtype=np.uint8)
    pad[:m] = f_prefix
    uv = _apply(pad, ia, ib)
    i = m + 1
    if i % 2 == 1:  # i = 2j - 1
        j = (i + 1) // 2
        return uv[: j - 1], uv[N : N + j - 1]
    j = i // 2
    return uv[:j], uv[N : N + j - 1]


# ---------------------------------------------------------------------------
# Base-vectors and the observation-truncated transform


@dataclass(frozen=True)
class BaseVector:
    level: int
    index: int
    absolute: tuple
    N0: int

    @property
    def modulo(self) -> tuple:
        return tuple(b - ell * self.N0 for ell, b in enumerate(self.absolute))


def _require_medial(plan: BstPlan, i: int, level: int):
    if not plan.is_medial(i, level):
        raise DomainError(f"index {i} is lateral at level {level}")


def base_vector(plan: BstPlan, i: int, level: int | None = None) -> BaseVector:
    k = plan.n if level is None else level
    _require_medial(plan, i, k)
    if k == 0:
        return BaseVector(0, i, (i,), plan.N0)
    j = i // 2
    first = base_vector(plan, j + 1, k - 1).absolute
    second = base_vector(plan, j, k - 1).absolute
    half = plan.N(k - 1)
    return BaseVector(k, i, tuple(first) + tuple(b + half for b in second), plan.N0)


def otbst_eval(plan: BstPlan, i: int, x_windows, y_windows, level: int | None = None):
    """``(f~, g~)`` of a medial index from its base windows.

    ``x_windows[l]`` holds ``x`` over ``b_l - L0 .. b_l`` and ``y_windows[l]``
    holds ``y`` over ``b_l - L0 .. b_l + L0``, in base-vector order.
    ``g~`` is a nested tuple; at level 0 it is ``(x prefix, y window)``.
    """
    k = plan.n if level is None else level
    _require_medial(plan, i, k)
    xw = np.asarray(x_windows)
    yw = np.asarray(y_windows)
    if xw.shape != (2**k, plan.L0 + 1) or yw.shape[:2] != (2**k, 2 * plan.L0 + 1):
        raise ValidationError("window shapes do not match the base-vector")
    return _otbst(plan, i, k, xw, yw)


def _otbst(plan, i, k, xw, yw):
    if k == 0:
        return int(xw[0, -1]), (tuple(int(v) for v in xw[0, :-1]), tuple(yw[0].tolist()))
    j = i // 2
    h = 2 ** (k - 1)
    fu, gu = _otbst(plan, j + 1, k - 1, xw[:h], yw[:h])
    fv, gv = _otbst(plan, j, k - 1, xw[h:], yw[h:])
    minus = plan.classify(j, k - 1) == MED_MINUS
    f_even = fu ^ fv
    g_even = (gv, gu) if minus else (gu, gv)
    if i % 2 == 0:
        return f_even, g_even
    return (fv if minus else fu), (f_even, g_even)


def gamma_map(plan: BstPlan, i: int, f_prefix, y, level: int | None = None):
    """``g~_i`` computed from the full observation ``G_i = (F_1^{i-1}, Y_1^N)``."""
    k = plan.n if level is None else level
    _require_medial(plan, i, k)
    f_prefix = np.asarray(f_prefix, dtype=np.uint8)
    y = np.asarray(y)
    if len(f_prefix) != i - 1 or len(y) != plan.N(k):
        raise ValidationError("G must hold i-1 bits and N observations")
    return _gamma(plan, i, k, f_prefix, y)


def _gamma(plan, i, k, f_prefix, y):
    L0 = plan.L0
    if k == 0:
        return tuple(int(v) for v in f_prefix[i - L0 - 1 : i - 1]), tuple(y[i - L0 - 1 : i + L0].tolist())
    j = i // 2
    if i % 2 == 1:
        return int(f_prefix[2 * j - 1]), _gamma(plan, 2 * j, k, f_prefix[: 2 * j - 1], y)
    half = plan.N(k - 1)
    up, vp = step_prefix_split(plan, k, f_prefix)
    gu = _gamma(plan, j + 1, k - 1, up, y[:half])
    gv = _gamma(plan, j, k - 1, vp, y[half:])
    return (gv, gu) if plan.classify(j, k - 1) == MED_MINUS else (gu, gv)


def recover_windows(plan: BstPlan, i: int, g, level: int | None = None):
    """Invert ``g~``: the x prefixes (2^n, L0) and y windows (2^n, 2L0+1)."""
    k = plan.n if level is None else level
    _require_medial(plan, i, k)
    xs, ys = _recover(plan, i, k, g)
    return np.array(xs, dtype=np.uint8).reshape(2**k, plan.L0), np.array(ys).reshape(2**k, 2 * plan.L0 + 1)


def _recover(plan, i, k, g):
    if k == 0:
        return [list(g[0])], [list(g[1])]
    j = i // 2
    if i % 2 == 1:
        g = g[1]
    a, b = g
    gu, gv = (b, a) if plan.classify(j, k - 1) == MED_MINUS else (a, b)
    xu, yu = _recover(plan, j + 1, k - 1, gu)
    xv, yv = _recover(plan, j, k - 1, gv)
    return xu + xv, yu + yv


# ---------------------------------------------------------------------------
# Entropy envelope and level thresholds


def _c(x: float, y: float) -> float:
    return h2(bconv(h2inv(y + x), h2inv(y - x))) - y


def _d(x: float, y: float) -> float:
    return y - (y + x) * (y - x)


@dataclass(frozen=True, eq=False)
class EntropyEnvelope:
    H0: float
    C: np.ndarray
    D: np.ndarray

    @property
    def med_minus(self) -> np.ndarray:
        """Rows ``(lo, hi)`` bracketing Med- entropies per level."""
        return np.stack([self.H0 + self.C, self.H0 + self.D], axis=1)

    @property
    def med_plus(self) -> np.ndarray:
        return np.stack([self.H0 - self.D, self.H0 - self.C], axis=1)


def envelope(H0: float, n_max: int) -> EntropyEnvelope:
    if not 0 <= H0 <= 1:
        raise ValidationError("H0 must lie in [0, 1]")
    if n_max < 0:
        raise ValidationError("n_max must be nonnegative")
    C = np.zeros(n_max + 1)
    D = np.zeros(n_max + 1)
    cap = min(H0, 1 - H0)
    for k in range(1, n_max + 1):
        C[k] = min(max(_c(C[k - 1], H0), C[k - 1]), cap)
        D[k] = min(_d(D[k - 1], H0), cap)
    return EntropyEnvelope(H0, C, D)


def delta_lower(xi1: float, xi2: float) -> tuple[float, float]:
    """``Delta(xi1, xi2)`` and its closed-form floor."""
    if not (0 < xi1 < 1 and 0 < xi2 < 1):
        raise DomainError("arguments must lie in (0, 1)")
    a, b = h2inv(xi1), h2inv(xi2)
    delta = h2(bconv(a, b)) - xi2
    floor = a * (1 - 2 * b) ** 2 / math.log(2)
    return delta, floor


def _check_threshold(H0: float, xi: float) -> float:
    cap = min(H0, 1 - H0)
    if not 0 < xi < cap:
        raise DomainError(f"threshold {xi} outside (0, {cap})")
    return cap


def nth_crude(H0: float, xi: float) -> int:
    cap = _check_threshold(H0, xi)
    delta, _ = delta_lower(xi, 1 - xi)
    return 1 + int(math.floor((cap - xi) / delta))


def nth_refined(H0: float, xi: float, max_levels: int = 100000) -> int:
    """Smallest level at which the envelope pushes Med+ below ``xi`` (or Med- above ``1 - xi``)."""
    cap = _check_threshold(H0, xi)
    c = 0.0
    for k in range(1, max_levels + 1):
        c = min(max(_c(c, H0), c), cap)
        if cap - c <= xi:
            return k
    raise DomainError(f"threshold not reached within {max_levels} levels")
