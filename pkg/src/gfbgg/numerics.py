"""Numerical kernel: special functions, quadrature, root finding, simplex
minimization and reproducible random streams.

Everything here works on float64 numpy arrays. Special functions are thin,
domain-checked wrappers over :mod:`scipy.special` with log-domain tails added
where scipy underflows.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import optimize, special

__all__ = [
    "DomainError",
    "EvaluationError",
    "BracketError",
    "log_gamma",
    "log_gamma_hazard",
    "regularized_gamma_q",
    "log_regularized_gamma_q",
    "inverse_regularized_gamma_q",
    "inverse_log_regularized_gamma_q",
    "QuadratureRule",
    "gauss_laguerre_rule",
    "integrate_positive_halfline",
    "edge_mass_fraction",
    "concave_log_rule",
    "OptimizeOutcome",
    "minimize_nd",
    "minimize_2d",
    "find_root",
    "RandomStream",
    "parallel_map",
]

_TINY = 1e-300
_LOG_TINY = np.log(_TINY)


class DomainError(ValueError):
    """An argument lies outside the domain of a function."""


class EvaluationError(ArithmeticError):
    """A numerical evaluation produced a non-finite or underflowed value."""

    def __init__(self, message: str, node: float | None = None, row: int | None = None):
        super().__init__(message)
        self.node = node
        self.row = row


class BracketError(ValueError):
    """The supplied bracket does not straddle a sign change."""


# ---------------------------------------------------------------------------
# special functions
# ---------------------------------------------------------------------------


def _as_array(x: ArrayLike) -> NDArray[np.float64]:
    return np.asarray(x, dtype=np.float64)


def _unwrap(x: NDArray[np.float64]):
    return float(x) if x.ndim == 0 else x


def log_gamma(x: ArrayLike):
    """Return ``ln Gamma(x)`` for positive finite ``x``."""
    x = _as_array(x)
    if not np.all(np.isfinite(x)) or np.any(x <= 0):
        raise DomainError("log_gamma requires finite x > 0")
    return _unwrap(special.gammaln(x))


def regularized_gamma_q(shape: ArrayLike, x: ArrayLike):
    """Upper regularized incomplete gamma function ``Q(shape, x)``."""
    shape, x = _as_array(shape), _as_array(x)
    if np.any(~np.isfinite(shape)) or np.any(shape <= 0):
        raise DomainError("shape must be finite and positive")
    if np.any(np.isnan(x)) or np.any(x < 0):
        raise DomainError("x must be non-negative")
    return _unwrap(special.gammaincc(shape, x))


def _log_q_continued_fraction(s: NDArray, x: NDArray, n_terms: int = 300) -> NDArray:
    # valid (and fast) for x > s + 1; returns ln Q
    return -x + s * np.log(x) - special.gammaln(s) + _log_q_fraction(s, x, n_terms)


def _log_q_fraction(s: NDArray, x: NDArray, n_terms: int = 300) -> NDArray:
    # Modified Lentz evaluation of the Legendre continued fraction h with
    # Q(s, x) = x**s exp(-x) h / Gamma(s); returns ln h
    tiny = 1e-300
    b = x + 1.0 - s
    c = np.full_like(x, 1.0 / tiny)
    d = 1.0 / b
    h = d.copy()
    for i in range(1, n_terms + 1):
        an = -i * (i - s)
        b = b + 2.0
        d = an * d + b
        d = np.where(np.abs(d) < tiny, tiny, d)
        c = b + an / c
        c = np.where(np.abs(c) < tiny, tiny, c)
        d = 1.0 / d
        delta = d * c
        h = h * delta
        if np.all(np.abs(delta - 1.0) < 1e-16):
            break
    return np.log(h)


def log_regularized_gamma_q(shape: ArrayLike, x: ArrayLike):
    """``ln Q(shape, x)`` without underflow in either tail.

    Near ``Q = 1`` the value is formed as ``log1p(-P)``; once ``Q`` drops below
    1e-300 a continued fraction is evaluated directly in log space.
    """
    shape, x = np.broadcast_arrays(_as_array(shape), _as_array(x))
    if np.any(~np.isfinite(shape)) or np.any(shape <= 0):
        raise DomainError("shape must be finite and positive")
    if np.any(np.isnan(x)) or np.any(x < 0):
        raise DomainError("x must be non-negative")
    p = special.gammainc(shape, x)
    q = special.gammaincc(shape, x)
    with np.errstate(divide="ignore"):
        out = np.where(p < 0.5, np.log1p(-p), np.log(q))
    deep = (q < _TINY) & (p >= 0.5)
    if np.any(deep):
        out = np.array(out, dtype=np.float64)
        out[deep] = _log_q_continued_fraction(shape[deep], x[deep])
    return _unwrap(np.asarray(out, dtype=np.float64))


def log_gamma_hazard(shape: float, x: ArrayLike):
    """Log hazard ``ln[x**(s-1) exp(-x) / (Gamma(s) Q(s, x))]`` of a unit-rate
    gamma law, for ``x > 0``.

    For large ``x`` it is ``-ln(x h)`` with ``h`` the continued fraction of
    ``Q``, which avoids cancelling two terms of size ``x``. Below ``x = 25``
    the direct form loses under 1e-14 and is cheaper.
    """
    x = _as_array(x)
    if shape <= 0 or not np.isfinite(shape):
        raise DomainError("shape must be finite and positive")
    if np.any(~(x > 0)):
        raise DomainError("x must be positive")
    s = float(shape)
    out = np.empty_like(x, dtype=np.float64)
    far = x > max(s + 1.0, 25.0)
    near = ~far
    if np.any(near):
        xn = x[near]
        out[near] = (s - 1.0) * np.log(xn) - xn - special.gammaln(s) - log_regularized_gamma_q(s, xn)
    if np.any(far):
        xf = x[far]
        out[far] = -np.log(xf) - _log_q_fraction(np.full_like(xf, s), xf)
    return _unwrap(out)


def inverse_regularized_gamma_q(shape: ArrayLike, q: ArrayLike):
    """Return ``x`` with ``Q(shape, x) = q`` for ``q`` in (0, 1]."""
    shape, q = _as_array(shape), _as_array(q)
    if np.any(~np.isfinite(shape)) or np.any(shape <= 0):
        raise DomainError("shape must be finite and positive")
    if np.any(~(q > 0)) or np.any(q > 1):
        raise DomainError("q must lie in (0, 1]")
    return _unwrap(np.where(q == 1.0, 0.0, special.gammainccinv(shape, q)))


def inverse_log_regularized_gamma_q(shape: float, log_q: ArrayLike):
    """Solve ``ln Q(shape, x) = log_q`` for ``x``; handles ``log_q`` < ln 1e-300.

    The scipy inverse seeds the solution, a few Newton steps on ``ln Q``
    (derivative ``-hazard``) polish it or carry it into the deep tail.
    """
    log_q = _as_array(log_q)
    if shape <= 0 or not np.isfinite(shape):
        raise DomainError("shape must be finite and positive")
    if np.any(log_q > 0) or np.any(np.isnan(log_q)):
        raise DomainError("log_q must be <= 0")
    out_shape = log_q.shape
    log_q = log_q.ravel()
    safe = np.maximum(log_q, _LOG_TINY)
    x = special.gammainccinv(shape, np.exp(safe))
    x = np.where(log_q == 0.0, 0.0, x)
    active = log_q < 0.0
    for _ in range(60):
        if not np.any(active):
            break
        xa = np.maximum(x[active], 1e-300)
        lq = log_regularized_gamma_q(shape, xa)
        log_h = (shape - 1.0) * np.log(xa) - xa - special.gammaln(shape) - lq
        step = (lq - log_q[active]) / np.exp(log_h)
        new = xa + step
        new = np.where(new <= 0, xa / 2.0, new)
        done = np.abs(new - xa) <= 1e-14 * np.maximum(1.0, xa)
        x[active] = new
        idx = np.flatnonzero(active)
        active[idx[done]] = False
    return _unwrap(x.reshape(out_shape))


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and plain weights for integrals over ``z > 0``.

    ``sum(weights * f(nodes))`` approximates ``int_0^inf f(z) dz``; any weight
    function the rule was built around is already divided out.
    """

    nodes: NDArray[np.float64]
    weights: NDArray[np.float64]
    kind: str = "generalized-gauss-laguerre"

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=np.float64)
        weights = np.asarray(self.weights, dtype=np.float64)
        if nodes.ndim != 1 or nodes.shape != weights.shape:
            raise ValueError("nodes and weights must be 1-d arrays of equal length")
        if not (np.all(np.isfinite(nodes)) and np.all(nodes > 0)):
            raise ValueError("nodes must be finite and positive")
        if np.any(np.diff(nodes) <= 0):
            raise ValueError("nodes must be strictly increasing")
        if not (np.all(np.isfinite(weights)) and np.all(weights > 0)):
            raise ValueError("weights must be finite and positive")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @property
    def order(self) -> int:
        return self.nodes.size


def gauss_laguerre_rule(order: int, alpha: float = 0.0, scale: float = 1.0) -> QuadratureRule:
    """Generalized Gauss-Laguerre rule for weight ``z**alpha * exp(-z/scale)``.

    Weights are returned in plain form (weight function divided out) and every
    node with an underflowed weight is dropped.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    if alpha <= -1:
        raise DomainError("alpha must exceed -1")
    x, w = special.roots_genlaguerre(order, alpha)
    with np.errstate(divide="ignore"):
        log_w = np.log(w) - alpha * np.log(x) + x
    keep = np.isfinite(log_w) & (w > 0)
    return QuadratureRule(x[keep] * scale, np.exp(log_w[keep]) * scale, "generalized-gauss-laguerre")


def integrate_positive_halfline(f: Callable[[NDArray], ArrayLike], rule: QuadratureRule) -> float:
    """Apply ``rule`` to ``f``; non-finite integrand values raise with the node."""
    try:
        values = np.asarray(f(rule.nodes), dtype=np.float64)
        if values.shape != rule.nodes.shape:
            raise TypeError
    except TypeError:
        values = np.array([float(f(z)) for z in rule.nodes])
    bad = ~np.isfinite(values)
    if np.any(bad):
        node = float(rule.nodes[np.argmax(bad)])
        raise EvaluationError(f"integrand is not finite at node {node!r}", node=node)
    return float(np.dot(rule.weights, values))


def edge_mass_fraction(values: NDArray, rule: QuadratureRule, n_edge: int = 5) -> float:
    """Largest share of the quadrature sum carried by the first or last ``n_edge`` nodes."""
    contrib = np.abs(rule.weights * values)
    total = contrib.sum()
    if total == 0:
        return 1.0
    return float(max(contrib[:n_edge].sum(), contrib[-n_edge:].sum()) / total)


_GL_CACHE: dict[int, tuple[NDArray, NDArray]] = {}


def _gauss_legendre(order: int) -> tuple[NDArray, NDArray]:
    if order not in _GL_CACHE:
        _GL_CACHE[order] = np.polynomial.legendre.leggauss(order)
    return _GL_CACHE[order]


def concave_log_rule(
    dphi: Callable[[NDArray], tuple[NDArray, NDArray, NDArray]],
    t_right: NDArray,
    order: int = 48,
    drop: float = 42.0,
) -> tuple[NDArray, NDArray, NDArray]:
    """Per-row Gauss-Legendre rules for ``int exp(phi(t)) dt`` with concave ``phi``.

    ``dphi(t)`` returns ``(phi, phi', phi'')`` elementwise for a (rows, m)
    array. ``t_right`` is any point at or right of each mode (``phi' <= 0``)
    and ``phi''' <= 0`` is assumed, which makes Newton monotone from there.
    The interval is cut where ``phi`` has dropped ``drop`` nats below its peak.

    Returns ``(t, log_w, phi)`` with shape (rows, order): nodes, log weights
    and the log-integrand at the nodes.
    """
    t = np.array(t_right, dtype=np.float64).reshape(-1, 1)
    for _ in range(100):
        _, d1, d2 = dphi(t)
        step = d1 / d2
        t = t - step
        if np.all(np.abs(step) < 1e-8 * np.maximum(1.0, np.abs(t))):
            break
    mode = t
    peak, _, curv = dphi(mode)
    width = 1.0 / np.sqrt(-curv)

    log_drop = np.log(drop)

    def _solve(start: NDArray) -> NDArray:
        # Newton on u = ln(peak - phi): nearly linear in both a Gaussian core
        # and a double-exponential tail, where plain Newton crawls
        s = start
        for _ in range(60):
            v, d1, _ = dphi(s)
            gap = np.maximum(peak - v, _TINY)
            resid = np.log(gap) - log_drop
            if np.all(np.abs(resid) < 1e-3):
                break
            s = s + resid * gap / d1
        return s

    lo = _solve(mode - width)
    hi = _solve(mode + width)
    # one Gauss-Legendre panel on each side of the mode
    m = max(order // 2, 2)
    x, w = _gauss_legendre(m)
    panels = []
    for a, b in ((lo, mode), (mode, hi)):
        half = 0.5 * (b - a)
        panels.append((0.5 * (b + a) + half * x[None, :], np.log(half) + np.log(w)[None, :]))
    nodes = np.concatenate([panels[0][0], panels[1][0]], axis=1)
    log_w = np.concatenate([panels[0][1], panels[1][1]], axis=1)
    phi, _, _ = dphi(nodes)
    return nodes, log_w, phi


# ---------------------------------------------------------------------------
# optimization and roots
# ---------------------------------------------------------------------------


@dataclass
class OptimizeOutcome:
    x: NDArray[np.float64]
    fun: float
    status: str
    nfev: int = 0
    history: list[float] = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status == "converged"


def _nelder_mead(objective, start, xtol, ftol, max_iter, step):
    start = np.asarray(start, dtype=np.float64)
    d = start.size
    simplex = np.empty((d + 1, d))
    simplex[0] = start
    for j in range(d):
        vertex = start.copy()
        vertex[j] = vertex[j] + (step if vertex[j] == 0 else step * max(1.0, abs(vertex[j])))
        simplex[j + 1] = vertex
    res = optimize.minimize(
        objective,
        start,
        method="Nelder-Mead",
        options={
            "initial_simplex": simplex,
            "xatol": xtol,
            "fatol": ftol,
            "maxiter": max_iter,
            "maxfev": max_iter * (d + 1),
            "adaptive": d > 3,
        },
    )
    status = "converged" if res.success else "max-iterations"
    return np.asarray(res.x, dtype=np.float64), float(res.fun), status, int(res.nfev)


def minimize_nd(
    objective: Callable[[NDArray], float],
    start: Sequence[float],
    *,
    xtol: float = 1e-7,
    ftol: float = 1e-8,
    max_iter: int = 5000,
    step: float = 0.1,
    restarts: int = 1,
    jitter_starts: int = 0,
    jitter_scale: float = 0.3,
    rng: np.random.Generator | None = None,
) -> OptimizeOutcome:
    """Derivative-free simplex minimization of ``objective`` over R^d.

    After the first descent the search is restarted ``restarts`` times from
    the best vertex (this un-sticks collapsed simplices); ``jitter_starts``
    extra descents begin from Gaussian perturbations of ``start``. The best
    point over all descents is returned. Positivity is the caller's job:
    optimize over log-parameters.
    """
    start = np.atleast_1d(np.asarray(start, dtype=np.float64))
    f0 = float(objective(start))
    if not np.isfinite(f0):
        raise EvaluationError("objective is not finite at the starting point")

    def safe(x):
        v = float(objective(x))
        return v if np.isfinite(v) else 1e300

    best_x, best_f, status, nfev = start, f0, "converged", 1
    starts = [start]
    if jitter_starts:
        rng = rng if rng is not None else np.random.default_rng(0)
        for _ in range(jitter_starts):
            starts.append(start + jitter_scale * rng.standard_normal(start.size))
    for s in starts:
        x, f, st, ne = _nelder_mead(safe, s, xtol, ftol, max_iter, step)
        nfev += ne
        for _ in range(restarts):
            x2, f2, st, ne = _nelder_mead(safe, x, xtol, ftol, max_iter, step / 10)
            nfev += ne
            if f2 < f:
                x, f = x2, f2
        if f < best_f:
            best_x, best_f, status = x, f, st
        elif s is start and st != "converged" and best_x is start:
            status = st
    return OptimizeOutcome(best_x, best_f, status, nfev)


def minimize_2d(objective: Callable[[NDArray], float], start: Sequence[float], **options) -> OptimizeOutcome:
    """:func:`minimize_nd` restricted to two coordinates."""
    if np.size(start) != 2:
        raise ValueError("minimize_2d takes a 2-vector start")
    return minimize_nd(objective, start, **options)


def find_root(f: Callable[[float], float], bracket: tuple[float, float], tol: float = 1e-12) -> float:
    """Root of ``f`` inside ``bracket`` (Brent: bisection safeguarding secant steps)."""
    lo, hi = float(bracket[0]), float(bracket[1])
    flo, fhi = f(lo), f(hi)
    if flo == 0:
        return lo
    if fhi == 0:
        return hi
    if flo * fhi > 0:
        raise BracketError(f"f({lo})={flo} and f({hi})={fhi} have the same sign")
    return float(optimize.brentq(f, lo, hi, xtol=tol, rtol=4 * np.finfo(float).eps, maxiter=500))


# ---------------------------------------------------------------------------
# random streams
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RandomStream:
    """Addressable random stream: ``(seed, *stream_id)`` fixes every draw.

    Backed by the counter-based Philox generator keyed through
    :class:`numpy.random.SeedSequence`, so sibling streams are independent and
    a task's draws do not depend on which worker runs it.
    """

    seed: int
    stream_id: tuple[int, ...] = ()

    def child(self, *keys: int) -> "RandomStream":
        return RandomStream(self.seed, self.stream_id + tuple(int(k) for k in keys))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed) % 2**64, spawn_key=self.stream_id)
        return np.random.Generator(np.random.Philox(ss))


def parallel_map(fn: Callable, items: Sequence, workers: int = 1) -> list:
    """``[fn(x) for x in items]``, optionally over a process pool.

    Results come back in input order, so output does not depend on
    ``workers``; ``fn`` must be picklable and own its randomness.
    """
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * workers))))
