"""Observed information (Louis' principle and numerical Hessian), Wald
intervals and bootstrap intervals for fitted GFB-GG models."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy import special, stats

from .fit import DirectOptions, EmOptions, FitResult, estep, fit
from .model import Dataset, ModelFamily, observed_log_likelihood, row_terms
from .numerics import EvaluationError, RandomStream, parallel_map
from .simulate import simulate_systems

FRAILTY_NAMES = ("k", "beta", "sigma")


class SingularInformationError(np.linalg.LinAlgError):
    def __init__(self, message: str, direction: dict[str, float]):
        super().__init__(message)
        self.direction = direction


@dataclass
class InformationMatrix:
    matrix: NDArray
    names: tuple[str, ...]
    method: str
    positive_definite: bool = True

    def __post_init__(self):
        self.matrix = 0.5 * (self.matrix + self.matrix.T)
        try:
            np.linalg.cholesky(self.matrix)
            self.positive_definite = True
        except np.linalg.LinAlgError:
            self.positive_definite = False

    def to_dict(self) -> dict:
        return {
            "matrix": self.matrix.tolist(),
            "names": list(self.names),
            "method": self.method,
            "positive_definite": self.positive_definite,
        }


@dataclass(frozen=True)
class Interval:
    point: float
    se: float
    lower: float
    upper: float
    level: float
    method: str

    def to_dict(self) -> dict:
        return {"point": self.point, "se": self.se, "lower": self.lower, "upper": self.upper,
                "level": self.level, "method": self.method}

    @property
    def length(self) -> float:
        return self.upper - self.lower

    def covers(self, value: float) -> bool:
        return bool(self.lower <= value <= self.upper)


@dataclass
class IntervalSet:
    intervals: dict[str, Interval]
    level: float
    method: str
    notes: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 < self.level < 1.0:
            raise ValueError("level must lie in (0, 1)")

    def __getitem__(self, name: str) -> Interval:
        return self.intervals[name]

    def __len__(self):
        return len(self.intervals)

    def to_dict(self) -> dict:
        return {
            "level": self.level,
            "method": self.method,
            "notes": list(self.notes),
            "intervals": {k: v.to_dict() for k, v in self.intervals.items()},
        }


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------


def _steps(x: NDArray, rel: float) -> NDArray:
    return rel * np.maximum(np.abs(x), 1e-3)


def _fd_gradient(f, x: NDArray, rel: float) -> NDArray:
    """Central differences of a vector-valued ``f``; result has shape ``f(x).shape + (p,)``."""
    h = _steps(x, rel)
    cols = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h[j]
        cols.append((f(x + e) - f(x - e)) / (2 * h[j]))
    return np.stack(cols, axis=-1)


def _fd_hessian(f, x: NDArray, rel: float) -> NDArray:
    h = _steps(x, rel)
    p = x.size
    f0 = f(x)
    out = np.empty(np.shape(f0) + (p, p))
    for j in range(p):
        ej = np.zeros(p)
        ej[j] = h[j]
        out[..., j, j] = (f(x + 2 * ej) - 2 * f0 + f(x - 2 * ej)) / (4 * h[j] ** 2)
        for l in range(j):
            el = np.zeros(p)
            el[l] = h[l]
            v = (f(x + ej + el) - f(x + ej - el) - f(x - ej + el) + f(x - ej - el)) / (4 * h[j] * h[l])
            out[..., j, l] = v
            out[..., l, j] = v
    return out


# ---------------------------------------------------------------------------
# information
# ---------------------------------------------------------------------------


def _split_names(family: ModelFamily):
    names = family.free_names
    y_names = tuple(n for n in names if n not in FRAILTY_NAMES)
    f_names = tuple(n for n in names if n in FRAILTY_NAMES)
    return names, y_names, f_names


def louis_information(
    family: ModelFamily,
    estimates: dict[str, float],
    d: Dataset,
    *,
    mode: str = "mc",
    mc_size: int = 1000,
    stream: RandomStream | None = None,
    order: int = 64,
    score_step: float = 1e-5,
    hessian_step: float = 1e-4,
) -> InformationMatrix:
    """Observed information by Louis' missing-information principle.

    Per row, ``E[-H_c | y] - Cov[S_c | y]`` where ``S_c`` and ``H_c`` are the
    complete-data score and Hessian; the expectations run over conditional
    frailty draws (``mode="mc"``) or quadrature nodes (``mode="quadrature"``).
    Derivatives of the complete-data log-likelihood are central finite
    differences in the natural parameters.
    """
    names, y_names, f_names = _split_names(family)
    base = dict(estimates)
    m = family.build(base)
    moments = estep(m, d, mode=mode, mc_size=mc_size, stream=stream or RandomStream(0, (0x10,)), order=order)
    z = np.exp(moments.log_z)
    w = moments.weights
    xy = np.array([base[nm] for nm in y_names])

    def terms(x):
        mm = family.build({**base, **dict(zip(y_names, x))})
        lp, b = row_terms(mm, d.y1, d.y2)
        return np.stack([lp, b], axis=-1)

    g = _fd_gradient(terms, xy, score_step)  # (n, 2, py)
    hh = _fd_hessian(terms, xy, hessian_step)  # (n, 2, py, py)
    ez = moments.ez
    s_y = g[:, None, 0, :] - z[:, :, None] * g[:, None, 1, :]  # (n, m, py)
    neg_h_yy = -(hh[:, 0] - ez[:, None, None] * hh[:, 1])  # (n, py, py)

    py, pf = len(y_names), len(f_names)
    if pf:
        xf = np.array([base[nm] for nm in f_names])
        lz = moments.log_z

        def log_g(x):
            p = {**base, **dict(zip(f_names, x))}
            fr = family.build(p).frailty
            if fr.is_gg:
                k, beta = fr.k, fr.beta
                return math.log(k) + beta * fr.log_a - special.gammaln(beta) + (k * beta - 1.0) * lz - fr.a * np.exp(k * lz)
            s = fr.sigma
            return -lz - math.log(s * math.sqrt(2 * math.pi)) - (lz + s * s / 2) ** 2 / (2 * s * s)

        s_f = _fd_gradient(log_g, xf, score_step)  # (n, m, pf)
        h_f = _fd_hessian(log_g, xf, hessian_step)  # (n, m, pf, pf)
        s_all = np.concatenate([s_y, s_f], axis=-1)
        neg_h_ff = -np.einsum("nm,nmjl->njl", w, h_f)
    else:
        s_all = s_y
    mean_s = np.einsum("nm,nmj->nj", w, s_all)
    second = np.einsum("nm,nmj,nml->njl", w, s_all, s_all)
    cov = second - mean_s[:, :, None] * mean_s[:, None, :]
    p = py + pf
    info = np.zeros((p, p))
    info[:py, :py] = neg_h_yy.sum(axis=0)
    if pf:
        info[py:, py:] = neg_h_ff.sum(axis=0)
    info -= cov.sum(axis=0)
    order_idx = [list(y_names + f_names).index(nm) for nm in names]
    info = info[np.ix_(order_idx, order_idx)]
    return InformationMatrix(info, names, "louis")


def numerical_hessian_information(
    family: ModelFamily, estimates: dict[str, float], d: Dataset, *, step: float = 1e-4
) -> InformationMatrix:
    """Negative finite-difference Hessian of the observed log-likelihood."""
    names = family.free_names
    x0 = np.array([estimates[nm] for nm in names])

    def ll(x):
        return np.array(observed_log_likelihood(family.build(dict(zip(names, x))), d))

    return InformationMatrix(-_fd_hessian(ll, x0, step), names, "numerical-hessian")


# ---------------------------------------------------------------------------
# intervals
# ---------------------------------------------------------------------------


def wald_intervals(info: InformationMatrix, estimates: dict[str, float], level: float = 0.95) -> IntervalSet:
    """``estimate +/- z * se`` with ``se = sqrt(diag(info^-1))``.

    A singular matrix raises :class:`SingularInformationError` naming the
    null direction; parameters with a non-positive inverse diagonal (an
    indefinite matrix) get NaN intervals and a note.
    """
    mat = info.matrix
    eig, vec = np.linalg.eigh(mat)
    scale = max(np.max(np.abs(eig)), 1e-300)
    if np.min(np.abs(eig)) <= 1e-13 * scale:
        j = int(np.argmin(np.abs(eig)))
        direction = dict(zip(info.names, vec[:, j].tolist()))
        raise SingularInformationError(f"information matrix is singular along {direction}", direction)
    cov = np.linalg.inv(mat)
    zq = float(stats.norm.ppf(0.5 + level / 2))
    out = {}
    notes = [] if info.positive_definite else ["information matrix is not positive definite"]
    for i, nm in enumerate(info.names):
        v = cov[i, i]
        point = float(estimates[nm])
        if v > 0 and np.isfinite(v):
            se = math.sqrt(v)
            out[nm] = Interval(point, se, point - zq * se, point + zq * se, level, "wald-louis" if info.method == "louis" else "wald-hessian")
        else:
            notes.append(f"no Wald interval for {nm}: non-positive variance")
            out[nm] = Interval(point, math.nan, math.nan, math.nan, level, "wald-louis")
    return IntervalSet(out, level, "wald", notes)


@dataclass(frozen=True)
class _BootTask:
    family: ModelFamily
    estimates: tuple
    y1: NDArray
    y2: NDArray
    mode: str
    seed: int
    index: int
    method: str
    options: object


def _boot_replicate(task: _BootTask):
    est = dict(task.estimates)
    rng = RandomStream(task.seed, (0xB0, task.index)).generator()
    n = task.y1.size
    if task.mode == "parametric":
        y1, y2 = simulate_systems(task.family.build(est), rng, n)
    else:
        idx = rng.integers(0, n, n)
        y1, y2 = task.y1[idx], task.y2[idx]
    data = Dataset(y1, y2)
    try:
        res = fit(task.family, data, task.method, task.options, start=est)
    except (EvaluationError, ValueError, np.linalg.LinAlgError):
        return None
    if not res.converged:
        return None
    return [res.estimates[nm] for nm in task.family.free_names]


@dataclass
class BootstrapResult:
    intervals: IntervalSet
    replicates: NDArray
    failures: int
    requested: int

    def to_dict(self) -> dict:
        return {**self.intervals.to_dict(), "failures": self.failures, "replicates": self.requested}


def bootstrap(
    result: FitResult,
    d: Dataset,
    B: int = 1000,
    *,
    mode: str = "parametric",
    seed: int = 0,
    level: float = 0.95,
    method: str = "direct",
    options: DirectOptions | EmOptions | None = None,
    workers: int = 1,
) -> BootstrapResult:
    """Bootstrap standard errors and percentile limits.

    ``mode="parametric"`` refits datasets simulated from the fitted model;
    ``mode="nonparametric"`` resamples rows. Each replicate owns the stream
    ``(seed, 0xB0, index)``. Failed refits are dropped and counted; above 10%
    failures a warning is attached. The percentile limits are widened to
    contain the point estimate when needed.
    """
    if B < 2:
        raise ValueError("B must be at least 2")
    if mode not in ("parametric", "nonparametric"):
        raise ValueError("mode must be 'parametric' or 'nonparametric'")
    names = result.family.free_names
    tasks = [
        _BootTask(result.family, tuple(result.estimates.items()), d.y1, d.y2, mode, seed, i, method, options)
        for i in range(B)
    ]
    reps = parallel_map(_boot_replicate, tasks, workers)
    ok = [r for r in reps if r is not None]
    failures = B - len(ok)
    notes = []
    if failures > 0.1 * B:
        msg = f"{failures} of {B} bootstrap refits failed"
        notes.append(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    arr = np.array(ok, dtype=np.float64).reshape(-1, len(names))
    tail = 50.0 * (1.0 - level)
    out = {}
    for j, nm in enumerate(names):
        point = float(result.estimates[nm])
        col = arr[:, j]
        if col.size == 0:
            out[nm] = Interval(point, math.nan, math.nan, math.nan, level, "bootstrap-percentile")
            continue
        # identical replicates give exactly zero spread, not mean round-off
        se = float(col.std(ddof=1)) if col.size > 1 and np.ptp(col) > 0 else 0.0
        lo, hi = np.percentile(col, [tail, 100.0 - tail])
        out[nm] = Interval(point, se, min(float(lo), point), max(float(hi), point), level, "bootstrap-percentile")
    return BootstrapResult(IntervalSet(out, level, f"bootstrap-{mode}", notes), arr, failures, B)


__all__ = [
    "BootstrapResult",
    "InformationMatrix",
    "Interval",
    "IntervalSet",
    "SingularInformationError",
    "bootstrap",
    "louis_information",
    "numerical_hessian_information",
    "wald_intervals",
]
