"""Information criteria and the candidate grids for model selection."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .distributions import EXPONENTIAL, GAMMA, WEIBULL
from .fit import DirectOptions, EmOptions, FitResult, fit
from .model import Dataset, ModelFamily
from .numerics import EvaluationError, parallel_map

CRITERIA = ("aic", "bic", "aicc", "bc")
_BASELINES = (EXPONENTIAL, WEIBULL, GAMMA)


@dataclass(frozen=True)
class Criteria:
    aic: float
    bic: float
    aicc: float | None
    bc: float

    def get(self, name: str) -> float | None:
        return getattr(self, name)

    def to_dict(self) -> dict:
        return {"aic": self.aic, "bic": self.bic, "aicc": self.aicc, "bc": self.bc}


def criteria(loglik: float, d: int, n: int) -> Criteria:
    """AIC, BIC, AICc (None when ``n <= d + 1``) and the bridge criterion
    ``n**(2/3) * (1 + 1/2 + ... + 1/d) - 2 lnL``."""
    if d < 0 or n < 1:
        raise ValueError("need d >= 0 and n >= 1")
    m2 = -2.0 * loglik
    aic = 2.0 * d + m2
    bic = d * math.log(n) + m2
    aicc = aic + 2.0 * d * (d + 1) / (n - d - 1) if n > d + 1 else None
    harmonic = sum(1.0 / j for j in range(1, d + 1))
    bc = n ** (2.0 / 3.0) * harmonic + m2
    return Criteria(aic, bic, aicc, bc)


def free_parameter_count(family: ModelFamily) -> int:
    return family.n_params


@dataclass(frozen=True)
class CandidateGrid:
    entries: tuple[ModelFamily, ...]
    kind: str

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, model_id: str) -> ModelFamily:
        for fam in self.entries:
            if fam.model_id == model_id:
                return fam
        raise KeyError(model_id)

    def ids(self) -> list[str]:
        return [fam.model_id for fam in self.entries]


def _block(frailty: str, first: int) -> list[ModelFamily]:
    out = []
    i = first
    for before in _BASELINES:
        for after in _BASELINES:
            out.append(ModelFamily(before, after, frailty, f"M{i}"))
            i += 1
    return out


def grid27() -> CandidateGrid:
    """M1-M27: Exp(1), Weibull and Gamma frailty blocks, baselines before x after."""
    entries = _block("exponential", 1) + _block("weibull", 10) + _block("gamma", 19)
    return CandidateGrid(tuple(entries), "grid27")


def grid45() -> CandidateGrid:
    """grid27 plus lognormal-frailty (M28-M36) and full-GG-frailty (M37-M45) blocks."""
    entries = list(grid27().entries) + _block("lognormal", 28) + _block("gg", 37)
    return CandidateGrid(tuple(entries), "grid45")


def get_grid(kind: str | int) -> CandidateGrid:
    """``27``, ``45`` (optionally prefixed ``grid``) or a comma-separated list
    of grid45 ids such as ``"M1,M14"``."""
    key = str(kind).lower().removeprefix("grid")
    if key == "27":
        return grid27()
    if key == "45":
        return grid45()
    ids = [s.strip().upper() for s in str(kind).split(",") if s.strip()]
    full = grid45()
    if not ids:
        raise ValueError("grid must be 27, 45 or a list of ids M1-M45")
    try:
        return CandidateGrid(tuple(full[i] for i in ids), ",".join(ids))
    except KeyError:
        raise ValueError("grid must be 27, 45 or a list of ids M1-M45") from None


@dataclass
class CandidateResult:
    family: ModelFamily
    fit: FitResult | None
    criteria: Criteria | None
    error: str = ""

    @property
    def ok(self) -> bool:
        return self.fit is not None and self.fit.converged and self.criteria is not None

    def to_dict(self) -> dict:
        return {
            "id": self.family.model_id,
            "family": self.family.to_dict(),
            "n_params": self.family.n_params,
            "converged": self.ok,
            "fit": None if self.fit is None else self.fit.to_dict(),
            "criteria": None if self.criteria is None else self.criteria.to_dict(),
            "error": self.error,
        }


def rank(candidates: list[CandidateResult], criterion: str, tie_tol: float = 1e-3) -> list[int]:
    """Candidate indices best first.

    Converged fits come before flagged ones; values within ``tie_tol`` of
    each other count as equal and keep grid order, so differences at the
    optimizer's noise level do not decide a ranking.
    """
    def value(c: CandidateResult) -> float:
        if c.criteria is None:
            return math.inf
        v = c.criteria.get(criterion)
        return math.inf if v is None or not math.isfinite(v) else v

    vals = [value(c) for c in candidates]
    # bucket near-equal values at the resolution tie_tol, anchored at the best finite value
    finite = [v for v in vals if math.isfinite(v)]
    anchor = min(finite) if finite else 0.0

    def key(i: int):
        v = vals[i]
        bucket = math.floor((v - anchor) / tie_tol + 0.5) if math.isfinite(v) and tie_tol > 0 else v
        return (0 if candidates[i].ok else 1, bucket if math.isfinite(v) else math.inf, i)

    return sorted(range(len(candidates)), key=key)


@dataclass
class SelectionReport:
    grid: CandidateGrid
    n: int
    candidates: list[CandidateResult]
    rankings: dict[str, list[str]] = field(default_factory=dict)

    def best(self, criterion: str = "aic") -> CandidateResult:
        ids = self.rankings[criterion]
        return self.by_id(ids[0])

    def by_id(self, model_id: str) -> CandidateResult:
        for c in self.candidates:
            if c.family.model_id == model_id:
                return c
        raise KeyError(model_id)

    def to_dict(self) -> dict:
        return {
            "grid": self.grid.kind,
            "n": self.n,
            "candidates": [c.to_dict() for c in self.candidates],
            "rankings": {k: list(v) for k, v in self.rankings.items()},
            "best": {k: v[0] for k, v in self.rankings.items() if v},
        }


@dataclass(frozen=True)
class _FitTask:
    family: ModelFamily
    y1: np.ndarray
    y2: np.ndarray
    method: str
    options: object
    start: tuple | None = None


def _run_candidate(task: _FitTask) -> CandidateResult:
    d = Dataset(task.y1, task.y2)
    start = dict(task.start) if task.start else None
    try:
        res = fit(task.family, d, task.method, task.options, start)
        if task.method == "em" and not res.converged:
            res = fit(task.family, d, "direct", None, dict(res.estimates))
    except (EvaluationError, ValueError, np.linalg.LinAlgError) as exc:
        return CandidateResult(task.family, None, None, str(exc))
    crit = criteria(res.loglik, res.n_params, d.n) if math.isfinite(res.loglik) else None
    return CandidateResult(task.family, res, crit, res.message)


def nested_start(family: ModelFamily, fitted: dict[str, FitResult]) -> dict[str, float] | None:
    """Start for ``family`` from an already fitted exponential-frailty model with
    the same baselines; GG shapes sit at the nesting point (1)."""
    key = (family.before, family.after)
    parent = fitted.get(key)
    if parent is None or not parent.converged:
        return None
    start = dict(parent.estimates)
    for name in family.free_names[4:]:
        start.setdefault(name, 1.0)
    if "sigma" in family.free_names:
        # lognormal with the unit variance of the Exp(1) frailty
        start["sigma"] = math.sqrt(math.log(2.0))
    return {k: start[k] for k in family.free_names}


def select(
    d: Dataset,
    grid: CandidateGrid | None = None,
    *,
    method: str = "em",
    options: DirectOptions | EmOptions | None = None,
    workers: int = 1,
    warm_start: bool = True,
    tie_tol: float = 1e-3,
) -> SelectionReport:
    """Fit every candidate and rank by AIC, BIC, AICc and BC (ascending).

    EM fits that do not converge are refitted directly. With ``warm_start``
    the exponential-frailty block is fitted first and its estimates seed the
    other frailty blocks at their nesting point (direct fits still try the
    heuristic start when ``options.starts >= 2``).
    """
    grid = grid27() if grid is None else grid
    if len(grid) == 0:
        raise ValueError("empty grid")
    first = [f for f in grid if f.frailty == "exponential"] if warm_start else []
    rest = [f for f in grid if f not in first]
    results: dict[str, CandidateResult] = {}
    tasks = [_FitTask(f, d.y1, d.y2, method, options) for f in first]
    for f, r in zip(first, parallel_map(_run_candidate, tasks, workers)):
        results[f.model_id or f.label] = r
    fitted = {(f.before, f.after): results[f.model_id or f.label].fit for f in first
              if results[f.model_id or f.label].fit is not None}
    tasks = []
    for f in rest:
        st = nested_start(f, fitted) if warm_start else None
        tasks.append(_FitTask(f, d.y1, d.y2, method, options, tuple(st.items()) if st else None))
    rest_results = parallel_map(_run_candidate, tasks, workers)
    for f, r in zip(rest, rest_results):
        results[f.model_id or f.label] = r
    cands = [results[f.model_id or f.label] for f in grid]
    if not any(c.ok for c in cands):
        raise EvaluationError("no candidate fit converged")
    rankings = {}
    for crit in CRITERIA:
        order = rank(cands, crit, tie_tol)
        rankings[crit] = [cands[i].family.model_id or cands[i].family.label for i in order]
    return SelectionReport(grid, d.n, cands, rankings)


__all__ = [
    "CRITERIA",
    "CandidateGrid",
    "CandidateResult",
    "Criteria",
    "SelectionReport",
    "criteria",
    "free_parameter_count",
    "get_grid",
    "grid27",
    "grid45",
    "nested_start",
    "rank",
    "select",
]
