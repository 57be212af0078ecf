"""Simulation studies: parameter recovery (AE, MSE, AL, CP) and model
recovery frequencies under a candidate grid."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .fit import DirectOptions, EmOptions, fit
from .inference import SingularInformationError, bootstrap, louis_information, wald_intervals
from .model import ModelFamily
from .numerics import EvaluationError, RandomStream, parallel_map
from .selection import CRITERIA, get_grid, select
from .simulate import SimConfig, simulate_dataset

# true values used throughout the simulation studies
STUDY_TRUTH = {
    "theta1": 0.3,
    "theta2": 0.4,
    "theta1_star": 0.5,
    "theta2_star": 1.0,
    "theta_b": 2.0,
    "theta_b_star": 1.5,
    "k": 1.5,
    "beta": 1.5,
    "sigma": 1.0,
}

# loose simplex tolerances: log-likelihoods land within ~1e-5 of a strict fit,
# far inside the ranking tie tolerance
FAST_DIRECT = DirectOptions(starts=1, restarts=1, max_iter=600, xtol=1e-3, ftol=1e-5)


def truth_for(family: ModelFamily, truth: dict | None = None) -> dict[str, float]:
    src = {**STUDY_TRUTH, **(truth or {})}
    return {nm: float(src[nm]) for nm in family.free_names}


def _family_of(spec) -> ModelFamily:
    return spec if isinstance(spec, ModelFamily) else ModelFamily.parse(str(spec))


def _options_for(method: str, options: dict | None):
    if not options:
        return None
    return EmOptions(**options) if method == "em" else DirectOptions(**options)


@dataclass(frozen=True)
class StudyDesign:
    family: ModelFamily
    truth: dict
    n: int = 100
    replicates: int = 500
    fit_method: str = "direct"
    ci_method: str = "louis"
    seed: int = 0
    level: float = 0.95
    louis_mode: str = "mc"
    mc_size: int = 1000
    boot_reps: int = 200
    fit_options: dict | None = None

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.ci_method not in ("louis", "bootstrap", "none"):
            raise ValueError("ci_method must be louis, bootstrap or none")
        object.__setattr__(self, "truth", truth_for(self.family, self.truth))
        self.family.build(self.truth)

    @classmethod
    def from_dict(cls, d: dict) -> "StudyDesign":
        d = dict(d)
        fam = _family_of(d.pop("parent", d.pop("family", "M1")))
        return cls(fam, d.pop("truth", None) or {}, **d)

    def to_dict(self) -> dict:
        return {
            "parent": self.family.model_id or f"{self.family.before}/{self.family.after}/{self.family.frailty}",
            "truth": dict(self.truth),
            "n": self.n,
            "replicates": self.replicates,
            "fit_method": self.fit_method,
            "ci_method": self.ci_method,
            "seed": self.seed,
            "level": self.level,
            "louis_mode": self.louis_mode,
            "mc_size": self.mc_size,
            "boot_reps": self.boot_reps,
            "fit_options": self.fit_options,
        }


@dataclass
class ReplicateOutcome:
    replicate: int
    estimates: dict | None
    lower: dict | None = None
    upper: dict | None = None
    error: str = ""


def _param_replicate(args: tuple[StudyDesign, int]) -> ReplicateOutcome:
    design, r = args
    fam = design.family
    cfg = SimConfig(fam.build(design.truth), design.n, design.seed, r)
    try:
        d = simulate_dataset(cfg)
        res = fit(fam, d, design.fit_method, _options_for(design.fit_method, design.fit_options))
    except (EvaluationError, ValueError) as exc:
        return ReplicateOutcome(r, None, error=str(exc))
    if not res.converged:
        return ReplicateOutcome(r, None, error=res.message or "not converged")
    est = res.estimates
    if design.ci_method == "none":
        return ReplicateOutcome(r, est)
    try:
        if design.ci_method == "louis":
            info = louis_information(
                fam, est, d, mode=design.louis_mode, mc_size=design.mc_size,
                stream=RandomStream(design.seed, (0x1015, r)),
            )
            ints = wald_intervals(info, est, design.level)
        else:
            ints = bootstrap(res, d, design.boot_reps, seed=design.seed + r, level=design.level).intervals
    except (SingularInformationError, EvaluationError, ValueError) as exc:
        return ReplicateOutcome(r, est, error=f"interval: {exc}")
    lower = {k: v.lower for k, v in ints.intervals.items()}
    upper = {k: v.upper for k, v in ints.intervals.items()}
    return ReplicateOutcome(r, est, lower, upper)


@dataclass
class StudyReport:
    design: StudyDesign
    names: tuple[str, ...]
    ae: dict[str, float]
    mse: dict[str, float]
    al: dict[str, float]
    cp: dict[str, float]
    n_fitted: int
    n_failed: int
    n_interval_failed: int
    outcomes: list[ReplicateOutcome] = field(default_factory=list)

    @property
    def convergence_rate(self) -> float:
        return self.n_fitted / self.design.replicates

    def to_dict(self) -> dict:
        return {
            "design": self.design.to_dict(),
            "names": list(self.names),
            "ae": self.ae,
            "mse": self.mse,
            "al": self.al,
            "cp": self.cp,
            "n_fitted": self.n_fitted,
            "n_failed": self.n_failed,
            "n_interval_failed": self.n_interval_failed,
            "convergence_rate": self.convergence_rate,
        }

    def table_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", *self.names])
        w.writerow(["truth", *(f"{self.design.truth[n]:.3f}" for n in self.names)])
        for label, vals in (("AE", self.ae), ("MSE", self.mse), ("AL", self.al), ("CP", self.cp)):
            w.writerow([label, *(f"{vals[n]:.3f}" for n in self.names)])
        return buf.getvalue()

    def raw_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        cols = [f"{p}_{n}" for n in self.names for p in ("est", "lower", "upper")]
        w.writerow(["replicate", "status", *cols])
        for o in self.outcomes:
            row = []
            for n in self.names:
                for src in (o.estimates, o.lower, o.upper):
                    row.append(repr(src[n]) if src else "")
            w.writerow([o.replicate, o.error or "ok", *row])
        return buf.getvalue()


def summarize(design: StudyDesign, outcomes: list[ReplicateOutcome]) -> StudyReport:
    names = design.family.free_names
    fitted = [o for o in outcomes if o.estimates is not None]
    with_ci = [o for o in fitted if o.lower is not None]
    ae, mse, al, cp = {}, {}, {}, {}
    for nm in names:
        t = design.truth[nm]
        est = np.array([o.estimates[nm] for o in fitted])
        ae[nm] = float(est.mean()) if est.size else math.nan
        mse[nm] = float(np.mean((est - t) ** 2)) if est.size else math.nan
        lo = np.array([o.lower[nm] for o in with_ci])
        hi = np.array([o.upper[nm] for o in with_ci])
        ok = np.isfinite(lo) & np.isfinite(hi)
        al[nm] = float(np.mean(hi[ok] - lo[ok])) if ok.any() else math.nan
        cp[nm] = float(100.0 * np.mean((lo[ok] <= t) & (t <= hi[ok]))) if ok.any() else math.nan
    return StudyReport(design, names, ae, mse, al, cp, len(fitted), len(outcomes) - len(fitted),
                       len(fitted) - len(with_ci), outcomes)


def run_parameter_study(design: StudyDesign, workers: int = 1) -> StudyReport:
    """Simulate, refit the parent family, and tabulate AE, MSE, AL and CP.

    Replicates failing to fit are excluded from every metric; replicates
    whose interval fails count toward AE and MSE but not AL and CP.
    """
    outcomes = parallel_map(_param_replicate, [(design, r) for r in range(design.replicates)], workers)
    return summarize(design, outcomes)


# ---------------------------------------------------------------------------
# model recovery
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RecoveryDesign:
    family: ModelFamily
    truth: dict
    sizes: tuple[int, ...] = (50, 100, 150, 200)
    replicates: int = 100
    grid: str = "27"
    fit_method: str = "direct"
    seed: int = 0
    fast: bool = False
    fit_options: dict | None = None

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        object.__setattr__(self, "truth", truth_for(self.family, self.truth))
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        get_grid(self.grid)

    @classmethod
    def from_dict(cls, d: dict) -> "RecoveryDesign":
        d = dict(d)
        fam = _family_of(d.pop("parent", d.pop("family", "M14")))
        if "sizes" in d:
            d["sizes"] = tuple(d["sizes"])
        return cls(fam, d.pop("truth", None) or {}, **d)

    def to_dict(self) -> dict:
        return {
            "parent": self.family.model_id or f"{self.family.before}/{self.family.after}/{self.family.frailty}",
            "truth": dict(self.truth),
            "sizes": list(self.sizes),
            "replicates": self.replicates,
            "grid": self.grid,
            "fit_method": self.fit_method,
            "seed": self.seed,
            "fast": self.fast,
            "fit_options": self.fit_options,
        }

    def options(self):
        if self.fit_options:
            return _options_for(self.fit_method, self.fit_options)
        if self.fast:
            return FAST_DIRECT if self.fit_method == "direct" else EmOptions(mc_size=200, max_iter=100)
        return None


def _recovery_replicate(args: tuple[RecoveryDesign, int, int]) -> dict:
    design, n, r = args
    cfg = SimConfig(design.family.build(design.truth), n, design.seed, n * 1_000_000 + r)
    d = simulate_dataset(cfg)
    try:
        rep = select(d, get_grid(design.grid), method=design.fit_method, options=design.options())
    except EvaluationError as exc:
        return {"n": n, "replicate": r, "error": str(exc)}
    return {"n": n, "replicate": r, "rankings": {c: rep.rankings[c][:3] for c in CRITERIA}}


@dataclass
class RecoveryReport:
    design: RecoveryDesign
    counts: dict[int, dict[str, dict[str, int]]]
    top3: dict[int, dict[str, list[tuple[str, float]]]]
    rows: list[dict]

    def proportion(self, n: int, criterion: str, model_id: str) -> float:
        c = self.counts[n][criterion]
        total = sum(c.values())
        return c.get(model_id, 0) / total if total else math.nan

    def winner(self, n: int, criterion: str = "aic") -> str:
        return self.top3[n][criterion][0][0]

    def to_dict(self) -> dict:
        return {
            "design": self.design.to_dict(),
            "counts": {str(n): v for n, v in self.counts.items()},
            "top3": {str(n): {c: [list(t) for t in v] for c, v in d.items()} for n, d in self.top3.items()},
        }

    def proportions_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "criterion", "model", "proportion"])
        ids = get_grid(self.design.grid).ids()
        for n in self.design.sizes:
            for c in CRITERIA:
                for mid in ids:
                    w.writerow([n, c, mid, f"{self.proportion(n, c, mid):.4f}"])
        return buf.getvalue()


def run_recovery_study(design: RecoveryDesign, workers: int = 1) -> RecoveryReport:
    """Simulate from the parent, select over the grid, count per-criterion winners."""
    tasks = [(design, n, r) for n in design.sizes for r in range(design.replicates)]
    rows = parallel_map(_recovery_replicate, tasks, workers)
    ids = get_grid(design.grid).ids()
    counts: dict[int, dict[str, dict[str, int]]] = {}
    top3: dict[int, dict[str, list[tuple[str, float]]]] = {}
    for n in design.sizes:
        counts[n] = {c: {mid: 0 for mid in ids} for c in CRITERIA}
        for row in rows:
            if row["n"] != n or "rankings" not in row:
                continue
            for c in CRITERIA:
                counts[n][c][row["rankings"][c][0]] += 1
        top3[n] = {}
        for c in CRITERIA:
            total = sum(counts[n][c].values())
            order = sorted(ids, key=lambda m: (-counts[n][c][m], ids.index(m)))[:3]
            top3[n][c] = [(m, counts[n][c][m] / total if total else math.nan) for m in order]
    return RecoveryReport(design, counts, top3, rows)


__all__ = [
    "FAST_DIRECT",
    "RecoveryDesign",
    "RecoveryReport",
    "STUDY_TRUTH",
    "StudyDesign",
    "StudyReport",
    "run_parameter_study",
    "run_recovery_study",
    "summarize",
    "truth_for",
]
