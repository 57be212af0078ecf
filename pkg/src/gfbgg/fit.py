"""Fitting GFB-GG models: Monte-Carlo EM with profile M-steps, and direct
maximization of the observed log-likelihood."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy import special

from .distributions import EXPONENTIAL, Baseline, Frailty
from .model import Dataset, GfbGgModel, ModelFamily, observed_log_likelihood, row_terms
from .numerics import EvaluationError, RandomStream, minimize_nd

# log-parameters beyond this magnitude mean the optimizer ran off to a boundary
LOG_PARAM_LIMIT = 15.0


class SamplerDegenerateError(EvaluationError):
    """The acceptance-rejection sampler cannot produce draws in reasonable time."""


class NonIdentifiedError(ValueError):
    """A PFR parameter has no finite maximizer (an empty failure-order group)."""


# ---------------------------------------------------------------------------
# E-step
# ---------------------------------------------------------------------------


@dataclass
class EStepMoments:
    """Conditional frailty moments per row.

    ``log_z`` and ``weights`` hold the draws (equal weights) or quadrature
    nodes behind the moments, so expectations at other exponents can be
    recomputed without new draws.
    """

    ez: NDArray
    elogz: NDArray
    ezk: NDArray
    mc_size: int
    mc_standard_errors: NDArray
    log_z: NDArray
    weights: NDArray
    quadrature_rows: NDArray = field(default_factory=lambda: np.zeros(0, dtype=np.intp))

    def __post_init__(self):
        for name in ("ez", "ezk"):
            v = getattr(self, name)
            if np.any(~np.isfinite(v)) or np.any(v <= 0):
                raise EvaluationError(f"E-step produced invalid {name}")
        if np.any(~np.isfinite(self.elogz)):
            raise EvaluationError("E-step produced invalid elogz")

    @property
    def n(self) -> int:
        return self.ez.size

    def expect_power(self, k: float) -> NDArray:
        """Per-row ``E(Z**k | data)`` from the stored draws or nodes."""
        return np.sum(self.weights * np.exp(k * self.log_z), axis=1)

    def expect_log_square(self) -> NDArray:
        return np.sum(self.weights * self.log_z**2, axis=1)


def _envelope_shape(fr: Frailty) -> float:
    return fr.k * fr.beta + 2.0


def conditional_frailty_sample(
    m: GfbGgModel,
    y1: float,
    y2: float,
    rng: np.random.Generator,
    count: int,
    *,
    max_proposals: int = 2_000_000,
) -> NDArray:
    """Draw ``count`` values from ``f(z | y1, y2)`` by acceptance-rejection.

    The target is proportional to ``z**(k beta + 1) exp(-a z**k - b z)``.
    Proposals come from ``Gamma(k beta + 2, rate b)`` and are kept with
    probability ``exp(-a z**k)``.
    """
    fr = m.frailty
    if not fr.is_gg:
        raise ValueError("acceptance-rejection sampling needs a GG frailty")
    if y1 == y2:
        raise ValueError("conditional frailty law is undefined for y1 == y2")
    _, b = row_terms(m, np.array([y1]), np.array([y2]))
    b = float(b[0])
    if not b > 0:
        raise SamplerDegenerateError("tilt b is zero; the envelope is improper")
    shape, k, a = _envelope_shape(fr), fr.k, fr.a
    out = np.empty(count)
    filled = proposed = 0
    batch = max(2 * count, 1024)
    while filled < count:
        z = rng.gamma(shape, 1.0 / b, batch)
        keep = z[rng.random(batch) < np.exp(-a * z**k)]
        proposed += batch
        take = min(keep.size, count - filled)
        out[filled : filled + take] = keep[:take]
        filled += take
        if filled < count:
            rate = filled / proposed
            if proposed >= 100_000 and rate < 1e-6:
                raise SamplerDegenerateError(f"acceptance rate {rate:.2e} after {proposed} proposals")
            if proposed >= max_proposals:
                raise SamplerDegenerateError(f"{filled} of {count} draws after {proposed} proposals")
            need = (count - filled) / max(rate, 1e-6)
            batch = int(min(max(1.2 * need, 1024), 4 * proposed, 500_000, max_proposals - proposed))
    return out


def envelope_acceptance(m: GfbGgModel, b: NDArray) -> NDArray:
    """Acceptance probability of the Gamma envelope per tilt ``b`` (by quadrature)."""
    fr = m.frailty
    b = np.asarray(b, dtype=np.float64)
    c = _envelope_shape(fr)
    log_norm = math.log(fr.k) + fr.beta * fr.log_a - special.gammaln(fr.beta)
    with np.errstate(divide="ignore"):
        log_p = np.asarray(fr.log_tilted_moment(b)) - log_norm - special.gammaln(c) + c * np.log(b)
    return np.exp(np.minimum(log_p, 0.0))


def _moments_from(log_z: NDArray, weights: NDArray, k: float):
    z = np.exp(log_z)
    ez = np.sum(weights * z, axis=1)
    elogz = np.sum(weights * log_z, axis=1)
    ezk = ez if k == 1.0 else np.sum(weights * np.exp(k * log_z), axis=1)
    return ez, elogz, ezk


def _quadrature_nodes(m: GfbGgModel, b: NDArray, order: int):
    log_z, w, _ = m.frailty.conditional_rule(b, order)
    return log_z, w


def estep(
    m: GfbGgModel,
    d: Dataset,
    *,
    mode: str = "mc",
    mc_size: int = 1000,
    stream: RandomStream | None = None,
    order: int = 64,
    min_acceptance: float = 1e-2,
) -> EStepMoments:
    """Conditional moments of the frailty given each row.

    ``mode="mc"`` averages acceptance-rejection draws, one random stream per
    row (``stream.child(row)``). Rows whose envelope acceptance probability is
    below ``min_acceptance``, rows where the sampler degenerates, and all rows
    under a lognormal frailty use quadrature instead; they are listed in
    ``quadrature_rows``. ``mode="quadrature"`` is noise-free.
    """
    if mode not in ("mc", "quadrature"):
        raise ValueError("mode must be 'mc' or 'quadrature'")
    _, b = row_terms(m, d.y1, d.y2)
    k = m.frailty.k if m.frailty.is_gg else 1.0
    if mode == "quadrature" or not m.frailty.is_gg:
        log_z, w = _quadrature_nodes(m, b, order)
        ez, elogz, ezk = _moments_from(log_z, w, k)
        return EStepMoments(ez, elogz, ezk, 0, np.zeros(d.n), log_z, w, np.arange(d.n))
    if stream is None:
        stream = RandomStream(0)
    log_z = np.empty((d.n, mc_size))
    fallback = []
    slow = envelope_acceptance(m, b) < min_acceptance
    for i in range(d.n):
        if slow[i]:
            fallback.append(i)
            continue
        try:
            z = conditional_frailty_sample(m, d.y1[i], d.y2[i], stream.child(i).generator(), mc_size)
            log_z[i] = np.log(z)
        except SamplerDegenerateError:
            fallback.append(i)
    w = np.full((d.n, mc_size), 1.0 / mc_size)
    ez, elogz, ezk = _moments_from(log_z, w, k) if not fallback else (None, None, None)
    if fallback:
        # mix row shapes: pad quadrature rows out to the MC width with zero weights
        rows = np.array(fallback)
        q_log_z, q_w = _quadrature_nodes(m, b[rows], order)
        width = max(mc_size, order)
        big_z = np.zeros((d.n, width))
        big_w = np.zeros((d.n, width))
        big_z[:, :mc_size] = log_z
        big_w[:, :mc_size] = w
        big_z[rows] = 0.0
        big_w[rows] = 0.0
        big_z[rows, :order] = q_log_z
        big_w[rows, :order] = q_w
        log_z, w = big_z, big_w
        ez, elogz, ezk = _moments_from(log_z, w, k)
    else:
        rows = np.zeros(0, dtype=np.intp)
    z = np.exp(log_z[:, :mc_size])
    se = z.std(axis=1, ddof=1) / math.sqrt(mc_size)
    se[rows] = 0.0
    return EStepMoments(ez, elogz, ezk, mc_size, se, log_z, w, rows)


# ---------------------------------------------------------------------------
# M-step
# ---------------------------------------------------------------------------


def _log_reliability_terms(d: Dataset, before: Baseline, after: Baseline):
    first = d.in_i1
    lo = np.where(first, d.y2, d.y1)
    hi = np.where(first, d.y1, d.y2)
    log_r_lo = np.asarray(before.log_reliability(lo))
    log_ratio = np.asarray(after.log_reliability(hi)) - np.asarray(after.log_reliability(lo))
    return lo, hi, log_r_lo, log_ratio


def mstep_pfr(
    d: Dataset, ez: NDArray, before: Baseline = Baseline(), after: Baseline = Baseline()
) -> tuple[float, float, float, float]:
    """Closed-form maximizers ``(theta1, theta2, theta1*, theta2*)`` of the
    pseudo-complete log-likelihood at fixed baselines and frailty weights."""
    if d.n1 == 0 or d.n2 == 0:
        missing = "y1 > y2" if d.n1 == 0 else "y1 < y2"
        raise NonIdentifiedError(f"no rows with {missing}: failure-order parameters are not identified")
    ez = np.asarray(ez, dtype=np.float64)
    _, _, log_r_lo, log_ratio = _log_reliability_terms(d, before, after)
    first = d.in_i1
    s = float(np.sum(ez * log_r_lo))
    s1 = float(np.sum(ez[first] * log_ratio[first]))
    s2 = float(np.sum(ez[~first] * log_ratio[~first]))
    if not (s < 0 and s1 < 0 and s2 < 0):
        raise EvaluationError("M-step denominators must be negative")
    return -d.n2 / s, -d.n1 / s, -d.n1 / s1, -d.n2 / s2


def pseudo_complete_loglik(m: GfbGgModel, d: Dataset, moments: EStepMoments) -> float:
    """Expected complete-data log-likelihood, frailty part included."""
    log_pref, b = row_terms(m, d.y1, d.y2)
    fr = m.frailty
    y_part = float(np.sum(2.0 * moments.elogz + log_pref - b * moments.ez))
    return y_part + _frailty_part(fr, moments)


def _frailty_part(fr: Frailty, moments: EStepMoments) -> float:
    n = moments.n
    s_log = float(np.sum(moments.elogz))
    if fr.is_gg:
        k, beta = fr.k, fr.beta
        s_pow = float(np.sum(moments.expect_power(k)))
        return n * (math.log(k) + beta * fr.log_a - special.gammaln(beta)) + (k * beta - 1.0) * s_log - fr.a * s_pow
    s2 = fr.sigma**2
    q = float(np.sum(moments.expect_log_square()))
    return -s_log - 0.5 * n * math.log(2 * math.pi * s2) - (q + s2 * s_log + n * s2 * s2 / 4) / (2 * s2)


def profile_h1(theta_b: float, theta_b_star: float, d: Dataset, ez: NDArray, family: ModelFamily) -> float:
    """Baseline part of the profile pseudo-complete log-likelihood.

    The PFR parameters are replaced by their M-step maximizers at the given
    baseline shapes. Exponential baselines ignore their shape argument.
    """
    before = Baseline(family.before, 1.0 if family.before == EXPONENTIAL else theta_b)
    after = Baseline(family.after, 1.0 if family.after == EXPONENTIAL else theta_b_star)
    t1, t2, t1s, t2s = mstep_pfr(d, ez, before, after)
    first = d.in_i1
    lo, hi, _, _ = _log_reliability_terms(d, before, after)
    log_h = np.asarray(before.log_hazard(lo)) + np.asarray(after.log_hazard(hi))
    return float(d.n1 * math.log(t1s * t2) + d.n2 * math.log(t1 * t2s) + np.sum(log_h[first]) + np.sum(log_h[~first]))


def profile_h2(frailty: Frailty, moments: EStepMoments) -> float:
    """Frailty part ``sum_i E[ln g(Z_i) | data]`` (up to a constant in the
    frailty parameters). For GG this is
    ``n ln(k a^beta / Gamma(beta)) + (k beta - 1) sum E ln Z - a sum E Z^k``
    with ``E Z^k`` recomputed at the candidate ``k``."""
    return _frailty_part(frailty, moments)


def lognormal_sigma_update(moments: EStepMoments) -> float:
    """Closed-form maximizer of the lognormal frailty part over ``sigma``."""
    q = float(np.mean(moments.expect_log_square()))
    return math.sqrt(2.0 * (math.sqrt(1.0 + q) - 1.0))


# ---------------------------------------------------------------------------
# drivers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EmOptions:
    mc_size: int = 1000
    max_iter: int = 500
    param_tol: float = 1e-4
    loglik_tol: float = 1e-6
    averaging_window: int = 20
    seed: int = 0
    estep_mode: str = "mc"
    double_every: int = 0
    order: int = 64

    def __post_init__(self):
        for name in ("mc_size", "max_iter", "param_tol", "loglik_tol", "averaging_window", "order"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.estep_mode not in ("mc", "quadrature"):
            raise ValueError("estep_mode must be 'mc' or 'quadrature'")
        if self.double_every < 0:
            raise ValueError("double_every must be >= 0")


@dataclass(frozen=True)
class DirectOptions:
    starts: int = 3
    restarts: int = 1
    max_iter: int = 1000
    xtol: float = 1e-6
    ftol: float = 1e-9
    seed: int = 0
    jitter_scale: float = 0.3


@dataclass
class FitResult:
    family: ModelFamily
    estimates: dict[str, float]
    loglik: float
    n_params: int
    iterations: int
    converged: bool
    method: str
    trace: list[dict] = field(default_factory=list)
    message: str = ""
    n_obs: int = 0

    @property
    def model(self) -> GfbGgModel:
        return self.family.build(self.estimates)

    def to_dict(self) -> dict:
        return {
            "family": self.family.to_dict(),
            "estimates": dict(self.estimates),
            "loglik": self.loglik,
            "n_params": self.n_params,
            "iterations": self.iterations,
            "converged": self.converged,
            "method": self.method,
            "message": self.message,
            "n_obs": self.n_obs,
        }


def initial_params(family: ModelFamily, d: Dataset) -> dict[str, float]:
    """Exponential-baseline, frailty-free closed-form PFR estimates; all shapes at 1."""
    t1, t2, t1s, t2s = mstep_pfr(d, np.ones(d.n))
    p = {"theta1": t1, "theta2": t2, "theta1_star": t1s, "theta2_star": t2s}
    for name in family.free_names[4:]:
        p[name] = 1.0
    return p


def _baseline_shape_names(family: ModelFamily) -> list[str]:
    return [name for name in ("theta_b", "theta_b_star") if name in family.free_names]


def _frailty_shape_names(family: ModelFamily) -> list[str]:
    return [name for name in ("k", "beta", "sigma") if name in family.free_names]


def _maximize_h1(family: ModelFamily, d: Dataset, ez: NDArray, params: dict) -> dict:
    names = _baseline_shape_names(family)
    if names:
        def objective(x):
            shapes = dict(zip(names, np.exp(x)))
            try:
                return -profile_h1(shapes.get("theta_b", 1.0), shapes.get("theta_b_star", 1.0), d, ez, family)
            except (EvaluationError, ValueError, FloatingPointError):
                return np.inf

        start = np.log([params[nm] for nm in names])
        res = minimize_nd(objective, start, xtol=1e-8, ftol=1e-11, restarts=1)
        params = {**params, **dict(zip(names, np.exp(res.x)))}
    before = Baseline(family.before, params.get("theta_b", 1.0))
    after = Baseline(family.after, params.get("theta_b_star", 1.0))
    t = mstep_pfr(d, ez, before, after)
    return {**params, **dict(zip(("theta1", "theta2", "theta1_star", "theta2_star"), t))}


def _maximize_h2(family: ModelFamily, moments: EStepMoments, params: dict) -> dict:
    names = _frailty_shape_names(family)
    if not names:
        return params
    if names == ["sigma"]:
        return {**params, "sigma": lognormal_sigma_update(moments)}

    def objective(x):
        vals = dict(zip(names, np.exp(x)))
        try:
            fr = Frailty("gg", vals.get("k", 1.0), vals.get("beta", 1.0))
            return -profile_h2(fr, moments)
        except (EvaluationError, ValueError, FloatingPointError):
            return np.inf

    start = np.log([params[nm] for nm in names])
    res = minimize_nd(objective, start, xtol=1e-8, ftol=1e-11, restarts=1)
    return {**params, **dict(zip(names, np.exp(res.x)))}


def em_step(
    family: ModelFamily,
    d: Dataset,
    params: dict[str, float],
    *,
    mode: str = "quadrature",
    mc_size: int = 1000,
    stream: RandomStream | None = None,
    order: int = 64,
) -> dict[str, float]:
    """One E-step followed by the closed-form and profile M-steps."""
    m = family.build(params)
    moments = estep(m, d, mode=mode, mc_size=mc_size, stream=stream, order=order)
    params = _maximize_h1(family, d, moments.ez, params)
    return _maximize_h2(family, moments, params)


def _safe_loglik(family: ModelFamily, params: dict, d: Dataset) -> float:
    try:
        return observed_log_likelihood(family.build(params), d)
    except (EvaluationError, ValueError):
        return -np.inf


def em_fit(family: ModelFamily, d: Dataset, options: EmOptions = EmOptions(), start: dict | None = None) -> FitResult:
    """Monte-Carlo EM (or noise-free quadrature EM) for one candidate family.

    Quadrature mode stops on the per-iterate changes. MC mode compares the
    means of the last two windows of ``averaging_window`` iterates against
    ``max(tol, 3 x Monte-Carlo standard error)`` and reports the mean of the
    last window as the estimate.
    """
    names = family.free_names
    params = dict(start) if start is not None else initial_params(family, d)
    root = RandomStream(options.seed, (0xE3,))
    mc = options.estep_mode == "mc"
    w = options.averaging_window
    trace: list[dict] = []
    converged = False
    mc_size = options.mc_size
    it = 0
    prev_ll = _safe_loglik(family, params, d)
    for it in range(1, options.max_iter + 1):
        if mc and options.double_every and it % options.double_every == 0:
            mc_size *= 2
        new = em_step(family, d, params, mode=options.estep_mode, mc_size=mc_size,
                      stream=root.child(it), order=options.order)
        ll = _safe_loglik(family, new, d)
        trace.append({"iteration": it, **new, "loglik": ll})
        old_vec = np.array([params[nm] for nm in names])
        new_vec = np.array([new[nm] for nm in names])
        params = new
        if not mc:
            rel = float(np.max(np.abs(new_vec - old_vec) / np.abs(new_vec)))
            if rel < options.param_tol and abs(ll - prev_ll) < options.loglik_tol:
                converged = True
                break
            prev_ll = ll
        elif it >= 2 * w:
            recent = np.array([[row[nm] for nm in names] for row in trace[-2 * w :]])
            lls = np.array([row["loglik"] for row in trace[-2 * w :]])
            a, b = recent[:w].mean(axis=0), recent[w:].mean(axis=0)
            se = recent[w:].std(axis=0, ddof=1) / math.sqrt(w)
            la, lb = lls[:w].mean(), lls[w:].mean()
            lse = lls[w:].std(ddof=1) / math.sqrt(w)
            par_ok = np.all(np.abs(b - a) <= np.maximum(options.param_tol * np.abs(b), 3 * math.sqrt(2) * se))
            ll_ok = abs(lb - la) <= max(options.loglik_tol, 3 * math.sqrt(2) * lse)
            if par_ok and ll_ok:
                converged = True
                break
    if mc and len(trace) >= w:
        tail = trace[-w:]
        params = {nm: float(np.mean([row[nm] for row in tail])) for nm in names}
    ll = _safe_loglik(family, params, d)
    return FitResult(
        family, {nm: float(params[nm]) for nm in names}, ll, family.n_params, it,
        bool(converged and np.isfinite(ll)), "em", trace,
        "" if converged else "iteration limit reached", d.n,
    )


def _negloglik_factory(family: ModelFamily, d: Dataset):
    names = family.free_names

    def f(x):
        if np.any(np.abs(x) > 20):
            return np.inf
        try:
            return -observed_log_likelihood(family.build(dict(zip(names, np.exp(x)))), d)
        except (EvaluationError, ValueError, FloatingPointError, OverflowError):
            return np.inf

    return f


def direct_fit(
    family: ModelFamily, d: Dataset, options: DirectOptions = DirectOptions(), start: dict | None = None
) -> FitResult:
    """Maximize the observed log-likelihood over log-parameters.

    Starts, up to ``options.starts``: ``start`` when given, the closed-form
    heuristic, the point after one quadrature EM iteration, then Gaussian
    jitters of the first start. The best optimum wins. Log-parameters running past ``LOG_PARAM_LIMIT`` flag an
    unbounded direction and the fit is reported as not converged.
    """
    names = family.free_names
    if d.n1 == 0 or d.n2 == 0:
        return FitResult(family, {nm: math.nan for nm in names}, -math.inf, family.n_params, 0, False,
                         "direct", [], "empty failure-order group: PFR parameters not identified", d.n)
    nll = _negloglik_factory(family, d)
    heuristic = initial_params(family, d)
    starts = []
    if start is not None:
        starts.append(np.log([start[nm] for nm in names]))
    starts.append(np.log([heuristic[nm] for nm in names]))
    if len(starts) < options.starts:
        try:
            p1 = em_step(family, d, heuristic, mode="quadrature")
            starts.append(np.log([p1[nm] for nm in names]))
        except (EvaluationError, ValueError):
            pass
    rng = RandomStream(options.seed, (0xD1,)).generator()
    while len(starts) < options.starts:
        starts.append(starts[0] + options.jitter_scale * rng.standard_normal(len(names)))
    starts = starts[: max(options.starts, 1)]
    best = None
    trace = []
    nfev = 0
    for s in starts:
        if not np.isfinite(nll(s)):
            continue
        res = minimize_nd(nll, s, xtol=options.xtol, ftol=options.ftol, max_iter=options.max_iter,
                          restarts=options.restarts)
        nfev += res.nfev
        trace.append({"start": dict(zip(names, np.exp(s).tolist())), "loglik": -res.fun, "status": res.status})
        if best is None or res.fun < best.fun:
            best = res
    if best is None:
        raise EvaluationError("log-likelihood is not finite at any starting point")
    est = dict(zip(names, np.exp(best.x).tolist()))
    bounded = bool(np.all(np.abs(best.x) < LOG_PARAM_LIMIT))
    ll = _safe_loglik(family, est, d)
    converged = best.converged and bounded and np.isfinite(ll)
    msg = "" if converged else ("unbounded direction" if not bounded else f"optimizer status {best.status}")
    return FitResult(family, est, ll, family.n_params, nfev, bool(converged), "direct", trace, msg, d.n)


def fit(family: ModelFamily, d: Dataset, method: str = "direct", options=None, start: dict | None = None) -> FitResult:
    if method == "em":
        return em_fit(family, d, options or EmOptions(), start)
    if method == "direct":
        return direct_fit(family, d, options or DirectOptions(), start)
    raise ValueError("method must be 'em' or 'direct'")


__all__ = [
    "DirectOptions",
    "EStepMoments",
    "EmOptions",
    "FitResult",
    "NonIdentifiedError",
    "SamplerDegenerateError",
    "conditional_frailty_sample",
    "direct_fit",
    "em_fit",
    "em_step",
    "estep",
    "fit",
    "initial_params",
    "lognormal_sigma_update",
    "mstep_pfr",
    "profile_h1",
    "profile_h2",
    "pseudo_complete_loglik",
]
