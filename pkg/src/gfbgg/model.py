"""The GFB-GG model: families, datasets and the observed-data likelihood."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .distributions import (
    EXPONENTIAL,
    FRAILTY_FREE_PARAMS,
    Baseline,
    Frailty,
    canonical_tag,
    frailty_member,
)
from .numerics import EvaluationError, QuadratureRule, edge_mass_fraction

PFR_NAMES = ("theta1", "theta2", "theta1_star", "theta2_star")
PARAM_ORDER = PFR_NAMES + ("theta_b", "theta_b_star", "k", "beta", "sigma")


class DataError(ValueError):
    """Invalid lifetime data; ``row`` is the 0-based offending row when known."""

    def __init__(self, message: str, row: int | None = None):
        super().__init__(message)
        self.row = row


@dataclass(frozen=True)
class GfbGgModel:
    theta1: float
    theta2: float
    theta1_star: float
    theta2_star: float
    before: Baseline = field(default_factory=Baseline)
    after: Baseline = field(default_factory=Baseline)
    frailty: Frailty = field(default_factory=Frailty)

    def __post_init__(self):
        for name in PFR_NAMES:
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive and finite, got {v!r}")

    def to_dict(self) -> dict:
        return {
            **{name: getattr(self, name) for name in PFR_NAMES},
            "before": self.before.to_dict(),
            "after": self.after.to_dict(),
            "frailty": self.frailty.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GfbGgModel":
        fr = dict(d.get("frailty", {"family": "gg"}))
        return cls(
            *(float(d[name]) for name in PFR_NAMES),
            before=Baseline(**d.get("before", {})),
            after=Baseline(**d.get("after", {})),
            frailty=Frailty(**fr),
        )


@dataclass(frozen=True)
class ModelFamily:
    """A candidate combination: baseline before/after the first failure and a
    frailty tag (exponential, weibull, gamma, gg, lognormal)."""

    before: str = EXPONENTIAL
    after: str = EXPONENTIAL
    frailty: str = "exponential"
    model_id: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "before", canonical_tag(self.before))
        object.__setattr__(self, "after", canonical_tag(self.after))
        object.__setattr__(self, "frailty", canonical_tag(self.frailty))
        Baseline(self.before)
        Baseline(self.after)
        frailty_member(self.frailty)

    @property
    def free_names(self) -> tuple[str, ...]:
        names = list(PFR_NAMES)
        if self.before != EXPONENTIAL:
            names.append("theta_b")
        if self.after != EXPONENTIAL:
            names.append("theta_b_star")
        names.extend(FRAILTY_FREE_PARAMS[self.frailty])
        return tuple(names)

    @property
    def n_params(self) -> int:
        return len(self.free_names)

    @property
    def label(self) -> str:
        text = f"{self.before}/{self.after}/{self.frailty}"
        return f"{self.model_id} ({text})" if self.model_id else text

    def build(self, params: dict[str, float]) -> GfbGgModel:
        return GfbGgModel(
            params["theta1"],
            params["theta2"],
            params["theta1_star"],
            params["theta2_star"],
            Baseline(self.before, params.get("theta_b", 1.0)),
            Baseline(self.after, params.get("theta_b_star", 1.0)),
            frailty_member(
                self.frailty,
                k=params.get("k", 1.0),
                beta=params.get("beta", 1.0),
                sigma=params.get("sigma", 1.0),
            ),
        )

    def params_of(self, model: GfbGgModel) -> dict[str, float]:
        out = {name: getattr(model, name) for name in PFR_NAMES}
        if self.before != EXPONENTIAL:
            out["theta_b"] = model.before.shape
        if self.after != EXPONENTIAL:
            out["theta_b_star"] = model.after.shape
        for name in FRAILTY_FREE_PARAMS[self.frailty]:
            out[name] = getattr(model.frailty, name)
        return out

    def to_dict(self) -> dict:
        d = {"before": self.before, "after": self.after, "frailty": self.frailty}
        if self.model_id:
            d["id"] = self.model_id
        return d

    @classmethod
    def parse(cls, text: str) -> "ModelFamily":
        """Parse ``"weibull/gamma/gg"`` or a grid id such as ``"M14"``."""
        from .selection import grid45

        text = text.strip()
        if text.upper().startswith("M") and text[1:].isdigit():
            for fam in grid45():
                if fam.model_id == text.upper():
                    return fam
            raise ValueError(f"unknown model id {text!r}")
        parts = [p for p in text.replace(",", "/").split("/") if p]
        if len(parts) != 3:
            raise ValueError("family spec must read before/after/frailty")
        return cls(*parts)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Paired lifetimes with the split into ``y1 > y2`` (I1) and ``y1 < y2`` (I2)."""

    y1: NDArray[np.float64]
    y2: NDArray[np.float64]

    def __post_init__(self):
        y1 = np.ascontiguousarray(self.y1, dtype=np.float64)
        y2 = np.ascontiguousarray(self.y2, dtype=np.float64)
        y1.setflags(write=False)
        y2.setflags(write=False)
        object.__setattr__(self, "y1", y1)
        object.__setattr__(self, "y2", y2)

    @property
    def n(self) -> int:
        return self.y1.size

    @property
    def in_i1(self) -> NDArray[np.bool_]:
        return self.y1 > self.y2

    @property
    def i1(self) -> NDArray[np.intp]:
        return np.flatnonzero(self.in_i1)

    @property
    def i2(self) -> NDArray[np.intp]:
        return np.flatnonzero(~self.in_i1)

    @property
    def n1(self) -> int:
        return int(self.in_i1.sum())

    @property
    def n2(self) -> int:
        return self.n - self.n1

    @property
    def pairs(self) -> list[tuple[float, float]]:
        return list(zip(self.y1.tolist(), self.y2.tolist()))

    def take(self, index: ArrayLike) -> "Dataset":
        index = np.asarray(index)
        return Dataset(self.y1[index], self.y2[index])

    def __eq__(self, other):
        return (
            isinstance(other, Dataset)
            and np.array_equal(self.y1, other.y1)
            and np.array_equal(self.y2, other.y2)
        )

    def __len__(self):
        return self.n


def partition(pairs, jitter_ties: float | None = None, tie_side: str = "y2") -> Dataset:
    """Validate lifetime pairs and build a :class:`Dataset`.

    Exact ties carry zero probability under the model and are rejected unless
    ``jitter_ties`` is given, in which case the ``tie_side`` column of a tied
    row is lowered by that amount (``"y2"`` puts the row in I1, ``"y1"`` in I2).
    """
    if tie_side not in ("y1", "y2"):
        raise ValueError("tie_side must be 'y1' or 'y2'")
    arr = np.asarray(pairs, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise DataError("expected an (n, 2) array of lifetimes")
    if arr.shape[0] == 0:
        raise DataError("dataset is empty")
    bad = ~np.all(np.isfinite(arr) & (arr > 0), axis=1)
    if np.any(bad):
        row = int(np.argmax(bad))
        raise DataError(f"row {row}: lifetimes must be positive and finite, got {tuple(arr[row])}", row)
    y1, y2 = arr[:, 0].copy(), arr[:, 1].copy()
    ties = y1 == y2
    if np.any(ties):
        if jitter_ties is None:
            row = int(np.argmax(ties))
            raise DataError(f"row {row}: tied lifetimes y1 == y2 == {y1[row]} (use jitter_ties)", row)
        if not jitter_ties > 0:
            raise DataError("jitter_ties must be positive")
        col = y1 if tie_side == "y1" else y2
        col[ties] = col[ties] - jitter_ties
        if np.any(col <= 0):
            row = int(np.argmax(col <= 0))
            raise DataError(f"row {row}: jitter makes {tie_side} non-positive", row)
    return Dataset(y1, y2)


# ---------------------------------------------------------------------------
# densities
# ---------------------------------------------------------------------------


def row_terms(m: GfbGgModel, y1: ArrayLike, y2: ArrayLike) -> tuple[NDArray, NDArray]:
    """Per-row ``(log_prefactor, b)`` so that ``f(y | z) = z^2 exp(log_prefactor - b z)``.

    ``b = -ln A`` where ``A`` collects the reliability powers of the
    conditional joint density.
    """
    y1 = np.asarray(y1, dtype=np.float64)
    y2 = np.asarray(y2, dtype=np.float64)
    first = y1 > y2
    lo = np.where(first, y2, y1)
    hi = np.where(first, y1, y2)
    log_r_lo = m.before.log_reliability(lo)
    log_rs_hi = m.after.log_reliability(hi)
    log_rs_lo = m.after.log_reliability(lo)
    log_h_lo = m.before.log_hazard(lo)
    log_hs_hi = m.after.log_hazard(hi)
    survivor = np.where(first, m.theta1_star, m.theta2_star)
    failed = np.where(first, m.theta2, m.theta1)
    log_pref = np.log(survivor) + np.log(failed) + log_hs_hi + log_h_lo
    b = -(survivor * (log_rs_hi - log_rs_lo) + (m.theta1 + m.theta2) * log_r_lo)
    return log_pref, np.maximum(b, 0.0)


def conditional_log_joint_pdf(m: GfbGgModel, y1, y2, z):
    """``ln f(y1, y2 | z)``; ``y1 == y2`` has no density."""
    y1a, y2a, za = np.broadcast_arrays(*(np.asarray(v, dtype=np.float64) for v in (y1, y2, z)))
    if np.any(y1a == y2a):
        raise ValueError("conditional density is undefined for y1 == y2")
    if np.any(~(za > 0)):
        raise ValueError("z must be positive")
    log_pref, b = row_terms(m, y1a, y2a)
    out = 2.0 * np.log(za) + log_pref - za * b
    return float(out) if out.ndim == 0 else out


def _rule_log_moment(frailty: Frailty, b: NDArray, rule: QuadratureRule) -> NDArray:
    z = rule.nodes
    log_g = np.asarray(frailty.log_density(z))
    log_terms = 2.0 * np.log(z)[None, :] - b[:, None] * z[None, :] + log_g[None, :] + np.log(rule.weights)[None, :]
    peak = log_terms.max(axis=1)
    out = peak + np.log(np.exp(log_terms - peak[:, None]).sum(axis=1))
    # >90% of the mass on the outer nodes means the rule cannot see the integrand
    for i in range(b.size):
        values = np.exp(log_terms[i] - peak[i] - np.log(rule.weights))
        if edge_mass_fraction(values, rule) > 0.9:
            out[i] = frailty.log_tilted_moment(b[i : i + 1])[0]
    return out


def marginal_log_pdf(m: GfbGgModel, y1, y2, rule: QuadratureRule | None = None):
    """Log of the frailty-integrated joint density.

    Without ``rule`` the z-integral uses the closed form (``k == 1``) or a
    mode-centred log-z rule; with ``rule`` the fixed rule is applied and rows
    whose integrand escapes it fall back to the adaptive rule.
    """
    y1a, y2a = np.broadcast_arrays(np.asarray(y1, dtype=np.float64), np.asarray(y2, dtype=np.float64))
    if np.any(y1a == y2a):
        raise ValueError("marginal density is undefined for y1 == y2")
    log_pref, b = row_terms(m, y1a.ravel(), y2a.ravel())
    if rule is None:
        log_mom = np.asarray(m.frailty.log_tilted_moment(b))
    else:
        log_mom = _rule_log_moment(m.frailty, b, rule)
    out = (log_pref + log_mom).reshape(y1a.shape)
    if np.any(~np.isfinite(out)):
        raise EvaluationError("marginal density underflowed at every node")
    return float(out) if out.ndim == 0 else out


def row_log_likelihood(m: GfbGgModel, d: Dataset, rule: QuadratureRule | None = None) -> NDArray:
    log_pref, b = row_terms(m, d.y1, d.y2)
    if rule is None:
        log_mom = np.asarray(m.frailty.log_tilted_moment(b))
    else:
        log_mom = _rule_log_moment(m.frailty, b, rule)
    out = log_pref + log_mom
    bad = ~np.isfinite(out)
    if np.any(bad):
        row = int(np.argmax(bad))
        raise EvaluationError(f"log-likelihood is not finite at row {row}", row=row)
    return out


def observed_log_likelihood(m: GfbGgModel, d: Dataset, rule: QuadratureRule | None = None) -> float:
    """Sum over rows of :func:`marginal_log_pdf` (pairwise summation, fixed order)."""
    return float(np.sum(row_log_likelihood(m, d, rule)))

