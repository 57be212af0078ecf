"""Baseline lifetime laws of the proportional-failure-rate class and the
mean-one frailty laws (generalized gamma and its lognormal limit)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import special

from .numerics import (
    DomainError,
    EvaluationError,
    QuadratureRule,
    concave_log_rule,
    gauss_laguerre_rule,
    inverse_log_regularized_gamma_q,
    log_gamma_hazard,
    log_regularized_gamma_q,
)

EXPONENTIAL = "exponential"
WEIBULL = "weibull"
GAMMA = "gamma"
BASELINE_FAMILIES = (EXPONENTIAL, WEIBULL, GAMMA)

# frailty tags; the first four are members of the generalized gamma family
EXP_FRAILTY = "exponential"
WEIBULL_FRAILTY = "weibull"
GAMMA_FRAILTY = "gamma"
GG_FRAILTY = "gg"
LOGNORMAL_FRAILTY = "lognormal"
FRAILTY_TAGS = (EXP_FRAILTY, WEIBULL_FRAILTY, GAMMA_FRAILTY, GG_FRAILTY, LOGNORMAL_FRAILTY)
FRAILTY_FREE_PARAMS = {
    EXP_FRAILTY: (),
    WEIBULL_FRAILTY: ("k",),
    GAMMA_FRAILTY: ("beta",),
    GG_FRAILTY: ("k", "beta"),
    LOGNORMAL_FRAILTY: ("sigma",),
}

_ALIASES = {
    "exp": EXPONENTIAL,
    "exponential": EXPONENTIAL,
    "weibull": WEIBULL,
    "gamma": GAMMA,
    "gg": GG_FRAILTY,
    "generalized-gamma": GG_FRAILTY,
    "lognormal": LOGNORMAL_FRAILTY,
    "ln": LOGNORMAL_FRAILTY,
}
_TINY = 1e-300


def canonical_tag(name: str) -> str:
    try:
        return _ALIASES[name.strip().lower()]
    except KeyError:
        raise ValueError(f"unknown family {name!r}") from None


def _check_time(t: ArrayLike, strict: bool = False) -> NDArray:
    t = np.asarray(t, dtype=np.float64)
    if np.any(np.isnan(t)) or np.any(t < 0) or (strict and np.any(t <= 0)):
        raise DomainError("lifetimes must be " + ("positive" if strict else "non-negative"))
    return t


def _out(x):
    x = np.asarray(x, dtype=np.float64)
    return float(x) if x.ndim == 0 else x


@dataclass(frozen=True)
class Baseline:
    """Baseline law with unit scale: ``Exp(1)``, ``Weibull(shape, 1)`` or
    ``Gamma(shape, rate 1)``. For the exponential family ``shape`` is ignored
    and normalized to 1."""

    family: str = EXPONENTIAL
    shape: float = 1.0

    def __post_init__(self):
        family = canonical_tag(self.family)
        if family not in BASELINE_FAMILIES:
            raise ValueError(f"{self.family!r} is not a baseline family")
        object.__setattr__(self, "family", family)
        if family == EXPONENTIAL:
            object.__setattr__(self, "shape", 1.0)
        elif not (math.isfinite(self.shape) and self.shape > 0):
            raise DomainError(f"baseline shape must be positive, got {self.shape!r}")

    @property
    def n_free(self) -> int:
        return 0 if self.family == EXPONENTIAL else 1

    def log_reliability(self, t: ArrayLike):
        t = _check_time(t)
        if self.family == EXPONENTIAL:
            return _out(-t)
        if self.family == WEIBULL:
            return _out(-(t**self.shape))
        return _out(log_regularized_gamma_q(self.shape, t))

    def reliability(self, t: ArrayLike):
        log_r = np.asarray(self.log_reliability(t))
        if np.any(log_r < np.log(_TINY)):
            raise EvaluationError("reliability underflows; use log_reliability")
        return _out(np.exp(log_r))

    def log_hazard(self, t: ArrayLike):
        t = _check_time(t, strict=True)
        s = self.shape
        if self.family == EXPONENTIAL:
            return _out(np.zeros_like(t))
        if self.family == WEIBULL:
            return _out(math.log(s) + (s - 1.0) * np.log(t))
        return _out(log_gamma_hazard(s, t))

    def hazard(self, t: ArrayLike):
        return _out(np.exp(self.log_hazard(t)))

    def density(self, t: ArrayLike):
        t = _check_time(t, strict=True)
        return _out(np.exp(np.asarray(self.log_hazard(t)) + np.asarray(self.log_reliability(t))))

    def inverse_log_reliability(self, log_r: ArrayLike):
        """Time ``y`` with ``ln R(y) = log_r``."""
        log_r = np.asarray(log_r, dtype=np.float64)
        if np.any(log_r > 0) or np.any(np.isnan(log_r)):
            raise DomainError("log reliability must be <= 0")
        if self.family == EXPONENTIAL:
            return _out(-log_r)
        if self.family == WEIBULL:
            return _out((-log_r) ** (1.0 / self.shape))
        return _out(inverse_log_regularized_gamma_q(self.shape, log_r))

    def conditional_quantile(self, x: ArrayLike, p: ArrayLike, power: ArrayLike):
        """Solve ``[R(y)/R(x)]**power = p`` for ``y`` (residual life past ``x``)."""
        x = _check_time(x)
        p = np.asarray(p, dtype=np.float64)
        power = np.asarray(power, dtype=np.float64)
        if np.any(~((p > 0) & (p < 1))):
            raise DomainError("p must lie in (0, 1)")
        if np.any(~(power > 0)):
            raise DomainError("power must be positive")
        target = np.asarray(self.log_reliability(x)) + np.log(p) / power
        if np.any(~np.isfinite(target)):
            raise EvaluationError("conditional quantile overflows the time axis")
        y = np.asarray(self.inverse_log_reliability(target))
        if np.any(~np.isfinite(y)):
            raise EvaluationError("conditional quantile overflows the time axis")
        return _out(np.maximum(y, x))

    def to_dict(self) -> dict:
        d = {"family": self.family}
        if self.family != EXPONENTIAL:
            d["shape"] = self.shape
        return d


@dataclass(frozen=True)
class Frailty:
    """Mean-one frailty law.

    ``family="gg"``: generalized gamma with shapes ``k`` and ``beta`` and
    scale ``theta = Gamma(beta)/Gamma(beta + 1/k)``, density
    ``k a**beta / Gamma(beta) z**(k beta - 1) exp(-a z**k)`` with
    ``a = theta**(-k)``. ``family="lognormal"``: ``log Z ~ N(-sigma**2/2, sigma**2)``.
    """

    family: str = GG_FRAILTY
    k: float = 1.0
    beta: float = 1.0
    sigma: float = 1.0

    def __post_init__(self):
        family = canonical_tag(self.family)
        if family not in (GG_FRAILTY, LOGNORMAL_FRAILTY):
            raise ValueError("Frailty family must be 'gg' or 'lognormal'; use frailty_member() for tags")
        object.__setattr__(self, "family", family)
        for name in ("k", "beta", "sigma"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise DomainError(f"frailty {name} must be positive and finite, got {v!r}")

    @property
    def is_gg(self) -> bool:
        return self.family == GG_FRAILTY

    @property
    def log_a(self) -> float:
        return self.k * (special.gammaln(self.beta + 1.0 / self.k) - special.gammaln(self.beta))

    @property
    def a(self) -> float:
        return math.exp(self.log_a)

    @property
    def theta(self) -> float:
        return math.exp(special.gammaln(self.beta) - special.gammaln(self.beta + 1.0 / self.k))

    def log_density(self, z: ArrayLike):
        z = np.asarray(z, dtype=np.float64)
        if np.any(~(z > 0)):
            raise DomainError("frailty density is defined for z > 0")
        lz = np.log(z)
        if self.is_gg:
            k, b = self.k, self.beta
            return _out(
                math.log(k) + b * self.log_a - special.gammaln(b) + (k * b - 1.0) * lz - self.a * np.exp(k * lz)
            )
        s = self.sigma
        return _out(-lz - math.log(s * math.sqrt(2 * math.pi)) - (lz + s * s / 2) ** 2 / (2 * s * s))

    def density(self, z: ArrayLike):
        return _out(np.exp(self.log_density(z)))

    def sample(self, rng: np.random.Generator, size=None):
        if self.is_gg:
            g = rng.standard_gamma(self.beta, size)
            return self.theta * g ** (1.0 / self.k)
        s = self.sigma
        return np.exp(s * rng.standard_normal(size) - s * s / 2)

    def mean(self) -> float:
        return 1.0

    def variance(self) -> float:
        if self.is_gg:
            k, b = self.k, self.beta
            return math.exp(
                2 * math.log(self.theta) + special.gammaln(b + 2 / k) - special.gammaln(b)
            ) - 1.0
        return math.expm1(self.sigma**2)

    # -- integrals of the form  int z^2 e^{-b z} h(z) g(z) dz -------------------

    def _tilted_kernel(self, b: NDArray):
        # phi(t) = log[ z^2 e^{-bz} g(z) z ] at z = e^t, with its first two derivatives
        b = b.reshape(-1, 1)
        if self.is_gg:
            k, beta = self.k, self.beta
            a = self.a
            c = k * beta + 2.0
            const = math.log(k) + beta * self.log_a - special.gammaln(beta)

            def dphi(t):
                ekt = a * np.exp(k * t)
                et = b * np.exp(t)
                return const + c * t - ekt - et, c - k * ekt - et, -k * k * ekt - et

            with np.errstate(divide="ignore"):
                right = np.minimum(np.log(c / b), math.log(c / (a * k)) / k)
            return dphi, right
        s2 = self.sigma**2
        const = -0.5 * math.log(2 * math.pi * s2)

        def dphi(t):
            et = b * np.exp(t)
            u = t + s2 / 2
            return const + 2.0 * t - et - u * u / (2 * s2), 2.0 - u / s2 - et, -1.0 / s2 - et

        return dphi, np.full(b.shape, 1.5 * s2)

    def conditional_rule(self, b: ArrayLike, order: int = 64):
        """Log-z nodes and normalized weights of the law ``z^2 e^{-bz} g(z)``.

        Returns ``(log_z, weights, log_norm)``: (rows, order) arrays whose rows
        sum to one, and ``log_norm = ln int z^2 e^{-bz} g(z) dz`` per row.
        """
        b = np.atleast_1d(np.asarray(b, dtype=np.float64))
        if np.any(~(b >= 0)) or np.any(~np.isfinite(b)):
            raise DomainError("tilt b must be finite and non-negative")
        dphi, right = self._tilted_kernel(b)
        t, log_w, phi = concave_log_rule(dphi, right, order=order)
        lw = log_w + phi
        peak = lw.max(axis=1, keepdims=True)
        w = np.exp(lw - peak)
        total = w.sum(axis=1, keepdims=True)
        return t, w / total, (peak + np.log(total)).ravel()

    def log_tilted_moment(self, b: ArrayLike, order: int = 64):
        """``ln int_0^inf z^2 exp(-b z) g(z) dz`` for each ``b >= 0``.

        Closed form when ``k == 1`` (gamma and exponential frailty), per-row
        mode-centred quadrature in ``log z`` otherwise.
        """
        b_arr = np.asarray(b, dtype=np.float64)
        if self.is_gg and self.k == 1.0:
            if np.any(~(b_arr >= 0)):
                raise DomainError("tilt b must be non-negative")
            beta = self.beta
            out = (
                beta * math.log(beta)
                + special.gammaln(beta + 2.0)
                - special.gammaln(beta)
                - (beta + 2.0) * np.log(beta + b_arr)
            )
            return _out(out)
        _, _, log_norm = self.conditional_rule(b_arr.ravel(), order)
        return _out(log_norm.reshape(b_arr.shape))

    def quadrature_rule(self, order: int = 96) -> QuadratureRule:
        """Gauss rule tailored to this density (weights in plain form).

        GG with ``k == 1``: generalized Gauss-Laguerre in ``u = a z`` with
        ``alpha = beta - 1``, exact for polynomial moments. GG with ``k != 1``:
        moments become powers ``u**(j/k)`` that Laguerre rules resolve slowly,
        so a two-panel Gauss-Legendre rule in ``log z`` around the mode is used.
        Lognormal: Gauss-Hermite in ``log z``.
        """
        if self.is_gg and self.k != 1.0:
            k, beta, a = self.k, self.beta, self.a
            const = math.log(k) + beta * self.log_a - special.gammaln(beta)

            def dphi(t):
                # log of g(e^t) e^t and its derivatives
                ekt = a * np.exp(k * t)
                return const + k * beta * t - ekt, k * beta - k * ekt, -k * k * ekt

            t_mode = np.array([math.log(beta / a) / k])
            t, log_w, _ = concave_log_rule(dphi, t_mode, order=order, drop=50.0)
            t, log_w = t[0], log_w[0]
            return QuadratureRule(np.exp(t), np.exp(log_w + t), "adaptive-interval")
        if self.is_gg:
            base = gauss_laguerre_rule(order, self.beta - 1.0)
            u = base.nodes
            # plain GL weights absorbed u^(beta-1) e^-u; put them back, then divide by g
            log_w = np.log(base.weights) + (self.beta - 1.0) * np.log(u) - u - special.gammaln(self.beta)
            z = np.exp((np.log(u) - self.log_a) / self.k)
            log_w = log_w - np.asarray(self.log_density(z))
            return QuadratureRule(z, np.exp(log_w), "generalized-gauss-laguerre")
        x, w = special.roots_hermite(order)
        s = self.sigma
        z = np.exp(-s * s / 2 + math.sqrt(2.0) * s * x)
        log_w = np.log(w) - 0.5 * math.log(math.pi) - np.asarray(self.log_density(z))
        keep = np.isfinite(log_w)
        return QuadratureRule(z[keep], np.exp(log_w[keep]), "gauss-hermite")

    def to_dict(self) -> dict:
        if self.is_gg:
            return {"family": self.family, "k": self.k, "beta": self.beta}
        return {"family": self.family, "sigma": self.sigma}


def frailty_member(tag: str, k: float = 1.0, beta: float = 1.0, sigma: float = 1.0) -> Frailty:
    """Build the frailty for a special-member tag, pinning the fixed shapes."""
    tag = canonical_tag(tag)
    if tag == EXP_FRAILTY:
        return Frailty(GG_FRAILTY, 1.0, 1.0)
    if tag == WEIBULL_FRAILTY:
        return Frailty(GG_FRAILTY, k, 1.0)
    if tag == GAMMA_FRAILTY:
        return Frailty(GG_FRAILTY, 1.0, beta)
    if tag == GG_FRAILTY:
        return Frailty(GG_FRAILTY, k, beta)
    if tag == LOGNORMAL_FRAILTY:
        return Frailty(LOGNORMAL_FRAILTY, sigma=sigma)
    raise ValueError(f"{tag!r} is not a frailty tag")
