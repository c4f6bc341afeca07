"""Possibility functions, their parametric families and the moment operators.

A possibility function is a map ``f`` into ``[0, 1]`` whose supremum is 1.
The credibility of a set is the supremum of ``f`` over it, the expected
value ``E*`` is the set of maximisers and the variance ``V*`` is
``-1 / f''`` at the (singleton) mode, with the conventions ``V* = 0`` at a
kink and ``V* = inf`` when the curvature vanishes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import xlogy

from .numerics import EPS, OptimizerConfig, bisect, global_sup, slope_polish

MODE_TOL = 1e-9
CURVATURE_TOL = 1e-8
TRUNCATION = 1e-12
LOG_TAIL = -32.0
WIDTH_SDS = 64.0
SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# moment containers


@dataclass(frozen=True)
class ModeSet:
    """Sorted, disjoint closed intervals; a point is an interval with ``a == b``."""

    components: tuple[tuple[float, float], ...]

    def __post_init__(self):
        comps = tuple((float(a), float(b)) for a, b in self.components)
        if not comps:
            raise ValueError("a mode set cannot be empty")
        for a, b in comps:
            if math.isnan(a) or math.isnan(b) or a > b:
                raise ValueError(f"invalid mode component [{a}, {b}]")
        for (_, b0), (a1, _) in zip(comps, comps[1:]):
            if not b0 < a1:
                raise ValueError("mode components must be sorted and disjoint")
        object.__setattr__(self, "components", comps)

    @classmethod
    def point(cls, x: float) -> "ModeSet":
        return cls(((x, x),))

    @classmethod
    def interval(cls, a: float, b: float) -> "ModeSet":
        return cls(((a, b),))

    @property
    def is_singleton(self) -> bool:
        return len(self.components) == 1 and self.components[0][0] == self.components[0][1]

    @property
    def is_interval(self) -> bool:
        return len(self.components) == 1

    @property
    def value(self) -> float:
        """The single mode; raises unless the set is a singleton."""
        if not self.is_singleton:
            raise ValueError(f"expected value is set-valued: {self.components}")
        return self.components[0][0]

    @property
    def hull(self) -> tuple[float, float]:
        return self.components[0][0], self.components[-1][1]

    def contains(self, x: float, tol: float = 0.0) -> bool:
        return any(a - tol <= x <= b + tol for a, b in self.components)

    def map(self, fn: Callable[[float], float]) -> "ModeSet":
        """Image under a monotone map."""
        comps = sorted(tuple(sorted((fn(a), fn(b)))) for a, b in self.components)
        return ModeSet(tuple(comps))

    def affine(self, scale: float, shift: float = 0.0) -> "ModeSet":
        return self.map(lambda x: scale * x + shift)

    def to_list(self):
        return [[a, b] for a, b in self.components]


@dataclass(frozen=True)
class ExtendedVariance:
    """``V*`` with explicit zero (kink) and infinite (flat) cases."""

    tag: str
    value: float = float("nan")

    def __post_init__(self):
        if self.tag == "finite":
            if not (self.value > 0 and math.isfinite(self.value)):
                raise ValueError(f"finite variance must be positive, got {self.value}")
        elif self.tag == "zero":
            object.__setattr__(self, "value", 0.0)
        elif self.tag == "infinite":
            object.__setattr__(self, "value", math.inf)
        else:
            raise ValueError(f"unknown variance tag {self.tag!r}")

    @classmethod
    def finite(cls, v: float) -> "ExtendedVariance":
        return cls("finite", float(v))

    @classmethod
    def zero(cls) -> "ExtendedVariance":
        return cls("zero")

    @classmethod
    def infinite(cls) -> "ExtendedVariance":
        return cls("infinite")

    @classmethod
    def from_curvature(cls, d2: float) -> "ExtendedVariance":
        if abs(d2) <= CURVATURE_TOL:
            return cls.infinite()
        if d2 > 0:
            raise ValueError(f"positive curvature {d2} at the mode")
        return cls.finite(-1.0 / d2)

    @property
    def is_finite(self) -> bool:
        return self.tag == "finite"

    def scaled(self, factor: float) -> "ExtendedVariance":
        if factor < 0:
            raise ValueError("variance scale factor must be nonnegative")
        if self.tag != "finite":
            return self
        if factor == 0:
            return ExtendedVariance.zero()
        if math.isinf(factor):
            return ExtendedVariance.infinite()
        return ExtendedVariance.finite(self.value * factor)

    def __float__(self):
        return float(self.value)

    def to_json(self):
        return self.value if self.tag == "finite" else self.tag


# ---------------------------------------------------------------------------
# base class


def _as_array(x):
    arr = np.asarray(x, dtype=float)
    if np.isnan(arr).any():
        raise ValueError("cannot evaluate a possibility function at NaN")
    return arr


def _out(arr, like):
    return float(arr) if np.ndim(like) == 0 else arr


class PossibilityFn:
    """Common interface of every possibility function.

    Subclasses provide ``_log`` (log-values inside the declared domain),
    ``domain`` and usually closed-form ``mode`` and ``variance``.
    """

    kind = "PossibilityFn"
    unimodal = True

    # -- evaluation ---------------------------------------------------------
    def _log(self, x: np.ndarray) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError

    @property
    def domain(self) -> tuple[float, float]:  # pragma: no cover - abstract
        raise NotImplementedError

    def log(self, x):
        arr = _as_array(x)
        lo, hi = self.domain
        inside = (arr >= lo) & (arr <= hi)
        out = np.full(arr.shape, -np.inf)
        if inside.any():
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                vals = np.asarray(self._log(arr[inside]), dtype=float)
            vals = np.minimum(np.where(np.isnan(vals), -np.inf, vals), 0.0)
            out[inside] = vals
        return _out(out, x)

    def __call__(self, x):
        arr = _as_array(x)
        return _out(np.exp(np.asarray(self.log(arr))), x)

    # -- moments ------------------------------------------------------------
    def mode(self) -> ModeSet:
        return _numeric_mode(self)

    def variance(self) -> ExtendedVariance:
        modes = self.mode()
        if not modes.is_interval:
            raise ValueError("variance undefined for a set-valued expected value")
        if not modes.is_singleton:
            return ExtendedVariance.infinite()
        return _numeric_variance(self, modes.value)

    def _scale(self) -> float:
        """Rough width of the peak used to size search windows."""
        try:
            v = self.variance()
        except ValueError:
            return 1.0
        return math.sqrt(v.value) if v.is_finite else 1.0

    def working_domain(self) -> tuple[float, float]:
        """Bounded interval outside of which ``log f < -32`` (at most 64 scales from the mode)."""
        lo, hi = self.domain
        if math.isfinite(lo) and math.isfinite(hi):
            return lo, hi
        a, b = self.mode().hull
        scale = self._scale()
        if not math.isfinite(a):
            a = min(max(0.0, lo), hi)
        if not math.isfinite(b):
            b = max(min(0.0, hi), lo)
        left = lo if math.isfinite(lo) else self._level_edge(a, -1.0, scale)
        right = hi if math.isfinite(hi) else self._level_edge(b, 1.0, scale)
        return left, right

    def _level_edge(self, start, direction, scale):
        step = scale
        prev = start
        while step <= WIDTH_SDS * scale:
            x = start + direction * step
            if self.log(x) < LOG_TAIL:
                edge = bisect(
                    lambda t: self.log(start + direction * t) < LOG_TAIL,
                    abs(prev - start), step, tol=1e-12 * max(1.0, step),
                )
                return start + direction * edge
            prev = x
            step *= 2.0
        return start + direction * WIDTH_SDS * scale

    # -- misc -----------------------------------------------------------------
    @property
    def params(self) -> dict:
        return {}

    def tempered(self, beta: float) -> "PossibilityFn":
        return LossBased(lambda x: -beta * np.asarray(self.log(x)), self.working_domain(), 0.0)

    def tabulate(self, grid_points: int = 401, domain=None) -> "Tabulated":
        a, b = domain if domain is not None else self.working_domain()
        grid = np.linspace(a, b, grid_points)
        modes = self.mode()
        extra = [m for comp in modes.components for m in comp if a < m < b]
        if extra:
            grid = np.union1d(grid, extra)
        return Tabulated(grid, self(grid), normalize=True)

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.params.items())
        return f"{self.kind}({args})"


# ---------------------------------------------------------------------------
# parametric families


def _check_nonneg(**kw):
    for name, v in kw.items():
        if not (v >= 0 and math.isfinite(v)):
            raise ValueError(f"{name} must be finite and nonnegative, got {v}")


class _Frozen(PossibilityFn):
    def __setattr__(self, key, value):
        raise AttributeError(f"{type(self).__name__} is immutable")

    def _set(self, **kw):
        for k, v in kw.items():
            object.__setattr__(self, k, v)

    def __eq__(self, other):
        return type(other) is type(self) and self.params == other.params

    def __hash__(self):
        return hash((self.kind, tuple(self.params.items())))


class Normal(_Frozen):
    """``exp(-tau (x - mu)^2 / 2)``, stored through the precision ``tau = 1 / sigma2``.

    ``sigma2 = inf`` (``tau = 0``) is the uninformative constant function and
    ``sigma2 = 0`` the indicator of ``{mu}``.
    """

    kind = "Normal"

    def __init__(self, mu: float = 0.0, sigma2: float | None = 1.0, *, tau: float | None = None):
        if tau is None:
            sigma2 = float(sigma2)
            if not sigma2 >= 0:
                raise ValueError(f"sigma2 must be nonnegative, got {sigma2}")
            tau = math.inf if sigma2 == 0 else 1.0 / sigma2
        tau = float(tau)
        if not tau >= 0:
            raise ValueError(f"precision must be nonnegative, got {tau}")
        if not math.isfinite(mu):
            raise ValueError("mu must be finite")
        self._set(mu=float(mu), tau=tau)

    @property
    def sigma2(self) -> float:
        return math.inf if self.tau == 0 else (0.0 if math.isinf(self.tau) else 1.0 / self.tau)

    @property
    def domain(self):
        return -math.inf, math.inf

    def _log(self, x):
        if math.isinf(self.tau):
            return np.where(x == self.mu, 0.0, -np.inf)
        return -0.5 * self.tau * (x - self.mu) ** 2

    def mode(self):
        if self.tau == 0:
            return ModeSet.interval(-math.inf, math.inf)
        return ModeSet.point(self.mu)

    def variance(self):
        if self.tau == 0:
            return ExtendedVariance.infinite()
        if math.isinf(self.tau):
            return ExtendedVariance.zero()
        return ExtendedVariance.finite(1.0 / self.tau)

    def working_domain(self):
        if 0 < self.tau < math.inf:
            half = math.sqrt(-2.0 * LOG_TAIL / self.tau)
            return self.mu - half, self.mu + half
        return super().working_domain()

    def tempered(self, beta):
        return Normal(self.mu, tau=self.tau * beta)

    @property
    def params(self):
        return {"mu": self.mu, "sigma2": self.sigma2}


class Gamma(_Frozen):
    """``(b x / a)^a exp(a - b x)`` on ``[0, inf)`` with ``a^a = 1`` at ``a = 0``."""

    kind = "Gamma"

    def __init__(self, alpha: float, beta: float):
        alpha, beta = float(alpha), float(beta)
        _check_nonneg(alpha=alpha, beta=beta)
        if beta == 0 and alpha > 0:
            raise ValueError("Gamma with beta = 0 requires alpha = 0")
        self._set(alpha=alpha, beta=beta)

    @property
    def domain(self):
        return 0.0, math.inf

    def _log(self, x):
        a, b = self.alpha, self.beta
        if a == 0:
            return -b * x
        return xlogy(a, b * x / a) + a - b * x

    def mode(self):
        if self.alpha == 0 and self.beta == 0:
            return ModeSet.interval(0.0, math.inf)
        return ModeSet.point(self.alpha / self.beta)

    def variance(self):
        if self.beta == 0:
            return ExtendedVariance.infinite()
        if self.alpha == 0:
            return ExtendedVariance.zero()
        return ExtendedVariance.finite(self.alpha / self.beta**2)

    def _scale(self):
        if self.alpha == 0:
            return 1.0 / self.beta if self.beta > 0 else 1.0
        return math.sqrt(self.alpha) / self.beta

    def tempered(self, beta):
        return Gamma(beta * self.alpha, beta * self.beta)

    @property
    def params(self):
        return {"alpha": self.alpha, "beta": self.beta}


class InverseGamma(_Frozen):
    """``Gamma(1/x; a, b)`` on ``(0, inf)``."""

    kind = "InverseGamma"

    def __init__(self, alpha: float, beta: float):
        alpha, beta = float(alpha), float(beta)
        _check_nonneg(alpha=alpha, beta=beta)
        if (alpha == 0) != (beta == 0):
            raise ValueError("InverseGamma needs alpha and beta both positive or both zero")
        self._set(alpha=alpha, beta=beta)

    @property
    def domain(self):
        return 0.0, math.inf

    def _log(self, x):
        a, b = self.alpha, self.beta
        if a == 0:
            return np.where(x > 0, 0.0, -np.inf)
        with np.errstate(divide="ignore"):
            inv = np.where(x > 0, 1.0 / np.where(x > 0, x, 1.0), np.inf)
        return np.where(x > 0, xlogy(a, b * inv / a) + a - b * inv, -np.inf)

    def mode(self):
        if self.alpha == 0:
            return ModeSet.interval(0.0, math.inf)
        return ModeSet.point(self.beta / self.alpha)

    def variance(self):
        if self.alpha == 0:
            return ExtendedVariance.infinite()
        return ExtendedVariance.finite(self.beta**2 / self.alpha**3)

    def tempered(self, beta):
        return InverseGamma(beta * self.alpha, beta * self.beta)

    @property
    def params(self):
        return {"alpha": self.alpha, "beta": self.beta}


class Beta(_Frozen):
    """``(a+b)^(a+b) / (a^a b^b) x^a (1-x)^b`` on ``[0, 1]``."""

    kind = "Beta"

    def __init__(self, alpha: float, beta: float):
        alpha, beta = float(alpha), float(beta)
        _check_nonneg(alpha=alpha, beta=beta)
        self._set(alpha=alpha, beta=beta)

    @property
    def domain(self):
        return 0.0, 1.0

    def _log(self, x):
        a, b = self.alpha, self.beta
        s = a + b
        if s == 0:
            return np.zeros_like(x)
        return xlogy(a, s * x / a if a > 0 else x) + xlogy(b, s * (1.0 - x) / b if b > 0 else 1.0 - x)

    def mode(self):
        s = self.alpha + self.beta
        if s == 0:
            return ModeSet.interval(0.0, 1.0)
        return ModeSet.point(self.alpha / s)

    def variance(self):
        a, b = self.alpha, self.beta
        if a + b == 0:
            return ExtendedVariance.infinite()
        if a == 0 or b == 0:
            return ExtendedVariance.zero()
        return ExtendedVariance.finite(a * b / (a + b) ** 3)

    def tempered(self, beta):
        return Beta(beta * self.alpha, beta * self.beta)

    @property
    def params(self):
        return {"alpha": self.alpha, "beta": self.beta}


class ChiSquared(_Frozen):
    """``exp(-(sqrt(x) - sqrt(mu))^2 / beta)`` on ``[0, inf)``.

    For ``mu > 0`` the function is smooth at its mode and ``V* = 2 beta mu``;
    for ``mu = 0`` the mode sits on the boundary with nonzero slope and
    ``V* = 0``.
    """

    kind = "ChiSquared"

    def __init__(self, mu: float, beta: float):
        mu, beta = float(mu), float(beta)
        _check_nonneg(mu=mu)
        if not (beta > 0 and math.isfinite(beta)):
            raise ValueError(f"ChiSquared needs beta > 0, got {beta}")
        self._set(mu=mu, beta=beta)

    @property
    def domain(self):
        return 0.0, math.inf

    def _log(self, x):
        return -((np.sqrt(x) - math.sqrt(self.mu)) ** 2) / self.beta

    def mode(self):
        return ModeSet.point(self.mu)

    def variance(self):
        if self.mu == 0:
            return ExtendedVariance.zero()
        return ExtendedVariance.finite(2.0 * self.beta * self.mu)

    def _scale(self):
        return self.beta if self.mu == 0 else math.sqrt(2.0 * self.beta * self.mu)

    def tempered(self, beta):
        return ChiSquared(self.mu, self.beta / beta)

    @property
    def params(self):
        return {"mu": self.mu, "beta": self.beta}


class StudentT(_Frozen):
    """``(1 + (x - mu)^2 / (nu s))^(-nu/2)``; ``nu = 0`` is the constant function."""

    kind = "StudentT"

    def __init__(self, nu: float, mu: float, s: float):
        nu, mu, s = float(nu), float(mu), float(s)
        _check_nonneg(nu=nu)
        if not (s > 0 and math.isfinite(s)) or not math.isfinite(mu):
            raise ValueError(f"StudentT needs finite mu and s > 0, got mu={mu}, s={s}")
        self._set(nu=nu, mu=mu, s=s)

    @property
    def domain(self):
        return -math.inf, math.inf

    def _log(self, x):
        if self.nu == 0:
            return np.zeros_like(x)
        return -0.5 * self.nu * np.log1p((x - self.mu) ** 2 / (self.nu * self.s))

    def mode(self):
        if self.nu == 0:
            return ModeSet.interval(-math.inf, math.inf)
        return ModeSet.point(self.mu)

    def variance(self):
        if self.nu == 0:
            return ExtendedVariance.infinite()
        return ExtendedVariance.finite(self.s)

    def tempered(self, beta):
        return StudentT(self.nu * beta, self.mu, self.s / beta)

    @property
    def params(self):
        return {"nu": self.nu, "mu": self.mu, "s": self.s}


def _normalize_intervals(intervals) -> tuple[tuple[float, float], ...]:
    if np.ndim(intervals) == 0:
        intervals = [(intervals, intervals)]
    else:
        intervals = list(intervals)
        if len(intervals) == 2 and all(np.ndim(v) == 0 for v in intervals):
            intervals = [tuple(intervals)]
    out = []
    for item in intervals:
        if np.ndim(item) == 0:
            a = b = float(item)
        else:
            a, b = (float(v) for v in item)
        if math.isnan(a) or math.isnan(b) or a > b:
            raise ValueError(f"malformed interval ({a}, {b})")
        out.append((a, b))
    out.sort()
    merged: list[list[float]] = []
    for a, b in out:
        if merged and a <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], b)
        else:
            merged.append([a, b])
    return tuple((a, b) for a, b in merged)


class Indicator(_Frozen):
    """Indicator of a finite union of closed intervals (points allowed)."""

    kind = "Indicator"

    def __init__(self, intervals):
        comps = _normalize_intervals(intervals)
        if not comps:
            raise ValueError("an indicator needs a non-empty set")
        self._set(intervals=comps)

    @property
    def domain(self):
        return self.intervals[0][0], self.intervals[-1][1]

    def _log(self, x):
        inside = np.zeros(x.shape, dtype=bool)
        for a, b in self.intervals:
            inside |= (x >= a) & (x <= b)
        return np.where(inside, 0.0, -np.inf)

    def mode(self):
        return ModeSet(self.intervals)

    def variance(self):
        modes = self.mode()
        if not modes.is_interval:
            raise ValueError("variance undefined for a set-valued expected value")
        return ExtendedVariance.zero() if modes.is_singleton else ExtendedVariance.infinite()

    def working_domain(self):
        lo, hi = self.domain
        if math.isfinite(lo) and math.isfinite(hi):
            return lo, hi
        lo = lo if math.isfinite(lo) else min(hi, 0.0) - WIDTH_SDS
        hi = hi if math.isfinite(hi) else max(lo, 0.0) + WIDTH_SDS
        return lo, hi

    def tempered(self, beta):
        return self

    @property
    def params(self):
        return {"intervals": [list(c) for c in self.intervals]}


class LossBased(_Frozen):
    """``exp(-(L(x) - offset))`` on a bounded interval.

    ``offset`` is the minimum of the loss; :func:`make_from_loss` computes it.
    Values are capped at 1 to absorb the rounding of that numeric minimum.
    """

    kind = "LossBased"

    def __init__(self, loss: Callable, domain, offset: float = 0.0, grid_points: int = 4001):
        lo, hi = float(domain[0]), float(domain[1])
        if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
            raise ValueError(f"LossBased needs a bounded, non-degenerate domain, got {domain}")
        self._set(loss=loss, _domain=(lo, hi), offset=float(offset), grid_points=int(grid_points))
        self._set(_cache={})

    @property
    def domain(self):
        return self._domain

    def _log(self, x):
        return -(np.asarray(self.loss(x), dtype=float) - self.offset)

    def mode(self):
        if "mode" not in self._cache:
            self._cache["mode"] = _numeric_mode(self)
        return self._cache["mode"]

    def variance(self):
        if "variance" not in self._cache:
            self._cache["variance"] = PossibilityFn.variance(self)
        return self._cache["variance"]

    def _scale(self):
        lo, hi = self.domain
        return (hi - lo) / 16.0

    def tempered(self, beta):
        loss = self.loss
        offset = self.offset
        return LossBased(lambda x: beta * (np.asarray(loss(x), dtype=float) - offset), self.domain, 0.0,
                         self.grid_points)

    @property
    def params(self):
        return {"domain": list(self.domain), "offset": self.offset}

    def __eq__(self, other):
        return self is other

    def __hash__(self):
        return id(self)


class Tabulated(_Frozen):
    """Piecewise-linear possibility function on a strictly increasing grid.

    Values below ``1e-12`` are truncated to zero.  With ``normalize=True``
    the values are divided by their maximum first; otherwise the maximum
    must already be 1 within ``1e-6``.
    """

    kind = "Tabulated"

    def __init__(self, grid, values, normalize: bool = False):
        grid = np.array(grid, dtype=float)
        values = np.array(values, dtype=float)
        if grid.ndim != 1 or grid.size < 3 or grid.shape != values.shape:
            raise ValueError("Tabulated needs matching 1-d grid and values with at least 3 points")
        if not np.all(np.isfinite(grid)) or not np.all(np.diff(grid) > 0):
            raise ValueError("Tabulated grid must be finite and strictly increasing")
        if np.isnan(values).any() or (values < 0).any():
            raise ValueError("Tabulated values must be nonnegative numbers")
        peak = values.max()
        if normalize:
            if peak <= 0:
                raise ValueError("cannot normalise an identically zero function")
            values = values / peak
        elif abs(peak - 1.0) > 1e-6:
            raise ValueError(f"Tabulated values must peak at 1, got {peak}")
        values = np.minimum(values, 1.0)
        values[values < TRUNCATION] = 0.0
        grid.setflags(write=False)
        values.setflags(write=False)
        self._set(grid=grid, values=values)

    @property
    def domain(self):
        return float(self.grid[0]), float(self.grid[-1])

    def __call__(self, x):
        arr = _as_array(x)
        return _out(np.interp(arr, self.grid, self.values, left=0.0, right=0.0), x)

    def log(self, x):
        with np.errstate(divide="ignore"):
            return _out(np.log(np.asarray(self(_as_array(x)))), x)

    def _log(self, x):
        return self.log(x)

    def mode(self):
        top = self.values >= 1.0 - MODE_TOL
        idx = np.flatnonzero(top)
        runs = []
        start = prev = idx[0]
        for i in idx[1:]:
            if i != prev + 1:
                runs.append((start, prev))
                start = i
            prev = i
        runs.append((start, prev))
        comps = []
        for i, j in runs:
            a, b = self.grid[i], self.grid[j]
            if b - a <= 8 * EPS * max(1.0, abs(self.grid[0]), abs(self.grid[-1])):
                # nodes a few ulps apart, e.g. an inserted mode next to a grid node
                k = i + int(np.argmax(self.values[i:j + 1]))
                a = b = self.grid[k]
            comps.append((a, b))
        return ModeSet(tuple(comps))

    def variance(self):
        modes = self.mode()
        if not modes.is_interval:
            raise ValueError("variance undefined for a set-valued expected value")
        if not modes.is_singleton:
            return ExtendedVariance.infinite()
        i = int(np.searchsorted(self.grid, modes.value))
        return _tabulated_variance(self.grid, self.values, i)

    def working_domain(self):
        return self.domain

    def tempered(self, beta):
        return Tabulated(self.grid, self.values**beta)

    def tabulate(self, grid_points=401, domain=None):
        if domain is None:
            return self
        return super().tabulate(grid_points, domain)

    @property
    def params(self):
        return {"grid": self.grid.tolist(), "values": self.values.tolist()}

    def __eq__(self, other):
        return (type(other) is Tabulated and np.array_equal(self.grid, other.grid)
                and np.array_equal(self.values, other.values))

    def __hash__(self):
        return hash((self.grid.tobytes(), self.values.tobytes()))


# ---------------------------------------------------------------------------
# numeric moment extraction


def _cluster_modes(xs, logs, logf, domain, tol):
    """Locate every maximiser of ``logf`` from a grid scan.

    Runs of exactly equal near-maximal nodes are plateaus whose edges are
    refined by bisection.  Every other local maximum within one log-unit of
    the best node is refined by golden-section search and kept when it
    reaches ``1 - MODE_TOL``.
    """
    def refine(i, j):
        lo, hi = xs[max(i - 1, 0)], xs[min(j + 1, xs.size - 1)]
        return global_sup(logf, OptimizerConfig(grid_points=3, abscissa_tol=tol), domain=(lo, hi))

    def above(t):
        return np.asarray(logf(t)) >= -MODE_TOL

    n = xs.size
    best = logs.max()
    left = np.r_[-np.inf, logs[:-1]]
    right = np.r_[logs[1:], -np.inf]
    peak = (logs >= left) & (logs >= right) & (logs >= best - 1.0)
    idx = np.flatnonzero(peak)
    runs = np.split(idx, np.flatnonzero(np.diff(idx) > 1) + 1)
    comps, fallback = [], None
    for run in runs:
        i, j = run[0], run[-1]
        if j > i and logs[i] >= -MODE_TOL and np.ptp(logs[i:j + 1]) <= 4 * EPS:
            a = xs[i] if i == 0 else bisect(above, xs[i - 1], xs[i], tol=tol)
            b = xs[j] if j == n - 1 else bisect(lambda t: ~above(t), xs[j], xs[j + 1], tol=tol)
            b = float(b - tol) if j != n - 1 else b
            comps.append((float(a), max(float(a), float(b))))
            continue
        # a flat-but-curved peak (e.g. exp(-x^4)) is a single point
        x, val = refine(i, j)
        step = xs[min(j + 1, xs.size - 1)] - xs[max(i - 1, 0)]
        x, val = slope_polish(logf, x, val, step, (xs[0], xs[-1]))
        if val >= -MODE_TOL:
            comps.append((x, x))
        elif fallback is None or val > fallback[1]:
            fallback = (x, val)
    if not comps:
        comps = [(fallback[0], fallback[0])]
    comps.sort()
    merged = [comps[0]]
    for a, b in comps[1:]:
        if a <= merged[-1][1] + tol:
            merged[-1] = (merged[-1][0], max(b, merged[-1][1]))
        else:
            merged.append((a, b))
    return ModeSet(tuple(merged))


def _numeric_mode(pf: PossibilityFn, grid_points: int | None = None) -> ModeSet:
    lo, hi = pf.working_domain()
    n = grid_points or getattr(pf, "grid_points", 4001)
    xs = np.linspace(lo, hi, n)
    logs = np.asarray(pf.log(xs))
    if not np.isfinite(logs).any():
        raise ValueError("possibility function vanishes on its working domain")
    tol = 1e-12 * max(1.0, abs(lo), abs(hi))
    return _cluster_modes(xs, logs, pf.log, (lo, hi), tol)


def _second_difference(g, m, h, lo, hi):
    """Second derivative of ``g`` at ``m``; one-sided when a boundary is within ``2h``."""
    if m - h >= lo and m + h <= hi:
        f = np.asarray(g(np.array([m - h, m, m + h])))
        return (f[2] - 2 * f[1] + f[0]) / h**2
    d = 1.0 if m + 2 * h <= hi else -1.0
    f = np.asarray(g(np.array([m, m + d * h, m + 2 * d * h])))
    return (f[2] - 2 * f[1] + f[0]) / h**2


def _is_kink(g, m, h, lo, hi):
    """Kink test on one-sided first differences at steps ``h`` and ``h / 2``.

    Along a smooth peak the one-sided slope halves with the step, at a
    kink it does not.
    """
    g0 = float(g(np.array(m)))
    for d in (-1.0, 1.0):
        if not (lo <= m + d * h <= hi):
            continue
        s1 = (float(g(np.array(m + d * h))) - g0) / h
        s2 = (float(g(np.array(m + d * h / 2))) - g0) / (h / 2)
        if abs(s2) > 1e-6 and abs(s1) > 0 and s2 / s1 >= 0.75:
            return True
    return False


def _numeric_variance(pf: PossibilityFn, m: float, width: float | None = None) -> ExtendedVariance:
    lo, hi = pf.domain
    wlo, whi = pf.working_domain()
    scale = width if width is not None else (whi - wlo) / 16.0
    if not scale > 0:
        raise ValueError("degenerate working domain")
    g = pf.log
    h1 = EPS ** (1.0 / 3.0) * scale
    if _is_kink(g, m, EPS ** 0.25 * scale, lo, hi):
        return ExtendedVariance.zero()
    d2 = _second_difference(g, m, h1, lo, hi)
    if abs(d2) <= CURVATURE_TOL:
        return ExtendedVariance.infinite()
    if d2 > 0:
        raise ValueError(f"positive curvature {d2} at the mode")
    # second pass with a step matched to the measured peak width
    sd = math.sqrt(-1.0 / d2)
    d2 = _second_difference(g, m, EPS ** 0.25 * sd, lo, hi)
    return ExtendedVariance.from_curvature(d2)


def _tabulated_variance(grid, values, i):
    n = grid.size
    if n < 3:
        raise ValueError("need at least 3 grid points")
    with np.errstate(divide="ignore"):
        g = np.log(values)

    def slope(j, k):
        return (g[k] - g[j]) / (grid[k] - grid[j])

    kink = False
    for d in (-1, 1):
        j1, j2 = i + d, i + 2 * d
        if 0 <= j2 < n and np.isfinite(g[j2]):
            s1, s2 = slope(i, j1), slope(i, j2)
            if abs(s1) > 1e-6 and s2 != 0 and s1 / s2 >= 0.75:
                kink = True
        elif 0 <= j1 < n and not np.isfinite(g[j1]):
            kink = True
    if kink:
        return ExtendedVariance.zero()
    if i == 0 or i == n - 1:
        j = [0, 1, 2] if i == 0 else [n - 3, n - 2, n - 1]
    else:
        j = [i - 1, i, i + 1]
    x, y = grid[j], g[j]
    if not np.all(np.isfinite(y)):
        return ExtendedVariance.zero()
    # second derivative of the interpolating parabola on a non-uniform stencil
    d2 = 2.0 * ((y[2] - y[1]) / (x[2] - x[1]) - (y[1] - y[0]) / (x[1] - x[0])) / (x[2] - x[0])
    return ExtendedVariance.from_curvature(d2)


def numeric_moments(pf: PossibilityFn, grid_points: int = 10_000) -> tuple[float, ExtendedVariance]:
    """Mode and variance computed numerically from ``log f`` alone.

    Serves as a cross-check of the closed forms: the mode comes from a
    ``grid_points`` scan plus golden-section refinement of ``log f`` and the
    variance from a central second difference at that mode.
    """
    lo, hi = pf.working_domain()
    tol = 1e-13 * max(1.0, abs(lo), abs(hi))
    m, _ = global_sup(pf.log, OptimizerConfig(grid_points=grid_points, abscissa_tol=tol), domain=(lo, hi))
    return m, _numeric_variance(pf, m)


# ---------------------------------------------------------------------------
# public operations

_FAMILIES = {
    "normal": (Normal, ("mu", "sigma2")),
    "gamma": (Gamma, ("alpha", "beta")),
    "inversegamma": (InverseGamma, ("alpha", "beta")),
    "beta": (Beta, ("alpha", "beta")),
    "chisquared": (ChiSquared, ("mu", "beta")),
    "studentt": (StudentT, ("nu", "mu", "s")),
    "indicator": (Indicator, ("intervals",)),
}
_ALIASES = {"invgamma": "inversegamma", "ig": "inversegamma", "chi2": "chisquared",
            "student": "studentt", "t": "studentt", "st": "studentt"}


def construct_family(kind: str, params) -> PossibilityFn:
    """Build a parametric family member from a kind name and parameters.

    ``params`` is either a sequence in the family's positional order or a
    mapping by name, e.g. ``construct_family("gamma", (2, 4))``.
    """
    key = kind.replace("-", "").replace("_", "").lower()
    key = _ALIASES.get(key, key)
    if key not in _FAMILIES:
        raise ValueError(f"unknown family {kind!r}")
    cls, names = _FAMILIES[key]
    if isinstance(params, dict):
        return cls(**params)
    if cls is Indicator:
        return Indicator(params)
    params = list(params)
    if len(params) != len(names):
        raise ValueError(f"{cls.kind} expects parameters {names}, got {len(params)} values")
    return cls(*params)


def evaluate(pf: PossibilityFn, x):
    return pf(x)


def _closest(modes: ModeSet, a: float, b: float) -> float | None:
    """Point of ``[a, b]`` nearest to the mode set, or None if they intersect."""
    best = None
    for ma, mb in modes.components:
        if ma <= b and a <= mb:
            return None
        cand = a if a > mb else b
        gap = (a - mb) if a > mb else (ma - b)
        if best is None or gap < best[0]:
            best = (gap, cand)
    return best[1]


def credibility(pf: PossibilityFn, intervals) -> float:
    """Supremum of ``pf`` over a finite union of closed intervals; ``sup of nothing = 0``."""
    comps = _normalize_intervals(intervals) if len(np.atleast_1d(np.asarray(intervals, dtype=object))) else ()
    lo, hi = pf.domain
    best = 0.0
    for a, b in comps:
        a, b = max(a, lo), min(b, hi)
        if a > b:
            continue
        if isinstance(pf, Tabulated):
            inner = pf.values[(pf.grid >= a) & (pf.grid <= b)]
            ends = pf(np.array([a, b]))
            val = max(inner.max(initial=0.0), ends.max())
        elif pf.unimodal and not isinstance(pf, LossBased):
            # parametric families are monotone on each side of the mode set
            modes = pf.mode()
            if isinstance(pf, Indicator):
                val = 1.0 if any(ma <= b and a <= mb for ma, mb in modes.components) else 0.0
            else:
                c = _closest(modes, a, b)
                val = 1.0 if c is None else float(pf(c))
        else:
            wlo, whi = pf.working_domain()
            a2, b2 = max(a, wlo), min(b, whi)
            if a2 > b2:
                ends = [v for v in (a, b) if math.isfinite(v)]
                val = float(np.max(pf(np.array(ends)))) if ends else 0.0
            else:
                _, val = global_sup(pf, domain=(a2, b2))
        best = max(best, float(val))
        if best >= 1.0:
            break
    return best


def expected_value(pf: PossibilityFn) -> ModeSet:
    return pf.mode()


def variance(pf: PossibilityFn) -> ExtendedVariance:
    return pf.variance()


def make_from_loss(loss: Callable, domain, grid_points: int = 4001) -> PossibilityFn:
    """``exp(-(L - min L))`` on a bounded domain.

    A loss that is constant on the scan grid yields the indicator of the
    domain.
    """
    lo, hi = float(domain[0]), float(domain[1])
    if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
        raise ValueError("make_from_loss needs a bounded domain")
    xs = np.linspace(lo, hi, grid_points)
    vals = np.asarray(loss(xs), dtype=float)
    if np.isnan(vals).any() or np.isneginf(vals).any():
        raise ValueError("loss is unbounded below or undefined on the domain")
    if not np.isfinite(vals).any():
        raise ValueError("loss is infinite everywhere on the domain")
    if np.ptp(vals) == 0.0:
        return Indicator((lo, hi))

    def neg(x):
        return -np.asarray(loss(x), dtype=float)

    tol = 1e-13 * max(1.0, abs(lo), abs(hi))
    _, top = global_sup(neg, OptimizerConfig(grid_points=grid_points, abscissa_tol=tol), domain=(lo, hi))
    if not math.isfinite(top):
        raise ValueError("loss is unbounded below on the domain")
    return LossBased(loss, (lo, hi), -top, grid_points)


def temper(pf: PossibilityFn, beta: float) -> PossibilityFn:
    """``f ** beta``; closed form where the family is closed under powers."""
    beta = float(beta)
    if not (beta > 0 and math.isfinite(beta)):
        raise ValueError(f"tempering exponent must be positive, got {beta}")
    if beta == 1.0:
        return pf
    return pf.tempered(beta)


# ---------------------------------------------------------------------------
# serialisation


def _bound(v):
    return None if not math.isfinite(v) else v


def to_json(pf: PossibilityFn, grid_points: int = 401) -> dict:
    """Versioned JSON record ``{version, kind, params, domain[, grid]}``.

    Loss-based functions are stored as their tabulation; infinite domain
    ends are written as ``null``.
    """
    if isinstance(pf, LossBased):
        pf = pf.tabulate(grid_points)
    lo, hi = pf.domain
    rec = {"version": SCHEMA_VERSION, "kind": pf.kind, "domain": [_bound(lo), _bound(hi)]}
    if isinstance(pf, Tabulated):
        rec["params"] = {}
        rec["grid"] = {"x": pf.grid.tolist(), "f": pf.values.tolist()}
    else:
        params = dict(pf.params)
        if isinstance(pf, Normal):
            params["sigma2"] = _bound(params["sigma2"])
        rec["params"] = params
    return rec


def from_json(record) -> PossibilityFn:
    if isinstance(record, str):
        record = json.loads(record)
    if record.get("version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported record version {record.get('version')!r}")
    kind = record["kind"]
    if kind == "Tabulated":
        return Tabulated(record["grid"]["x"], record["grid"]["f"])
    params = dict(record["params"])
    if kind == "Normal" and params.get("sigma2") is None:
        params["sigma2"] = math.inf
    if kind == "Indicator":
        params["intervals"] = [[(-math.inf if a is None else a), (math.inf if b is None else b)]
                               for a, b in params["intervals"]]
    return construct_family(kind, params)
