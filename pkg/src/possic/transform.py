"""Transforms of uncertain variables.

Change of variable, marginalisation and sums are all suprema over
constraint sets: ``f_psi(psi) = sup{f(theta) : zeta(theta) = psi}``.  No
Jacobian ever appears.
"""

from __future__ import annotations

import math
import warnings
from typing import Callable

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .core import (
    CURVATURE_TOL,
    ChiSquared,
    ExtendedVariance,
    Gamma,
    Indicator,
    InverseGamma,
    Normal,
    PossibilityFn,
    StudentT,
    Tabulated,
)
from .numerics import (
    _target_index,
    bisect,
    central_first_difference,
    golden_section,
)

DEFAULT_GRID = 401
NORMALIZATION_TOL = 1e-6


class JointPossibilityFn:
    """Possibility function of two variables.

    Always carries a tensor grid of values.  Product-form joints also keep
    their two factors and joints built from a callable keep it; either is
    used for exact evaluation off the grid.  Otherwise evaluation is
    bilinear on the grid.
    """

    def __init__(self, x_grid, y_grid, values, factors=None, fn: Callable | None = None):
        self.x_grid = np.asarray(x_grid, dtype=float)
        self.y_grid = np.asarray(y_grid, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if self.values.shape != (self.x_grid.size, self.y_grid.size):
            raise ValueError("values must have shape (len(x_grid), len(y_grid))")
        for g in (self.x_grid, self.y_grid):
            if g.size < 2 or not np.all(np.diff(g) > 0):
                raise ValueError("joint grids must be strictly increasing")
        if np.isnan(self.values).any() or (self.values < 0).any() or (self.values > 1 + 1e-12).any():
            raise ValueError("joint values must lie in [0, 1]")
        if factors is None and fn is None and abs(self.values.max() - 1.0) > NORMALIZATION_TOL:
            raise ValueError(f"joint values must peak at 1, got {self.values.max()}")
        self.factors = tuple(factors) if factors is not None else None
        self.fn = fn
        self._interp = None

    @classmethod
    def from_callable(cls, fn, x_domain, y_domain, grid_points: int = DEFAULT_GRID):
        xs = np.linspace(*x_domain, grid_points)
        ys = np.linspace(*y_domain, grid_points)
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        return cls(xs, ys, np.asarray(fn(X, Y), dtype=float), fn=fn)

    @property
    def is_product(self) -> bool:
        return self.factors is not None

    def __call__(self, x, y):
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        if np.isnan(x).any() or np.isnan(y).any():
            raise ValueError("cannot evaluate at NaN")
        if self.factors is not None:
            return np.asarray(self.factors[0](x)) * np.asarray(self.factors[1](y))
        if self.fn is not None:
            return np.asarray(self.fn(x, y), dtype=float)
        if self._interp is None:
            self._interp = RegularGridInterpolator(
                (self.x_grid, self.y_grid), self.values, bounds_error=False, fill_value=0.0
            )
        pts = np.stack([x.ravel(), y.ravel()], axis=-1)
        return self._interp(pts).reshape(x.shape)


def independent_product(pf1: PossibilityFn, pf2: PossibilityFn, grid_points: int = DEFAULT_GRID,
                        domains=None) -> JointPossibilityFn:
    """Joint of two independently described variables: ``f(x, y) = f1(x) f2(y)``."""
    d1, d2 = domains if domains is not None else (pf1.working_domain(), pf2.working_domain())
    xs = _grid_with_modes(pf1, d1, grid_points)
    ys = _grid_with_modes(pf2, d2, grid_points)
    values = np.outer(pf1(xs), pf2(ys))
    return JointPossibilityFn(xs, ys, values, factors=(pf1, pf2))


def _grid_with_modes(pf, domain, grid_points):
    a, b = domain
    if a == b:
        return np.array([a - 0.5, a, a + 0.5]) if grid_points >= 3 else np.array([a])
    grid = np.linspace(a, b, grid_points)
    extra = [m for comp in pf.mode().components for m in comp if a < m < b]
    return np.union1d(grid, extra) if extra else grid


def _finish(grid, values, what):
    peak = float(np.max(values))
    if peak <= 0:
        raise ValueError(f"{what} vanishes on the whole target grid")
    if abs(peak - 1.0) > NORMALIZATION_TOL:
        warnings.warn(f"{what} peaks at {peak:.3g} on the grid; renormalising", RuntimeWarning,
                      stacklevel=3)
        return Tabulated(grid, values, normalize=True)
    return Tabulated(grid, values)


def marginalize(joint: JointPossibilityFn, axis: int = 0) -> PossibilityFn:
    """Sup over the other variable; ``axis`` is the variable that is kept (0 or 1).

    Product-form joints return the corresponding factor itself.  Callable
    joints are maximised by a scan plus golden-section refinement, grid-only
    joints by a column-wise maximum.
    """
    if axis not in (0, 1):
        raise ValueError("axis must be 0 or 1")
    if joint.is_product:
        return joint.factors[axis]
    kept = joint.x_grid if axis == 0 else joint.y_grid
    other = joint.y_grid if axis == 0 else joint.x_grid
    if joint.fn is None:
        return _finish(kept, joint.values.max(axis=1 - axis), "marginal")

    def along(k, t):
        return joint.fn(k, t) if axis == 0 else joint.fn(t, k)

    vals = joint.values if axis == 0 else joint.values.T
    best = np.argmax(vals, axis=1)
    lo = other[np.maximum(best - 1, 0)]
    hi = other[np.minimum(best + 1, other.size - 1)]
    _, refined = golden_section(lambda t: along(kept, t), lo, hi, tol=1e-12, max_iter=80)
    out = np.maximum(vals.max(axis=1), refined)
    return _finish(kept, out, "marginal")


class Transformed(PossibilityFn):
    """``f(zeta^{-1}(psi))`` for a strictly monotone, continuous ``zeta``."""

    kind = "Transformed"

    def __init__(self, base: PossibilityFn, zeta: Callable, inverse: Callable, domain):
        self.base, self.zeta, self.inverse = base, zeta, inverse
        self._domain = (float(domain[0]), float(domain[1]))

    @property
    def domain(self):
        return self._domain

    def _log(self, x):
        return np.asarray(self.base.log(self.inverse(x)), dtype=float)

    def mode(self):
        return self.base.mode().map(lambda t: float(self.zeta(np.asarray(t))))

    def variance(self):
        modes = self.base.mode()
        v = self.base.variance()
        if not modes.is_singleton:
            return v
        d = central_first_difference(self.zeta, modes.value)
        # a difference quotient of a stationary map is O(h^2), not exactly zero
        return variance_pushforward(v, 0.0 if abs(d) <= CURVATURE_TOL else d)

    def working_domain(self):
        a, b = self.base.working_domain()
        za, zb = sorted((float(self.zeta(np.asarray(a))), float(self.zeta(np.asarray(b)))))
        lo, hi = self.domain
        za, zb = max(za, lo), min(zb, hi)
        if not (math.isfinite(za) and math.isfinite(zb)):
            return super().working_domain()
        return za, zb

    @property
    def params(self):
        return {"base": repr(self.base)}


def affine_pushforward(pf: PossibilityFn, scale: float, shift: float = 0.0) -> PossibilityFn:
    """Closed-form image of ``pf`` under ``x -> scale * x + shift`` where available."""
    if scale == 0:
        raise ValueError("scale must be nonzero")
    if isinstance(pf, Normal):
        return Normal(scale * pf.mu + shift, tau=pf.tau / scale**2)
    if isinstance(pf, StudentT):
        return StudentT(pf.nu, scale * pf.mu + shift, scale**2 * pf.s)
    if isinstance(pf, Indicator):
        return Indicator([sorted((scale * a + shift, scale * b + shift)) for a, b in pf.intervals])
    if isinstance(pf, ChiSquared) and scale > 0 and shift == 0:
        return ChiSquared(scale * pf.mu, scale * pf.beta)
    lo, hi = sorted((scale * pf.domain[0] + shift, scale * pf.domain[1] + shift))
    return Transformed(pf, lambda x: scale * np.asarray(x) + shift,
                       lambda y: (np.asarray(y) - shift) / scale, (lo, hi))


def reciprocal_pushforward(pf: PossibilityFn) -> PossibilityFn:
    """Image under ``x -> 1/x`` on the positive half-line; gamma and inverse-gamma swap."""
    if isinstance(pf, Gamma) and not (pf.alpha > 0 and pf.beta == 0):
        return InverseGamma(pf.alpha, pf.beta)
    if isinstance(pf, InverseGamma):
        return Gamma(pf.alpha, pf.beta)
    if pf.domain[0] < 0:
        raise ValueError("reciprocal pushforward needs a positive domain")
    with np.errstate(divide="ignore"):
        return Transformed(pf, lambda x: 1.0 / np.asarray(x), lambda y: 1.0 / np.asarray(y),
                           (0.0, math.inf))


def pushforward(pf: PossibilityFn, zeta: Callable, target_domain, inverse: Callable | None = None,
                grid_points: int = DEFAULT_GRID, source_points: int = 2001) -> PossibilityFn:
    """Change of variable ``f_psi(psi) = sup{f(theta) : zeta(theta) = psi}``.

    With ``inverse`` (a declared monotone bijection) the result is the
    analytic composition ``f(inverse(psi))``.  Otherwise ``zeta`` must be
    continuous: every crossing of a target node by ``zeta`` along a fine
    source grid is located by bisection and ``f`` is maximised over those
    crossings.  Target nodes with an empty preimage get 0.
    """
    lo, hi = float(target_domain[0]), float(target_domain[1])
    if inverse is not None:
        return Transformed(pf, zeta, inverse, (lo, hi))
    if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
        raise ValueError("the numeric pushforward needs a bounded target domain")

    modes = pf.mode()
    mode_images = [float(zeta(np.asarray(m))) for comp in modes.components for m in comp
                   if math.isfinite(m)]
    if not any(lo <= z <= hi for z in mode_images):
        raise ValueError("the image of the mode falls outside the target domain")
    target = np.union1d(np.linspace(lo, hi, grid_points), [z for z in mode_images if lo <= z <= hi])

    src = np.union1d(np.linspace(*pf.working_domain(), source_points),
                     [m for comp in modes.components for m in comp if math.isfinite(m)])
    z = np.asarray(zeta(src), dtype=float)
    if np.isnan(z).any():
        raise ValueError("zeta returned NaN on the source grid")
    # turning points of zeta between nodes would hide tangential crossings
    dz = np.diff(z)
    turn = np.flatnonzero(dz[:-1] * dz[1:] < 0) + 1
    if turn.size:
        sign = np.where(dz[turn - 1] > 0, 1.0, -1.0)
        extra, _ = golden_section(lambda t: sign * np.asarray(zeta(t), dtype=float),
                                  src[turn - 1], src[turn + 1], tol=1e-14, max_iter=80)
        src = np.union1d(src, np.atleast_1d(extra))
        z = np.asarray(zeta(src), dtype=float)
    out = np.zeros(target.size)

    # exact hits at source nodes
    hit = _target_index(z, target)
    near = target[np.maximum(hit, 0)]
    exact = (hit >= 0) & (np.abs(near - z) <= 1e-12 * np.maximum(1.0, np.abs(near)))
    np.maximum.at(out, hit[exact], pf(src[exact]))

    # one bisection per (segment, crossed target node) pair
    zl, zr = z[:-1], z[1:]
    kmin = np.searchsorted(target, np.minimum(zl, zr), side="left")
    kmax = np.searchsorted(target, np.maximum(zl, zr), side="right")
    counts = np.maximum(kmax - kmin, 0)
    if counts.sum():
        seg = np.repeat(np.arange(zl.size), counts)
        offs = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
        k = np.repeat(kmin, counts) + offs
        psi = target[k]
        increasing = zr[seg] >= zl[seg]

        def crossed(t):
            zt = np.asarray(zeta(t), dtype=float)
            return np.where(increasing, zt >= psi, zt <= psi)

        roots = bisect(crossed, src[seg], src[seg + 1], tol=1e-13 * max(1.0, np.abs(src).max()),
                       max_iter=64)
        np.maximum.at(out, k, pf(np.atleast_1d(roots)))
    return Tabulated(target, out, normalize=abs(out.max() - 1.0) > NORMALIZATION_TOL)


def _point_factor(joint, axis):
    if not joint.is_product:
        return None
    f = joint.factors[axis]
    if isinstance(f, Indicator) or (isinstance(f, Normal) and math.isinf(f.tau)):
        m = f.mode()
        if m.is_singleton:
            return m.value
    return None


def linear_pushforward(joint: JointPossibilityFn, alpha: float, method: str = "refined",
                       grid_points: int = DEFAULT_GRID, target_grid=None) -> PossibilityFn:
    """Possibility function of ``alpha * x + y`` for a joint of ``(x, y)``.

    ``method="refined"`` substitutes ``y = phi - alpha x`` and maximises over
    ``x`` by a scan plus golden-section refinement.  ``method="grid"`` assigns
    every pair of grid nodes to the nearest target node and keeps the
    largest joint value per node; it only uses the tabulated joint.
    """
    alpha = float(alpha)
    if alpha == 0 or not math.isfinite(alpha):
        raise ValueError("alpha must be finite and nonzero")
    xs, ys = joint.x_grid, joint.y_grid
    corners = alpha * np.array([xs[0], xs[-1]])
    lo, hi = corners.min() + ys[0], corners.max() + ys[-1]

    if target_grid is None:
        if lo == hi:
            target_grid = np.array([lo - 1.0, lo, lo + 1.0])
        else:
            target_grid = np.linspace(lo, hi, grid_points)
        if joint.is_product and method == "refined":
            m1, m2 = (f.mode() for f in joint.factors)
            if m1.is_singleton and m2.is_singleton:
                target_grid = np.union1d(target_grid, [alpha * m1.value + m2.value])
    target_grid = np.asarray(target_grid, dtype=float)

    if method == "grid":
        coord = (alpha * xs[:, None] + ys[None, :]).ravel()
        idx = _target_index(coord, target_grid)
        keep = idx >= 0
        out = np.zeros(target_grid.size)
        np.maximum.at(out, idx[keep], joint.values.ravel()[keep])
        return Tabulated(target_grid, out, normalize=True)
    if method != "refined":
        raise ValueError(f"unknown method {method!r}")

    px = _point_factor(joint, 0)
    if px is None and xs.size < 3:
        px = xs[int(np.argmax(joint.values.max(1)))]
    if px is not None:
        # degenerate x: the sup is attained at the single point
        out = joint(np.full_like(target_grid, px), target_grid - alpha * px)
        return _finish(target_grid, out, "linear combination")
    py = _point_factor(joint, 1)
    if py is None and ys.size < 3:
        py = ys[int(np.argmax(joint.values.max(0)))]
    if py is not None:
        x = (target_grid - py) / alpha
        out = joint(x, np.full_like(target_grid, py))
        return _finish(target_grid, out, "linear combination")

    phi = target_grid[:, None]
    scan = joint(xs[None, :], phi - alpha * xs[None, :])
    best = np.argmax(scan, axis=1)
    out = scan[np.arange(target_grid.size), best]
    lo_x = xs[np.maximum(best - 1, 0)]
    hi_x = xs[np.minimum(best + 1, xs.size - 1)]
    _, refined = golden_section(lambda t: joint(t, target_grid - alpha * t), lo_x, hi_x,
                                tol=1e-12, max_iter=80)
    out = np.maximum(out, refined)
    return _finish(target_grid, out, "linear combination")


def sum_of_squares_possibility(mus, sigma2: float) -> ChiSquared:
    """``sum_i x_i^2`` for independent ``Normal(mu_i, sigma2)`` variables."""
    sigma2 = float(sigma2)
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    mus = np.asarray(mus, dtype=float)
    return ChiSquared(float(np.sum(mus**2)), 2.0 * sigma2)


def variance_pushforward(v: ExtendedVariance, dzeta_at_mode: float) -> ExtendedVariance:
    """``V*`` of ``zeta(x)`` for a bijection ``zeta``: ``zeta'(mode)^2 V*(x)``.

    A vanishing derivative with a finite input variance violates the
    bijection-with-smooth-inverse requirement; it is reported as infinite
    with a warning.
    """
    d = float(dzeta_at_mode)
    if not math.isfinite(d):
        raise ValueError("derivative must be finite")
    if v.is_finite and d == 0.0:
        warnings.warn("zero derivative at the mode; variance reported as infinite", RuntimeWarning,
                      stacklevel=2)
        return ExtendedVariance.infinite()
    return v.scaled(d * d)


def profile(joint: JointPossibilityFn, axis: int = 0) -> PossibilityFn:
    """Alias of :func:`marginalize`: the profile likelihood over the nuisance variable."""
    return marginalize(joint, axis)


__all__ = [
    "JointPossibilityFn",
    "Transformed",
    "affine_pushforward",
    "independent_product",
    "linear_pushforward",
    "marginalize",
    "profile",
    "pushforward",
    "reciprocal_pushforward",
    "sum_of_squares_possibility",
    "variance_pushforward",
]
