"""Numerical kernels shared by the rest of the package.

Everything here works on bounded domains: a coarse grid scan picks the best
cell and a golden-section search refines inside the bracketing cells.  The
brute-force oracles at the bottom are deliberately naive and are meant for
tests and cross-checks only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
EPS = np.finfo(float).eps
MAX_TUPLES = 10**8


@dataclass(frozen=True)
class OptimizerConfig:
    grid_points: int = 401
    refine_iters: int = 100
    abscissa_tol: float = 1e-10
    domain: tuple[float, float] | None = None

    def __post_init__(self):
        if self.grid_points < 3:
            raise ValueError("grid_points must be at least 3")
        if self.refine_iters < 1 or not self.abscissa_tol > 0:
            raise ValueError("tolerances must be positive")
        if self.domain is not None:
            a, b = self.domain
            if not (np.isfinite(a) and np.isfinite(b)) or a > b:
                raise ValueError(f"domain must be a bounded interval, got {self.domain}")

    def with_domain(self, domain) -> "OptimizerConfig":
        return replace(self, domain=(float(domain[0]), float(domain[1])))


def _evaluate(objective, x):
    values = np.asarray(objective(x), dtype=float)
    if values.shape != np.shape(x):
        values = np.broadcast_to(values, np.shape(x)).astype(float)
    if np.isnan(values).any():
        raise ValueError("objective returned NaN")
    return values


def golden_section(objective, a, b, tol=1e-10, max_iter=100):
    """Maximise ``objective`` on ``[a, b]`` by golden-section search.

    ``a`` and ``b`` may be arrays, in which case every bracket is searched
    independently and ``objective`` must accept arrays of that shape.  Ties
    move the bracket to the left, so flat regions resolve towards the
    smallest abscissa.  Returns ``(x, value)`` at an evaluated point.
    """
    a = np.array(a, dtype=float, copy=True)
    b = np.array(b, dtype=float, copy=True)
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc = _evaluate(objective, c)
    fd = _evaluate(objective, d)
    for _ in range(max_iter):
        if np.all(b - a <= tol):
            break
        left = fc >= fd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        keep_x = np.where(left, c, d)
        keep_f = np.where(left, fc, fd)
        new_x = np.where(left, b - INV_PHI * (b - a), a + INV_PHI * (b - a))
        new_f = _evaluate(objective, new_x)
        c, fc = np.where(left, new_x, keep_x), np.where(left, new_f, keep_f)
        d, fd = np.where(left, keep_x, new_x), np.where(left, keep_f, new_f)
    take_c = fc >= fd
    x = np.where(take_c, c, d)
    value = np.where(take_c, fc, fd)
    if x.ndim == 0:
        return float(x), float(value)
    return x, value


def bisect(predicate, lo, hi, tol=1e-12, max_iter=200):
    """Vectorised bisection on a boolean predicate.

    Assumes ``predicate(lo)`` is False and ``predicate(hi)`` is True
    elementwise and returns the (approximate) transition point.
    """
    lo = np.array(lo, dtype=float, copy=True)
    hi = np.array(hi, dtype=float, copy=True)
    for _ in range(max_iter):
        if np.all(np.abs(hi - lo) <= tol):
            break
        mid = 0.5 * (lo + hi)
        inside = np.asarray(predicate(mid), dtype=bool)
        hi = np.where(inside, mid, hi)
        lo = np.where(inside, lo, mid)
    return float(hi) if hi.ndim == 0 else hi


def _parabolic_polish(objective, x, a, b, h):
    # one quadratic-interpolation step; golden section alone stalls once
    # the objective is flat to machine precision around the peak
    lo, hi = max(a, x - h), min(b, x + h)
    if not (lo < x < hi):
        return x, float(_evaluate(objective, np.array(x)))
    pts = np.array([lo, x, hi])
    f0, f1, f2 = _evaluate(objective, pts)
    denom = (x - lo) * (f1 - f2) - (x - hi) * (f1 - f0)
    if not np.isfinite(denom) or denom == 0.0:
        return x, float(f1)
    step = 0.5 * ((x - lo) ** 2 * (f1 - f2) - (x - hi) ** 2 * (f1 - f0)) / denom
    xp = x - step
    if not (a <= xp <= b) or not np.isfinite(xp):
        return x, float(f1)
    fp = float(_evaluate(objective, np.array(xp)))
    if fp >= f1:
        return float(xp), fp
    return x, float(f1)


def slope_polish(objective, x, value, step, domain):
    """Bisect on the sign of a symmetric difference around a refined peak.

    Comparing values alone cannot locate a smooth peak closer than about
    ``sqrt(eps)`` times its width; the sign of
    ``objective(t + h) - objective(t - h)`` stays informative much closer
    in.  ``step`` is the width of the bracket the peak was refined in.  The
    input point is returned unchanged when the slope does not change sign
    around it or the polished value is worse.
    """
    h = 1e-4 * step
    lo, hi = x - 1e-3 * step, x + 1e-3 * step
    if lo - h < domain[0] or hi + h > domain[1]:
        return x, value

    def slope(t):
        return np.asarray(objective(t + h)) - np.asarray(objective(t - h))

    if not (slope(lo) > 0 and slope(hi) < 0):
        return x, value
    t = float(bisect(lambda u: slope(u) < 0, lo, hi, tol=0.0, max_iter=64))
    v = float(_evaluate(objective, np.array(t)))
    if v >= value - 4 * EPS * max(1.0, abs(value)):
        return t, max(v, value)
    return x, value


def global_sup(objective: Callable, config: OptimizerConfig | None = None, domain=None):
    """Approximate ``(argmax, sup)`` of a vectorised objective on a bounded interval.

    A uniform scan with ``config.grid_points`` nodes selects the best node;
    golden-section search then refines within the two neighbouring cells.
    If the best node sits on a plateau (its right neighbour ties) the left
    edge of the plateau is located by bisection instead, so plateaus report
    their smallest abscissa.  The returned value is never below the best
    grid sample.
    """
    config = config or OptimizerConfig()
    if domain is not None:
        config = config.with_domain(domain)
    if config.domain is None:
        raise ValueError("global_sup needs a bounded domain")
    a, b = config.domain
    if a == b:
        return a, float(_evaluate(objective, np.array(a)))

    xs = np.linspace(a, b, config.grid_points)
    values = _evaluate(objective, xs)
    i = int(np.argmax(values))
    best = float(values[i])
    if best == -np.inf:
        return float(xs[0]), best

    tie = i + 1 < xs.size and values[i + 1] == best
    if tie and float(_evaluate(objective, np.array(0.5 * (xs[i] + xs[i + 1])))) == best:
        if i > 0:
            edge = bisect(
                lambda t: _evaluate(objective, t) >= best,
                xs[i - 1], xs[i], tol=config.abscissa_tol,
            )
            edge_value = float(_evaluate(objective, np.array(edge)))
            if edge_value >= best:
                return float(edge), edge_value
        return float(xs[i]), best

    lo = xs[max(i - 1, 0)]
    hi = xs[min(i + 2 if tie else i + 1, xs.size - 1)]
    x, value = golden_section(objective, lo, hi, config.abscissa_tol, config.refine_iters)
    x, value = _parabolic_polish(objective, x, lo, hi, 1e-2 * (xs[1] - xs[0]))
    x, value = slope_polish(objective, x, value, hi - lo, (a, b))
    if value > best:
        return x, value
    return float(xs[i]), best


def constrained_sup(objective2d: Callable, constraint: Callable, t_domain, config=None):
    """Maximise ``objective2d(x, y)`` along a parametrised curve ``t -> (x(t), y(t))``."""

    def along(t):
        x, y = constraint(t)
        return objective2d(x, y)

    return global_sup(along, config, domain=t_domain)


def central_second_difference(fn: Callable, x: float, scale: float = 1.0, step: float | None = None):
    """Second derivative of ``fn`` at ``x`` by a central difference.

    The default step ``eps**(1/4) * max(1, |x|) * scale`` balances
    truncation against rounding for a three-point stencil; pass ``step`` to
    override it outright.
    """
    if not np.isfinite(x):
        raise ValueError("x must be finite")
    h = step if step is not None else EPS ** 0.25 * max(1.0, abs(x)) * scale
    pts = np.array([x - h, x, x + h])
    f = np.asarray(fn(pts), dtype=float)
    if not np.all(np.isfinite(f)):
        raise ValueError(f"function not finite on [{x - h}, {x + h}]")
    return float((f[2] - 2.0 * f[1] + f[0]) / (h * h))


def central_first_difference(fn: Callable, x: float, scale: float = 1.0):
    h = EPS ** (1.0 / 3.0) * max(1.0, abs(x)) * scale
    f = np.asarray(fn(np.array([x - h, x + h])), dtype=float)
    return float((f[1] - f[0]) / (2.0 * h))


def maxplus_convolve(log_a: np.ndarray, log_b: np.ndarray) -> np.ndarray:
    """Max-plus convolution ``c[k] = max_j a[k - j] + b[j]`` of two lattice functions."""
    log_a = np.asarray(log_a, dtype=float)
    log_b = np.asarray(log_b, dtype=float)
    out = np.full(log_a.size + log_b.size - 1, -np.inf)
    # loop over the shorter operand, vectorise over the longer
    if log_b.size > log_a.size:
        log_a, log_b = log_b, log_a
    for j, bj in enumerate(log_b):
        if bj == -np.inf:
            continue
        seg = out[j:j + log_a.size]
        np.maximum(seg, log_a + bj, out=seg)
    return out


def _target_index(coords, target_grid):
    """Nearest target node for each coordinate, -1 when outside the grid's cells."""
    target_grid = np.asarray(target_grid, dtype=float)
    idx = np.searchsorted(target_grid, coords)
    idx = np.clip(idx, 1, target_grid.size - 1)
    left = target_grid[idx - 1]
    right = target_grid[idx]
    nearest = np.where(coords - left <= right - coords, idx - 1, idx)
    half_lo = 0.5 * (target_grid[1] - target_grid[0])
    half_hi = 0.5 * (target_grid[-1] - target_grid[-2])
    outside = (coords < target_grid[0] - half_lo) | (coords > target_grid[-1] + half_hi)
    return np.where(outside, -1, nearest)


def brute_force_supconv(
    factors: Sequence,
    combiner="sum",
    target_grid=None,
    factor_grids: Sequence | None = None,
    grid_points: int = 201,
):
    """Exhaustive sup-convolution oracle.

    Enumerates every tuple of grid points of the first ``k - 1`` factors
    and, for each node ``z`` of ``target_grid``, solves the linear
    constraint for the last coordinate and evaluates the last factor there.
    The result is the maximum product per node, normalised by its grid
    maximum, as a :class:`Tabulated`.  When that exceeds the tuple budget,
    all ``k`` factors are gridded and each tuple is assigned to the nearest
    target node instead.  ``combiner`` is ``"sum"``, ``"mean"`` or explicit
    linear coefficients.
    """
    from .core import Tabulated

    factors = list(factors)
    k = len(factors)
    if not 1 <= k <= 4:
        raise ValueError("brute_force_supconv handles 1 to 4 factors")
    if factor_grids is None:
        factor_grids = [np.linspace(*f.working_domain(), grid_points) for f in factors]
    factor_grids = [np.asarray(g, dtype=float) for g in factor_grids]
    if len(factor_grids) != k:
        raise ValueError("one grid per factor is required")
    if any(g.size > 201 for g in factor_grids):
        raise ValueError("factor grids are limited to 201 points")

    if combiner == "sum":
        coeffs = [1.0] * k
    elif combiner == "mean":
        coeffs = [1.0 / k] * k
    else:
        coeffs = [float(c) for c in combiner]
        if len(coeffs) != k:
            raise ValueError("one coefficient per factor is required")
    if coeffs[-1] == 0.0:
        raise ValueError("the last coefficient must be nonzero")

    if target_grid is None:
        ends = [sorted((c * g[0], c * g[-1])) for c, g in zip(coeffs, factor_grids)]
        target_grid = np.linspace(sum(e[0] for e in ends), sum(e[1] for e in ends), 401)
    target_grid = np.asarray(target_grid, dtype=float)

    coord = np.zeros(1)
    value = np.ones(1)
    for f, g, c in zip(factors[:-1], factor_grids[:-1], coeffs[:-1]):
        coord = (coord[:, None] + c * g[None, :]).ravel()
        value = (value[:, None] * np.asarray(f(g), dtype=float)[None, :]).ravel()

    if coord.size * target_grid.size <= MAX_TUPLES:
        keep = value > 0
        coord, value = coord[keep], value[keep]
        out = np.zeros(target_grid.size)
        last, c_last = factors[-1], coeffs[-1]
        chunk = max(1, int(4e6 // max(coord.size, 1)))
        for s in range(0, target_grid.size, chunk):
            z = target_grid[s:s + chunk]
            x_last = (z[:, None] - coord[None, :]) / c_last
            vals = value[None, :] * np.asarray(last(x_last), dtype=float)
            if vals.size:
                out[s:s + chunk] = vals.max(axis=1)
    else:
        total = coord.size * factor_grids[-1].size
        if total > MAX_TUPLES:
            raise ValueError(f"combinatorial budget exceeded ({total} tuples)")
        g = factor_grids[-1]
        coord = (coord[:, None] + coeffs[-1] * g[None, :]).ravel()
        value = (value[:, None] * np.asarray(factors[-1](g), dtype=float)[None, :]).ravel()
        idx = _target_index(coord, target_grid)
        keep = idx >= 0
        out = np.zeros(target_grid.size)
        np.maximum.at(out, idx[keep], value[keep])
    peak = out.max()
    if peak <= 0.0:
        raise ValueError("no tuple maps into the target grid")
    return Tabulated(target_grid, out / peak)
