"""Finite-n possibility functions of sample means and their distance to the limits.

Sample means of ``n`` independent copies of a variable described by ``f``
are described by ``f_{s_n}(x) = sup{prod f(x_i) : mean(x) = x}``.  For a
strictly log-concave ``f`` the supremum sits at equal allocation, so
``f_{s_n} = f ** n``; otherwise it is computed by max-plus convolution on a
lattice.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import (
    ExtendedVariance,
    Indicator,
    LossBased,
    Normal,
    PossibilityFn,
    Tabulated,
    make_from_loss,
    temper,
)
from .inference import LikelihoodModel, bvm_approximation, posterior
from .numerics import EPS, maxplus_convolve
from .transform import independent_product, linear_pushforward

LIMIT_KINDS = ("IndicatorOfHull", "Normal", "ChiSquared", "ExactMatch", "Constant")
LOG_FLOOR = -60.0


@dataclass(frozen=True)
class ConvergenceReport:
    n_schedule: tuple[int, ...]
    distances: tuple[float, ...]
    limit_kind: str

    def __post_init__(self):
        ns = tuple(int(n) for n in self.n_schedule)
        ds = tuple(float(d) for d in self.distances)
        if len(ns) != len(ds):
            raise ValueError("one distance per sample size is required")
        if any(b <= a for a, b in zip(ns, ns[1:])):
            raise ValueError("n_schedule must be strictly increasing")
        if any(not d >= 0 for d in ds):
            raise ValueError("distances must be nonnegative")
        if self.limit_kind not in LIMIT_KINDS:
            raise ValueError(f"unknown limit kind {self.limit_kind!r}")
        object.__setattr__(self, "n_schedule", ns)
        object.__setattr__(self, "distances", ds)

    def rows(self):
        return [(n, d, self.limit_kind) for n, d in zip(self.n_schedule, self.distances)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "distance", "limit_kind"])
        for n, d, k in self.rows():
            w.writerow([n, repr(d), k])
        return buf.getvalue()


def _check_schedule(n_schedule):
    ns = [int(n) for n in n_schedule]
    if not ns or ns[0] < 1:
        raise ValueError("sample sizes must be at least 1")
    return ns


def _grid(grid, pf):
    if grid is None:
        grid = np.linspace(*pf.working_domain(), 1201)
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("evaluation grid is empty")
    return grid


def is_log_concave(pf: PossibilityFn, grid=None, tol: float = 1e-10) -> bool:
    """Discrete check: every second difference of ``log f`` on the grid is below ``-tol``."""
    grid = _grid(grid, pf)
    g = np.asarray(pf.log(grid))
    finite = np.isfinite(g)
    if finite.sum() < 3:
        return False
    g = g[finite]
    x = grid[finite]
    # second divided differences on a possibly non-uniform grid
    d1 = np.diff(g) / np.diff(x)
    d2 = np.diff(d1)
    return bool(np.all(d2 < -tol))


def sample_mean_possibility(pf: PossibilityFn, n: int, grid_points: int = 601,
                            log_concave: bool | None = None, domain=None) -> PossibilityFn:
    """Possibility function of the mean of ``n`` independent copies of ``pf``.

    Strictly log-concave inputs and indicators of intervals use ``f ** n``;
    anything else is convolved in the max-plus semiring on a uniform lattice
    of ``grid_points`` nodes over ``domain`` (default: the working domain).
    """
    n = int(n)
    if n < 1:
        raise ValueError("n must be at least 1")
    if n == 1:
        return pf
    if isinstance(pf, Indicator) and pf.mode().is_interval:
        return pf
    dom = domain if domain is not None else pf.working_domain()
    if log_concave is None:
        log_concave = is_log_concave(pf, np.linspace(*dom, grid_points))
    if log_concave:
        return temper(pf, n)

    xs = np.linspace(*dom, grid_points)
    h = xs[1] - xs[0]
    base = np.asarray(pf.log(xs), dtype=float)
    base = np.where(base < LOG_FLOOR, -np.inf, base)
    acc = None
    power = base
    k = n
    while k:
        if k & 1:
            acc = power if acc is None else maxplus_convolve(acc, power)
        k >>= 1
        if k:
            power = maxplus_convolve(power, power)
    sums = n * xs[0] + h * np.arange(acc.size)
    means = sums / n
    vals = np.exp(acc - np.max(acc))
    return Tabulated(means, vals, normalize=True)


def lln_report(pf: PossibilityFn, n_schedule: Sequence[int], grid=None, collar: float = 0.5,
               grid_points: int = 601) -> ConvergenceReport:
    """Distance between ``f_{s_n}`` and the indicator of the convex hull of the modes.

    Points closer than ``collar`` (times the peak scale when ``V*`` is finite)
    to the hull boundary are left out: the limit is discontinuous there.
    """
    ns = _check_schedule(n_schedule)
    grid = _grid(grid, pf)
    a, b = pf.mode().hull
    try:
        v = pf.variance()
        scale = math.sqrt(v.value) if v.is_finite else 1.0
    except ValueError:
        scale = 1.0
    eps = collar * scale
    keep = ((grid >= a + eps) & (grid <= b - eps)) | (grid <= a - eps) | (grid >= b + eps)
    if a == b:
        keep = np.abs(grid - a) >= eps
    x = grid[keep]
    limit = ((x >= a) & (x <= b)).astype(float)
    dists = []
    for n in ns:
        fn = sample_mean_possibility(pf, n, grid_points=grid_points)
        dists.append(float(np.max(np.abs(np.asarray(fn(x)) - limit))) if x.size else 0.0)
    return ConvergenceReport(ns, dists, "IndicatorOfHull")


def clt_limit(pf: PossibilityFn) -> tuple[float, ExtendedVariance]:
    mode = pf.mode().value
    return mode, pf.variance()


def centered_scaled(pf: PossibilityFn, n: int):
    """``t -> f(mu + t / sqrt(n)) ** n``, the possibility function of ``sqrt(n) (s_n - mu)``."""
    mu = pf.mode().value
    root = math.sqrt(n)

    def fn(t):
        return np.exp(n * np.asarray(pf.log(mu + np.asarray(t, dtype=float) / root)))

    return fn


def clt_report(pf: PossibilityFn, n_schedule: Sequence[int], grid=None) -> ConvergenceReport:
    """Distance between ``f_{t_n}`` and ``N(0, V*)``, or the constant 1 when ``f''(mode) = 0``."""
    ns = _check_schedule(n_schedule)
    probe = np.linspace(*pf.working_domain(), 1201)
    if not is_log_concave(pf, probe):
        raise ValueError("the CLT reduction needs a strictly log-concave possibility function")
    grid = np.linspace(-3.0, 3.0, 601) if grid is None else np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("evaluation grid is empty")
    _, v = clt_limit(pf)
    if v.tag == "finite":
        limit = np.asarray(Normal(0.0, v.value)(grid))
        kind = "Normal"
    elif v.tag == "infinite":
        limit = np.ones_like(grid)
        kind = "Constant"
    else:
        raise ValueError("a kink at the mode has no normal limit")
    dists = [float(np.max(np.abs(centered_scaled(pf, n)(grid) - limit))) for n in ns]
    return ConvergenceReport(ns, dists, kind)


def bvm_report(model: LikelihoodModel, prior: PossibilityFn, data_stream, theta0: float,
               n_schedule: Sequence[int], eval_points: int = 2001) -> ConvergenceReport:
    """Sup-norm gap between the grid posterior and its Bernstein-von Mises approximation."""
    ns = _check_schedule(n_schedule)
    data = np.asarray(data_stream, dtype=float)
    if data.size < ns[-1]:
        raise ValueError("data stream is shorter than the largest sample size")
    dists = []
    for n in ns:
        ys = data[:n]
        post = posterior(prior, model, ys)
        approx = bvm_approximation(model, ys, theta0, theta_hat=None)
        lo, hi = post.working_domain()
        alo, ahi = approx.working_domain()
        grid = np.linspace(min(lo, alo), max(hi, ahi), eval_points)
        grid = np.union1d(grid, [post.mode().value, approx.mu])
        dists.append(float(np.max(np.abs(np.asarray(post(grid)) - np.asarray(approx(grid))))))
    return ConvergenceReport(ns, dists, "Normal")


def opm_distance(pf_a, pf_b, grid=None) -> float:
    """``max |f_a - f_b|`` over a shared grid."""
    if grid is None:
        if isinstance(pf_a, Tabulated) and isinstance(pf_b, Tabulated) \
                and np.array_equal(pf_a.grid, pf_b.grid):
            return float(np.max(np.abs(pf_a.values - pf_b.values)))
        raise ValueError("a shared evaluation grid is required")
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("evaluation grid is empty")
    return float(np.max(np.abs(np.asarray(pf_a(grid)) - np.asarray(pf_b(grid)))))


def credibility_distance(joint, delta: float) -> float:
    """``P(|x_n - x| > delta)``: the sup of a joint possibility function off the diagonal band."""
    X, Y = np.meshgrid(joint.x_grid, joint.y_grid, indexing="ij")
    scale = max(np.max(np.abs(joint.x_grid)), np.max(np.abs(joint.y_grid)), 1.0)
    # nodes exactly delta apart can differ from delta by rounding
    off = np.abs(X - Y) > delta + 8 * EPS * scale
    return float(joint.values[off].max()) if off.any() else 0.0


def slutsky_check(pf: PossibilityFn, alpha: float, n_schedule=(4, 64), grid=None) -> ConvergenceReport:
    """Law of ``x_n + z_n`` against ``N(alpha, V*)``.

    ``x_n`` is the centred, scaled sample mean of ``pf`` and ``z_n`` is
    described by ``N(alpha, 1/n)``, which converges in credibility to the
    constant ``alpha``.
    """
    ns = _check_schedule(n_schedule)
    mode, v = clt_limit(pf)
    if not v.is_finite:
        raise ValueError("the spot check needs a finite limiting variance")
    target = Normal(alpha, v.value)
    grid = np.linspace(alpha - 3.0, alpha + 3.0, 301) if grid is None else np.asarray(grid, dtype=float)
    dists = []
    for n in ns:
        fx = centered_scaled(pf, n)
        span = 8.0 * math.sqrt(v.value)
        xs = np.linspace(-span, span, 401)
        xn = Tabulated(xs, fx(xs), normalize=True)
        zn = Normal(alpha, 1.0 / n)
        law = linear_pushforward(independent_product(xn, zn), 1.0)
        dists.append(opm_distance(law, target, grid))
    return ConvergenceReport(ns, dists, "Normal")


def sample_mean_possibility_2d(fn, x_grid, y_grid, n: int):
    """Sample mean of ``n <= 3`` copies of a 2-d variable by max-plus convolution.

    ``fn(X, Y)`` is evaluated on the uniform tensor grid; the result is
    returned as ``(mean_x_grid, mean_y_grid, values)``.
    """
    n = int(n)
    if not 1 <= n <= 3:
        raise ValueError("the 2-d sample mean is limited to n <= 3")
    xs = np.asarray(x_grid, dtype=float)
    ys = np.asarray(y_grid, dtype=float)
    if xs.size * ys.size > 201 * 201:
        raise ValueError("2-d grids are limited to 201 x 201 nodes")
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    with np.errstate(divide="ignore"):
        base = np.log(np.asarray(fn(X, Y), dtype=float))
    base = np.where(base < LOG_FLOOR, -np.inf, base)
    acc = base
    for _ in range(n - 1):
        out = np.full((acc.shape[0] + base.shape[0] - 1, acc.shape[1] + base.shape[1] - 1), -np.inf)
        for i, j in zip(*np.nonzero(np.isfinite(base))):
            seg = out[i:i + acc.shape[0], j:j + acc.shape[1]]
            np.maximum(seg, acc + base[i, j], out=seg)
        acc = out
    hx, hy = xs[1] - xs[0], ys[1] - ys[0]
    mx = (n * xs[0] + hx * np.arange(acc.shape[0])) / n
    my = (n * ys[0] + hy * np.arange(acc.shape[1])) / n
    return mx, my, np.exp(acc - acc.max())


# -- reference families used by the reports and the CLI --------------------


def quartic_family(domain=(-10.0, 10.0)) -> PossibilityFn:
    """``exp(-(x^2 + x^4))``: strictly log-concave, ``V* = 1/2``."""
    return make_from_loss(lambda x: x**2 + x**4, domain)


def flat_quartic_family(domain=(-10.0, 10.0)) -> PossibilityFn:
    """``exp(-x^4)``: zero curvature at the mode, ``V* = inf``."""
    return make_from_loss(lambda x: x**4, domain)


def bimodal_family(domain=(-3.0, 3.0)) -> PossibilityFn:
    """``exp(-(x^2 - 1)^2)`` with modes at -1 and 1."""
    return LossBased(lambda x: (x**2 - 1.0) ** 2, domain, 0.0)


FAMILIES = {
    "normal": lambda: Normal(0.0, 1.0),
    "quartic": quartic_family,
    "flat4": flat_quartic_family,
    "bimodal": bimodal_family,
}
