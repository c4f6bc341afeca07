"""Possibilistic Bayesian inference.

The posterior is ``f(theta | y) = L(y | theta) f(theta) / sup(...)`` for
either a possibilistic likelihood (``sup_y L = 1``) or a probability
density.  Everything downstream (MAP, credible intervals, tests) works on
the resulting possibility function.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .core import (
    ExtendedVariance,
    Gamma,
    Indicator,
    LossBased,
    ModeSet,
    Normal,
    PossibilityFn,
    StudentT,
    Tabulated,
    expected_value,
    make_from_loss,
)
from .numerics import EPS, OptimizerConfig, bisect, golden_section, global_sup
from .transform import affine_pushforward, variance_pushforward

POSSIBILISTIC = "possibilistic"
PROBABILISTIC = "probabilistic"
SPAN_SCALES = 64.0


def _fd(fn, x, order, step=None):
    h = step if step is not None else EPS ** (1.0 / 3.0) * max(1.0, abs(x))
    if order == 1:
        return (fn(x + h) - fn(x - h)) / (2 * h)
    if order == 2:
        return (fn(x + h) - 2 * fn(x) + fn(x - h)) / h**2
    # third derivative needs a wider step to keep rounding in check
    h = step if step is not None else EPS ** 0.2 * max(1.0, abs(x))
    return (fn(x + 2 * h) - 2 * fn(x + h) + 2 * fn(x - h) - fn(x - 2 * h)) / (2 * h**3)


@dataclass(frozen=True)
class LikelihoodModel:
    """Observation model ``theta -> L(y | theta)``.

    ``logpdf(y, theta)`` must broadcast over arrays.  Analytic derivatives
    of ``log L`` are optional; missing ones fall back to central
    differences.  ``conditional(theta)`` returns the possibility function
    of ``y`` given ``theta`` for possibilistic models.
    """

    logpdf: Callable
    kind: str = POSSIBILISTIC
    d_theta: Callable | None = None
    d2_theta: Callable | None = None
    d3_theta: Callable | None = None
    d_y_d_theta: Callable | None = None
    d2_y: Callable | None = None
    conditional: Callable | None = None
    theta_domain: tuple[float, float] = (-math.inf, math.inf)
    theta_hint: Callable | None = None
    name: str = "custom"
    location_sigma2: float | None = None

    def __post_init__(self):
        if self.kind not in (POSSIBILISTIC, PROBABILISTIC):
            raise ValueError(f"unknown likelihood kind {self.kind!r}")

    # summed quantities over a batch ------------------------------------
    def loglik(self, ys, theta):
        ys = np.asarray(ys, dtype=float)
        theta = np.asarray(theta, dtype=float)
        vals = self.logpdf(ys.reshape((-1,) + (1,) * theta.ndim), theta[None, ...])
        return np.sum(vals, axis=0)

    def _deriv(self, analytic, order, y, theta):
        if analytic is not None:
            return float(analytic(y, theta))
        return float(_fd(lambda t: float(self.logpdf(y, t)), float(theta), order))

    def score(self, ys, theta):
        return sum(self._deriv(self.d_theta, 1, y, theta) for y in np.atleast_1d(ys))

    def hessian(self, ys, theta):
        return sum(self._deriv(self.d2_theta, 2, y, theta) for y in np.atleast_1d(ys))

    def third(self, ys, theta):
        return sum(self._deriv(self.d3_theta, 3, y, theta) for y in np.atleast_1d(ys))

    def cross(self, y, theta):
        """``d/dy d/dtheta log L`` at a single point."""
        if self.d_y_d_theta is not None:
            return float(self.d_y_d_theta(y, theta))
        return float(_fd(lambda u: self._deriv(self.d_theta, 1, u, theta), float(y), 1,
                         step=EPS ** 0.25 * max(1.0, abs(y))))

    def conditional_mode(self, theta) -> float:
        if self.conditional is None:
            raise ValueError("model has no conditional possibility function")
        return self.conditional(theta).mode().value

    def conditional_variance(self, theta) -> ExtendedVariance:
        y0 = self.conditional_mode(theta)
        if self.d2_y is not None:
            return ExtendedVariance.from_curvature(float(self.d2_y(y0, theta)))
        return self.conditional(theta).variance()

    def tempered(self, beta: float) -> "LikelihoodModel":
        return tempered(self, beta)


# -- model factories ---------------------------------------------------------


def normal_location(sigma2: float = 1.0, probabilistic: bool = False) -> LikelihoodModel:
    """``y | theta`` normal with known variance around ``theta``."""
    sigma2 = float(sigma2)
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    const = -0.5 * math.log(2 * math.pi * sigma2) if probabilistic else 0.0
    return LikelihoodModel(
        logpdf=lambda y, t: const - (y - t) ** 2 / (2 * sigma2),
        kind=PROBABILISTIC if probabilistic else POSSIBILISTIC,
        d_theta=lambda y, t: (y - t) / sigma2,
        d2_theta=lambda y, t: -1.0 / sigma2 + 0.0 * (y - t),
        d3_theta=lambda y, t: 0.0 * (y - t),
        d_y_d_theta=lambda y, t: 1.0 / sigma2 + 0.0 * (y - t),
        d2_y=lambda y, t: -1.0 / sigma2 + 0.0 * (y - t),
        conditional=lambda t: Normal(t, sigma2),
        theta_hint=lambda ys: (float(np.mean(ys)), math.sqrt(sigma2 / len(ys))),
        name="normal-loc",
        location_sigma2=sigma2,
    )


def normal_cubic(sigma2: float = 1.0) -> LikelihoodModel:
    """``y | theta`` normal around ``theta**3``; Fisher information vanishes at 0."""
    sigma2 = float(sigma2)
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    return LikelihoodModel(
        logpdf=lambda y, t: -((y - t**3) ** 2) / (2 * sigma2),
        d_theta=lambda y, t: 3 * t**2 * (y - t**3) / sigma2,
        d2_theta=lambda y, t: (6 * t * (y - t**3) - 9 * t**4) / sigma2,
        d_y_d_theta=lambda y, t: 3 * t**2 / sigma2,
        d2_y=lambda y, t: -1.0 / sigma2 + 0.0 * (y - t),
        conditional=lambda t: Normal(t**3, sigma2),
        theta_hint=lambda ys: (float(np.cbrt(np.mean(ys))), 1.0),
        name="normal-cubic",
    )


def loss_model(loss: Callable, y_mode: Callable | None = None, d_theta=None, d2_theta=None,
               d_y_d_theta=None, d2_y=None, y_domain=(-50.0, 50.0), theta_domain=(-math.inf, math.inf),
               name="loss") -> LikelihoodModel:
    """Exponentiated-loss likelihood ``exp(-L(theta, y))`` with ``min_y L = 0``.

    Derivatives are of the loss ``L`` (not of ``log L``); they are negated
    internally.
    """
    def neg(fn):
        return None if fn is None else (lambda y, t: -fn(t, y))

    def conditional(t):
        if y_mode is not None:
            m = float(y_mode(t))
            return make_from_loss(lambda y: loss(t, y), (m - 50.0, m + 50.0))
        return make_from_loss(lambda y: loss(t, y), y_domain)

    return LikelihoodModel(
        logpdf=lambda y, t: -loss(t, y),
        d_theta=neg(d_theta),
        d2_theta=neg(d2_theta),
        d_y_d_theta=neg(d_y_d_theta),
        d2_y=neg(d2_y),
        conditional=conditional,
        theta_domain=theta_domain,
        name=name,
    )


def indicator_model(y_set) -> LikelihoodModel:
    """``f(y | theta) = 1`` on ``y_set`` whatever ``theta``: the data carry no information."""
    ind = Indicator(y_set)
    return LikelihoodModel(
        logpdf=lambda y, t: np.asarray(ind.log(y)) + 0.0 * np.asarray(t),
        d_theta=lambda y, t: 0.0,
        d2_theta=lambda y, t: 0.0,
        conditional=lambda t: ind,
        name="indicator",
    )


def tempered(model: LikelihoodModel, beta: float) -> LikelihoodModel:
    """Likelihood raised to the power ``beta``; log-derivatives scale by ``beta``."""
    beta = float(beta)
    if not beta > 0:
        raise ValueError("beta must be positive")

    def scale(fn):
        return None if fn is None else (lambda y, t: beta * fn(y, t))

    cond = model.conditional
    return LikelihoodModel(
        logpdf=lambda y, t: beta * model.logpdf(y, t),
        kind=model.kind,
        d_theta=scale(model.d_theta),
        d2_theta=scale(model.d2_theta),
        d3_theta=scale(model.d3_theta),
        d_y_d_theta=scale(model.d_y_d_theta),
        d2_y=scale(model.d2_y),
        conditional=None if cond is None else (lambda t: cond(t).tempered(beta)),
        theta_domain=model.theta_domain,
        theta_hint=model.theta_hint,
        name=f"{model.name}^{beta:g}",
    )


# -- posterior ---------------------------------------------------------------


def _intersect(a, b):
    lo, hi = max(a[0], b[0]), min(a[1], b[1])
    if lo > hi:
        raise ValueError("prior support and parameter domain do not overlap")
    return lo, hi


def _search_domain(prior: PossibilityFn, model: LikelihoodModel, ys) -> tuple[float, float]:
    """Bounded parameter range for the sup over ``theta``.

    Informative priors bound it through their working domain; flat priors
    defer to the likelihood via ``model.theta_hint`` (or a spread of the data).
    """
    prior_modes = prior.mode()
    a, b = prior_modes.hull
    flat = not (math.isfinite(a) and math.isfinite(b)) or (b - a) > 0 and prior.variance().tag == "infinite"
    if not flat:
        return _intersect(prior.working_domain(), model.theta_domain)
    if model.theta_hint is not None:
        center, scale = model.theta_hint(ys)
    else:
        center = float(np.median(ys))
        scale = max(float(np.std(ys)), 1.0)
    span = (center - SPAN_SCALES * scale, center + SPAN_SCALES * scale)
    dom = _intersect(span, model.theta_domain)
    lo, hi = prior.domain
    if math.isfinite(lo) or math.isfinite(hi):
        dom = _intersect(dom, (lo, hi))
    return dom


def _shrink(loss, domain, offset, grid_points=4001):
    """Tighten ``domain`` to the region where ``loss - offset <= 32``, with a margin."""
    lo, hi = domain
    xs = np.linspace(lo, hi, grid_points)
    keep = np.flatnonzero(np.asarray(loss(xs)) - offset <= 32.0)
    if keep.size == 0:
        return domain
    a = xs[max(keep[0] - 1, 0)]
    b = xs[min(keep[-1] + 1, xs.size - 1)]
    if b - a < 16 * (xs[1] - xs[0]) and grid_points < 10**6:
        # the peak is narrow compared to the scan; zoom in once more
        return _shrink(loss, (a, b), offset, grid_points)
    return a, b


def _normal_location_conjugate(prior, sigma2, ys):
    """Closed-form normal-location posterior under a flat or Normal prior, else ``None``."""
    if isinstance(prior, Indicator) and prior.intervals == ((-math.inf, math.inf),):
        tau0, mu0 = 0.0, 0.0
    elif isinstance(prior, Normal) and math.isfinite(prior.tau):
        tau0, mu0 = prior.tau, prior.mu
    else:
        return None
    tau = tau0 + ys.size / sigma2
    mu = float(np.mean(ys)) if tau0 == 0 else (tau0 * mu0 + float(np.sum(ys)) / sigma2) / tau
    return Normal(mu, tau=tau)


def posterior(prior: PossibilityFn, model: LikelihoodModel, observations, domain=None,
              grid_points: int = 4001) -> PossibilityFn:
    """Possibilistic Bayes rule on a bounded parameter range.

    Returns a :class:`LossBased` function with loss
    ``-sum_i log L(y_i | theta) - log f(theta)`` shifted by its minimum.
    The normal-location model with a flat or Normal prior and no explicit
    ``domain`` returns the conjugate :class:`Normal` instead.
    """
    ys = np.atleast_1d(np.asarray(observations, dtype=float))
    if ys.size == 0:
        raise ValueError("posterior needs at least one observation")
    if np.isnan(ys).any():
        raise ValueError("observations contain NaN")

    if isinstance(prior, Indicator) and all(a == b for a, b in prior.intervals):
        pts = np.array([a for a, _ in prior.intervals])
        vals = np.asarray(model.loglik(ys, pts))
        if not np.isfinite(vals).any():
            raise ValueError("prior and data are in total conflict")
        keep = pts[vals == vals.max()]
        return Indicator(list(keep))

    if domain is None and model.location_sigma2 is not None:
        conj = _normal_location_conjugate(prior, model.location_sigma2, ys)
        if conj is not None:
            return conj

    dom = domain if domain is not None else _search_domain(prior, model, ys)

    def loss(theta):
        theta = np.asarray(theta, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            val = -np.asarray(model.loglik(ys, theta)) - np.asarray(prior.log(theta))
        return np.where(np.isnan(val), np.inf, val)

    pf = make_from_loss(loss, dom, grid_points)
    if isinstance(pf, Indicator):
        return pf
    if domain is None:
        tight = _shrink(loss, pf.domain, pf.offset, grid_points)
        if tight[0] < tight[1]:
            tol = 1e-13 * max(1.0, abs(tight[0]), abs(tight[1]))
            _, top = global_sup(lambda t: -loss(t), OptimizerConfig(grid_points=grid_points,
                                                                    abscissa_tol=tol), domain=tight)
            pf = LossBased(loss, tight, min(pf.offset, -top), grid_points)
    if not math.isfinite(pf.offset):
        raise ValueError("prior and data are in total conflict")
    return pf


def marginal_likelihood(prior: PossibilityFn, model: LikelihoodModel, observations,
                        domain=None) -> float:
    """``sup_theta prod_i L(y_i | theta) f(theta)``, a coherence score in ``[0, 1]``."""
    ys = np.atleast_1d(np.asarray(observations, dtype=float))
    if isinstance(prior, Indicator) and all(a == b for a, b in prior.intervals):
        pts = np.array([a for a, _ in prior.intervals])
        return float(np.exp(np.max(model.loglik(ys, pts))))
    dom = domain if domain is not None else _search_domain(prior, model, ys)

    def objective(theta):
        with np.errstate(divide="ignore", invalid="ignore"):
            val = np.asarray(model.loglik(ys, theta)) + np.asarray(prior.log(theta))
        return np.where(np.isnan(val), -np.inf, val)

    tol = 1e-13 * max(1.0, abs(dom[0]), abs(dom[1]))
    _, top = global_sup(objective, OptimizerConfig(grid_points=4001, abscissa_tol=tol), domain=dom)
    return float(min(1.0, math.exp(top))) if top > -np.inf else 0.0


def map_estimate(post: PossibilityFn) -> ModeSet:
    """MAP of a posterior; the MLE when the prior is uninformative."""
    return expected_value(post)


def mle(model: LikelihoodModel, observations, domain=None) -> float:
    ys = np.atleast_1d(np.asarray(observations, dtype=float))
    flat = Indicator((-math.inf, math.inf))
    dom = domain if domain is not None else _search_domain(flat, model, ys)
    tol = 1e-13 * max(1.0, abs(dom[0]), abs(dom[1]))
    cfg = OptimizerConfig(grid_points=4001, abscissa_tol=tol)
    theta, _ = global_sup(lambda t: model.loglik(ys, t), cfg, domain=dom)
    return float(theta)


@dataclass(frozen=True)
class CredibleInterval:
    lower: float
    upper: float
    alpha: float
    lower_at_edge: bool = False
    upper_at_edge: bool = False

    def as_list(self):
        return [self.lower, self.upper]


def credible_interval(post: PossibilityFn, alpha: float) -> CredibleInterval:
    """Interval ``[a, b]`` around the mode with ``f(a) = f(b) = alpha``.

    When ``f`` stays above ``alpha`` up to an edge of the working domain the
    edge is returned and flagged.
    """
    alpha = float(alpha)
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    modes = post.mode()
    if not modes.is_interval:
        raise ValueError("credible intervals need a unimodal posterior")
    m_lo, m_hi = modes.hull
    lo, hi = post.working_domain()
    m_lo, m_hi = max(m_lo, lo), min(m_hi, hi)
    tol = 1e-12 * max(1.0, abs(lo), abs(hi))

    def above(t):
        return np.asarray(post(t)) >= alpha

    lower_edge = bool(above(np.array(lo)))
    upper_edge = bool(above(np.array(hi)))
    a = lo if lower_edge else float(bisect(lambda t: above(t), lo, m_lo, tol=tol))
    b = hi if upper_edge else float(bisect(lambda t: ~above(t), m_hi, hi, tol=tol))
    return CredibleInterval(a, b, alpha, lower_edge, upper_edge)


# -- information quantities ----------------------------------------------


def observed_information(model: LikelihoodModel, observations, theta_hat: float) -> float:
    """``-d^2/dtheta^2 sum_i log L(y_i | theta)`` at the MLE."""
    value = -model.hessian(observations, theta_hat)
    if not value > 0:
        raise ValueError(f"observed information {value} is not positive")
    return float(value)


def fisher_information(model: LikelihoodModel, theta: float) -> float:
    """``-d^2/dtheta^2 log L(y | theta)`` at ``y = E*(y | theta)``."""
    y0 = model.conditional_mode(theta)
    return float(-model.hessian([y0], theta)) + 0.0


def bvm_approximation(model: LikelihoodModel, observations, theta0: float,
                      theta_hat: float | None = None) -> Normal:
    """Normal approximation ``N(theta0 + score(theta0) / J, 1 / J)`` with ``J`` the observed information."""
    ys = np.atleast_1d(np.asarray(observations, dtype=float))
    if theta_hat is None:
        theta_hat = mle(model, ys)
    J = observed_information(model, ys, theta_hat)
    return Normal(theta0 + model.score(ys, theta0) / J, 1.0 / J)


def score_variance(model: LikelihoodModel, theta0: float) -> ExtendedVariance:
    """``V*`` of the score ``s(y) = d/dtheta log L(y | theta0)`` via the variance pushforward."""
    y0 = model.conditional_mode(theta0)
    return variance_pushforward(model.conditional_variance(theta0), model.cross(y0, theta0))


def map_asymptotic_law(model: LikelihoodModel, theta0: float) -> Normal:
    """Limit of ``sqrt(n) (MAP - theta0)``: ``N(0, V*(score) / I*^2)``."""
    info = fisher_information(model, theta0)
    if info == 0:
        raise ValueError("Fisher information vanishes at theta0")
    vs = score_variance(model, theta0)
    if not vs.is_finite:
        raise ValueError(f"score variance is {vs.tag}")
    return Normal(0.0, vs.value / info**2)


@dataclass(frozen=True)
class TestReport:
    lam: float
    threshold: float
    reject: bool
    beta_limit: float
    alpha: float
    map: float | None = None
    variance: float | str | None = None
    interval: tuple[float, float] | None = None
    marginal_likelihood: float | None = None

    __test__ = False  # keep pytest from collecting this class

    def to_dict(self):
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        if d["interval"] is not None:
            d["interval"] = list(d["interval"])
        return d


def test_threshold(alpha: float, beta_limit: float) -> float:
    """``c`` with ``sup_{psi >= -2 log c} exp(-psi / beta) = alpha``, i.e. ``alpha ** (beta / 2)``."""
    return float(alpha ** (beta_limit / 2.0))


test_threshold.__test__ = False


def credibility_test(prior: PossibilityFn, model: LikelihoodModel, observations, theta0: float,
                     alpha: float, post: PossibilityFn | None = None) -> TestReport:
    """Credibility test of ``H0: theta = theta0``: reject when ``f(theta0 | y) <= c``."""
    alpha = float(alpha)
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    lo, hi = model.theta_domain
    if not lo <= theta0 <= hi:
        raise ValueError("theta0 lies outside the parameter domain")
    ys = np.atleast_1d(np.asarray(observations, dtype=float))
    post = post if post is not None else posterior(prior, model, ys)
    if isinstance(post, LossBased):
        # the sup is never below an evaluated point, so theta0 can only raise it
        at = float(post.loss(np.asarray(theta0)))
        lam = float(math.exp(-(at - min(post.offset, at))))
    else:
        lam = float(post(theta0))
    info = fisher_information(model, theta0)
    if info <= 0:
        raise ValueError("Fisher information vanishes at theta0")
    beta = score_variance(model, theta0).value / info
    c = test_threshold(alpha, beta)
    modes = post.mode()
    var = None
    interval = None
    if modes.is_interval:
        try:
            v = post.variance()
            var = v.to_json()
        except ValueError:
            pass
        ci = credible_interval(post, alpha)
        interval = (ci.lower, ci.upper)
    return TestReport(
        lam=lam, threshold=c, reject=bool(lam <= c), beta_limit=float(beta), alpha=alpha,
        map=modes.value if modes.is_singleton else None, variance=var, interval=interval,
        marginal_likelihood=marginal_likelihood(prior, model, ys) if model.kind == POSSIBILISTIC else None,
    )


credibility_test.__test__ = False


# -- normal-gamma model --------------------------------------------------


@dataclass(frozen=True)
class NormalGammaState:
    """Hyperparameters of ``tau ~ Gamma(alpha, beta)``, ``mu | tau ~ N(mu, 1 / (k tau))``."""

    k: float = 0.0
    mu: float = 0.0
    alpha: float = 0.0
    beta: float = 0.0

    def __post_init__(self):
        for name in ("k", "alpha", "beta"):
            v = getattr(self, name)
            if not (v >= 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be finite and nonnegative, got {v}")
        if not math.isfinite(self.mu):
            raise ValueError("mu must be finite")

    def as_tuple(self):
        return self.k, self.mu, self.alpha, self.beta


def normal_gamma_update(state: NormalGammaState, observations) -> NormalGammaState:
    ys = np.atleast_1d(np.asarray(observations, dtype=float))
    n = ys.size
    if n == 0:
        raise ValueError("cannot update on an empty batch")
    ybar = float(np.mean(ys))
    vhat = float(np.mean((ys - ybar) ** 2))
    k, mu, alpha, beta = state.as_tuple()
    return NormalGammaState(
        k=k + n,
        mu=(k * mu + n * ybar) / (k + n),
        alpha=alpha + n / 2.0,
        beta=beta + n * vhat / 2.0 + n * k * (mu - ybar) ** 2 / (2.0 * (n + k)),
    )


def student_marginal(state: NormalGammaState, n: int = 0) -> StudentT:
    """Marginal of the mean: ``St(2 alpha, mu, beta / (alpha (k + n)))``.

    ``state`` is normally the updated state, whose ``k`` already counts the
    observations, so ``n`` defaults to 0.
    """
    kn = state.k + n
    if not (state.alpha > 0 and kn > 0 and state.beta > 0):
        raise ValueError(f"degenerate hyperparameters {state.as_tuple()} for the Student marginal")
    return StudentT(2.0 * state.alpha, state.mu, state.beta / (state.alpha * kn))


def gamma_marginal(state: NormalGammaState) -> Gamma:
    """Marginal of the precision ``tau``."""
    return Gamma(state.alpha, state.beta)


# -- ratio of two means --------------------------------------------------


def _peak_scale(pf: PossibilityFn) -> float:
    lo, hi = pf.working_domain()
    return (hi - lo) / 16.0


def _point_of(pf):
    if isinstance(pf, Indicator):
        m = pf.mode()
        if m.is_singleton:
            return m.value
    if isinstance(pf, Normal) and math.isinf(pf.tau):
        return pf.mu
    return None


def ratio_posterior(pf_mu: PossibilityFn, pf_mu_prime: PossibilityFn, r_grid,
                    scan_points: int = 96) -> Tabulated:
    """``f_r(r) = sup_{m'} f_mu(r m') f_mu'(m')`` on ``r_grid``.

    For each ``r`` the supremum is bracketed by the two factor modes
    ``mu / r`` and ``mu'``; the bracket is scanned (densely near both modes)
    and the best cell refined by golden-section search.  The ratio of the
    modes is always inserted into the grid, extending it when needed, so
    the result attains 1 without renormalisation.
    """
    r = np.unique(np.asarray(r_grid, dtype=float))
    if r.size == 0:
        raise ValueError("r_grid is empty")
    if np.isnan(r).any():
        raise ValueError("r_grid contains NaN")
    m1 = pf_mu.mode()
    m2 = pf_mu_prime.mode()
    if not (m1.is_singleton and m2.is_singleton):
        raise ValueError("ratio posterior needs singleton modes")
    mu, mup = m1.value, m2.value
    if mup != 0:
        # keep the mode as a node even outside the requested range so the
        # grid maximum is the true supremum and no rescaling is needed
        r = np.union1d(r, [mu / mup])
    if r.size < 3:
        pad = max(1.0, abs(r[0]))
        r = np.union1d(r, [r[0] - pad, r[-1] + pad])

    p1, p2 = _point_of(pf_mu), _point_of(pf_mu_prime)
    if p2 is not None:
        return Tabulated(r, pf_mu(r * p2), normalize=True)
    if p1 is not None:
        with np.errstate(divide="ignore", invalid="ignore"):
            vals = np.where(r != 0, np.asarray(pf_mu_prime(np.where(r != 0, p1 / np.where(r != 0, r, 1), 0.0))),
                            0.0)
        return Tabulated(r, vals, normalize=True)

    def logobj(rr, m):
        return np.asarray(pf_mu.log(rr * m)) + np.asarray(pf_mu_prime.log(m))

    nz = r != 0
    with np.errstate(divide="ignore"):
        a = np.where(nz, mu / np.where(nz, r, 1.0), mup)
    lo = np.minimum(a, mup)
    hi = np.maximum(a, mup)

    s1 = _peak_scale(pf_mu) / np.where(nz, np.abs(r), 1.0)
    s2 = _peak_scale(pf_mu_prime)
    u = np.linspace(0.0, 1.0, scan_points)
    w = np.linspace(-8.0, 8.0, scan_points // 2)
    cand = np.concatenate([
        lo[:, None] + (hi - lo)[:, None] * u[None, :],
        a[:, None] + s1[:, None] * w[None, :],
        mup + s2 * np.broadcast_to(w, (r.size, w.size)),
    ], axis=1)
    cand = np.clip(cand, lo[:, None], hi[:, None])
    cand.sort(axis=1)
    vals = logobj(r[:, None], cand)
    best = np.argmax(vals, axis=1)
    rows = np.arange(r.size)
    top = vals[rows, best]
    left = cand[rows, np.maximum(best - 1, 0)]
    right = cand[rows, np.minimum(best + 1, cand.shape[1] - 1)]
    _, refined = golden_section(lambda m: logobj(r, m), left, right, tol=1e-13, max_iter=80)
    logf = np.maximum(top, refined)
    # r = 0: the first factor is evaluated at 0 and the second attains 1
    logf = np.where(nz, logf, np.asarray(pf_mu.log(np.zeros_like(r))))
    return Tabulated(r, np.exp(logf), normalize=abs(np.exp(logf.max()) - 1.0) > 1e-6)


# -- probes --------------------------------------------------------------


def identifiability_probe(model: LikelihoodModel, theta_grid) -> bool:
    """True when ``E*(y | theta)`` is strictly monotone over ``theta_grid``."""
    modes = []
    for t in np.asarray(theta_grid, dtype=float):
        m = model.conditional(t).mode()
        if not m.is_singleton:
            return False
        modes.append(m.value)
    modes = np.array(modes)
    d = np.diff(modes)
    return bool(np.all(d > 0) or np.all(d < 0))


def bias(estimator: PossibilityFn, theta0: float) -> ModeSet:
    """``E*(theta_n - theta0)`` for an estimator described by ``estimator``."""
    return expected_value(affine_pushforward(estimator, 1.0, -theta0))
