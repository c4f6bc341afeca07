"""Replication harness for the ratio-of-two-means experiment.

Each replication draws ``n`` pairs ``(y, y')``, forms the posterior
possibility functions of the two means and records the possibility
function of their ratio on a fixed grid.  Curves are then averaged across
replications.

Random numbers come from numpy's Philox-4x64 counter-based generator, one
independent stream per ``(seed, n, replication)``, turned into normal
draws by the Box-Muller transform written out below.  Results therefore
do not depend on the number of worker threads.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import Indicator, Normal, PossibilityFn
from .inference import NormalGammaState, normal_gamma_update, ratio_posterior, student_marginal

MODELS = ("students", "normal-known-variance")


@dataclass(frozen=True)
class StreamSpec:
    loc: float
    scale: float
    kind: str = "normal"

    def __post_init__(self):
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise ValueError(f"generator scale must be positive, got {self.scale}")
        if self.kind != "normal":
            raise ValueError(f"unsupported generator kind {self.kind!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    n_obs: tuple[int, ...] = (10, 100)
    replications: int = 1000
    y: StreamSpec = StreamSpec(1.0, 1.0)
    y_prime: StreamSpec = StreamSpec(0.01, 0.1)
    prior: NormalGammaState = NormalGammaState()
    prior_prime: NormalGammaState = NormalGammaState()
    model: str = "students"
    r_lo: float = -500.0
    r_hi: float = 500.0
    r_points: int = 2001
    sentinels: tuple[float, ...] = (-1e4, 1e4)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "n_obs", tuple(int(n) for n in np.atleast_1d(self.n_obs)))
        object.__setattr__(self, "sentinels", tuple(float(s) for s in self.sentinels))
        if not self.n_obs or min(self.n_obs) < 1:
            raise ValueError("n_obs entries must be at least 1")
        if int(self.replications) < 1:
            raise ValueError("replications must be at least 1")
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}")
        if not (self.r_lo < self.r_hi and self.r_points >= 2):
            raise ValueError("r_grid must be a non-degenerate interval with at least 2 points")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    @property
    def r_grid(self) -> np.ndarray:
        return np.union1d(np.linspace(self.r_lo, self.r_hi, self.r_points), self.sentinels)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        for key in ("y", "y_prime"):
            if key in d and isinstance(d[key], dict):
                d[key] = StreamSpec(**d[key])
        for key in ("prior", "prior_prime"):
            if key in d and isinstance(d[key], dict):
                d[key] = NormalGammaState(**d[key])
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["n_obs"] = list(self.n_obs)
        d["sentinels"] = list(self.sentinels)
        return d


@dataclass
class ReplicationSummary:
    n: int
    model: str
    r_grid: np.ndarray
    mean_f: np.ndarray
    std_f: np.ndarray
    maps: np.ndarray
    tail_reference: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def map_mean(self) -> float:
        return float(np.mean(self.maps))

    @property
    def map_std(self) -> float:
        return float(np.std(self.maps))

    def value_at(self, r: float) -> float:
        i = int(np.flatnonzero(self.r_grid == r)[0])
        return float(self.mean_f[i])

    def curve_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["r", "mean_f", "std_f"])
        for r, m, s in zip(self.r_grid, self.mean_f, self.std_f):
            w.writerow([f"{r:.17g}", f"{m:.17g}", f"{s:.17g}"])
        return buf.getvalue()

    def maps_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["replication", "map"])
        for i, m in enumerate(self.maps):
            w.writerow([i, f"{m:.17g}"])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "model": self.model,
            "replications": int(self.maps.size),
            "map_mean": self.map_mean,
            "map_std": self.map_std,
            "tail_reference_mean": float(np.mean(self.tail_reference)) if self.tail_reference.size else None,
        }


# -- random numbers ------------------------------------------------------


def replication_stream(seed: int, n: int, rep: int) -> np.random.Generator:
    """Independent Philox stream keyed by ``(seed, n, rep)``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(n), int(rep)))
    return np.random.Generator(np.random.Philox(ss))


def box_muller(rng: np.random.Generator, size: int) -> np.ndarray:
    """Standard normal draws from pairs of uniforms."""
    m = (size + 1) // 2
    u1 = 1.0 - rng.random(m)  # in (0, 1], keeps the log finite
    u2 = rng.random(m)
    radius = np.sqrt(-2.0 * np.log(u1))
    z = np.empty(2 * m)
    z[0::2] = radius * np.cos(2.0 * np.pi * u2)
    z[1::2] = radius * np.sin(2.0 * np.pi * u2)
    return z[:size]


def draw_pairs(config: ExperimentConfig, n: int, rep: int):
    z = box_muller(replication_stream(config.seed, n, rep), 2 * n)
    y = config.y.loc + config.y.scale * z[:n]
    yp = config.y_prime.loc + config.y_prime.scale * z[n:]
    return y, yp


# -- one replication -----------------------------------------------------


def mean_posterior(ys, prior: NormalGammaState, model: str, known_variance: float) -> PossibilityFn:
    """Possibility function of the mean of one stream."""
    ys = np.asarray(ys, dtype=float)
    n = ys.size
    if model == "students":
        state = normal_gamma_update(prior, ys)
        if state.beta == 0:
            # no spread in the data and none in the prior: the marginal collapses to a point
            return Indicator(state.mu)
        return student_marginal(state)
    k = prior.k
    return Normal((k * prior.mu + n * float(np.mean(ys))) / (k + n), known_variance / (k + n))


def run_replication(config: ExperimentConfig, y, yp, r_grid):
    f_mu = mean_posterior(y, config.prior, config.model, config.y.scale**2)
    f_mup = mean_posterior(yp, config.prior_prime, config.model, config.y_prime.scale**2)
    ratio = ratio_posterior(f_mu, f_mup, r_grid)
    m, mp = f_mu.mode().value, f_mup.mode().value
    est = m / mp if mp != 0 else math.copysign(math.inf, m)
    return np.asarray(ratio(r_grid)), est, float(f_mup(0.0))


def _workers() -> int:
    raw = os.environ.get("POSSIC_THREADS", "0").strip() or "0"
    try:
        k = int(raw)
    except ValueError as exc:
        raise ValueError(f"POSSIC_THREADS must be an integer, got {raw!r}") from exc
    if k < 0:
        raise ValueError("POSSIC_THREADS must be nonnegative")
    return k or (os.cpu_count() or 1)


def _aggregate(config, n, r_grid, results) -> ReplicationSummary:
    curves = np.stack([c for c, _, _ in results])
    return ReplicationSummary(
        n=n,
        model=config.model,
        r_grid=r_grid,
        mean_f=curves.mean(axis=0),
        std_f=curves.std(axis=0),
        maps=np.array([m for _, m, _ in results]),
        tail_reference=np.array([t for _, _, t in results]),
    )


def run_ratio_experiment(config: ExperimentConfig, data=None) -> list[ReplicationSummary]:
    """Run every ``n`` of the config; ``data=(y, y_prime)`` replaces the generator by one fixed replication."""
    r_grid = config.r_grid
    if data is not None:
        y, yp = (np.asarray(a, dtype=float) for a in data)
        if y.size == 0 or y.size != yp.size:
            raise ValueError("override data needs two non-empty columns of equal length")
        return [_aggregate(config, int(y.size), r_grid, [run_replication(config, y, yp, r_grid)])]

    out = []
    workers = _workers()
    for n in config.n_obs:
        def job(rep, n=n):
            y, yp = draw_pairs(config, n, rep)
            return run_replication(config, y, yp, r_grid)

        reps = range(int(config.replications))
        if workers == 1:
            results = [job(i) for i in reps]
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(job, reps))  # map keeps index order
        out.append(_aggregate(config, n, r_grid, results))
    return out


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return ExperimentConfig.from_dict(json.load(fh))
