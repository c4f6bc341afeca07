"""Command-line front end.

Exit status is 1 for invalid input and 2 for I/O failures, each with a
one-line message on stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from .asymptotics import FAMILIES, bvm_report, clt_report, lln_report
from .core import Indicator, Normal, construct_family, to_json
from .experiment import ExperimentConfig, box_muller, load_config, replication_stream, run_ratio_experiment
from .inference import (
    credibility_test,
    credible_interval,
    marginal_likelihood,
    normal_location,
    posterior,
)

MODELS = {"normal-loc": normal_location}


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _ints(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _domain(text: str):
    vals = _floats(text)
    if len(vals) != 2 or not vals[0] < vals[1]:
        raise argparse.ArgumentTypeError(f"domain must be 'a,b' with a < b, got {text!r}")
    return vals[0], vals[1]


def _seed(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _add_globals(p, suppress: bool):
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--seed", type=_seed, default=d(None), help="random seed (u64, default 0)")
    p.add_argument("--grid-points", type=int, default=d(401), help="evaluation grid size")
    p.add_argument("--domain", type=_domain, default=d(None), help="bounded domain 'a,b'")
    p.add_argument("--out", default=d(None), help="output path (file, or directory for ratio-experiment)")
    p.add_argument("--format", choices=("csv", "json"), default=d("csv"))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="possic", description="Inference with possibility functions.")
    _add_globals(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    fam = sub.add_parser("family", help="inspect a parametric family")
    fam_sub = fam.add_subparsers(dest="action", required=True, parser_class=_Parser)
    for name in ("eval", "moments", "plotdata"):
        p = fam_sub.add_parser(name)
        p.add_argument("--kind", required=True)
        p.add_argument("--params", type=_floats, required=True)
        if name == "eval":
            p.add_argument("--x", type=_floats, required=True)
        _add_globals(p, suppress=True)

    post = sub.add_parser("posterior", help="posterior from an observations CSV")
    _model_args(post)
    post.add_argument("--alpha", type=float, default=0.05)
    post.add_argument("--curve", default=None, help="posterior curve CSV path")
    _add_globals(post, suppress=True)

    test = sub.add_parser("test", help="credibility test of theta = theta0")
    _model_args(test)
    test.add_argument("--theta0", type=float, required=True)
    test.add_argument("--alpha", type=float, default=0.05)
    _add_globals(test, suppress=True)

    asym = sub.add_parser("asymptotics", help="convergence reports")
    asym_sub = asym.add_subparsers(dest="action", required=True, parser_class=_Parser)
    for name in ("lln", "clt", "bvm"):
        p = asym_sub.add_parser(name)
        p.add_argument("--n", type=_ints, required=True, help="sample sizes, e.g. 4,16,64")
        if name == "bvm":
            p.add_argument("--sigma2", type=float, default=1.0)
            p.add_argument("--theta0", type=float, default=0.0)
            p.add_argument("--prior", choices=("flat", "normal"), default="flat")
            p.add_argument("--prior-params", type=_floats, default=[0.0, 1.0])
        else:
            p.add_argument("--family", choices=sorted(FAMILIES), default="normal")
        _add_globals(p, suppress=True)

    ratio = sub.add_parser("ratio-experiment", help="ratio-of-means replication experiment")
    ratio.add_argument("--config", default=None, help="ExperimentConfig JSON")
    ratio.add_argument("--data", default=None, help="CSV with columns y,y_prime (one replication)")
    ratio.add_argument("--replications", type=int, default=None)
    ratio.add_argument("--n-obs", type=_ints, default=None)
    ratio.add_argument("--model", choices=("students", "normal-known-variance"), default=None)
    _add_globals(ratio, suppress=True)
    return parser


def _model_args(p):
    p.add_argument("--model", choices=sorted(MODELS), default="normal-loc")
    p.add_argument("--sigma2", type=float, default=1.0)
    p.add_argument("--prior", choices=("flat", "normal"), default="flat")
    p.add_argument("--prior-params", type=_floats, default=[0.0, 1.0], help="mu,sigma2 of a normal prior")
    p.add_argument("--data", default=None, help="observations CSV with a 'y' column")
    p.add_argument("--y", type=_floats, default=None, help="inline observations")


# -- I/O helpers ------------------------------------------------------------


def read_columns(path, names):
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or any(n not in reader.fieldnames for n in names):
            raise ValueError(f"{path}: expected header with columns {','.join(names)}")
        cols = {n: [] for n in names}
        for i, row in enumerate(reader, start=2):
            for n in names:
                try:
                    cols[n].append(float(row[n]))
                except (TypeError, ValueError) as exc:
                    raise ValueError(f"{path}:{i}: bad value in column {n!r}") from exc
    return [np.array(cols[n]) for n in names]


def _emit(text: str, out):
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8", newline="\n")


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False, default=_jsonable) + "\n"


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    raise TypeError(f"not serialisable: {type(v)}")


def _finite(v):
    if isinstance(v, float) and not math.isfinite(v):
        return "inf" if v > 0 else "-inf"
    return v


def _table(header, rows, fmt):
    if fmt == "json":
        return _json([dict(zip(header, map(_finite, r))) for r in rows])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in r])
    return buf.getvalue()


# -- commands ---------------------------------------------------------------


def _family(args):
    pf = construct_family(args.kind, args.params)
    if args.action == "eval":
        xs = np.asarray(args.x)
        return _table(["x", "f"], list(zip(xs.tolist(), np.atleast_1d(pf(xs)).tolist())), args.format)
    if args.action == "moments":
        modes = pf.mode()
        mode = modes.value if modes.is_singleton else [[_finite(a), _finite(b)] for a, b in modes.components]
        try:
            var = pf.variance().to_json()
        except ValueError:
            var = None
        return _json({"kind": pf.kind, "params": to_json(pf)["params"], "mode": mode, "variance": var})
    dom = args.domain or pf.working_domain()
    xs = np.linspace(dom[0], dom[1], args.grid_points)
    return _table(["x", "f"], list(zip(xs.tolist(), pf(xs).tolist())), args.format)


def _observations(args):
    if args.y is not None:
        ys = np.asarray(args.y)
    elif args.data is not None:
        (ys,) = read_columns(args.data, ["y"])
    else:
        raise ValueError("observations are required (--data or --y)")
    if ys.size == 0:
        raise ValueError("no observations")
    return ys


def _prior(args):
    if args.prior == "flat":
        return Indicator((-math.inf, math.inf))
    if len(args.prior_params) != 2:
        raise ValueError("--prior-params needs mu,sigma2")
    return Normal(*args.prior_params)


def _posterior(args):
    ys = _observations(args)
    model = MODELS[args.model](args.sigma2)
    prior = _prior(args)
    post = posterior(prior, model, ys, domain=args.domain)
    modes = post.mode()
    ci = credible_interval(post, args.alpha)
    try:
        var = post.variance().to_json()
    except ValueError:
        var = None
    report = {
        "map": modes.value if modes.is_singleton else modes.to_list(),
        "variance": var,
        "interval": [ci.lower, ci.upper],
        "alpha": args.alpha,
        "marginal_likelihood": marginal_likelihood(prior, model, ys),
    }
    xs = np.linspace(*post.working_domain(), args.grid_points)
    curve = _table(["theta", "f"], list(zip(xs.tolist(), np.asarray(post(xs)).tolist())), "csv")
    curve_path = args.curve
    if curve_path is None and args.out is not None:
        p = Path(args.out)
        curve_path = str(p.with_name(p.stem + "_curve.csv"))
    if curve_path is not None:
        _emit(curve, curve_path)
    return _json(report)


def _test(args):
    ys = _observations(args)
    model = MODELS[args.model](args.sigma2)
    report = credibility_test(_prior(args), model, ys, args.theta0, args.alpha)
    return _json(report.to_dict())


def _asymptotics(args):
    if args.action == "bvm":
        ns = args.n
        rng = replication_stream(args.seed or 0, max(ns), 0)
        data = args.theta0 + math.sqrt(args.sigma2) * box_muller(rng, max(ns))
        rep = bvm_report(normal_location(args.sigma2), _prior(args), data, args.theta0, ns)
    else:
        pf = FAMILIES[args.family]()
        if args.action == "lln":
            grid = np.linspace(*(args.domain or pf.working_domain()), args.grid_points)
            rep = lln_report(pf, args.n, grid)
        else:
            dom = args.domain or (-3.0, 3.0)
            rep = clt_report(pf, args.n, np.linspace(dom[0], dom[1], args.grid_points))
    return _table(["n", "distance", "limit_kind"], rep.rows(), args.format)


def _ratio(args):
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.replications is not None:
        overrides["replications"] = args.replications
    if args.n_obs is not None:
        overrides["n_obs"] = args.n_obs
    if args.model is not None:
        overrides["model"] = args.model
    cfg = ExperimentConfig.from_dict({**cfg.to_dict(), **overrides})
    data = read_columns(args.data, ["y", "y_prime"]) if args.data else None
    summaries = run_ratio_experiment(cfg, data=data)
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for s in summaries:
            (out / f"ratio_{cfg.model}_n{s.n}.csv").write_text(s.curve_csv(), encoding="utf-8", newline="\n")
            (out / f"maps_{cfg.model}_n{s.n}.csv").write_text(s.maps_csv(), encoding="utf-8", newline="\n")
    return _json({"config": cfg.to_dict(), "summaries": [s.to_dict() for s in summaries]})


COMMANDS = {
    "family": _family,
    "posterior": _posterior,
    "test": _test,
    "asymptotics": _asymptotics,
    "ratio-experiment": _ratio,
}


LIST_FLAGS = ("--domain", "--params", "--prior-params", "--x", "--y", "--theta0")


def _glue_negative_values(argv):
    """Rewrite ``--domain -1,1`` as ``--domain=-1,1`` so argparse keeps the value."""
    out = []
    it = iter(argv)
    for tok in it:
        if tok in LIST_FLAGS:
            nxt = next(it, None)
            if nxt is None:
                out.append(tok)
            elif nxt.startswith("-") and not nxt.startswith("--"):
                out.append(f"{tok}={nxt}")
            else:
                out.extend([tok, nxt])
        else:
            out.append(tok)
    return out


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parser.parse_args(_glue_negative_values(argv))
        if args.grid_points < 3:
            raise ValueError("--grid-points must be at least 3")
        text = COMMANDS[args.command](args)
        out = None if args.command == "ratio-experiment" else args.out
        _emit(text, out)
    except OSError as exc:
        print(f"possic: I/O error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, argparse.ArgumentTypeError) as exc:
        msg = " ".join(str(exc).split())
        print(f"possic: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
