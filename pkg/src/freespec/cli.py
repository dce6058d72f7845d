"""Command-line entry point: ``freespec <subcommand> ...``.

Exit status is 0 on success, 2 on invalid input and 3 when a solver fails
to converge.
"""

from __future__ import annotations

import argparse
import sys
from importlib import resources
from pathlib import Path

from . import jsonfmt
from .block import load_block_spec, phase_classify
from .errors import ConvergenceError, ValidationError
from .free import free_density, free_support, lehner_max, lehner_min
from .harness import ExperimentConfig, load_config, run, write_outputs
from .model import compute_parameters, load_model

FIGURES = ("simplebbp", "bbp", "scov1", "scov2")


def _emit(obj):
    sys.stdout.write(jsonfmt.dumps(obj) + "\n")


def cmd_params(args):
    model = load_model(args.model)
    p = compute_parameters(model, restarts=args.restarts, seed=args.seed)
    _emit({"sigma": p.sigma, "v": p.v, "sigma_star": p.sigma_star, "v_tilde": p.v_tilde, "d": model.d, "n": model.n})


def cmd_free_edge(args):
    model = load_model(args.model)
    top = lehner_max(model)
    bottom = lehner_min(model)
    out = {
        "lambda_max": top.value,
        "lambda_min": bottom.value,
        "lambda_max_gap": top.objective_residual,
        "lambda_min_gap": bottom.objective_residual,
    }
    if args.support:
        out["support"] = [[lo, hi] for lo, hi in free_support(model)]
    _emit(out)


def cmd_free_density(args):
    model = load_model(args.model)
    if not args.xlo < args.xhi:
        raise ValidationError("need --xlo < --xhi")
    sol = free_density(model, args.xlo, args.xhi, steps=args.steps, eta=args.eta)
    text = sol.to_csv()
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_phase(args):
    _emit(phase_classify(load_block_spec(args.spec)).to_dict())


def _simulate(cfg: ExperimentConfig, args):
    result = run(cfg, threads=args.threads)
    paths = write_outputs(result, args.output, style=args.style)
    _emit({"config_hash": cfg.hash, "records": len(result.records), **{k: str(v) for k, v in paths.items()}})


def cmd_simulate(args):
    _simulate(load_config(args.config), args)


def figure_config(name) -> ExperimentConfig:
    """Shipped configuration reproducing a figure at desk scale."""
    if name not in FIGURES:
        raise ValidationError(f"unknown figure {name!r}; expected one of {', '.join(FIGURES)}")
    ref = resources.files("freespec") / "configs" / f"{name}.json"
    with resources.as_file(ref) as path:
        return load_config(path)


def cmd_figure(args):
    cfg = figure_config(args.name)
    if args.trials is not None:
        cfg = ExperimentConfig.from_dict(cfg.to_dict() | {"trials": args.trials})
    if args.output is None:
        args.output = cfg.output or args.name
    _simulate(cfg, args)


def build_parser():
    parser = argparse.ArgumentParser(prog="freespec", description="Free-probability spectral predictions.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("params", help="matrix parameters sigma, v, sigma_*, v~ of a model")
    p.add_argument("model")
    p.add_argument("--restarts", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("free-edge", help="spectral edges of the free model")
    p.add_argument("model")
    p.add_argument("--support", action="store_true", help="also compute the full support")
    p.set_defaults(func=cmd_free_edge)

    p = sub.add_parser("free-density", help="density of the free model on a grid (CSV)")
    p.add_argument("model")
    p.add_argument("--xlo", type=float, required=True)
    p.add_argument("--xhi", type=float, required=True)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--eta", type=float, default=None)
    p.add_argument("--output", "-o", default=None)
    p.set_defaults(func=cmd_free_density)

    p = sub.add_parser("phase", help="phase of a block spiked model")
    p.add_argument("spec")
    p.set_defaults(func=cmd_phase)

    for name, func, target, helptext in (
        ("simulate", cmd_simulate, "config", "run a Monte Carlo sweep from a config file"),
        ("figure", cmd_figure, "name", f"run a shipped figure config ({', '.join(FIGURES)})"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument(target)
        p.add_argument("--threads", type=int, default=None, help="worker threads (overrides FREESPEC_THREADS)")
        p.add_argument("--output", "-o", default=None, help="output stem")
        p.add_argument("--style", default="matplotlib", choices=("matplotlib", "json"))
        if name == "figure":
            p.add_argument("--trials", type=int, default=None)
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (ValidationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ConvergenceError as exc:
        print(f"solver did not converge: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
