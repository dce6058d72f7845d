"""Config-driven Monte Carlo sweeps with theory curves, CSV and JSON output."""

from __future__ import annotations

import hashlib
import io
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla
from threadpoolctl import threadpool_limits

from .applications.csbm import CsbmInstance, csbm_build, csbm_estimate, csbm_overlap, csbm_snr
from .applications.decoding import GraphDecodingInstance, decode_build, flip_probability_for
from .applications.kikuchi import TensorPcaInstance, kikuchi_matrix, kikuchi_params, kikuchi_test
from .applications.scov import ScovParams, scov_closed_forms
from .block import BlockModelSpec, build_block_model, reduced_lambda
from .ensembles import band_model, goe_model, rademacher_band, spike
from . import jsonfmt
from .errors import ValidationError
from .free import free_support
from .iso import bbp_overlap, bbp_value
from .model import GaussianSeriesModel, compute_parameters, eigen_spectrum, hausdorff_distance, sample, sample_universal
from .rng import derive_seed, make_rng

KINDS = ("spiked-band", "bbp-sweep", "block-phase", "kikuchi", "decode", "csbm", "scov")
CSV_COLUMNS = (
    "grid_value", "trial", "seed", "lambda_max", "lambda_2", "overlap",
    "hausdorff", "theory_value", "theory_error_radius",
)
THREADS_ENV = "FREESPEC_THREADS"


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    grid: tuple
    trials: int
    master_seed: int = 0
    params: dict = field(default_factory=dict)
    output: str | None = None
    threads: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown kind {self.kind!r}; expected one of {', '.join(KINDS)}")
        grid = tuple(float(g) for g in self.grid)
        if not grid:
            raise ValidationError("grid must be nonempty")
        if int(self.trials) < 1:
            raise ValidationError("trials must be at least 1")
        if self.threads is not None and int(self.threads) < 1:
            raise ValidationError("threads must be positive")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "trials", int(self.trials))
        object.__setattr__(self, "master_seed", int(self.master_seed))
        object.__setattr__(self, "params", dict(self.params))

    @classmethod
    def from_dict(cls, doc):
        known = {"kind", "grid", "trials", "master_seed", "params", "output", "threads"}
        extra = set(doc) - known
        if extra:
            raise ValidationError(f"unknown config keys: {sorted(extra)}")
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ValidationError(str(exc)) from exc

    def to_dict(self):
        return asdict(self) | {"grid": list(self.grid)}

    @property
    def hash(self) -> str:
        """Digest of everything that determines the records."""
        doc = {k: v for k, v in self.to_dict().items() if k not in ("output", "threads")}
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from exc
    return ExperimentConfig.from_dict(doc)


@dataclass(frozen=True)
class TrialRecord:
    config_hash: str
    grid_index: int
    grid_value: float
    trial: int
    seed: int
    lambda_max: float
    lambda_2: float
    overlap: float
    hausdorff: float
    theory_value: float
    theory_error_radius: float
    wall_time: float


NAN = float("nan")


def _top_two(x):
    w, u = sla.eigh(x)
    return w[-1], w[-2] if w.size > 1 else NAN, u[:, -1]


def _param(cfg, name, default=None, cast=None):
    if name not in cfg.params:
        if default is None:
            raise ValidationError(f"{cfg.kind}: missing parameter {name!r}")
        return default
    value = cfg.params[name]
    try:
        return cast(value) if cast else value
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{cfg.kind}: bad parameter {name!r}") from exc


# ---------------------------------------------------------------------------
# Experiment kinds.  Each provides theory(g) -> (value, radius, extras) and
# trial(g, seed) -> (lambda_max, lambda_2, overlap, hausdorff).
# ---------------------------------------------------------------------------


class _SpikedWigner:
    """Rank-one spike ``theta v v*`` plus a band or full Wigner noise."""

    def __init__(self, cfg, band):
        self.d = _param(cfg, "d", cast=int)
        self.band = band
        if band:
            self.width = _param(cfg, "width", cast=int)
            self.noise = _param(cfg, "noise", "rademacher", str)
            if self.noise not in ("rademacher", "gaussian", "none"):
                raise ValidationError("noise must be 'rademacher', 'gaussian' or 'none'")
            if self.noise == "none":
                self.gauss = GaussianSeriesModel(np.zeros((self.d, self.d)), np.zeros((0, self.d, self.d)))
            else:
                self.gauss = band_model(self.d, self.width)
        else:
            self.noise = "gaussian"
            self.gauss = goe_model(self.d)
        self.v = np.ones(self.d) / np.sqrt(self.d)
        self.want_hausdorff = bool(cfg.params.get("hausdorff", False))
        radius_by = _param(cfg, "error_radius", "sigma_star", str)
        if radius_by == "sigma_star":
            restarts = _param(cfg, "restarts", 3, int)
            self.sigma_star = compute_parameters(self.gauss, restarts=restarts).sigma_star
        elif radius_by == "v":
            self.sigma_star = compute_parameters(self.gauss, restarts=1).v
        else:
            raise ValidationError("error_radius must be 'sigma_star' or 'v'")
        self._supports = {}

    def theory(self, g):
        return bbp_value(g), 2.0 * self.sigma_star, {"B": bbp_value(g), "overlap": bbp_overlap(g)}

    def _support(self, g):
        if g not in self._supports:
            self._supports[g] = free_support(self.gauss.with_mean(spike(g, self.v)))
        return self._supports[g]

    def trial(self, g, seed):
        a0 = spike(g, self.v)
        if self.band and self.noise == "rademacher":
            x = sample_universal(rademacher_band(self.d, self.width, a0), seed)
        else:
            x = sample(self.gauss.with_mean(a0), seed)
        w, u = sla.eigh(x)
        overlap = float(abs(np.vdot(self.v, u[:, -1])) ** 2)
        haus = hausdorff_distance(eigen_spectrum(x), self._support(g)) if self.want_hausdorff else NAN
        return w[-1], w[-2], overlap, haus

    def prepare(self, grid):
        # Free supports are shared by all trials; compute them before fanning out.
        if self.want_hausdorff:
            for g in grid:
                self._support(g)


class _BlockPhase:
    """Block model ``B = snr * B0 / snr(B0)`` swept over the signal-to-noise ratio."""

    def __init__(self, cfg):
        self.sizes = [int(s) for s in _param(cfg, "block_sizes")]
        self.b0 = np.asarray(_param(cfg, "B"), dtype=float)
        self.z = cfg.params.get("z", "ones")
        self.base_snr = self.spec(None).snr
        self._cache = {}

    def spec(self, g):
        b = self.b0 if g is None else g / self.base_snr * self.b0
        return BlockModelSpec.from_dict({"block_sizes": self.sizes, "B": b.tolist(), "z": self.z})

    def theory(self, g):
        if g not in self._cache:
            spec = self.spec(g)
            lam = reduced_lambda(spec).value
            radius = float(np.sqrt(8 * np.max(spec.B @ np.ones(spec.q)) / spec.d))
            self._cache[g] = (lam, radius, {"lambda": lam, "snr": g})
        return self._cache[g]

    def trial(self, g, seed):
        spec = self.spec(g)
        x = sample(build_block_model(spec), seed)
        lam, lam2, top = _top_two(x)
        overlap = float(np.dot(spec.z, top) ** 2 / spec.d)
        return lam, lam2, overlap, NAN

    def prepare(self, grid):
        for g in grid:
            self.theory(g)


class _Kikuchi:
    """Grid values are ``lambda sqrt(k_star)``; ``overlap`` holds the 0/1 decision."""

    def __init__(self, cfg):
        self.n = _param(cfg, "n", cast=int)
        self.p = _param(cfg, "p", 4, int)
        self.ell = _param(cfg, "ell", self.p // 2, int)
        self.cap = _param(cfg, "cap", 200_000, int)
        self.k_star = kikuchi_params(self.n, self.p, self.ell).k_star
        self.threshold = 2.0 + self.n ** -0.2

    def theory(self, g):
        return self.threshold, NAN, {"threshold": self.threshold, "k_star": self.k_star}

    def trial(self, g, seed):
        inst = TensorPcaInstance.random(self.n, self.p, self.ell, g / np.sqrt(self.k_star), seed)
        res = kikuchi_test(kikuchi_matrix(inst, self.cap), self.n, self.p, self.ell, seed=seed)
        return res.statistic, NAN, float(res.decision), NAN

    def prepare(self, grid):
        pass


class _Decode:
    """Grid values are the normalized strength ``theta'``."""

    def __init__(self, cfg):
        self.d = _param(cfg, "d", cast=int)
        self.k = _param(cfg, "k", cast=int)
        self.graph = _param(cfg, "graph", "random-regular", str)

    def theory(self, g):
        # sigma_* <= v = sqrt(2/k) for the unit-variance rescaling.
        return bbp_value(g), 2.0 * np.sqrt(2.0 / self.k), {"B": bbp_value(g), "overlap": bbp_overlap(g)}

    def trial(self, g, seed):
        p = flip_probability_for(g, self.k)
        inst = GraphDecodingInstance.random(self.d, self.k, p, seed, graph=self.graph)
        mats = decode_build(inst)
        y = mats.y if mats.infinite else mats.y_prime
        lam, lam2, top = _top_two(y)
        return lam, lam2, float(np.dot(inst.x, top) ** 2 / self.d), NAN

    def prepare(self, grid):
        pass


class _Csbm:
    """Grid values are ``lambda^2 + mu^2/gamma``; ``mix`` is the share carried by ``lambda^2``."""

    def __init__(self, cfg):
        self.n = _param(cfg, "n", cast=int)
        self.p = _param(cfg, "p", cast=int)
        self.mix = _param(cfg, "mix", 0.5, float)
        if not 0 <= self.mix <= 1:
            raise ValidationError("mix must lie in [0, 1]")
        self.gamma = self.n / self.p

    def strengths(self, g):
        return np.sqrt(self.mix * g), np.sqrt((1 - self.mix) * g * self.gamma)

    def theory(self, g):
        lam, mu = self.strengths(g)
        snr = csbm_snr(lam, mu, self.gamma)
        return snr.snr, NAN, {"snr": snr.snr, "supercritical": snr.supercritical, "lambda": lam, "mu": mu}

    def trial(self, g, seed):
        lam, mu = self.strengths(g)
        inst = CsbmInstance.random(self.n, self.p, lam, mu, seed)
        _, _, x_hat = csbm_build(inst)
        est = csbm_estimate(x_hat, self.n, seed=seed)
        return est.eigenvalue, est.eigenvalue - est.gap, csbm_overlap(inst.v, est.v_hat), NAN

    def prepare(self, grid):
        pass


class _Scov:
    """Grid values are the spike ``lambda``.

    ``target`` picks the matrix whose top eigenvalues are recorded:
    ``norm`` uses ``Sigma_hat``, ``error-max`` uses ``Sigma_hat - Sigma`` and
    ``error-min`` uses ``Sigma - Sigma_hat``.  ``overlap`` is with the spike
    direction.
    """

    TARGETS = ("norm", "error-max", "error-min")

    def __init__(self, cfg):
        self.n = _param(cfg, "n", cast=int)
        self.p = _param(cfg, "p", cast=int)
        self.target = _param(cfg, "target", "norm", str)
        if self.target not in self.TARGETS:
            raise ValidationError(f"target must be one of {self.TARGETS}")

    def theory(self, g):
        e = scov_closed_forms(g, self.p / self.n)
        value = {"norm": e.S, "error-max": e.H_plus, "error-min": -e.H_minus}[self.target]
        radius = (1 + g + self.p / self.n) * self.n ** -0.25 * np.log(max(self.n, self.p)) ** 0.75
        return value, radius, {"S": e.S, "H_plus": e.H_plus, "H_minus": e.H_minus}

    def trial(self, g, seed):
        params = ScovParams(self.n, self.p, g)
        x = make_rng(seed, 0x5C).standard_normal((self.p, self.n))
        x[0] *= np.sqrt(1 + g)
        m = x @ x.T / self.n
        if self.target != "norm":
            m = m - np.diag(params.spectrum)
        if self.target == "error-min":
            m = -m
        lam, lam2, top = _top_two(m)
        return lam, lam2, float(top[0] ** 2), NAN

    def prepare(self, grid):
        pass


def _experiment(cfg):
    if cfg.kind == "spiked-band":
        return _SpikedWigner(cfg, band=True)
    if cfg.kind == "bbp-sweep":
        return _SpikedWigner(cfg, band=False)
    if cfg.kind == "block-phase":
        return _BlockPhase(cfg)
    if cfg.kind == "kikuchi":
        return _Kikuchi(cfg)
    if cfg.kind == "decode":
        return _Decode(cfg)
    if cfg.kind == "csbm":
        return _Csbm(cfg)
    return _Scov(cfg)


# ---------------------------------------------------------------------------
# Running
# ---------------------------------------------------------------------------


def resolve_threads(flag=None, config_threads=None) -> int:
    """CLI flag, then the environment, then the config, then all cores."""
    for source in (flag, os.environ.get(THREADS_ENV), config_threads):
        if source not in (None, ""):
            try:
                n = int(source)
            except ValueError as exc:
                raise ValidationError(f"bad thread count {source!r}") from exc
            if n < 1:
                raise ValidationError("thread count must be positive")
            return n
    return os.cpu_count() or 1


@dataclass
class RunResult:
    config: ExperimentConfig
    records: list
    summary: dict


def _summarize(cfg, exp, records):
    points = []
    for gi, g in enumerate(cfg.grid):
        rows = [r for r in records if r.grid_index == gi]
        value, radius, extras = exp.theory(g)
        entry = {"grid_value": g, "theory_value": value, "theory_error_radius": radius, "theory": extras}
        for stat in ("lambda_max", "lambda_2", "overlap", "hausdorff"):
            vals = np.array([getattr(r, stat) for r in rows], dtype=float)
            if np.all(np.isnan(vals)):
                continue
            q = np.quantile(vals, [0.1, 0.5, 0.9])
            entry[stat] = {
                "mean": float(vals.mean()),
                "std": float(vals.std(ddof=1)) if vals.size > 1 else 0.0,
                "q10": float(q[0]), "q50": float(q[1]), "q90": float(q[2]),
            }
        points.append(entry)
    return {"kind": cfg.kind, "config_hash": cfg.hash, "trials": cfg.trials, "params": cfg.params, "points": points}


def run(cfg: ExperimentConfig, threads=None) -> RunResult:
    """Execute every (grid point, trial) pair and summarize.

    Trial seeds derive from ``(master_seed, grid index, trial)``, so records
    do not depend on scheduling.  BLAS is pinned to one thread per worker.
    """
    threads = resolve_threads(threads, cfg.threads)
    chash = cfg.hash
    with threadpool_limits(limits=1):
        exp = _experiment(cfg)
        exp.prepare(cfg.grid)
        for g in cfg.grid:
            exp.theory(g)

        def one(job):
            gi, trial = job
            g = cfg.grid[gi]
            seed = derive_seed(cfg.master_seed, gi, trial)
            start = time.perf_counter()
            stats = exp.trial(g, seed)
            value, radius, _ = exp.theory(g)
            return TrialRecord(chash, gi, g, trial, seed, *(float(s) for s in stats),
                               float(value), float(radius), time.perf_counter() - start)

        jobs = [(gi, t) for gi in range(len(cfg.grid)) for t in range(cfg.trials)]
        if threads == 1:
            records = [one(j) for j in jobs]
        else:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                records = list(pool.map(one, jobs))
    records.sort(key=lambda r: (r.grid_index, r.trial))
    return RunResult(cfg, records, _summarize(cfg, exp, records))


def _fmt(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.17g}"


def records_csv(records) -> str:
    buf = io.StringIO()
    buf.write(",".join(CSV_COLUMNS) + "\n")
    for r in sorted(records, key=lambda r: (r.grid_index, r.trial)):
        buf.write(",".join(_fmt(getattr(r, c)) for c in CSV_COLUMNS) + "\n")
    return buf.getvalue()


def write_outputs(result: RunResult, output=None, style="matplotlib") -> dict:
    """Write ``<stem>.csv``, ``<stem>.summary.json``, ``<stem>.timing.json`` and a plot script."""
    output = output or result.config.output or f"{result.config.kind}-{result.config.hash}"
    stem = Path(output)
    if stem.suffix == ".csv":
        stem = stem.with_suffix("")
    stem.parent.mkdir(parents=True, exist_ok=True)
    paths = {
        "csv": stem.with_suffix(".csv"),
        "summary": stem.parent / (stem.name + ".summary.json"),
        "timing": stem.parent / (stem.name + ".timing.json"),
        "plot": stem.parent / (stem.name + ".plot.py"),
    }
    paths["csv"].write_text(records_csv(result.records), encoding="utf-8")
    summary = result.summary
    paths["summary"].write_text(jsonfmt.dumps(summary) + "\n", encoding="utf-8")
    timing = {"config_hash": result.config.hash,
              "wall_time": [[r.grid_index, r.trial, r.wall_time] for r in result.records]}
    paths["timing"].write_text(json.dumps(timing) + "\n", encoding="utf-8")
    paths["plot"].write_text(emit_plot_script(summary, style, csv_name=paths["csv"].name), encoding="utf-8")
    return paths


# ---------------------------------------------------------------------------
# Plot scripts
# ---------------------------------------------------------------------------

_AXES = {
    "spiked-band": ("theta", "top eigenvalue"),
    "bbp-sweep": ("theta", "top eigenvalue"),
    "block-phase": ("snr", "top eigenvalue"),
    "kikuchi": ("lambda sqrt(k*)", "normalized top eigenvalue"),
    "decode": ("theta'", "top eigenvalue"),
    "csbm": ("lambda^2 + mu^2/gamma", "overlap"),
    "scov": ("lambda", "eigenvalue"),
}


def plot_spec(summary) -> dict:
    """Declarative description of the figure: axes, series and markers."""
    if not summary or not summary.get("points"):
        return {}
    kind = summary["kind"]
    points = summary["points"]
    xs = [p["grid_value"] for p in points]
    stat = "overlap" if kind == "csbm" else "lambda_max"
    series = [
        {"label": "empirical", "style": "markers", "x": xs,
         "y": [p.get(stat, {}).get("mean", float("nan")) for p in points],
         "yerr": [p.get(stat, {}).get("std", float("nan")) for p in points]},
        {"label": "theory", "style": "line", "x": xs, "y": [p["theory_value"] for p in points]},
    ]
    markers = []
    if kind == "scov":
        last = points[-1]["theory"]
        markers = [{"label": name, "x": last[key]} for name, key in
                   (("H-", "H_minus"), ("H+", "H_plus"), ("S", "S"))]
    elif kind == "kikuchi":
        markers = [{"label": "threshold", "y": points[0]["theory_value"]}]
    elif kind == "csbm":
        markers = [{"label": "threshold", "x": 1.0}]
    xlabel, ylabel = _AXES[kind]
    return {"kind": kind, "xlabel": xlabel, "ylabel": ylabel, "series": series, "markers": markers}


def emit_plot_script(summary, style="matplotlib", csv_name=None) -> str:
    """Text of a standalone plotting script for ``summary``; nothing is plotted here.

    ``style`` is ``"matplotlib"`` (a Python script) or ``"json"`` (the bare
    declarative spec).
    """
    spec = plot_spec(summary)
    if style == "json":
        return jsonfmt.dumps(spec) + "\n"
    if style != "matplotlib":
        raise ValidationError(f"unknown plot style {style!r}")
    header = "# Plot script generated by freespec; run with python to draw the figure.\n"
    if csv_name:
        header += f"# Records: {csv_name}\n"
    if not spec:
        return header
    body = [
        "import json",
        "import matplotlib.pyplot as plt",
        "",
        f"SPEC = json.loads({json.dumps(jsonfmt.dumps(spec, indent=0))})",
        "",
        "fig, ax = plt.subplots()",
        "for s in SPEC['series']:",
        "    if s['style'] == 'markers':",
        "        ax.errorbar(s['x'], s['y'], yerr=s.get('yerr'), fmt='o', label=s['label'])",
        "    else:",
        "        ax.plot(s['x'], s['y'], '-', label=s['label'])",
        "for m in SPEC['markers']:",
        "    if 'x' in m:",
        "        ax.axvline(m['x'], linestyle='--', color='gray')",
        "        ax.annotate(m['label'], (m['x'], 0), xycoords=('data', 'axes fraction'))",
        "    else:",
        "        ax.axhline(m['y'], linestyle='--', color='gray', label=m['label'])",
        "ax.set_xlabel(SPEC['xlabel'])",
        "ax.set_ylabel(SPEC['ylabel'])",
        "ax.legend()",
        "plt.show()",
        "",
    ]
    return header + "\n".join(body)
