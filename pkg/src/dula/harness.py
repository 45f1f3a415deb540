"""Experiment orchestration: config files, replications, experiments and CSV output.

Config files are line-oriented ``section.key = value`` text (a ``[section]``
header may stand in for the prefix). Values are Python literals; anything
that does not parse as one is kept as a bare string::

    experiment.kind = gm
    [run]
    iterations = 200000
"""

from __future__ import annotations

import ast
import copy
import csv
import hashlib
import io
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import datasets, diagnostics, models, rng, sampler, schedules, topology
from .errors import BoundUnavailableError, ConfigError, InvalidParameterError

log = logging.getLogger(__name__)

DEFAULTS = {
    "experiment": {
        "kind": "custom",
        "replications": 1,
        "base_seed": 0,
        "engines": ["dula"],
        "sizes": [1, 5, 10],
        "full_scale": False,
        "threads": 1,
    },
    "topology": {"kind": "ring", "n": 5, "edges": []},
    "schedule": {
        "a": None, "b": None, "delta1": 0.05, "delta2": 0.55,
        "offset1": 0.0, "offset2": 0.0,
        "alpha0": None, "b1": None, "beta0": None, "b2": None,
        "alpha_start": None, "alpha_end": None, "interval_iterations": None,
        "b_fraction": 0.9,
    },
    "model": {
        "kind": "quadratic",
        "d_w": 2,
        "precision": 1.0,
        "spread": 0.0,
        "count": 100,
        "data_seed": 3,
        "theta1": 0.0,
        "theta2": 1.0,
        "sigma1_sq": 10.0,
        "sigma2_sq": 1.0,
        "sigmax_sq": 2.0,
        "dataset": "a9a",
        "n_features": 123,
        "synthetic_fallback": True,
        "synthetic_rows": 32561,
        "synthetic_dim": 123,
        "synthetic_norm": 3.0,
        "prior_scale": 1.0,
        "train_fraction": 0.8,
    },
    "run": {
        "iterations": 1000,
        "burn_in": 0,
        "thinning": 1,
        "batch_size": 0,
        "record_every": 1,
        "init_scale": 0.0,
        "epochs": 10,
        "record_samples": True,
    },
    "diagnostics": {
        "lam": 0.1,
        "grid_step": 0.1,
        "convention": "regularization",
        "mode_radius": 0.3,
    },
}

# GM desk scale and the full-scale iteration count
GM_DESK = {"iterations": 200_000, "burn_in": 50_000}
GM_FULL = {"iterations": 1_000_000, "burn_in": 250_000}

# built-in experiment protocols
GM_PRESET = {
    "experiment": {"kind": "gm", "sizes": [1, 5, 10], "engines": ["dula"]},
    "schedule": {"alpha_start": 0.01, "alpha_end": 0.0001, "interval_iterations": GM_FULL["iterations"],
                 "delta1": 0.05, "delta2": 0.55, "b_fraction": 0.9},
    "model": {"kind": "gm", "count": 100, "theta1": 0.0, "theta2": 1.0, "data_seed": 3},
    "run": dict(GM_DESK, thinning=10, record_every=1000),
}
LOGREG_PRESET = {
    "experiment": {"kind": "logreg", "sizes": [5], "engines": ["cula", "dula"],
                   "replications": 10},
    "schedule": {"alpha0": 0.00082, "b1": 230, "delta2": 0.55, "beta0": 0.48, "b2": 230,
                 "delta1": 0.05},
    "model": {"kind": "logreg"},
    "run": {"batch_size": 10, "epochs": 10, "thinning": 10},
}
CULA_LOGREG_ALPHA0 = 0.004


def _parse_value(text):
    text = text.strip()
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def parse_config_text(text):
    """Parse config text into ``{section: {key: value}}``; unknown keys are errors."""
    out = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in DEFAULTS:
                raise ConfigError(f"line {lineno}: unknown section [{section}]")
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key = key.strip()
        if "." in key:
            sec, _, name = key.partition(".")
        elif section is not None:
            sec, name = section, key
        else:
            raise ConfigError(f"line {lineno}: key {key!r} has no section")
        if sec not in DEFAULTS:
            raise ConfigError(f"line {lineno}: unknown section {sec!r}")
        if name not in DEFAULTS[sec]:
            raise ConfigError(f"line {lineno}: unknown key {sec}.{name}")
        out.setdefault(sec, {})[name] = _parse_value(value)
    return out


def _merge(base, over):
    merged = copy.deepcopy(base)
    for sec, vals in over.items():
        merged.setdefault(sec, {}).update(vals)
    return merged


@dataclass
class ExperimentConfig:
    """Every section of a config with defaults filled in.

    ``sections`` maps section name to a flat dict; :meth:`config_hash` is a
    digest of its canonical JSON form.
    """

    sections: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))

    def __post_init__(self):
        self.sections = _merge(DEFAULTS, self.sections)
        exp = self.sections["experiment"]
        if exp["kind"] not in ("gm", "logreg", "custom"):
            raise ConfigError(f"experiment.kind must be gm, logreg or custom, got {exp['kind']!r}")
        if int(exp["replications"]) < 1:
            raise ConfigError("experiment.replications must be >= 1")
        for e in exp["engines"]:
            if e not in sampler.ENGINES:
                raise ConfigError(f"unknown engine {e!r}")

    def __getitem__(self, section):
        return self.sections[section]

    @classmethod
    def from_text(cls, text):
        sections = parse_config_text(text)
        kind = sections.get("experiment", {}).get("kind")
        preset = {"gm": GM_PRESET, "logreg": LOGREG_PRESET}.get(kind, {})
        return cls(_merge(preset, sections))

    @classmethod
    def from_file(cls, path):
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as err:
            raise ConfigError(f"cannot read config {path}: {err}") from err
        return cls.from_text(text)

    @classmethod
    def preset(cls, kind, **overrides):
        """The built-in GM or logistic protocol, with ``{section: {...}}`` overrides."""
        base = {"gm": GM_PRESET, "logreg": LOGREG_PRESET}[kind]
        return cls(_merge(base, overrides))

    def replace(self, **overrides):
        return ExperimentConfig(_merge(self.sections, overrides))

    def canonical(self):
        return json.dumps(self.sections, sort_keys=True, separators=(",", ":"), default=str)

    def config_hash(self):
        return hashlib.sha256(self.canonical().encode("utf-8")).hexdigest()[:16]

    def to_text(self):
        lines = []
        for sec in sorted(self.sections):
            for key in sorted(self.sections[sec]):
                lines.append(f"{sec}.{key} = {self.sections[sec][key]!r}")
        return "\n".join(lines) + "\n"

    @property
    def full_scale(self):
        return bool(self["experiment"]["full_scale"])

    def with_full_scale(self):
        """Switch a GM config to the 1e6-iteration run."""
        over = {"experiment": {"full_scale": True}}
        if self["experiment"]["kind"] == "gm":
            over["run"] = dict(GM_FULL)
        return self.replace(**over)


# ---------------------------------------------------------------- builders


def build_graph(cfg, n=None):
    top = cfg["topology"]
    n = int(top["n"] if n is None else n)
    if top["kind"] == "ring":
        return topology.Graph(1) if n == 1 else topology.ring(n)
    if top["kind"] == "edges":
        return topology.from_edges(n, [tuple(e) for e in top["edges"]])
    if top["kind"] == "complete":
        return topology.from_edges(n, [(i, j) for i in range(n) for j in range(i + 1, n)])
    raise ConfigError(f"unknown topology.kind {top['kind']!r}")


def solve_interval(alpha_start, alpha_end, iterations, delta2):
    """``(alpha0, b1)`` so that ``alpha0 / (b1 + k)^delta2`` runs from start to end over the run.

    The step at ``k = 0`` is ``alpha_start`` and at ``k = iterations`` it is
    ``alpha_end``.
    """
    if not 0 < alpha_end < alpha_start:
        raise ConfigError("need 0 < alpha_end < alpha_start")
    ratio = (alpha_start / alpha_end) ** (1.0 / delta2)
    b1 = iterations / (ratio - 1.0)
    return alpha_start * b1 ** delta2, b1


def build_schedule(cfg, graph, engine="dula"):
    """Schedule from whichever parameterization the config supplies.

    Priority: explicit ``a``/``b``; then ``alpha0``/``b1`` (offset form);
    then an ``alpha_start``/``alpha_end`` interval spanning
    ``interval_iterations`` steps (default: the run length; a shorter run
    follows the same step sequence and stops early). When no consensus gain
    is given, ``b = b_fraction / sigma_max``.
    """
    s = cfg["schedule"]
    d1, d2 = float(s["delta1"]), float(s["delta2"])
    if s["b"] is not None:
        b = float(s["b"])
    elif s["beta0"] is not None:
        b = float(s["beta0"])
    else:
        smax = topology.spectral_summary(graph).sigma_max
        b = float(s["b_fraction"]) / smax if smax > 0 else 1.0
    if s["a"] is not None:
        return schedules.StepSchedule(float(s["a"]), b, d1, d2,
                                      float(s["offset1"]), float(s["offset2"]))
    if s["alpha0"] is not None:
        alpha0 = float(s["alpha0"])
        if engine == "cula" and cfg["experiment"]["kind"] == "logreg":
            alpha0 = CULA_LOGREG_ALPHA0
        b1 = float(s["b1"])
        b2 = float(s["b2"] if s["b2"] is not None else s["b1"])
        return schedules.StepSchedule.from_offset_form(alpha0, b1, d2, b, b2, d1)
    if s["alpha_start"] is not None:
        span = s["interval_iterations"] or cfg["run"]["iterations"]
        alpha0, b1 = solve_interval(float(s["alpha_start"]), float(s["alpha_end"]), int(span), d2)
        log.info("step interval solved: alpha0=%.6g b1=%.6g", alpha0, b1)
        return schedules.StepSchedule.from_offset_form(alpha0, max(b1, 1.0), d2, b, max(b1, 1.0), d1)
    raise ConfigError("schedule needs a, alpha0 or alpha_start")


def gm_data(cfg):
    m = cfg["model"]
    gen = np.random.default_rng(int(m["data_seed"]))
    return models.generate_gm_data(gen, int(m["count"]), float(m["theta1"]), float(m["theta2"]),
                                   float(m["sigmax_sq"]))


def build_model(cfg, n, seed=0):
    """Model with ``n`` shards (logistic models are built by the logistic experiment)."""
    m = cfg["model"]
    kind = m["kind"]
    if kind == "quadratic":
        d = int(m["d_w"])
        prec = np.asarray(m["precision"], dtype=float)
        if prec.ndim == 0:
            prec = float(prec) * np.eye(d)
        elif prec.ndim == 1:
            prec = np.diag(prec)
        if float(m["spread"]) > 0:
            return models.QuadraticGaussian.heterogeneous(prec, n, float(m["spread"]),
                                                          rng.stream(seed, 0, rng.DATA))
        return models.QuadraticGaussian(prec, n_agents=n)
    if kind == "gm":
        data = gm_data(cfg)
        parts = None if n == 1 else datasets.partition(len(data), n, int(m["data_seed"])).shards()
        return models.GaussianMixtureTiedMeans(data, parts, float(m["sigma1_sq"]),
                                               float(m["sigma2_sq"]), float(m["sigmax_sq"]))
    raise ConfigError(f"model.kind {kind!r} is not supported here")


def run_config(cfg, engine, seed, iterations=None):
    r = cfg["run"]
    iterations = int(r["iterations"] if iterations is None else iterations)
    return sampler.RunConfig(
        engine=engine, iterations=iterations, burn_in=int(r["burn_in"]),
        thinning=int(r["thinning"]), batch_size=int(r["batch_size"]), seed=int(seed),
        record_every=int(r["record_every"]), init_scale=float(r["init_scale"]),
        record_samples=bool(r["record_samples"]))


def replication_seeds(cfg):
    base = int(cfg["experiment"]["base_seed"])
    return [base + i for i in range(int(cfg["experiment"]["replications"]))]


def resolve_threads(threads):
    if threads in (0, None):
        return os.cpu_count() or 1
    return int(threads)


def _pmap(fn, items, threads):
    threads = min(resolve_threads(threads), len(items))
    if threads <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------- CSV output


def _write_csv(path, header, rows):
    path = Path(path)
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    except OSError as err:
        raise OSError(f"cannot write {path}: {err}") from err


def _fmt(x):
    return repr(float(x))


def emit_csv(run_log, out_dir, config_hash=None, accuracy_std=None):
    """Write ``samples.csv``, ``consensus.csv``, ``accuracy.csv`` and ``run.json``.

    Every CSV carries a trailing ``config_hash`` column. ``accuracy_std``
    (same length as the accuracy log) fills ``std_acc``; a single run has
    zero spread.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    h = config_hash or run_log.metadata.get("config_hash", "")
    S = run_log.samples
    d = S.shape[-1] if S.ndim == 3 else 0
    rows = []
    for it, snap in zip(run_log.sample_iters.tolist(), S):
        for i, w in enumerate(snap):
            rows.append([it, i, *map(_fmt, w), h])
    if d == 0:
        d = int(run_log.metadata.get("d_w", 0))
    _write_csv(out / "samples.csv", ["iter", "agent", *[f"w{j}" for j in range(d)], "config_hash"], rows)

    cons = [[int(it), _fmt(e), _fmt(b), h] for it, e, b in run_log.consensus]
    _write_csv(out / "consensus.csv", ["iter", "error_sq", "bound", "config_hash"], cons)

    acc = run_log.accuracy
    std = np.zeros(len(acc)) if accuracy_std is None else np.asarray(accuracy_std, dtype=float)
    arows = [[int(it), int(a), _fmt(m), _fmt(s), h] for (it, a, m), s in zip(acc, std)]
    _write_csv(out / "accuracy.csv", ["iter", "agent", "mean_acc", "std_acc", "config_hash"], arows)

    meta = dict(run_log.metadata)
    meta.setdefault("config_hash", h)
    (out / "run.json").write_text(json.dumps(meta, indent=2, sort_keys=True, default=str) + "\n",
                                  encoding="utf-8")
    return [out / n for n in ("samples.csv", "consensus.csv", "accuracy.csv", "run.json")]


def read_csv(path):
    """Read one of the emitted CSV files as ``(header, rows)`` with numeric fields as float."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[_num(v) for v in row] for row in reader]
    return header, rows


def _num(v):
    try:
        return float(v)
    except ValueError:
        return v


def load_run(run_dir):
    """Rebuild a :class:`sampler.RunLog` from a run directory."""
    run_dir = Path(run_dir)
    meta = json.loads((run_dir / "run.json").read_text(encoding="utf-8"))
    header, rows = read_csv(run_dir / "samples.csv")
    d = len(header) - 3
    n = int(meta.get("n_agents", 1))
    if rows:
        arr = np.array([r[:-1] for r in rows], dtype=float)
        iters = arr[::n, 0].astype(np.int64)
        samples = arr[:, 2:2 + d].reshape(len(iters), n, d)
    else:
        iters, samples = np.zeros(0, dtype=np.int64), np.zeros((0, n, d))
    _, crow = read_csv(run_dir / "consensus.csv")
    cons = np.array([r[:3] for r in crow], dtype=float).reshape(-1, 3)
    _, arow = read_csv(run_dir / "accuracy.csv")
    acc = np.array([r[:3] for r in arow], dtype=float).reshape(-1, 3)
    return sampler.RunLog(metadata=meta, sample_iters=iters, samples=samples,
                          consensus=cons, accuracy=acc)


def _stamp(meta, cfg, started):
    meta.update(config_hash=cfg.config_hash(), started=started,
                finished=time.strftime("%Y-%m-%dT%H:%M:%S"), config=cfg.sections)
    return meta


# ---------------------------------------------------------------- custom runs


def _custom_one(args):
    cfg, seed, engine = args
    n = int(cfg["topology"]["n"]) if engine == "dula" else 1
    graph = build_graph(cfg, n)
    model = build_model(cfg, n, seed)
    sched = build_schedule(cfg, graph, engine)
    started = time.strftime("%Y-%m-%dT%H:%M:%S")
    bound = None
    if engine == "dula" and sched.delta1 > 0 and not (sched.offset1 or sched.offset2):
        try:
            c = diagnostics.bound_constants(graph, sched, mu_g=1.0, d_w=model.d_w,
                                            E_w0_sq=(n - 1) * model.d_w * float(cfg["run"]["init_scale"]) ** 2)
            bound = lambda k: diagnostics.consensus_bound(c, k - 1)  # noqa: E731
        except (InvalidParameterError, BoundUnavailableError):
            bound = None
    t0 = time.perf_counter()
    out = sampler.run(run_config(cfg, engine, seed), graph, sched, model, bound=bound)
    out.metadata["seconds"] = time.perf_counter() - t0
    out.metadata["d_w"] = model.d_w
    _stamp(out.metadata, cfg, started)
    return out


def run_custom(cfg, out_dir=None):
    """One run per (engine, replication) with the configured topology and model."""
    jobs = [(cfg, s, e) for e in cfg["experiment"]["engines"] for s in replication_seeds(cfg)]
    logs = _pmap(_custom_one, jobs, cfg["experiment"]["threads"])
    if out_dir is not None:
        for (c, s, e), lg in zip(jobs, logs):
            emit_csv(lg, Path(out_dir) / f"{e}_seed{s}")
    return logs


# ---------------------------------------------------------------- Gaussian mixture


@dataclass
class GMRow:
    n: int
    engine: str
    seed: int
    distance: float
    converged: bool
    min_mode_mass: tuple
    seconds: float


@dataclass
class GMResult:
    rows: list
    reference: diagnostics.DiscreteDistribution
    histograms: dict
    logs: dict
    agent_mode_masses: dict
    schedule_params: dict


def _gm_one(args):
    cfg, n, seed = args
    engine = "cula" if n == 1 else "dula"
    graph = build_graph(cfg, n)
    model = build_model(cfg, n)
    sched = build_schedule(cfg, graph, engine)
    started = time.strftime("%Y-%m-%dT%H:%M:%S")
    t0 = time.perf_counter()
    out = sampler.run(run_config(cfg, engine, seed), graph, sched, model)
    out.metadata.update(seconds=time.perf_counter() - t0, d_w=2,
                        schedule=dict(a=sched.a, b=sched.b, delta1=sched.delta1,
                                      delta2=sched.delta2, offset1=sched.offset1,
                                      offset2=sched.offset2))
    _stamp(out.metadata, cfg, started)
    return out


def run_gm_experiment(cfg, out_dir=None):
    """Posterior quality of the tied-means mixture for each network size.

    Size 1 runs the centralized chain. Post-burn-in samples of all agents are
    pooled, binned on the reference grid and compared to the exact grid
    posterior with entropic OT.
    """
    dg = cfg["diagnostics"]
    grid = diagnostics.GridSpec(step=float(dg["grid_step"]))
    m = cfg["model"]
    reference = diagnostics.gm_reference_posterior(
        gm_data(cfg), grid, sigma1_sq=float(m["sigma1_sq"]), sigma2_sq=float(m["sigma2_sq"]),
        sigmax_sq=float(m["sigmax_sq"]))
    sizes = [int(n) for n in cfg["experiment"]["sizes"]]
    jobs = [(cfg, n, s) for n in sizes for s in replication_seeds(cfg)]
    logs = _pmap(_gm_one, jobs, cfg["experiment"]["threads"])

    rows, hists, by_key, masses = [], {}, {}, {}
    for (_, n, seed), lg in zip(jobs, logs):
        hist = diagnostics.histogram_on_grid(lg.pooled_samples(), grid)
        res = diagnostics.sinkhorn_distance(hist, reference, float(dg["lam"]),
                                            convention=dg["convention"])
        per_agent = np.array([diagnostics.mode_masses(lg.samples[:, i], radius=float(dg["mode_radius"]))
                              for i in range(lg.samples.shape[1])])
        rows.append(GMRow(n, lg.metadata["engine"], seed, res.distance, res.converged,
                          tuple(per_agent.min(axis=0)), lg.metadata["seconds"]))
        hists[(n, seed)] = hist
        by_key[(n, seed)] = lg
        masses[(n, seed)] = per_agent
        lg.metadata["sinkhorn"] = res.distance

    any_graph = build_graph(cfg, max(sizes))
    sched = build_schedule(cfg, any_graph)
    result = GMResult(rows, reference, hists, by_key, masses,
                      {"alpha0": sched.a, "b1": sched.offset2 + 1, "delta2": sched.delta2,
                       "delta1": sched.delta1})
    if out_dir is not None:
        write_gm_outputs(result, cfg, out_dir)
    return result


def write_gm_outputs(result, cfg, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    h = cfg.config_hash()
    _write_csv(out / "gm_table.csv",
               ["n", "engine", "seed", "d_M", "converged", "min_mass_mode1", "min_mass_mode2",
                "seconds", "config_hash"],
               [[r.n, r.engine, r.seed, _fmt(r.distance), int(r.converged),
                 _fmt(r.min_mode_mass[0]), _fmt(r.min_mode_mass[1]), f"{r.seconds:.2f}", h]
                for r in result.rows])
    ref = result.reference
    _write_csv(out / "reference_grid.csv", ["theta1", "theta2", "weight", "config_hash"],
               [[_fmt(p[0]), _fmt(p[1]), _fmt(w), h] for p, w in zip(ref.points, ref.weights)])
    for (n, seed), hist in result.histograms.items():
        _write_csv(out / f"posterior_n{n}_seed{seed}.csv", ["theta1", "theta2", "weight", "config_hash"],
                   [[_fmt(p[0]), _fmt(p[1]), _fmt(w), h] for p, w in zip(hist.points, hist.weights)])
        emit_csv(result.logs[(n, seed)], out / f"n{n}_seed{seed}", h)


# ---------------------------------------------------------------- logistic regression


def load_logreg_data(cfg, seed):
    """a9a-style data from disk, else the synthetic fallback when enabled."""
    m = cfg["model"]
    path = datasets.find_dataset(str(m["dataset"]))
    if path is not None:
        log.info("using dataset %s", path)
        return datasets.parse_libsvm(path, int(m["n_features"])), str(path)
    if not m["synthetic_fallback"]:
        raise ConfigError(f"dataset {m['dataset']!r} not found and synthetic fallback is off")
    d = int(m["synthetic_dim"])
    gen = rng.stream(int(m["data_seed"]), 0, rng.DATA)
    true_w = gen.standard_normal(d)
    true_w *= float(m["synthetic_norm"]) / np.linalg.norm(true_w)
    log.warning("dataset %r not found; using synthetic data", m["dataset"])
    return datasets.synth_logreg(gen, int(m["synthetic_rows"]), d, true_w), "synthetic"


@dataclass
class LogregRun:
    seed: int
    engine: str
    n_agents: int
    epochs: np.ndarray
    accuracy: np.ndarray  # (epochs, agents)
    map_accuracy: float
    log: sampler.RunLog


def _logreg_one(args):
    cfg, seed, engine, n, data = args
    train, test = datasets.train_test_split(data, float(cfg["model"]["train_fraction"]), seed)
    Xtr, ytr = train.dense()
    Xte, yte = test.dense()
    prior = float(cfg["model"]["prior_scale"])
    batch = int(cfg["run"]["batch_size"])
    epochs = int(cfg["run"]["epochs"])
    if engine == "dula":
        part = datasets.partition(len(train), n, seed).shards()
        model = models.BayesianLogisticRegression(Xtr, ytr, part, prior)
        graph = build_graph(cfg, n)
    else:
        model = models.BayesianLogisticRegression(Xtr, ytr, None, prior)
        graph = topology.Graph(1)
    shard = max(model.shard_size(i) for i in range(model.n_agents))
    per_epoch = math.ceil(shard / batch) if batch else 1
    sched = build_schedule(cfg, graph, engine)
    rc = run_config(cfg, engine, seed, iterations=per_epoch * epochs)
    rc.record_every = per_epoch
    rc.burn_in = min(int(cfg["run"]["burn_in"]) or per_epoch, rc.iterations - 1)
    rc.record_samples = False
    started = time.strftime("%Y-%m-%dT%H:%M:%S")
    t0 = time.perf_counter()
    out = sampler.run(rc, graph, sched, model, test_set=(Xte, yte))
    full = models.BayesianLogisticRegression(Xtr, ytr, None, prior)
    w_map = full.map_estimate()
    map_acc = float(((models.predict_proba(Xte, w_map) >= 0.5) == (yte >= 0.5)).mean())
    out.metadata.update(seconds=time.perf_counter() - t0, d_w=model.d_w, map_accuracy=map_acc,
                        iterations_per_epoch=per_epoch)
    _stamp(out.metadata, cfg, started)
    acc = out.accuracy
    n_ag = graph.n if engine == "dula" else 1
    curve = acc[:, 2].reshape(-1, n_ag)
    return LogregRun(seed, engine, n_ag, np.arange(1, len(curve) + 1), curve, map_acc, out)


@dataclass
class LogregResult:
    runs: list
    source: str

    def curves(self, engine, n=None):
        sel = [r for r in self.runs if r.engine == engine and (n is None or r.n_agents == n)]
        return np.stack([r.accuracy for r in sel])

    def final_table(self):
        """Rows ``(engine, n_agents, mean_final, std_final, max_agent_spread, map_mean)``."""
        rows = []
        keys = sorted({(r.engine, r.n_agents) for r in self.runs})
        for engine, n in keys:
            sel = [r for r in self.runs if r.engine == engine and r.n_agents == n]
            final = np.array([r.accuracy[-1] for r in sel])
            rows.append((engine, n, float(final.mean()), float(final.mean(axis=1).std()),
                         float((final.max(axis=1) - final.min(axis=1)).max()),
                         float(np.mean([r.map_accuracy for r in sel]))))
        return rows


def run_logreg_experiment(cfg, out_dir=None):
    """Test accuracy of centralized and decentralized mini-batch sampling per replication."""
    data, source = load_logreg_data(cfg, int(cfg["experiment"]["base_seed"]))
    jobs = []
    for engine in cfg["experiment"]["engines"]:
        sizes = [int(n) for n in cfg["experiment"]["sizes"]] if engine == "dula" else [1]
        for n in sizes:
            for seed in replication_seeds(cfg):
                jobs.append((cfg, seed, engine, n, data))
    runs = _pmap(_logreg_one, jobs, cfg["experiment"]["threads"])
    result = LogregResult(runs, source)
    if out_dir is not None:
        write_logreg_outputs(result, cfg, out_dir)
    return result


def write_logreg_outputs(result, cfg, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    h = cfg.config_hash()
    for engine, n, *_ in result.final_table():
        C = result.curves(engine, n)
        mean, std = diagnostics.aggregate_runs(C)
        rows = [[int(e), a, _fmt(mean[t, a]), _fmt(std[t, a]), h]
                for t, e in enumerate(result.runs[0].epochs) for a in range(C.shape[2])]
        _write_csv(out / f"accuracy_{engine}_n{n}.csv",
                   ["epoch", "agent", "mean_acc", "std_acc", "config_hash"], rows)
    _write_csv(out / "logreg_table.csv",
               ["engine", "n_agents", "mean_final_acc", "std_final_acc", "agent_spread", "map_acc",
                "source", "config_hash"],
               [[e, n, _fmt(m), _fmt(s), _fmt(sp), _fmt(mp), result.source, h]
                for e, n, m, s, sp, mp in result.final_table()])
    for r in result.runs:
        emit_csv(r.log, out / f"{r.engine}_n{r.n_agents}_seed{r.seed}", h)


def format_table(rows, header):
    buf = io.StringIO()
    buf.write("  ".join(f"{h:>12}" for h in header) + "\n")
    for row in rows:
        buf.write("  ".join(f"{v:>12.4f}" if isinstance(v, float) else f"{v!s:>12}" for v in row) + "\n")
    return buf.getvalue()
