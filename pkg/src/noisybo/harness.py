"""
Seeded experiment runner: noiseless / classic-noisy / relaxed-noisy runs,
exact-problem diagnostics, and trace serialization.

Per-run noise seeds are ``base_seed XOR H(mode, rep)`` where ``H`` is the
first 8 bytes (little endian) of ``blake2b(f"{mode}/{rep}")``.
"""

import csv
import hashlib
import io
import json
import math
import os
import re
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .noise import NoiseSpec, NoisyOracle
from .problems import builtin_problem
from .solver import TRACE_COLUMNS, IterationRecord, SolverConfig, run_solver
from .subproblems import least_squares_multipliers

__all__ = [
    "ConfigError",
    "ExperimentSpec",
    "RunSummary",
    "RunResult",
    "MODES",
    "SCENARIOS",
    "derive_seed",
    "fill_true_columns",
    "run_experiment",
    "scenario",
    "emit_trace",
    "read_trace",
    "format_float",
]

MODES = ("nonoise", "classic", "relaxed")
SCENARIOS = ("SmallDelta0", "MidRunCollapse", "Benign")
ABORT_STATUSES = ("EvaluationFault", "PenaltyOverflow")


class ConfigError(ValueError):
    """Invalid experiment configuration, detected before any run starts."""


@dataclass
class ExperimentSpec:
    """
    One experiment: a problem, an injected noise model, solver overrides and
    the modes to compare, each repeated ``repetitions`` times.
    """

    problem: str
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    solver: dict = field(default_factory=dict)
    modes: tuple = MODES
    repetitions: int = 1
    out: str | None = None
    fmt: str = "csv"
    plot: bool = False

    def validate(self):
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        bad = [m for m in self.modes if m not in MODES]
        if bad or not self.modes:
            raise ConfigError(f"modes must be a non-empty subset of {MODES}, got {self.modes}")
        if self.fmt not in ("csv", "json"):
            raise ConfigError("format must be csv or json")
        try:
            builtin_problem(self.problem)
        except (KeyError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        try:
            SolverConfig(**self.solver)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad solver settings: {exc}") from None

    def to_dict(self):
        return {
            "problem": self.problem,
            "noise": self.noise.to_dict(),
            "solver": dict(sorted(self.solver.items())),
            "modes": list(self.modes),
            "repetitions": self.repetitions,
            "format": self.fmt,
        }


@dataclass
class RunSummary:
    """Outcome of one run, measured on the exact problem at the final iterate."""

    problem: str
    mode: str
    rep: int
    seed: int
    status: str
    iterations: int
    f_true: float
    feas_true: float
    opt_true: float
    min_delta: float
    nu: float
    wall_time: float = field(default=0.0, compare=False)

    # wall time is kept out of the files so identical specs give identical bytes
    FILE_FIELDS = ("problem", "mode", "rep", "seed", "status", "iterations", "f_true",
                   "feas_true", "opt_true", "min_delta", "nu")

    def file_row(self):
        return {k: getattr(self, k) for k in self.FILE_FIELDS}


@dataclass
class RunResult:
    summary: RunSummary
    trace: list
    config: SolverConfig
    x_final: np.ndarray
    path: Path | None = None


def derive_seed(base_seed, mode, rep):
    digest = hashlib.blake2b(f"{mode}/{rep}".encode(), digest_size=8).digest()
    return (int(base_seed) ^ int.from_bytes(digest, "little")) & (2 ** 64 - 1)


def true_measures(problem, x):
    """Exact ``f``, ``||c||``, ``||A^T lam - g||`` (least-squares ``lam``) and ``||A^T c||``."""
    c = problem.eval_c(x)
    g = problem.eval_g(x)
    A = np.atleast_2d(problem.eval_A(x)).reshape(problem.m, problem.n)
    lam = least_squares_multipliers(g, A)
    return (problem.eval_f(x), float(np.linalg.norm(c)), float(np.linalg.norm(A.T @ lam - g)),
            float(np.linalg.norm(A.T @ c)))


def fill_true_columns(problem, trace):
    """Fill the ``*_true`` columns of ``trace`` in place from recorded iterates."""
    for rec in trace:
        rec.f_true, rec.feas_true, rec.opt_true, rec.feas_stat_true = true_measures(problem, rec.x)
    return trace


def _mode_config(spec, mode, noise):
    base = dict(spec.solver)
    if mode == "relaxed":
        base.update(mode="relaxed", eps_f=noise.eps_f, eps_c=noise.eps_c)
    else:
        base.update(mode="classic", eps_f=noise.eps_f, eps_c=noise.eps_c)
    return SolverConfig(**base)


def _run_one(spec, problem, mode, rep):
    seed = derive_seed(spec.noise.seed, mode, rep)
    noise = spec.noise.zeroed() if mode == "nonoise" else spec.noise
    noise = NoiseSpec(noise.eps_f, noise.eps_c, noise.eps_g, noise.eps_A, noise.eps_W,
                      noise.distribution, seed)
    cfg = _mode_config(spec, mode, noise)
    oracle = NoisyOracle(problem, noise)
    t0 = time.perf_counter()
    state, trace, status = run_solver(oracle, cfg)
    wall = time.perf_counter() - t0
    fill_true_columns(problem, trace)
    f, feas, opt, _ = true_measures(problem, state.x)
    summary = RunSummary(
        problem=spec.problem, mode=mode, rep=rep, seed=seed, status=status,
        iterations=len(trace), f_true=f, feas_true=feas, opt_true=opt,
        min_delta=min([cfg.delta0] + [r.delta for r in trace] + [state.delta]),
        nu=state.nu, wall_time=wall,
    )
    return RunResult(summary, trace, cfg, state.x.copy())


def _tag(name):
    return re.sub(r"[^A-Za-z0-9]+", "_", name).strip("_")


def _prepare_out(out):
    path = Path(out)
    try:
        path.mkdir(parents=True, exist_ok=True)
        with tempfile.NamedTemporaryFile(dir=path):
            pass
    except OSError as exc:
        raise ConfigError(f"output path {path} is not writable: {exc}") from None
    return path


def run_experiment(spec):
    """
    Execute every (mode, repetition) pair of ``spec``.

    When ``spec.out`` is set, one trace file per run and a ``summary`` index
    are written there (plus PNG figures when ``spec.plot``).

    Raises
    ------
    ConfigError
        Before any run, for an unknown problem, bad settings or an
        unwritable output path.
    """
    spec.validate()
    out = _prepare_out(spec.out) if spec.out is not None else None
    problem = builtin_problem(spec.problem)
    results = []
    for rep in range(spec.repetitions):
        for mode in spec.modes:
            res = _run_one(spec, problem, mode, rep)
            if out is not None:
                res.path = out / f"{_tag(spec.problem)}_{mode}_rep{rep:02d}.{spec.fmt}"
                emit_trace(res.trace, spec.fmt, res.path,
                           header={"spec": spec.to_dict(), "run": res.summary.file_row()})
            results.append(res)
    if out is not None:
        _write_summary([r.summary for r in results], spec, out / f"summary.{spec.fmt}")
        if spec.plot:
            from .plotting import plot_experiment

            plot_experiment(results, out, _tag(spec.problem), problem=problem, noise=spec.noise)
    return results


def scenario(name, repetitions=None, seed=0, max_iter=500):
    """
    Preset experiments.

    ``SmallDelta0``: HS7, noise 0.1 on f, c, g, A, initial radius 1e-7.
    ``MidRunCollapse``: RANK_DEFICIENT_TOY, noise 0.1, initial radius 1.
    ``Benign``: BYRDSPHR, noise 0.1, initial radius 1e-7.
    """
    key = name.replace("-", "").replace("_", "").lower()
    table = {
        "smalldelta0": ("HS7", 1e-7),
        "midruncollapse": ("RANK_DEFICIENT_TOY", 1.0),
        "benign": ("BYRDSPHR", 1e-7),
    }
    if key not in table:
        raise ConfigError(f"unknown scenario {name!r}; known: {', '.join(SCENARIOS)}")
    problem, delta0 = table[key]
    return ExperimentSpec(
        problem=problem,
        noise=NoiseSpec.uniform(0.1, seed=seed),
        solver={"delta0": delta0, "max_iter": max_iter},
        modes=MODES,
        repetitions=10 if repetitions is None else repetitions,
    )


def format_float(value):
    """17 significant digits; round-trips every finite double."""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    value = float(value)
    if math.isnan(value):
        return "nan"
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return f"{value:.17g}"


def _atomic_write(path, text):
    path = Path(path)
    try:
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def _json_value(v):
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    return float(v)


def emit_trace(trace, fmt, path, header=None):
    """
    Write ``trace`` as CSV (fixed columns, 17 significant digits) or JSON
    (``{"header": ..., "columns": [...], "records": [...]}``).
    """
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for rec in trace:
            row = rec.row()
            writer.writerow([format_float(row[c]) for c in TRACE_COLUMNS])
        text = buf.getvalue()
    elif fmt == "json":
        doc = {
            "header": header or {},
            "columns": list(TRACE_COLUMNS),
            "records": [{c: _json_value(v) for c, v in rec.row().items()} for rec in trace],
        }
        text = json.dumps(doc, indent=1) + "\n"
    else:
        raise ValueError(f"unknown format {fmt!r}")
    _atomic_write(path, text)
    return Path(path)


def read_trace(path):
    """Read a trace written by :func:`emit_trace` back into records."""
    path = Path(path)
    if path.suffix == ".json":
        doc = json.loads(path.read_text())
        return [IterationRecord.from_row(r) for r in doc["records"]]
    records = []
    with path.open(newline="") as fh:
        for row in csv.DictReader(fh):
            vals = {}
            for k, v in row.items():
                if k == "iter":
                    vals[k] = int(v)
                elif k == "accepted":
                    vals[k] = v == "1"
                else:
                    vals[k] = float(v)
            records.append(IterationRecord.from_row(vals))
    return records


def _write_summary(summaries, spec, path):
    rows = [s.file_row() for s in summaries]
    if spec.fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(RunSummary.FILE_FIELDS)
        for row in rows:
            writer.writerow([v if isinstance(v, str) else format_float(v) for v in row.values()])
        text = buf.getvalue()
    else:
        text = json.dumps({"spec": spec.to_dict(), "runs": rows}, indent=1) + "\n"
    _atomic_write(path, text)
