"""Seeded experiment sweeps: run algorithms over (N, H) grids, write CSV, fit exponents."""

from __future__ import annotations

import csv
import io
import json
import os
import time
import warnings
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields

import numpy as np

from .data import collect_dataset, split_dataset, visited_states
from .estimation import bc_policy, empirical_occupancy, uniform_value_error, worst_case_suboptimality
from .instances import INSTANCE_NAMES, make_instance
from .mdp import policy_value
from .mimic_md import mimic_md
from .mixture import (CoefficientContext, four_state_block_policy, mimic_mixture, state_two_counts,
                      three_state_composite)

ALGORITHMS = ("bc", "empirical", "mimic-md", "mimic-mixture", "four-state-block", "three-state-composite")
METRICS = ("reward", "worst-case")
HEADER = ["algorithm", "N", "H", "replication", "suboptimality", "runtime_ms", "aux"]


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    """One sweep. Loaded from JSON; unknown keys are rejected."""

    instance: str
    algorithms: list[str]
    N_grid: list[int]
    H_grid: list[int]
    replications: int = 100
    seed: int = 0
    output: str = "results.csv"
    metric: str = "reward"
    expert: str = "prior"
    reward: str | None = None
    mode: str = "augmented"
    lp_backend: str = "simplex"
    default_action: int = 0
    c_block: float = 3.0
    target_rule: str = "lowest"
    target_state: int = 0
    timing: bool = False
    threads: int = 1

    def __post_init__(self):
        if isinstance(self.algorithms, str):
            self.algorithms = [self.algorithms]
        self.validate()

    def validate(self) -> None:
        if not self.N_grid or not self.H_grid:
            raise ConfigError("N_grid and H_grid must be nonempty")
        if not self.algorithms:
            raise ConfigError("at least one algorithm is required")
        if self.replications < 1:
            raise ConfigError("replications must be at least 1")
        for a in self.algorithms:
            if a not in ALGORITHMS:
                raise ConfigError(f"unknown algorithm {a!r}; choose from {ALGORITHMS}")
        if self.instance not in INSTANCE_NAMES:
            raise ConfigError(f"unknown instance {self.instance!r}; choose from {INSTANCE_NAMES}")
        if self.metric not in METRICS:
            raise ConfigError(f"metric must be one of {METRICS}")
        if any(n < 2 for n in self.N_grid) or any(h < 2 for h in self.H_grid):
            raise ConfigError("grid values must be at least 2")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path: str) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ResultRow:
    algorithm: str
    N: int
    H: int
    replication: int
    suboptimality: float
    runtime_ms: float = 0.0
    aux: str = ""
    error: bool = False

    @property
    def key(self) -> tuple:
        return (self.algorithm, self.N, self.H, self.replication)

    def to_csv(self) -> list[str]:
        return [self.algorithm, str(self.N), str(self.H), str(self.replication),
                format_float(self.suboptimality), format_float(self.runtime_ms), self.aux]


def format_float(x: float) -> str:
    return "nan" if x != x else repr(float(x))


def replication_seed(master: int, algorithm: str, N: int, H: int, rep: int) -> np.random.SeedSequence:
    """Independent stream per grid point, so any subset of the sweep can be rerun."""
    return np.random.SeedSequence([master, zlib.crc32(algorithm.encode()), N, H, rep])


def _measure(config, mdp, expert, learner) -> float:
    if config.metric == "worst-case":
        return worst_case_suboptimality(mdp, expert, learner)
    return policy_value(mdp, expert) - policy_value(mdp, learner)


def run_replication(config: ExperimentConfig, algorithm: str, N: int, H: int, rep: int) -> ResultRow:
    """One (algorithm, N, H, replication) cell; errors come back as flagged rows."""
    rng = np.random.default_rng(replication_seed(config.seed, algorithm, N, H, rep))
    start = time.perf_counter()
    try:
        bundle = make_instance(config.instance, N, H, rng, expert=config.expert, reward=config.reward)
        mdp, expert = bundle.mdp, bundle.expert
        data = collect_dataset(mdp, expert, N, rng)
        aux = ""
        if algorithm == "bc":
            learner = bc_policy(visited_states(data, mdp.num_states), mdp, config.default_action)
            sub = _measure(config, mdp, expert, learner)
        elif algorithm == "empirical":
            occ = empirical_occupancy(data, mdp.num_states, mdp.num_actions)
            sub = uniform_value_error(mdp, expert, occ)
        elif algorithm == "mimic-md":
            res = mimic_md(mdp, data, rng, config.mode, backend=config.lp_backend)
            sub = _measure(config, mdp, expert, res.policy)
            aux = f"objective={res.objective:.10g}"
        elif algorithm == "mimic-mixture":
            d1, d2 = split_dataset(data, rng)
            known = visited_states(d1, mdp.num_states)
            ctx = CoefficientContext(mdp, known, (H - 1, config.target_state))
            res = mimic_mixture(mdp, d2, known, ctx.target, len(d2), rng, context=ctx)
            sub = _measure(config, mdp, expert, res.policy)
            aux = f"alpha={res.alpha_hat:.10g};overflow={int(res.overflow)}"
        elif algorithm == "four-state-block":
            if config.instance != "four-state":
                raise ConfigError("four-state-block runs on the four-state instance only")
            X, U = state_two_counts(data)
            learner = four_state_block_policy(X, U, N, H, config.c_block)
            sub = _measure(config, mdp, expert, learner)
        elif algorithm == "three-state-composite":
            res = three_state_composite(mdp, data, rng, config.target_rule, config.mode,
                                        backend=config.lp_backend)
            sub = _measure(config, mdp, expert, res.policy)
            aux = f"branch={res.branch}"
            if res.alpha_hat is not None:
                aux += f";alpha={res.alpha_hat:.10g};overflow={int(res.overflow)}"
        else:
            raise ConfigError(f"unknown algorithm {algorithm!r}")
        if not -1e-8 <= sub <= H + 1e-8:
            raise ArithmeticError(f"suboptimality {sub} outside [0, H]")
        err = False
    except Exception as exc:  # attach to the row, keep the sweep going
        sub, aux, err = float("nan"), f"error={type(exc).__name__}: {exc}".replace(",", ";"), True
    elapsed = (time.perf_counter() - start) * 1e3 if config.timing else 0.0
    return ResultRow(algorithm, N, H, rep, float(sub), round(elapsed, 3), aux, err)


def grid(config: ExperimentConfig) -> list[tuple[str, int, int, int]]:
    return [(a, n, h, r) for a in config.algorithms for n in config.N_grid for h in config.H_grid
            for r in range(config.replications)]


def _run_cell(args):
    config, cell = args
    return run_replication(config, *cell)


def run_experiment(config: ExperimentConfig, threads: int | None = None,
                   skip: set | None = None) -> list[ResultRow]:
    """All grid cells not in ``skip``, in deterministic grid order."""
    cells = [c for c in grid(config) if not skip or c not in skip]
    threads = threads or config.threads
    if threads > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(_run_cell, [(config, c) for c in cells], chunksize=8))
    return [run_replication(config, *c) for c in cells]


# ---------------------------------------------------------------------------
# exponent fits


@dataclass(frozen=True)
class ScalingFit:
    slope: float
    intercept: float
    r2: float
    x: tuple
    y: tuple


def aggregate(values, how="mean") -> float:
    values = np.asarray(values, dtype=float)
    if how == "mean":
        return float(values.mean())
    if isinstance(how, str) and how.startswith("q"):
        how = float(how[1:])
    return float(np.quantile(values, how))


def fit_scaling_exponent(rows, axis: str = "H", how="mean") -> ScalingFit:
    """Least squares of ``log(aggregate suboptimality)`` on ``log(axis value)``.

    ``how`` is ``"mean"`` or a quantile level (``0.99`` or ``"q0.99"``).
    Error rows are ignored; nonpositive aggregates are dropped with a warning.
    """
    if axis not in ("N", "H"):
        raise ValueError("axis must be 'N' or 'H'")
    groups: dict[int, list[float]] = {}
    for row in rows:
        if row.error or row.suboptimality != row.suboptimality:
            continue
        groups.setdefault(getattr(row, axis), []).append(row.suboptimality)
    xs, ys = [], []
    for x in sorted(groups):
        y = aggregate(groups[x], how)
        if y <= 0:
            warnings.warn(f"dropping {axis}={x}: aggregate {y} is not positive")
            continue
        xs.append(x)
        ys.append(y)
    if len(xs) < 3:
        raise ValueError(f"need at least 3 positive points along {axis}, got {len(xs)}")
    lx, ly = np.log(xs), np.log(ys)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = float(((ly - ly.mean()) ** 2).sum())
    r2 = 1.0 - float((resid**2).sum()) / ss_tot if ss_tot > 0 else 1.0
    return ScalingFit(float(slope), float(intercept), r2, tuple(xs), tuple(ys))


def summary_lines(config: ExperimentConfig, rows: list[ResultRow]) -> list[str]:
    lines = []
    for how in ("mean", 0.99):
        tag = "mean" if how == "mean" else "q0.99"
        for algo in config.algorithms:
            mine = [r for r in rows if r.algorithm == algo]
            for axis, other, others in (("H", "N", config.N_grid), ("N", "H", config.H_grid)):
                for val in others:
                    sel = [r for r in mine if getattr(r, other) == val]
                    try:
                        with warnings.catch_warnings():
                            warnings.simplefilter("ignore")
                            fit = fit_scaling_exponent(sel, axis, how)
                    except ValueError:
                        continue
                    lines.append(f"# fit algorithm={algo} axis={axis} {other}={val} aggregate={tag} "
                                 f"slope={fit.slope:.6f} intercept={fit.intercept:.6f} r2={fit.r2:.6f}")
    errors = sum(r.error for r in rows)
    lines.append(f"# rows={len(rows)} errors={errors}")
    return lines


# ---------------------------------------------------------------------------
# CSV


def write_csv(path: str, config: ExperimentConfig, rows: list[ResultRow]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(HEADER)
    for row in rows:
        writer.writerow(row.to_csv())
    for line in summary_lines(config, rows):
        buf.write(line + "\n")
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(buf.getvalue())
    os.replace(tmp, path)


def read_csv(path: str) -> list[ResultRow]:
    rows = []
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader, None)
    if header != HEADER:
        raise ValueError(f"{path}: unexpected header {header}")
    for rec in reader:
        if not rec:
            continue
        algo, n, h, rep, sub, ms, aux = rec
        rows.append(ResultRow(algo, int(n), int(h), int(rep), float(sub), float(ms), aux,
                              aux.startswith("error=")))
    return rows


def sweep(config: ExperimentConfig, resume: bool = False, threads: int | None = None) -> list[ResultRow]:
    """Run the grid and write the CSV with its summary block.

    With ``resume`` the rows already present in ``config.output`` are kept and
    only missing cells are computed; a complete file is rewritten unchanged.
    """
    config.validate()
    existing: dict[tuple, ResultRow] = {}
    if resume and os.path.exists(config.output):
        existing = {r.key: r for r in read_csv(config.output)}
    wanted = grid(config)
    new = run_experiment(config, threads, skip=set(existing))
    by_key = dict(existing)
    by_key.update({r.key: r for r in new})
    rows = [by_key[c] for c in wanted]
    write_csv(config.output, config, rows)
    return rows


def slope_summary(rows, axis, how="mean") -> dict:
    fit = fit_scaling_exponent(rows, axis, how)
    return {"slope": fit.slope, "intercept": fit.intercept, "r2": fit.r2,
            "x": list(fit.x), "y": list(fit.y)}
