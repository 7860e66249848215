"""Dataset ingestion, seeded multi-trial experiments, metrics and report files."""

from __future__ import annotations

import csv
import io
import json
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .clustering import (
    DEFAULT_GRID,
    DPConfig,
    Schedule,
    Strategy,
    as_dataset,
    baseline_laplace,
    centroid_cost,
    dp_kmeans,
    lloyd,
    sample_init,
)

MATCH_BAND = (0.99, 1.01)
DEFAULT_EPS_LIST = tuple(round(0.1 * i, 1) for i in range(1, 11))
DEFAULT_UNIFORM_ITERATIONS = 5
BUILTIN_DATASETS = {"iris": "iris.csv"}

TRIAL_FIELDS = (
    "algorithm",
    "epsilon",
    "trial",
    "seed",
    "epsilon_total",
    "normalized_cost",
    "prenoise_normalized_cost",
    "match",
    "iterations",
    "lloyd_iterations",
    "iteration_ratio",
    "converged",
)
AGGREGATE_FIELDS = (
    "algorithm",
    "epsilon",
    "trials",
    "mean_normalized_cost",
    "convergence_degree",
    "mean_iteration_ratio",
    "mean_iterations",
    "mean_lloyd_iterations",
    "mean_epsilon_total",
)
PLOT_METRICS = ("mean_normalized_cost", "convergence_degree", "mean_iteration_ratio", "mean_epsilon_total")


class DatasetError(ValueError):
    pass


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Datasets


def _parse_rows(rows, source: str, columns=None):
    out, width = [], None
    for lineno, row in rows:
        if not row or all(not c.strip() for c in row):
            continue
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise DatasetError(f"{source}: row {lineno} has {len(row)} columns, expected {width}")
        picked = row if columns is None else [row[c] for c in columns]
        values = []
        for col, cell in zip(columns if columns is not None else range(width), picked):
            try:
                v = float(cell)
            except ValueError:
                raise DatasetError(f"{source}: row {lineno}, column {col + 1}: cannot parse {cell!r}") from None
            if not math.isfinite(v):
                raise DatasetError(f"{source}: row {lineno}, column {col + 1}: non-finite value {cell!r}")
            values.append(v)
        out.append(values)
    return out, width


def load_csv(path, has_header: bool | None = None, columns: Sequence[int] | None = None) -> np.ndarray:
    """Read a numeric CSV into an ``(N, d)`` array.

    Args:
        path: file path, or the name of a bundled dataset (``"iris"``).
        has_header: skip the first row; ``None`` skips it only if it is not numeric.
        columns: zero-based indices of the columns to keep (drops label columns).
    """
    path_str = str(path)
    if path_str in BUILTIN_DATASETS:
        text = resources.files("dpkm.data").joinpath(BUILTIN_DATASETS[path_str]).read_text()
    else:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise DatasetError(f"cannot read {path_str}: {exc}") from exc
    rows = [(i + 1, r) for i, r in enumerate(csv.reader(io.StringIO(text)))]
    rows = [(i, r) for i, r in rows if r and any(c.strip() for c in r)]
    if not rows:
        raise DatasetError(f"{path_str}: no data rows")
    if has_header is None:
        try:
            [float(c) for c in rows[0][1]]
            has_header = False
        except ValueError:
            has_header = True
    if has_header:
        rows = rows[1:]
    if columns is not None:
        ncols = len(rows[0][1]) if rows else 0
        bad = [c for c in columns if not 0 <= c < ncols]
        if bad:
            raise DatasetError(f"{path_str}: column indices {bad} out of range (file has {ncols})")
    values, _ = _parse_rows(rows, path_str, columns)
    if not values:
        raise DatasetError(f"{path_str}: no data rows")
    return np.asarray(values, dtype=float)


def normalize_unit_box(data) -> np.ndarray:
    """Per-dimension min-max scaling to [0, 1]; constant dimensions map to 0."""
    data = as_dataset(data)
    lo, hi = data.min(axis=0), data.max(axis=0)
    span = hi - lo
    out = np.zeros_like(data)
    varying = span > 0
    out[:, varying] = (data[:, varying] - lo[varying]) / span[varying]
    return out


@dataclass(frozen=True)
class BlobSpec:
    k_true: int = 3
    per_cluster: int = 100
    d: int = 2
    spread: float = 0.05
    seed: int = 0

    @classmethod
    def parse(cls, text: str) -> "BlobSpec":
        """Parse ``k_true,per_cluster,d,spread[,seed]``."""
        parts = [p.strip() for p in text.split(",")]
        if len(parts) not in (4, 5):
            raise ConfigError(f"synthetic spec must be k,per_cluster,d,spread[,seed], got {text!r}")
        try:
            spec = cls(int(parts[0]), int(parts[1]), int(parts[2]), float(parts[3]), int(parts[4]) if len(parts) == 5 else 0)
        except ValueError:
            raise ConfigError(f"malformed synthetic spec {text!r}") from None
        return spec


def synthetic_blobs(k_true: int, per_cluster: int, d: int, spread: float, seed: int) -> np.ndarray:
    """Isotropic Gaussian blobs around uniform random centers, normalized to the unit box."""
    if min(k_true, per_cluster, d) < 1 or not spread > 0:
        raise ConfigError("blob parameters must be >= 1 and spread > 0")
    rng = np.random.default_rng(seed)
    centers = rng.random((k_true, d))
    pts = np.repeat(centers, per_cluster, axis=0) + spread * rng.standard_normal((k_true * per_cluster, d))
    return normalize_unit_box(pts)


# canonical desk-scale blob set used by the acceptance suite
BLOB_SET = BlobSpec(k_true=3, per_cluster=100, d=2, spread=0.05, seed=7)


# ---------------------------------------------------------------------------
# Metrics


def match_flag(dp_prenoise_cost: float, lloyd_cost: float) -> bool:
    """True when the DP cost lies within [0.99, 1.01] of Lloyd's cost."""
    if lloyd_cost == 0:
        return dp_prenoise_cost == 0
    ratio = dp_prenoise_cost / lloyd_cost
    return MATCH_BAND[0] <= ratio <= MATCH_BAND[1]


def normalized_cost(value: float, reference: float) -> float:
    if reference == 0:
        return 1.0 if value == 0 else math.inf
    return value / reference


# ---------------------------------------------------------------------------
# Experiments


@dataclass
class ExperimentConfig:
    """Everything that determines a comparison report.

    ``eps_iter`` / ``eps0`` default to the swept epsilon: each atom step (one
    iteration of one cluster, and the final release) gets the same budget and
    the DP total is accounted bottom-up.
    """

    k: int
    data: str | None = None
    synthetic: BlobSpec | None = None
    has_header: bool | None = None
    columns: tuple[int, ...] | None = None
    trials: int = 300
    eps_list: tuple[float, ...] = DEFAULT_EPS_LIST
    eps_iter: float | None = None
    eps0: float | None = None
    strategies: tuple[str, ...] = ("posterior", "prior")
    baselines: tuple[str, ...] = ("uniform", "halving")
    uniform_iterations: int = DEFAULT_UNIFORM_ITERATIONS
    seed: int = 0
    tol: float = 1e-4
    max_iter: int = 200
    grid: tuple[int, int] = DEFAULT_GRID
    noiseless: bool = False

    def validate(self) -> None:
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if not self.eps_list or any(not e > 0 for e in self.eps_list):
            raise ConfigError("eps values must be positive")
        for name in ("eps_iter", "eps0"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ConfigError(f"{name} must be positive")
        if (self.data is None) == (self.synthetic is None):
            raise ConfigError("exactly one of a dataset path or a synthetic spec is required")
        for s in self.strategies:
            Strategy.parse(s)
        for b in self.baselines:
            if b not in ("uniform", "halving"):
                raise ConfigError(f"unknown baseline {b!r}")
        if self.uniform_iterations < 1:
            raise ConfigError("uniform_iterations must be >= 1")
        if self.tol < 0 or self.max_iter < 1:
            raise ConfigError("tol must be >= 0 and max_iter >= 1")

    def load(self) -> np.ndarray:
        if self.synthetic is not None:
            s = self.synthetic
            return synthetic_blobs(s.k_true, s.per_cluster, s.d, s.spread, s.seed)
        return normalize_unit_box(load_csv(self.data, self.has_header, self.columns))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["eps_list"] = list(self.eps_list)
        out["strategies"] = [Strategy.parse(s).value for s in self.strategies]
        out["baselines"] = list(self.baselines)
        out["grid"] = list(self.grid)
        out["columns"] = None if self.columns is None else list(self.columns)
        return out


def trial_seed(master: int, trial: int, algorithm: str | None = None, eps_index: int | None = None) -> np.random.SeedSequence:
    """Independent, reproducible stream per (trial, algorithm, epsilon)."""
    entropy = [int(master) & 0xFFFFFFFFFFFFFFFF, int(trial)]
    if algorithm is not None:
        entropy.append(zlib.crc32(algorithm.encode()))
        entropy.append(-1 if eps_index is None else int(eps_index))
        entropy[-1] &= 0xFFFFFFFF
    return np.random.SeedSequence(entropy)


def _seed_int(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass
class TrialReport:
    config: dict
    rows: list[dict] = field(default_factory=list)
    aggregates: list[dict] = field(default_factory=list)


def _row(algorithm, eps, trial, seed, eps_total, cost_value, prenoise_cost, ref_cost, iterations, lloyd_iters, converged):
    return {
        "algorithm": algorithm,
        "epsilon": eps,
        "trial": trial,
        "seed": seed,
        "epsilon_total": eps_total,
        "normalized_cost": normalized_cost(cost_value, ref_cost),
        "prenoise_normalized_cost": normalized_cost(prenoise_cost, ref_cost),
        "match": match_flag(prenoise_cost, ref_cost),
        "iterations": iterations,
        "lloyd_iterations": lloyd_iters,
        "iteration_ratio": iterations / lloyd_iters,
        "converged": bool(converged),
    }


def run_trial(config: ExperimentConfig, data: np.ndarray, trial: int) -> list[dict]:
    """All algorithms and budgets for one trial, sharing one initialization."""
    init_ss = trial_seed(config.seed, trial)
    init = sample_init(data, config.k, np.random.default_rng(init_ss))
    ref = lloyd(data, config.k, init, max_iter=max(config.max_iter, 1000))
    ref_cost = centroid_cost(data, ref.centroids)
    dp_config = DPConfig(tol=config.tol, max_iter=config.max_iter, grid=tuple(config.grid), noiseless=config.noiseless)
    rows = []
    for e_idx, eps in enumerate(config.eps_list):
        rows.append(_row("lloyd", eps, trial, _seed_int(init_ss), 0.0, ref_cost, ref_cost, ref_cost, ref.iteration, ref.iteration, ref.converged))
        dp_totals = []
        for s in config.strategies:
            name = Strategy.parse(s).value
            ss = trial_seed(config.seed, trial, name, e_idx)
            eps_iter = config.eps_iter if config.eps_iter is not None else eps
            eps0 = config.eps0 if config.eps0 is not None else eps
            res = dp_kmeans(data, config.k, name, eps_iter, eps0, dp_config, np.random.default_rng(ss), init_centroids=init)
            total = res.epsilon_total
            dp_totals.append(total)
            rows.append(_row(
                name, eps, trial, _seed_int(ss), total,
                centroid_cost(data, res.final_centroids), centroid_cost(data, res.prenoise_centroids),
                ref_cost, res.iterations, ref.iteration, res.converged,
            ))
        # baselines get the largest DP total of this trial
        budget = max(dp_totals) if dp_totals else eps
        if not budget > 0:
            budget = eps
        for b in config.baselines:
            ss = trial_seed(config.seed, trial, b, e_idx)
            schedule = Schedule.uniform(config.uniform_iterations) if b == "uniform" else Schedule.halving()
            res = baseline_laplace(
                data, config.k, schedule, budget, np.random.default_rng(ss), init_centroids=init,
                noise_multiplier=0.0 if config.noiseless else 1.0,
            )
            c = centroid_cost(data, res.final_centroids)
            rows.append(_row(b, eps, trial, _seed_int(ss), res.epsilon_total, c, c, ref_cost, res.iterations, ref.iteration, res.converged))
    return rows


def _run_trial_star(args):
    return run_trial(*args)


def aggregate(rows: Sequence[dict]) -> list[dict]:
    """Plain means per (algorithm, epsilon), in first-appearance order."""
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault((r["algorithm"], float(r["epsilon"])), []).append(r)
    out = []
    for (alg, eps), rs in groups.items():
        n = len(rs)
        out.append({
            "algorithm": alg,
            "epsilon": eps,
            "trials": n,
            "mean_normalized_cost": math.fsum(float(r["normalized_cost"]) for r in rs) / n,
            "convergence_degree": sum(1 for r in rs if _truthy(r["match"])) / n,
            "mean_iteration_ratio": math.fsum(float(r["iteration_ratio"]) for r in rs) / n,
            "mean_iterations": math.fsum(float(r["iterations"]) for r in rs) / n,
            "mean_lloyd_iterations": math.fsum(float(r["lloyd_iterations"]) for r in rs) / n,
            "mean_epsilon_total": math.fsum(float(r["epsilon_total"]) for r in rs) / n,
        })
    return out


def _truthy(v) -> bool:
    if isinstance(v, str):
        return v.strip().lower() in ("true", "1")
    return bool(v)


def run_trials(config: ExperimentConfig, threads: int = 1, data: np.ndarray | None = None) -> TrialReport:
    """Run every trial and reduce the rows in trial order."""
    config.validate()
    data = config.load() if data is None else as_dataset(data)
    if config.k > data.shape[0]:
        raise ConfigError(f"k={config.k} exceeds the number of records ({data.shape[0]})")
    jobs = [(config, data, t) for t in range(config.trials)]
    if threads > 1 and config.trials > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            per_trial = list(pool.map(_run_trial_star, jobs, chunksize=max(1, config.trials // (4 * threads))))
    else:
        per_trial = [_run_trial_star(j) for j in jobs]
    rows = [r for rs in per_trial for r in rs]
    # group rows algorithm-major so aggregates list each algorithm's sweep together
    order = {}
    for r in rows:
        order.setdefault(r["algorithm"], len(order))
    rows.sort(key=lambda r: (order[r["algorithm"]], r["epsilon"], r["trial"]))
    return TrialReport(config.to_dict(), rows, aggregate(rows))


# ---------------------------------------------------------------------------
# Report files


def _clean(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    return v


def report_json(report: TrialReport) -> str:
    payload = {"config": report.config, "trials": report.rows, "aggregates": report.aggregates}
    return json.dumps(_clean(payload), indent=2, allow_nan=False) + "\n"


def _csv_text(fields, rows) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(fields), lineterminator="\r\n", extrasaction="ignore")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: _csv_cell(r.get(k)) for k in fields})
    return buf.getvalue()


def _csv_cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return json.dumps(_clean(list(v)))
    return v


def sibling(path: Path, tag: str) -> Path:
    return path.with_name(f"{path.stem}.{tag}{path.suffix or '.csv'}")


def emit_report(report: TrialReport, fmt: str, path) -> list[Path]:
    """Write the report; returns the files written.

    JSON is one object with ``config``, ``trials`` and ``aggregates``. CSV
    writes the trial rows to ``path`` plus ``<stem>.aggregates.csv`` and
    ``<stem>.config.csv`` next to it.
    """
    path = Path(path)
    if fmt == "json":
        path.write_text(report_json(report), newline="")
        return [path]
    if fmt == "csv":
        agg_path, cfg_path = sibling(path, "aggregates"), sibling(path, "config")
        path.write_text(_csv_text(TRIAL_FIELDS, report.rows), newline="")
        agg_path.write_text(_csv_text(AGGREGATE_FIELDS, report.aggregates), newline="")
        cfg_rows = [{"key": k, "value": _csv_cell(v)} for k, v in report.config.items()]
        cfg_path.write_text(_csv_text(("key", "value"), cfg_rows), newline="")
        return [path, agg_path, cfg_path]
    raise ConfigError(f"unknown report format {fmt!r}")


def plot_rows(report: TrialReport) -> list[dict]:
    return [
        {"algorithm": a["algorithm"], "epsilon": a["epsilon"], "metric": m, "value": a[m]}
        for a in report.aggregates
        for m in PLOT_METRICS
    ]


def emit_plot_data(report: TrialReport, path) -> Path:
    """Long-format table (algorithm, epsilon, metric, value) for external plotting."""
    path = Path(path)
    path.write_text(_csv_text(("algorithm", "epsilon", "metric", "value"), plot_rows(report)), newline="")
    return path


def read_trial_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
