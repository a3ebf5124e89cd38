"""End-to-end runs: prices -> preprocessing -> instance -> solve -> reports."""

import dataclasses
import hashlib
import json
import os
import platform
import time
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import __version__
from .exceptions import ConfigError, DataError, SolverCapError
from .market_data import (
    DEFAULT_COV_WINDOW,
    DEFAULT_HP_SMOOTHING,
    Clustering,
    aggregate_monthly,
    cluster_assets,
    clusterize,
    filter_assets,
    hp_filter,
    load_prices,
    log_returns,
    rolling_covariance,
    unfold,
)
from .metrics import landscape_table, score
from .problem.qubo import build_qubo, write_qubo
from .problem.spec import (
    PROFILE_GAMMA,
    PROFILE_LAMBDA,
    PROFILES,
    BitTrajectory,
    HoldingsTrajectory,
    ProblemSpec,
    decode,
)
from .solvers.annealing import AnnealSchedule, solve_annealing
from .solvers.exhaustive import solve_exhaustive
from .solvers.mps import solve_mps
from .solvers.subspace import per_step_low_energy, recombine

SOLVERS = ("exhaustive", "annealing", "mps", "subspace")
FORECASTS = ("realized", "lagged")

_SOLVER_PARAMS = {
    "exhaustive": {"top_k": int, "mode": str, "max_variables": int},
    "annealing": {
        "restarts": int, "cooling": float, "sweeps_per_temperature": int,
        "initial_temperature": float, "final_temperature": float,
    },
    "mps": {"bond_dim": int, "sweeps": int, "samples": int, "ordering": str, "tau_schedule": list},
    "subspace": {"k": int, "inner": str, "top_k": int},
}


@dataclass
class RunConfig:
    """Everything needed to reproduce one run.

    Dimensions left as ``None`` come from ``profile``; ``profile="custom"``
    requires all of ``N``, ``N_t``, ``N_q`` and ``K``.  ``cluster`` is
    ``"auto"``, a cluster count, or ``None`` to optimize raw assets.
    """

    input: Optional[str] = None
    start: Optional[str] = None
    end: Optional[str] = None
    frequency: str = "monthly"
    cov_window: int = DEFAULT_COV_WINDOW
    filter: bool = True
    hp_smoothing: Optional[float] = DEFAULT_HP_SMOOTHING
    cluster: object = "auto"
    profile: str = "XS"
    N: Optional[int] = None
    N_t: Optional[int] = None
    N_q: Optional[int] = None
    K: Optional[int] = None
    gamma: Optional[float] = None
    lam: Optional[float] = None
    rho: Optional[float] = None
    forecast: str = "realized"
    solver: str = "annealing"
    solver_params: dict = field(default_factory=dict)
    out: Optional[str] = None
    seed: int = 0
    dataset: Optional[str] = None

    def __post_init__(self):
        if self.profile not in (*PROFILES, "custom"):
            raise ConfigError(
                f"unknown profile {self.profile!r}; choose from {', '.join([*PROFILES, 'custom'])}"
            )
        if self.solver not in SOLVERS:
            raise ConfigError(f"unknown solver {self.solver!r}; choose from {', '.join(SOLVERS)}")
        if self.forecast not in FORECASTS:
            raise ConfigError(f"forecast must be one of {FORECASTS}, got {self.forecast!r}")
        if self.frequency != "monthly":
            raise ConfigError("only business-month rebalancing is supported")
        if isinstance(self.cluster, str) and self.cluster not in ("auto", "none"):
            try:
                self.cluster = int(self.cluster)
            except ValueError:
                raise ConfigError("cluster must be 'auto', 'none' or an integer") from None
        if self.cluster == "none":
            self.cluster = None
        allowed = _SOLVER_PARAMS[self.solver]
        unknown = set(self.solver_params) - set(allowed)
        if unknown:
            raise ConfigError(
                f"unknown parameters {sorted(unknown)} for solver {self.solver!r}; "
                f"allowed: {sorted(allowed)}"
            )

    @property
    def dimensions(self):
        base = PROFILES.get(self.profile, dict.fromkeys(("N", "N_t", "N_q", "K")))
        dims = {k: getattr(self, k) if getattr(self, k) is not None else base[k] for k in base}
        missing = [k for k, v in dims.items() if v is None]
        if missing:
            raise ConfigError(f"profile 'custom' needs explicit {', '.join(missing)}")
        return dims

    def to_json(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_mapping(cls, data):
        names = {f.name for f in dataclasses.fields(cls)}
        data = dict(data)
        if "lambda" in data:
            data["lam"] = data.pop("lambda")
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown configuration keys {sorted(unknown)}")
        return cls(**data)


# ---------------------------------------------------------------------------
# configuration files


def _parse_scalar(text):
    text = text.strip()
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "'\"":
        return text[1:-1]
    try:
        return json.loads(text)
    except ValueError:
        pass
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", "null"):
        return None
    return text


def parse_key_values(text):
    """``key = value`` lines; ``#`` starts a comment, ``[section]`` headers are ignored.

    Keys prefixed with ``solver.`` (or listed under ``[solver_params]``)
    become solver parameters.
    """
    out, params = {}, {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key = value, got {raw!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        value = _parse_scalar(value)
        if key.startswith("solver."):
            params[key[len("solver."):]] = value
        elif section == "solver_params":
            params[key] = value
        else:
            out[key] = value
    if params:
        out.setdefault("solver_params", {}).update(params)
    return out


def load_config(path):
    """Read a JSON or ``key = value`` configuration file into a plain dict."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if text.lstrip().startswith("{"):
        try:
            data = json.loads(text)
        except ValueError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("a JSON config must be an object")
        return data
    return parse_key_values(text)


def coerce_solver_params(solver, params):
    types = _SOLVER_PARAMS[solver]
    out = {}
    for k, v in params.items():
        if k not in types:
            raise ConfigError(f"unknown parameter {k!r} for solver {solver!r}")
        kind = types[k]
        try:
            if kind is list:
                v = json.loads(v) if isinstance(v, str) else list(v)
                v = [float(x) for x in v]
            elif v is not None:
                v = kind(v)
        except (TypeError, ValueError):
            raise ConfigError(f"solver parameter {k}={v!r} is not a valid {kind.__name__}") from None
        out[k] = v
    return out


# ---------------------------------------------------------------------------
# stages


@dataclass
class Preprocessed:
    monthly: object
    covariance: object
    kept: list
    clustering: Optional[Clustering]
    units: object  # returns panel the instance is built from (assets or clusters)
    unit_covariance: object


def ingest(config):
    if config.input is None:
        raise ConfigError("no input price file given")
    try:
        panel = load_prices(config.input)
    except OSError as exc:
        raise DataError(f"cannot read {config.input}: {exc}") from None
    panel = panel.select(start=config.start, end=config.end)
    if len(panel.dates) < 2:
        raise DataError("fewer than 2 dates inside the requested date range")
    return panel


def preprocess(panel, config):
    daily = log_returns(panel)
    monthly = aggregate_monthly(daily)
    cov = rolling_covariance(daily, config.cov_window)
    kept = filter_assets(monthly) if config.filter and len(panel.asset_ids) > 1 else list(
        panel.asset_ids
    )
    monthly_k, cov_k = monthly.select(kept), cov.select(kept)
    clustering = None
    if config.cluster is not None and len(kept) > 1:
        path = np.cumsum(daily.select(kept).values, axis=1)
        if config.hp_smoothing:
            trends = np.array([hp_filter(row, config.hp_smoothing) for row in path])
        else:
            trends = path
        k = config.cluster
        if k != "auto" and k > len(kept):
            raise DataError(f"cannot form {k} clusters from {len(kept)} retained assets")
        clustering = cluster_assets(trends, k, asset_ids=kept)
        units, unit_cov = clusterize(monthly_k, cov_k, clustering)
    else:
        units, unit_cov = monthly_k, cov_k
    return Preprocessed(monthly, cov, kept, clustering, units, unit_cov)


def build_spec(pre, config):
    """Pick units and steps and assemble the :class:`ProblemSpec`.

    Step ``t`` rebalances at the start of month ``m_t`` using the covariance
    of the window ending in ``m_{t-1}``; its return is the month's realized
    sum (``forecast="realized"``) or the previous month's (``"lagged"``).
    When more units are available than ``N``, the ``N`` with the highest mean
    monthly return are used.
    """
    dims = config.dimensions
    N, N_t = dims["N"], dims["N_t"]
    units, cov = pre.units, pre.unit_covariance
    n_units = len(units.asset_ids)
    if n_units < N:
        raise DataError(
            f"profile needs N={N} assets/clusters but only {n_units} remain after "
            f"filtering/clustering (short by {N - n_units})"
        )
    cov_index = {p: i for i, p in enumerate(cov.periods)}
    months = units.periods
    steps = [i for i in range(1, len(months)) if months[i - 1] in cov_index]
    if len(steps) < N_t:
        raise DataError(
            f"profile needs N_t={N_t} rebalancing steps but only {len(steps)} months have "
            f"a preceding covariance window (short by {N_t - len(steps)})"
        )
    steps = steps[:N_t]
    order = np.lexsort((np.arange(n_units), -units.values.mean(axis=1)))[:N]
    order = np.sort(order)
    col = [i if config.forecast == "realized" else i - 1 for i in steps]
    mu = units.values[np.ix_(order, col)]
    sigma = np.array([cov.matrices[cov_index[months[i - 1]]][np.ix_(order, order)] for i in steps])
    spec = ProblemSpec(
        N, N_t, dims["N_q"], dims["K"], mu, sigma,
        gamma=PROFILE_GAMMA if config.gamma is None else config.gamma,
        lam=PROFILE_LAMBDA if config.lam is None else config.lam,
        rho=config.rho,
    )
    meta = {
        "units": [units.asset_ids[i] for i in order],
        "months": [str(months[i]) for i in steps],
    }
    return spec, meta


def solve(spec, solver, params=None, seed=0):
    """Run one solver on ``spec`` and return its :class:`SolutionSet`."""
    params = coerce_solver_params(solver, params or {})
    if solver == "subspace":
        k = params.pop("k", 10)
        inner = params.pop("inner", "exhaustive")
        top_k = params.pop("top_k", 10)
        start = time.perf_counter()
        result = recombine(per_step_low_energy(spec, k, inner, None, seed), spec, top_k)
        result.seed, result.wall_time = seed, time.perf_counter() - start
        return result
    q = build_qubo(spec)
    if solver == "exhaustive":
        top_k = params.pop("top_k", 10)
        return solve_exhaustive(q, spec=spec, top_k=top_k, **params)
    if solver == "annealing":
        return solve_annealing(q, AnnealSchedule(seed=seed, **params))
    if solver == "mps":
        params.setdefault("bond_dim", 4)
        return solve_mps(q, seed=seed, **params)
    raise ConfigError(f"unknown solver {solver!r}")


# ---------------------------------------------------------------------------
# artifacts


def fingerprint(spec):
    return hashlib.sha256(spec.dumps().encode("utf-8")).hexdigest()


class _RunLock:
    def __init__(self, out):
        self.path = os.path.join(out, ".lock")

    def __enter__(self):
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise ConfigError(
                f"output directory {os.path.dirname(self.path)} is locked by another run "
                f"(remove {self.path} if that run died)"
            ) from None
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        return self

    def __exit__(self, *exc):
        try:
            os.remove(self.path)
        except FileNotFoundError:
            pass


def _write_text(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _write_json(path, obj):
    _write_text(path, json.dumps(obj, indent=1, sort_keys=True, allow_nan=False) + "\n")


def _versions():
    import scipy
    import sklearn

    return {
        "dynport": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "scikit-learn": sklearn.__version__,
    }


def write_reports(out, spec, solutions, clustering=None, meta=None):
    """Solution JSON, landscape tables and a best-trajectory report; returns file names."""
    files = {}
    solutions.dump(os.path.join(out, "solution.json"), spec, include_timing=False)
    files["solution"] = "solution.json"
    table = landscape_table(solutions, spec)
    _write_text(os.path.join(out, "landscape.csv"), table.to_csv(percent=True))
    _write_text(os.path.join(out, "landscape.txt"), table.to_text(percent=True))
    files["landscape_csv"] = "landscape.csv"
    files["landscape_txt"] = "landscape.txt"
    if solutions.best is not None:
        bits = BitTrajectory.from_flat(solutions.best.bits, spec)
        units = decode(bits, spec)
        report = {"metrics": score(bits, spec).to_dict(), "holdings": units.holdings.tolist()}
        if meta:
            report.update(meta)
        if clustering is not None:
            # the instance may use only some clusters; the others hold nothing
            full = np.zeros((clustering.k, spec.N_t))
            names = clustering.cluster_ids()
            for row, name in enumerate(meta["units"]):
                full[names.index(name)] = units.holdings[row]
            per_asset = unfold(HoldingsTrajectory(full, K=spec.K), clustering)
            report["asset_holdings"] = dict(
                zip(clustering.asset_ids, per_asset.holdings.tolist())
            )
        _write_json(os.path.join(out, "report.json"), report)
        files["report"] = "report.json"
    return files


def _check_exhaustive_cap(config):
    if config.solver != "exhaustive":
        return
    cap = coerce_solver_params("exhaustive", config.solver_params).get("max_variables", 24)
    d = config.dimensions
    n_tot = d["N"] * d["N_t"] * d["N_q"]
    if n_tot > cap:
        raise SolverCapError(
            f"exhaustive solver is capped at {cap} variables; profile {config.profile} has "
            f"N_tot = {n_tot}, i.e. 2^{n_tot} states"
        )


def run(config):
    """Execute the full pipeline and write all artifacts into ``config.out``.

    Returns the manifest dict.  Stage wall times live only in the manifest, so
    every other artifact is byte-identical for identical (config, seed).
    """
    if config.out is None:
        raise ConfigError("no output directory given")
    _check_exhaustive_cap(config)
    os.makedirs(config.out, exist_ok=True)
    with _RunLock(config.out):
        times = {}
        stamp = time.perf_counter()
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            panel = ingest(config)
            times["ingest"] = time.perf_counter() - stamp

            stamp = time.perf_counter()
            pre = preprocess(panel, config)
            times["preprocess"] = time.perf_counter() - stamp

        stamp = time.perf_counter()
        spec, meta = build_spec(pre, config)
        problem_text = spec.dumps()
        _write_text(os.path.join(config.out, "problem.json"), problem_text + "\n")
        files = {"problem": "problem.json"}
        if pre.clustering is not None:
            _write_json(os.path.join(config.out, "clustering.json"), pre.clustering.to_json())
            files["clustering"] = "clustering.json"
        if config.solver != "subspace":
            q = build_qubo(spec)
            write_qubo(q, os.path.join(config.out, "problem.qubo"))
            files["qubo"] = "problem.qubo"
        times["build"] = time.perf_counter() - stamp

        stamp = time.perf_counter()
        solutions = solve(spec, config.solver, config.solver_params, config.seed)
        times["solve"] = time.perf_counter() - stamp

        stamp = time.perf_counter()
        files.update(write_reports(config.out, spec, solutions, pre.clustering, meta))
        times["report"] = time.perf_counter() - stamp

        best = solutions.best
        summary = None
        if best is not None:
            m = score(BitTrajectory.from_flat(best.bits, spec), spec)
            summary = {
                "energy": best.energy,
                "sharpe": m.sharpe,
                "profit_percent": 100.0 * m.profit,
                "budget_residual": m.budget_residual,
            }
        manifest = {
            "config": config.to_json(),
            "dataset": config.dataset or config.profile,
            "seed": config.seed,
            "solver": config.solver,
            "dimensions": {
                "N": spec.N, "N_t": spec.N_t, "N_q": spec.N_q, "K": spec.K,
                "N_tot": spec.n_variables,
            },
            "rho": spec.rho,
            "fingerprint": hashlib.sha256(problem_text.encode("utf-8")).hexdigest(),
            "artifacts": files,
            "assets": {"input": len(panel.asset_ids), "retained": len(pre.kept)},
            "clusters": None if pre.clustering is None else pre.clustering.k,
            "warnings": sorted({str(w.message) for w in caught}),
            "best": summary,
            "solver_info": _jsonable(solutions.info),
            "wall_time_s": times,
            "versions": _versions(),
        }
        _write_json(os.path.join(config.out, "manifest.json"), manifest)
    return manifest


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


# ---------------------------------------------------------------------------
# comparison


def _load_run(path):
    try:
        with open(os.path.join(path, "manifest.json"), encoding="utf-8") as fh:
            manifest = json.load(fh)
    except (OSError, ValueError) as exc:
        raise DataError(f"{path} is not a run directory: {exc}") from None
    with open(os.path.join(path, manifest["artifacts"]["problem"]), encoding="utf-8") as fh:
        problem = json.load(fh)
    return manifest, problem


def _differing_fields(a, b):
    return sorted(k for k in set(a) | set(b) if a.get(k) != b.get(k))


class CompareTable:
    """Method x dataset grids of Sharpe ratio, profit (%) and solve wall time."""

    metrics = ("sharpe", "profit_percent", "wall_time_s")

    def __init__(self, methods, datasets, cells):
        self.methods = methods
        self.datasets = datasets
        self.cells = cells  # (method, dataset) -> {metric: value}

    def grid(self, metric):
        return [
            [self.cells.get((m, d), {}).get(metric) for d in self.datasets] for m in self.methods
        ]

    def to_text(self):
        titles = {
            "sharpe": "Sharpe ratio",
            "profit_percent": "Profit (%)",
            "wall_time_s": "Solve wall time (s, hardware-dependent)",
        }
        blocks = []
        for metric in self.metrics:
            rows = [["method", *self.datasets]]
            for m, vals in zip(self.methods, self.grid(metric)):
                rows.append([m, *("" if v is None else f"{v:.6g}" for v in vals)])
            widths = [max(len(r[j]) for r in rows) for j in range(len(rows[0]))]
            lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
            blocks.append(titles[metric] + "\n" + "\n".join(lines))
        return "\n\n".join(blocks) + "\n"

    def to_csv(self):
        lines = ["metric,method," + ",".join(self.datasets)]
        for metric in self.metrics:
            for m, vals in zip(self.methods, self.grid(metric)):
                lines.append(
                    ",".join([metric, m, *("" if v is None else repr(float(v)) for v in vals)])
                )
        return "\n".join(lines) + "\n"


def compare(run_dirs):
    """Cross-solver grids over run directories.

    Runs are grouped by dataset label; all runs of one dataset must share the
    problem fingerprint.  Cells without a run stay blank.
    """
    if not run_dirs:
        raise ConfigError("compare needs at least one run directory")
    by_dataset = {}
    cells, methods, datasets = {}, [], []
    for path in run_dirs:
        manifest, problem = _load_run(path)
        ds, method = manifest["dataset"], manifest["solver"]
        if ds in by_dataset:
            ref_fp, ref_problem, ref_path = by_dataset[ds]
            if manifest["fingerprint"] != ref_fp:
                fields = _differing_fields(ref_problem, problem)
                raise ConfigError(
                    f"runs {ref_path} and {path} are both dataset {ds!r} but their problems "
                    f"differ in {', '.join(fields) or 'serialization'}"
                )
        else:
            by_dataset[ds] = (manifest["fingerprint"], problem, path)
        if (method, ds) in cells:
            raise ConfigError(f"two runs of solver {method!r} on dataset {ds!r}")
        if method not in methods:
            methods.append(method)
        if ds not in datasets:
            datasets.append(ds)
        best = manifest.get("best") or {}
        cells[(method, ds)] = {
            "sharpe": best.get("sharpe"),
            "profit_percent": best.get("profit_percent"),
            "wall_time_s": manifest["wall_time_s"].get("solve"),
        }
    return CompareTable(methods, datasets, cells)
