"""Monte Carlo experiment runner: fixed-N and sequential suites.

A run is declared by an :class:`ExperimentConfig`; cells and replications
are seeded independently of execution order, so identical config + seed
reproduces byte-identical result files.
"""

from __future__ import annotations

import hashlib
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import conformal, sequential
from .errors import MleUndefinedError, ParameterError, RunawayStopError
from .models import HyperboloidModel, VmfModel

N_BATCHES = 10
MAX_EXCLUDED_FRACTION = 0.01

CONFIG_KEYS = (
    "model",
    "m",
    "r",
    "u0",
    "D",
    "grid_N",
    "grid_K",
    "replications",
    "seed",
    "outdir",
)

NONSEQ_COLUMNS = (
    "cell_N",
    "OCOV11", "OCOV12", "OCOV22",
    "OCOV11_se", "OCOV12_se", "OCOV22_se",
    "OCRB11", "OCRB12", "OCRB22",
    "OALB11", "OALB12", "OALB22",
    "excluded",
)

SEQ_COLUMNS = (
    "cell_K",
    "MST", "MST_se", "SDST",
    "CCOV11", "CCOV12", "CCOV22",
    "CCOV11_se", "CCOV12_se", "CCOV22_se",
    "CCRB11", "CCRB12", "CCRB22",
    "excluded",
)


@dataclass(frozen=True)
class ExperimentConfig:
    """Declarative description of one simulation run."""

    model: str
    m: int
    r: float
    u0: np.ndarray
    d_matrix: np.ndarray
    grid_n: tuple[int, ...]
    grid_k: tuple[float, ...]
    replications: int
    seed: int
    outdir: str

    def __post_init__(self):
        if self.model not in ("vmf", "hyperboloid"):
            raise ParameterError(f"unknown model {self.model!r}")
        if self.replications < 2:
            raise ParameterError("need at least 2 replications")
        if not self.grid_n or not self.grid_k:
            raise ParameterError("grids must be nonempty")
        object.__setattr__(self, "u0", np.asarray(self.u0, dtype=float))
        object.__setattr__(self, "d_matrix", np.atleast_2d(np.asarray(self.d_matrix, dtype=float)))

    def build_model(self):
        if self.model == "vmf":
            return VmfModel(self.m, self.r)
        return HyperboloidModel(self.m, self.r)

    def echo_lines(self) -> list[str]:
        return [
            f"model = {self.model}",
            f"m = {self.m}",
            f"r = {self.r!r}",
            "u0 = " + ", ".join(repr(float(v)) for v in self.u0),
            "D = " + ", ".join(repr(float(v)) for v in self.d_matrix.ravel()),
            "grid_N = " + ", ".join(str(int(v)) for v in self.grid_n),
            "grid_K = " + ", ".join(repr(float(v)) for v in self.grid_k),
            f"replications = {self.replications}",
            f"seed = {self.seed}",
            f"outdir = {self.outdir}",
        ]


def default_config(model: str, outdir: str = "out", replications: int = 500, seed: int = 20250101) -> ExperimentConfig:
    """Grids sized so the largest cell's expected sample size is about 1e3."""
    if model == "vmf":
        m, r = 2, 0.25
        u0 = np.array([math.pi / 6.0, math.pi / 3.0])
        dmat = np.eye(2, 3)
    elif model == "hyperboloid":
        m, r = 2, 0.1
        u0 = np.array([0.1, math.pi / 3.0])
        dmat = np.eye(2, 3) / 100.0
    else:
        raise ParameterError(f"unknown model {model!r}")
    mdl = VmfModel(m, r) if model == "vmf" else HyperboloidModel(m, r)
    nu0 = mdl.gauge().nu_at(u0)
    # Largest cell targets an expected sample size near 1e3; the smallest
    # stays inside the asymptotic regime where the O(1) stopping-time
    # corrections are within Monte Carlo resolution at 500 replications.
    k_max = 1000.0 / nu0
    k_min = (450.0 if model == "vmf" else 250.0) / nu0
    grid_k = tuple(round(float(v), 4) for v in np.geomspace(k_min, k_max, 10))
    n_max = 1000 if model == "vmf" else 1300
    grid_n = tuple(int(round(v)) for v in np.geomspace(0.1 * n_max, n_max, 10))
    return ExperimentConfig(
        model=model, m=m, r=r, u0=u0, d_matrix=dmat,
        grid_n=grid_n, grid_k=grid_k,
        replications=replications, seed=seed, outdir=outdir,
    )


def parse_config(path: str | Path) -> ExperimentConfig:
    """Read the line-oriented ``key = value`` config format."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ParameterError(f"{path}:{lineno}: expected 'key = value'")
        key, _, val = line.partition("=")
        key = key.strip()
        if key not in CONFIG_KEYS:
            raise ParameterError(f"{path}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ParameterError(f"{path}:{lineno}: duplicate key {key!r}")
        values[key] = val.strip()
    missing = [k for k in CONFIG_KEYS if k not in values]
    if missing:
        raise ParameterError(f"{path}: missing keys {missing}")

    def floats(s):
        try:
            return [float(v) for v in s.split(",")]
        except ValueError as exc:
            raise ParameterError(f"{path}: bad numeric list {s!r}") from exc

    try:
        m = int(values["m"])
        u0 = np.array(floats(values["u0"]))
        dflat = np.array(floats(values["D"]))
        return ExperimentConfig(
            model=values["model"],
            m=m,
            r=float(values["r"]),
            u0=u0,
            d_matrix=dflat.reshape(m, m + 1),
            grid_n=tuple(int(float(v)) for v in values["grid_N"].split(",")),
            grid_k=tuple(float(v) for v in values["grid_K"].split(",")),
            replications=int(values["replications"]),
            seed=int(values["seed"]),
            outdir=values["outdir"],
        )
    except (ValueError, ParameterError) as exc:
        if isinstance(exc, ParameterError):
            raise
        raise ParameterError(f"{path}: {exc}") from exc


@dataclass(frozen=True)
class CellResult:
    cell: float
    stats: dict
    excluded: int


@dataclass(frozen=True)
class ResultTable:
    kind: str  # 'nonsequential' | 'sequential'
    rows: tuple[CellResult, ...]
    replications: int


def rep_seed(base_seed: int, cell_id: str, rep: int) -> int:
    digest = hashlib.sha256(f"{cell_id}|{rep}".encode()).digest()
    return (int.from_bytes(digest[:8], "big") ^ base_seed) & ((1 << 63) - 1)


def _batch_se(per_rep: np.ndarray) -> float:
    """Standard error by replication batching (10 batches)."""
    r = per_rep.shape[0]
    nb = min(N_BATCHES, r)
    batches = np.array_split(per_rep, nb)
    means = np.array([b.mean(axis=0) for b in batches], dtype=float)
    if nb < 2:
        return float("inf")
    return float(means.std(ddof=1) / math.sqrt(nb))


def _batch_se_product(taus: np.ndarray, outers: np.ndarray) -> float:
    """Batched standard error of E(tau) * E(outer-component)."""
    r = taus.shape[0]
    nb = min(N_BATCHES, r)
    idx = np.array_split(np.arange(r), nb)
    vals = np.array([taus[i].mean() * outers[i].mean() for i in idx])
    if nb < 2:
        return float("inf")
    return float(vals.std(ddof=1) / math.sqrt(nb))


def run_nonsequential(config: ExperimentConfig, model=None) -> ResultTable:
    """Fixed-sample-size suite: bias-corrected estimator, scaled covariance."""
    model = model or config.build_model()
    u0 = config.u0
    ginv = sequential.crb(model, u0)
    rows = []
    for n in config.grid_n:
        cell_id = f"nonseq:{n}"
        devs = []
        excluded = 0
        for rep in range(config.replications):
            rng = np.random.default_rng(rep_seed(config.seed, cell_id, rep))
            xs = model.sample_many(u0, rng, n)
            xbar = xs.mean(axis=0)
            try:
                u_hat = model.mle_direction(xbar)
                u_star = sequential.bias_correct(model, u_hat, float(n))
            except MleUndefinedError:
                excluded += 1
                continue
            devs.append(model.wrap_deviation(u_star - u0))
        devs = np.array(devs)
        outers = np.einsum("ra,rb->rab", devs, devs) * float(n)
        ocov = outers.mean(axis=0)
        oalb = sequential.asymptotic_covariance(model, u0, float(n))
        stats = {"OCOV": ocov, "OCRB": ginv, "OALB": oalb,
                 "OCOV_se": np.array([[_batch_se(outers[:, a, b]) for b in range(2)] for a in range(2)])}
        rows.append(CellResult(cell=float(n), stats=stats, excluded=excluded))
        _check_exclusions(excluded, config.replications, cell_id)
    return ResultTable("nonsequential", tuple(rows), config.replications)


def run_sequential(config: ExperimentConfig, model=None) -> ResultTable:
    """Stopping-rule suite in the flattening coordinates, no bias correction."""
    model = model or config.build_model()
    u0 = config.u0
    gauge = model.gauge()
    grid = model.probe_grid(count=16, margin=0.15, seed=11)
    gauge, coords = conformal.quadric_gauge(
        model.curved, np.zeros(model.m + 1), config.d_matrix, grid, gauge=gauge
    )
    ubar0 = coords.forward(u0)
    ccrb = sequential.crb(model, u0, coords=coords)
    c = model.stopping_constant()
    rows = []
    for k in config.grid_k:
        cell_id = f"seq:{k!r}"
        taus, devs = [], []
        excluded = 0
        for rep in range(config.replications):
            rng = np.random.default_rng(rep_seed(config.seed, cell_id, rep))
            try:
                decision, traj = sequential.run_stopping(model, gauge, float(k), u0, rng, c=c)
                u_hat = model.mle_direction(traj.mean_x)
                ubar_hat = coords.forward(u_hat)
            except (RunawayStopError, MleUndefinedError):
                excluded += 1
                continue
            taus.append(decision.tau)
            devs.append(np.asarray(ubar_hat) - ubar0)
        taus = np.array(taus, dtype=float)
        devs = np.array(devs)
        outers = np.einsum("ra,rb->rab", devs, devs)
        mst = float(taus.mean())
        sdst = float(taus.std(ddof=1))
        ccov = mst * outers.mean(axis=0)
        ccov_se = np.array(
            [[_batch_se_product(taus, outers[:, a, b]) for b in range(2)] for a in range(2)]
        )
        stats = {
            "MST": mst,
            "MST_se": _batch_se(taus),
            "SDST": sdst,
            "CCOV": ccov,
            "CCOV_se": ccov_se,
            "CCRB": ccrb,
        }
        rows.append(CellResult(cell=float(k), stats=stats, excluded=excluded))
        _check_exclusions(excluded, config.replications, cell_id)
    return ResultTable("sequential", tuple(rows), config.replications)


def _check_exclusions(excluded: int, total: int, cell_id: str) -> None:
    if excluded > MAX_EXCLUDED_FRACTION * total:
        raise RunawayStopError(
            f"cell {cell_id}: {excluded}/{total} replications excluded (> {MAX_EXCLUDED_FRACTION:.0%})"
        )


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def nonsequential_csv_rows(table: ResultTable) -> list[str]:
    out = [",".join(NONSEQ_COLUMNS)]
    for row in table.rows:
        s = row.stats
        cells = [str(int(row.cell))]
        cells += [_fmt(s["OCOV"][i]) for i in ((0, 0), (0, 1), (1, 1))]
        cells += [_fmt(s["OCOV_se"][i]) for i in ((0, 0), (0, 1), (1, 1))]
        cells += [_fmt(s["OCRB"][i]) for i in ((0, 0), (0, 1), (1, 1))]
        cells += [_fmt(s["OALB"][i]) for i in ((0, 0), (0, 1), (1, 1))]
        cells.append(str(row.excluded))
        out.append(",".join(cells))
    return out


def sequential_csv_rows(table: ResultTable) -> list[str]:
    out = [",".join(SEQ_COLUMNS)]
    for row in table.rows:
        s = row.stats
        cells = [_fmt(row.cell), _fmt(s["MST"]), _fmt(s["MST_se"]), _fmt(s["SDST"])]
        cells += [_fmt(s["CCOV"][i]) for i in ((0, 0), (0, 1), (1, 1))]
        cells += [_fmt(s["CCOV_se"][i]) for i in ((0, 0), (0, 1), (1, 1))]
        cells += [_fmt(s["CCRB"][i]) for i in ((0, 0), (0, 1), (1, 1))]
        cells.append(str(row.excluded))
        out.append(",".join(cells))
    return out


def write_results(
    tables: list[ResultTable],
    outdir: str | Path,
    config: ExperimentConfig,
    timings: dict | None = None,
) -> list[Path]:
    """One CSV per suite plus a manifest with the config echo and timings."""
    out = Path(outdir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create results directory {out}: {exc}") from exc
    written = []
    for table in tables:
        rows = (
            nonsequential_csv_rows(table)
            if table.kind == "nonsequential"
            else sequential_csv_rows(table)
        )
        path = out / f"{table.kind}.csv"
        try:
            path.write_text("\n".join(rows) + "\n")
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc}") from exc
        written.append(path)
    from . import __version__

    manifest = out / "run.manifest"
    timings = timings or {}
    lines = ["[config]"]
    lines += config.echo_lines()
    lines.append("")
    lines.append("[run]")
    lines.append(f"version = {__version__}")
    lines.append(f"seed = {config.seed}")
    for key in ("start", "end"):
        if key in timings:
            lines.append(f"{key} = {timings[key]}")
    for key, val in timings.items():
        if key.startswith("cell:"):
            lines.append(f"{key} = {val:.3f}s")
    manifest.write_text("\n".join(lines) + "\n")
    written.append(manifest)
    return written


def run_experiment(config: ExperimentConfig) -> list[Path]:
    """Both suites plus persistence; returns the written paths."""
    timings = {"start": time.strftime("%Y-%m-%dT%H:%M:%S")}
    model = config.build_model()
    t0 = time.monotonic()
    nonseq = run_nonsequential(config, model)
    timings["cell:nonsequential"] = time.monotonic() - t0
    t0 = time.monotonic()
    seq = run_sequential(config, model)
    timings["cell:sequential"] = time.monotonic() - t0
    timings["end"] = time.strftime("%Y-%m-%dT%H:%M:%S")
    return write_results([nonseq, seq], config.outdir, config, timings)
