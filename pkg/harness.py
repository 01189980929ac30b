"""
harness.py — Experiment runner: builds measurement instances, dispatches
solvers over (ratio, seed, solver) cells and writes CSV metrics and images.

Outputs in `out_dir`:
    results.csv       one row per cell, failed cells included
    summary.csv       per (task, solver, ratio) mean / std of nMSE, mean δ_i
    rec_check.csv     rec-check task only, one row per (seed, n)
    {task}_{solver}_f{ratio}_s{seed}.pgm reconstructions
"""
from __future__ import annotations

import csv
import logging
import statistics
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from config import (
    CONVERGED_REL_ERROR, DEFAULT_LATENT_SEED, DEFAULT_OUT_DIR, DEFAULT_SPEC,
    DEFAULT_WORKERS, ISTA_ITERS, LASSO_ALPHA, REC_HEADER, REC_N_GRID,
    RESULTS_HEADER, SUMMARY_HEADER,
)
from decoder import DecoderSpec, LatentCode, decode, init_weights, make_latent, project, resolve_spec
from errors import ConfigError, NetPGDError
from images import digit_fixture, load_image, save_image
from measurements import (
    RecReport, apply, apply_magnitude, make_operator, nested_operators,
    orthonormal_operator, rec_check,
)
from numeric import ImageVector, SeededRng
from oracles import delta_i_stat
from solvers import SolverConfig, ista_dct, net_gd, net_pgd_cpr, net_pgd_cs, nmse

logger = logging.getLogger(__name__)

Task = Literal["cs", "cpr", "project", "rec-check"]
SolverName = Literal["net-pgd", "net-gd", "ista"]

SOLVER_ORDER = {"net-pgd": 0, "net-gd": 1, "ista": 2, "project": 3}
LIST_KEYS = {"ratios", "seeds", "solvers", "n_grid"}
KEY_ALIASES = {"solver": "solvers", "n": "n_grid", "mode": "rec_mode", "out": "out_dir"}


# ── Models ───────────────────────────────────────────────────────────────────

class ExperimentConfig(BaseModel):
    task: Task
    image: Path | None = None
    synthetic: bool = False
    ratios: list[float] = Field(default_factory=list)
    seeds: list[int] = Field(default_factory=lambda: [0])
    spec: str | None = Field(default=None, description="preset name or key=value spec file")
    solvers: list[SolverName] = Field(default_factory=lambda: ["net-pgd"])

    eta: float | None = Field(default=None, gt=0)
    outer_iters: int | None = Field(default=None, ge=1)
    inner_iters: int | None = Field(default=None, ge=1)
    inner_lr: float | None = Field(default=None, gt=0)
    tol: float | None = Field(default=None, ge=0)
    lasso_alpha: float = Field(default=LASSO_ALPHA, gt=0)
    ista_iters: int = Field(default=ISTA_ITERS, ge=1)
    latent_seed: int = DEFAULT_LATENT_SEED

    out_dir: Path = Path(DEFAULT_OUT_DIR)
    workers: int = Field(default=DEFAULT_WORKERS, ge=1)
    record_wall_time: bool = True
    write_images: bool = True

    alpha: float = Field(default=0.5, gt=0, lt=1)
    trials: int = Field(default=200, ge=1)
    n_grid: list[int] = Field(default_factory=lambda: list(REC_N_GRID))
    rec_mode: Literal["range", "difference"] = "difference"
    orthonormal: bool = False

    @field_validator("ratios")
    @classmethod
    def _ratios_in_range(cls, ratios: list[float]) -> list[float]:
        bad = [f for f in ratios if not 0 < f <= 3]
        if bad:
            raise ValueError(f"ratios must lie in (0, 3], got {bad}")
        return ratios

    @model_validator(mode="after")
    def _check_task(self):
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if self.task in ("cs", "cpr"):
            if not self.ratios:
                raise ValueError("the ratio list is empty")
            if not self.solvers:
                raise ValueError("at least one solver is required")
            if self.task == "cpr" and "ista" in self.solvers:
                raise ValueError("the ista baseline only handles linear measurements (task cs)")
        if self.task in ("cs", "cpr", "project") and self.image is None and not self.synthetic:
            raise ValueError("give an image path or enable the bundled digit")
        if self.task == "rec-check" and (not self.n_grid or min(self.n_grid) < 1):
            raise ValueError("rec-check needs a non-empty grid of positive n")
        return self

    @property
    def spec_name(self) -> str:
        if self.spec is not None:
            return self.spec
        return "rec" if self.task == "rec-check" else DEFAULT_SPEC


class ResultRow(BaseModel):
    task: str
    solver: str
    ratio: float
    seed: int
    n: int
    nmse: float | None = Field(default=None, ge=0)
    final_loss: float | None = None
    iters: int = 0
    wall_time_s: float = 0.0
    status: str = "ok"

    def csv_values(self) -> list[str]:
        return [
            self.task, self.solver, _fmt(self.ratio), str(self.seed), str(self.n),
            _fmt(self.nmse), _fmt(self.final_loss), str(self.iters),
            f"{self.wall_time_s:.3f}", self.status,
        ]


def _fmt(value: float | None) -> str:
    return "" if value is None else f"{value:.10g}"


# ── Config files ─────────────────────────────────────────────────────────────

def parse_config_text(text: str) -> dict[str, str | list[str]]:
    """
    key=value lines; `#` starts a comment; repeated keys and comma-separated
    values both build lists for list-valued keys.
    """
    values: dict[str, str | list[str]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        key = KEY_ALIASES.get(key, key)
        if key in LIST_KEYS:
            items = [item.strip() for item in value.split(",") if item.strip()]
            values.setdefault(key, [])
            values[key].extend(items)
        else:
            values[key] = value
    return values


def load_config_file(path: str | Path) -> dict[str, str | list[str]]:
    try:
        return parse_config_text(Path(path).read_text())
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e


def build_config(file_values: dict, overrides: dict) -> ExperimentConfig:
    """Merge file values with CLI overrides (non-None overrides win) and validate."""
    merged = dict(file_values)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ExperimentConfig(**merged)
    except ValueError as e:
        raise ConfigError(str(e)) from e


# ── Cells ────────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class Cell:
    task: str
    solver: str
    ratio: float
    seed: int


@dataclass
class CellResult:
    row: ResultRow
    delta_i: float | None = None
    image: ImageVector | None = None


@dataclass(frozen=True)
class Problem:
    cfg: ExperimentConfig
    spec: DecoderSpec
    latent: LatentCode
    xstar: ImageVector


def measurement_count(ratio: float, d: int) -> int:
    # half-up rounding: f = 0.1 at d = 784 gives n = 78
    return max(1, int(ratio * d + 0.5))


def _solver_config(cfg: ExperimentConfig, seed: int) -> SolverConfig:
    return SolverConfig.with_overrides(
        eta=cfg.eta,
        max_outer_iters=cfg.outer_iters,
        inner_iters=cfg.inner_iters,
        inner_lr=cfg.inner_lr,
        tol=cfg.tol,
        seed=seed,
    )


def _run_fit(problem: Problem, cell: Cell) -> CellResult:
    cfg, spec, latent = problem.cfg, problem.spec, problem.latent
    solver_cfg = _solver_config(cfg, cell.seed)
    w0 = init_weights(spec, SeededRng(cell.seed))
    steps = solver_cfg.max_outer_iters * solver_cfg.inner_iters
    weights, fit_loss = project(
        spec, latent, problem.xstar.values, w0, steps, solver_cfg.inner_lr, solver_cfg.momentum
    )
    x_hat = ImageVector(decode(spec, weights, latent), spec.image_shape)
    row = ResultRow(
        task=cell.task, solver=cell.solver, ratio=0.0, seed=cell.seed, n=0,
        nmse=nmse(x_hat, problem.xstar), final_loss=fit_loss, iters=steps,
    )
    return CellResult(row=row, image=x_hat)


def _run_recovery(problem: Problem, cell: Cell) -> CellResult:
    cfg, spec, latent, xstar = problem.cfg, problem.spec, problem.latent, problem.xstar
    magnitude = cell.task == "cpr"
    n = measurement_count(cell.ratio, spec.d)
    op = make_operator(n, spec.d, SeededRng(cell.seed))
    y = apply_magnitude(op, xstar) if magnitude else apply(op, xstar)

    delta_i = None
    if cell.solver == "ista":
        x_hat = ista_dct(y, op, cfg.lasso_alpha * n, cfg.ista_iters)
        residual = y - apply(op, x_hat)
        final_loss, iters = float(residual @ residual), cfg.ista_iters
    else:
        solver_cfg = _solver_config(cfg, cell.seed)
        if cell.solver == "net-pgd":
            solve = net_pgd_cpr if magnitude else net_pgd_cs
            trace = solve(y, op, spec, latent, solver_cfg, xstar=xstar.values)
        else:
            mode = "magnitude" if magnitude else "linear"
            trace = net_gd(y, op, mode, spec, latent, solver_cfg, xstar=xstar.values)
        x_hat, final_loss, iters = trace.x_hat, trace.final_loss, trace.iterations
        if magnitude and np.sqrt(nmse(x_hat, xstar, sign_resolve=True)) < CONVERGED_REL_ERROR:
            delta_i = delta_i_stat(trace.x_init, trace.x_hat)

    row = ResultRow(
        task=cell.task, solver=cell.solver, ratio=cell.ratio, seed=cell.seed, n=n,
        nmse=nmse(x_hat, xstar, sign_resolve=magnitude), final_loss=final_loss, iters=iters,
    )
    return CellResult(row=row, delta_i=delta_i, image=x_hat)


def run_cell(problem: Problem, cell: Cell) -> CellResult:
    """Run one cell; library errors become a row with status error:<Name>."""
    start = time.perf_counter()
    try:
        result = _run_fit(problem, cell) if cell.task == "project" else _run_recovery(problem, cell)
    except NetPGDError as e:
        logger.error(f"[ 🔥 run_cell ] {cell}: {e}\n{traceback.format_exc()}")
        n = 0 if cell.task == "project" else measurement_count(cell.ratio, problem.spec.d)
        result = CellResult(row=ResultRow(
            task=cell.task, solver=cell.solver, ratio=cell.ratio, seed=cell.seed, n=n,
            status=f"error:{type(e).__name__}",
        ))
    if problem.cfg.record_wall_time:
        result.row.wall_time_s = time.perf_counter() - start
    logger.info(
        f"[ 🧮 run_cell ] {cell.task} {cell.solver} f={cell.ratio:g} seed={cell.seed} "
        f"nmse={_fmt(result.row.nmse) or '-'} status={result.row.status}"
    )
    return result


def _cells(cfg: ExperimentConfig) -> list[Cell]:
    if cfg.task == "project":
        return [Cell("project", "project", 0.0, seed) for seed in sorted(set(cfg.seeds))]
    return sorted(
        (Cell(cfg.task, solver, ratio, seed)
         for ratio in set(cfg.ratios) for seed in set(cfg.seeds) for solver in set(cfg.solvers)),
        key=lambda c: (c.ratio, c.seed, SOLVER_ORDER[c.solver]),
    )


def load_problem(cfg: ExperimentConfig) -> Problem:
    spec = resolve_spec(cfg.spec_name)
    if cfg.image is not None:
        xstar = load_image(cfg.image, latent_side=spec.latent_side)
    else:
        xstar = digit_fixture()
    if xstar.d != spec.d:
        raise ConfigError(f"image has {xstar.d} pixels, decoder {cfg.spec_name!r} outputs {spec.d}")
    if not np.any(xstar.values):
        raise ConfigError("ground-truth image is all zero; nMSE is undefined")
    return Problem(cfg=cfg, spec=spec, latent=make_latent(spec, cfg.latent_seed), xstar=xstar)


# ── Writers ──────────────────────────────────────────────────────────────────

def image_name(row: ResultRow) -> str:
    return f"{row.task}_{row.solver}_f{row.ratio:g}_s{row.seed}.pgm"


def write_results(path: Path, rows: list[ResultRow]):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(RESULTS_HEADER)
        for row in rows:
            writer.writerow(row.csv_values())


def summarize(results: list[CellResult]) -> list[dict]:
    groups: dict[tuple, list[CellResult]] = {}
    for result in results:
        row = result.row
        groups.setdefault((row.task, row.solver, row.ratio, row.n), []).append(result)

    summary = []
    for (task, solver, ratio, n), members in groups.items():
        errors = [m.row.nmse for m in members if m.row.status == "ok" and m.row.nmse is not None]
        deltas = [m.delta_i for m in members if m.delta_i is not None]
        summary.append({
            "task": task,
            "solver": solver,
            "ratio": ratio,
            "n": n,
            "runs": len(members),
            "ok": len(errors),
            "nmse_mean": statistics.fmean(errors) if errors else None,
            "nmse_std": statistics.stdev(errors) if len(errors) > 1 else (0.0 if errors else None),
            "delta_i_mean": statistics.fmean(deltas) if deltas else None,
        })
    return summary


def write_summary(path: Path, summary: list[dict]):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(SUMMARY_HEADER)
        for entry in summary:
            writer.writerow([
                entry["task"], entry["solver"], _fmt(entry["ratio"]), entry["n"],
                entry["runs"], entry["ok"], _fmt(entry["nmse_mean"]),
                _fmt(entry["nmse_std"]), _fmt(entry["delta_i_mean"]),
            ])


# ── Entry points ─────────────────────────────────────────────────────────────

def run_experiment(cfg: ExperimentConfig) -> tuple[list[ResultRow], list[dict]]:
    """Run every cell of a cs / cpr / project sweep and write its outputs."""
    if cfg.task == "rec-check":
        raise ConfigError("use rec_check_cmd for the rec-check task")
    problem = load_problem(cfg)
    cells = _cells(cfg)
    logger.info(
        f"[ 🚀 run_experiment ] task={cfg.task} cells={len(cells)} d={problem.spec.d} "
        f"spec={cfg.spec_name} workers={cfg.workers}"
    )

    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(run_cell, [problem] * len(cells), cells))
    else:
        results = [run_cell(problem, cell) for cell in cells]

    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    rows = [r.row for r in results]
    write_results(cfg.out_dir / "results.csv", rows)
    summary = summarize(results)
    write_summary(cfg.out_dir / "summary.csv", summary)
    if cfg.write_images:
        for result in results:
            if result.image is not None:
                save_image(cfg.out_dir / image_name(result.row), result.image)

    logger.info(f"[ 💾 run_experiment ] wrote {len(rows)} rows to {cfg.out_dir}")
    return rows, summary


def rec_check_cmd(cfg: ExperimentConfig) -> list[RecReport]:
    """Empirical Set-REC pass rates over the n-grid, one coupled operator family per seed."""
    spec = resolve_spec(cfg.spec_name)
    latent = make_latent(spec, cfg.latent_seed)
    reports = []
    for seed in sorted(set(cfg.seeds)):
        operators = nested_operators(cfg.n_grid, spec.d, SeededRng(seed))
        for n, op in operators.items():
            if cfg.orthonormal and n == spec.d:
                op = orthonormal_operator(spec.d, SeededRng(seed))
            report = rec_check(op, spec, latent, cfg.alpha, cfg.trials, SeededRng(seed), cfg.rec_mode)
            logger.info(f"[ 📏 rec_check_cmd ] seed={seed} n={n} pass_rate={report.pass_rate:.3f}")
            reports.append((seed, report))

    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    with open(cfg.out_dir / "rec_check.csv", "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(REC_HEADER)
        for seed, r in reports:
            writer.writerow([
                seed, r.n, r.d, _fmt(r.alpha), r.mode, r.trials, r.discarded,
                _fmt(r.pass_rate), _fmt(r.min_ratio), _fmt(r.max_ratio),
            ])
    return [r for _, r in reports]
