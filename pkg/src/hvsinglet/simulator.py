"""Correlation experiments: finite-shot sampling, analytic averages, CHSH.

Sampling is organized in fixed 65536-shot blocks, each driven by its own
counter-based stream derived from (seed, pair index, block index). Blocks
are merged in index order, so estimates are bitwise identical for any
thread count; ``threads`` buys wall time only.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .geometry import RandomStream, as_generator, require_unit, sample_uniform_sphere, unit
from .models import OUTCOMES, HiddenVariableModel, LambdaPoint, sample_valid_tables

__all__ = [
    "OPTIMAL_CHSH_SETTINGS",
    "ExperimentConfig",
    "CorrelationEstimate",
    "ChshResult",
    "MalusReport",
    "sample_outcome",
    "estimate_correlation",
    "run_experiment",
    "chsh",
    "hv_chsh_values",
    "find_chsh_witness",
    "malus_marginal",
    "malus_gap_report",
    "CSV_HEADER",
    "write_correlations_csv",
    "write_chsh_csv",
]

_SIGMA_TAU = np.array([[1.0, -1.0], [-1.0, 1.0]])
_BLOCK = 65536

# Settings maximizing the quantum CHSH value S = 2*sqrt(2) for the singlet
# (E(a, b) = -a.b): pairs ordered (a0,b0), (a0,b1), (a1,b0), (a1,b1), with
# the CHSH sign pattern + + + -.
_A0 = np.array([0.0, 0.0, 1.0])
_A1 = np.array([1.0, 0.0, 0.0])
_B0 = unit([-1.0, 0.0, -1.0])
_B1 = unit([1.0, 0.0, -1.0])
OPTIMAL_CHSH_SETTINGS = np.array([[_A0, _B0], [_A0, _B1], [_A1, _B0], [_A1, _B1]])
CHSH_SIGNS = (1.0, 1.0, 1.0, -1.0)


@dataclass(frozen=True)
class ExperimentConfig:
    """Knobs for correlation estimation."""

    shots: int = 100_000
    mode: str = "sampling"
    seed: int = 0
    threads: int = 1

    def __post_init__(self) -> None:
        if self.shots < 1:
            raise ValueError(f"shots must be >= 1, got {self.shots}")
        if self.mode not in ("sampling", "analytic"):
            raise ValueError(f"mode must be 'sampling' or 'analytic', got {self.mode!r}")
        if self.threads < 1:
            raise ValueError(f"threads must be >= 1, got {self.threads}")


@dataclass
class CorrelationEstimate:
    a: np.ndarray
    b: np.ndarray
    e_est: float
    stderr: float
    e_qm: float
    n_shots: int
    mode: str
    seed: int


@dataclass
class ChshResult:
    estimates: list[CorrelationEstimate]
    s_est: float
    stderr: float
    s_qm: float
    seed: int

    @property
    def total_shots(self) -> int:
        return sum(e.n_shots for e in self.estimates)


def sample_outcome(table, source) -> tuple[int, int]:
    """Draw one (sigma, tau) pair from a 2x2 probability table."""
    t = np.asarray(table, dtype=float)
    if t.shape != (2, 2) or t.min() < -1e-12 or abs(float(t.sum()) - 1.0) > 1e-9:
        raise ValueError("not a probability table")
    gen = as_generator(source)
    idx = int(np.clip(np.searchsorted(np.cumsum(t.ravel()), gen.random(), side="right"), 0, 3))
    return OUTCOMES[idx // 2], OUTCOMES[idx % 2]


def _sample_products(tables: np.ndarray, gen: np.random.Generator) -> np.ndarray:
    """Vectorized outcome draws; returns the products sigma*tau in {-1, +1}."""
    cum = np.cumsum(tables.reshape(len(tables), 4), axis=1)
    u = gen.random(len(tables))
    idx = np.clip((u[:, None] >= cum).sum(axis=1), 0, 3)
    return np.where((idx == 0) | (idx == 3), 1.0, -1.0)


def _blocks(shots: int) -> list[int]:
    sizes = [_BLOCK] * (shots // _BLOCK)
    if shots % _BLOCK:
        sizes.append(shots % _BLOCK)
    return sizes


def _map_ordered(fn, args, threads: int):
    if threads > 1 and len(args) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, args))
    return [fn(x) for x in args]


def estimate_correlation(model: HiddenVariableModel, a, b,
                         config: ExperimentConfig | None = None,
                         pair_index: int = 0) -> CorrelationEstimate:
    """Estimate E(a, b) = sum sigma*tau P(sigma, tau | a, b) for one pair.

    mode 'analytic' integrates the lambda-conditioned correlator over the
    model's quadrature (stderr 0); models without a quadrature fall back to
    a lambda-level Monte Carlo average of the conditional correlator with
    ``shots`` draws. mode 'sampling' simulates the experiment shot by shot:
    draw lambda, draw (sigma, tau) from the conditional table, average the
    products.
    """
    cfg = config or ExperimentConfig()
    a = require_unit(a, name="a")
    b = require_unit(b, name="b")
    e_qm = -float(np.clip(np.dot(a, b), -1.0, 1.0))
    pair_stream = RandomStream(cfg.seed).split(2, pair_index)

    if cfg.mode == "analytic" and model.lambda_space.quadrature is not None:
        nodes, w = model.lambda_space.quadrature
        corr, ok = model.correlations_masked(nodes, a, b)
        e = float(np.sum(w[ok] * corr[ok]))
        return CorrelationEstimate(a, b, e, 0.0, e_qm, len(nodes), "analytic",
                                   cfg.seed)

    sizes = _blocks(cfg.shots)

    def mc_block(k: int) -> tuple[float, float, int]:
        gen = pair_stream.split(k).generator()
        batch, tables = sample_valid_tables(model, gen, sizes[k], a, b)
        if cfg.mode == "analytic":
            vals = np.einsum("nij,ij->n", tables, _SIGMA_TAU)
        else:
            vals = _sample_products(tables, gen)
        return float(vals.sum()), float((vals * vals).sum()), len(vals)

    parts = _map_ordered(mc_block, range(len(sizes)), cfg.threads)
    total = sum(p[0] for p in parts)
    total_sq = sum(p[1] for p in parts)
    n = sum(p[2] for p in parts)
    e = total / n
    var = max(0.0, (total_sq - n * e * e) / max(1, n - 1))
    stderr = float(np.sqrt(var / n))
    return CorrelationEstimate(a, b, e, stderr, e_qm, n, cfg.mode, cfg.seed)


def run_experiment(model: HiddenVariableModel, settings,
                   config: ExperimentConfig | None = None) -> list[CorrelationEstimate]:
    """Estimate correlations for a list of (a, b) pairs, one stream each."""
    cfg = config or ExperimentConfig()
    pairs = np.asarray(settings, dtype=float)
    if pairs.ndim != 3 or pairs.shape[1:] != (2, 3):
        raise ValueError(f"settings must have shape (n, 2, 3), got {pairs.shape}")
    return [estimate_correlation(model, pairs[i, 0], pairs[i, 1], cfg, pair_index=i)
            for i in range(len(pairs))]


def chsh(model: HiddenVariableModel, config: ExperimentConfig | None = None,
         settings=None) -> ChshResult:
    """CHSH combination S = |E00 + E01 + E10 - E11| at the given settings.

    Defaults to the quantum-optimal axes, where S_qm = 2*sqrt(2).
    """
    cfg = config or ExperimentConfig()
    pairs = OPTIMAL_CHSH_SETTINGS if settings is None else np.asarray(settings, dtype=float)
    if pairs.shape != (4, 2, 3):
        raise ValueError(f"CHSH needs exactly 4 settings pairs, got shape {pairs.shape}")
    ests = run_experiment(model, pairs, cfg)
    s_est = abs(sum(sgn * e.e_est for sgn, e in zip(CHSH_SIGNS, ests)))
    stderr = float(np.sqrt(sum(e.stderr**2 for e in ests)))
    s_qm = abs(sum(sgn * e.e_qm for sgn, e in zip(CHSH_SIGNS, ests)))
    return ChshResult(ests, float(s_est), stderr, float(s_qm), cfg.seed)


def hv_chsh_values(model: HiddenVariableModel, lam, settings=None) -> np.ndarray:
    """Per-lambda CHSH values |sum signs * E(lambda, a_i, b_i)|.

    At the hidden-variable level the CHSH combination is not bounded by the
    quantum 2*sqrt(2): individual lambda may carry stronger-than-quantum
    correlations that average out.
    """
    pairs = OPTIMAL_CHSH_SETTINGS if settings is None else np.asarray(settings, dtype=float)
    if pairs.shape != (4, 2, 3):
        raise ValueError(f"CHSH needs exactly 4 settings pairs, got shape {pairs.shape}")
    total = None
    for sgn, (a, b) in zip(CHSH_SIGNS, pairs):
        vals, ok = model.correlations_masked(lam, a, b)
        vals = np.where(ok, vals, np.nan)
        total = sgn * vals if total is None else total + sgn * vals
    return np.abs(total)


def find_chsh_witness(model: HiddenVariableModel, settings=None, n_lambda: int = 4096,
                      source=None) -> tuple[float, LambdaPoint]:
    """Largest per-lambda CHSH value over quadrature nodes or a sample."""
    if model.lambda_space.quadrature is not None:
        batch = model.lambda_space.quadrature[0]
    else:
        gen = as_generator(source if source is not None else RandomStream(0).split(15))
        batch = model.lambda_space.sample(gen, n_lambda)
    vals = hv_chsh_values(model, batch, settings)
    j = int(np.nanargmax(vals))
    return float(vals[j]), batch.point(j)


# ---------------------------------------------------------------------------
# Single-side marginals


def malus_marginal(sigma: int, a, u) -> float:
    """Malus-style detection probability (1 + sigma * a.u)/2 for axis u."""
    if sigma not in OUTCOMES:
        raise ValueError(f"sigma must be +-1, got {sigma}")
    a = require_unit(a, name="a")
    u = require_unit(u, name="u")
    return (1.0 + sigma * float(np.dot(a, u))) / 2.0


@dataclass
class MalusReport:
    """Contrast between model marginals and a Malus-law vector rule."""

    applicable: bool
    max_gap: float = 0.0
    axis: np.ndarray | None = None
    lam: LambdaPoint | None = None
    samples_used: int = 0


def malus_gap_report(model: HiddenVariableModel, n_axes: int = 20, n_lambda: int = 200,
                     source=None) -> MalusReport:
    """Largest gap between per-lambda marginals and the Malus law.

    Models with trivial marginals sit at distance up to 1/2 from any
    deterministic-vector response; reported as a diagnostic, not a
    constraint (it is what setting independence costs).
    """
    if model.lambda_space.shape.vectors < 1:
        return MalusReport(applicable=False)
    gen = as_generator(source if source is not None else RandomStream(0).split(16))
    worst = MalusReport(applicable=True)
    for _ in range(n_axes):
        a = sample_uniform_sphere(gen)
        b_ref = sample_uniform_sphere(gen)
        batch = model.lambda_space.sample(gen, n_lambda)
        tables, ok = model.tables_masked(batch, a, b_ref)
        margins = tables[ok].sum(axis=2)  # per-lambda P(sigma | a)
        u = batch.vectors[ok, 0, :]
        worst.samples_used += int(np.count_nonzero(ok))
        for side, sigma in enumerate(OUTCOMES):
            malus = (1.0 + sigma * (u @ a)) / 2.0
            gap = np.abs(margins[:, side] - malus)
            j = int(np.argmax(gap))
            if gap[j] > worst.max_gap:
                worst.max_gap = float(gap[j])
                worst.axis = a
                worst.lam = batch.take(ok).point(j)
    return worst


# ---------------------------------------------------------------------------
# CSV output


CSV_HEADER = ["ax", "ay", "az", "bx", "by", "bz", "E_est", "stderr", "E_qm",
              "n_shots", "mode", "seed"]


def _f17(x: float) -> str:
    return f"{float(x):.17g}"


def _estimate_row(e: CorrelationEstimate) -> list[str]:
    return [
        *(_f17(v) for v in e.a), *(_f17(v) for v in e.b),
        _f17(e.e_est), _f17(e.stderr), _f17(e.e_qm),
        str(int(e.n_shots)), e.mode, str(int(e.seed)),
    ]


def _write_rows(target, rows: list[list[str]]) -> None:
    def dump(fh) -> None:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        writer.writerows(rows)

    if hasattr(target, "write"):
        dump(target)
    else:
        with open(target, "w", encoding="utf-8", newline="") as fh:
            dump(fh)


def write_correlations_csv(target, estimates: list[CorrelationEstimate]) -> None:
    """Write one row per settings pair; floats carry 17 significant digits."""
    _write_rows(target, [_estimate_row(e) for e in estimates])


def write_chsh_csv(target, result: ChshResult) -> None:
    """Four pair rows plus a summary row (mode 'chsh', axes nan, E_est = S)."""
    rows = [_estimate_row(e) for e in result.estimates]
    rows.append([
        "nan"] * 6 + [
        _f17(result.s_est), _f17(result.stderr), _f17(result.s_qm),
        str(result.total_shots), "chsh", str(int(result.seed)),
    ])
    _write_rows(target, rows)


def csv_text(writer_fn, payload) -> str:
    """Render a CSV writer's output to a string (stdout convenience)."""
    buf = io.StringIO()
    writer_fn(buf, payload)
    return buf.getvalue()
