"""Benchmark orchestration: mechanisms x workloads x repetitions.

Each repetition places fresh households from its own derived seed, builds
the true and clipped matrices, runs every requested mechanism once, and
scores all workloads against the true (unclipped) matrix.  Workloads are
generated once per benchmark.  Every row is reproducible from the master
seed and the config hash, both embedded in the report; the report refuses
to render if any mechanism's ledger did not consume its full budget.

Repetitions are independent and can run on worker processes (n_jobs); the
row order and values do not depend on the worker count.
"""

from __future__ import annotations

import hashlib
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .baselines import (
    identity_sanitize,
    kalman_sanitize_matrix,
    transform_sanitize_matrix,
)
from .dp import BudgetLedger, make_rng
from .matrix import (
    ConsumptionMatrix,
    answer_range_query,
    build_consumption_matrix,
    clip_readings,
    mean_mre,
    minmax_normalize,
)
from .pipeline import PatternPipelineConfig, PatternRunResult, pattern_sanitize
from .rnn import ModelConfig
from .synth import ConsumerModel, PlacementSpec, synth_households
from .workload import QueryWorkload, generate_queries

MECHANISMS = ("identity", "fourier", "wavelet", "kalman", "pattern")

#: a ledger must land this close to the full budget for the report to render
BUDGET_AUDIT_TOLERANCE = 1e-9


@dataclass
class BenchConfig:
    mechanisms: tuple = ("identity", "pattern")
    placements: tuple = ("uniform",)
    workloads: tuple = ("random", "small", "large")
    n_households: int = 2048
    grid_side: int = 32
    t_total: int = 220
    t_train: int = 100
    eps_total: float = 30.0
    eps_pattern: float = 10.0
    eps_sanitize: float = 20.0
    clip: float = 1.85
    k_coeff: int = 10
    k_quant: int = 8
    depth: int | None = None
    window: int = 6
    epochs: int = 20
    query_count: int = 300
    reps: int = 10
    master_seed: int = 0
    n_jobs: int = 1
    consumer_model: ConsumerModel = field(default_factory=ConsumerModel)

    def __post_init__(self):
        for mech in self.mechanisms:
            if mech not in MECHANISMS:
                raise ValueError(f"unknown mechanism {mech!r}")
        if "pattern" in self.mechanisms and \
                abs(self.eps_total - (self.eps_pattern + self.eps_sanitize)) > 1e-12:
            raise ValueError("eps_total must equal eps_pattern + eps_sanitize")

    def hash(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True, default=str)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass
class BenchRow:
    mechanism: str
    placement: str
    workload: str
    rep: int                 # -1 marks the average over repetitions
    mre_mean_pct: float
    excluded: int
    runtime_s: float
    consumed_eps: float


@dataclass
class BenchmarkReport:
    master_seed: int
    config_hash: str
    rows: list[BenchRow]

    def mean_rows(self) -> list[BenchRow]:
        groups: dict[tuple, list[BenchRow]] = {}
        for row in self.rows:
            groups.setdefault((row.mechanism, row.placement, row.workload), []).append(row)
        out = []
        for (mech, placement, workload), rows in groups.items():
            n = len(rows)
            out.append(BenchRow(
                mech, placement, workload, -1,
                sum(r.mre_mean_pct for r in rows) / n,
                sum(r.excluded for r in rows),
                sum(r.runtime_s for r in rows) / n,
                sum(r.consumed_eps for r in rows) / n,
            ))
        return out

    def mean_mre(self, mechanism: str, placement: str, workload: str) -> float:
        for row in self.mean_rows():
            if (row.mechanism, row.placement, row.workload) == (mechanism, placement, workload):
                return row.mre_mean_pct
        raise KeyError((mechanism, placement, workload))

    def to_csv(self, path):
        path = Path(path)
        with path.open("w") as fh:
            fh.write(f"# master_seed={self.master_seed} config_hash={self.config_hash}\n")
            fh.write("mechanism,placement,workload,rep,mre_mean_pct,excluded,runtime_s,consumed_eps\n")
            for row in self.rows + self.mean_rows():
                rep = "mean" if row.rep < 0 else str(row.rep)
                fh.write(f"{row.mechanism},{row.placement},{row.workload},{rep},"
                         f"{row.mre_mean_pct!r},{row.excluded},{row.runtime_s:.3f},"
                         f"{row.consumed_eps!r}\n")


def run_mechanism(name: str, dataset, config: BenchConfig, seed) -> tuple[ConsumptionMatrix, BudgetLedger, PatternRunResult | None]:
    """Run one mechanism on a dataset; returns its output matrix and ledger."""
    rng = make_rng((seed, "mechanism", name))
    if name == "pattern":
        pipe_config = PatternPipelineConfig(
            eps_pattern=config.eps_pattern,
            eps_sanitize=config.eps_sanitize,
            clip=config.clip,
            t_train=config.t_train,
            k_quant=config.k_quant,
            depth=config.depth,
            model=ModelConfig(window=config.window, epochs=config.epochs,
                              seed=derive_seed((seed, "model"))),
        )
        result = pattern_sanitize(dataset, pipe_config, seed)
        return result.sanitized, result.ledger, result

    clipped = clip_readings(dataset, config.clip)
    cons = build_consumption_matrix(clipped)
    ledger = BudgetLedger(0.0, config.eps_total)
    if name == "identity":
        norm, params = minmax_normalize(cons)
        out = identity_sanitize(norm, config.eps_total, ledger, rng, params)
    elif name in ("fourier", "wavelet"):
        out = transform_sanitize_matrix(cons, name, config.k_coeff, config.eps_total,
                                        config.clip, ledger, rng)
    elif name == "kalman":
        out = kalman_sanitize_matrix(cons, config.eps_total, config.clip, ledger, rng)
    else:
        raise ValueError(f"unknown mechanism {name!r}")
    return out, ledger, None


def derive_seed(key) -> int:
    """Stable int seed from a structured key (for int-seeded configs)."""
    digest = hashlib.sha256(repr(key).encode()).digest()
    return int.from_bytes(digest[:8], "little")


def evaluate_workloads(sanitized: ConsumptionMatrix, workloads: dict[str, QueryWorkload],
                       true_answers: dict[str, list[float]]) -> dict[str, tuple[float, int]]:
    """Mean MRE per workload.  Only sanitized matrices may be queried here;
    the true answers were computed up front from the raw matrix."""
    if sanitized.provenance != "sanitized":
        raise ValueError(
            f"evaluation path may only read sanitized matrices, got {sanitized.provenance!r}"
        )
    out = {}
    for cat, workload in workloads.items():
        noisy = [answer_range_query(sanitized, q) for q in workload.queries]
        out[cat] = mean_mre(true_answers[cat], noisy)
    return out


def _run_repetition(config: BenchConfig, placement: str, rep: int) -> list[BenchRow]:
    seed = (config.master_seed, placement, rep)
    spec = PlacementSpec(placement, config.n_households, config.grid_side, config.t_total,
                         seed=derive_seed((seed, "placement")), repetitions=config.reps)
    dataset = synth_households(spec, config.consumer_model)
    truth = build_consumption_matrix(dataset)

    workloads = {
        cat: generate_queries(cat, config.query_count, dataset.grid,
                              (config.master_seed, "workload", cat))
        for cat in config.workloads
    }
    true_answers = {
        cat: [answer_range_query(truth, q) for q in w.queries]
        for cat, w in workloads.items()
    }

    rows = []
    for mech in config.mechanisms:
        started = time.perf_counter()
        sanitized, ledger, _ = run_mechanism(mech, dataset, config, seed)
        runtime = time.perf_counter() - started
        consumed = ledger.total()
        if abs(consumed - config.eps_total) > max(BUDGET_AUDIT_TOLERANCE, 1e-12 * config.eps_total):
            raise RuntimeError(
                f"{mech} consumed {consumed}, expected {config.eps_total}; refusing to report"
            )
        scores = evaluate_workloads(sanitized, workloads, true_answers)
        for cat, (mre_mean, excluded) in scores.items():
            rows.append(BenchRow(mech, placement, cat, rep, mre_mean, excluded,
                                 runtime, consumed))
    return rows


def run_benchmark(config: BenchConfig) -> BenchmarkReport:
    jobs = [(placement, rep) for placement in config.placements for rep in range(config.reps)]
    if config.n_jobs > 1:
        with ProcessPoolExecutor(max_workers=config.n_jobs) as pool:
            results = list(pool.map(_rep_worker, [(config, p, r) for p, r in jobs]))
    else:
        results = [_run_repetition(config, p, r) for p, r in jobs]
    rows = [row for chunk in results for row in chunk]
    return BenchmarkReport(config.master_seed, config.hash(), rows)


def _rep_worker(args) -> list[BenchRow]:
    return _run_repetition(*args)
