"""Seeded Monte-Carlo experiment engine.

Reproducible sweeps over capacity / server count / user count, fading
evaluation, mobility over time, request-probability perturbation, and
online LRU/LFU comparison. Every random stream is derived from the
experiment's master seed via ``seeding.derive_seed``, so runs are pure
functions of their configuration and replicates can execute in any order
(or in parallel) without changing the output.

Note: the Zipf skew has no published reference value for this protocol; it
defaults to 1.0 and shifts absolute hit ratios, so report it alongside any
numbers. Each user gets its own popularity permutation, i.e. users disagree
about which models are popular, which makes cache diversity matter.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError
from .library import LibraryConfig, ModelLibrary, generate_library
from .network import Topology, TopologyConfig, generate_topology, mobility_step
from .objective import UNIT, EvalContext, Placement, Workload
from .seeding import derive_seed
from .solvers import (
    OnlineResult,
    SolveReport,
    draw_request_schedule,
    evaluate_schedule,
    online_policy,
    solve_exhaustive,
    solve_gen,
    solve_independent,
    solve_spec,
)


@dataclass(frozen=True)
class WorkloadConfig:
    """Zipf request-probability generator settings."""

    zipf_skew: float = 1.0
    activity: float = 0.5                       # per-user total request probability
    latency_req_range: tuple[float, float] = (0.5, 1.0)
    inference_latency_range: tuple[float, float] = (0.001, 0.005)


def generate_workload(cfg: WorkloadConfig, num_users: int, num_models: int,
                      seed: int) -> Workload:
    """Per-user Zipf request probabilities plus latency draws.

    Each user ranks the models by its own seeded permutation; probability
    of the rank-r model is proportional to r**(-skew), normalised so the
    user's row sums to the activity probability, then quantised to integer
    micro-units. Latency requirements and inference latencies are uniform
    over their configured ranges.
    """
    if num_models <= 0:
        raise ConfigError("workload needs at least one model")
    if cfg.zipf_skew <= 0:
        raise ConfigError("zipf skew must be positive")
    rng = np.random.default_rng(derive_seed(seed, "workload"))
    ranks = np.arange(1, num_models + 1, dtype=float)
    base = ranks ** (-cfg.zipf_skew)
    base /= base.sum()

    p_units = np.zeros((num_users, num_models), dtype=np.int64)
    for k in range(num_users):
        perm = rng.permutation(num_models)
        probs = np.empty(num_models)
        probs[perm] = base
        p_units[k] = np.floor(probs * cfg.activity * UNIT + 0.5).astype(np.int64)

    lo, hi = cfg.latency_req_range
    latency_req = rng.uniform(lo, hi, size=(num_users, num_models))
    lo, hi = cfg.inference_latency_range
    inference = rng.uniform(lo, hi, size=(num_users, num_models))
    meta = {"generator": "zipf", "zipf_skew": repr(cfg.zipf_skew),
            "activity": repr(cfg.activity), "seed": str(int(seed))}
    return Workload(p_units=p_units, latency_req=latency_req,
                    inference_latency=inference, meta=meta)


def _beta_params(mu: float, sigma: float) -> tuple[float, float]:
    """Shape parameters of a beta distribution with the given mean and std.

    Requires sigma**2 < mu * (1 - mu); callers clamp sigma first.
    """
    common = mu * (1.0 - mu) / (sigma * sigma) - 1.0
    return mu * common, (1.0 - mu) * common


def perturb_probabilities(workload: Workload, cv: float, seed: int) -> Workload:
    """Noisy estimate of the request probabilities for placement decisions.

    Each positive probability is replaced by a beta draw with mean equal to
    the true value and standard deviation cv * mean, clamped where the beta
    variance bound requires it. cv = 0 returns the workload unchanged. The
    true workload should still be used for evaluation.
    """
    if not 0 <= cv <= 0.5:
        raise ConfigError(f"coefficient of variation must be in [0, 0.5], got {cv}")
    if cv == 0:
        return workload
    rng = np.random.default_rng(derive_seed(seed, "perturb"))
    p = np.asarray(workload.p_units, dtype=np.int64)
    out = p.copy()
    rows, cols = np.nonzero(p)
    for k, i in zip(rows, cols):
        mu = p[k, i] / UNIT
        cap = math.sqrt(mu * (1.0 - mu))
        sigma = min(cv * mu, 0.99 * cap)
        if sigma <= 0:
            continue
        a, b = _beta_params(mu, sigma)
        out[k, i] = int(round(float(rng.beta(a, b)) * UNIT))
    return replace(workload, p_units=out)


def evaluate_fading(lib: ModelLibrary, topo: Topology, workload: Workload,
                    placement: Placement, draws: int, seed: int,
                    gains: np.ndarray | None = None) -> tuple[float, float]:
    """Mean and std of the hit ratio over fading realisations.

    Each realisation draws a unit-mean exponential power gain per link and
    re-evaluates the latency indicators; the placement stays fixed. Pass
    ``gains`` with shape (draws, M, K) to replay fixed realisations.
    """
    if draws < 1:
        raise ConfigError("need at least one fading draw")
    ctx = EvalContext(lib, topo, workload)
    if gains is None:
        rng = np.random.default_rng(derive_seed(seed, "fading"))
        gains = rng.exponential(1.0, size=(draws, len(topo.servers), len(topo.users)))
    elif gains.shape[0] != draws:
        raise ConfigError("gain array does not match the number of draws")
    if ctx.total_units == 0:
        raise ConfigError("all-zero request matrix: hit ratio undefined")
    ratios = np.empty(draws)
    x = placement.matrix
    for d in range(draws):
        ind = ctx.indicator_with_gains(gains[d])
        served = (x[:, None, :] & ind).any(axis=0)
        ratios[d] = int(ctx.p[served].sum()) / ctx.total_units
    return float(ratios.mean()), float(ratios.std())


# ---------------------------------------------------------------------------
# Experiment configuration and runners
# ---------------------------------------------------------------------------

ALGORITHMS = ("spec", "gen", "independent", "oracle")


@dataclass(frozen=True)
class ExperimentConfig:
    """Desk-scale experiment description; every runner takes one of these.

    Defaults are intentionally smaller than the reference protocol (100
    topologies, 1000 fading draws) to keep runs interactive; scale
    ``replicates`` and ``fading_draws`` up to match it.
    """

    master_seed: int = 0
    library: LibraryConfig = field(default_factory=lambda: LibraryConfig(
        kind="adapter", structures=2, models_per_structure=10,
        backbone_bytes=(150_000_000, 300_000_000)))
    workload: WorkloadConfig = WorkloadConfig()
    base_q: int = 1_000_000_000
    base_m: int = 6
    base_k: int = 20
    q_values: tuple[int, ...] = ()
    m_values: tuple[int, ...] = ()
    k_values: tuple[int, ...] = ()
    replicates: int = 20
    fading_draws: int = 100
    algorithms: tuple[str, ...] = ("spec", "gen", "independent")
    epsilon: float = 0.1
    area_m: float = 1000.0
    coverage_radius_m: float = 275.0
    mobility_pattern: str = "pedestrian"
    horizon_s: float = 7200.0
    mobility_slot_s: float = 5.0
    online_slot_s: float = 10.0
    online_slots: int = 120
    perturbation_cv: tuple[float, ...] = (0.0, 0.5)
    jobs: int = 1

    def validate(self) -> None:
        if self.replicates < 1:
            raise ConfigError("replicates must be >= 1")
        for alg in self.algorithms:
            if alg not in ALGORITHMS:
                raise ConfigError(f"unknown algorithm {alg!r}")
        for name, axis in (("q_values", self.q_values),
                           ("m_values", self.m_values),
                           ("k_values", self.k_values)):
            if any(v <= 0 for v in axis):
                raise ConfigError(f"{name} entries must be positive")


@dataclass(frozen=True)
class MetricRow:
    seed: int
    algorithm: str
    epsilon: float
    q: int
    m: int
    k: int
    hit_ratio_expected: float
    hit_ratio_fading: float
    runtime_s: float
    std_dev: float


def _instance_library(cfg: ExperimentConfig) -> ModelLibrary:
    return generate_library(cfg.library, derive_seed(cfg.master_seed, "library"))


def _instance_topology(cfg: ExperimentConfig, m: int, k: int, q: int, rep: int,
                       pattern: str = "static") -> Topology:
    tcfg = TopologyConfig(
        num_servers=m, num_users=k,
        width_m=cfg.area_m, height_m=cfg.area_m,
        capacity_bytes=q, coverage_radius_m=cfg.coverage_radius_m,
        mobility_pattern=pattern,
    )
    return generate_topology(tcfg, derive_seed(cfg.master_seed, "topology", rep, m, k, pattern))


def _solve(algorithm: str, lib, topo, workload, epsilon: float) -> SolveReport:
    if algorithm == "spec":
        return solve_spec(lib, topo, workload, epsilon)
    if algorithm == "gen":
        return solve_gen(lib, topo, workload)
    if algorithm == "independent":
        return solve_independent(lib, topo, workload)
    if algorithm == "oracle":
        return solve_exhaustive(lib, topo, workload)
    raise ConfigError(f"unknown algorithm {algorithm!r}")


def _sweep_points(cfg: ExperimentConfig) -> list[tuple[str, int, int, int]]:
    points: list[tuple[str, int, int, int]] = []
    for q in (cfg.q_values or (cfg.base_q,)):
        points.append(("Q", int(q), cfg.base_m, cfg.base_k))
    for m in cfg.m_values:
        points.append(("M", cfg.base_q, int(m), cfg.base_k))
    for k in cfg.k_values:
        points.append(("K", cfg.base_q, cfg.base_m, int(k)))
    return points


def _sweep_replicate(args: tuple) -> list[MetricRow]:
    cfg, lib, point, rep = args
    _, q, m, k = point
    topo = _instance_topology(cfg, m, k, q, rep)
    wl_seed = derive_seed(cfg.master_seed, "workload", rep, k)
    workload = generate_workload(cfg.workload, k, len(lib.model_ids), wl_seed)
    rows = []
    for alg in cfg.algorithms:
        report = _solve(alg, lib, topo, workload, cfg.epsilon)
        fading_mean, fading_std = evaluate_fading(
            lib, topo, workload, report.placement, cfg.fading_draws,
            derive_seed(cfg.master_seed, "fading", rep, q, m, k, alg),
        )
        rows.append(MetricRow(
            seed=rep, algorithm=alg,
            epsilon=cfg.epsilon if alg == "spec" else 0.0,
            q=q, m=m, k=k,
            hit_ratio_expected=report.hit_ratio,
            hit_ratio_fading=fading_mean,
            runtime_s=report.runtime_s,
            std_dev=fading_std,
        ))
    return rows


def run_sweep(cfg: ExperimentConfig) -> list[MetricRow]:
    """Hit ratio across the configured Q / M / K axes.

    One row per (axis point, replicate, algorithm); output is sorted
    canonically so the result is independent of execution interleaving.
    """
    cfg.validate()
    lib = _instance_library(cfg)
    tasks = [
        (cfg, lib, point, rep)
        for point in _sweep_points(cfg)
        for rep in range(cfg.replicates)
    ]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            chunks = list(pool.map(_sweep_replicate, tasks))
    else:
        chunks = [_sweep_replicate(t) for t in tasks]
    rows = [row for chunk in chunks for row in chunk]
    rows.sort(key=lambda r: (r.q, r.m, r.k, r.seed, r.algorithm))
    return rows


@dataclass(frozen=True)
class SeriesRow:
    slot: int
    time_s: float
    algorithm: str
    hit_ratio: float


def run_mobility(cfg: ExperimentConfig) -> tuple[list[SeriesRow], dict[str, float]]:
    """Hit ratio over time under user mobility with placements fixed at t=0.

    Returns the per-slot series for each algorithm and a summary mapping
    algorithm -> relative degradation (first minus last over first).
    """
    cfg.validate()
    lib = _instance_library(cfg)
    topo = _instance_topology(cfg, cfg.base_m, cfg.base_k, cfg.base_q, 0,
                              pattern=cfg.mobility_pattern)
    workload = generate_workload(
        cfg.workload, cfg.base_k, len(lib.model_ids),
        derive_seed(cfg.master_seed, "workload", 0, cfg.base_k))

    placements = {
        alg: _solve(alg, lib, topo, workload, cfg.epsilon).placement
        for alg in cfg.algorithms
    }

    slots = int(cfg.horizon_s / cfg.mobility_slot_s)
    rows: list[SeriesRow] = []
    current = topo
    for slot in range(slots):
        ctx = EvalContext(lib, current, workload)
        for alg in cfg.algorithms:
            ratio = (ctx.hit_units(placements[alg]) / ctx.total_units
                     if ctx.total_units else 0.0)
            rows.append(SeriesRow(slot=slot, time_s=slot * cfg.mobility_slot_s,
                                  algorithm=alg, hit_ratio=ratio))
        current = mobility_step(current, cfg.mobility_slot_s,
                                derive_seed(cfg.master_seed, "mobility", slot))

    summary: dict[str, float] = {}
    for alg in cfg.algorithms:
        series = [r.hit_ratio for r in rows if r.algorithm == alg]
        first, last = series[0], series[-1]
        summary[alg] = (first - last) / first if first > 0 else 0.0
    return rows, summary


ONLINE_ALGORITHMS = ("spec", "gen", "lru", "lfu")


def run_online(cfg: ExperimentConfig, rep: int = 0) -> list[SeriesRow]:
    """Static placements versus LRU/LFU on one shared request trace.

    Spec and Gen place once at t=0 from the true probabilities; the online
    policies start cold and adapt. All four see the same per-slot requests,
    and the series records each slot's served fraction.
    """
    cfg.validate()
    lib = _instance_library(cfg)
    topo = _instance_topology(cfg, cfg.base_m, cfg.base_k, cfg.base_q, rep)
    workload = generate_workload(
        cfg.workload, cfg.base_k, len(lib.model_ids),
        derive_seed(cfg.master_seed, "workload", rep, cfg.base_k))
    schedule = draw_request_schedule(
        workload, cfg.online_slots, derive_seed(cfg.master_seed, "requests", rep))
    ctx = EvalContext(lib, topo, workload)

    series: dict[str, list[float]] = {}
    for alg in ("spec", "gen"):
        placement = _solve(alg, lib, topo, workload, cfg.epsilon).placement
        series[alg] = evaluate_schedule(ctx, placement, schedule)
    for policy in ("lru", "lfu"):
        result: OnlineResult = online_policy(
            policy, lib, topo, workload, cfg.online_slots,
            slot_seconds=cfg.online_slot_s,
            seed=derive_seed(cfg.master_seed, "requests", rep),
            schedule=schedule)
        series[policy] = list(result.series)

    rows: list[SeriesRow] = []
    for slot in range(cfg.online_slots):
        for alg in ONLINE_ALGORITHMS:
            rows.append(SeriesRow(slot=slot, time_s=slot * cfg.online_slot_s,
                                  algorithm=alg, hit_ratio=series[alg][slot]))
    return rows


@dataclass(frozen=True)
class PerturbationRow:
    seed: int
    cv: float
    algorithm: str
    hit_ratio: float


def run_perturbation(cfg: ExperimentConfig) -> list[PerturbationRow]:
    """Placement from noisy probability estimates, evaluated on the truth.

    For each replicate and coefficient of variation, the solvers place
    using a beta-perturbed workload and the row records the hit ratio of
    that placement under the true workload.
    """
    cfg.validate()
    lib = _instance_library(cfg)
    rows: list[PerturbationRow] = []
    for rep in range(cfg.replicates):
        topo = _instance_topology(cfg, cfg.base_m, cfg.base_k, cfg.base_q, rep)
        truth = generate_workload(
            cfg.workload, cfg.base_k, len(lib.model_ids),
            derive_seed(cfg.master_seed, "workload", rep, cfg.base_k))
        ctx = EvalContext(lib, topo, truth)
        for cv in cfg.perturbation_cv:
            estimated = perturb_probabilities(
                truth, cv, derive_seed(cfg.master_seed, "cv", rep, str(cv)))
            for alg in cfg.algorithms:
                report = _solve(alg, lib, topo, estimated, cfg.epsilon)
                ratio = (ctx.hit_units(report.placement) / ctx.total_units
                         if ctx.total_units else 0.0)
                rows.append(PerturbationRow(seed=rep, cv=cv, algorithm=alg,
                                            hit_ratio=ratio))
    rows.sort(key=lambda r: (r.seed, r.cv, r.algorithm))
    return rows
