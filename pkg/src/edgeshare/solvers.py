"""Placement algorithms.

Four offline solvers plus two online policies, all returning feasible
placements under shared-block storage accounting:

* ``solve_spec``: successive per-server optimisation for libraries with few
  shared blocks. Each server enumerates shared-block combinations and runs
  a rounding dynamic program over specific-block sizes, with an epsilon
  knob trading table size for a per-server (1 - epsilon) guarantee; the
  overall result carries a (1 - epsilon)/2 bound against the optimum.
* ``solve_gen``: plain greedy over single (server, model) additions, usable
  under arbitrary sharing. No constant-factor guarantee exists for it, but
  its value is bounded below by optimum / Gamma, where Gamma is the largest
  cardinality of any feasible placement.
* ``solve_independent``: the same greedy with sharing-blind storage
  accounting (every model billed at full size) as a baseline.
* ``solve_exhaustive``: brute-force oracle over all feasible placements for
  small instances; also reports Gamma.
* ``online_policy``: slot-based LRU/LFU cache simulation with shared-aware
  eviction accounting.

All solvers are deterministic: ties break to the lexicographically first
candidate in the documented enumeration orders.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from . import library as libmod
from .errors import CapExceededError, ConfigError, InvariantError
from .library import Chain, ModelLibrary, detect_chain, enumerate_combinations, shared_blocks
from .network import Topology
from .objective import EvalContext, HitAccounting, Placement, Workload, round_hits

INF = np.int64(2) ** 62

ORACLE_CAP = 22


@dataclass
class DpTable:
    """Min specific-bytes table for one shared-block combination.

    ``table[e, w]`` is the minimum total specific size (bytes) of a subset
    of the first ``e`` eligible models reaching exactly ``w`` granularity
    steps of rounded hits; unreachable cells hold an infinity sentinel.
    Row ``e`` is derived from row ``e - 1`` only, so the table supports the
    standard walk-back reconstruction.
    """

    table: np.ndarray                 # (E+1, W+1) int64
    steps: tuple[int, ...]            # rounded hits / granularity per model
    specific_bytes: tuple[int, ...]   # D(i) per model
    granularity: int

    @property
    def num_items(self) -> int:
        return len(self.steps)

    @property
    def cells(self) -> int:
        return int(self.table.size)


def build_dp_table(rounded_hits: Iterable[int], specific_bytes: Iterable[int],
                   granularity: int) -> DpTable:
    rounded_hits = tuple(int(v) for v in rounded_hits)
    specific_bytes = tuple(int(d) for d in specific_bytes)
    if any(v <= 0 for v in rounded_hits):
        raise InvariantError("dp items must have positive rounded hits")
    if any(v % granularity for v in rounded_hits):
        raise InvariantError("rounded hits must be multiples of the granularity")
    steps = tuple(v // granularity for v in rounded_hits)
    total = sum(steps)
    table = np.full((len(steps) + 1, total + 1), INF, dtype=np.int64)
    table[:, 0] = 0
    for e in range(1, len(steps) + 1):
        s, d = steps[e - 1], specific_bytes[e - 1]
        prev = table[e - 1]
        cur = prev.copy()
        cand = prev[:-s] + d
        cur[s:] = np.minimum(prev[s:], cand)
        cur[0] = 0
        table[e] = cur
    return DpTable(table=table, steps=steps, specific_bytes=specific_bytes,
                   granularity=int(granularity))


def backtrack(dp: DpTable, w_star: int) -> list[int]:
    """Recover which models reach ``w_star`` steps at minimum specific bytes.

    Walks from the last model down: model e is selected iff the remaining
    step count covers its contribution and including it is strictly cheaper
    than reaching the same count without it (ties exclude the model, which
    matches how the table minimum was formed).
    """
    w = int(w_star)
    chosen: list[int] = []
    for e in range(dp.num_items, 0, -1):
        if w == 0:
            break
        s = dp.steps[e - 1]
        if w >= s and dp.table[e - 1, w - s] + dp.specific_bytes[e - 1] < dp.table[e - 1, w]:
            chosen.append(e - 1)
            w -= s
    if w != 0:
        raise InvariantError("dp table walk did not terminate at zero hits")
    chosen.reverse()
    got_steps = sum(dp.steps[e] for e in chosen)
    got_bytes = sum(dp.specific_bytes[e] for e in chosen)
    if got_steps != w_star or got_bytes != int(dp.table[dp.num_items, w_star]):
        raise InvariantError("dp reconstruction mismatch")
    return chosen


@dataclass
class SolveReport:
    """Result of one solver run.

    ``per_server`` decomposes the objective across servers in index order
    (each server credited only with requests no earlier server serves);
    the exact integer numerators are carried alongside so the decomposition
    identity can be checked without float tolerance.
    """

    algorithm: str
    epsilon: float | None
    placement: Placement
    hit_ratio: float
    hit_units: int
    total_units: int
    per_server: tuple[float, ...]
    per_server_units: tuple[int, ...]
    runtime_s: float
    diagnostics: dict[str, int | float | str]


def _decompose_per_server(ctx: EvalContext, placement: Placement) -> np.ndarray:
    served = np.zeros(ctx.p.shape, dtype=bool)
    out = np.zeros(len(ctx.topo.servers), dtype=np.int64)
    for m in range(len(ctx.topo.servers)):
        row = placement.matrix[m]
        units = ctx.server_hit_units(served, m)
        out[m] = int(units[row].sum())
        if row.any():
            served |= row[None, :] & ctx.indicator[m]
    return out


def _make_report(ctx: EvalContext, algorithm: str, epsilon: float | None,
                 placement: Placement, runtime_s: float,
                 diagnostics: dict) -> SolveReport:
    for m in range(len(ctx.topo.servers)):
        usage = ctx.usage_bytes(placement.matrix[m])
        if usage > int(ctx.capacities[m]):
            raise InvariantError(
                f"{algorithm}: server {m} over capacity ({usage} > {int(ctx.capacities[m])})"
            )
    hit_units = ctx.hit_units(placement)
    per_units = _decompose_per_server(ctx, placement)
    if int(per_units.sum()) != hit_units:
        raise InvariantError("per-server decomposition does not sum to the objective")
    total = ctx.total_units
    ratio = hit_units / total if total else 0.0
    per_server = tuple(float(u) / total if total else 0.0 for u in per_units)
    return SolveReport(
        algorithm=algorithm,
        epsilon=epsilon,
        placement=placement,
        hit_ratio=ratio,
        hit_units=hit_units,
        total_units=total,
        per_server=per_server,
        per_server_units=tuple(int(u) for u in per_units),
        runtime_s=runtime_s,
        diagnostics=diagnostics,
    )


# ---------------------------------------------------------------------------
# Special-case solver: combination enumeration + rounding DP
# ---------------------------------------------------------------------------

@dataclass
class SubproblemResult:
    row: np.ndarray             # (I,) bool
    hit_units: int              # unrounded score of the chosen set
    accounting: HitAccounting
    combinations: int           # candidates considered (before capacity skip)
    dp_cells: int


def _solve_server(ctx: EvalContext, served_before: np.ndarray, m: int,
                  epsilon: float, chain: Chain | None) -> SubproblemResult:
    # Combinations are independent given the earlier servers' decisions, so
    # this loop could run in parallel as long as the reduce keeps the
    # canonical (size, lexicographic) first-maximum tie order.
    lib = ctx.lib
    capacity = int(ctx.capacities[m])
    units = ctx.server_hit_units(served_before, m)
    acc = round_hits(units, epsilon)
    index_of = {mid: i for i, mid in enumerate(ctx.model_ids)}

    best_row = np.zeros(len(ctx.model_ids), dtype=bool)
    best_units = 0
    dp_cells = 0

    for combo in enumerate_combinations(lib, capacity, chain=chain):
        budget = capacity - combo.total_bytes
        items = [index_of[mid] for mid in combo.covered_models if acc.rounded[index_of[mid]] > 0]
        if not items:
            continue
        rounded = acc.rounded[items]
        gran = int(np.gcd.reduce(rounded))
        dp = build_dp_table(rounded, ctx.specific_sizes[items], gran)
        dp_cells += dp.cells
        row_feasible = np.nonzero(dp.table[dp.num_items] <= budget)[0]
        w_star = int(row_feasible[-1])
        chosen = backtrack(dp, w_star)
        score = int(units[[items[e] for e in chosen]].sum()) if chosen else 0
        if score > best_units:
            best_units = score
            best_row = np.zeros(len(ctx.model_ids), dtype=bool)
            best_row[[items[e] for e in chosen]] = True

    return SubproblemResult(
        row=best_row,
        hit_units=best_units,
        accounting=acc,
        combinations=libmod.count_candidate_combinations(lib, chain),
        dp_cells=dp_cells,
    )


def solve_subproblem(lib: ModelLibrary, topo: Topology, workload: Workload,
                     prior: Placement, m: int, epsilon: float,
                     enumeration: str = "auto") -> SubproblemResult:
    """Optimise server m's cache set alone, given earlier servers' rows."""
    ctx = EvalContext(lib, topo, workload)
    chain = _resolve_enumeration(lib, enumeration)
    served = np.zeros(ctx.p.shape, dtype=bool)
    for mp in range(m):
        row = prior.matrix[mp]
        if row.any():
            served |= row[None, :] & ctx.indicator[mp]
    return _solve_server(ctx, served, m, epsilon, chain)


def _resolve_enumeration(lib: ModelLibrary, enumeration: str) -> Chain | None:
    if enumeration not in ("auto", "full", "chain"):
        raise ConfigError(f"unknown enumeration mode {enumeration!r}")
    if enumeration == "full":
        chain = None
    else:
        chain = detect_chain(lib)
        if enumeration == "chain" and chain is None:
            raise ConfigError("library has no single-root prefix structure")
    if chain is None and len(shared_blocks(lib)) > libmod.ENUMERATION_CAP:
        raise CapExceededError(
            f"{len(shared_blocks(lib))} shared blocks exceed the enumeration cap "
            f"({libmod.ENUMERATION_CAP}); use the general greedy solver instead"
        )
    return chain


def solve_spec(lib: ModelLibrary, topo: Topology, workload: Workload,
               epsilon: float = 0.1, enumeration: str = "auto") -> SolveReport:
    """Successive per-server solver for few-shared-block libraries.

    Servers are processed in ascending index order; each one solves its own
    sub-problem over the requests earlier servers left unserved, and the
    final placement is the union of the per-server rows.
    """
    t0 = time.perf_counter()
    if not 0 <= epsilon <= 1:
        raise ConfigError(f"epsilon must be in [0, 1], got {epsilon}")
    ctx = EvalContext(lib, topo, workload)
    chain = _resolve_enumeration(lib, enumeration)

    num_m = len(topo.servers)
    rows = np.zeros((num_m, len(ctx.model_ids)), dtype=bool)
    per_units = []
    served = np.zeros(ctx.p.shape, dtype=bool)
    combos = 0
    dp_cells = 0
    for m in range(num_m):
        result = _solve_server(ctx, served, m, epsilon, chain)
        rows[m] = result.row
        per_units.append(result.hit_units)
        combos += result.combinations
        dp_cells += result.dp_cells
        if result.row.any():
            served |= result.row[None, :] & ctx.indicator[m]

    placement = Placement(rows)
    report = _make_report(
        ctx, "spec", float(epsilon), placement, time.perf_counter() - t0,
        {"combinations": combos, "dp_cells": dp_cells,
         "enumeration": "chain" if chain is not None else "full"},
    )
    if tuple(per_units) != report.per_server_units:
        raise InvariantError("successive solver per-server scores disagree with decomposition")
    return report


# ---------------------------------------------------------------------------
# Greedy solvers
# ---------------------------------------------------------------------------

def _greedy(ctx: EvalContext, sharing_aware: bool) -> tuple[Placement, int]:
    num_m = len(ctx.topo.servers)
    num_i = len(ctx.model_ids)
    placed = np.zeros((num_m, num_i), dtype=bool)
    served = np.zeros(ctx.p.shape, dtype=bool)
    block_used = np.zeros((num_m, len(ctx.block_ids)), dtype=bool)
    used_bytes = np.zeros(num_m, dtype=np.int64)
    steps = 0

    while True:
        unserved_p = np.where(served, 0, ctx.p)
        delta = np.empty((num_m, num_i), dtype=np.int64)
        feasible = np.empty((num_m, num_i), dtype=bool)
        for m in range(num_m):
            delta[m] = (unserved_p * ctx.indicator[m]).sum(axis=0, dtype=np.int64)
            if sharing_aware:
                remaining = ctx.block_sizes * ~block_used[m]
                add = ctx.block_membership @ remaining
            else:
                add = ctx.model_sizes
            feasible[m] = used_bytes[m] + add <= int(ctx.capacities[m])
        delta[placed | ~feasible] = -1
        flat = int(np.argmax(delta))
        m_star, i_star = divmod(flat, num_i)
        if delta[m_star, i_star] <= 0:
            break
        placed[m_star, i_star] = True
        served[:, i_star] |= ctx.indicator[m_star, :, i_star]
        if sharing_aware:
            gained = ctx.block_membership[i_star] & ~block_used[m_star]
            used_bytes[m_star] += int(ctx.block_sizes[gained].sum())
            block_used[m_star] |= ctx.block_membership[i_star]
        else:
            used_bytes[m_star] += int(ctx.model_sizes[i_star])
        steps += 1

    return Placement(placed), steps


def solve_gen(lib: ModelLibrary, topo: Topology, workload: Workload) -> SolveReport:
    """Greedy over single (server, model) additions with shared accounting.

    Each step adds the feasible pair with the largest objective increase
    (ties to the smallest (m, i)) and stops when no feasible pair helps.
    """
    t0 = time.perf_counter()
    ctx = EvalContext(lib, topo, workload)
    placement, steps = _greedy(ctx, sharing_aware=True)
    return _make_report(ctx, "gen", None, placement, time.perf_counter() - t0,
                        {"greedy_steps": steps})


def solve_independent(lib: ModelLibrary, topo: Topology, workload: Workload) -> SolveReport:
    """Sharing-blind baseline: the same greedy but every model billed at full size."""
    t0 = time.perf_counter()
    ctx = EvalContext(lib, topo, workload)
    placement, steps = _greedy(ctx, sharing_aware=False)
    # Feasible under the stricter accounting by construction; the report
    # validator re-checks the shared accounting, which can only be smaller.
    return _make_report(ctx, "independent", None, placement, time.perf_counter() - t0,
                        {"greedy_steps": steps})


# ---------------------------------------------------------------------------
# Exhaustive oracle
# ---------------------------------------------------------------------------

def _feasible_rows(ctx: EvalContext, m: int) -> list[np.ndarray]:
    """All cache sets fitting server m, in index-sorted depth-first order.

    Usage is monotone in the cached set, so any branch whose next addition
    overflows is pruned without enumerating its supersets.
    """
    num_i = len(ctx.model_ids)
    capacity = int(ctx.capacities[m])
    out: list[np.ndarray] = []
    row = np.zeros(num_i, dtype=bool)

    def rec(start: int, used_blocks: np.ndarray, used_bytes: int) -> None:
        out.append(row.copy())
        for i in range(start, num_i):
            gained = ctx.block_membership[i] & ~used_blocks
            add = int(ctx.block_sizes[gained].sum())
            if used_bytes + add > capacity:
                continue
            row[i] = True
            rec(i + 1, used_blocks | ctx.block_membership[i], used_bytes + add)
            row[i] = False

    rec(0, np.zeros(len(ctx.block_ids), dtype=bool), 0)
    return out


def solve_exhaustive(lib: ModelLibrary, topo: Topology, workload: Workload,
                     cap: int = ORACLE_CAP) -> SolveReport:
    """Exact optimum by enumerating every feasible placement (small instances).

    Also reports Gamma, the maximum number of cached (server, model) pairs
    any feasible placement can hold, which bounds the greedy solver's gap.
    """
    t0 = time.perf_counter()
    num_m, num_i = len(topo.servers), len(lib.model_ids)
    if num_m * num_i > cap:
        raise CapExceededError(
            f"exhaustive search over 2^{num_m * num_i} placements refused "
            f"(cap is M*I <= {cap})"
        )
    ctx = EvalContext(lib, topo, workload)
    rows_per_server = [_feasible_rows(ctx, m) for m in range(num_m)]
    gamma = sum(max(int(r.sum()) for r in rows) for rows in rows_per_server) if num_m else 0
    served_stacks = [
        np.array([r[None, :] & ctx.indicator[m] for r in rows_per_server[m]])
        for m in range(num_m)
    ]

    best_units = -1
    best_rows: list[int] = [0] * num_m
    placements_seen = 0

    if num_m == 0:
        best_units = 0
        placements_seen = 1
    else:
        choice = [0] * num_m

        def rec(m: int, served: np.ndarray) -> None:
            nonlocal best_units, best_rows, placements_seen
            if m == num_m - 1:
                stack = served_stacks[m]
                nums = (ctx.p[None, :, :] * (served[None] | stack)).sum(axis=(1, 2))
                placements_seen += len(nums)
                top = int(np.argmax(nums))
                if int(nums[top]) > best_units:
                    best_units = int(nums[top])
                    best_rows = choice[:-1] + [top]
                return
            for idx in range(len(rows_per_server[m])):
                choice[m] = idx
                rec(m + 1, served | served_stacks[m][idx])

        rec(0, np.zeros(ctx.p.shape, dtype=bool))

    matrix = np.zeros((num_m, num_i), dtype=bool)
    for m in range(num_m):
        matrix[m] = rows_per_server[m][best_rows[m]]
    placement = Placement(matrix)
    report = _make_report(ctx, "oracle", None, placement, time.perf_counter() - t0,
                          {"gamma": gamma, "placements": placements_seen})
    if report.hit_units != max(best_units, 0):
        raise InvariantError("oracle optimum does not match its own evaluation")
    return report


# ---------------------------------------------------------------------------
# Online policies
# ---------------------------------------------------------------------------

@dataclass
class OnlineResult:
    policy: str
    series: tuple[float, ...]          # per-slot served fraction of that slot's requests
    placement: Placement               # cache state after the horizon
    requests: int
    admissions: int
    evictions: int


def draw_request_schedule(workload: Workload, horizon_slots: int, seed: int) -> np.ndarray:
    """One model request per user per slot, sampled from the user's
    normalised request probabilities; -1 where a user has no request mass."""
    rng = np.random.default_rng(seed)
    p = np.asarray(workload.p_units, dtype=float)
    schedule = np.full((horizon_slots, workload.num_users), -1, dtype=np.int64)
    draws = rng.random((horizon_slots, workload.num_users))
    for k in range(workload.num_users):
        total = p[k].sum()
        if total <= 0:
            continue
        cdf = np.cumsum(p[k] / total)
        schedule[:, k] = np.searchsorted(cdf, draws[:, k], side="right")
    return schedule


def evaluate_schedule(ctx: EvalContext, placement: Placement,
                      schedule: np.ndarray) -> list[float]:
    """Per-slot served fraction of the scheduled requests for a fixed placement."""
    series = []
    for slot in range(schedule.shape[0]):
        series.append(_slot_fraction(ctx, placement.matrix, schedule[slot]))
    return series


def _slot_fraction(ctx: EvalContext, matrix: np.ndarray, requests: np.ndarray) -> float:
    hits = 0
    asked = 0
    for k, i in enumerate(requests):
        if i < 0:
            continue
        asked += 1
        if (matrix[:, i] & ctx.indicator[:, k, i]).any():
            hits += 1
    return hits / asked if asked else 0.0


def online_policy(policy: str, lib: ModelLibrary, topo: Topology, workload: Workload,
                  horizon_slots: int, slot_seconds: float = 10.0, seed: int = 0,
                  admit: str = "nearest",
                  schedule: np.ndarray | None = None) -> OnlineResult:
    """Simulate an LRU or LFU cache over request slots.

    Each slot: record the fraction of this slot's requests the current
    caches serve, then route every request. A request missing at all
    associated servers is admitted at the nearest one, evicting whole
    models in policy order until the shared-accounting usage fits; shared
    blocks persist while any remaining model references them. Eviction
    discards LRU timestamps but LFU counts persist. Models larger than a
    server are never admitted.

    ``schedule`` replays a fixed (slots, K) request trace instead of
    sampling one from the workload (useful for regression tests).
    """
    if policy not in ("lru", "lfu"):
        raise ConfigError(f"unknown online policy {policy!r}")
    if admit not in ("nearest", "all-associated"):
        raise ConfigError(f"unknown admission mode {admit!r}")
    ctx = EvalContext(lib, topo, workload)
    if schedule is None:
        schedule = draw_request_schedule(workload, horizon_slots, seed)
    if schedule.shape != (horizon_slots, workload.num_users):
        raise ConfigError("request schedule shape mismatch")

    num_m, num_i = len(topo.servers), len(ctx.model_ids)
    matrix = np.zeros((num_m, num_i), dtype=bool)
    last_used: list[dict[int, int]] = [dict() for _ in range(num_m)]
    freq = np.zeros((num_m, num_i), dtype=np.int64)
    clock = 0
    admissions = evictions = requests = 0

    def evict_until_fits(m: int, incoming: int) -> bool:
        nonlocal evictions
        if ctx.usage_bytes(_onehot(num_i, incoming)) > int(ctx.capacities[m]):
            return False
        matrix[m, incoming] = True
        while ctx.usage_bytes(matrix[m]) > int(ctx.capacities[m]):
            victims = [i for i in np.nonzero(matrix[m])[0] if i != incoming]
            if not victims:
                matrix[m, incoming] = False
                return False
            if policy == "lru":
                victim = min(victims, key=lambda i: (last_used[m].get(i, -1), i))
            else:
                victim = min(victims, key=lambda i: (freq[m, i], last_used[m].get(i, -1), i))
            matrix[m, victim] = False
            last_used[m].pop(victim, None)
            evictions += 1
        return True

    series: list[float] = []
    for slot in range(horizon_slots):
        series.append(_slot_fraction(ctx, matrix, schedule[slot]))
        for k in range(workload.num_users):
            i = int(schedule[slot, k])
            if i < 0:
                continue
            requests += 1
            clock += 1
            assoc = np.nonzero(ctx.covered[:, k])[0]
            serving = [
                m for m in range(num_m) if matrix[m, i] and ctx.indicator[m, k, i]
            ]
            if serving:
                # Prefer an associated server, then the closest one.
                m_serve = min(
                    serving, key=lambda m: (not ctx.covered[m, k], ctx.dist[m, k], m)
                )
                last_used[m_serve][i] = clock
                freq[m_serve, i] += 1
                continue
            if assoc.size == 0:
                continue
            targets = (
                [int(min(assoc, key=lambda m: (ctx.dist[m, k], m)))]
                if admit == "nearest" else [int(m) for m in assoc]
            )
            for m in targets:
                freq[m, i] += 1
                if evict_until_fits(m, i):
                    admissions += 1
                    last_used[m][i] = clock

    return OnlineResult(
        policy=policy,
        series=tuple(series),
        placement=Placement(matrix),
        requests=requests,
        admissions=admissions,
        evictions=evictions,
    )


def _onehot(n: int, i: int) -> np.ndarray:
    row = np.zeros(n, dtype=bool)
    row[i] = True
    return row
