"""Placement representation, storage accounting, and hit-ratio objectives.

Request probabilities are stored as exact integers in units of 1e-6
("micro-units"), so every hit count, per-server objective, and the global
objective are integer-valued and the decomposition identity between them
can be checked with ``==`` rather than a float tolerance. Ratios are
converted to floats only at the public boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import network
from .errors import ConfigError, InvariantError
from .library import ModelLibrary, specific_size

# Probability resolution: one micro-unit = 1e-6 of request probability.
UNIT = 1_000_000


@dataclass(frozen=True)
class Workload:
    """Per-(user, model) request statistics.

    ``p_units``: request probabilities in integer micro-units, shape (K, I).
    ``latency_req``: end-to-end latency requirements in seconds, shape (K, I).
    ``inference_latency``: on-device inference time in seconds, shape (K, I).
    ``meta``: generator provenance (skew, seed) carried into the file format.
    """

    p_units: np.ndarray
    latency_req: np.ndarray
    inference_latency: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        p = np.asarray(self.p_units)
        if p.ndim != 2:
            raise ConfigError("p_units must be a K x I matrix")
        if not np.issubdtype(p.dtype, np.integer):
            raise ConfigError("p_units must be integer micro-units")
        if (p < 0).any():
            raise ConfigError("request probabilities must be non-negative")
        for name in ("latency_req", "inference_latency"):
            arr = np.asarray(getattr(self, name))
            if arr.shape != p.shape:
                raise ConfigError(f"{name} shape {arr.shape} != p shape {p.shape}")
            if p.size and (~np.isfinite(arr) | (arr <= 0)).any():
                raise ConfigError(f"{name} entries must be finite and positive")

    @property
    def num_users(self) -> int:
        return self.p_units.shape[0]

    @property
    def num_models(self) -> int:
        return self.p_units.shape[1]

    def total_units(self) -> int:
        return int(self.p_units.sum())


@dataclass(frozen=True)
class Placement:
    """Binary server x model matrix; entry (m, i) means model i cached on m."""

    matrix: np.ndarray

    @classmethod
    def empty(cls, num_servers: int, num_models: int) -> "Placement":
        return cls(np.zeros((num_servers, num_models), dtype=bool))

    def __post_init__(self):
        mat = np.asarray(self.matrix)
        if mat.ndim != 2 or mat.dtype != bool:
            raise ConfigError("placement matrix must be a 2-D boolean array")

    def with_bit(self, m: int, i: int) -> "Placement":
        if self.matrix[m, i]:
            return self
        mat = self.matrix.copy()
        mat[m, i] = True
        return Placement(mat)

    def cached_models(self, m: int) -> list[int]:
        return list(np.nonzero(self.matrix[m])[0])

    def count(self) -> int:
        return int(self.matrix.sum())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Placement):
            return NotImplemented
        return self.matrix.shape == other.matrix.shape and bool(
            (self.matrix == other.matrix).all()
        )


class EvalContext:
    """Precomputed arrays for repeatedly evaluating one (library, topology,
    workload) instance.

    Solvers and the harness call the objective thousands of times per
    instance; building distances, rates, latency indicators, and block
    membership once makes those calls cheap array operations.
    """

    def __init__(self, lib: ModelLibrary, topo: network.Topology, workload: Workload):
        if workload.num_models != len(lib.model_ids):
            raise ConfigError("workload model dimension does not match library")
        if workload.num_users != len(topo.users):
            raise ConfigError("workload user dimension does not match topology")
        self.lib = lib
        self.topo = topo
        self.workload = workload

        self.model_ids = lib.model_ids
        self.block_ids = tuple(lib.blocks)
        block_pos = {bid: j for j, bid in enumerate(self.block_ids)}
        self.block_sizes = np.array(
            [lib.blocks[b].size_bytes for b in self.block_ids], dtype=np.int64
        )
        self.block_membership = np.zeros((len(self.model_ids), len(self.block_ids)), dtype=bool)
        for idx, mid in enumerate(self.model_ids):
            for bid in lib.models[mid].blocks:
                self.block_membership[idx, block_pos[bid]] = True
        self.model_sizes = self.block_membership @ self.block_sizes
        self.specific_sizes = np.array(
            [specific_size(lib, mid) for mid in self.model_ids], dtype=np.int64
        )

        self.p = np.asarray(workload.p_units, dtype=np.int64)
        self.total_units = int(self.p.sum())
        self.capacities = np.array(
            [s.capacity_bytes for s in topo.servers], dtype=np.int64
        )

        self.dist = network.distance_matrix(topo)
        self.covered = network.coverage_matrix(topo)
        self._bbar, self._pbar = network._per_user_shares(topo, self.covered)
        ch = topo.channel
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = ch.gamma0 * np.where(self.dist > 0, self.dist, np.nan) ** (-ch.alpha0)
            gain = np.where(self.dist > 0, gain, np.inf)
            snr = self._pbar[:, None] * gain / (ch.noise_psd_w_hz * self._bbar[:, None])
        # Uncovered links are never rated; zero them to keep arithmetic clean.
        self._mean_snr = np.where(self.covered, snr, 0.0)
        self.rates = self._rates_from_gain_scale(1.0)
        self.indicator = self._indicator_from_rates(self.rates)

    # -- latency indicators -------------------------------------------------

    def _rates_from_gain_scale(self, scale) -> np.ndarray:
        """Access rates (M, K) for an SNR scale factor (1 or fading draws)."""
        snr = self._mean_snr * scale
        with np.errstate(invalid="ignore"):
            rates = self._bbar[:, None] * np.log2(1.0 + snr)
        return np.where(self.covered, rates, 0.0)

    def _indicator_from_rates(self, rates: np.ndarray) -> np.ndarray:
        """Boolean (M, K, I): can user k fetch model i via server m in time."""
        num_m, num_k = rates.shape
        num_i = len(self.model_ids)
        ch = self.topo.channel
        with np.errstate(divide="ignore"):
            inv_rate = np.where(rates > 0, 1.0 / np.where(rates > 0, rates, 1.0), np.inf)
        # Best relay: backhaul plus the cheapest associated access link.
        relay = np.where(self.covered, 1.0 / ch.backhaul_rate_bps + inv_rate, np.inf)
        best_relay = relay.min(axis=0) if num_m else np.full(num_k, np.inf)
        factor = np.where(self.covered, inv_rate, best_relay[None, :])

        sizes_bits = self.model_sizes.astype(float) * network.BITS_PER_BYTE
        out = np.zeros((num_m, num_k, num_i), dtype=bool)
        t_inf = np.asarray(self.workload.inference_latency, dtype=float)
        t_req = np.asarray(self.workload.latency_req, dtype=float)
        for m in range(num_m):
            with np.errstate(invalid="ignore"):
                total = factor[m][:, None] * sizes_bits[None, :] + t_inf
            out[m] = total <= t_req
        return out

    def indicator_with_gains(self, gains: np.ndarray) -> np.ndarray:
        """Latency indicators under instantaneous fading gains, shape (M, K)."""
        gains = np.asarray(gains, dtype=float)
        if gains.shape != self.dist.shape:
            raise ConfigError(f"gain matrix must have shape {self.dist.shape}")
        if (gains < 0).any():
            raise ConfigError("fading gains must be non-negative")
        return self._indicator_from_rates(self._rates_from_gain_scale(gains))

    # -- storage ------------------------------------------------------------

    def usage_bytes(self, row: np.ndarray) -> int:
        """Shared-accounting bytes of one server's cached set (blocks deduplicated)."""
        row = np.asarray(row, dtype=bool)
        if not row.any():
            return 0
        used = self.block_membership[row].any(axis=0)
        return int(self.block_sizes[used].sum())

    def independent_usage_bytes(self, row: np.ndarray) -> int:
        """Bytes if every cached model stored all its blocks privately."""
        row = np.asarray(row, dtype=bool)
        return int(self.model_sizes[row].sum())

    def feasible(self, placement: Placement) -> bool:
        return all(
            self.usage_bytes(placement.matrix[m]) <= int(self.capacities[m])
            for m in range(len(self.topo.servers))
        )

    # -- objective ----------------------------------------------------------

    def served_matrix(self, placement: Placement) -> np.ndarray:
        """Boolean (K, I): request (k, i) servable by some caching server in time."""
        x = placement.matrix
        return (x[:, None, :] & self.indicator).any(axis=0)

    def hit_units(self, placement: Placement) -> int:
        """Exact objective numerator in micro-units."""
        return int(self.p[self.served_matrix(placement)].sum())

    def hit_ratio(self, placement: Placement) -> float:
        if self.total_units == 0:
            raise ConfigError("all-zero request matrix: hit ratio undefined")
        return self.hit_units(placement) / self.total_units

    def marginal_units(self, served: np.ndarray, m: int, i: int) -> int:
        """Objective increase, in units, of additionally caching i on m given
        the currently served (K, I) matrix."""
        newly = self.indicator[m, :, i] & ~served[:, i]
        return int(self.p[newly, i].sum())

    def server_hit_units(self, served_before: np.ndarray, m: int) -> np.ndarray:
        """Per-model hit counts on server m, shape (I,), counting only
        requests no earlier-indexed server already serves."""
        fresh = self.indicator[m] & ~served_before
        return (self.p * fresh).sum(axis=0, dtype=np.int64)


# ---------------------------------------------------------------------------
# Public operations (thin wrappers constructing a context on the fly)
# ---------------------------------------------------------------------------

def storage_usage(lib: ModelLibrary, placement: Placement, m: int) -> int:
    """Bytes used on server m with shared blocks stored once."""
    row = placement.matrix[m]
    cached = [lib.model_ids[i] for i in np.nonzero(row)[0]]
    used: set[str] = set()
    for mid in cached:
        used.update(lib.models[mid].blocks)
    return sum(lib.blocks[b].size_bytes for b in used)


def independent_storage_usage(lib: ModelLibrary, placement: Placement, m: int) -> int:
    """Bytes used on server m if sharing is ignored (every model standalone)."""
    row = placement.matrix[m]
    return sum(lib.model_size(lib.model_ids[i]) for i in np.nonzero(row)[0])


def placement_feasible(lib: ModelLibrary, topo: network.Topology, placement: Placement) -> bool:
    return all(
        storage_usage(lib, placement, m) <= topo.servers[m].capacity_bytes
        for m in range(len(topo.servers))
    )


def hit_ratio(lib: ModelLibrary, topo: network.Topology, workload: Workload,
              placement: Placement) -> float:
    """Fraction of request probability mass served within latency, in [0, 1].

    Defined for infeasible placements too; feasibility is a separate
    predicate so diagnostic evaluation stays possible.
    """
    return EvalContext(lib, topo, workload).hit_ratio(placement)


def hit_units(lib: ModelLibrary, topo: network.Topology, workload: Workload,
              placement: Placement) -> int:
    return EvalContext(lib, topo, workload).hit_units(placement)


def unserved_indicator(lib: ModelLibrary, topo: network.Topology, workload: Workload,
                       prior: Placement, m: int, k: int, i: int) -> int:
    """1 iff no server with index below m already serves request (k, i).

    ``prior`` holds the rows decided for earlier servers; rows at index m
    and beyond are ignored. Always 1 for the first server.
    """
    ctx = EvalContext(lib, topo, workload)
    for mp in range(m):
        if prior.matrix[mp, i] and ctx.indicator[mp, k, i]:
            return 0
    return 1


def per_server_hit_units(lib: ModelLibrary, topo: network.Topology, workload: Workload,
                         prior: Placement, m: int, row: np.ndarray) -> int:
    """Numerator (units) of server m's own objective given earlier decisions."""
    ctx = EvalContext(lib, topo, workload)
    served_before = _served_below(ctx, prior, m)
    u = ctx.server_hit_units(served_before, m)
    return int(u[np.asarray(row, dtype=bool)].sum())


def per_server_hit_ratio(lib: ModelLibrary, topo: network.Topology, workload: Workload,
                         prior: Placement, m: int, row: np.ndarray) -> float:
    """Server m's share of the global objective under sequential accounting."""
    total = workload.total_units()
    if total == 0:
        raise ConfigError("all-zero request matrix: hit ratio undefined")
    return per_server_hit_units(lib, topo, workload, prior, m, row) / total


def cache_hits(lib: ModelLibrary, topo: network.Topology, workload: Workload,
               prior: Placement, m: int, i: int) -> int:
    """Hit count (micro-units) model i would earn on server m, discounting
    requests already served by earlier servers."""
    ctx = EvalContext(lib, topo, workload)
    served_before = _served_below(ctx, prior, m)
    return int(ctx.server_hit_units(served_before, m)[i])


def _served_below(ctx: EvalContext, prior: Placement, m: int) -> np.ndarray:
    served = np.zeros(ctx.p.shape, dtype=bool)
    for mp in range(m):
        row = prior.matrix[mp]
        if row.any():
            served |= row[None, :] & ctx.indicator[mp]
    return served


@dataclass(frozen=True)
class HitAccounting:
    """Hit counts for one server: exact values, rounded values, and the
    integer granularity of the rounded values."""

    units: np.ndarray          # exact hit counts, micro-units
    rounded: np.ndarray        # rounded counts per the epsilon rule
    granularity: int           # gcd of the positive rounded counts (1 if none)
    epsilon: float

    def rounded_total(self) -> int:
        return int(self.rounded.sum())


def round_hits(units: np.ndarray, epsilon: float) -> HitAccounting:
    """Round hit counts down to multiples of epsilon times the smallest one.

    With epsilon = 0 the counts are returned unchanged. Models with zero
    hits are excluded from the minimum (they can never improve a cache) and
    round to zero. The computation is pure integer arithmetic: epsilon is
    interpreted through its decimal literal, so floor thresholds are exact.
    """
    units = np.asarray(units, dtype=np.int64)
    if (units < 0).any():
        raise InvariantError("negative hit count")
    eps = Fraction(str(float(epsilon)))
    if not 0 <= eps <= 1:
        raise ConfigError(f"epsilon must be in [0, 1], got {epsilon}")

    positive = units[units > 0]
    if eps == 0 or positive.size == 0:
        rounded = units.copy()
    else:
        u_min = int(positive.min())
        # floor(u / (eps * u_min)) without touching floats
        rounded = (units * eps.denominator) // (eps.numerator * u_min)
    pos_rounded = rounded[rounded > 0]
    gran = int(np.gcd.reduce(pos_rounded)) if pos_rounded.size else 1
    return HitAccounting(units=units, rounded=rounded.astype(np.int64),
                         granularity=gran, epsilon=float(epsilon))


def marginal_gain(lib: ModelLibrary, topo: network.Topology, workload: Workload,
                  placement: Placement, m: int, i: int) -> float:
    """Hit-ratio increase from flipping x[m, i] on (zero if already set)."""
    ctx = EvalContext(lib, topo, workload)
    if placement.matrix[m, i]:
        return 0.0
    served = ctx.served_matrix(placement)
    if ctx.total_units == 0:
        raise ConfigError("all-zero request matrix: hit ratio undefined")
    return ctx.marginal_units(served, m, i) / ctx.total_units
