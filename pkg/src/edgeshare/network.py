"""Wireless edge topology: geometry, rates, latency, fading, and mobility.

Servers and users live in a rectangular area in metres. A user is
associated with every server whose coverage disk contains it; downloads
from non-associated servers relay through an associated one over a
constant-rate backhaul. Expected link rates follow a Shannon-capacity
formula over distance-based path loss, with per-user bandwidth and power
shares scaled by the expected number of active users under a server.

Sizes are bytes everywhere; the conversion to bits happens in exactly one
place (``transfer_seconds``) to keep units honest.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError
from .seeding import derive_seed

BITS_PER_BYTE = 8

# Thermal noise density at 290 K, -174 dBm/Hz, in W/Hz.
DEFAULT_NOISE_PSD = 10 ** (-17.4) * 1e-3

# 43 dBm in watts.
DEFAULT_TX_POWER_W = 10 ** (43 / 10) * 1e-3


@dataclass(frozen=True)
class EdgeServer:
    id: str
    x: float
    y: float
    capacity_bytes: int
    coverage_radius_m: float
    total_bandwidth_hz: float
    total_power_watts: float


@dataclass(frozen=True)
class UserNode:
    id: str
    x: float
    y: float
    vx: float = 0.0
    vy: float = 0.0
    pattern: str = "static"


@dataclass(frozen=True)
class ChannelParams:
    gamma0: float = 1.0
    alpha0: float = 4.0
    noise_psd_w_hz: float = DEFAULT_NOISE_PSD
    active_prob: float = 0.5
    backhaul_rate_bps: float = 10e9

    def validate(self) -> None:
        if self.alpha0 < 2:
            raise ConfigError("path-loss exponent must be >= 2")
        if not (0 < self.active_prob <= 1):
            raise ConfigError("active probability must be in (0, 1]")
        if self.backhaul_rate_bps <= 0:
            raise ConfigError("backhaul rate must be positive")


@dataclass(frozen=True)
class Topology:
    servers: tuple[EdgeServer, ...]
    users: tuple[UserNode, ...]
    channel: ChannelParams
    width_m: float
    height_m: float

    def __post_init__(self):
        self.channel.validate()
        for srv in self.servers:
            if srv.coverage_radius_m <= 0:
                raise ConfigError(f"server {srv.id!r} has non-positive coverage radius")
            if srv.capacity_bytes < 0:
                raise ConfigError(f"server {srv.id!r} has negative capacity")
        for usr in self.users:
            if not (0 <= usr.x <= self.width_m and 0 <= usr.y <= self.height_m):
                raise ConfigError(f"user {usr.id!r} lies outside the area")

    def with_capacity(self, capacity_bytes: int) -> "Topology":
        """Same geometry with every server's capacity replaced."""
        servers = tuple(replace(s, capacity_bytes=int(capacity_bytes)) for s in self.servers)
        return replace(self, servers=servers)


# Speed range (m/s), per-slot acceleration range (m/s^2) and angular
# velocity range (rad/s) for each mobility pattern.
MOBILITY_PATTERNS: dict[str, tuple[tuple[float, float], tuple[float, float], tuple[float, float]]] = {
    "static": ((0.0, 0.0), (0.0, 0.0), (0.0, 0.0)),
    "pedestrian": ((0.5, 1.8), (-0.3, 0.3), (-math.pi / 4, math.pi / 4)),
    "bike": ((2.0, 8.0), (-1.0, 1.0), (-math.pi / 3, math.pi / 3)),
    "vehicle": ((5.5, 20.0), (-3.0, 3.0), (-math.pi / 2, math.pi / 2)),
}


@dataclass(frozen=True)
class TopologyConfig:
    num_servers: int
    num_users: int
    width_m: float = 1000.0
    height_m: float = 1000.0
    capacity_bytes: int = 1_000_000_000
    coverage_radius_m: float = 275.0
    total_bandwidth_hz: float = 400e6
    total_power_watts: float = DEFAULT_TX_POWER_W
    channel: ChannelParams = ChannelParams()
    mobility_pattern: str = "static"


def generate_topology(cfg: TopologyConfig, seed: int) -> Topology:
    """Servers and users placed i.i.d. uniformly over the area.

    Non-static users also get an initial speed from their pattern's range
    and a heading uniform in [0, pi]. Deterministic for a given (cfg, seed).
    """
    if cfg.width_m <= 0 or cfg.height_m <= 0:
        raise ConfigError("area must have positive width and height")
    if cfg.mobility_pattern not in MOBILITY_PATTERNS:
        raise ConfigError(f"unknown mobility pattern {cfg.mobility_pattern!r}")
    rng = np.random.default_rng(derive_seed(seed, "topology"))

    servers = []
    for m in range(cfg.num_servers):
        x = float(rng.uniform(0, cfg.width_m))
        y = float(rng.uniform(0, cfg.height_m))
        servers.append(
            EdgeServer(
                id=f"s{m:03d}",
                x=x,
                y=y,
                capacity_bytes=int(cfg.capacity_bytes),
                coverage_radius_m=cfg.coverage_radius_m,
                total_bandwidth_hz=cfg.total_bandwidth_hz,
                total_power_watts=cfg.total_power_watts,
            )
        )

    speed_range, _, _ = MOBILITY_PATTERNS[cfg.mobility_pattern]
    users = []
    for k in range(cfg.num_users):
        x = float(rng.uniform(0, cfg.width_m))
        y = float(rng.uniform(0, cfg.height_m))
        vx = vy = 0.0
        if cfg.mobility_pattern != "static":
            speed = float(rng.uniform(*speed_range))
            heading = float(rng.uniform(0.0, math.pi))
            vx = speed * math.cos(heading)
            vy = speed * math.sin(heading)
        users.append(UserNode(id=f"u{k:03d}", x=x, y=y, vx=vx, vy=vy, pattern=cfg.mobility_pattern))

    return Topology(
        servers=tuple(servers),
        users=tuple(users),
        channel=cfg.channel,
        width_m=cfg.width_m,
        height_m=cfg.height_m,
    )


# ---------------------------------------------------------------------------
# Geometry and rates
# ---------------------------------------------------------------------------

def distance_matrix(topo: Topology) -> np.ndarray:
    """Server-to-user distances, shape (M, K)."""
    sx = np.array([[s.x, s.y] for s in topo.servers], dtype=float).reshape(-1, 1, 2)
    ux = np.array([[u.x, u.y] for u in topo.users], dtype=float).reshape(1, -1, 2)
    if sx.size == 0 or ux.size == 0:
        return np.zeros((len(topo.servers), len(topo.users)))
    return np.sqrt(((sx - ux) ** 2).sum(axis=2))


def coverage_matrix(topo: Topology) -> np.ndarray:
    """Boolean (M, K): user k is within server m's coverage disk."""
    dist = distance_matrix(topo)
    radii = np.array([s.coverage_radius_m for s in topo.servers]).reshape(-1, 1)
    if dist.size == 0:
        return np.zeros(dist.shape, dtype=bool)
    return dist <= radii


def coverage_sets(topo: Topology) -> list[list[int]]:
    """For each user, the indices of servers covering it."""
    cov = coverage_matrix(topo)
    return [list(np.nonzero(cov[:, k])[0]) for k in range(cov.shape[1])]


def _per_user_shares(topo: Topology, covered: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-user bandwidth and power shares for each server, shape (M,).

    A server splits its budget across the expected number of active users
    it covers: share = total / (active_prob * |covered users|).
    """
    counts = covered.sum(axis=1).astype(float)
    p_a = topo.channel.active_prob
    band = np.array([s.total_bandwidth_hz for s in topo.servers])
    power = np.array([s.total_power_watts for s in topo.servers])
    with np.errstate(divide="ignore"):
        denom = p_a * counts
        bbar = np.where(counts > 0, band / np.where(denom > 0, denom, 1.0), np.inf)
        pbar = np.where(counts > 0, power / np.where(denom > 0, denom, 1.0), np.inf)
    return bbar, pbar


def _link_rate(bbar: float, pbar: float, gamma0: float, alpha0: float,
               noise_psd: float, dist: float, gain: float = 1.0) -> float:
    """Shannon rate of one access link in bit/s."""
    if dist == 0.0:
        return math.inf
    snr = pbar * gamma0 * dist ** (-alpha0) * gain / (noise_psd * bbar)
    return bbar * math.log2(1.0 + snr)


def expected_rate(topo: Topology, m: int, k: int) -> float:
    """Expected downlink rate (bit/s) from server m to associated user k."""
    covered = coverage_matrix(topo)
    if not covered[m, k]:
        raise ValueError(f"server {m} does not cover user {k}")
    bbar, pbar = _per_user_shares(topo, covered)
    dist = distance_matrix(topo)[m, k]
    ch = topo.channel
    return _link_rate(bbar[m], pbar[m], ch.gamma0, ch.alpha0, ch.noise_psd_w_hz, dist)


def sampled_rate(topo: Topology, m: int, k: int, fading_gain: float) -> float:
    """Rate under an instantaneous fading power gain.

    ``fading_gain`` is a unit-mean draw (e.g. Exp(1), i.e. Rayleigh power);
    the expected gain then matches the mean-channel model.
    """
    if fading_gain < 0:
        raise ValueError("fading gain must be non-negative")
    covered = coverage_matrix(topo)
    if not covered[m, k]:
        raise ValueError(f"server {m} does not cover user {k}")
    bbar, pbar = _per_user_shares(topo, covered)
    dist = distance_matrix(topo)[m, k]
    ch = topo.channel
    return _link_rate(bbar[m], pbar[m], ch.gamma0, ch.alpha0, ch.noise_psd_w_hz,
                      dist, gain=fading_gain)


def transfer_seconds(size_bytes: int, rate_bps: float) -> float:
    """Time to move ``size_bytes`` over a link of ``rate_bps``; the one
    place where bytes become bits."""
    if size_bytes == 0:
        return 0.0
    if rate_bps == 0.0:
        return math.inf
    return size_bytes * BITS_PER_BYTE / rate_bps


def e2e_latency(topo: Topology, lib, workload, m: int, k: int, i: int) -> float:
    """Download + inference latency for user k fetching model i via server m.

    Direct download if m covers k, otherwise backhaul relay through the
    associated server minimising the two-hop time. Users covered by no
    server are unreachable: +inf.
    """
    size = lib.model_size(lib.model_ids[i])
    t_inf = float(workload.inference_latency[k, i])
    covered = coverage_matrix(topo)
    bbar, pbar = _per_user_shares(topo, covered)
    dist = distance_matrix(topo)
    ch = topo.channel

    def access(mm: int) -> float:
        return _link_rate(bbar[mm], pbar[mm], ch.gamma0, ch.alpha0,
                          ch.noise_psd_w_hz, dist[mm, k])

    if covered[m, k]:
        return transfer_seconds(size, access(m)) + t_inf
    assoc = np.nonzero(covered[:, k])[0]
    if assoc.size == 0:
        return math.inf
    best = min(
        transfer_seconds(size, ch.backhaul_rate_bps) + transfer_seconds(size, access(mm))
        for mm in assoc
    )
    return best + t_inf


def latency_indicator(topo: Topology, lib, workload, m: int, k: int, i: int) -> int:
    """1 iff the end-to-end latency meets the user's requirement (inclusive)."""
    return int(e2e_latency(topo, lib, workload, m, k, i) <= float(workload.latency_req[k, i]))


# ---------------------------------------------------------------------------
# Mobility
# ---------------------------------------------------------------------------

def _reflect(pos: float, limit: float) -> tuple[float, int]:
    """Fold a coordinate back into [0, limit]; returns (pos, sign flip)."""
    flip = 1
    while pos < 0 or pos > limit:
        if pos < 0:
            pos = -pos
        else:
            pos = 2 * limit - pos
        flip = -flip
    return pos, flip


def mobility_step(topo: Topology, dt: float, seed: int,
                  patterns: dict | None = None) -> Topology:
    """Advance every user by one slot of duration ``dt`` seconds.

    Speed gets a uniform acceleration draw (clamped to the pattern's speed
    range, never below zero), heading a uniform angular-velocity draw times
    dt; the position advances at the new velocity and reflects specularly
    off the area boundary. Returns a new snapshot. ``patterns`` overrides
    the default per-pattern (speed, acceleration, angular velocity) ranges.
    """
    if dt <= 0:
        raise ConfigError("dt must be positive")
    if patterns is None:
        patterns = MOBILITY_PATTERNS
    rng = np.random.default_rng(derive_seed(seed, "mobility-step"))
    users = []
    for usr in topo.users:
        try:
            speed_range, accel_range, turn_range = patterns[usr.pattern]
        except KeyError:
            raise ConfigError(f"unknown mobility pattern {usr.pattern!r}") from None
        if usr.pattern == "static":
            users.append(usr)
            continue
        accel = float(rng.uniform(*accel_range))
        turn = float(rng.uniform(*turn_range))
        speed = math.hypot(usr.vx, usr.vy)
        heading = math.atan2(usr.vy, usr.vx)
        speed = min(max(speed + accel * dt, speed_range[0], 0.0), speed_range[1])
        heading += turn * dt
        vx = speed * math.cos(heading)
        vy = speed * math.sin(heading)
        x, fx = _reflect(usr.x + vx * dt, topo.width_m)
        y, fy = _reflect(usr.y + vy * dt, topo.height_m)
        users.append(replace(usr, x=x, y=y, vx=vx * fx, vy=vy * fy))
    return replace(topo, users=tuple(users))
