"""Versioned text formats for libraries, topologies, workloads, reports,
CSV metrics, JSON configs, and run manifests.

Every format starts with a ``edgeshare-<kind> v<N>`` header line and is
plain line-oriented text. Parsing and serialisation round-trip exactly
(floats are written with repr). Solve reports carry one volatile line,
``runtime_s``, which canonical digests skip so re-runs with the same seed
hash identically.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .harness import ExperimentConfig, MetricRow, PerturbationRow, SeriesRow, WorkloadConfig
from .library import LibraryConfig, Model, ModelLibrary, ParameterBlock
from .network import ChannelParams, EdgeServer, Topology, TopologyConfig, UserNode
from .objective import Placement, Workload
from .solvers import SolveReport

SWEEP_SCHEMA = "sweep-v1"
SERIES_SCHEMA = "series-v1"
PERTURB_SCHEMA = "perturbation-v1"


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


class _Lines:
    """Line cursor with positional error messages."""

    def __init__(self, text: str, source: str):
        self.lines = text.splitlines()
        self.source = source
        self.pos = 0

    def next(self, what: str) -> str:
        if self.pos >= len(self.lines):
            raise ConfigError(f"{self.source}: unexpected end of file, expected {what}")
        line = self.lines[self.pos]
        self.pos += 1
        return line

    def fail(self, message: str):
        raise ConfigError(f"{self.source}:{self.pos}: {message}")


def _expect_header(cur: _Lines, kind: str) -> None:
    line = cur.next("header")
    if line != f"edgeshare-{kind} v1":
        cur.fail(f"bad header {line!r}, expected 'edgeshare-{kind} v1'")


# ---------------------------------------------------------------------------
# Library
# ---------------------------------------------------------------------------

def serialize_library(lib: ModelLibrary) -> str:
    out = ["edgeshare-library v1"]
    meta = " ".join(f"{k}={v}" for k, v in sorted(lib.meta.items()))
    out.append(f"meta {meta}".rstrip())
    out.append(f"blocks {len(lib.blocks)}")
    for blk in lib.blocks.values():
        out.append(f"{blk.id} {blk.size_bytes}")
    out.append(f"models {len(lib.models)}")
    for mdl in lib.models.values():
        out.append(f"{mdl.id} {','.join(mdl.blocks)}")
    return "\n".join(out) + "\n"


def parse_library(text: str, source: str = "<library>") -> ModelLibrary:
    cur = _Lines(text, source)
    _expect_header(cur, "library")
    meta_line = cur.next("meta line")
    if not meta_line.startswith("meta"):
        cur.fail("expected meta line")
    meta = {}
    for part in meta_line.split()[1:]:
        key, _, value = part.partition("=")
        meta[key] = value

    count_line = cur.next("blocks count").split()
    if len(count_line) != 2 or count_line[0] != "blocks":
        cur.fail("expected 'blocks <count>'")
    blocks = []
    for _ in range(int(count_line[1])):
        parts = cur.next("block row").split()
        if len(parts) != 2:
            cur.fail("block row must be '<id> <size_bytes>'")
        blocks.append(ParameterBlock(parts[0], int(parts[1])))

    count_line = cur.next("models count").split()
    if len(count_line) != 2 or count_line[0] != "models":
        cur.fail("expected 'models <count>'")
    models = []
    for _ in range(int(count_line[1])):
        parts = cur.next("model row").split()
        if len(parts) != 2:
            cur.fail("model row must be '<id> <block,block,...>'")
        models.append(Model(parts[0], tuple(parts[1].split(","))))
    return ModelLibrary(blocks, models, meta)


# ---------------------------------------------------------------------------
# Topology
# ---------------------------------------------------------------------------

def serialize_topology(topo: Topology) -> str:
    ch = topo.channel
    out = [
        "edgeshare-topology v1",
        f"area {_fmt(topo.width_m)} {_fmt(topo.height_m)}",
        "channel "
        f"gamma0={_fmt(ch.gamma0)} alpha0={_fmt(ch.alpha0)} "
        f"noise_psd_w_hz={_fmt(ch.noise_psd_w_hz)} active_prob={_fmt(ch.active_prob)} "
        f"backhaul_rate_bps={_fmt(ch.backhaul_rate_bps)}",
        f"servers {len(topo.servers)}",
    ]
    for s in topo.servers:
        out.append(
            f"{s.id} {_fmt(s.x)} {_fmt(s.y)} {s.capacity_bytes} "
            f"{_fmt(s.coverage_radius_m)} {_fmt(s.total_bandwidth_hz)} "
            f"{_fmt(s.total_power_watts)}"
        )
    out.append(f"users {len(topo.users)}")
    for u in topo.users:
        out.append(f"{u.id} {_fmt(u.x)} {_fmt(u.y)} {_fmt(u.vx)} {_fmt(u.vy)} {u.pattern}")
    return "\n".join(out) + "\n"


def parse_topology(text: str, source: str = "<topology>") -> Topology:
    cur = _Lines(text, source)
    _expect_header(cur, "topology")
    area = cur.next("area").split()
    if len(area) != 3 or area[0] != "area":
        cur.fail("expected 'area <width> <height>'")
    width, height = float(area[1]), float(area[2])

    ch_parts = cur.next("channel").split()
    if ch_parts[0] != "channel":
        cur.fail("expected channel line")
    kv = {}
    for part in ch_parts[1:]:
        key, _, value = part.partition("=")
        kv[key] = float(value)
    try:
        channel = ChannelParams(
            gamma0=kv["gamma0"], alpha0=kv["alpha0"],
            noise_psd_w_hz=kv["noise_psd_w_hz"], active_prob=kv["active_prob"],
            backhaul_rate_bps=kv["backhaul_rate_bps"])
    except KeyError as exc:
        cur.fail(f"channel line missing field {exc}")

    count = cur.next("servers count").split()
    if len(count) != 2 or count[0] != "servers":
        cur.fail("expected 'servers <count>'")
    servers = []
    for _ in range(int(count[1])):
        p = cur.next("server row").split()
        if len(p) != 7:
            cur.fail("server row must have 7 fields")
        servers.append(EdgeServer(
            id=p[0], x=float(p[1]), y=float(p[2]), capacity_bytes=int(p[3]),
            coverage_radius_m=float(p[4]), total_bandwidth_hz=float(p[5]),
            total_power_watts=float(p[6])))

    count = cur.next("users count").split()
    if len(count) != 2 or count[0] != "users":
        cur.fail("expected 'users <count>'")
    users = []
    for _ in range(int(count[1])):
        p = cur.next("user row").split()
        if len(p) != 6:
            cur.fail("user row must have 6 fields")
        users.append(UserNode(id=p[0], x=float(p[1]), y=float(p[2]),
                              vx=float(p[3]), vy=float(p[4]), pattern=p[5]))
    return Topology(servers=tuple(servers), users=tuple(users), channel=channel,
                    width_m=width, height_m=height)


# ---------------------------------------------------------------------------
# Workload
# ---------------------------------------------------------------------------

def serialize_workload(workload: Workload) -> str:
    k, i = workload.p_units.shape
    meta = " ".join(f"{key}={value}" for key, value in sorted(workload.meta.items()))
    out = ["edgeshare-workload v1", f"meta {meta}".rstrip(), f"shape {k} {i}"]
    for row in workload.p_units:
        out.append("p " + " ".join(str(int(v)) for v in row))
    for row in workload.latency_req:
        out.append("treq " + " ".join(_fmt(float(v)) for v in row))
    for row in workload.inference_latency:
        out.append("tinf " + " ".join(_fmt(float(v)) for v in row))
    return "\n".join(out) + "\n"


def parse_workload(text: str, source: str = "<workload>") -> Workload:
    cur = _Lines(text, source)
    _expect_header(cur, "workload")
    meta_line = cur.next("meta line")
    if not meta_line.startswith("meta"):
        cur.fail("expected meta line")
    meta = {}
    for part in meta_line.split()[1:]:
        key, _, value = part.partition("=")
        meta[key] = value
    shape = cur.next("shape").split()
    if len(shape) != 3 or shape[0] != "shape":
        cur.fail("expected 'shape <users> <models>'")
    k, i = int(shape[1]), int(shape[2])

    def read_rows(tag: str, conv):
        rows = []
        for _ in range(k):
            parts = cur.next(f"{tag} row").split()
            if parts[0] != tag or len(parts) != i + 1:
                cur.fail(f"expected '{tag}' row with {i} values")
            rows.append([conv(v) for v in parts[1:]])
        return rows

    p = np.array(read_rows("p", int), dtype=np.int64).reshape(k, i)
    treq = np.array(read_rows("treq", float), dtype=float).reshape(k, i)
    tinf = np.array(read_rows("tinf", float), dtype=float).reshape(k, i)
    return Workload(p_units=p, latency_req=treq, inference_latency=tinf, meta=meta)


# ---------------------------------------------------------------------------
# Solve report
# ---------------------------------------------------------------------------

def serialize_report(report: SolveReport, lib: ModelLibrary,
                     topo: Topology) -> str:
    out = [
        "edgeshare-report v1",
        f"algorithm {report.algorithm}",
        f"epsilon {_fmt(report.epsilon) if report.epsilon is not None else '-'}",
        f"hit_units {report.hit_units}",
        f"total_units {report.total_units}",
        f"hit_ratio {_fmt(report.hit_ratio)}",
        "per_server_units " + " ".join(str(u) for u in report.per_server_units),
        "per_server " + " ".join(_fmt(v) for v in report.per_server),
        f"runtime_s {_fmt(report.runtime_s)}",
    ]
    for key in sorted(report.diagnostics):
        out.append(f"diag {key} {_fmt(report.diagnostics[key])}")
    out.append("models " + " ".join(lib.model_ids))
    mat = report.placement.matrix
    out.append(f"placement {mat.shape[0]} {mat.shape[1]}")
    for m in range(mat.shape[0]):
        cached = [lib.model_ids[i] for i in np.nonzero(mat[m])[0]]
        out.append(f"{topo.servers[m].id} {','.join(cached) if cached else '-'}")
    return "\n".join(out) + "\n"


def parse_report(text: str, source: str = "<report>") -> dict:
    """Parse a report file into a plain dict (placement as model-id lists)."""
    cur = _Lines(text, source)
    _expect_header(cur, "report")
    out: dict = {"diagnostics": {}}

    def split_field(name: str) -> list[str]:
        parts = cur.next(name).split()
        if parts[0] != name:
            cur.fail(f"expected '{name}' line")
        return parts[1:]

    out["algorithm"] = split_field("algorithm")[0]
    eps = split_field("epsilon")[0]
    out["epsilon"] = None if eps == "-" else float(eps)
    out["hit_units"] = int(split_field("hit_units")[0])
    out["total_units"] = int(split_field("total_units")[0])
    out["hit_ratio"] = float(split_field("hit_ratio")[0])
    out["per_server_units"] = [int(v) for v in split_field("per_server_units")]
    out["per_server"] = [float(v) for v in split_field("per_server")]
    out["runtime_s"] = float(split_field("runtime_s")[0])
    while cur.pos < len(cur.lines) and cur.lines[cur.pos].startswith("diag "):
        _, key, value = cur.next("diag").split(maxsplit=2)
        out["diagnostics"][key] = value
    out["models"] = split_field("models")
    shape = split_field("placement")
    rows = {}
    for _ in range(int(shape[0])):
        parts = cur.next("placement row").split()
        if len(parts) != 2:
            cur.fail("placement row must be '<server> <models or ->'")
        rows[parts[0]] = [] if parts[1] == "-" else parts[1].split(",")
    out["placement"] = rows
    return out


def report_placement(parsed: dict, lib: ModelLibrary, topo: Topology) -> Placement:
    """Rebuild the placement matrix of a parsed report against its inputs."""
    index = {mid: i for i, mid in enumerate(lib.model_ids)}
    if list(parsed["models"]) != list(lib.model_ids):
        raise ConfigError("report model list does not match the library")
    matrix = np.zeros((len(topo.servers), len(lib.model_ids)), dtype=bool)
    server_index = {s.id: m for m, s in enumerate(topo.servers)}
    for sid, mids in parsed["placement"].items():
        if sid not in server_index:
            raise ConfigError(f"report server {sid!r} not in the topology")
        for mid in mids:
            if mid not in index:
                raise ConfigError(f"report model {mid!r} not in the library")
            matrix[server_index[sid], index[mid]] = True
    return Placement(matrix)


# ---------------------------------------------------------------------------
# CSV outputs
# ---------------------------------------------------------------------------

def sweep_rows_to_csv(rows: list[MetricRow]) -> str:
    buf = io.StringIO()
    buf.write(f"# schema: {SWEEP_SCHEMA}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["seed", "algorithm", "epsilon", "q", "m", "k",
                     "hit_ratio_expected", "hit_ratio_fading", "runtime_s", "std_dev"])
    for r in rows:
        writer.writerow([r.seed, r.algorithm, _fmt(r.epsilon), r.q, r.m, r.k,
                         _fmt(r.hit_ratio_expected), _fmt(r.hit_ratio_fading),
                         _fmt(r.runtime_s), _fmt(r.std_dev)])
    return buf.getvalue()


def series_rows_to_csv(rows: list[SeriesRow]) -> str:
    buf = io.StringIO()
    buf.write(f"# schema: {SERIES_SCHEMA}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["slot", "time_s", "algorithm", "hit_ratio"])
    for r in rows:
        writer.writerow([r.slot, _fmt(r.time_s), r.algorithm, _fmt(r.hit_ratio)])
    return buf.getvalue()


def perturbation_rows_to_csv(rows: list[PerturbationRow]) -> str:
    buf = io.StringIO()
    buf.write(f"# schema: {PERTURB_SCHEMA}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["seed", "cv", "algorithm", "hit_ratio"])
    for r in rows:
        writer.writerow([r.seed, _fmt(r.cv), r.algorithm, _fmt(r.hit_ratio)])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Configs (JSON with a version field)
# ---------------------------------------------------------------------------

def _check_keys(data: dict, allowed: set[str], source: str) -> None:
    unknown = set(data) - allowed - {"version"}
    if unknown:
        raise ConfigError(f"{source}: unknown config keys {sorted(unknown)}")


def _tupled(value):
    return tuple(value) if isinstance(value, list) else value


def load_json_config(path: str | Path) -> dict:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    if data.get("version") != 1:
        raise ConfigError(f"{path}: missing or unsupported config version")
    return data


def library_config_from_dict(data: dict, source: str = "<config>") -> LibraryConfig:
    allowed = {f.name for f in fields(LibraryConfig)}
    _check_keys(data, allowed, source)
    if "kind" not in data:
        raise ConfigError(f"{source}: library config needs 'kind'")
    kwargs = {k: _tupled(v) for k, v in data.items() if k != "version"}
    cfg = LibraryConfig(**kwargs)
    cfg.validate()
    return cfg


def topology_config_from_dict(data: dict, source: str = "<config>") -> TopologyConfig:
    allowed = {f.name for f in fields(TopologyConfig)}
    _check_keys(data, allowed | {"channel"}, source)
    kwargs = {k: _tupled(v) for k, v in data.items() if k not in ("version", "channel")}
    if "channel" in data:
        ch_allowed = {f.name for f in fields(ChannelParams)}
        _check_keys(data["channel"], ch_allowed, f"{source}.channel")
        kwargs["channel"] = ChannelParams(**data["channel"])
    for key in ("num_servers", "num_users"):
        if key not in kwargs:
            raise ConfigError(f"{source}: topology config needs '{key}'")
    return TopologyConfig(**kwargs)


def workload_config_from_dict(data: dict, source: str = "<config>") -> tuple[WorkloadConfig, int, int]:
    allowed = {f.name for f in fields(WorkloadConfig)} | {"num_users", "num_models"}
    _check_keys(data, allowed, source)
    for key in ("num_users", "num_models"):
        if key not in data:
            raise ConfigError(f"{source}: workload config needs '{key}'")
    kwargs = {k: _tupled(v) for k, v in data.items()
              if k not in ("version", "num_users", "num_models")}
    return WorkloadConfig(**kwargs), int(data["num_users"]), int(data["num_models"])


def experiment_config_from_dict(data: dict, source: str = "<config>") -> ExperimentConfig:
    allowed = {f.name for f in fields(ExperimentConfig)}
    _check_keys(data, allowed, source)
    kwargs = {k: _tupled(v) for k, v in data.items() if k != "version"}
    if "library" in kwargs:
        kwargs["library"] = library_config_from_dict(dict(data["library"]), f"{source}.library")
    if "workload" in kwargs:
        wl = dict(data["workload"])
        wl_allowed = {f.name for f in fields(WorkloadConfig)}
        _check_keys(wl, wl_allowed, f"{source}.workload")
        kwargs["workload"] = WorkloadConfig(**{k: _tupled(v) for k, v in wl.items() if k != "version"})
    cfg = ExperimentConfig(**kwargs)
    cfg.validate()
    return cfg


def experiment_config_to_dict(cfg: ExperimentConfig) -> dict:
    data = asdict(cfg)
    data["version"] = 1
    return data


# ---------------------------------------------------------------------------
# Digests and manifests
# ---------------------------------------------------------------------------

def canonical_digest(text: str) -> str:
    """SHA-256 of the content with wall-clock runtime fields removed.

    Reports carry a ``runtime_s`` line and sweep CSVs a ``runtime_s``
    column; both vary across otherwise identical runs, so digests (and
    therefore manifests) skip them.
    """
    lines = text.splitlines()
    if lines and lines[0] == f"# schema: {SWEEP_SCHEMA}":
        stable = lines[:2]
        for line in lines[2:]:
            cols = line.split(",")
            cols[8] = ""
            stable.append(",".join(cols))
    else:
        stable = [line for line in lines if not line.startswith("runtime_s ")]
    return hashlib.sha256("\n".join(stable).encode("utf-8")).hexdigest()


def write_manifest(path: Path, command: str, seed: int | None, config: dict,
                   inputs: dict[str, str], outputs: dict[str, str],
                   figures: list[str] | None = None) -> None:
    """Sidecar JSON recording everything needed to reproduce a run.

    ``outputs`` maps filenames to canonical digests; rendered figures are
    listed by name only. Contains no timestamps so the manifest itself is
    deterministic.
    """
    manifest = {
        "manifest_version": 1,
        "tool": "edgeshare 0.1.0",
        "command": command,
        "seed": seed,
        "config": config,
        "inputs": inputs,
        "outputs": outputs,
        "figures": sorted(figures or []),
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
