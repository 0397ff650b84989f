"""Shared-parameter model libraries.

A library is a set of AI models, each described as a duplicate-free set of
named parameter blocks with byte sizes. Blocks contained in two or more
models are "shared" and are stored only once per cache; blocks contained in
exactly one model are "specific" to it. All sizes are integers in bytes so
storage feasibility is exact.

Besides the core data model, this module provides:

* enumeration of shared-block combinations together with the models each
  combination covers (the search space of the special-case solver),
* detection of single-root frozen-prefix ("chain") structure, which lets
  that enumeration collapse from ``2^n`` subsets to ``n+1`` prefixes,
* three seeded synthetic generators mimicking common fine-tuning regimes.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping

import numpy as np

from .errors import CapExceededError, ConfigError, InvariantError

# Adapter payload sizes (bytes) typical of low-rank fine-tuning on a small
# language-model backbone; used as the default specific-block size list for
# the adapter generator. A size of 0 denotes a backbone-only model.
DEFAULT_ADAPTER_SIZES = (0, 188_348, 335_804, 630_716, 1_220_540, 2_400_188, 4_759_484)

# Refuse full subset enumeration beyond this many shared blocks; the search
# space is 2**n and growth past this point is a configuration smell.
ENUMERATION_CAP = 24


@dataclass(frozen=True)
class ParameterBlock:
    id: str
    size_bytes: int


@dataclass(frozen=True)
class Model:
    id: str
    blocks: tuple[str, ...]


class ModelLibrary:
    """Immutable collection of parameter blocks and the models built from them."""

    def __init__(
        self,
        blocks: Iterable[ParameterBlock],
        models: Iterable[Model],
        meta: Mapping[str, str] | None = None,
    ):
        self.blocks: dict[str, ParameterBlock] = {}
        for blk in blocks:
            if blk.id in self.blocks:
                raise InvariantError(f"duplicate block id {blk.id!r}")
            if blk.size_bytes < 0:
                raise InvariantError(f"block {blk.id!r} has negative size")
            self.blocks[blk.id] = blk

        self.models: dict[str, Model] = {}
        for mdl in models:
            if mdl.id in self.models:
                raise InvariantError(f"duplicate model id {mdl.id!r}")
            if not mdl.blocks:
                raise InvariantError(f"model {mdl.id!r} has no blocks")
            if len(set(mdl.blocks)) != len(mdl.blocks):
                raise InvariantError(f"model {mdl.id!r} lists a block twice")
            for bid in mdl.blocks:
                blk = self.blocks.get(bid)
                if blk is None:
                    raise InvariantError(f"model {mdl.id!r} references unknown block {bid!r}")
                if blk.size_bytes <= 0:
                    raise InvariantError(f"model {mdl.id!r} references zero-size block {bid!r}")
            self.models[mdl.id] = mdl

        self.meta: dict[str, str] = dict(meta or {})

        # Inverse index: block id -> tuple of model ids containing it.
        by_block: dict[str, list[str]] = {}
        for mdl in self.models.values():
            for bid in mdl.blocks:
                by_block.setdefault(bid, []).append(mdl.id)
        self.models_by_block: dict[str, tuple[str, ...]] = {
            bid: tuple(mids) for bid, mids in by_block.items()
        }

        self.model_ids: tuple[str, ...] = tuple(self.models)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ModelLibrary):
            return NotImplemented
        return (
            self.blocks == other.blocks
            and self.models == other.models
            and self.meta == other.meta
        )

    def __repr__(self) -> str:
        return f"ModelLibrary({len(self.blocks)} blocks, {len(self.models)} models)"

    def model_size(self, model_id: str) -> int:
        """Total bytes of the model: sum of its block sizes."""
        mdl = self._model(model_id)
        return sum(self.blocks[b].size_bytes for b in mdl.blocks)

    def block_size(self, block_id: str) -> int:
        return self.blocks[block_id].size_bytes

    def _model(self, model_id: str) -> Model:
        try:
            return self.models[model_id]
        except KeyError:
            raise KeyError(f"unknown model id {model_id!r}") from None


def shared_blocks(lib: ModelLibrary) -> frozenset[str]:
    """Ids of blocks contained in two or more models.

    Recomputed from the block->models index on every call so it can never
    go stale.
    """
    return frozenset(
        bid for bid, mids in lib.models_by_block.items() if len(mids) >= 2
    )


def specific_size(lib: ModelLibrary, model_id: str) -> int:
    """Total bytes of the blocks belonging to ``model_id`` alone."""
    mdl = lib._model(model_id)
    return sum(
        lib.blocks[b].size_bytes
        for b in mdl.blocks
        if len(lib.models_by_block[b]) == 1
    )


def model_shared_set(lib: ModelLibrary, model_id: str) -> frozenset[str]:
    """The model's blocks restricted to the library's shared set."""
    mdl = lib._model(model_id)
    return frozenset(b for b in mdl.blocks if len(lib.models_by_block[b]) >= 2)


@dataclass(frozen=True)
class BlockCombination:
    """One candidate set of shared blocks to pin on a server.

    ``covered_models`` are exactly the models whose shared blocks all lie in
    ``blocks``; caching any of them on top of this combination costs only
    their specific bytes.
    """

    blocks: frozenset[str]
    covered_models: tuple[str, ...]
    total_bytes: int


@dataclass(frozen=True)
class Chain:
    """Single-root frozen-prefix structure over the shared blocks.

    ``order`` lists the shared blocks from the root upward; every model's
    shared set is some prefix of it. ``kappa`` is the longest such prefix.
    """

    order: tuple[str, ...]

    @property
    def kappa(self) -> int:
        return len(self.order)


def detect_chain(lib: ModelLibrary) -> Chain | None:
    """Detect whether all shared blocks form prefixes of one common order.

    Returns the order (deepest-shared first) if every model's shared-block
    set is a prefix of it, else None. Libraries fine-tuned from a single
    pre-trained network by freezing bottom layers have this shape; two or
    more pre-trained roots break it.
    """
    sh = shared_blocks(lib)
    # Candidate order: blocks sorted by how many models contain them. In a
    # chain, deeper blocks are contained in a superset of the models that
    # contain shallower ones.
    order = sorted(sh, key=lambda b: (-len(lib.models_by_block[b]), b))
    prefixes: dict[int, frozenset[str]] = {0: frozenset()}
    acc: set[str] = set()
    for depth, bid in enumerate(order, start=1):
        acc.add(bid)
        prefixes[depth] = frozenset(acc)
    for mid in lib.model_ids:
        s = model_shared_set(lib, mid)
        if s != prefixes[len(s)]:
            return None
    return Chain(order=tuple(order))


def _covering_mask(shared_order: tuple[str, ...], member: frozenset[str]) -> int:
    mask = 0
    for pos, bid in enumerate(shared_order):
        if bid in member:
            mask |= 1 << pos
    return mask


def enumerate_combinations(
    lib: ModelLibrary,
    capacity: int,
    chain: Chain | None = None,
    cap: int = ENUMERATION_CAP,
) -> Iterator[BlockCombination]:
    """Yield shared-block combinations that fit in ``capacity`` bytes.

    Without a chain, all ``2^n`` subsets of the shared set are generated in
    canonical order (by size, then lexicographically by block id); with a
    chain only its ``kappa+1`` prefixes are generated, which covers the same
    set of reachable model coverages at no larger cost. Combinations whose
    block total exceeds ``capacity`` are skipped.
    """
    sh = sorted(shared_blocks(lib))
    if chain is None and len(sh) > cap:
        raise CapExceededError(
            f"library has {len(sh)} shared blocks; full combination "
            f"enumeration is capped at {cap} (2^{len(sh)} subsets)"
        )

    order = tuple(sh)
    shared_mask_of_model = {
        mid: _covering_mask(order, model_shared_set(lib, mid)) for mid in lib.model_ids
    }
    sizes = {bid: lib.blocks[bid].size_bytes for bid in order}

    if chain is not None:
        candidates: Iterable[tuple[str, ...]] = (
            tuple(chain.order[:depth]) for depth in range(chain.kappa + 1)
        )
    else:
        candidates = itertools.chain.from_iterable(
            itertools.combinations(order, r) for r in range(len(order) + 1)
        )

    for subset in candidates:
        d_n = sum(sizes[b] for b in subset)
        if d_n > capacity:
            continue
        mask = _covering_mask(order, frozenset(subset))
        covered = tuple(
            mid for mid in lib.model_ids
            if shared_mask_of_model[mid] & ~mask == 0
        )
        yield BlockCombination(
            blocks=frozenset(subset), covered_models=covered, total_bytes=d_n
        )


def count_candidate_combinations(lib: ModelLibrary, chain: Chain | None = None) -> int:
    """Number of combinations the enumeration considers before capacity filtering."""
    if chain is not None:
        return chain.kappa + 1
    return 2 ** len(shared_blocks(lib))


# ---------------------------------------------------------------------------
# Synthetic generators
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LibraryConfig:
    """Configuration for the synthetic library generators.

    ``kind`` selects the regime:

    * ``chain``: per structure, one pre-trained root of ``depth`` layers;
      each downstream model freezes a bottom prefix (length drawn from
      ``freeze_range``) and re-trains private copies of the remaining layers
      plus a private head block. Shared-block count stays bounded by the
      root depths however many models are generated.
    * ``adapter``: per structure, one frozen backbone block plus one private
      adapter block per model, sized from ``adapter_sizes`` (0 means a
      backbone-only model). ``full_finetune_per_structure`` adds models that
      are a single private full-size block (no sharing).
    * ``two-stage``: per structure and superclass, a stage-1 fully
      fine-tuned root; stage-2 models freeze an arbitrary prefix of their
      root and retrain the rest privately. Shared-block count grows with the
      number of roots, i.e. with library scale.

    Backbone and layer byte sizes are synthetic defaults, not measurements
    of any particular network; override them to match a real deployment.
    """

    kind: str
    structures: int = 1
    models_per_structure: int = 8
    depth: int = 8
    block_bytes: tuple[int, int] = (2_000_000, 6_000_000)
    freeze_range: tuple[int, int] = (4, 8)
    head_bytes: tuple[int, int] = (40_000, 400_000)
    backbone_bytes: tuple[int, int] = (200_000_000, 500_000_000)
    adapter_sizes: tuple[int, ...] = DEFAULT_ADAPTER_SIZES
    full_finetune_per_structure: int = 0
    superclasses: int = 3
    classes_per_superclass: int = 5

    def validate(self) -> None:
        if self.kind not in ("chain", "adapter", "two-stage"):
            raise ConfigError(f"unknown library kind {self.kind!r}")
        if self.structures < 1:
            raise ConfigError("structures must be >= 1")
        if self.kind == "adapter" and not self.adapter_sizes:
            raise ConfigError("adapter generator needs a non-empty adapter size list")
        if self.kind == "chain":
            lo, hi = self.freeze_range
            if not (0 <= lo <= hi <= self.depth):
                raise ConfigError(
                    f"freeze_range {self.freeze_range} outside [0, depth={self.depth}]"
                )
        if self.kind in ("chain", "two-stage") and self.depth < 1:
            raise ConfigError("depth must be >= 1")


def _draw_int(rng: np.random.Generator, lo_hi: tuple[int, int]) -> int:
    lo, hi = lo_hi
    if lo > hi:
        raise ConfigError(f"empty integer range {lo_hi}")
    return int(rng.integers(lo, hi + 1))


def generate_library(cfg: LibraryConfig, seed: int) -> ModelLibrary:
    """Deterministically generate a synthetic library for ``(cfg, seed)``."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    blocks: list[ParameterBlock] = []
    models: list[Model] = []

    if cfg.kind == "chain":
        mid = 0
        for s in range(cfg.structures):
            layer_sizes = [_draw_int(rng, cfg.block_bytes) for _ in range(cfg.depth)]
            root = [f"g{s}.l{layer:02d}" for layer in range(cfg.depth)]
            blocks.extend(
                ParameterBlock(bid, sz) for bid, sz in zip(root, layer_sizes)
            )
            for _ in range(cfg.models_per_structure):
                frozen = _draw_int(rng, cfg.freeze_range)
                own: list[str] = list(root[:frozen])
                for layer in range(frozen, cfg.depth):
                    bid = f"m{mid:03d}.l{layer:02d}"
                    blocks.append(ParameterBlock(bid, layer_sizes[layer]))
                    own.append(bid)
                head = f"m{mid:03d}.head"
                blocks.append(ParameterBlock(head, _draw_int(rng, cfg.head_bytes)))
                own.append(head)
                models.append(Model(f"m{mid:03d}", tuple(own)))
                mid += 1

    elif cfg.kind == "adapter":
        mid = 0
        for s in range(cfg.structures):
            base = f"g{s}.base"
            blocks.append(ParameterBlock(base, _draw_int(rng, cfg.backbone_bytes)))
            for _ in range(cfg.models_per_structure):
                size = int(cfg.adapter_sizes[int(rng.integers(len(cfg.adapter_sizes)))])
                own = [base]
                if size > 0:
                    bid = f"m{mid:03d}.adapter"
                    blocks.append(ParameterBlock(bid, size))
                    own.append(bid)
                models.append(Model(f"m{mid:03d}", tuple(own)))
                mid += 1
            for _ in range(cfg.full_finetune_per_structure):
                bid = f"m{mid:03d}.full"
                blocks.append(ParameterBlock(bid, _draw_int(rng, cfg.backbone_bytes)))
                models.append(Model(f"m{mid:03d}", (bid,)))
                mid += 1

    else:  # two-stage
        mid = 0
        for s in range(cfg.structures):
            for c in range(cfg.superclasses):
                layer_sizes = [_draw_int(rng, cfg.block_bytes) for _ in range(cfg.depth)]
                root = [f"g{s}.c{c}.l{layer:02d}" for layer in range(cfg.depth)]
                blocks.extend(
                    ParameterBlock(bid, sz) for bid, sz in zip(root, layer_sizes)
                )
                for _ in range(cfg.classes_per_superclass):
                    frozen = _draw_int(rng, (1, max(1, cfg.depth - 1)))
                    own = list(root[:frozen])
                    for layer in range(frozen, cfg.depth):
                        bid = f"m{mid:03d}.l{layer:02d}"
                        blocks.append(ParameterBlock(bid, layer_sizes[layer]))
                        own.append(bid)
                    head = f"m{mid:03d}.head"
                    blocks.append(ParameterBlock(head, _draw_int(rng, cfg.head_bytes)))
                    own.append(head)
                    models.append(Model(f"m{mid:03d}", tuple(own)))
                    mid += 1

    # Root blocks frozen by no downstream model are never referenced; drop
    # them so every stored block belongs to at least one model.
    referenced = {bid for mdl in models for bid in mdl.blocks}
    blocks = [blk for blk in blocks if blk.id in referenced]

    meta = {"generator": cfg.kind, "seed": str(int(seed))}
    return ModelLibrary(blocks, models, meta)
