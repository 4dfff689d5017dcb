"""Structure search: the end-to-end lookup cost of a layer stack and its minimiser.

A plan with L regressor layers costs one fetch of the whole root layer plus one
fetch of ``fetch_bound`` bytes per layer (L + 1 fetches in total). Costs of a
plan are summed with ``math.fsum`` so the value depends only on the multiset of
fetch terms, never on summation order. That keeps the branch-and-bound search,
the exhaustive oracle and any recomputation bit-identical.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

from stackindex.errors import DegenerateFit, EmptyDataset, SpaceTooLarge
from stackindex.regressor import (
    CELL_SIZES,
    LINEAR,
    STEP,
    TYPE_NAMES,
    EntryTable,
    RegressorLayer,
    fetch_bound_for,
    fit_linear,
    fit_step,
)
from stackindex.storage import StorageProfile, transfer_cost

ORACLE_MAX_CHAINS = 10**6
# Tables below this size are fitted inline even when a thread pool is available.
_PARALLEL_MIN_ENTRIES = 50_000


def _default_step_lambdas():
    return tuple(2**i for i in range(2, 17))


def _default_linear_lambdas():
    return tuple(2**i for i in range(4, 21))


@dataclass(frozen=True)
class SearchSpace:
    regressor_types: tuple = (STEP, LINEAR)
    step_lambdas: tuple = field(default_factory=_default_step_lambdas)
    linear_lambdas: tuple = field(default_factory=_default_linear_lambdas)
    max_layers: int = 8

    def __post_init__(self):
        types = tuple(dict.fromkeys(self.regressor_types))
        if not types:
            raise ValueError("search space needs at least one regressor type")
        if any(t not in (STEP, LINEAR) for t in types):
            raise ValueError(f"unknown regressor types in {types}")
        object.__setattr__(self, "regressor_types", types)
        object.__setattr__(self, "step_lambdas", tuple(dict.fromkeys(self.step_lambdas)))
        object.__setattr__(self, "linear_lambdas", tuple(dict.fromkeys(self.linear_lambdas)))
        if STEP in types and (not self.step_lambdas or min(self.step_lambdas) < 1):
            raise ValueError("step grid must be non-empty positive integers")
        if LINEAR in types and (not self.linear_lambdas or min(self.linear_lambdas) < 1):
            raise ValueError("linear grid must be non-empty positive integers")
        if self.max_layers < 0:
            raise ValueError("max_layers must be >= 0")

    def candidates(self) -> list[tuple[int, int]]:
        out = []
        for t in self.regressor_types:
            grid = self.step_lambdas if t == STEP else self.linear_lambdas
            out.extend((t, lam) for lam in grid)
        return out


@dataclass
class LayerPlan:
    """A concrete index structure. ``layers``/``configs``/``fetch_bounds`` run root first."""

    layers: list
    configs: list
    modeled_cost_s: float
    root_bytes: int
    fetch_bounds: list
    data_bytes: int = 0

    @property
    def L(self) -> int:
        return len(self.fetch_bounds)

    @property
    def index_bytes(self) -> int:
        return sum(layer.byte_length for layer in self.layers)

    def describe(self) -> str:
        if not self.configs:
            return "L=0 (scan whole data layer)"
        parts = [f"{TYPE_NAMES[t]}:{lam}" for t, lam in self.configs]
        return f"L={self.L} [" + ", ".join(parts) + "]"

    def tie_key(self) -> tuple:
        # smaller L, smaller index, then Step < Linear and smaller precision,
        # compared layer by layer starting next to the data
        return (self.L, self.index_bytes, tuple(reversed(self.configs)))


def plan_cost(profile: StorageProfile, root_bytes: int, fetch_bounds: Sequence[int]) -> float:
    terms = [transfer_cost(profile, root_bytes)]
    terms.extend(transfer_cost(profile, e) for e in fetch_bounds)
    return math.fsum(terms)


def evaluate_objective(plan: LayerPlan, profile: StorageProfile) -> float:
    """Modeled lookup time: whole-root fetch plus one bounded fetch per layer."""
    return plan_cost(profile, plan.root_bytes, plan.fetch_bounds)


def build_layer(regressor_type: int, lam: int, child: EntryTable) -> RegressorLayer:
    if child.count == 0:
        raise DegenerateFit("cannot fit an empty table")
    if regressor_type == STEP:
        return fit_step(child, lam)
    if regressor_type == LINEAR:
        return fit_linear(child, lam)
    raise ValueError(f"unknown regressor type {regressor_type}")


def plan_from_chain(
    data: EntryTable, chain: Sequence[RegressorLayer], profile: StorageProfile
) -> LayerPlan:
    """Assemble a plan from layers listed bottom-up (first one fitted over the data)."""
    layers = list(reversed(chain))
    root_bytes = layers[0].byte_length if layers else data.total_bytes
    bounds = [layer.fetch_bound for layer in layers]
    plan = LayerPlan(
        layers=layers,
        configs=[layer.config for layer in layers],
        modeled_cost_s=0.0,
        root_bytes=root_bytes,
        fetch_bounds=bounds,
        data_bytes=data.total_bytes,
    )
    plan.modeled_cost_s = evaluate_objective(plan, profile)
    return plan


class FitCache:
    """Fitted layers keyed by the config chain that produced them.

    Fits do not depend on the storage profile, so one cache can serve many
    searches over the same dataset (for example an RTT sweep).
    """

    def __init__(self, data: EntryTable):
        self.data = data
        self._layers: dict = {}

    def get(self, path: tuple, child: EntryTable, config: tuple):
        key = path + (config,)
        try:
            return self._layers[key]
        except KeyError:
            pass
        try:
            layer = build_layer(config[0], config[1], child)
        except DegenerateFit:
            layer = None
        self._layers[key] = layer
        return layer

    def __len__(self) -> int:
        return len(self._layers)


@dataclass
class SearchStats:
    nodes: int = 0
    fits: int = 0
    pruned: int = 0
    prune_log: list = field(default_factory=list)


class _Incumbent:
    __slots__ = ("plan", "key")

    def __init__(self):
        self.plan = None
        self.key = None

    @property
    def cost(self) -> float:
        return self.key[0] if self.key is not None else math.inf

    def offer(self, plan: LayerPlan) -> None:
        key = (plan.modeled_cost_s,) + plan.tie_key()
        if self.key is None or key < self.key:
            self.key = key
            self.plan = plan


def search_optimal(
    data_entries: EntryTable,
    profile: StorageProfile,
    space: SearchSpace = SearchSpace(),
    *,
    prune: bool = True,
    threads: int = 1,
    cache: Optional[FitCache] = None,
    stats: Optional[SearchStats] = None,
    record_prunes: bool = False,
) -> LayerPlan:
    """Branch-and-bound over layer stacks, building from the data layer upward.

    At each table the search first considers stopping (the table becomes the
    root), then tries every (type, precision) as the next layer up. A candidate
    is dropped when even the cheapest completion above it, one root fetch of a
    single cell, already costs more than the best plan found so far.
    """
    if data_entries.count == 0:
        raise EmptyDataset("no records to index")
    if cache is None:
        cache = FitCache(data_entries)
    elif cache.data is not data_entries:
        raise ValueError("fit cache belongs to a different dataset")
    stats = stats if stats is not None else SearchStats()
    candidates = space.candidates()
    min_cell = min(CELL_SIZES[t] for t in space.regressor_types)
    best = _Incumbent()
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None

    def t(nbytes):
        return transfer_cost(profile, nbytes)

    def above_bound(unit: int, nbytes: int) -> float:
        # cheapest way to finish above a table: it is the root, or one more
        # layer (fetch >= one unit) under a root of >= one cell
        return min(t(nbytes), t(unit) + t(min_cell))

    def visit(table: EntryTable, path: tuple, chain: list, below: list) -> None:
        stats.nodes += 1
        best.offer(plan_from_chain(data_entries, chain, profile))
        if len(chain) >= space.max_layers:
            return
        u, total = table.unit_size, table.total_bytes
        scored = []
        for idx, (ctype, lam) in enumerate(candidates):
            eps = fetch_bound_for(ctype, lam, u, total)
            t_eps = t(eps)
            lb = math.fsum(below + [t_eps, t(CELL_SIZES[ctype])])
            scored.append((lb, idx, (ctype, lam), t_eps))
        scored.sort()
        prefetched = {}
        if pool is not None and table.count >= _PARALLEL_MIN_ENTRIES:
            jobs = [sc[2] for sc in scored if not prune or sc[0] <= best.cost]
            fitted = pool.map(lambda cfg: cache.get(path, table, cfg), jobs)
            prefetched = dict(zip(jobs, fitted))
        for lb, _, config, t_eps in scored:
            if prune and _prunable(lb, best, stats, record_prunes, path, config):
                continue
            if config in prefetched:
                layer = prefetched[config]
            else:
                layer = cache.get(path, table, config)
            stats.fits += 1
            if layer is None:
                continue
            if prune:
                lb = math.fsum(below + [t_eps, above_bound(layer.cell_size, layer.byte_length)])
                if _prunable(lb, best, stats, record_prunes, path, config):
                    continue
            visit(layer.entries(), path + (config,), chain + [layer], below + [t_eps])

    try:
        visit(data_entries, (), [], [])
    finally:
        if pool is not None:
            pool.shutdown()
    return best.plan


def _prunable(lb, best, stats, record, path, config) -> bool:
    # strict: a completion costing exactly the incumbent may still win the tie-break
    if lb > best.cost:
        stats.pruned += 1
        if record:
            stats.prune_log.append((path + (config,), lb, best.cost))
        return True
    return False


def count_chains(space: SearchSpace) -> int:
    g = len(space.candidates())
    return sum(g**depth for depth in range(space.max_layers + 1))


def exhaustive_oracle(
    data_entries: EntryTable,
    profile: StorageProfile,
    space: SearchSpace,
    *,
    prefix: tuple = (),
    results: Optional[list] = None,
) -> LayerPlan:
    """Brute force: build and cost every config chain up to ``max_layers``.

    ``prefix`` restricts enumeration to chains starting (at the data layer)
    with the given configs; ``results`` collects every evaluated plan.
    """
    if data_entries.count == 0:
        raise EmptyDataset("no records to index")
    total = count_chains(space)
    if total > ORACLE_MAX_CHAINS:
        raise SpaceTooLarge(f"{total} candidate chains exceed {ORACLE_MAX_CHAINS}")
    candidates = space.candidates()
    built: dict = {(): []}

    def chain_for(configs: tuple):
        if configs in built:
            return built[configs]
        below = chain_for(configs[:-1])
        if below is None:
            built[configs] = None
            return None
        child = below[-1].entries() if below else data_entries
        try:
            layer = build_layer(configs[-1][0], configs[-1][1], child)
        except DegenerateFit:
            built[configs] = None
            return None
        built[configs] = below + [layer]
        return built[configs]

    best_plan, best_key = None, None
    for depth in range(len(prefix), space.max_layers + 1):
        for rest in itertools.product(candidates, repeat=depth - len(prefix)):
            chain = chain_for(tuple(prefix) + rest)
            if chain is None:
                continue
            plan = plan_from_chain(data_entries, chain, profile)
            if results is not None:
                results.append(plan)
            key = (plan.modeled_cost_s,) + plan.tie_key()
            if best_key is None or key < best_key:
                best_plan, best_key = plan, key
    return best_plan
