"""Storage-aware hierarchical index builder and query engine."""

from stackindex.storage import (
    FileStore,
    MemoryStore,
    SimulatedStore,
    StorageProfile,
    load_profile,
    transfer_cost,
)
from stackindex.regressor import (
    LINEAR,
    STEP,
    EntryTable,
    LinearCell,
    RegressorLayer,
    StepCell,
    fit_linear,
    fit_step,
    locate_cell,
    predict_range,
)
from stackindex.optimizer import (
    LayerPlan,
    SearchSpace,
    build_layer,
    evaluate_objective,
    exhaustive_oracle,
    search_optimal,
)
from stackindex.layout import ingest_keys, open_index, read_index, serialize
from stackindex.engine import Record, lookup, lookup_modeled_cost, range_scan

__version__ = "0.1.0"

__all__ = [
    "EntryTable",
    "FileStore",
    "LINEAR",
    "LayerPlan",
    "LinearCell",
    "MemoryStore",
    "Record",
    "RegressorLayer",
    "STEP",
    "SearchSpace",
    "SimulatedStore",
    "StepCell",
    "StorageProfile",
    "build_layer",
    "evaluate_objective",
    "exhaustive_oracle",
    "fit_linear",
    "fit_step",
    "ingest_keys",
    "load_profile",
    "locate_cell",
    "lookup",
    "lookup_modeled_cost",
    "open_index",
    "predict_range",
    "range_scan",
    "read_index",
    "search_optimal",
    "serialize",
    "transfer_cost",
]
