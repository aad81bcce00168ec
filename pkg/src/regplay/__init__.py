"""regplay: regularity-seeking intrinsic rewards plus a sampling-MPC playground."""

from regplay.regularity import (
    EntityView,
    MapVariant,
    Symbol,
    SymbolHistogram,
    SymbolMapSpec,
    batch_regularity,
    build_multiset,
    build_multiset_direct,
    build_multiset_relational,
    compression_reward,
    discretize,
    entropy,
    regularity_reward,
)

__version__ = "0.1.0"

__all__ = [
    "EntityView",
    "MapVariant",
    "Symbol",
    "SymbolHistogram",
    "SymbolMapSpec",
    "batch_regularity",
    "build_multiset",
    "build_multiset_direct",
    "build_multiset_relational",
    "compression_reward",
    "discretize",
    "entropy",
    "regularity_reward",
    "__version__",
]
